import numpy as np
import pytest

from coherentflow.errors import FlowIOError, FormatError, ValidationError
from coherentflow.fields import (
    FlowSequence,
    GridDims,
    MotionField,
    advect,
    bilinear_sample,
    read_flo,
    write_flo,
)


def uniform_field(dims, u, v):
    vec = np.zeros((dims.height, dims.width, 2))
    vec[..., 0], vec[..., 1] = u, v
    return MotionField(dims, vec)


def rotation_field(dims, center, omega):
    xs, ys = np.meshgrid(np.arange(dims.width), np.arange(dims.height))
    return MotionField(
        dims, np.stack([-(ys - center[1]) * omega, (xs - center[0]) * omega], axis=-1)
    )


class TestGridTypes:
    def test_dims_must_be_positive(self):
        with pytest.raises(ValidationError):
            GridDims(0, 1)
        with pytest.raises(ValidationError):
            GridDims(4, -2)

    def test_field_shape_must_match(self):
        with pytest.raises(ValidationError):
            MotionField(GridDims(2, 2), np.zeros((2, 3, 2)))

    def test_field_rejects_non_finite(self):
        vec = np.zeros((2, 2, 2))
        vec[0, 0, 0] = np.nan
        with pytest.raises(ValidationError):
            MotionField(GridDims(2, 2), vec)

    def test_field_is_immutable(self):
        f = MotionField.zeros(GridDims(3, 3))
        with pytest.raises(ValueError):
            f.vectors[0, 0, 0] = 1.0

    def test_sequence_rejects_mixed_dims(self):
        with pytest.raises(ValidationError):
            FlowSequence(
                GridDims(2, 2),
                [MotionField.zeros(GridDims(2, 2)), MotionField.zeros(GridDims(3, 2))],
            )


class TestFloFormat:
    def test_hand_written_file_decodes(self, tmp_path):
        import struct

        path = tmp_path / "tiny.flo"
        payload = struct.pack("<fii", 202021.25, 2, 1) + struct.pack(
            "<4f", 1.0, 0.0, 0.0, 1.0
        )
        path.write_bytes(payload)
        field = read_flo(path)
        assert field.dims == GridDims(2, 1)
        assert np.array_equal(field.vectors, [[[1.0, 0.0], [0.0, 1.0]]])

    def test_round_trip_is_byte_identical(self, tmp_path):
        rng = np.random.default_rng(42)
        field = MotionField(
            GridDims(7, 5), rng.normal(size=(5, 7, 2)).astype(np.float32)
        )
        p1, p2 = tmp_path / "a.flo", tmp_path / "b.flo"
        write_flo(field, p1)
        write_flo(read_flo(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic_is_format_error(self, tmp_path):
        path = tmp_path / "bad.flo"
        write_flo(MotionField.zeros(GridDims(2, 2)), path)
        data = bytearray(path.read_bytes())
        data[0] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError):
            read_flo(path)

    def test_truncated_payload_is_io_error(self, tmp_path):
        path = tmp_path / "short.flo"
        write_flo(MotionField.zeros(GridDims(4, 4)), path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(FlowIOError):
            read_flo(path)

    def test_non_finite_payload_is_validation_error(self, tmp_path):
        import struct

        path = tmp_path / "nan.flo"
        path.write_bytes(
            struct.pack("<fii", 202021.25, 1, 1) + struct.pack("<2f", np.nan, 0.0)
        )
        with pytest.raises(ValidationError):
            read_flo(path)

    def test_1x1_field_size_is_header_plus_one_pair(self, tmp_path):
        # 4 magic + 4 width + 4 height + 8 payload (one float32 pair)
        path = tmp_path / "one.flo"
        write_flo(MotionField.zeros(GridDims(1, 1)), path)
        assert path.stat().st_size == 4 + 4 + 4 + 8

    def test_zero_width_rejected_before_write(self):
        with pytest.raises(ValidationError):
            GridDims(0, 3)


class TestAdvection:
    def test_uniform_flow_is_linear_in_T(self):
        dims = GridDims(32, 8)
        seq = FlowSequence(dims, [uniform_field(dims, 1.0, 0.0)] * 10)
        out = advect(seq, 0, 10)
        # particles whose whole trajectory stays inside the grid
        interior = out.vectors[:, : dims.width - 10]
        assert np.array_equal(interior[..., 0], np.full_like(interior[..., 0], 10.0))
        assert np.array_equal(interior[..., 1], np.zeros_like(interior[..., 1]))

    def test_single_step_equals_frame_exactly(self):
        dims = GridDims(12, 10)
        rng = np.random.default_rng(3)
        # keep displacements small so no particle is clamped at the border
        frame = MotionField(dims, rng.uniform(-0.4, 0.4, size=(10, 12, 2)))
        seq = FlowSequence(dims, [frame, frame])
        out = advect(seq, 0, 1)
        inner = (slice(1, -1), slice(1, -1))
        assert np.array_equal(out.vectors[inner], frame.vectors[inner])

    def test_rotation_matches_fine_step_oracle(self):
        # oracle: the same trajectory integrated with 10x smaller substeps
        dims = GridDims(32, 32)
        omega, center, T = 0.05, (15.5, 15.5), 5
        frame = rotation_field(dims, center, omega)
        seq = FlowSequence(dims, [frame] * T)
        out = advect(seq, 0, T)

        xs, ys = np.meshgrid(
            np.arange(dims.width, dtype=float), np.arange(dims.height, dtype=float)
        )
        px, py = xs.copy(), ys.copy()
        for _ in range(T * 10):
            step = bilinear_sample(frame.vectors, px, py)
            px = np.clip(px + step[..., 0] / 10.0, 0, dims.width - 1)
            py = np.clip(py + step[..., 1] / 10.0, 0, dims.height - 1)
        oracle = np.stack([px - xs, py - ys], axis=-1)

        r = np.hypot(xs - center[0], ys - center[1])
        interior = r < 12  # stay away from the clamped border
        err = np.abs(out.vectors - oracle)[interior]
        assert err.max() <= 0.5

    def test_output_dims_match_input(self):
        dims = GridDims(9, 7)
        seq = FlowSequence(dims, [uniform_field(dims, 0.3, -0.2)] * 4)
        assert advect(seq, 1, 3).dims == dims

    def test_insufficient_frames_is_range_error(self):
        dims = GridDims(4, 4)
        seq = FlowSequence(dims, [MotionField.zeros(dims)] * 3)
        with pytest.raises(ValidationError):
            advect(seq, 0, 4)
        with pytest.raises(ValidationError):
            advect(seq, 2, 2)

    def test_exiting_particles_clamp_to_boundary(self):
        dims = GridDims(8, 8)
        seq = FlowSequence(dims, [uniform_field(dims, 5.0, 0.0)] * 3)
        out = advect(seq, 0, 3)
        # rightmost column cannot move past the border
        assert np.all(out.vectors[..., 0] <= dims.width - 1)
        assert out.vectors[0, -1, 0] == 0.0
