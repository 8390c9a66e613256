import numpy as np
import pytest

from coherentflow.errors import FormatError, ValidationError
from coherentflow.pgm import read_pgm16, write_pgm16


def test_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    labels = rng.integers(-1, 40, size=(13, 9)).astype(np.int32)
    path = tmp_path / "map.pgm"
    write_pgm16(labels, path)
    assert np.array_equal(read_pgm16(path), labels)


def test_background_stored_as_zero(tmp_path):
    labels = np.full((4, 4), -1, dtype=np.int32)
    labels[1, 2] = 3
    path = tmp_path / "map.pgm"
    write_pgm16(labels, path)
    raw = path.read_bytes()
    header_end = raw.index(b"65535\n") + 6
    pixels = np.frombuffer(raw, dtype=">u2", offset=header_end)
    assert pixels.min() == 0
    assert pixels.max() == 4  # label 3 + 1


def test_rejects_out_of_range(tmp_path):
    with pytest.raises(ValidationError):
        write_pgm16(np.full((2, 2), -2), tmp_path / "bad.pgm")


def test_rejects_non_pgm(tmp_path):
    path = tmp_path / "junk.pgm"
    path.write_bytes(b"P6\n2 2\n255\n" + b"\x00" * 12)
    with pytest.raises(FormatError):
        read_pgm16(path)


def test_rejects_truncated(tmp_path):
    labels = np.zeros((6, 6), dtype=np.int32)
    path = tmp_path / "short.pgm"
    write_pgm16(labels, path)
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(FormatError):
        read_pgm16(path)
