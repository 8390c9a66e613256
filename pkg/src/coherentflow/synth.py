"""Synthetic crowd-flow scenes with analytic ground truth, plus evaluation metrics.

Scenes are built from motion primitives (straight lanes and rotating annuli)
switched on and off by a phase schedule.  Every generated sequence comes with
exact per-frame region masks, phase labels, a semantic partition, and
analytic centerlines, so each pipeline stage can be scored without manual
annotation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ValidationError
from .fields import FlowSequence, GridDims, MotionField


@dataclass(frozen=True)
class Lane:
    """Axis-aligned rectangle moving uniformly: rect = (x0, y0, x1, y1), exclusive ends."""

    rect: tuple
    direction: tuple
    speed: float

    def velocity_at(self, dims: GridDims) -> np.ndarray:
        d = np.asarray(self.direction, dtype=np.float64)
        n = np.hypot(d[0], d[1])
        if n == 0:
            raise ValidationError("lane direction must be nonzero")
        v = d / n * self.speed
        out = np.zeros((dims.height, dims.width, 2))
        out[:, :] = v
        return out

    def mask(self, dims: GridDims) -> np.ndarray:
        x0, y0, x1, y1 = self.rect
        m = np.zeros((dims.height, dims.width), dtype=bool)
        m[y0:y1, x0:x1] = True
        return m

    def centerline(self) -> np.ndarray:
        x0, y0, x1, y1 = self.rect
        cx, cy = (x0 + x1 - 1) / 2.0, (y0 + y1 - 1) / 2.0
        d = np.asarray(self.direction, dtype=np.float64)
        d = d / np.hypot(d[0], d[1])
        if abs(d[0]) >= abs(d[1]):
            xs = np.arange(x0, x1, dtype=np.float64)
            ys = cy + (xs - cx) * d[1] / d[0]
            pts = np.stack([xs, ys], axis=1)
        else:
            ys = np.arange(y0, y1, dtype=np.float64)
            xs = cx + (ys - cy) * d[0] / d[1]
            pts = np.stack([xs, ys], axis=1)
        if d[0] < 0 or (d[0] == 0 and d[1] < 0):
            pts = pts[::-1]
        return pts

    def bounds_ok(self, dims: GridDims) -> bool:
        x0, y0, x1, y1 = self.rect
        return 0 <= x0 < x1 <= dims.width and 0 <= y0 < y1 <= dims.height


@dataclass(frozen=True)
class Annulus:
    """Ring rotating rigidly about its center at ``angular_speed`` rad/frame."""

    center: tuple
    radii: tuple
    angular_speed: float

    def velocity_at(self, dims: GridDims) -> np.ndarray:
        cx, cy = self.center
        xs, ys = np.meshgrid(np.arange(dims.width), np.arange(dims.height))
        # rigid rotation: u = omega * (-(y - cy), x - cx)
        out = np.stack(
            [-(ys - cy) * self.angular_speed, (xs - cx) * self.angular_speed], axis=-1
        )
        return out

    def mask(self, dims: GridDims) -> np.ndarray:
        cx, cy = self.center
        xs, ys = np.meshgrid(np.arange(dims.width), np.arange(dims.height))
        r = np.hypot(xs - cx, ys - cy)
        return (r >= self.radii[0]) & (r <= self.radii[1])

    def centerline(self) -> np.ndarray:
        cx, cy = self.center
        mid = (self.radii[0] + self.radii[1]) / 2.0
        theta = np.linspace(0.0, 2 * np.pi, 128, endpoint=False)
        return np.stack([cx + mid * np.cos(theta), cy + mid * np.sin(theta)], axis=1)

    def bounds_ok(self, dims: GridDims) -> bool:
        cx, cy = self.center
        r = self.radii[1]
        return (
            0 < self.radii[0] < self.radii[1]
            and cx - r >= 0
            and cy - r >= 0
            and cx + r <= dims.width - 1
            and cy + r <= dims.height - 1
        )


@dataclass(frozen=True)
class Phase:
    """Half-open frame range [start, stop) with the indices of active primitives."""

    start: int
    stop: int
    active: tuple


@dataclass
class SceneSpec:
    dims: GridDims
    primitives: list
    phases: list = field(default_factory=list)
    num_frames: int = 20
    noise_sigma: float = 0.0
    rng_seed: int = 0
    frame_rate: float = 10.0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be >= 0")
        if self.num_frames < 1:
            raise ValidationError("num_frames must be >= 1")
        if not self.phases:
            self.phases = [Phase(0, self.num_frames, tuple(range(len(self.primitives))))]

    def to_json(self) -> dict:
        prims = []
        for p in self.primitives:
            if isinstance(p, Lane):
                prims.append(
                    {
                        "kind": "lane",
                        "rect": list(p.rect),
                        "direction": list(p.direction),
                        "speed": p.speed,
                    }
                )
            else:
                prims.append(
                    {
                        "kind": "annulus",
                        "center": list(p.center),
                        "radii": list(p.radii),
                        "angular_speed": p.angular_speed,
                    }
                )
        return {
            "dims": {"width": self.dims.width, "height": self.dims.height},
            "primitives": prims,
            "phases": [
                {"frames": [ph.start, ph.stop], "active": list(ph.active)}
                for ph in self.phases
            ],
            "num_frames": self.num_frames,
            "noise_sigma": self.noise_sigma,
            "rng_seed": self.rng_seed,
            "frame_rate": self.frame_rate,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SceneSpec":
        try:
            dims = GridDims(int(obj["dims"]["width"]), int(obj["dims"]["height"]))
            prims = []
            for p in obj["primitives"]:
                if p["kind"] == "lane":
                    prims.append(
                        Lane(tuple(p["rect"]), tuple(p["direction"]), float(p["speed"]))
                    )
                elif p["kind"] == "annulus":
                    prims.append(
                        Annulus(
                            tuple(p["center"]),
                            tuple(p["radii"]),
                            float(p["angular_speed"]),
                        )
                    )
                else:
                    raise ValidationError(f"unknown primitive kind {p['kind']!r}")
            phases = [
                Phase(int(ph["frames"][0]), int(ph["frames"][1]), tuple(ph["active"]))
                for ph in obj.get("phases", [])
            ]
            return cls(
                dims=dims,
                primitives=prims,
                phases=phases,
                num_frames=int(obj["num_frames"]),
                noise_sigma=float(obj.get("noise_sigma", 0.0)),
                rng_seed=int(obj.get("rng_seed", 0)),
                frame_rate=float(obj.get("frame_rate", 10.0)),
            )
        except (KeyError, TypeError, IndexError) as exc:
            raise ValidationError(f"malformed scene spec: {exc}") from exc


@dataclass
class GroundTruth:
    """Analytic truth for one generated sequence.

    Label maps use -1 for background and the primitive index for regions.
    """

    coherent_maps: list          # per frame, (h, w) int32
    phase_labels: list           # per frame, phase index
    semantic_map: np.ndarray     # (h, w) int32
    centerlines: list            # per primitive, (k, 2) float array of (x, y)


def _check_spec(spec: SceneSpec) -> list:
    masks = []
    vels = []
    for i, prim in enumerate(spec.primitives):
        if not prim.bounds_ok(spec.dims):
            raise ValidationError(f"primitive {i} does not fit inside the grid")
        masks.append(prim.mask(spec.dims))
        vels.append(prim.velocity_at(spec.dims))
    covered = np.zeros(spec.num_frames, dtype=bool)
    for ph in spec.phases:
        if not (0 <= ph.start < ph.stop <= spec.num_frames):
            raise ValidationError(f"phase range [{ph.start}, {ph.stop}) out of bounds")
        if covered[ph.start : ph.stop].any():
            raise ValidationError("phase ranges overlap")
        covered[ph.start : ph.stop] = True
        for a in ph.active:
            if not 0 <= a < len(spec.primitives):
                raise ValidationError(f"phase references unknown primitive {a}")
        for ai in ph.active:
            for bi in ph.active:
                if bi <= ai:
                    continue
                both = masks[ai] & masks[bi]
                if both.any():
                    dv = np.abs(vels[ai][both] - vels[bi][both]).max()
                    if dv > 1e-9:
                        raise ValidationError(
                            f"primitives {ai} and {bi} overlap with conflicting motion"
                        )
    if not covered.all():
        raise ValidationError("phase schedule does not cover every frame")
    return [masks, vels]


def generate(spec: SceneSpec):
    """Render a scene spec into a flow sequence plus its ground truth."""
    masks, vels = _check_spec(spec)
    h, w = spec.dims.height, spec.dims.width
    rng = np.random.default_rng(spec.rng_seed)

    # phases with the same active set are the same activity
    activity_ids = {}
    activity_of_phase = []
    for ph in spec.phases:
        key = tuple(sorted(ph.active))
        if key not in activity_ids:
            activity_ids[key] = len(activity_ids)
        activity_of_phase.append(activity_ids[key])

    phase_of = np.empty(spec.num_frames, dtype=np.int64)
    for pi, ph in enumerate(spec.phases):
        phase_of[ph.start : ph.stop] = pi

    frames = []
    coherent_maps = []
    for t in range(spec.num_frames):
        if spec.noise_sigma > 0:
            vec = rng.normal(0.0, spec.noise_sigma, size=(h, w, 2))
        else:
            vec = np.zeros((h, w, 2))
        label = np.full((h, w), -1, dtype=np.int32)
        for a in spec.phases[phase_of[t]].active:
            m = masks[a]
            vec[m] = vels[a][m] + vec[m]
            label[m] = a
        frames.append(MotionField(spec.dims, vec))
        coherent_maps.append(label)

    semantic = np.full((h, w), -1, dtype=np.int32)
    for i, m in enumerate(masks):
        semantic[m] = i

    truth = GroundTruth(
        coherent_maps=coherent_maps,
        phase_labels=[int(activity_of_phase[p]) for p in phase_of],
        semantic_map=semantic,
        centerlines=[p.centerline() for p in spec.primitives],
    )
    return FlowSequence(spec.dims, frames, spec.frame_rate), truth


# ---------------------------------------------------------------------------
# Metrics


def _overlap_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    an, bn = a.max() + 2, b.max() + 2  # shift -1 background to bin 0
    idx = (a.ravel() + 1) * bn + (b.ravel() + 1)
    counts = np.bincount(idx, minlength=an * bn)
    return counts.reshape(an, bn)


def per(detected: np.ndarray, truth: np.ndarray) -> float:
    """Particle error rate under optimal region correspondence.

    Detected labels are matched to truth labels (background included as a
    label) by maximum-overlap Hungarian assignment; every particle whose
    detected label does not map onto its truth label counts as wrong.
    """
    detected = np.asarray(detected)
    truth = np.asarray(truth)
    if detected.shape != truth.shape:
        raise ValidationError("label maps must share dimensions")
    overlap = _overlap_matrix(detected, truth)
    n = max(overlap.shape)
    padded = np.zeros((n, n), dtype=np.int64)
    padded[: overlap.shape[0], : overlap.shape[1]] = overlap
    rows, cols = linear_sum_assignment(-padded)
    correct = padded[rows, cols].sum()
    total = detected.size
    return float(total - correct) / float(total)


def cne(detected_counts, truth_counts) -> float:
    """Mean absolute difference between detected and truth region counts."""
    d = np.asarray(detected_counts, dtype=np.float64)
    t = np.asarray(truth_counts, dtype=np.float64)
    if d.shape != t.shape or d.ndim != 1:
        raise ValidationError("count lists must have equal length")
    return float(np.abs(d - t).mean())


def rand_index(a, b) -> float:
    """Plain (unadjusted) Rand index between two labelings of the same items."""
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if a.shape != b.shape:
        raise ValidationError("labelings must have equal length")
    n = a.size
    if n < 2:
        return 1.0
    cont = _overlap_matrix(a, b).astype(np.float64)
    sum_ij = (cont * (cont - 1) / 2).sum()
    sum_a = (cont.sum(axis=1) * (cont.sum(axis=1) - 1) / 2).sum()
    sum_b = (cont.sum(axis=0) * (cont.sum(axis=0) - 1) / 2).sum()
    total = n * (n - 1) / 2
    return float((total + 2 * sum_ij - sum_a - sum_b) / total)


def best_match_accuracy(pred, truth) -> float:
    """Accuracy after optimally matching predicted group ids to truth ids."""
    pred = np.asarray(pred).ravel()
    truth = np.asarray(truth).ravel()
    if pred.shape != truth.shape:
        raise ValidationError("labelings must have equal length")
    overlap = _overlap_matrix(pred, truth)
    n = max(overlap.shape)
    padded = np.zeros((n, n), dtype=np.int64)
    padded[: overlap.shape[0], : overlap.shape[1]] = overlap
    rows, cols = linear_sum_assignment(-padded)
    return float(padded[rows, cols].sum()) / float(pred.size)


def cluster_purity(pred, truth) -> np.ndarray:
    """Per-group purity: the dominant truth fraction inside each predicted group."""
    pred = np.asarray(pred).ravel()
    truth = np.asarray(truth).ravel()
    out = []
    for g in np.unique(pred):
        members = truth[pred == g]
        counts = np.bincount(members - members.min())
        out.append(counts.max() / members.size)
    return np.asarray(out)
