"""Thermal diffusion: individual energies, full-field sums, and the
coarse-to-fine iteration that folds multi-interval motion into one field.

Every particle acts as a heat source whose motion vector diffuses energy to
nearby particles.  A source contributes only when its motion direction is
coherent with the receiver's (cosine gate), with a Gaussian spatial decay and
an exponential decay along the source's motion direction.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .errors import ValidationError
from .fields import FlowSequence, MotionField, Particle, ThermalEnergyField, advect

_NORMALIZE_FLOOR = 1e-12


@dataclass(frozen=True)
class DiffusionConfig:
    """Parameters of the diffusion process.

    k_p scales the squared-distance decay, k_f the decay along the source's
    motion direction, theta_c gates source/receiver coherence.  T_max and
    T_step drive the coarse-to-fine frame intervals, num_itr the iteration
    count.  Sources farther than sqrt(ln(1/kernel_epsilon)/k_p) are skipped;
    the diffusion time l is fixed at 1.
    """

    k_p: float = 0.2
    k_f: float = 0.8
    theta_c: float = 0.7
    l: float = 1.0
    T_max: int = 5
    T_step: int = 1
    num_itr: int = 3
    kernel_epsilon: float = 1e-6

    def __post_init__(self):
        if self.k_p <= 0:
            raise ValidationError("k_p must be > 0")
        if self.k_f < 0:
            raise ValidationError("k_f must be >= 0")
        if not -1.0 <= self.theta_c <= 1.0:
            raise ValidationError("theta_c must lie in [-1, 1]")
        if self.l != 1.0:
            raise ValidationError("diffusion time l is fixed at 1")
        if self.T_max < 1:
            raise ValidationError("T_max must be >= 1")
        if self.T_step < 0:
            raise ValidationError("T_step must be >= 0")
        if self.num_itr < 1:
            raise ValidationError("num_itr must be >= 1")
        if not 0.0 < self.kernel_epsilon < 1.0:
            raise ValidationError("kernel_epsilon must lie in (0, 1)")

    @property
    def truncation_radius(self) -> float:
        return math.sqrt(math.log(1.0 / self.kernel_epsilon) / self.k_p)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "DiffusionConfig":
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ValidationError(f"bad diffusion config: {exc}") from exc


def individual_energy(q: Particle, p: Particle, u_q, f_q, f_p, cfg: DiffusionConfig):
    """Thermal energy diffused from source particle q to receiver p.

    Returns u_q * exp(-k_p*|p-q|^2) * exp(-k_f*|f_q . (p-q)|) when the motion
    vectors f_p and f_q are coherent (cosine >= theta_c), else (0, 0).  A zero
    motion vector on either side fails the gate.
    """
    u_q = np.asarray(u_q, dtype=np.float64)
    f_q = np.asarray(f_q, dtype=np.float64)
    f_p = np.asarray(f_p, dtype=np.float64)
    diff = p.pos() - q.pos()
    if not diff.any():
        raise ValidationError("source and receiver particles must differ")
    np_, nq = np.hypot(*f_p), np.hypot(*f_q)
    if np_ == 0.0 or nq == 0.0 or float(f_p @ f_q) < cfg.theta_c * np_ * nq:
        return np.zeros(2)
    d2 = float(diff @ diff)
    force = abs(float(f_q @ diff))
    return u_q * math.exp(-cfg.k_p * d2 - cfg.k_f * force)


def diffuse_field(
    f: MotionField, u: MotionField, cfg: DiffusionConfig, num_threads: int = 1
) -> ThermalEnergyField:
    """Full thermal energy field: the gated sum over all source particles,
    normalized by the particle count.

    ``f`` supplies the motion vectors for the coherence gate and force decay;
    ``u`` supplies the vectors being diffused.  Sources beyond the truncation
    radius contribute less than kernel_epsilon and are skipped.
    """
    if f.dims != u.dims:
        raise ValidationError(f"field dims differ: {f.dims} vs {u.dims}")
    raw = kernels.diffuse_sweep(
        f.vectors,
        u.vectors,
        cfg.k_p,
        cfg.k_f,
        cfg.theta_c,
        cfg.truncation_radius,
        num_threads,
    )
    return MotionField(f.dims, raw / f.dims.count)


def normalize_magnitudes(vectors: np.ndarray) -> np.ndarray:
    """Rescale the field so the largest vector has unit length.

    Scaling is global, not per vector: renormalizing each vector separately
    would hand background noise the same source strength as coherent motion,
    and the iterated field would lose the contrast that segmentation needs.
    Near-zero fields stay zero.
    """
    top = float(np.hypot(vectors[..., 0], vectors[..., 1]).max())
    if top < _NORMALIZE_FLOOR:
        return np.zeros_like(vectors)
    return vectors / top


def coarse_to_fine(
    seq: FlowSequence,
    start_frame: int,
    cfg: DiffusionConfig,
    num_threads: int = 1,
) -> ThermalEnergyField:
    """Iterative diffusion over shrinking frame intervals.

    Starts from the T_max-frame advected motion field, then repeatedly
    diffuses, renormalizes the result into the next iteration's source
    pattern, and shortens the advection interval by T_step.  The returned
    field is the raw (unnormalized) energy of the final iteration.
    """
    T = cfg.T_max
    flow = advect(seq, start_frame, T)
    pattern = flow
    energy = None
    for itr in range(cfg.num_itr):
        energy = diffuse_field(flow, pattern, cfg, num_threads)
        pattern = MotionField(energy.dims, normalize_magnitudes(energy.vectors))
        T -= cfg.T_step
        if T > 0 and itr + 1 < cfg.num_itr and cfg.T_step > 0:
            flow = advect(seq, start_frame, T)
    return energy


def count_coherent_pairs(f: MotionField, cfg: DiffusionConfig) -> int:
    """Number of ordered (source, receiver) pairs passing the coherence gate
    within the truncation radius.  Raising theta_c can only shrink this set.
    """
    vec = f.vectors
    h, w = vec.shape[:2]
    norm = np.hypot(vec[..., 0], vec[..., 1])
    radius = cfg.truncation_radius
    R = int(radius)
    total = 0
    for dy in range(-min(R, h - 1), min(R, h - 1) + 1):
        for dx in range(-min(R, w - 1), min(R, w - 1) + 1):
            if dx == 0 and dy == 0:
                continue
            if dx * dx + dy * dy > radius * radius:
                continue
            tp = (slice(max(0, dy), h + min(0, dy)), slice(max(0, dx), w + min(0, dx)))
            sq = (slice(max(0, -dy), h + min(0, -dy)), slice(max(0, -dx), w + min(0, -dx)))
            dot = (vec[tp] * vec[sq]).sum(axis=-1)
            ok = (
                (norm[tp] > 0)
                & (norm[sq] > 0)
                & (dot >= cfg.theta_c * norm[tp] * norm[sq])
            )
            total += int(ok.sum())
    return total
