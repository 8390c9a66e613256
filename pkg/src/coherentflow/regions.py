"""Two-step clustering: group coherent motions across energy fields, then
cluster particles on their per-field group labels into stable semantic regions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .fields import GridDims
from .segmentation import CoherentMotion
from .spectral import ClusterResult, SimilarityMatrix, cluster


@dataclass(frozen=True)
class SimilarityConfig:
    """Gates for indicative-particle selection and region-pair similarity.

    theta_bp thresholds the combined direction/distance affinity of a particle
    pair; k_p_sim is the spatial decay inside that affinity (much smaller than
    the diffusion decay so that disconnected fragments of one stream can still
    register as similar); theta_c gates how sharply a boundary particle's
    energy must point along the outward normal.
    """

    theta_bp: float = 0.7
    k_p_sim: float = 0.0005
    theta_c: float = 0.7

    def __post_init__(self):
        if not 0 < self.theta_bp <= 1:
            raise ValidationError("theta_bp must lie in (0, 1]")
        if self.k_p_sim <= 0:
            raise ValidationError("k_p_sim must be > 0")
        if not -1.0 <= self.theta_c <= 1.0:
            raise ValidationError("theta_c must lie in [-1, 1]")


@dataclass(frozen=True)
class IndicativeParticleSet:
    """Boundary particles whose energy points sharply outward."""

    particles: np.ndarray  # (m, 2) float (x, y)
    normals: np.ndarray    # (m, 2) unit outward normals
    energies: np.ndarray   # (m, 2)

    def __len__(self):
        return self.particles.shape[0]

    @classmethod
    def empty(cls) -> "IndicativeParticleSet":
        z = np.zeros((0, 2))
        return cls(z, z.copy(), z.copy())


@dataclass(frozen=True)
class SemanticRegionMap:
    """Per-pixel semantic region ids, contiguous from 0; -1 is background."""

    dims: GridDims
    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.int32)
        if lab.shape != (self.dims.height, self.dims.width):
            raise ValidationError("label map shape does not match dims")
        object.__setattr__(self, "labels", lab)

    @property
    def num_regions(self) -> int:
        return int(self.labels.max()) + 1 if (self.labels >= 0).any() else 0


def _contour_normals(contour: np.ndarray, mask: np.ndarray):
    """Outward unit normals along one traced contour (5-point tangents)."""
    pts = contour
    closed = len(pts) > 2 and np.allclose(pts[0], pts[-1])
    if closed:
        pts = pts[:-1]
    n = len(pts)
    normals = np.zeros((n, 2))
    h, w = mask.shape
    for i in range(n):
        if closed:
            ahead = pts[(i + 2) % n]
            behind = pts[(i - 2) % n]
        else:
            ahead = pts[min(i + 2, n - 1)]
            behind = pts[max(i - 2, 0)]
        tang = ahead - behind
        norm = np.hypot(*tang)
        if norm == 0:
            continue
        perp = np.array([-tang[1], tang[0]]) / norm
        probe = pts[i] + perp * 1.5
        px, py = int(round(probe[0])), int(round(probe[1]))
        inside = 0 <= px < w and 0 <= py < h and mask[py, px]
        normals[i] = -perp if inside else perp
    return pts, normals


def indicative_particles(c: CoherentMotion, cfg: SimilarityConfig) -> IndicativeParticleSet:
    """Boundary particles of ``c`` whose energy vector points outward more
    sharply than theta_c (cosine with the outward normal)."""
    if not c.boundary:
        raise ValidationError("coherent motion has an empty boundary")
    h, w = c.mask.shape
    chosen = {}
    for contour in c.contours:
        pts, normals = _contour_normals(contour, c.mask)
        for p, v in zip(pts, normals):
            if not v.any():
                continue
            # contour vertices sit on pixel edges; snap to the mask side
            inside = None
            for yy in {int(np.floor(p[1])), int(np.ceil(p[1]))}:
                for xx in {int(np.floor(p[0])), int(np.ceil(p[0]))}:
                    if 0 <= yy < h and 0 <= xx < w and c.mask[yy, xx]:
                        inside = (xx, yy)
                        break
                if inside:
                    break
            if inside is None or inside in chosen:
                continue
            x, y = inside
            e = c.tef[y, x]
            norm_e = np.hypot(*e)
            if norm_e == 0:
                continue
            if float(e @ v) / norm_e > cfg.theta_c:
                chosen[(x, y)] = (v.copy(), e.copy())
    if not chosen:
        return IndicativeParticleSet.empty()
    keys = list(chosen.keys())
    particles = np.array(keys, dtype=np.float64)
    normals = np.array([chosen[k][0] for k in keys])
    energies = np.array([chosen[k][1] for k in keys])
    return IndicativeParticleSet(particles, normals, energies)


def ensure_indicative(c: CoherentMotion, cfg: SimilarityConfig) -> IndicativeParticleSet:
    """Compute and cache the indicative particle set of a coherent motion.

    The cache is keyed by the gate config, so alternating configs recompute.
    """
    if c.indicative is None or c.indicative_cfg != cfg:
        c.indicative = indicative_particles(c, cfg)
        c.indicative_cfg = cfg
    return c.indicative


def coherent_similarity(c_m: CoherentMotion, c_k: CoherentMotion, cfg: SimilarityConfig) -> int:
    """Number of indicative particle pairs whose direction agreement, damped
    by squared distance, clears theta_bp.  Symmetric in its arguments; the
    two regions may come from different energy fields."""
    lm = ensure_indicative(c_m, cfg)
    lk = ensure_indicative(c_k, cfg)
    if len(lm) == 0 or len(lk) == 0:
        return 0
    em, ek = lm.energies, lk.energies
    nm = np.linalg.norm(em, axis=1)
    nk = np.linalg.norm(ek, axis=1)
    cos = (em @ ek.T) / np.outer(nm, nk)
    diff = lm.particles[:, None, :] - lk.particles[None, :, :]
    d2 = (diff ** 2).sum(axis=-1)
    aff = cos * np.exp(-cfg.k_p_sim * d2)
    return int((aff > cfg.theta_bp).sum())


def similarity_matrix(motions: list, cfg: SimilarityConfig) -> np.ndarray:
    """All-pairs similarity over a flat list of coherent motions (zero diag)."""
    m = len(motions)
    S = np.zeros((m, m))
    for a in range(m):
        for b in range(a + 1, m):
            s = coherent_similarity(motions[a], motions[b], cfg)
            S[a, b] = S[b, a] = s
    return S


def cluster_coherent_motions(motions: list, cfg: SimilarityConfig, seed: int = 0) -> ClusterResult:
    """Step 1: cluster all coherent motions (across energy fields) on their
    pairwise similarity graph with the cluster count chosen automatically."""
    if len(motions) < 1:
        raise ValidationError("need at least one coherent motion")
    S = similarity_matrix(motions, cfg)
    return cluster(SimilarityMatrix(S), None, seed)


_MAX_SUBSAMPLE = 4096


def _agreement_matrix(vectors: np.ndarray) -> np.ndarray:
    """Pairwise count of matching non-background coordinates."""
    n = vectors.shape[0]
    M = np.zeros((n, n))
    for t in range(vectors.shape[1]):
        col = vectors[:, t]
        agree = (col[:, None] == col[None, :]) & (col[:, None] != -1)
        M += agree
    np.fill_diagonal(M, 0.0)
    return M


def build_semantic_regions(
    motions_by_tef: list,
    step1: ClusterResult,
    dims: GridDims,
    seed: int = 0,
    stride: int = 4,
) -> SemanticRegionMap:
    """Step 2: cluster particles on their per-field group-label vectors.

    Each particle's vector holds, for every energy field, the Step-1 cluster
    label of its containing coherent motion (-1 when uncovered).  A strided
    subsample of covered particles is spectrally clustered on pairwise
    label-agreement counts (the stride widens automatically if the subsample
    would exceed a few thousand particles); every remaining particle adopts
    the cluster of its own label vector (matching vectors always share a
    region), falling back to the best-agreeing clustered vector for vectors
    the subsample missed.  All-background particles stay background.
    """
    n_tef = len(motions_by_tef)
    h, w = dims.height, dims.width
    label_cube = np.full((n_tef, h, w), -1, dtype=np.int64)
    flat = 0
    for t, motions in enumerate(motions_by_tef):
        for m in motions:
            label_cube[t][m.mask] = step1.labels[flat]
            flat += 1
    if flat != len(step1.labels):
        raise ValidationError("step-1 labels do not cover the motion list")

    covered = (label_cube >= 0).any(axis=0)
    out = np.full((h, w), -1, dtype=np.int32)
    if not covered.any():
        return SemanticRegionMap(dims, out)

    while True:
        ys, xs = np.mgrid[0:h:stride, 0:w:stride]
        sub_mask = covered[ys, xs]
        if sub_mask.sum() <= _MAX_SUBSAMPLE:
            break
        stride += 1
    sub_y, sub_x = ys[sub_mask], xs[sub_mask]
    if sub_y.size == 0:
        # stride skipped every covered pixel; fall back to all covered pixels
        sub_y, sub_x = np.nonzero(covered)
    sub_vectors = label_cube[:, sub_y, sub_x].T  # (n_sub, n_tef)

    M = _agreement_matrix(sub_vectors)
    step2 = cluster(SimilarityMatrix(M), None, seed)

    # one cluster per distinct label vector: majority vote over the subsample
    uniq, inverse = np.unique(sub_vectors, axis=0, return_inverse=True)
    uniq_label = np.empty(uniq.shape[0], dtype=np.int64)
    for u in range(uniq.shape[0]):
        members = step2.labels[inverse == u]
        uniq_label[u] = np.bincount(members).argmax()

    cov_y, cov_x = np.nonzero(covered)
    cov_vectors = label_cube[:, cov_y, cov_x].T
    all_uniq, all_inverse = np.unique(cov_vectors, axis=0, return_inverse=True)
    assign = np.empty(all_uniq.shape[0], dtype=np.int64)
    for u in range(all_uniq.shape[0]):
        vec = all_uniq[u]
        hit = np.nonzero((uniq == vec).all(axis=1))[0]
        if hit.size:
            assign[u] = uniq_label[hit[0]]
        else:
            agree = ((uniq == vec) & (vec != -1)).sum(axis=1)
            assign[u] = uniq_label[int(agree.argmax())]

    out[cov_y, cov_x] = assign[all_inverse]

    # compact ids to 0..K-1 in raster order of first appearance
    final = np.full((h, w), -1, dtype=np.int32)
    vals = out[cov_y, cov_x]
    mapping = {}
    order = np.lexsort((cov_x, cov_y))
    for idx in order:
        v = int(vals[idx])
        if v not in mapping:
            mapping[v] = len(mapping)
    final[cov_y, cov_x] = np.array([mapping[int(v)] for v in vals], dtype=np.int32)
    return SemanticRegionMap(dims, final)
