"""Recurrent activity mining: match coherent motions across frames, cluster
frames into recurrent activity groups, merge each group's motions into
pattern fields, and summarize patterns as (possibly branching) flow curves.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from skimage.morphology import skeletonize

from .errors import ValidationError
from .fields import GridDims, MotionField, bilinear_sample
from .regions import SemanticRegionMap, SimilarityConfig, similarity_matrix
from .spectral import ClusterResult, SimilarityMatrix, cluster

_BRANCH_CONE_COS = 0.8   # candidate chords must flow within ~37 deg of the march
_CHORD_HOLE = 1          # holes up to this many px do not split a chord
_BRANCH_GAP = 6.0        # stop scanning a cut after this much empty space
_SMOOTH_WINDOW = 3


@dataclass(frozen=True)
class MiningConfig:
    """theta_mf filters low-frequency pixels out of merged patterns;
    num_groups overrides the automatic recurrent-group count; num_mov is the
    number of unit advection moves between curve segmentation points;
    match_min_sim drops weak matched pairs (None = 10% of the pair maximum).
    """

    theta_mf: float = 0.4
    num_groups: int | None = None
    num_mov: int = 5
    match_min_sim: float | None = None

    def __post_init__(self):
        if not 0 < self.theta_mf < 1:
            raise ValidationError("theta_mf must lie in (0, 1)")
        if self.num_mov < 1:
            raise ValidationError("num_mov must be >= 1")
        if self.num_groups is not None and self.num_groups < 1:
            raise ValidationError("num_groups must be >= 1")


@dataclass
class MatchResult:
    """Optimal assignment between two frames' coherent motions."""

    matched: list          # (i, j, weight, similarity) tuples
    unmatched_t: list      # indices in frame t
    unmatched_prev: list   # indices in frame t - tau


@dataclass
class ImportanceCosts:
    """Per-semantic-region cost of leaving a motion unmatched there."""

    rho: np.ndarray     # (num_regions,), each >= 1
    counts: np.ndarray  # (num_regions, num_groups) motions per pre-group
    k_s: float


@dataclass
class FlowCurve:
    """Polyline summary of one motion pattern, with child branches."""

    points: np.ndarray               # (k, 2) sub-pixel (x, y)
    children: list = field(default_factory=list)
    psi_id: int = -1

    def to_json(self) -> dict:
        return {
            "points": [[float(x), float(y)] for x, y in self.points],
            "children": [c.to_json() for c in self.children],
            "psi_id": self.psi_id,
        }


@dataclass
class ActivityGroup:
    """Frames sharing one recurrent activity, with merged motion patterns."""

    frame_indices: list
    clusters: list = field(default_factory=list)   # lists of CoherentMotion
    patterns: list = field(default_factory=list)   # MotionField per cluster


def match_frames(sim: np.ndarray, cfg: MiningConfig) -> MatchResult:
    """Optimal pairing of two frames' motions maximizing total similarity.

    ``sim[i, j]`` is the similarity between motion i of frame t and motion j
    of frame t - tau.  Pairs below the minimum similarity are demoted to the
    unmatched sets.  Pair weights are similarities normalized by the largest
    kept pair.
    """
    sim = np.asarray(sim, dtype=np.float64)
    n_t, n_prev = sim.shape
    if n_t == 0 or n_prev == 0:
        return MatchResult([], list(range(n_t)), list(range(n_prev)))
    rows, cols = linear_sum_assignment(-sim)
    floor = cfg.match_min_sim
    if floor is None:
        floor = 0.1 * float(sim.max())
    pairs = [(int(i), int(j)) for i, j in zip(rows, cols) if sim[i, j] >= floor and sim[i, j] > 0]
    matched_t = {i for i, _ in pairs}
    matched_prev = {j for _, j in pairs}
    if pairs:
        top = max(sim[i, j] for i, j in pairs)
        matched = [(i, j, float(sim[i, j] / top), float(sim[i, j])) for i, j in pairs]
    else:
        matched = []
    return MatchResult(
        matched=matched,
        unmatched_t=[i for i in range(n_t) if i not in matched_t],
        unmatched_prev=[j for j in range(n_prev) if j not in matched_prev],
    )


def matched_similarity(match: MatchResult, n_t: int, n_prev: int) -> float:
    """Weighted sum of matched-pair similarities over the larger region count."""
    if n_t == 0 and n_prev == 0:
        return 0.0
    total = sum(weight * s for _, _, weight, s in match.matched)
    return total / max(n_t, n_prev)


def importance_costs(
    preclusters: ClusterResult,
    motions_per_frame: list,
    region_map: SemanticRegionMap,
    num_frames: int,
) -> ImportanceCosts:
    """How strongly each semantic region separates the pre-clustered groups.

    Counts, per region and pre-group, the motions overlapping the region by
    at least one pixel; the cost is exp(var(counts) / num_frames^2), so an
    even spread costs 1 and uneven appearance raises the cost.
    """
    z = preclusters.k
    k = region_map.num_regions
    counts = np.zeros((k, z))
    for t, motions in enumerate(motions_per_frame):
        g = int(preclusters.labels[t])
        for m in motions:
            overlapped = np.unique(region_map.labels[m.mask])
            for r in overlapped:
                if r >= 0:
                    counts[int(r), g] += 1
    k_s = 1.0 / float(num_frames) ** 2
    variances = counts.var(axis=1) if z > 0 else np.zeros(k)
    rho = np.exp(k_s * variances)
    return ImportanceCosts(rho=rho, counts=counts, k_s=k_s)


def _unmatch_cost(motion, costs: ImportanceCosts, region_map: SemanticRegionMap) -> float:
    overlapped = [int(r) for r in np.unique(region_map.labels[motion.mask]) if r >= 0]
    if not overlapped:
        return 1.0
    return float(np.mean([1.0 / costs.rho[r] for r in overlapped]))


def unmatched_similarity(
    match: MatchResult,
    costs: ImportanceCosts,
    region_map: SemanticRegionMap,
    motions_t: list,
    motions_prev: list,
) -> float:
    """Product of unmatch costs over both frames' unmatched motions.

    Each unmatched motion contributes the mean of 1/rho over the semantic
    regions it overlaps; motions overlapping none contribute a neutral 1.
    """
    out = 1.0
    for i in match.unmatched_t:
        out *= _unmatch_cost(motions_t[i], costs, region_map)
    for j in match.unmatched_prev:
        out *= _unmatch_cost(motions_prev[j], costs, region_map)
    return out


def frame_similarity(matched: float, unmatched: float) -> float:
    """Inter-frame similarity: the matched score damped by the unmatch costs."""
    return unmatched * matched


def cluster_frames(
    motions_per_frame: list,
    region_map: SemanticRegionMap,
    sim_cfg: SimilarityConfig,
    cfg: MiningConfig,
    seed: int = 0,
) -> list:
    """Cluster frames into recurrent activity groups and merge each group.

    Computes all cross-frame motion similarities, scores every frame pair by
    its matched similarity, pre-clusters frames on those scores to estimate
    per-region importance costs, folds the unmatched costs in, clusters the
    final scores (group count automatic unless num_groups is set), and then
    clusters and merges each group's motions into pattern fields.
    """
    n = len(motions_per_frame)
    if n == 0:
        return []
    dims = region_map.dims
    if n == 1:
        group = ActivityGroup(frame_indices=[0])
        _populate_group(group, motions_per_frame, dims, sim_cfg, cfg, seed)
        return [group]

    flat = [m for motions in motions_per_frame for m in motions]
    offsets = np.cumsum([0] + [len(m) for m in motions_per_frame])
    S_all = similarity_matrix(flat, sim_cfg)

    matches = {}
    s_fm = np.zeros((n, n))
    for t in range(n):
        for s in range(t):
            block = S_all[offsets[t] : offsets[t + 1], offsets[s] : offsets[s + 1]]
            match = match_frames(block, cfg)
            matches[(t, s)] = match
            s_fm[t, s] = s_fm[s, t] = matched_similarity(
                match, len(motions_per_frame[t]), len(motions_per_frame[s])
            )

    pre = cluster(SimilarityMatrix(s_fm), None, seed)
    if pre.k == 1 and n >= 4:
        # a one-group hypothesis would zero out every importance cost; force a
        # two-way split instead -- if the scene really is one activity the
        # split lands evenly and the costs stay neutral anyway
        pre = cluster(SimilarityMatrix(s_fm), 2, seed)
    costs = importance_costs(pre, motions_per_frame, region_map, n)

    s_f = np.zeros((n, n))
    for t in range(n):
        for s in range(t):
            s_fu = unmatched_similarity(
                matches[(t, s)], costs, region_map,
                motions_per_frame[t], motions_per_frame[s],
            )
            s_f[t, s] = s_f[s, t] = frame_similarity(s_fm[t, s], s_fu)

    final = cluster(SimilarityMatrix(s_f), cfg.num_groups, seed + 1)

    groups = []
    for g in range(final.k):
        frames = [t for t in range(n) if final.labels[t] == g]
        group = ActivityGroup(frame_indices=frames)
        _populate_group(group, [motions_per_frame[t] for t in frames], dims,
                        sim_cfg, cfg, seed + 2 + g)
        groups.append(group)
    return groups


def _populate_group(group: ActivityGroup, motions_lists: list, dims: GridDims,
                    sim_cfg: SimilarityConfig, cfg: MiningConfig, seed: int) -> None:
    members = [m for motions in motions_lists for m in motions]
    if not members:
        return
    step1 = cluster(SimilarityMatrix(similarity_matrix(members, sim_cfg)), None, seed)
    for c in range(step1.k):
        psi = [members[i] for i in range(len(members)) if step1.labels[i] == c]
        group.clusters.append(psi)
        group.patterns.append(merge_cluster(psi, dims, cfg))


def merge_cluster(psi: list, dims: GridDims, cfg: MiningConfig) -> MotionField:
    """Average the cluster's energy snapshots where enough members are active.

    A pixel keeps the mean of all member energies (zero outside each member's
    mask) only when the fraction of members with nonzero energy there exceeds
    theta_mf; otherwise it is zeroed.
    """
    if not psi:
        raise ValidationError("cannot merge an empty cluster")
    h, w = dims.height, dims.width
    total = np.zeros((h, w, 2))
    nonzero = np.zeros((h, w))
    for m in psi:
        if m.tef.shape != (h, w, 2):
            raise ValidationError("cluster members must share dims")
        total += m.tef
        nonzero += (m.tef != 0).any(axis=-1)
    freq = nonzero / len(psi)
    keep = freq > cfg.theta_mf
    merged = np.where(keep[..., None], total / len(psi), 0.0)
    return MotionField(dims, merged)


# ---------------------------------------------------------------------------
# Flow curve extraction


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.hypot(v[0], v[1])
    return v / n if n > 0 else v * 0.0


def _support_at(support: np.ndarray, pos: np.ndarray) -> bool:
    x, y = int(round(pos[0])), int(round(pos[1]))
    h, w = support.shape
    return 0 <= x < w and 0 <= y < h and bool(support[y, x])


def _scan_chords(pos: np.ndarray, direction: np.ndarray, support: np.ndarray):
    """Support chords along the line through ``pos`` perpendicular to the
    march direction.  Scanning stops on each side after a long gap, so distant
    pieces of support (e.g. the far side of a ring) are never picked up.
    Returns (t_low, t_high) offsets for each chord, ordered low to high.
    """
    normal = np.array([-direction[1], direction[0]])
    h, w = support.shape
    limit = int(np.hypot(h, w)) + 1

    offsets = [0.0]
    hits = [_support_at(support, pos)]
    for sign in (-1.0, 1.0):
        misses = 0
        t = 1.0
        while t <= limit and misses <= _BRANCH_GAP:
            p = pos + sign * t * normal
            hit = _support_at(support, p)
            offsets.append(sign * t)
            hits.append(hit)
            misses = 0 if hit else misses + 1
            t += 1.0

    order = np.argsort(offsets)
    offs = np.asarray(offsets)[order]
    vals = np.asarray(hits)[order]

    chords = []
    start = None
    gap = 0
    for off, hit in zip(offs, vals):
        if hit:
            if start is None:
                start = off
            end = off
            gap = 0
        elif start is not None:
            gap += 1
            if gap > _CHORD_HOLE:
                chords.append((start, end))
                start = None
                gap = 0
    if start is not None:
        chords.append((start, end))
    return chords, normal


def _chord_direction(pos, normal, lo, hi, dirs) -> np.ndarray:
    samples = []
    t = lo
    while t <= hi + 1e-9:
        p = pos + t * normal
        x, y = int(round(p[0])), int(round(p[1]))
        if 0 <= y < dirs.shape[0] and 0 <= x < dirs.shape[1]:
            samples.append(dirs[y, x])
        t += 1.0
    if not samples:
        return np.zeros(2)
    return _unit(np.asarray(samples).mean(axis=0))


def _advect_point(pos, direction, dirs, num_mov):
    p = pos.copy()
    d = direction.copy()
    for _ in range(num_mov):
        v = bilinear_sample(dirs, np.array([p[0]]), np.array([p[1]]))[0]
        v = _unit(v)
        if not v.any():
            v = d
        p = p + v
        d = v
    return p, d


def _march(start, direction, support, dirs, cfg, psi_id, depth, start_halfwidth) -> FlowCurve:
    cuts = [(start.copy(), direction.copy(), start_halfwidth)]
    max_steps = max(64, int(4 * support.sum() / cfg.num_mov))
    children = []
    closed = False

    turning = 0.0
    branched = False
    for _ in range(max_steps):
        prev_mid, prev_dir, _ = cuts[-1]
        pos, _ = _advect_point(prev_mid, prev_dir, dirs, cfg.num_mov)
        if len(cuts) > 3 and np.hypot(*(pos - cuts[0][0])) < 0.75 * cfg.num_mov:
            closed = True
            break
        if abs(turning) >= 2.0 * np.pi - 0.3:  # completed a full loop
            closed = True
            break
        # the cut is drawn perpendicular to the previous segmentation point's
        # direction: a diverging region shows up as several flow-aligned
        # chords before the tracer commits to one arm
        chords, normal = _scan_chords(pos, prev_dir, support)
        if not chords:
            break
        if len(chords) > 1 and depth < 4:
            aligned = []
            for lo, hi in chords:
                if hi - lo < 1.0:
                    continue
                cdir = _chord_direction(pos, normal, lo, hi, dirs)
                if float(cdir @ prev_dir) >= _BRANCH_CONE_COS:
                    aligned.append(((lo + hi) / 2.0, (hi - lo) / 2.0, cdir))
            if len(aligned) > 1:
                for mid_t, half, cdir in aligned:
                    child_start = pos + mid_t * normal
                    children.append(
                        _march(child_start, cdir, support, dirs, cfg, psi_id,
                               depth + 1, half)
                    )
                branched = True
                break
        # recenter onto the chord containing (or nearest to) the marcher
        own = min(chords, key=lambda ch: 0.0 if ch[0] <= 0.0 <= ch[1] else min(abs(ch[0]), abs(ch[1])))
        mid = pos + ((own[0] + own[1]) / 2.0) * normal
        if not _support_at(support, mid):
            break
        new_dir = _chord_direction(pos, normal, own[0], own[1], dirs)
        if not new_dir.any():
            new_dir = _unit(mid - prev_mid)
        if not new_dir.any():
            new_dir = prev_dir
        turning += float(np.arctan2(
            prev_dir[0] * new_dir[1] - prev_dir[1] * new_dir[0],
            prev_dir @ new_dir,
        ))
        cuts.append((mid, new_dir, (own[1] - own[0]) / 2.0))

    points = _centroids_between_cuts(cuts, support, closed, cfg, drop_tail=branched)
    if len(points) < 2:
        # degenerate support: emit a minimal two-point stub that stays inside
        fallback = cuts[-1][0] if len(cuts) > 1 else cuts[0][0] + 0.45 * cuts[0][1]
        points = _dedupe(np.vstack([cuts[0][0][None, :], np.atleast_2d(fallback)]))
    curve = FlowCurve(points=points, children=children, psi_id=psi_id)
    return curve


def _centroids_between_cuts(cuts, support, closed, cfg, drop_tail=False) -> np.ndarray:
    if len(cuts) < 2:
        return np.zeros((0, 2))
    mids = np.array([c[0] for c in cuts])
    dirs_at = np.array([c[1] for c in cuts])
    halves = np.array([c[2] for c in cuts])
    ys, xs = np.nonzero(support)
    pix = np.stack([xs, ys], axis=1).astype(np.float64)
    d2 = ((pix[:, None, :] - mids[None, :, :]) ** 2).sum(axis=-1)
    nearest = d2.argmin(axis=1)
    near_d = np.sqrt(d2[np.arange(len(pix)), nearest])

    seg_count = len(cuts) if closed else len(cuts) - 1
    side = ((pix - mids[nearest]) * dirs_at[nearest]).sum(axis=1)
    seg = np.where(side >= 0, nearest, nearest - 1)
    if closed:
        seg = seg % seg_count
    else:
        seg = np.clip(seg, 0, seg_count - 1)

    # only pixels within the local band around the marched path
    keep = near_d <= halves[nearest] + cfg.num_mov
    if drop_tail and not closed:
        # the region past the final cut belongs to the spawned branches
        keep &= ~((nearest == len(cuts) - 1) & (side >= 0))
    centroids = []
    for s in range(seg_count):
        members = pix[keep & (seg == s)]
        if len(members):
            centroids.append(members.mean(axis=0))
    if not centroids:
        return np.zeros((0, 2))
    pts = np.asarray(centroids)
    pts = _smooth(pts)
    return _dedupe(pts)


def _smooth(pts: np.ndarray) -> np.ndarray:
    if len(pts) < _SMOOTH_WINDOW:
        return pts
    out = pts.copy()
    for i in range(1, len(pts) - 1):
        out[i] = pts[i - 1 : i + 2].mean(axis=0)
    return out


def _dedupe(pts: np.ndarray) -> np.ndarray:
    if len(pts) < 2:
        return pts
    keep = [0]
    for i in range(1, len(pts)):
        if np.hypot(*(pts[i] - pts[keep[-1]])) > 1e-9:
            keep.append(i)
    return pts[keep]


def extract_flow_curve(pattern: MotionField, cfg: MiningConfig, psi_id: int = -1) -> FlowCurve:
    """Summarize a motion pattern as a centerline polyline.

    Skeletonizes the pattern's support, starts at the skeleton end point most
    opposite the mean flow, then repeatedly advects a tracer through the
    direction field, recenters it on the local support chord, and links the
    centroids of the support slices between consecutive cuts.  When a cut
    meets several flow-aligned chords (a diverging branch), child curves are
    spawned from each chord and the parent stops there.
    """
    support = (pattern.vectors != 0).any(axis=-1)
    if not support.any():
        raise ValidationError("pattern has empty support")
    norms = np.hypot(pattern.vectors[..., 0], pattern.vectors[..., 1])
    safe = np.where(norms > 0, norms, 1.0)
    dirs = pattern.vectors / safe[..., None]

    skel = skeletonize(support)
    if not skel.any():
        skel = support
    sy, sx = np.nonzero(skel)
    neighbors = np.zeros_like(skel, dtype=np.int64)
    sk = skel.astype(np.int64)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            shifted = np.zeros_like(sk)
            ys0, ys1 = max(0, dy), sk.shape[0] + min(0, dy)
            xs0, xs1 = max(0, dx), sk.shape[1] + min(0, dx)
            shifted[ys0:ys1, xs0:xs1] = sk[max(0, -dy): sk.shape[0] + min(0, -dy),
                                           max(0, -dx): sk.shape[1] + min(0, -dx)]
            neighbors += shifted
    endpoint_mask = skel & (neighbors == 1)

    mean_dir = _unit(pattern.vectors[support].mean(axis=0))
    centroid = np.array([sx.mean(), sy.mean()])
    if endpoint_mask.any():
        ey, ex = np.nonzero(endpoint_mask)
    else:
        ey, ex = sy, sx  # closed skeleton: no end points, start anywhere stable
    cand = np.stack([ex, ey], axis=1).astype(np.float64)
    back = (cand - centroid) @ mean_dir if mean_dir.any() else np.zeros(len(cand))
    order = np.lexsort((cand[:, 0], cand[:, 1], back))
    start = cand[order[0]]

    d0 = _unit(bilinear_sample(dirs, np.array([start[0]]), np.array([start[1]]))[0])
    if not d0.any():
        d0 = mean_dir if mean_dir.any() else np.array([1.0, 0.0])
    halfwidth = 1.0
    chords, normal = _scan_chords(start, d0, support)
    if chords:
        own = min(chords, key=lambda ch: 0.0 if ch[0] <= 0.0 <= ch[1] else min(abs(ch[0]), abs(ch[1])))
        start = start + ((own[0] + own[1]) / 2.0) * normal
        halfwidth = (own[1] - own[0]) / 2.0
    return _march(start, d0, support, dirs, cfg, psi_id, depth=0, start_halfwidth=halfwidth)
