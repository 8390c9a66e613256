"""Coherent motion extraction from a thermal energy field.

Pipeline: randomly sample pixels, Delaunay-triangulate them, weight each link
by the energy difference per unit distance, keep the links crossing region
boundaries, rasterize them, and flood the distance transform with watershed.
Basins that are too small or carry too little energy are background.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage as ndi
from scipy.spatial import Delaunay, QhullError
from skimage.draw import line as raster_line
from skimage.filters import threshold_otsu
from skimage.measure import find_contours
from skimage.segmentation import watershed

from .errors import ValidationError
from .fields import GridDims, Particle, ThermalEnergyField

_RESAMPLE_RETRIES = 8
_MARKER_DISTANCE = 2.0
_MIN_RASTER_COMPONENT = 9   # px; isolated high-weight links are noise, walls chain
_MERGE_COS = 0.7            # interface coherence needed to fuse watershed fragments
_MERGE_RATIO = 4.0
_BOUNDARY_PEEL = 1          # px of halo stripped from each final region
_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass(frozen=True)
class SegmentationConfig:
    """Knobs for sampling, boundary thresholding, and background rejection.

    ``sample_count`` defaults to max(256, pixels/8); ``weight_threshold``
    defaults to Otsu's threshold over the frame's link weights;
    ``magnitude_floor`` defaults to 15% of the frame's 95th-percentile energy
    magnitude, which sits well above background noise energy and below the
    in-region magnitudes of both straight and rotating flows.
    """

    sample_count: int | None = None
    weight_threshold: float | None = None
    min_region_area: int = 48
    magnitude_floor: float | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.sample_count is not None and self.sample_count < 3:
            raise ValidationError("sample_count must be >= 3")
        if self.weight_threshold is not None and self.weight_threshold <= 0:
            raise ValidationError("weight_threshold must be > 0")
        if self.min_region_area < 1:
            raise ValidationError("min_region_area must be >= 1")

    def resolved_sample_count(self, dims: GridDims) -> int:
        if self.sample_count is not None:
            return self.sample_count
        return max(256, dims.count // 8)


@dataclass(frozen=True)
class TriangulationGraph:
    """Sampled pixel positions and the Delaunay links between them."""

    samples: np.ndarray  # (n, 2) int array of (x, y)
    edges: np.ndarray    # (m, 2) int array of sample indices, i < j


@dataclass
class CoherentMotion:
    """One connected coherently-moving region with its energy snapshot."""

    id: int
    frame: int
    mask: np.ndarray                 # (h, w) bool
    tef: np.ndarray                  # (h, w, 2), zero outside mask
    boundary: list                   # ordered (x, y) integer boundary pixels
    contours: list = field(default_factory=list)  # traced (k, 2) float (x, y) loops
    indicative: object = None        # filled by the semantic-regions step
    indicative_cfg: object = None    # the gate config the cached set was built with

    @property
    def area(self) -> int:
        return int(self.mask.sum())

    def mean_energy(self) -> np.ndarray:
        if not self.mask.any():
            return np.zeros(2)
        return self.tef[self.mask].mean(axis=0)

    def bbox(self) -> tuple:
        ys, xs = np.nonzero(self.mask)
        return (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


def triangulation_from_points(points: np.ndarray) -> TriangulationGraph:
    """Delaunay triangulation of explicit (x, y) points."""
    pts = np.asarray(points)
    tri = Delaunay(pts)
    pairs = np.concatenate(
        [tri.simplices[:, [0, 1]], tri.simplices[:, [1, 2]], tri.simplices[:, [0, 2]]]
    )
    pairs = np.sort(pairs, axis=1)
    edges = np.unique(pairs, axis=0)
    return TriangulationGraph(samples=pts, edges=edges)


def triangulate(dims: GridDims, cfg: SegmentationConfig) -> TriangulationGraph:
    """Triangulate a uniform random sample of distinct pixels (seeded)."""
    count = cfg.resolved_sample_count(dims)
    if count > dims.count:
        raise ValidationError(
            f"sample_count {count} exceeds pixel count {dims.count}"
        )
    rng = np.random.default_rng(cfg.rng_seed)
    last_err = None
    for _ in range(_RESAMPLE_RETRIES):
        flat = rng.choice(dims.count, size=count, replace=False)
        pts = np.stack([flat % dims.width, flat // dims.width], axis=1)
        try:
            return triangulation_from_points(pts)
        except QhullError as exc:  # degenerate (e.g. collinear) draw
            last_err = exc
    raise ValidationError(f"could not triangulate after resampling: {last_err}")


def link_weight(p: Particle, q: Particle, tef: ThermalEnergyField) -> float:
    """Energy difference per unit distance between two linked particles."""
    dp = p.pos() - q.pos()
    dist = np.hypot(*dp)
    if dist == 0:
        raise ValidationError("link endpoints must differ")
    ep = tef.vectors[int(p.y), int(p.x)]
    eq = tef.vectors[int(q.y), int(q.x)]
    return float(np.hypot(*(ep - eq)) / dist)


def _edge_weights(graph: TriangulationGraph, tef: ThermalEnergyField) -> np.ndarray:
    a = graph.samples[graph.edges[:, 0]]
    b = graph.samples[graph.edges[:, 1]]
    ea = tef.vectors[a[:, 1], a[:, 0]]
    eb = tef.vectors[b[:, 1], b[:, 0]]
    num = np.hypot(*(ea - eb).T)
    den = np.hypot(*(a - b).T.astype(np.float64))
    return num / den


def detect_boundaries(
    graph: TriangulationGraph, tef: ThermalEnergyField, cfg: SegmentationConfig
) -> np.ndarray:
    """Links whose weight exceeds the boundary threshold (rows of ``edges``)."""
    if graph.edges.size == 0:
        return graph.edges.reshape(0, 2)
    weights = _edge_weights(graph, tef)
    thr = cfg.weight_threshold
    if thr is None:
        finite = weights[np.isfinite(weights)]
        if finite.size == 0 or np.ptp(finite) == 0:
            return graph.edges[:0]
        thr = float(threshold_otsu(finite))
    return graph.edges[weights > thr]


def _trace_boundary(mask: np.ndarray):
    """Closed sub-pixel contours plus the ordered integer boundary pixels."""
    contours_rc = find_contours(mask.astype(np.float64), 0.5)
    eroded = ndi.binary_erosion(
        mask, structure=np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]]), border_value=0
    )
    boundary_set = mask & ~eroded
    ordered = []
    seen = set()
    contours_xy = []
    for cont in contours_rc:
        contours_xy.append(cont[:, ::-1].copy())  # (row, col) -> (x, y)
        for r, c in cont:
            y, x = int(round(r)), int(round(c))
            best = None
            for yy in (y, int(np.floor(r)), int(np.ceil(r))):
                for xx in (x, int(np.floor(c)), int(np.ceil(c))):
                    if (
                        0 <= yy < mask.shape[0]
                        and 0 <= xx < mask.shape[1]
                        and boundary_set[yy, xx]
                    ):
                        best = (xx, yy)
                        break
                if best:
                    break
            if best and best not in seen:
                seen.add(best)
                ordered.append(best)
    # pick up boundary pixels the contour walk missed (rare, thin spurs)
    for y, x in zip(*np.nonzero(boundary_set)):
        if (int(x), int(y)) not in seen:
            seen.add((int(x), int(y)))
            ordered.append((int(x), int(y)))
    return contours_xy, ordered


def _coherent_interface(mask_a, mask_b, vectors) -> bool:
    """True when the two fragments' energies agree where they touch.

    Compares mean energy over the pixels of each fragment near the shared
    divide, so curved regions are judged by their local direction, not by a
    global mean that curvature would wash out.
    """
    grow = np.ones((5, 5), dtype=bool)
    zone_a = mask_a & ndi.binary_dilation(mask_b, structure=grow)
    zone_b = mask_b & ndi.binary_dilation(mask_a, structure=grow)
    if zone_a.sum() < 4 or zone_b.sum() < 4:
        return False
    ea = vectors[zone_a].mean(axis=0)
    eb = vectors[zone_b].mean(axis=0)
    na, nb = np.hypot(*ea), np.hypot(*eb)
    if na == 0 or nb == 0:
        return False
    if float(ea @ eb) / (na * nb) <= _MERGE_COS:
        return False
    ratio = max(na, nb) / min(na, nb)
    return ratio <= _MERGE_RATIO


def motion_from_mask(
    mask: np.ndarray, vectors: np.ndarray, id: int = 0, frame: int = 0
) -> CoherentMotion:
    """Build a coherent motion from an explicit mask and energy field."""
    if not mask.any():
        raise ValidationError("coherent motion mask is empty")
    contours, boundary = _trace_boundary(mask)
    return CoherentMotion(
        id=id,
        frame=frame,
        mask=mask.astype(bool),
        tef=np.asarray(vectors, dtype=np.float64) * mask[..., None],
        boundary=boundary,
        contours=contours,
    )


def segment(
    tef: ThermalEnergyField, cfg: SegmentationConfig, frame: int = 0
) -> list:
    """Extract coherent motion regions from one thermal energy field.

    Crossing links are rasterized into boundary walls (dropping isolated
    fragments, which are threshold noise), the distance transform of the
    walls is flooded by watershed, every basin is clipped to the pixels above
    the magnitude floor, and neighboring fragments whose energies agree at
    the divide are fused back together.  Remaining regions smaller than
    min_region_area or with mean energy below the floor are background.
    """
    dims = tef.dims
    graph = triangulate(dims, cfg)
    crossing = detect_boundaries(graph, tef, cfg)

    raster = np.zeros((dims.height, dims.width), dtype=bool)
    for i, j in crossing:
        x0, y0 = graph.samples[i]
        x1, y1 = graph.samples[j]
        rr, cc = raster_line(y0, x0, y1, x1)
        raster[rr, cc] = True
    if raster.any():
        comp, _ = ndi.label(raster, structure=np.ones((3, 3), dtype=bool))
        sizes = np.bincount(comp.ravel())
        keep = sizes >= _MIN_RASTER_COMPONENT
        keep[0] = False
        raster = keep[comp]
        raster = ndi.binary_dilation(raster, structure=np.ones((3, 3), dtype=bool))

    mag = tef.magnitudes()
    if not mag.any():
        return []
    floor = cfg.magnitude_floor
    if floor is None:
        floor = 0.15 * float(np.percentile(mag, 95))

    dist = ndi.distance_transform_edt(~raster)
    markers, n_markers = ndi.label(dist > _MARKER_DISTANCE)
    if n_markers == 0:
        return []
    basins = watershed(-dist, markers)

    # clip each basin to the energetic foreground; gaps in the walls cannot
    # leak a region into the background once the floor cuts the connection
    fragments = []
    foreground = mag >= floor
    for basin in range(1, n_markers + 1):
        clip = (basins == basin) & foreground
        comp, n_comp = ndi.label(clip, structure=_FOUR_CONN)
        for c in range(1, n_comp + 1):
            mask = comp == c
            if int(mask.sum()) >= 4:
                fragments.append(mask)

    merged = _merge_fragments(fragments, tef.vectors)

    # peel the 1 px halo that the dilated walls and gate-lucky noise pixels
    # attach to every region; a peel can split a mask, so re-label components
    refined = []
    for mask in merged:
        peeled = ndi.binary_erosion(mask, structure=_FOUR_CONN, iterations=_BOUNDARY_PEEL)
        comp, n_comp = ndi.label(peeled, structure=_FOUR_CONN)
        for c in range(1, n_comp + 1):
            refined.append(comp == c)

    motions = []
    for mask in refined:
        if int(mask.sum()) < cfg.min_region_area:
            continue
        mean_mag = float(mag[mask].mean())
        if mean_mag < floor or mean_mag == 0.0:
            continue
        contours, boundary = _trace_boundary(mask)
        motions.append(
            CoherentMotion(
                id=len(motions),
                frame=frame,
                mask=mask,
                tef=tef.vectors * mask[..., None],
                boundary=boundary,
                contours=contours,
            )
        )
    return motions


def _merge_fragments(fragments: list, vectors: np.ndarray) -> list:
    """Union watershed fragments whose interfaces carry coherent energy."""
    n = len(fragments)
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    # only directly touching fragments may fuse, so unions stay 4-connected
    grown = [ndi.binary_dilation(m, structure=_FOUR_CONN) for m in fragments]
    for a in range(n):
        for b in range(a + 1, n):
            if find(a) == find(b):
                continue
            if not (grown[a] & fragments[b]).any():
                continue
            if _coherent_interface(fragments[a], fragments[b], vectors):
                parent[find(b)] = find(a)

    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    out = []
    for root in sorted(groups):
        mask = np.zeros_like(fragments[0])
        for i in groups[root]:
            mask |= fragments[i]
        out.append(mask)
    return out
