"""Figure rendering: quiver plots of vector fields, colored label maps, and
flow-curve overlays with exact control-point pixels.
"""
from __future__ import annotations

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
from PIL import Image
from skimage.draw import line as raster_line

from .fields import MotionField
from .mining import FlowCurve

CURVE_LINE_COLOR = (255, 160, 0)
CURVE_POINT_COLOR = (255, 0, 0)

# fixed palette; label i uses entry i mod len
_PALETTE = [
    (31, 119, 180), (255, 127, 14), (44, 160, 44), (214, 39, 40),
    (148, 103, 189), (140, 86, 75), (227, 119, 194), (127, 127, 127),
    (188, 189, 34), (23, 190, 207), (174, 199, 232), (255, 187, 120),
    (152, 223, 138), (255, 152, 150), (197, 176, 213), (196, 156, 148),
]


def render_quiver(field: MotionField, path, step: int = 4) -> None:
    """Arrow plot of a vector field; zero vectors draw nothing."""
    h, w = field.dims.height, field.dims.width
    ys, xs = np.mgrid[0:h:step, 0:w:step]
    u = field.vectors[ys, xs, 0]
    v = field.vectors[ys, xs, 1]
    nz = (u != 0) | (v != 0)
    fig, ax = plt.subplots(figsize=(max(2, w / 32), max(2, h / 32)))
    if nz.any():
        ax.quiver(xs[nz], ys[nz], u[nz], -v[nz], color="tab:blue", angles="xy")
    ax.set_xlim(-0.5, w - 0.5)
    ax.set_ylim(h - 0.5, -0.5)
    ax.set_aspect("equal")
    ax.axis("off")
    fig.savefig(path, dpi=100, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)


def label_map_rgb(labels: np.ndarray) -> np.ndarray:
    """Colorize an int label map (-1 background becomes black)."""
    h, w = labels.shape
    rgb = np.zeros((h, w, 3), dtype=np.uint8)
    for lab in np.unique(labels):
        if lab < 0:
            continue
        rgb[labels == lab] = _PALETTE[int(lab) % len(_PALETTE)]
    return rgb


def render_label_map(labels: np.ndarray, path) -> None:
    Image.fromarray(label_map_rgb(labels)).save(path)


def _draw_curve(rgb: np.ndarray, curve: FlowCurve) -> None:
    pts = np.asarray(curve.points)
    h, w = rgb.shape[:2]
    for a, b in zip(pts[:-1], pts[1:]):
        r0, c0 = int(round(a[1])), int(round(a[0]))
        r1, c1 = int(round(b[1])), int(round(b[0]))
        rr, cc = raster_line(r0, c0, r1, c1)
        ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        rgb[rr[ok], cc[ok]] = CURVE_LINE_COLOR
    for child in curve.children:
        _draw_curve(rgb, child)


def _mark_points(rgb: np.ndarray, curve: FlowCurve) -> None:
    h, w = rgb.shape[:2]
    for x, y in np.asarray(curve.points):
        r, c = int(round(y)), int(round(x))
        if 0 <= r < h and 0 <= c < w:
            rgb[r, c] = CURVE_POINT_COLOR
    for child in curve.children:
        _mark_points(rgb, child)


def render_curves(curves: list, path, base: np.ndarray | None = None,
                  shape: tuple | None = None) -> None:
    """Overlay flow curves on a base RGB image (or black canvas).

    Control points are stamped as exact single pixels after the line segments,
    so probing the image at a control point always reads the point color.
    """
    if base is not None:
        rgb = base.copy()
    else:
        rgb = np.zeros((*shape, 3), dtype=np.uint8)
    for curve in curves:
        _draw_curve(rgb, curve)
    for curve in curves:
        _mark_points(rgb, curve)
    Image.fromarray(rgb).save(path)
