"""Pure-numpy fallback for the truncated thermal-diffusion sweep.

Vectorized over one (dx, dy) source offset at a time; the spatial decay is a
scalar per offset, so each pass is a handful of elementwise array ops.
"""
import numpy as np


def diffuse_sweep(gate, source, k_p, k_f, theta_c, radius, num_threads=1):
    """Same contract as the compiled kernel; ``num_threads`` is ignored."""
    gate = np.asarray(gate, dtype=np.float64)
    source = np.asarray(source, dtype=np.float64)
    h, w = gate.shape[:2]
    out = np.zeros((h, w, 2))
    norm = np.hypot(gate[..., 0], gate[..., 1])
    r2 = radius * radius
    R = int(radius)
    for dy in range(-min(R, h - 1), min(R, h - 1) + 1):
        for dx in range(-min(R, w - 1), min(R, w - 1) + 1):
            if dx == 0 and dy == 0:
                continue
            d2 = dx * dx + dy * dy
            if d2 > r2:
                continue
            # target slice P and source slice Q with P - Q = (dx, dy)
            tp = (
                slice(max(0, dy), h + min(0, dy)),
                slice(max(0, dx), w + min(0, dx)),
            )
            sq = (
                slice(max(0, -dy), h + min(0, -dy)),
                slice(max(0, -dx), w + min(0, -dx)),
            )
            fp, fq = gate[tp], gate[sq]
            dot = fp[..., 0] * fq[..., 0] + fp[..., 1] * fq[..., 1]
            ok = (
                (norm[tp] > 0.0)
                & (norm[sq] > 0.0)
                & (dot >= theta_c * norm[tp] * norm[sq])
            )
            force = np.abs(fq[..., 0] * dx + fq[..., 1] * dy)
            wgt = np.where(ok, np.exp(-k_p * d2 - k_f * force), 0.0)
            out[tp] += source[sq] * wgt[..., None]
    return out
