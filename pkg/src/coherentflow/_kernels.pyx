# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled sweep for the truncated thermal-diffusion sum.

Per target pixel the contributions are accumulated in a fixed raster order,
so results are bitwise identical for any thread count.
"""
from cython.parallel cimport prange
from libc.math cimport exp, fabs, sqrt

import numpy as np


def diffuse_sweep(const double[:, :, ::1] gate, const double[:, :, ::1] source,
                  double k_p, double k_f, double theta_c, double radius,
                  int num_threads=1):
    """Sum gated, distance- and force-decayed source vectors into each pixel.

    Returns the raw (h, w, 2) accumulation without the 1/(w*h) normalization.
    ``gate`` carries the motion vectors used in the coherence test and the
    force term; ``source`` carries the vectors being diffused.
    """
    cdef Py_ssize_t h = gate.shape[0]
    cdef Py_ssize_t w = gate.shape[1]
    cdef Py_ssize_t R = <Py_ssize_t>radius
    cdef double r2 = radius * radius
    cdef int nt = num_threads if num_threads > 0 else 1

    out_arr = np.zeros((h, w, 2), dtype=np.float64)
    norm_arr = np.empty((h, w), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef double[:, ::1] nrm = norm_arr

    cdef Py_ssize_t py, px, qy, qx, y0, y1, x0, x1
    cdef double fpx, fpy, npv, nqv, dx, dy, d2, dot, force, wgt, ex, ey

    for py in prange(h, nogil=True, num_threads=nt, schedule='static'):
        for px in range(w):
            nrm[py, px] = sqrt(gate[py, px, 0] * gate[py, px, 0]
                               + gate[py, px, 1] * gate[py, px, 1])

    for py in prange(h, nogil=True, num_threads=nt, schedule='static'):
        for px in range(w):
            fpx = gate[py, px, 0]
            fpy = gate[py, px, 1]
            npv = nrm[py, px]
            if npv == 0.0:
                continue
            ex = 0.0
            ey = 0.0
            y0 = py - R if py > R else 0
            y1 = py + R if py + R < h - 1 else h - 1
            x0 = px - R if px > R else 0
            x1 = px + R if px + R < w - 1 else w - 1
            for qy in range(y0, y1 + 1):
                for qx in range(x0, x1 + 1):
                    if qy == py and qx == px:
                        continue
                    dx = <double>(px - qx)
                    dy = <double>(py - qy)
                    d2 = dx * dx + dy * dy
                    if d2 > r2:
                        continue
                    nqv = nrm[qy, qx]
                    if nqv == 0.0:
                        continue
                    dot = fpx * gate[qy, qx, 0] + fpy * gate[qy, qx, 1]
                    if dot < theta_c * npv * nqv:
                        continue
                    force = fabs(gate[qy, qx, 0] * dx + gate[qy, qx, 1] * dy)
                    wgt = exp(-k_p * d2 - k_f * force)
                    ex = ex + source[qy, qx, 0] * wgt
                    ey = ey + source[qy, qx, 1] * wgt
            out[py, px, 0] = ex
            out[py, px, 1] = ey
    return out_arr
