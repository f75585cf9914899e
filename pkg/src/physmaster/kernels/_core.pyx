# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the pixelwise hot loops (chamfer nearest-neighbor,
rasterization). Must stay bit-identical to kernels/reference.py."""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()


def nearest_dists(cnp.float64_t[:, ::1] points, cnp.float64_t[:, ::1] targets):
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t m = targets.shape[0]
    if m == 0:
        raise ValueError("targets must be non-empty")
    out_arr = np.empty(n, dtype=np.float64)
    cdef cnp.float64_t[::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double dx, dy, d2, best
    for i in range(n):
        best = (points[i, 0] - targets[0, 0]) * (points[i, 0] - targets[0, 0]) + \
               (points[i, 1] - targets[0, 1]) * (points[i, 1] - targets[0, 1])
        for j in range(1, m):
            dx = points[i, 0] - targets[j, 0]
            dy = points[i, 1] - targets[j, 1]
            d2 = dx * dx + dy * dy
            if d2 < best:
                best = d2
        out[i] = sqrt(best)
    return out_arr


def rasterize_circle(int height, int width, double cx, double cy, double r):
    out_arr = np.empty((height, width), dtype=np.bool_)
    cdef cnp.uint8_t[:, ::1] out = out_arr.view(np.uint8)
    cdef Py_ssize_t row, col
    cdef double x, y, dx, dy, r2 = r * r
    for row in range(height):
        y = 1.0 - (row + 0.5) / height
        dy = y - cy
        for col in range(width):
            x = (col + 0.5) / width
            dx = x - cx
            out[row, col] = dx * dx + dy * dy <= r2
    return out_arr


def rasterize_box(int height, int width, double cx, double cy, double half):
    out_arr = np.empty((height, width), dtype=np.bool_)
    cdef cnp.uint8_t[:, ::1] out = out_arr.view(np.uint8)
    cdef Py_ssize_t row, col
    cdef double x, y
    for row in range(height):
        y = 1.0 - (row + 0.5) / height
        for col in range(width):
            x = (col + 0.5) / width
            out[row, col] = fabs(x - cx) <= half and fabs(y - cy) <= half
    return out_arr
