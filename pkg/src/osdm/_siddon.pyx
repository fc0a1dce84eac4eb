# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled Siddon traversal: incremental pixel stepping per ray."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, INFINITY

cnp.import_array()


cdef inline double _axis_bounds(double o, double d, double lo, double hi, double* tmax):
    cdef double a0, a1
    if d == 0.0:
        if lo <= o < hi:
            tmax[0] = INFINITY
            return -INFINITY
        tmax[0] = -INFINITY
        return INFINITY
    a0 = (lo - o) / d
    a1 = (hi - o) / d
    if a0 < a1:
        tmax[0] = a1
        return a0
    tmax[0] = a0
    return a1


def siddon_system(origins, directions, int width, int height, double pixel_size):
    """Sparse system-matrix triplets ``(ray_index, pixel_index, length)``.

    Same contract as :func:`osdm._siddon_py.siddon_system`.
    """
    cdef double[:, ::1] o = np.ascontiguousarray(origins, dtype=np.float64)
    cdef double[:, ::1] d = np.ascontiguousarray(directions, dtype=np.float64)
    cdef Py_ssize_t n = o.shape[0]
    cdef Py_ssize_t cap = n * (width + height + 2)
    out_r_arr = np.empty(cap, dtype=np.int64)
    out_p_arr = np.empty(cap, dtype=np.int64)
    out_v_arr = np.empty(cap, dtype=np.float64)
    cdef long long[::1] out_r = out_r_arr
    cdef long long[::1] out_p = out_p_arr
    cdef double[::1] out_v = out_v_arr

    cdef double s = pixel_size
    cdef double xmin = -width * s / 2.0
    cdef double ymin = -height * s / 2.0
    cdef double xmax = xmin + width * s
    cdef double ymax = ymin + height * s
    cdef Py_ssize_t i, m = 0
    cdef double ox, oy, dx, dy, txmin, txmax, tymin, tymax, t_in, t_out, a, an, anx, any_
    cdef long kx, ky, col, iy

    for i in range(n):
        ox = o[i, 0]; oy = o[i, 1]; dx = d[i, 0]; dy = d[i, 1]
        txmin = _axis_bounds(ox, dx, xmin, xmax, &txmax)
        tymin = _axis_bounds(oy, dy, ymin, ymax, &tymax)
        t_in = txmin if txmin > tymin else tymin
        if t_in < 0.0:
            t_in = 0.0
        t_out = txmax if txmax < tymax else tymax
        if not t_out > t_in:
            continue
        a = t_in

        if dx > 0.0:
            kx = <long>floor((ox + a * dx - xmin) / s) + 1
            if kx < 1: kx = 1
            if kx > width: kx = width
            while kx < width and (xmin + kx * s - ox) / dx <= a:
                kx += 1
            while kx > 1 and (xmin + (kx - 1) * s - ox) / dx > a:
                kx -= 1
            col = kx - 1
            anx = (xmin + kx * s - ox) / dx
        elif dx < 0.0:
            kx = <long>floor((ox + a * dx - xmin) / s)
            if kx < 0: kx = 0
            if kx > width - 1: kx = width - 1
            while kx > 0 and (xmin + kx * s - ox) / dx <= a:
                kx -= 1
            while kx < width - 1 and (xmin + (kx + 1) * s - ox) / dx > a:
                kx += 1
            col = kx
            anx = (xmin + kx * s - ox) / dx
        else:
            col = <long>floor((ox - xmin) / s)
            anx = INFINITY

        if dy > 0.0:
            ky = <long>floor((oy + a * dy - ymin) / s) + 1
            if ky < 1: ky = 1
            if ky > height: ky = height
            while ky < height and (ymin + ky * s - oy) / dy <= a:
                ky += 1
            while ky > 1 and (ymin + (ky - 1) * s - oy) / dy > a:
                ky -= 1
            iy = ky - 1
            any_ = (ymin + ky * s - oy) / dy
        elif dy < 0.0:
            ky = <long>floor((oy + a * dy - ymin) / s)
            if ky < 0: ky = 0
            if ky > height - 1: ky = height - 1
            while ky > 0 and (ymin + ky * s - oy) / dy <= a:
                ky -= 1
            while ky < height - 1 and (ymin + (ky + 1) * s - oy) / dy > a:
                ky += 1
            iy = ky
            any_ = (ymin + ky * s - oy) / dy
        else:
            iy = <long>floor((oy - ymin) / s)
            any_ = INFINITY

        while a < t_out:
            an = t_out
            if anx < an: an = anx
            if any_ < an: an = any_
            if an > a and 0 <= col < width and 0 <= iy < height:
                out_r[m] = i
                out_p[m] = (height - 1 - iy) * width + col
                out_v[m] = an - a
                m += 1
            if anx <= an:
                if dx > 0.0:
                    kx += 1
                    col += 1
                    anx = (xmin + kx * s - ox) / dx if kx <= width else INFINITY
                else:
                    kx -= 1
                    col -= 1
                    anx = (xmin + kx * s - ox) / dx if kx >= 0 else INFINITY
            if any_ <= an:
                if dy > 0.0:
                    ky += 1
                    iy += 1
                    any_ = (ymin + ky * s - oy) / dy if ky <= height else INFINITY
                else:
                    ky -= 1
                    iy -= 1
                    any_ = (ymin + ky * s - oy) / dy if ky >= 0 else INFINITY
            a = an

    return out_r_arr[:m].copy(), out_p_arr[:m].copy(), out_v_arr[:m].copy()
