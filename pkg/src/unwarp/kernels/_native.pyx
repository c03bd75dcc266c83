# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; must stay bit-compatible with kernels/reference.py."""

import numpy as np

from libc.math cimport atan2, cos, fabs, floor, sin

cdef double SNAP_EPS = 1e-9
cdef double PI = 3.141592653589793
cdef double TWO_PI = 6.283185307179586


cdef inline double _snap1(double p) noexcept nogil:
    cdef double r = floor(p + 0.5)
    # match numpy rint (ties to even)
    if p - floor(p) == 0.5 and (<long long> r) % 2 != 0:
        r -= 1.0
    if fabs(p - r) < SNAP_EPS:
        return r
    return p


def sample_image(const double[:, :, ::1] img, const double[::1] px, const double[::1] py,
                 const double[::1] fill):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1], c = img.shape[2]
    cdef Py_ssize_t n = px.shape[0]
    out_arr = np.empty((n, c), dtype=np.float64)
    oob_arr = np.zeros(n, dtype=np.uint8)
    cdef double[:, ::1] out = out_arr
    cdef unsigned char[::1] oob = oob_arr
    cdef Py_ssize_t i, k, ix0, iy0, ix1, iy1
    cdef double x, y, cx, cy, fx, fy, w00, w01, w10, w11

    with nogil:
        for i in range(n):
            x = _snap1(px[i])
            y = _snap1(py[i])
            if x < 0.0 or x > w - 1.0 or y < 0.0 or y > h - 1.0:
                oob[i] = 1
                for k in range(c):
                    out[i, k] = fill[k]
                continue
            cx = x
            cy = y
            ix0 = <Py_ssize_t> floor(cx)
            iy0 = <Py_ssize_t> floor(cy)
            fx = cx - floor(cx)
            fy = cy - floor(cy)
            ix1 = ix0 + 1
            if ix1 > w - 1:
                ix1 = w - 1
            iy1 = iy0 + 1
            if iy1 > h - 1:
                iy1 = h - 1
            w00 = (1.0 - fy) * (1.0 - fx)
            w01 = (1.0 - fy) * fx
            w10 = fy * (1.0 - fx)
            w11 = fy * fx
            for k in range(c):
                out[i, k] = (img[iy0, ix0, k] * w00 + img[iy0, ix1, k] * w01) + (
                    img[iy1, ix0, k] * w10 + img[iy1, ix1, k] * w11
                )
    return out_arr, oob_arr


def sample_field(const double[:, :, ::1] field, const double[::1] px, const double[::1] py):
    cdef Py_ssize_t h = field.shape[0], w = field.shape[1]
    cdef Py_ssize_t n = px.shape[0]
    out_arr = np.empty((n, 2), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, k, ix0, iy0, ix1, iy1
    cdef double cx, cy, fx, fy, w00, w01, w10, w11

    with nogil:
        for i in range(n):
            cx = px[i]
            if cx < 0.0:
                cx = 0.0
            elif cx > w - 1.0:
                cx = w - 1.0
            cy = py[i]
            if cy < 0.0:
                cy = 0.0
            elif cy > h - 1.0:
                cy = h - 1.0
            cx = _snap1(cx)
            cy = _snap1(cy)
            ix0 = <Py_ssize_t> floor(cx)
            iy0 = <Py_ssize_t> floor(cy)
            fx = cx - floor(cx)
            fy = cy - floor(cy)
            ix1 = ix0 + 1
            if ix1 > w - 1:
                ix1 = w - 1
            iy1 = iy0 + 1
            if iy1 > h - 1:
                iy1 = h - 1
            w00 = (1.0 - fy) * (1.0 - fx)
            w01 = (1.0 - fy) * fx
            w10 = fy * (1.0 - fx)
            w11 = fy * fx
            for k in range(2):
                out[i, k] = (field[iy0, ix0, k] * w00 + field[iy0, ix1, k] * w01) + (
                    field[iy1, ix0, k] * w10 + field[iy1, ix1, k] * w11
                )
    return out_arr


def grow_regions(const double[:, ::1] angle, const double[:, ::1] mag, const Py_ssize_t[::1] order,
                 double mag_min, double tol):
    cdef Py_ssize_t h = angle.shape[0], w = angle.shape[1]
    cdef Py_ssize_t n_seeds = order.shape[0]
    labels_arr = np.zeros(h * w, dtype=np.int32)
    queue_arr = np.empty(h * w, dtype=np.intp)
    cdef int[::1] labels = labels_arr
    cdef Py_ssize_t[::1] queue = queue_arr
    cdef const double[::1] ang = np.ascontiguousarray(angle).ravel()
    cdef const double[::1] mg = np.ascontiguousarray(mag).ravel()
    cdef int region = 0
    cdef Py_ssize_t s, head, tail, idx, seed
    cdef Py_ssize_t x, y, nx, ny, nidx
    cdef int dy, dx
    cdef double sx, sy, reg_ang, d

    with nogil:
        for s in range(n_seeds):
            seed = <Py_ssize_t> order[s]
            if labels[seed] != 0 or mg[seed] < mag_min:
                continue
            region += 1
            labels[seed] = region
            sx = cos(ang[seed])
            sy = sin(ang[seed])
            queue[0] = seed
            head = 0
            tail = 1
            while head < tail:
                idx = <Py_ssize_t> queue[head]
                head += 1
                y = idx // w
                x = idx - y * w
                for dy in range(-1, 2):
                    ny = y + dy
                    if ny < 0 or ny >= h:
                        continue
                    for dx in range(-1, 2):
                        if dy == 0 and dx == 0:
                            continue
                        nx = x + dx
                        if nx < 0 or nx >= w:
                            continue
                        nidx = ny * w + nx
                        if labels[nidx] != 0 or mg[nidx] < mag_min:
                            continue
                        reg_ang = atan2(sy, sx)
                        d = ang[nidx] - reg_ang
                        while d > PI:
                            d -= TWO_PI
                        while d <= -PI:
                            d += TWO_PI
                        if fabs(d) <= tol:
                            labels[nidx] = region
                            sx += cos(ang[nidx])
                            sy += sin(ang[nidx])
                            queue[tail] = nidx
                            tail += 1
    return labels_arr.reshape(h, w), region
