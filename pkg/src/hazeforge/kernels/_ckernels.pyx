# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_pykernels``.

Loop orders follow the numpy versions so float32 accumulation in col2im
is bit-identical across backends.
"""

import numpy as np
cimport cython
from cython cimport floating


def im2col(floating[:, :, :, ::1] xp, int k, int stride, int out_h, int out_w):
    cdef Py_ssize_t nb = xp.shape[0], nc = xp.shape[1]
    dtype = np.float32 if floating is float else np.float64
    out = np.empty((nb, nc, k, k, out_h, out_w), dtype=dtype)
    cdef floating[:, :, :, :, :, ::1] o = out
    cdef Py_ssize_t b, c, ki, kj, i, j
    with nogil:
        for b in range(nb):
            for c in range(nc):
                for ki in range(k):
                    for kj in range(k):
                        for i in range(out_h):
                            for j in range(out_w):
                                o[b, c, ki, kj, i, j] = xp[b, c, ki + stride * i, kj + stride * j]
    return out


def col2im(floating[:, :, :, :, :, ::1] cols, int hp, int wp, int stride):
    cdef Py_ssize_t nb = cols.shape[0], nc = cols.shape[1], k = cols.shape[2]
    cdef Py_ssize_t out_h = cols.shape[4], out_w = cols.shape[5]
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((nb, nc, hp, wp), dtype=dtype)
    cdef floating[:, :, :, ::1] o = out
    cdef Py_ssize_t b, c, ki, kj, i, j
    with nogil:
        for b in range(nb):
            for c in range(nc):
                for ki in range(k):
                    for kj in range(k):
                        for i in range(out_h):
                            for j in range(out_w):
                                o[b, c, ki + stride * i, kj + stride * j] += cols[b, c, ki, kj, i, j]
    return out


def matting_blocks(double[:, :, ::1] image, double eps, int radius):
    cdef Py_ssize_t h = image.shape[0], w = image.shape[1]
    cdef int size = 2 * radius + 1
    cdef int n = size * size
    cdef Py_ssize_t wh = h - size + 1, ww = w - size + 1
    if wh < 1 or ww < 1:
        raise ValueError("image smaller than one window")
    win_idx_arr = np.empty((wh * ww, n), dtype=np.int64)
    blocks_arr = np.empty((wh * ww, n, n), dtype=np.float64)
    cdef long long[:, ::1] win_idx = win_idx_arr
    cdef double[:, :, ::1] blocks = blocks_arr
    cdef double[:, ::1] cen = np.empty((n, 3), dtype=np.float64)
    cdef double[:, ::1] proj = np.empty((n, 3), dtype=np.float64)
    cdef Py_ssize_t wy, wx, widx, a, bb, dy, dx, p
    cdef double m0, m1, m2, s00, s01, s02, s11, s12, s22, reg, det
    cdef double i00, i01, i02, i11, i12, i22, q, dlt
    cdef double inv_n = 1.0 / n
    with nogil:
        for wy in range(wh):
            for wx in range(ww):
                widx = wy * ww + wx
                m0 = 0.0
                m1 = 0.0
                m2 = 0.0
                p = 0
                for dy in range(size):
                    for dx in range(size):
                        win_idx[widx, p] = (wy + dy) * w + (wx + dx)
                        m0 += image[wy + dy, wx + dx, 0]
                        m1 += image[wy + dy, wx + dx, 1]
                        m2 += image[wy + dy, wx + dx, 2]
                        p += 1
                m0 *= inv_n
                m1 *= inv_n
                m2 *= inv_n
                p = 0
                for dy in range(size):
                    for dx in range(size):
                        cen[p, 0] = image[wy + dy, wx + dx, 0] - m0
                        cen[p, 1] = image[wy + dy, wx + dx, 1] - m1
                        cen[p, 2] = image[wy + dy, wx + dx, 2] - m2
                        p += 1
                s00 = 0.0
                s01 = 0.0
                s02 = 0.0
                s11 = 0.0
                s12 = 0.0
                s22 = 0.0
                for p in range(n):
                    s00 += cen[p, 0] * cen[p, 0]
                    s01 += cen[p, 0] * cen[p, 1]
                    s02 += cen[p, 0] * cen[p, 2]
                    s11 += cen[p, 1] * cen[p, 1]
                    s12 += cen[p, 1] * cen[p, 2]
                    s22 += cen[p, 2] * cen[p, 2]
                reg = eps * inv_n
                s00 = s00 * inv_n + reg
                s01 = s01 * inv_n
                s02 = s02 * inv_n
                s11 = s11 * inv_n + reg
                s12 = s12 * inv_n
                s22 = s22 * inv_n + reg
                # symmetric 3x3 inverse by cofactors
                i00 = s11 * s22 - s12 * s12
                i01 = s02 * s12 - s01 * s22
                i02 = s01 * s12 - s02 * s11
                i11 = s00 * s22 - s02 * s02
                i12 = s01 * s02 - s00 * s12
                i22 = s00 * s11 - s01 * s01
                det = s00 * i00 + s01 * i01 + s02 * i02
                i00 /= det
                i01 /= det
                i02 /= det
                i11 /= det
                i12 /= det
                i22 /= det
                for p in range(n):
                    proj[p, 0] = i00 * cen[p, 0] + i01 * cen[p, 1] + i02 * cen[p, 2]
                    proj[p, 1] = i01 * cen[p, 0] + i11 * cen[p, 1] + i12 * cen[p, 2]
                    proj[p, 2] = i02 * cen[p, 0] + i12 * cen[p, 1] + i22 * cen[p, 2]
                for a in range(n):
                    for bb in range(n):
                        q = proj[a, 0] * cen[bb, 0] + proj[a, 1] * cen[bb, 1] + proj[a, 2] * cen[bb, 2]
                        dlt = 1.0 if a == bb else 0.0
                        blocks[widx, a, bb] = dlt - (1.0 + q) * inv_n
    return win_idx_arr, blocks_arr
