# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled direct-loop kernels.

Accumulation is in double and the reduction order is (channel, depth tap,
row tap, column tap), identical to the numpy fallback in ``_pykernels``.
"""
import numpy as np

cimport numpy as cnp

cnp.import_array()


def conv3d(const float[:, :, :, :, ::1] x, const float[:, :, :, :, ::1] w,
           const float[::1] bias, stride, pad):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], D = x.shape[2], H = x.shape[3], W = x.shape[4]
    cdef Py_ssize_t O = w.shape[0], KD = w.shape[2], KH = w.shape[3], KW = w.shape[4]
    cdef Py_ssize_t sd = stride[0], sh = stride[1], sw = stride[2]
    cdef Py_ssize_t pd = pad[0], ph = pad[1], pw = pad[2]
    cdef Py_ssize_t OD = (D + 2 * pd - KD) // sd + 1
    cdef Py_ssize_t OH = (H + 2 * ph - KH) // sh + 1
    cdef Py_ssize_t OW = (W + 2 * pw - KW) // sw + 1
    out = np.empty((B, O, OD, OH, OW), dtype=np.float32)
    cdef float[:, :, :, :, ::1] y = out
    cdef Py_ssize_t b, o, od, oh, ow, c, i, j, k, di, hj, wk
    cdef double acc
    with nogil:
        for b in range(B):
            for o in range(O):
                for od in range(OD):
                    for oh in range(OH):
                        for ow in range(OW):
                            acc = 0.0
                            for c in range(C):
                                for i in range(KD):
                                    di = od * sd - pd + i
                                    if di < 0 or di >= D:
                                        continue
                                    for j in range(KH):
                                        hj = oh * sh - ph + j
                                        if hj < 0 or hj >= H:
                                            continue
                                        for k in range(KW):
                                            wk = ow * sw - pw + k
                                            if wk < 0 or wk >= W:
                                                continue
                                            acc = acc + <double>x[b, c, di, hj, wk] * <double>w[o, c, i, j, k]
                            y[b, o, od, oh, ow] = <float>(acc + <double>bias[o])
    return out


def conv2d(const float[:, :, :, ::1] x, const float[:, :, :, ::1] w,
           const float[::1] bias, stride, pad):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0], KH = w.shape[2], KW = w.shape[3]
    cdef Py_ssize_t sh = stride[0], sw = stride[1]
    cdef Py_ssize_t ph = pad[0], pw = pad[1]
    cdef Py_ssize_t OH = (H + 2 * ph - KH) // sh + 1
    cdef Py_ssize_t OW = (W + 2 * pw - KW) // sw + 1
    out = np.empty((B, O, OH, OW), dtype=np.float32)
    cdef float[:, :, :, ::1] y = out
    cdef Py_ssize_t b, o, oh, ow, c, j, k, hj, wk
    cdef double acc
    with nogil:
        for b in range(B):
            for o in range(O):
                for oh in range(OH):
                    for ow in range(OW):
                        acc = 0.0
                        for c in range(C):
                            for j in range(KH):
                                hj = oh * sh - ph + j
                                if hj < 0 or hj >= H:
                                    continue
                                for k in range(KW):
                                    wk = ow * sw - pw + k
                                    if wk < 0 or wk >= W:
                                        continue
                                    acc = acc + <double>x[b, c, hj, wk] * <double>w[o, c, j, k]
                        y[b, o, oh, ow] = <float>(acc + <double>bias[o])
    return out


cdef inline double _cross(double ax, double ay, double bx, double by, double px, double py) nogil:
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def convex_intersection_area(const double[:, ::1] subject, const double[:, ::1] clip):
    """Area of the intersection of two counterclockwise convex polygons.

    Sutherland-Hodgman with a strict inside test, so touching edges give
    zero area. Polygons are limited to 16 vertices in and 32 out.
    """
    cdef double buf_a[64]
    cdef double buf_b[64]
    cdef double *src = buf_a
    cdef double *dst = buf_b
    cdef double *tmp
    cdef Py_ssize_t n = subject.shape[0], m = clip.shape[0]
    cdef Py_ssize_t i, e, cnt, out_n
    cdef double ax, ay, bx, by, sx, sy, ex, ey, cs, ce, t, area
    if n > 16 or m > 16:
        raise ValueError("polygons are limited to 16 vertices")
    for i in range(n):
        src[2 * i] = subject[i, 0]
        src[2 * i + 1] = subject[i, 1]
    cnt = n
    for e in range(m):
        if cnt == 0:
            break
        ax = clip[e, 0]
        ay = clip[e, 1]
        bx = clip[(e + 1) % m, 0]
        by = clip[(e + 1) % m, 1]
        out_n = 0
        sx = src[2 * (cnt - 1)]
        sy = src[2 * (cnt - 1) + 1]
        cs = _cross(ax, ay, bx, by, sx, sy)
        for i in range(cnt):
            ex = src[2 * i]
            ey = src[2 * i + 1]
            ce = _cross(ax, ay, bx, by, ex, ey)
            if ce > 0.0:
                if cs <= 0.0 and cs != ce:
                    t = cs / (cs - ce)
                    if out_n < 32:
                        dst[2 * out_n] = sx + t * (ex - sx)
                        dst[2 * out_n + 1] = sy + t * (ey - sy)
                        out_n += 1
                if out_n < 32:
                    dst[2 * out_n] = ex
                    dst[2 * out_n + 1] = ey
                    out_n += 1
            elif cs > 0.0:
                t = cs / (cs - ce)
                if out_n < 32:
                    dst[2 * out_n] = sx + t * (ex - sx)
                    dst[2 * out_n + 1] = sy + t * (ey - sy)
                    out_n += 1
            sx = ex
            sy = ey
            cs = ce
        tmp = src
        src = dst
        dst = tmp
        cnt = out_n
    if cnt < 3:
        return 0.0
    area = 0.0
    for i in range(cnt):
        e = (i + 1) % cnt
        area += src[2 * i] * src[2 * e + 1] - src[2 * e] * src[2 * i + 1]
    area = 0.5 * area
    if area < 1e-12:
        return 0.0
    return area
