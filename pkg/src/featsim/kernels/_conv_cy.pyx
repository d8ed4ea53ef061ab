# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: drop-in twins of kernels.numpy_backend.

Stride-1 cross-correlation (forward + input/kernel gradients) and 2x2 max
pooling. The 3x3/pad-1 paths copy each input plane into a zero-padded scratch
buffer so every inner loop is a branch-free unit-stride row sweep the C
compiler can vectorize; 1x1/pad-0 collapses to flat whole-plane sweeps. No
fast-math, so results stay IEEE-deterministic. The kernel-gradient reduction
accumulates each tap into a row-length buffer with elementwise multiply-adds
and collapses it left-to-right at the end; that fixes a summation order
different from a naive scalar loop but deterministic for a given build.
"""

from libc.stdlib cimport free, malloc
from libc.string cimport memset

import numpy as np

ctypedef fused real_t:
    float
    double


cdef inline object _empty(real_t sample, tuple shape):
    if real_t is float:
        return np.empty(shape, dtype=np.float32)
    else:
        return np.empty(shape, dtype=np.float64)


cdef inline object _zeros(real_t sample, tuple shape):
    if real_t is float:
        return np.zeros(shape, dtype=np.float32)
    else:
        return np.zeros(shape, dtype=np.float64)


cdef real_t* _padded_copy(real_t* x, Py_ssize_t cin, Py_ssize_t h, Py_ssize_t wd) except NULL:
    """Copy (cin,h,wd) into a zero-padded (cin,h+2,wd+2) scratch buffer."""
    cdef Py_ssize_t ph = h + 2, pw = wd + 2
    cdef real_t* xp = <real_t*> malloc(cin * ph * pw * sizeof(real_t))
    if xp == NULL:
        raise MemoryError()
    memset(xp, 0, cin * ph * pw * sizeof(real_t))
    cdef Py_ssize_t ci, i, j
    cdef real_t* src
    cdef real_t* dst
    for ci in range(cin):
        for i in range(h):
            src = x + (ci * h + i) * wd
            dst = xp + (ci * ph + i + 1) * pw + 1
            for j in range(wd):
                dst[j] = src[j]
    return xp


def conv2d_forward(real_t[:, :, ::1] x, real_t[:, :, :, ::1] w, real_t[::1] b, int pad):
    """Cross-correlate x (Cin,H,W) with w (Cout,Cin,kh,kw) plus bias b (Cout,)."""
    cdef Py_ssize_t cin = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef Py_ssize_t cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t oh = h + 2 * pad - kh + 1
    cdef Py_ssize_t ow = wd + 2 * pad - kw + 1
    out_arr = _empty(<real_t> 0, (cout, oh, ow))
    cdef real_t[:, :, ::1] out = out_arr
    cdef real_t* yptr = &out[0, 0, 0]
    cdef real_t* xptr = &x[0, 0, 0]
    cdef real_t* wptr = &w[0, 0, 0, 0]
    cdef real_t* xp = NULL
    cdef real_t* ybase
    cdef real_t* yrow
    cdef real_t* xbase
    cdef real_t* xrow
    cdef real_t* wbase
    cdef Py_ssize_t co, ci, ki, kj, i, j, n, pw, xi, sj, j0, j1
    cdef real_t wv, bv

    for co in range(cout):
        bv = b[co]
        ybase = yptr + co * oh * ow
        n = oh * ow
        for j in range(n):
            ybase[j] = bv

    if kh == 3 and kw == 3 and pad == 1:
        pw = wd + 2
        xp = _padded_copy(xptr, cin, h, wd)
        try:
            for co in range(cout):
                ybase = yptr + co * oh * ow
                for ci in range(cin):
                    xbase = xp + ci * (h + 2) * pw
                    wbase = wptr + (co * cin + ci) * 9
                    for ki in range(3):
                        for kj in range(3):
                            wv = wbase[ki * 3 + kj]
                            for i in range(oh):
                                yrow = ybase + i * ow
                                xrow = xbase + (i + ki) * pw + kj
                                for j in range(ow):
                                    yrow[j] += wv * xrow[j]
        finally:
            free(xp)
    elif kh == 1 and kw == 1 and pad == 0:
        n = h * wd
        for co in range(cout):
            ybase = yptr + co * n
            for ci in range(cin):
                wv = wptr[co * cin + ci]
                xbase = xptr + ci * n
                for j in range(n):
                    ybase[j] += wv * xbase[j]
    else:
        # Generic geometry, row sweeps clipped to the valid window.
        for co in range(cout):
            ybase = yptr + co * oh * ow
            for ci in range(cin):
                xbase = xptr + ci * h * wd
                wbase = wptr + (co * cin + ci) * kh * kw
                for i in range(oh):
                    yrow = ybase + i * ow
                    for ki in range(kh):
                        xi = i + ki - pad
                        if xi < 0 or xi >= h:
                            continue
                        xrow = xbase + xi * wd
                        for kj in range(kw):
                            wv = wbase[ki * kw + kj]
                            sj = kj - pad
                            j0 = -sj if sj < 0 else 0
                            j1 = wd - sj if wd - sj < ow else ow
                            for j in range(j0, j1):
                                yrow[j] += wv * xrow[j + sj]
    return out_arr


def conv2d_backward(real_t[:, :, ::1] gy, real_t[:, :, ::1] x,
                    real_t[:, :, :, ::1] w, int pad, bint need_gx, bint need_gw):
    """Gradients of conv2d_forward w.r.t. input and kernel ((gx, gw), None when skipped)."""
    cdef Py_ssize_t cin = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef Py_ssize_t cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t oh = gy.shape[1], ow = gy.shape[2]
    cdef real_t* gyptr = &gy[0, 0, 0]
    cdef real_t* xptr = &x[0, 0, 0]
    cdef real_t* wptr = &w[0, 0, 0, 0]
    cdef real_t* gybase
    cdef real_t* gyrow
    cdef real_t* row
    cdef real_t* base
    cdef real_t* xp = NULL
    cdef real_t* gp = NULL
    cdef real_t* acc = NULL
    cdef Py_ssize_t co, ci, ki, kj, i, j, jj, n, pw
    cdef real_t wv, a0

    cdef bint k3 = kh == 3 and kw == 3 and pad == 1
    cdef bint k1 = kh == 1 and kw == 1 and pad == 0
    cdef Py_ssize_t xi, sj, j0, j1, i0, i1

    gx_arr = None
    gw_arr = None
    cdef real_t[:, :, ::1] gx
    cdef real_t[:, :, :, ::1] gw
    cdef real_t* gxptr
    cdef real_t* gwptr
    pw = wd + 2

    if need_gx:
        gx_arr = _zeros(<real_t> 0, (cin, h, wd))
        gx = gx_arr
        gxptr = &gx[0, 0, 0]
        if k3:
            # Scatter into a padded scratch so the row sweep needs no bounds
            # logic; the interior is copied back (halo rows/cols are dropped,
            # they correspond to zero padding).
            gp = <real_t*> malloc(cin * (h + 2) * pw * sizeof(real_t))
            if gp == NULL:
                raise MemoryError()
            memset(gp, 0, cin * (h + 2) * pw * sizeof(real_t))
            try:
                for co in range(cout):
                    gybase = gyptr + co * oh * ow
                    for ci in range(cin):
                        base = gp + ci * (h + 2) * pw
                        for ki in range(3):
                            for kj in range(3):
                                wv = wptr[(co * cin + ci) * 9 + ki * 3 + kj]
                                for i in range(oh):
                                    gyrow = gybase + i * ow
                                    row = base + (i + ki) * pw + kj
                                    for j in range(ow):
                                        row[j] += wv * gyrow[j]
                for ci in range(cin):
                    for i in range(h):
                        row = gp + (ci * (h + 2) + i + 1) * pw + 1
                        base = gxptr + (ci * h + i) * wd
                        for j in range(wd):
                            base[j] = row[j]
            finally:
                free(gp)
        elif k1:
            n = h * wd
            for co in range(cout):
                gybase = gyptr + co * n
                for ci in range(cin):
                    wv = wptr[co * cin + ci]
                    base = gxptr + ci * n
                    for j in range(n):
                        base[j] += wv * gybase[j]
        else:
            for co in range(cout):
                gybase = gyptr + co * oh * ow
                for ci in range(cin):
                    base = gxptr + ci * h * wd
                    for i in range(oh):
                        gyrow = gybase + i * ow
                        for ki in range(kh):
                            xi = i + ki - pad
                            if xi < 0 or xi >= h:
                                continue
                            row = base + xi * wd
                            for kj in range(kw):
                                wv = wptr[((co * cin + ci) * kh + ki) * kw + kj]
                                sj = kj - pad
                                j0 = -sj if sj < 0 else 0
                                j1 = wd - sj if wd - sj < ow else ow
                                for j in range(j0, j1):
                                    row[j + sj] += wv * gyrow[j]

    if need_gw:
        gw_arr = _zeros(<real_t> 0, (cout, cin, kh, kw))
        gw = gw_arr
        gwptr = &gw[0, 0, 0, 0]
        acc = <real_t*> malloc((64 if ow < 64 else ow) * sizeof(real_t))
        if acc == NULL:
            raise MemoryError()
        try:
            if k3:
                xp = _padded_copy(xptr, cin, h, wd)
                try:
                    for co in range(cout):
                        gybase = gyptr + co * oh * ow
                        for ci in range(cin):
                            base = xp + ci * (h + 2) * pw
                            for ki in range(3):
                                for kj in range(3):
                                    for j in range(ow):
                                        acc[j] = 0
                                    for i in range(oh):
                                        gyrow = gybase + i * ow
                                        row = base + (i + ki) * pw + kj
                                        for j in range(ow):
                                            acc[j] += gyrow[j] * row[j]
                                    a0 = 0
                                    for j in range(ow):
                                        a0 = a0 + acc[j]
                                    gwptr[(co * cin + ci) * 9 + ki * 3 + kj] = a0
                finally:
                    free(xp)
            elif k1:
                # Flat dot, accumulated through 64 lanes in chunk order.
                n = h * wd
                for co in range(cout):
                    gybase = gyptr + co * n
                    for ci in range(cin):
                        base = xptr + ci * n
                        for j in range(64):
                            acc[j] = 0
                        jj = 0
                        while jj + 64 <= n:
                            for j in range(64):
                                acc[j] += gybase[jj + j] * base[jj + j]
                            jj += 64
                        j = 0
                        while jj < n:
                            acc[j] += gybase[jj] * base[jj]
                            jj += 1
                            j += 1
                        a0 = 0
                        for j in range(64):
                            a0 = a0 + acc[j]
                        gwptr[co * cin + ci] = a0
            else:
                for co in range(cout):
                    gybase = gyptr + co * oh * ow
                    for ci in range(cin):
                        base = xptr + ci * h * wd
                        for ki in range(kh):
                            i0 = pad - ki if pad - ki > 0 else 0
                            i1 = h + pad - ki if h + pad - ki < oh else oh
                            for kj in range(kw):
                                sj = kj - pad
                                j0 = -sj if sj < 0 else 0
                                j1 = wd - sj if wd - sj < ow else ow
                                for j in range(j0, j1):
                                    acc[j] = 0
                                for i in range(i0, i1):
                                    gyrow = gybase + i * ow
                                    row = base + (i + ki - pad) * wd + sj
                                    for j in range(j0, j1):
                                        acc[j] += gyrow[j] * row[j]
                                a0 = 0
                                for j in range(j0, j1):
                                    a0 = a0 + acc[j]
                                gwptr[((co * cin + ci) * kh + ki) * kw + kj] = a0
        finally:
            free(acc)

    return gx_arr, gw_arr


def maxpool2_forward(real_t[:, :, ::1] x):
    """2x2/stride-2 max pool. Returns (out, idx); ties go to the first window position."""
    cdef Py_ssize_t c = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t h2 = h // 2, w2 = w // 2
    out_arr = _empty(<real_t> 0, (c, h2, w2))
    idx_arr = np.empty((c, h2, w2), dtype=np.uint8)
    cdef real_t[:, :, ::1] out = out_arr
    cdef unsigned char[:, :, ::1] idx = idx_arr
    cdef Py_ssize_t ci, i, j
    cdef real_t v0, v1, v2, v3, best
    cdef unsigned char k

    for ci in range(c):
        for i in range(h2):
            for j in range(w2):
                v0 = x[ci, 2 * i, 2 * j]
                v1 = x[ci, 2 * i, 2 * j + 1]
                v2 = x[ci, 2 * i + 1, 2 * j]
                v3 = x[ci, 2 * i + 1, 2 * j + 1]
                best = v0
                k = 0
                if v1 > best:
                    best = v1
                    k = 1
                if v2 > best:
                    best = v2
                    k = 2
                if v3 > best:
                    best = v3
                    k = 3
                out[ci, i, j] = best
                idx[ci, i, j] = k
    return out_arr, idx_arr


def maxpool2_backward(real_t[:, :, ::1] gy, unsigned char[:, :, ::1] idx):
    """Route each pooled gradient back to its window's argmax position."""
    cdef Py_ssize_t c = gy.shape[0], h2 = gy.shape[1], w2 = gy.shape[2]
    gx_arr = _zeros(<real_t> 0, (c, h2 * 2, w2 * 2))
    cdef real_t[:, :, ::1] gx = gx_arr
    cdef Py_ssize_t ci, i, j
    cdef unsigned char k

    for ci in range(c):
        for i in range(h2):
            for j in range(w2):
                k = idx[ci, i, j]
                gx[ci, 2 * i + (k >> 1), 2 * j + (k & 1)] = gy[ci, i, j]
    return gx_arr
