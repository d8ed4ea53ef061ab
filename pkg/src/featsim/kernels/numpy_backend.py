"""Pure-numpy implementations of the hot kernels.

Fallback twin of the compiled extension: same functions, same signatures,
same tie-breaking rules. Convolution goes through im2col so the inner work
lands in BLAS; pooling uses a window-axis reshape.
"""

import numpy as np


def _im2col(x, kh, kw, pad):
    # (Cin,H,W) -> (Cin*kh*kw, OH*OW) for a stride-1 convolution
    cin, h, w = x.shape
    oh = h + 2 * pad - kh + 1
    ow = w + 2 * pad - kw + 1
    if pad > 0:
        xp = np.zeros((cin, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        xp[:, pad:pad + h, pad:pad + w] = x
    else:
        xp = x
    cols = np.empty((cin, kh, kw, oh, ow), dtype=x.dtype)
    for ki in range(kh):
        for kj in range(kw):
            cols[:, ki, kj] = xp[:, ki:ki + oh, kj:kj + ow]
    return cols.reshape(cin * kh * kw, oh * ow)


def conv2d_forward(x, w, b, pad):
    """Cross-correlate x (Cin,H,W) with w (Cout,Cin,kh,kw) plus bias b (Cout,)."""
    cout, cin, kh, kw = w.shape
    oh = x.shape[1] + 2 * pad - kh + 1
    ow = x.shape[2] + 2 * pad - kw + 1
    cols = _im2col(x, kh, kw, pad)
    out = w.reshape(cout, -1) @ cols
    out += b[:, None]
    return out.reshape(cout, oh, ow)


def conv2d_backward(gy, x, w, pad, need_gx, need_gw):
    """Gradients of conv2d_forward w.r.t. input and kernel.

    Returns (gx, gw); entries not requested come back as None. The bias
    gradient is a plain spatial sum and is left to the caller.
    """
    cout, cin, kh, kw = w.shape
    _, oh, ow = gy.shape
    h, wd = x.shape[1], x.shape[2]
    gy_mat = gy.reshape(cout, -1)

    gw = None
    if need_gw:
        cols = _im2col(x, kh, kw, pad)
        gw = (gy_mat @ cols.T).reshape(w.shape)

    gx = None
    if need_gx:
        gcols = (w.reshape(cout, -1).T @ gy_mat).reshape(cin, kh, kw, oh, ow)
        gxp = np.zeros((cin, h + 2 * pad, wd + 2 * pad), dtype=x.dtype)
        for ki in range(kh):
            for kj in range(kw):
                gxp[:, ki:ki + oh, kj:kj + ow] += gcols[:, ki, kj]
        gx = gxp[:, pad:pad + h, pad:pad + wd] if pad > 0 else gxp
        gx = np.ascontiguousarray(gx)

    return gx, gw


def maxpool2_forward(x):
    """2x2/stride-2 max pool. Returns (out, idx) with idx in 0..3.

    idx encodes the argmax position inside each window in row-major order;
    ties go to the first position, matching the compiled kernel.
    """
    c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    windows = x.reshape(c, h2, 2, w2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h2, w2, 4)
    idx = windows.argmax(axis=-1).astype(np.uint8)
    out = np.take_along_axis(windows, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx


def maxpool2_backward(gy, idx):
    """Route each pooled gradient back to its window's argmax position."""
    c, h2, w2 = gy.shape
    g4 = np.zeros((c, h2, w2, 4), dtype=gy.dtype)
    np.put_along_axis(g4, idx[..., None].astype(np.intp), gy[..., None], axis=-1)
    gx = g4.reshape(c, h2, w2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h2 * 2, w2 * 2)
    return np.ascontiguousarray(gx)
