"""Kernel backends against a brute-force oracle and against each other."""

import numpy as np
import pytest

from featsim.kernels import numpy_backend

try:
    from featsim.kernels import _conv_cy
except ImportError:
    _conv_cy = None

BACKENDS = [pytest.param(numpy_backend, id="numpy")]
if _conv_cy is not None:
    BACKENDS.append(pytest.param(_conv_cy, id="cython"))


def conv2d_oracle(x, w, b, pad):
    """Direct six-loop cross-correlation; the reference for both backends."""
    cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    oh = h + 2 * pad - kh + 1
    ow = wd + 2 * pad - kw + 1
    out = np.zeros((cout, oh, ow), dtype=np.float64)
    for co in range(cout):
        for i in range(oh):
            for j in range(ow):
                acc = float(b[co])
                for ci in range(cin):
                    for ki in range(kh):
                        for kj in range(kw):
                            xi, xj = i + ki - pad, j + kj - pad
                            if 0 <= xi < h and 0 <= xj < wd:
                                acc += float(w[co, ci, ki, kj]) * float(x[ci, xi, xj])
                out[co, i, j] = acc
    return out


def conv2d_backward_oracle(gy, x, w, pad):
    """Gradients accumulated straight from the forward definition."""
    cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    oh, ow = gy.shape[1], gy.shape[2]
    gx = np.zeros((cin, h, wd), dtype=np.float64)
    gw = np.zeros((cout, cin, kh, kw), dtype=np.float64)
    for co in range(cout):
        for i in range(oh):
            for j in range(ow):
                g = float(gy[co, i, j])
                for ci in range(cin):
                    for ki in range(kh):
                        for kj in range(kw):
                            xi, xj = i + ki - pad, j + kj - pad
                            if 0 <= xi < h and 0 <= xj < wd:
                                gx[ci, xi, xj] += float(w[co, ci, ki, kj]) * g
                                gw[co, ci, ki, kj] += float(x[ci, xi, xj]) * g
    return gx, gw


GEOMETRIES = [
    (1, 4, 4, 2, 3, 1),
    (2, 5, 6, 3, 3, 1),
    (3, 4, 4, 2, 1, 0),
    (2, 6, 5, 2, 3, 0),
    (1, 4, 4, 1, 3, 2),
    (2, 5, 5, 2, 1, 1),
]


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("geom", GEOMETRIES)
def test_conv_forward_matches_oracle(backend, geom):
    cin, h, w, cout, k, pad = geom
    rng = np.random.default_rng(hash(geom) % (2**32))
    x = rng.standard_normal((cin, h, w)).astype(np.float64)
    wt = rng.standard_normal((cout, cin, k, k)).astype(np.float64)
    b = rng.standard_normal(cout).astype(np.float64)
    got = backend.conv2d_forward(x, wt, b, pad)
    want = conv2d_oracle(x, wt, b, pad)
    assert got.shape == want.shape
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("geom", GEOMETRIES)
def test_conv_backward_matches_oracle(backend, geom):
    cin, h, w, cout, k, pad = geom
    rng = np.random.default_rng(hash(geom) % (2**31))
    oh, ow = h + 2 * pad - k + 1, w + 2 * pad - k + 1
    x = rng.standard_normal((cin, h, w)).astype(np.float64)
    wt = rng.standard_normal((cout, cin, k, k)).astype(np.float64)
    gy = rng.standard_normal((cout, oh, ow)).astype(np.float64)
    gx, gw = backend.conv2d_backward(gy, x, wt, pad, True, True)
    gx_o, gw_o = conv2d_backward_oracle(gy, x, wt, pad)
    np.testing.assert_allclose(gx, gx_o, rtol=1e-11, atol=1e-11)
    np.testing.assert_allclose(gw, gw_o, rtol=1e-11, atol=1e-11)


@pytest.mark.parametrize("backend", BACKENDS)
def test_conv_backward_skips_unrequested(backend):
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 4, 4)).astype(np.float32)
    wt = rng.standard_normal((2, 2, 3, 3)).astype(np.float32)
    gy = rng.standard_normal((2, 4, 4)).astype(np.float32)
    gx, gw = backend.conv2d_backward(gy, x, wt, 1, True, False)
    assert gx is not None and gw is None
    gx, gw = backend.conv2d_backward(gy, x, wt, 1, False, True)
    assert gx is None and gw is not None


@pytest.mark.skipif(_conv_cy is None, reason="compiled backend not built")
def test_backends_agree_on_random_shapes():
    rng = np.random.default_rng(11)
    for _ in range(25):
        cin = int(rng.integers(1, 6))
        cout = int(rng.integers(1, 6))
        h = int(rng.integers(3, 12))
        w = int(rng.integers(3, 12))
        k, pad = (3, 1) if rng.random() < 0.7 else (1, 0)
        for dt, tol in ((np.float32, 1e-5), (np.float64, 1e-13)):
            x = rng.standard_normal((cin, h, w)).astype(dt)
            wt = rng.standard_normal((cout, cin, k, k)).astype(dt)
            b = rng.standard_normal(cout).astype(dt)
            gy = rng.standard_normal((cout, h, w)).astype(dt)
            y1 = numpy_backend.conv2d_forward(x, wt, b, pad)
            y2 = _conv_cy.conv2d_forward(x, wt, b, pad)
            scale = max(float(np.max(np.abs(y1))), 1.0)
            assert np.max(np.abs(y1 - y2)) / scale < tol
            gx1, gw1 = numpy_backend.conv2d_backward(gy, x, wt, pad, True, True)
            gx2, gw2 = _conv_cy.conv2d_backward(gy, x, wt, pad, True, True)
            for a, c in ((gx1, gx2), (gw1, gw2)):
                scale = max(float(np.max(np.abs(a))), 1.0)
                assert np.max(np.abs(a - c)) / scale < tol


@pytest.mark.parametrize("backend", BACKENDS)
def test_maxpool_forward_and_tie_rule(backend):
    x = np.array([[[1.0, 2.0, 5.0, 5.0],
                   [3.0, 4.0, 5.0, 5.0],
                   [7.0, 7.0, 0.0, -1.0],
                   [7.0, 7.0, -2.0, 2.0]]], dtype=np.float32)
    out, idx = backend.maxpool2_forward(x)
    np.testing.assert_array_equal(out[0], [[4.0, 5.0], [7.0, 2.0]])
    # ties resolve to the first window position in row-major order
    assert idx[0, 0, 1] == 0
    assert idx[0, 1, 0] == 0
    assert idx[0, 0, 0] == 3
    assert idx[0, 1, 1] == 3


@pytest.mark.parametrize("backend", BACKENDS)
def test_maxpool_backward_routes_to_argmax(backend):
    x = np.arange(16, dtype=np.float32).reshape(1, 4, 4)
    out, idx = backend.maxpool2_forward(x)
    gy = np.ones_like(out)
    gx = backend.maxpool2_backward(gy, idx)
    want = np.zeros((1, 4, 4), dtype=np.float32)
    want[0, 1, 1] = want[0, 1, 3] = want[0, 3, 1] = want[0, 3, 3] = 1.0
    np.testing.assert_array_equal(gx, want)


@pytest.mark.skipif(_conv_cy is None, reason="compiled backend not built")
def test_maxpool_backends_agree():
    rng = np.random.default_rng(5)
    for _ in range(20):
        c = int(rng.integers(1, 5))
        h = int(rng.integers(1, 7)) * 2
        w = int(rng.integers(1, 7)) * 2
        x = rng.standard_normal((c, h, w)).astype(np.float32)
        # duplicated values exercise the tie rule
        x[x > 0.5] = 0.5
        o1, i1 = numpy_backend.maxpool2_forward(x)
        o2, i2 = _conv_cy.maxpool2_forward(x)
        np.testing.assert_array_equal(o1, o2)
        np.testing.assert_array_equal(i1, i2)
        gy = rng.standard_normal(o1.shape).astype(np.float32)
        np.testing.assert_array_equal(
            numpy_backend.maxpool2_backward(gy, i1),
            _conv_cy.maxpool2_backward(gy, i2),
        )


@pytest.mark.parametrize("backend", BACKENDS)
def test_conv_determinism_same_inputs(backend):
    rng = np.random.default_rng(9)
    x = rng.standard_normal((4, 8, 8)).astype(np.float32)
    wt = rng.standard_normal((4, 4, 3, 3)).astype(np.float32)
    b = rng.standard_normal(4).astype(np.float32)
    gy = rng.standard_normal((4, 8, 8)).astype(np.float32)
    y1 = backend.conv2d_forward(x, wt, b, 1)
    y2 = backend.conv2d_forward(x, wt, b, 1)
    assert np.array_equal(y1, y2)
    g1 = backend.conv2d_backward(gy, x, wt, 1, True, True)
    g2 = backend.conv2d_backward(gy, x, wt, 1, True, True)
    assert np.array_equal(g1[0], g2[0]) and np.array_equal(g1[1], g2[1])
