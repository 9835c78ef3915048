import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hfdaep.numerics import (
    NumericsError,
    as_kernel,
    conv2d,
    dense_solve,
    fft2,
    forward_diff,
    forward_diff_adjoint,
    ifft2,
    pad_kernel,
)


def naive_dft2(g):
    h, w = g.shape
    out = np.zeros((h, w), dtype=complex)
    for p in range(h):
        for q in range(w):
            for j in range(h):
                for k in range(w):
                    out[p, q] += g[j, k] * np.exp(-2j * np.pi * (p * j / h + q * k / w))
    return out


def naive_conv_zero(g, k):
    h, w = g.shape
    kh, kw = k.shape
    out = np.zeros_like(g)
    for i in range(h):
        for j in range(w):
            for a in range(kh):
                for b in range(kw):
                    ii, jj = i - a + kh // 2, j - b + kw // 2
                    if 0 <= ii < h and 0 <= jj < w:
                        out[i, j] += k[a, b] * g[ii, jj]
    return out


def test_impulse_transforms_to_constant():
    g = np.zeros((4, 4))
    g[0, 0] = 1.0
    np.testing.assert_allclose(fft2(g), np.ones((4, 4)), atol=1e-15)


def test_constant_has_only_dc():
    spec = fft2(np.full((8, 8), 3.0))
    assert spec[0, 0] == pytest.approx(3.0 * 64)
    spec[0, 0] = 0
    assert np.max(np.abs(spec)) < 1e-12


def test_fft_matches_direct_sum_and_parseval():
    rng = np.random.default_rng(0)
    g = rng.standard_normal((8, 8))
    spec = fft2(g)
    np.testing.assert_allclose(spec, naive_dft2(g), atol=1e-10)
    # unnormalized forward: energy grows by H*W
    ratio = np.sum(np.abs(spec) ** 2) / np.sum(g ** 2)
    assert ratio == pytest.approx(64.0, rel=1e-12)


@pytest.mark.parametrize("shape", [(1, 1), (3, 5), (7, 7), (16, 12), (64, 64), (255, 256)])
def test_fft_roundtrip(shape):
    rng = np.random.default_rng(1)
    g = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    back = ifft2(fft2(g))
    assert np.linalg.norm(back - g) / np.linalg.norm(g) < 1e-12


def test_ortho_pair_is_unitary():
    rng = np.random.default_rng(2)
    g = rng.standard_normal((9, 6))
    assert np.linalg.norm(fft2(g, norm="ortho")) == pytest.approx(np.linalg.norm(g), rel=1e-12)


def test_identity_kernel():
    g = np.random.default_rng(3).random((5, 6))
    for mode in ("periodic", "replicate", "zero"):
        np.testing.assert_array_equal(conv2d(g, [[1.0]], mode), g)


@pytest.mark.parametrize("mode", ["periodic", "replicate"])
def test_average_of_constant(mode):
    out = conv2d(np.full((6, 6), 2.5), np.full((3, 3), 1 / 9), mode)
    np.testing.assert_allclose(out, 2.5, rtol=1e-14)


def test_average_of_constant_zero_boundary_interior():
    out = conv2d(np.full((6, 6), 2.5), np.full((3, 3), 1 / 9), "zero")
    np.testing.assert_allclose(out[1:-1, 1:-1], 2.5, rtol=1e-14)


def test_conv_matches_quadruple_loop():
    rng = np.random.default_rng(4)
    g = rng.standard_normal((7, 7))
    k = rng.standard_normal((5, 5))
    np.testing.assert_allclose(conv2d(g, k, "zero"), naive_conv_zero(g, k), atol=1e-12)


def test_conv_orientation_is_true_convolution():
    g = np.zeros((5, 5))
    g[2, 2] = 1.0
    k = np.arange(9.0).reshape(3, 3)
    np.testing.assert_array_equal(conv2d(g, k, "zero")[1:4, 1:4], k)


def test_conv_linear():
    rng = np.random.default_rng(5)
    g1, g2 = rng.standard_normal((2, 9, 8))
    k = rng.standard_normal((3, 5))
    for mode in ("periodic", "replicate", "zero"):
        lhs = conv2d(2.0 * g1 - 0.5 * g2, k, mode)
        rhs = 2.0 * conv2d(g1, k, mode) - 0.5 * conv2d(g2, k, mode)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_periodic_conv_diagonalized_by_fft():
    rng = np.random.default_rng(6)
    g = rng.standard_normal((10, 12))
    k = rng.standard_normal((3, 5))
    lhs = fft2(conv2d(g, k, "periodic"))
    rhs = fft2(g) * fft2(pad_kernel(k, g.shape))
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_kernel_validation():
    with pytest.raises(NumericsError):
        as_kernel(np.ones((2, 3)))
    with pytest.raises(NumericsError):
        conv2d(np.ones((3, 3)), np.ones((5, 5)))
    with pytest.raises(NumericsError):
        conv2d(np.array([[1.0, np.nan]]), [[1.0]])


def test_dense_solve_small_cases():
    b = np.array([3.0, -1.0])
    np.testing.assert_array_equal(dense_solve(np.eye(2), b), b)
    np.testing.assert_allclose(dense_solve(np.diag([2.0, 4.0]), [2.0, 4.0]), [1.0, 1.0])


def test_dense_solve_residual():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((16, 16)) + 16 * np.eye(16)
    b = rng.standard_normal(16)
    x = dense_solve(a, b)
    assert np.linalg.norm(a @ x - b) / np.linalg.norm(b) < 1e-10


def test_dense_solve_singular_reports_condition():
    with pytest.raises(NumericsError, match="cond"):
        dense_solve(np.ones((3, 3)), np.ones(3))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 1))
def test_forward_diff_adjoint(h, w, axis):
    rng = np.random.default_rng(h * 13 + w)
    u, v = rng.standard_normal((2, h, w))
    lhs = np.sum(forward_diff(u, axis) * v)
    rhs = np.sum(u * forward_diff_adjoint(v, axis))
    assert lhs == pytest.approx(rhs, abs=1e-12)
