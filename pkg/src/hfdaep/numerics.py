"""Grid helpers, 2D FFTs, same-size convolution and small dense solves.

Images are plain 2D numpy arrays (``float64`` for real grids,
``complex128`` for complex grids). The helpers here validate shape and
finiteness so that downstream modules can assume clean input.

FFT convention: the forward transform is unnormalized and the inverse
carries ``1/(H*W)`` (numpy's default), so ``ifft2(fft2(g)) == g`` and
``||fft2(g)||^2 == H*W * ||g||^2``. Pass ``norm="ortho"`` for the unitary
pair used by the MRI encoding operator.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

__all__ = [
    "NumericsError",
    "as_real_grid",
    "as_complex_grid",
    "as_kernel",
    "fft2",
    "ifft2",
    "conv2d",
    "pad_kernel",
    "dense_solve",
    "forward_diff",
    "forward_diff_adjoint",
]

_BOUNDARY_MODES = {"periodic": "wrap", "replicate": "nearest", "zero": "constant"}


class NumericsError(ValueError):
    """Raised for malformed grids, kernels or unsolvable systems."""


def _check_grid(arr: np.ndarray, what: str) -> np.ndarray:
    if arr.ndim != 2:
        raise NumericsError(f"{what} must be 2D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise NumericsError(f"{what} must be at least 1x1, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"{what} contains non-finite values")
    return arr


def as_real_grid(values) -> np.ndarray:
    """Return ``values`` as a validated 2D float64 array."""
    arr = np.asarray(values)
    if np.iscomplexobj(arr):
        raise NumericsError("expected a real grid, got complex values")
    return _check_grid(arr.astype(np.float64, copy=False), "real grid")


def as_complex_grid(values) -> np.ndarray:
    """Return ``values`` as a validated 2D complex128 array."""
    arr = np.asarray(values).astype(np.complex128, copy=False)
    return _check_grid(arr, "complex grid")


def as_kernel(weights) -> np.ndarray:
    k = np.asarray(weights, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
        raise NumericsError(f"kernel must be 2D with odd dimensions, got {k.shape}")
    if not np.all(np.isfinite(k)):
        raise NumericsError("kernel contains non-finite taps")
    return k


def fft2(g, norm: str = "backward") -> np.ndarray:
    """Forward 2D DFT. Unnormalized unless ``norm="ortho"``."""
    return np.fft.fft2(as_complex_grid(g), norm=norm)


def ifft2(g, norm: str = "backward") -> np.ndarray:
    """Inverse 2D DFT, scaled by ``1/(H*W)`` unless ``norm="ortho"``."""
    return np.fft.ifft2(as_complex_grid(g), norm=norm)


def conv2d(g, kernel, boundary: str = "zero") -> np.ndarray:
    """Same-size 2D convolution of ``g`` with an odd-sized kernel.

    This is a true convolution (the kernel is flipped), with the kernel
    centre at index ``(kh // 2, kw // 2)``::

        out[i, j] = sum_{a, b} k[a, b] * g[i - a + kh//2, j - b + kw//2]

    Samples outside the grid are supplied by ``boundary``: ``"periodic"``
    wraps, ``"replicate"`` repeats the edge sample, ``"zero"`` pads with 0.
    """
    g = as_real_grid(g)
    k = as_kernel(kernel)
    if boundary not in _BOUNDARY_MODES:
        raise NumericsError(f"unknown boundary {boundary!r}")
    if k.shape[0] > g.shape[0] or k.shape[1] > g.shape[1]:
        raise NumericsError(f"kernel {k.shape} larger than grid {g.shape}")
    return ndimage.convolve(g, k, mode=_BOUNDARY_MODES[boundary], cval=0.0)


def pad_kernel(kernel, shape) -> np.ndarray:
    """Embed a kernel in a zero grid of ``shape`` with its centre at (0, 0).

    ``fft2(pad_kernel(k, g.shape))`` is then the transfer function of
    ``conv2d(., k, "periodic")``.
    """
    k = as_kernel(kernel)
    out = np.zeros(shape, dtype=np.float64)
    ch, cw = k.shape[0] // 2, k.shape[1] // 2
    for a in range(k.shape[0]):
        for b in range(k.shape[1]):
            out[(a - ch) % shape[0], (b - cw) % shape[1]] += k[a, b]
    return out


def dense_solve(a, b, max_cond: float = 1e12) -> np.ndarray:
    """Solve ``a @ x = b`` for a small square system.

    Raises
    ------
    NumericsError
        If ``a`` is not square or its 2-norm condition number exceeds
        ``max_cond``. The message carries the estimate.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NumericsError(f"matrix must be square, got {a.shape}")
    if b.shape[0] != a.shape[0]:
        raise NumericsError(f"rhs length {b.shape[0]} does not match matrix {a.shape}")
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > max_cond:
        raise NumericsError(f"matrix is singular or ill-conditioned (cond ~ {cond:.3e})")
    return np.linalg.solve(a, b)


def forward_diff(u: np.ndarray, axis: int) -> np.ndarray:
    """Periodic forward difference ``u[k+1] - u[k]`` along ``axis``.

    ``axis=1`` is the horizontal (x) gradient, ``axis=0`` the vertical (y).
    """
    return np.roll(u, -1, axis=axis) - u


def forward_diff_adjoint(v: np.ndarray, axis: int) -> np.ndarray:
    """Transpose of :func:`forward_diff`: ``v[k-1] - v[k]``."""
    return np.roll(v, 1, axis=axis) - v
