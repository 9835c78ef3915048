"""PSNR, SSIM and HFEN image-quality metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .numerics import conv2d

__all__ = ["MetricReport", "psnr", "ssim", "hfen", "log_kernel", "report"]

K1, K2 = 0.01, 0.03


def _pair(u, ref):
    u = np.asarray(u, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if u.shape != ref.shape:
        raise ValueError(f"shape mismatch: {u.shape} vs {ref.shape}")
    return u, ref


def psnr(u, ref, form: str = "standard") -> float:
    """Peak signal-to-noise ratio of ``u`` against ``ref`` in dB.

    ``form="standard"`` is ``10 log10(max(ref)^2 / MSE)``. ``form="printed"``
    is the literal ``10 log10(max(ref) / ||u - ref||^2)`` variant, kept only
    for comparison. Identical inputs give ``inf``.
    """
    u, ref = _pair(u, ref)
    err = u - ref
    if not np.any(err):
        return math.inf
    peak = float(np.max(ref))
    if form == "standard":
        return 10.0 * math.log10(peak ** 2 / float(np.mean(err ** 2)))
    if form == "printed":
        return 10.0 * math.log10(peak / float(np.sum(err ** 2)))
    raise ValueError(f"unknown PSNR form {form!r}")


def ssim(u, ref, dynamic_range: float | None = None, window: str = "gaussian",
         sigma: float = 1.5, size: int = 11) -> float:
    """Structural similarity.

    ``window="gaussian"`` averages the local index over Gaussian windows
    (11x11, sigma 1.5, population statistics), excluding a border of half a
    window. ``window="global"`` evaluates the index once from whole-image
    means, variances and covariance. ``dynamic_range`` defaults to
    ``max(ref) - min(ref)``.
    """
    u, ref = _pair(u, ref)
    c = float(np.ptp(ref)) if dynamic_range is None else float(dynamic_range)
    if not c > 0:
        c = 1.0
    c1, c2 = (K1 * c) ** 2, (K2 * c) ** 2

    if window == "global":
        mu_u, mu_r = u.mean(), ref.mean()
        var_u, var_r = u.var(), ref.var()
        cov = np.mean((u - mu_u) * (ref - mu_r))
        return float(((2 * mu_u * mu_r + c1) * (2 * cov + c2))
                     / ((mu_u ** 2 + mu_r ** 2 + c1) * (var_u + var_r + c2)))
    if window != "gaussian":
        raise ValueError(f"unknown SSIM window {window!r}")

    radius = size // 2
    filt = lambda a: ndimage.gaussian_filter(a, sigma, mode="reflect",  # noqa: E731
                                             truncate=radius / sigma)
    mu_u, mu_r = filt(u), filt(ref)
    var_u = filt(u * u) - mu_u ** 2
    var_r = filt(ref * ref) - mu_r ** 2
    cov = filt(u * ref) - mu_u * mu_r
    smap = ((2 * mu_u * mu_r + c1) * (2 * cov + c2)) / \
        ((mu_u ** 2 + mu_r ** 2 + c1) * (var_u + var_r + c2))
    if min(u.shape) > 2 * radius:
        smap = smap[radius:-radius, radius:-radius]
    return float(smap.mean())


def log_kernel(size: int = 15, sigma: float = 1.5) -> np.ndarray:
    """Zero-sum Laplacian-of-Gaussian kernel (same construction as MATLAB's fspecial)."""
    half = size // 2
    y, x = np.mgrid[-half:half + 1, -half:half + 1].astype(np.float64)
    r2 = x ** 2 + y ** 2
    g = np.exp(-r2 / (2 * sigma ** 2))
    g /= g.sum()
    k = g * (r2 - 2 * sigma ** 2) / sigma ** 4
    return k - k.mean()


def hfen(u, ref, squared: bool = True, size: int = 15, sigma: float = 1.5) -> float:
    """High-frequency error norm ``||LoG(u) - LoG(ref)||^2 / ||LoG(ref)||^2``.

    ``squared=False`` returns the ratio of (unsquared) Frobenius norms.
    """
    u, ref = _pair(u, ref)
    if min(u.shape) < size:
        raise ValueError(f"images {u.shape} smaller than the {size}x{size} LoG kernel")
    k = log_kernel(size, sigma)
    lu = conv2d(u, k, "replicate")
    lr = conv2d(ref, k, "replicate")
    ratio = np.sum((lu - lr) ** 2) / np.sum(lr ** 2)
    return float(ratio if squared else math.sqrt(ratio))


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    hfen: float

    def __str__(self):
        return f"psnr={self.psnr:.4f} ssim={self.ssim:.4f} hfen={self.hfen:.4f}"

    @staticmethod
    def csv_header() -> str:
        return "psnr,ssim,hfen"

    def csv_row(self) -> str:
        return f"{self.psnr:.6f},{self.ssim:.6f},{self.hfen:.6f}"


def report(u, ref, dynamic_range: float | None = None) -> MetricReport:
    return MetricReport(psnr(u, ref), ssim(u, ref, dynamic_range), hfen(u, ref))
