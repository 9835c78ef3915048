"""Undersampled Cartesian MRI: sampling masks, encoding and reconstruction.

Masks live in the unshifted DFT layout (DC at index ``(0, 0)``), matching
``numpy.fft.fft2`` output, so the encoding operator is a pointwise product.
The encoding uses the unitary DFT (``norm="ortho"``), which makes
``adjoint`` the exact adjoint of ``encode``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .metrics import hfen, psnr, ssim
from .numerics import as_complex_grid
from .prior import PriorContext, prior_gradient

__all__ = [
    "MASK_KINDS",
    "SamplingMask",
    "KSpaceData",
    "MriReconConfig",
    "ReconError",
    "make_mask",
    "encode",
    "adjoint",
    "add_kspace_noise",
    "dc_update",
    "reconstruct_mri",
]

log = logging.getLogger(__name__)

MASK_KINDS = ("random2d", "radial", "cartesian1d")


class ReconError(RuntimeError):
    pass


@dataclass
class SamplingMask:
    kept: np.ndarray
    kind: str
    R: float
    seed: int = 0

    def __post_init__(self):
        self.kept = np.asarray(self.kept, dtype=bool)
        if self.kept.ndim != 2:
            raise ValueError("mask must be 2D")

    @property
    def shape(self):
        return self.kept.shape

    @property
    def fraction(self) -> float:
        return float(self.kept.mean())

    def header(self) -> str:
        return f"kind={self.kind} R={self.R:g} seed={self.seed}"


@dataclass
class KSpaceData:
    samples: np.ndarray
    mask: SamplingMask

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        if self.samples.shape != self.mask.shape:
            raise ValueError(f"samples {self.samples.shape} vs mask {self.mask.shape}")
        self.samples = np.where(self.mask.kept, self.samples, 0)


@dataclass
class MriReconConfig:
    prior: PriorContext
    lam: float = 0.1
    iterations: int = 100

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValueError(f"lambda must be positive and finite, got {self.lam}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


def _centered_freqs(n: int) -> np.ndarray:
    """Signed integer frequency index of each DFT bin (0, 1, ..., -1)."""
    return np.fft.fftfreq(n) * n


def _radius(shape) -> np.ndarray:
    ky = _centered_freqs(shape[0])[:, None]
    kx = _centered_freqs(shape[1])[None, :]
    return np.hypot(ky, kx)


def _random2d(h, w, R, rng, center_radius=16.0):
    target = h * w / R
    r = _radius((h, w))
    rc = min(center_radius, math.sqrt(0.5 * target / math.pi))
    center = r <= rc
    r0 = max(h, w) / 8.0
    density = 1.0 / (1.0 + (r / r0) ** 2)
    outer = ~center
    want = target - center.sum()

    lo, hi = 0.0, 1.0
    while np.minimum(1.0, hi * density[outer]).sum() < want:
        hi *= 2.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if np.minimum(1.0, mid * density[outer]).sum() < want:
            lo = mid
        else:
            hi = mid
    prob = np.where(center, 1.0, np.minimum(1.0, hi * density))
    return rng.random((h, w)) < prob


def _spokes(h, w, n):
    kept = np.zeros((h, w), dtype=bool)
    reach = math.hypot(h, w) / 2.0
    t = np.arange(-reach, reach + 0.25, 0.5)
    for k in range(n):
        theta = math.pi * k / n
        ky = np.rint(t * math.sin(theta)).astype(int)
        kx = np.rint(t * math.cos(theta)).astype(int)
        ok = (ky >= -(h // 2)) & (ky < h - h // 2) & (kx >= -(w // 2)) & (kx < w - w // 2)
        kept[ky[ok] % h, kx[ok] % w] = True
    return kept


def _radial(h, w, R):
    target = h * w / R
    base = math.ceil(math.pi / 2.0 * h / R)
    # The nominal spoke count oversamples (spokes overlap near DC and reach
    # into the corners); search for the count whose coverage is closest.
    lo, hi = 1, max(base, 2)
    while _spokes(h, w, hi).sum() < target:
        hi *= 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _spokes(h, w, mid).sum() < target:
            lo = mid
        else:
            hi = mid
    best = min((lo, hi), key=lambda n: abs(_spokes(h, w, n).sum() - target))
    return _spokes(h, w, best)


def _cartesian1d(h, w, R, rng):
    rows = max(1, int(round(h / R)))
    ky = _centered_freqs(h)
    n_center = min(rows, max(1, int(round(0.3 * rows))))
    order = np.argsort(np.abs(ky), kind="stable")
    chosen = set(order[:n_center].tolist())
    rest = np.array(sorted(set(range(h)) - chosen))
    if rows > n_center and rest.size:
        dens = 1.0 / (1.0 + (ky[rest] / (h / 8.0)) ** 2)
        extra = rng.choice(rest, size=rows - n_center, replace=False, p=dens / dens.sum())
        chosen.update(extra.tolist())
    kept = np.zeros((h, w), dtype=bool)
    kept[sorted(chosen), :] = True
    return kept


def make_mask(kind: str, R: float, height: int, width: int, seed: int = 0) -> SamplingMask:
    """Generate a k-space sampling mask with nominal acceleration ``R``.

    ``random2d`` draws bins independently with a keep probability
    proportional to ``1 / (1 + (r / r0)^2)`` (``r0 = max(H, W) / 8``) around a
    fully sampled centre disc; ``radial`` rasterizes equiangular spokes
    through DC; ``cartesian1d`` keeps whole rows (phase-encode lines),
    densest near the centre.
    """
    if kind not in MASK_KINDS:
        raise ValueError(f"unknown mask kind {kind!r}; choose from {MASK_KINDS}")
    if not R >= 1:
        raise ValueError(f"acceleration R must be >= 1, got {R}")
    if R == 1:
        kept = np.ones((height, width), dtype=bool)
    else:
        rng = np.random.default_rng(seed)
        if kind == "random2d":
            kept = _random2d(height, width, R, rng)
        elif kind == "radial":
            kept = _radial(height, width, R)
        else:
            kept = _cartesian1d(height, width, R, rng)
    kept[0, 0] = True
    return SamplingMask(kept, kind, float(R), seed)


def encode(u, mask: SamplingMask) -> KSpaceData:
    u = as_complex_grid(u)
    if u.shape != mask.shape:
        raise ValueError(f"image {u.shape} does not match mask {mask.shape}")
    return KSpaceData(np.fft.fft2(u, norm="ortho") * mask.kept, mask)


def adjoint(y: KSpaceData) -> np.ndarray:
    return np.fft.ifft2(np.where(y.mask.kept, y.samples, 0), norm="ortho")


def add_kspace_noise(y: KSpaceData, sigma: float, seed: int = 0) -> KSpaceData:
    """Add circular complex Gaussian noise of per-component std ``sigma`` at kept bins."""
    rng = np.random.default_rng(seed)
    noise = sigma * (rng.standard_normal(y.samples.shape)
                     + 1j * rng.standard_normal(y.samples.shape))
    return KSpaceData(y.samples + noise, y.mask)


def dc_update(z, y: KSpaceData, lam: float) -> np.ndarray:
    """Closed-form minimizer of ``||Hu - y||^2 + lam ||u - z||^2``."""
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    z = as_complex_grid(z)
    fz = np.fft.fft2(z, norm="ortho")
    out = np.where(y.mask.kept, (y.samples + lam * fz) / (1.0 + lam), fz)
    return np.fft.ifft2(out, norm="ortho")


def _trace_row(k, u, truth, prev):
    row = {"iteration": k, "delta": float(np.linalg.norm(u - prev) / max(np.linalg.norm(prev), 1e-300))}
    if truth is not None:
        mag, ref = np.abs(u), np.abs(truth)
        row["psnr"] = psnr(mag, ref)
        row["ssim"] = ssim(mag, ref)
        if min(ref.shape) >= 15:
            row["hfen"] = hfen(mag, ref)
    return row


def reconstruct_mri(y: KSpaceData, cfg: MriReconConfig, truth=None, callback=None):
    """Alternate a prior-gradient step with the closed-form data-consistency solve.

    Returns ``(u, trace)``; ``trace`` holds one dict per iteration with the
    relative update size and, if ``truth`` is given, PSNR/SSIM/HFEN of the
    magnitude image.
    """
    u = adjoint(y)
    trace = []
    for k in range(1, cfg.iterations + 1):
        prev = u
        z = u - prior_gradient(cfg.prior, u)
        u = dc_update(z, y, cfg.lam)
        if not np.all(np.isfinite(u)):
            raise ReconError(f"non-finite iterate at iteration {k}")
        trace.append(_trace_row(k, u, truth, prev))
        if callback is not None:
            callback(k, u)
    return u, trace
