"""Fan-beam CT: Siddon projector, FBP, projection noise and PWLS reconstruction.

Coordinates are in cm with the rotation centre at the origin. The image is
``n x n`` pixels covering ``[-E/2, E/2]^2``; column ``j`` runs along +x and
row ``i`` along -y (row 0 is the top edge). For view angle ``beta`` the
source sits at ``D (cos beta, sin beta)`` and the flat detector is centred
at ``-Dd (cos beta, sin beta)`` with bins along ``(-sin beta, cos beta)``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .metrics import hfen, psnr, ssim
from .mri import ReconError
from .prior import PriorContext, prior_gradient

__all__ = [
    "FanGeometry",
    "Sinogram",
    "NoiseModel",
    "CtReconConfig",
    "GeometryError",
    "siddon_project",
    "backproject",
    "ray_endpoints",
    "system_matrix",
    "add_ct_noise",
    "fbp",
    "pwls_weights",
    "pwls_step",
    "pwls_objective",
    "reconstruct_ct",
    "surrogate_curvature",
    "ray_lengths",
    "ramp_filter",
    "uniform_angles",
]

log = logging.getLogger(__name__)


class GeometryError(ValueError):
    pass


def uniform_angles(n: int) -> np.ndarray:
    return 2.0 * np.pi * np.arange(n) / n


@dataclass(frozen=True)
class FanGeometry:
    source_to_center: float = 40.0
    detector_to_center: float = 40.0
    image_extent: float = 20.0
    image_pixels: int = 128
    detector_width: float = 41.3
    detector_bins: int = 512
    view_angles: tuple = tuple(uniform_angles(360))

    def __post_init__(self):
        object.__setattr__(self, "view_angles", tuple(float(a) for a in self.view_angles))
        for name in ("source_to_center", "detector_to_center", "image_extent",
                     "detector_width"):
            if not getattr(self, name) > 0:
                raise GeometryError(f"{name} must be positive")
        if self.image_pixels < 1 or self.detector_bins < 1 or not self.view_angles:
            raise GeometryError("need at least one pixel, bin and view")
        if any(not 0 <= a < 2 * math.pi for a in self.view_angles):
            raise GeometryError("view angles must lie in [0, 2pi)")
        if self.source_to_center <= self.image_extent / math.sqrt(2.0):
            raise GeometryError("source trajectory passes through the image region")

    @property
    def n_views(self) -> int:
        return len(self.view_angles)

    @property
    def pixel_size(self) -> float:
        return self.image_extent / self.image_pixels

    @property
    def bin_size(self) -> float:
        return self.detector_width / self.detector_bins

    def bin_offsets(self) -> np.ndarray:
        return (np.arange(self.detector_bins) - (self.detector_bins - 1) / 2.0) * self.bin_size

    def sparse(self, views: int, full: int = 360) -> "FanGeometry":
        """Subset of a ``full``-view uniform scan with ``views`` near-uniform angles."""
        if not 1 <= views <= full:
            raise GeometryError(f"cannot take {views} of {full} views")
        idx = np.unique(np.floor(np.arange(views) * full / views + 0.5).astype(int) % full)
        return replace(self, view_angles=tuple(uniform_angles(full)[idx]))

    def sidecar(self) -> str:
        return "\n".join([
            f"source_to_center = {self.source_to_center!r}",
            f"detector_to_center = {self.detector_to_center!r}",
            f"extent = {self.image_extent!r}",
            f"pixels = {self.image_pixels}",
            f"detector_width = {self.detector_width!r}",
            f"bins = {self.detector_bins}",
            "views = " + ",".join(repr(a) for a in self.view_angles),
        ]) + "\n"

    @classmethod
    def from_sidecar(cls, text: str) -> "FanGeometry":
        kv = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                k, v = (s.strip() for s in line.split("=", 1))
                kv[k] = v
        return cls(float(kv["source_to_center"]), float(kv["detector_to_center"]),
                   float(kv["extent"]), int(kv["pixels"]), float(kv["detector_width"]),
                   int(kv["bins"]), tuple(float(a) for a in kv["views"].split(",")))


@dataclass
class Sinogram:
    data: np.ndarray
    geometry: FanGeometry

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        g = self.geometry
        if self.data.shape != (g.n_views, g.detector_bins):
            raise GeometryError(f"sinogram {self.data.shape} does not match geometry "
                                f"({g.n_views}, {g.detector_bins})")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("sinogram contains non-finite values")


@dataclass
class NoiseModel:
    """Projection variance ``f * exp(mu / T)`` per bin, with ``mu`` the clean mean."""

    mu: np.ndarray
    f: np.ndarray | float = 1e-5
    T: float = 2.0

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.f = np.broadcast_to(np.asarray(self.f, dtype=np.float64), self.mu.shape)
        if np.any(self.f <= 0) or not self.T > 0:
            raise ValueError("f and T must be positive")

    @property
    def variance(self) -> np.ndarray:
        return self.f * np.exp(self.mu / self.T)


@dataclass
class CtReconConfig:
    prior: PriorContext | None
    lam: float = 100.0
    iterations: int = 100
    weighting: str = "unweighted"

    def __post_init__(self):
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError("lambda must be finite and non-negative")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.weighting not in ("pwls", "pwls_sqrt", "unweighted"):
            raise ValueError(f"unknown weighting {self.weighting!r}")


# Siddon ray tracing --------------------------------------------------------

def ray_endpoints(g: FanGeometry) -> np.ndarray:
    """``(views, bins, 4)`` array of ``(sx, sy, px, py)`` source/detector points."""
    beta = np.asarray(g.view_angles)[:, None]
    c, s = np.cos(beta), np.sin(beta)
    u = g.bin_offsets()[None, :]
    sx = g.source_to_center * c + 0 * u
    sy = g.source_to_center * s + 0 * u
    px = -g.detector_to_center * c - u * s
    py = -g.detector_to_center * s + u * c
    return np.stack([sx, sy, px, py], axis=-1)


@numba.njit(cache=True)
def _trace(sx, sy, px, py, n, extent, idx, lens):
    """Exact pixel intersection lengths of segment (sx,sy)->(px,py). Returns count."""
    half = 0.5 * extent
    d = extent / n
    dx = px - sx
    dy = py - sy
    length = math.sqrt(dx * dx + dy * dy)
    amin = 0.0
    amax = 1.0
    if dx != 0.0:
        a0 = (-half - sx) / dx
        a1 = (half - sx) / dx
        amin = max(amin, min(a0, a1))
        amax = min(amax, max(a0, a1))
    elif sx <= -half or sx >= half:
        return 0
    if dy != 0.0:
        a0 = (-half - sy) / dy
        a1 = (half - sy) / dy
        amin = max(amin, min(a0, a1))
        amax = min(amax, max(a0, a1))
    elif sy <= -half or sy >= half:
        return 0
    if amax <= amin:
        return 0

    # Plane crossings strictly inside (amin, amax), each list ascending in a.
    xs = np.empty(n + 1)
    nx = 0
    if dx != 0.0:
        for k in range(n + 1):
            kk = k if dx > 0 else n - k
            a = (-half + kk * d - sx) / dx
            if a > amin and a < amax:
                xs[nx] = a
                nx += 1
    ys = np.empty(n + 1)
    ny = 0
    if dy != 0.0:
        for k in range(n + 1):
            kk = k if dy > 0 else n - k
            a = (-half + kk * d - sy) / dy
            if a > amin and a < amax:
                ys[ny] = a
                ny += 1

    count = 0
    a_prev = amin
    i = 0
    j = 0
    while True:
        if i < nx and (j >= ny or xs[i] <= ys[j]):
            a_next = xs[i]
            i += 1
        elif j < ny:
            a_next = ys[j]
            j += 1
        else:
            a_next = amax
        if a_next > a_prev:
            am = 0.5 * (a_prev + a_next)
            col = int(math.floor((sx + am * dx + half) / d))
            row = int(math.floor((half - (sy + am * dy)) / d))
            if col >= n:
                col = n - 1
            if row >= n:
                row = n - 1
            if col >= 0 and row >= 0:
                idx[count] = row * n + col
                lens[count] = (a_next - a_prev) * length
                count += 1
        a_prev = a_next
        if a_next >= amax:
            break
    return count


@numba.njit(cache=True)
def _project(img, rays, n, extent, out):
    nv, nb = out.shape
    idx = np.empty(2 * n + 4, dtype=np.int64)
    lens = np.empty(2 * n + 4)
    for v in range(nv):
        for b in range(nb):
            c = _trace(rays[v, b, 0], rays[v, b, 1], rays[v, b, 2], rays[v, b, 3],
                       n, extent, idx, lens)
            acc = 0.0
            for k in range(c):
                acc += img[idx[k]] * lens[k]
            out[v, b] = acc


@numba.njit(cache=True)
def _backproject(sino, rays, n, extent, out):
    nv, nb = sino.shape
    idx = np.empty(2 * n + 4, dtype=np.int64)
    lens = np.empty(2 * n + 4)
    for v in range(nv):
        for b in range(nb):
            val = sino[v, b]
            if val == 0.0:
                continue
            c = _trace(rays[v, b, 0], rays[v, b, 1], rays[v, b, 2], rays[v, b, 3],
                       n, extent, idx, lens)
            for k in range(c):
                out[idx[k]] += val * lens[k]


def _check_image(u, g: FanGeometry) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (g.image_pixels, g.image_pixels):
        raise GeometryError(f"image {u.shape} does not match {g.image_pixels} pixels/side")
    return u


def siddon_project(u, g: FanGeometry) -> Sinogram:
    """Line integrals ``sum_j h_ij u_j`` with exact Siddon intersection lengths."""
    u = _check_image(u, g)
    out = np.zeros((g.n_views, g.detector_bins))
    _project(np.ascontiguousarray(u).ravel(), ray_endpoints(g), g.image_pixels,
             g.image_extent, out)
    return Sinogram(out, g)


def backproject(s, g: FanGeometry | None = None) -> np.ndarray:
    """Transpose of :func:`siddon_project` (same ``h_ij``)."""
    if isinstance(s, Sinogram):
        g = g or s.geometry
        data = s.data
    else:
        data = np.asarray(s, dtype=np.float64)
    out = np.zeros(g.image_pixels * g.image_pixels)
    _backproject(np.ascontiguousarray(data), ray_endpoints(g), g.image_pixels,
                 g.image_extent, out)
    return out.reshape(g.image_pixels, g.image_pixels)


def ray_lengths(g: FanGeometry, view: int, bin_: int):
    """``(pixel_indices, lengths)`` of one ray (flat row-major pixel index)."""
    n = g.image_pixels
    idx = np.empty(2 * n + 4, dtype=np.int64)
    lens = np.empty(2 * n + 4)
    sx, sy, px, py = ray_endpoints(g)[view, bin_]
    c = _trace(sx, sy, px, py, n, g.image_extent, idx, lens)
    return idx[:c].copy(), lens[:c].copy()


def system_matrix(g: FanGeometry):
    """Sparse ``(views*bins, pixels^2)`` system matrix, for small geometries and tests."""
    from scipy import sparse

    rows, cols, vals = [], [], []
    for v in range(g.n_views):
        for b in range(g.detector_bins):
            idx, lens = ray_lengths(g, v, b)
            rows.append(np.full(idx.size, v * g.detector_bins + b))
            cols.append(idx)
            vals.append(lens)
    return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(g.n_views * g.detector_bins, g.image_pixels ** 2))


# Noise ---------------------------------------------------------------------

def add_ct_noise(s: Sinogram, nm: NoiseModel, seed: int = 0) -> Sinogram:
    """Add independent Gaussian noise with variance ``f_i exp(mu_i / T)`` per bin."""
    if nm.mu.shape != s.data.shape:
        raise ValueError(f"noise model {nm.mu.shape} does not match sinogram {s.data.shape}")
    rng = np.random.default_rng(seed)
    return Sinogram(s.data + np.sqrt(nm.variance) * rng.standard_normal(s.data.shape),
                    s.geometry)


# FBP -----------------------------------------------------------------------

def ramp_filter(n: int, spacing: float) -> np.ndarray:
    """Frequency response of the band-limited Ram-Lak kernel on a padded grid."""
    size = 1 << int(math.ceil(math.log2(2 * n)))
    k = np.fft.fftfreq(size) * size
    h = np.zeros(size)
    h[0] = 1.0 / (4.0 * spacing ** 2)
    odd = (k.astype(int) % 2) != 0
    h[odd] = -1.0 / (np.pi * k[odd] * spacing) ** 2
    return np.real(np.fft.fft(h))


def fbp(s: Sinogram, g: FanGeometry | None = None) -> np.ndarray:
    """Fan-beam filtered backprojection for a flat equispaced detector.

    Detector samples are rescaled to a virtual detector through the
    rotation centre, cosine weighted, ramp filtered per view in the
    frequency domain, and backprojected with ``1/U^2`` distance weighting
    (``U`` the fractional source-to-pixel depth).
    """
    g = g or s.geometry
    data = s.data if isinstance(s, Sinogram) else np.asarray(s, dtype=np.float64)
    if g.n_views < 2:
        raise GeometryError("FBP needs at least two views")
    D = g.source_to_center
    mag = (D + g.detector_to_center) / D
    sv = g.bin_offsets() / mag
    ds = g.bin_size / mag
    nb = g.detector_bins

    weighted = data * (D / np.sqrt(D ** 2 + sv ** 2))[None, :]
    resp = ramp_filter(nb, ds)
    size = resp.size
    padded = np.zeros((g.n_views, size))
    padded[:, :nb] = weighted
    q = np.real(np.fft.ifft(np.fft.fft(padded, axis=1) * resp[None, :], axis=1))[:, :nb] * ds

    n = g.image_pixels
    coords = (np.arange(n) + 0.5) * g.pixel_size - g.image_extent / 2.0
    x = coords[None, :]
    y = -coords[:, None]
    img = np.zeros((n, n))
    for v, beta in enumerate(g.view_angles):
        c, sn = math.cos(beta), math.sin(beta)
        depth = D - (x * c + y * sn)
        sp = D * (-x * sn + y * c) / depth
        val = np.interp(sp, sv, q[v], left=0.0, right=0.0)
        img += val * (D / depth) ** 2
    return img * (math.pi / g.n_views)


# PWLS ----------------------------------------------------------------------

def pwls_weights(nm: NoiseModel | None, weighting: str, shape) -> np.ndarray:
    """Statistical weights ``1/delta^2`` (``pwls``), ``1/delta`` (``pwls_sqrt``) or ones."""
    if weighting == "unweighted" or nm is None:
        return np.ones(shape)
    var = nm.variance
    if weighting == "pwls":
        return 1.0 / var
    if weighting == "pwls_sqrt":
        return 1.0 / np.sqrt(var)
    raise ValueError(f"unknown weighting {weighting!r}")


def surrogate_curvature(g: FanGeometry, weights) -> np.ndarray:
    """``sum_i w_i h_ij sum_z h_iz`` per pixel: backprojection of ``w * H 1``."""
    ones = np.ones((g.image_pixels, g.image_pixels))
    return backproject(weights * siddon_project(ones, g).data, g)


def pwls_objective(u, y: Sinogram, weights, lam: float = 0.0, z=None) -> float:
    r = y.data - siddon_project(u, y.geometry).data
    val = float(np.sum(weights * r * r))
    if lam and z is not None:
        val += lam * float(np.sum((u - z) ** 2))
    return val


def pwls_step(u, y: Sinogram, lam: float = 0.0, grad=None, weights=None,
              curvature=None, prior: PriorContext | None = None) -> np.ndarray:
    """One simultaneous separable-paraboloid-surrogate update of every pixel.

    ``grad`` is the prior gradient at ``u`` (computed from ``prior`` when not
    given; zero when neither is given). Pixels with zero curvature (no ray
    coverage and ``lam == 0``) are left unchanged with a warning.
    """
    g = y.geometry
    u = _check_image(u, g)
    if weights is None:
        weights = np.ones_like(y.data)
    if curvature is None:
        curvature = surrogate_curvature(g, weights)
    if grad is None:
        grad = prior_gradient(prior, u) if prior is not None else np.zeros_like(u)
    resid = siddon_project(u, g).data - y.data
    num = backproject(weights * resid, g) + lam * grad
    den = curvature + lam
    holes = den <= 0
    if np.any(holes):
        warnings.warn(f"{int(holes.sum())} pixels have no ray coverage; left unchanged",
                      RuntimeWarning, stacklevel=2)
        den = np.where(holes, 1.0, den)
        num = np.where(holes, 0.0, num)
    return u - num / den


def _trace_row(k, u, truth, prev):
    row = {"iteration": k,
           "delta": float(np.linalg.norm(u - prev) / max(np.linalg.norm(prev), 1e-300))}
    if truth is not None:
        row["psnr"] = psnr(u, truth)
        row["ssim"] = ssim(u, truth)
        if min(truth.shape) >= 15:
            row["hfen"] = hfen(u, truth)
    return row


def reconstruct_ct(y: Sinogram, cfg: CtReconConfig, nm: NoiseModel | None = None,
                   truth=None, init=None, callback=None):
    """FBP-initialized PWLS iterations with the learned prior gradient.

    Returns ``(u, trace)`` as :func:`hfdaep.mri.reconstruct_mri` does.
    """
    g = y.geometry
    weights = pwls_weights(nm, cfg.weighting, y.data.shape)
    curvature = surrogate_curvature(g, weights)
    u = fbp(y) if init is None else _check_image(init, g).copy()
    trace = []
    for k in range(1, cfg.iterations + 1):
        prev = u
        if cfg.prior is not None and cfg.lam > 0:
            grad = prior_gradient(cfg.prior, u)
        else:
            grad = np.zeros_like(u)
        u = pwls_step(u, y, cfg.lam, grad, weights, curvature)
        if not np.all(np.isfinite(u)):
            raise ReconError(f"non-finite iterate at iteration {k}")
        trace.append(_trace_row(k, u, truth, prev))
        if callback is not None:
            callback(k, u)
    return u, trace
