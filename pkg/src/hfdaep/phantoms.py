"""Synthetic ellipse phantoms used as training and test corpora."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["PhantomSpec", "SHEPP_LOGAN", "ellipse_image", "shepp_logan", "random_ellipses",
           "make_phantoms"]

# Modified Shepp-Logan table (Toft): intensity, semi-axes a, b, centre x0, y0,
# rotation in degrees. Coordinates are normalized to [-1, 1] with y up.
SHEPP_LOGAN = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
    (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
    (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
)


@dataclass
class PhantomSpec:
    kind: str = "random_ellipses"
    size: int = 128
    count: int = 1
    seed: int = 0
    intensity_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.kind not in ("shepp_logan", "random_ellipses"):
            raise ValueError(f"unknown phantom kind {self.kind!r}")
        if self.size < 32:
            raise ValueError("phantom size must be >= 32")
        if self.count < 0:
            raise ValueError("count must be >= 0")
        lo, hi = self.intensity_range
        if not hi > lo:
            raise ValueError("intensity range must be increasing")


def _grid(size):
    c = (np.arange(size) + 0.5) * 2.0 / size - 1.0
    return np.meshgrid(c, -c)


def ellipse_image(size: int, ellipses) -> np.ndarray:
    """Sum of uniform ellipses sampled at pixel centres."""
    x, y = _grid(size)
    img = np.zeros((size, size))
    for amp, a, b, x0, y0, deg in ellipses:
        t = np.deg2rad(deg)
        xr = (x - x0) * np.cos(t) + (y - y0) * np.sin(t)
        yr = -(x - x0) * np.sin(t) + (y - y0) * np.cos(t)
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += amp
    return img


def shepp_logan(size: int = 128) -> np.ndarray:
    return ellipse_image(size, SHEPP_LOGAN)


def random_ellipses(size: int, rng: np.random.Generator,
                    intensity_range=(0.0, 1.0)) -> np.ndarray:
    """Body ellipse plus 4-11 random inner ellipses, clipped to ``intensity_range``.

    Every ellipse lies inside the disc of radius 0.9 (normalized units).
    """
    lo, hi = intensity_range
    n = int(rng.integers(5, 13))
    a0, b0 = rng.uniform(0.6, 0.85, 2)
    ellipses = [(rng.uniform(0.4, 0.8), a0, b0, 0.0, 0.0, rng.uniform(-30, 30))]
    for _ in range(n - 1):
        a, b = rng.uniform(0.03, 0.3, 2)
        reach = 0.85 * min(a0, b0) - max(a, b)
        r = rng.uniform(0.0, max(reach, 0.0))
        phi = rng.uniform(0, 2 * np.pi)
        ellipses.append((rng.uniform(-0.4, 0.5), a, b, r * np.cos(phi), r * np.sin(phi),
                         rng.uniform(0, 180)))
    img = ellipse_image(size, ellipses)
    return np.clip(lo + (hi - lo) * img, lo, hi)


def make_phantoms(spec: PhantomSpec) -> list[np.ndarray]:
    if spec.kind == "shepp_logan":
        lo, hi = spec.intensity_range
        return [lo + (hi - lo) * shepp_logan(spec.size) for _ in range(spec.count)]
    rng = np.random.default_rng(spec.seed)
    return [random_ellipses(spec.size, rng, spec.intensity_range) for _ in range(spec.count)]
