"""Multi-profile high-frequency transform and its mean-based inverse.

The Tikhonov low-pass ``(I + alpha * D^T D)^{-1}`` uses periodic forward
differences ``D``, so it is diagonal in the DFT basis and solved exactly by
pointwise division with the symbol ``1 + alpha * s(w)`` where
``s(j, k) = 4 sin^2(pi j / H) + 4 sin^2(pi k / W)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .numerics import as_complex_grid, as_real_grid, forward_diff

__all__ = [
    "DEFAULT_ALPHAS",
    "AlphaProfile",
    "ProfileStack",
    "LowpassSet",
    "laplacian_symbol",
    "lowpass",
    "highpass",
    "forward_transform",
    "backward_transform",
]

DEFAULT_ALPHAS = (1000.0, 800.0, 400.0, 50.0)

TIKHONOV = "tikhonov_hf"
GRAD_X = "gradient_x"
GRAD_Y = "gradient_y"


@dataclass(frozen=True)
class AlphaProfile:
    """Ordered, strictly decreasing set of positive Tikhonov weights."""

    alphas: tuple[float, ...] = DEFAULT_ALPHAS

    def __post_init__(self):
        alphas = tuple(float(a) for a in self.alphas)
        if len(alphas) < 1:
            raise ValueError("an alpha profile needs at least one weight")
        if any(not np.isfinite(a) or a <= 0 for a in alphas):
            raise ValueError(f"alphas must be finite and positive, got {alphas}")
        if any(a <= b for a, b in zip(alphas, alphas[1:])):
            raise ValueError(f"alphas must be strictly decreasing, got {alphas}")
        object.__setattr__(self, "alphas", alphas)

    @classmethod
    def parse(cls, text: str) -> "AlphaProfile":
        """Build a profile from a comma separated list such as ``"1000,800,400,50"``."""
        return cls(tuple(float(t) for t in text.replace(" ", "").split(",") if t))

    def __len__(self):
        return len(self.alphas)


@dataclass
class ProfileStack:
    """Channel stack ``(C, H, W)`` of high-frequency components.

    For a real image the channels are the ``N`` Tikhonov high-pass bands
    (then, optionally, the x and y forward differences). For a complex
    image the same block is laid out for the real plane first and then the
    imaginary plane, so ``C = 2 * channels_per_plane``.
    """

    channels: np.ndarray
    profile: AlphaProfile
    kinds: tuple[str, ...]
    is_complex: bool = False

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float64)
        if self.channels.ndim != 3:
            raise ValueError(f"stack channels must be (C, H, W), got {self.channels.shape}")
        planes = 2 if self.is_complex else 1
        if len(self.kinds) * planes != self.channels.shape[0]:
            raise ValueError(
                f"{self.channels.shape[0]} channels do not match {len(self.kinds)} kinds "
                f"x {planes} planes"
            )

    @property
    def shape(self):
        return self.channels.shape

    @property
    def n_planes(self) -> int:
        return 2 if self.is_complex else 1

    @property
    def per_plane(self) -> int:
        return len(self.kinds)

    @property
    def include_gradients(self) -> bool:
        return GRAD_X in self.kinds

    def plane(self, p: int) -> np.ndarray:
        n = self.per_plane
        return self.channels[p * n:(p + 1) * n]

    def with_channels(self, channels: np.ndarray) -> "ProfileStack":
        """Same layout, new channel data (used for network outputs and updates)."""
        return ProfileStack(np.asarray(channels), self.profile, self.kinds, self.is_complex)


@dataclass
class LowpassSet:
    """Low-pass companions ``(n_planes * N, H, W)`` of a stack's Tikhonov channels."""

    lows: np.ndarray
    is_complex: bool = False
    profile: AlphaProfile = field(default_factory=AlphaProfile)


def laplacian_symbol(shape) -> np.ndarray:
    """DFT symbol of ``D^T D`` for periodic forward differences."""
    h, w = shape
    sy = 4.0 * np.sin(np.pi * np.arange(h) / h) ** 2
    sx = 4.0 * np.sin(np.pi * np.arange(w) / w) ** 2
    return sy[:, None] + sx[None, :]


def lowpass(u, alpha: float) -> np.ndarray:
    """Tikhonov low-pass ``(I + alpha D^T D)^{-1} u`` of a real grid."""
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    u = as_real_grid(u)
    if alpha == 0:
        return u.copy()
    gain = 1.0 / (1.0 + alpha * laplacian_symbol(u.shape))
    # the filter has unit DC gain, so pulling out a reference level first
    # keeps constant grids bit-exact
    ref = u.flat[0]
    return ref + np.fft.ifft2(np.fft.fft2(u - ref) * gain).real


def highpass(u, alpha: float) -> np.ndarray:
    return np.asarray(u, dtype=np.float64) - lowpass(u, alpha)


def _planes(u):
    arr = np.asarray(u)
    if np.iscomplexobj(arr):
        c = as_complex_grid(arr)
        return [c.real.copy(), c.imag.copy()], True
    return [as_real_grid(arr)], False


def forward_transform(u, profile: AlphaProfile | Sequence[float] | None = None,
                      include_gradients: bool = False) -> tuple[ProfileStack, LowpassSet]:
    """Decompose ``u`` into its multi-profile high-frequency stack.

    Returns the stack ``W(u)`` together with the low-pass parts needed by
    :func:`backward_transform`. Complex inputs are split into real and
    imaginary planes which are transformed independently.
    """
    if profile is None:
        profile = AlphaProfile()
    elif not isinstance(profile, AlphaProfile):
        profile = AlphaProfile(tuple(profile))
    planes, is_complex = _planes(u)
    kinds = (TIKHONOV,) * len(profile)
    if include_gradients:
        kinds += (GRAD_X, GRAD_Y)

    channels, lows = [], []
    for plane in planes:
        spec = np.fft.fft2(plane)
        sym = laplacian_symbol(plane.shape)
        for a in profile.alphas:
            low = np.fft.ifft2(spec / (1.0 + a * sym)).real
            lows.append(low)
            channels.append(plane - low)
        if include_gradients:
            channels.append(forward_diff(plane, axis=1))
            channels.append(forward_diff(plane, axis=0))
    stack = ProfileStack(np.stack(channels), profile, kinds, is_complex)
    return stack, LowpassSet(np.stack(lows), is_complex, profile)


def backward_transform(updated: ProfileStack, lows: LowpassSet):
    """Mean over Tikhonov channels of ``channel + low``, per plane.

    Gradient channels carry no low-pass complement and are ignored here.
    """
    n = len(updated.profile)
    if updated.is_complex != lows.is_complex:
        raise ValueError("stack and low-pass set disagree on complexness")
    if lows.lows.shape != (updated.n_planes * n,) + updated.shape[1:]:
        raise ValueError(
            f"low-pass set {lows.lows.shape} does not pair with stack {updated.shape}"
        )
    out = []
    for p in range(updated.n_planes):
        tik = updated.plane(p)[:n]
        out.append(np.mean(tik + lows.lows[p * n:(p + 1) * n], axis=0))
    if updated.is_complex:
        return out[0] + 1j * out[1]
    return out[0]
