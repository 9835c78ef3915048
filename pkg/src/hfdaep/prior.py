"""High-frequency autoencoder prior and its gradient surrogate.

``G(u) = ||W(u) - A(W(u))||^2`` where ``W`` is the multi-profile
high-frequency transform and ``A`` the trained denoiser. The gradient
surrogate shifts the stack by ``r - J^T r`` (``r`` the autoencoder residual)
and maps the shift back to the image through the mean-based inverse
transform, i.e. ``u - W^{-1}(W(u) - shift)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dae import DaeModel, dae_forward, dae_residual_vjp
from .numerics import forward_diff_adjoint
from .transform import AlphaProfile, ProfileStack, forward_transform

__all__ = [
    "PriorContext",
    "prior_value",
    "residual_shift",
    "prior_gradient",
    "stack_to_image_shift",
]


@dataclass
class PriorContext:
    """Binds a denoiser to the transform that feeds it.

    ``precision`` selects the network arithmetic; solvers default to
    float32 for speed, derivative checks use float64.
    """

    model: DaeModel
    profile: AlphaProfile = AlphaProfile()
    include_gradients: bool = False
    precision: str = "float32"

    def channels_for(self, is_complex: bool) -> int:
        per_plane = len(self.profile) + (2 if self.include_gradients else 0)
        return per_plane * (2 if is_complex else 1)

    def check(self, u) -> None:
        need = self.channels_for(np.iscomplexobj(u))
        if need != self.model.in_channels:
            kind = "complex" if np.iscomplexobj(u) else "real"
            raise ValueError(f"{kind} input needs a {need}-channel model, "
                             f"got {self.model.in_channels}")


def prior_value(ctx: PriorContext, u) -> float:
    ctx.check(u)
    stack, _ = forward_transform(u, ctx.profile, ctx.include_gradients)
    out = dae_forward(ctx.model, stack.channels, ctx.precision)
    return float(np.sum((stack.channels - out) ** 2))


def residual_shift(ctx: PriorContext, x):
    """``r - J(x)^T r`` with ``r = x - A(x)``; half the gradient of ``||x - A(x)||^2``."""
    arr = x.channels if isinstance(x, ProfileStack) else np.asarray(x, dtype=np.float64)
    r, jtr = dae_residual_vjp(ctx.model, arr, ctx.precision)
    shift = r - jtr
    if isinstance(x, ProfileStack):
        return x.with_channels(shift)
    return shift


def stack_to_image_shift(shift: ProfileStack):
    """Map a stack-domain update back to the image domain.

    Tikhonov channels re-enter through the channel mean of the inverse
    transform (their low-pass companions cancel in an update). Gradient
    channels re-enter through the transposed forward difference, with the
    same ``1/N`` weight.
    """
    n = len(shift.profile)
    planes = []
    for p in range(shift.n_planes):
        block = shift.plane(p)
        img = block[:n].sum(axis=0)
        if shift.include_gradients:
            img = img + forward_diff_adjoint(block[n], axis=1)
            img = img + forward_diff_adjoint(block[n + 1], axis=0)
        planes.append(img / n)
    if shift.is_complex:
        return planes[0] + 1j * planes[1]
    return planes[0]


def prior_gradient(ctx: PriorContext, u):
    """Gradient surrogate of the prior at ``u`` (same type and shape as ``u``)."""
    ctx.check(u)
    stack, _ = forward_transform(u, ctx.profile, ctx.include_gradients)
    return stack_to_image_shift(residual_shift(ctx, stack))
