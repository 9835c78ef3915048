"""Denoising autoencoder over profile stacks.

The network is a RED-Net style encoder/decoder: ``depth`` valid 3x3
convolutions shrink the input, ``depth`` transposed convolutions grow it
back, and symmetric skip connections add encoder activations to the
mirrored decoder layers before their activation. The last decoder layer
adds the network input (global residual) and is linear.

A model is a plain description (:class:`Layer` table plus weights) so that
tiny hand-built models (identity, zero map, single 1x1 layer) go through
exactly the same code path as trained ones. Weights are held as float32;
evaluation can run in float32 (fast) or float64 (for derivative checks).
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .transform import ProfileStack

__all__ = [
    "Layer",
    "DaeModel",
    "TrainConfig",
    "TrainResult",
    "DaeTrainingError",
    "default_model",
    "identity_model",
    "zero_model",
    "linear_model",
    "dae_forward",
    "dae_vjp",
    "dae_forward_vjp",
    "dae_residual_vjp",
    "empirical_loss",
    "red_layers",
    "dae_train",
    "save_model",
    "load_model",
]

log = logging.getLogger(__name__)

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass(frozen=True)
class Layer:
    """One network layer.

    ``kind`` is ``"conv"`` (valid convolution, shrinks by ``k - 1``) or
    ``"deconv"`` (transposed convolution, grows by ``k - 1``).
    ``skip`` names the activation added before this layer's nonlinearity:
    ``-1`` for none, ``0`` for the network input, ``i >= 1`` for the output
    of layer ``i`` (1-based).
    """

    kind: str
    kh: int
    kw: int
    cin: int
    cout: int
    activation: str = "relu"
    skip: int = -1

    def weight_shape(self):
        if self.kind == "conv":
            return (self.cout, self.cin, self.kh, self.kw)
        return (self.cin, self.cout, self.kh, self.kw)


@dataclass
class DaeModel:
    layers: list[Layer]
    weights: list[tuple[np.ndarray, np.ndarray]]
    sigma_eta: float
    in_channels: int

    def __post_init__(self):
        if self.sigma_eta < 0 or not math.isfinite(self.sigma_eta):
            raise ValueError(f"sigma_eta must be finite and >= 0, got {self.sigma_eta}")
        if len(self.layers) != len(self.weights) or not self.layers:
            raise ValueError("need one (weight, bias) pair per layer and at least one layer")
        if self.layers[0].cin != self.in_channels or self.layers[-1].cout != self.in_channels:
            raise ValueError("first/last layer channels must equal in_channels")
        fixed = []
        for i, (layer, (w, b)) in enumerate(zip(self.layers, self.weights), start=1):
            if layer.kind not in ("conv", "deconv"):
                raise ValueError(f"layer {i}: unknown kind {layer.kind!r}")
            if layer.activation not in ("relu", "linear"):
                raise ValueError(f"layer {i}: unknown activation {layer.activation!r}")
            if not -1 <= layer.skip < i:
                raise ValueError(f"layer {i}: skip source {layer.skip} must precede it")
            w = np.ascontiguousarray(w, dtype=np.float32)
            b = np.ascontiguousarray(b, dtype=np.float32).reshape(-1)
            if w.shape != layer.weight_shape() or b.shape != (layer.cout,):
                raise ValueError(f"layer {i}: weight {w.shape}/bias {b.shape} mismatch")
            fixed.append((w, b))
        self.weights = fixed

    def __eq__(self, other):
        if not isinstance(other, DaeModel):
            return NotImplemented
        return (self.layers == other.layers and self.sigma_eta == other.sigma_eta
                and self.in_channels == other.in_channels
                and all(np.array_equal(w1, w2) and np.array_equal(b1, b2)
                        for (w1, b1), (w2, b2) in zip(self.weights, other.weights)))

    @property
    def border(self) -> int:
        """Smallest spatial size the encoder can consume minus one."""
        shrink, worst = 0, 0
        for layer in self.layers:
            if layer.kind == "conv":
                shrink += layer.kh - 1
            else:
                shrink -= layer.kh - 1
            worst = max(worst, shrink)
        return worst


def red_layers(channels: int, depth: int = 5, features: int = 32, kernel: int = 3,
               skip_step: int = 2) -> list[Layer]:
    """Layer table of the default encoder/decoder."""
    layers = []
    for i in range(depth):
        layers.append(Layer("conv", kernel, kernel, channels if i == 0 else features, features))
    for k in range(1, depth + 1):
        last = k == depth
        if last:
            skip = 0
        elif k % skip_step == 0:
            skip = depth - k
        else:
            skip = -1
        layers.append(Layer("deconv", kernel, kernel, features, channels if last else features,
                            "linear" if last else "relu", skip))
    return layers


def default_model(in_channels: int, sigma_eta: float = 25.0 / 255.0, depth: int = 5,
                  features: int = 32, seed: int = 0) -> DaeModel:
    """Freshly initialized encoder/decoder with zero biases.

    Weights are normal with variance ``1 / fan_in``, halved on layers that
    add a skip so activations stay bounded through the decoder.
    """
    layers = red_layers(in_channels, depth, features)
    rng = np.random.default_rng(seed)
    weights = []
    for layer in layers:
        fan_in = layer.cin * layer.kh * layer.kw
        var = (0.5 if layer.skip >= 0 else 1.0) / fan_in
        w = rng.normal(0.0, math.sqrt(var), layer.weight_shape())
        weights.append((w, np.zeros(layer.cout)))
    return DaeModel(layers, weights, sigma_eta, in_channels)


def linear_model(weight: float, channels: int = 1, bias: float = 0.0,
                 sigma_eta: float = 25.0 / 255.0) -> DaeModel:
    """Single linear 1x1 layer computing ``weight * x + bias`` per channel."""
    w = np.eye(channels).reshape(channels, channels, 1, 1) * weight
    b = np.full(channels, bias)
    return DaeModel([Layer("conv", 1, 1, channels, channels, "linear")], [(w, b)],
                    sigma_eta, channels)


def identity_model(channels: int, sigma_eta: float = 25.0 / 255.0) -> DaeModel:
    return linear_model(1.0, channels, sigma_eta=sigma_eta)


def zero_model(channels: int, sigma_eta: float = 25.0 / 255.0) -> DaeModel:
    return linear_model(0.0, channels, sigma_eta=sigma_eta)


def _params(model: DaeModel, dtype, requires_grad=False):
    out = []
    for w, b in model.weights:
        tw = torch.tensor(w, dtype=dtype, requires_grad=requires_grad)
        tb = torch.tensor(b, dtype=dtype, requires_grad=requires_grad)
        out.append((tw, tb))
    return out


def _run(layers, params, x):
    """Apply the layer graph to a ``(B, C, H, W)`` tensor."""
    acts = [x]
    h = x
    for i, (layer, (w, b)) in enumerate(zip(layers, params), start=1):
        if layer.kind == "conv":
            h = F.conv2d(h, w, b)
        else:
            h = F.conv_transpose2d(h, w, b)
        if layer.skip >= 0:
            src = acts[layer.skip]
            if src.shape != h.shape:
                raise ValueError(f"layer {i}: skip source shape {tuple(src.shape)} "
                                 f"!= {tuple(h.shape)}")
            h = h + src
        if layer.activation == "relu":
            h = torch.relu(h)
        acts.append(h)
    return h


def _as_array(x, model: DaeModel) -> np.ndarray:
    arr = x.channels if isinstance(x, ProfileStack) else np.asarray(x)
    if arr.ndim != 3:
        raise ValueError(f"expected a (C, H, W) stack, got shape {arr.shape}")
    if arr.shape[0] != model.in_channels:
        raise ValueError(f"stack has {arr.shape[0]} channels, model expects {model.in_channels}")
    if min(arr.shape[1:]) <= model.border:
        raise ValueError(f"stack {arr.shape[1:]} too small for a receptive border of "
                         f"{model.border}")
    return arr


def _wrap(like, arr):
    if isinstance(like, ProfileStack):
        return like.with_channels(arr)
    return arr


def dae_forward(model: DaeModel, x, precision: str = "float64"):
    """Evaluate the network on a stack (``ProfileStack`` or ``(C, H, W)`` array)."""
    arr = _as_array(x, model)
    dtype = _DTYPES[precision]
    with torch.no_grad():
        t = torch.from_numpy(np.ascontiguousarray(arr)).to(dtype)[None]
        out = _run(model.layers, _params(model, dtype), t)[0]
    return _wrap(x, out.double().numpy())


def dae_forward_vjp(model: DaeModel, x, v, precision: str = "float64"):
    """Return ``(A(x), J(x)^T v)`` from a single forward/backward pass."""
    arr = _as_array(x, model)
    varr = v.channels if isinstance(v, ProfileStack) else np.asarray(v)
    if varr.shape != arr.shape:
        raise ValueError(f"cotangent shape {varr.shape} != input shape {arr.shape}")
    dtype = _DTYPES[precision]
    t = torch.from_numpy(np.ascontiguousarray(arr)).to(dtype)[None].requires_grad_(True)
    out = _run(model.layers, _params(model, dtype), t)
    (grad,) = torch.autograd.grad(out, t, torch.from_numpy(np.ascontiguousarray(varr))
                                  .to(dtype)[None])
    return (_wrap(x, out.detach()[0].double().numpy()),
            _wrap(x, grad[0].double().numpy()))


def dae_residual_vjp(model: DaeModel, x, precision: str = "float64"):
    """Return ``(r, J(x)^T r)`` for the residual ``r = x - A(x)`` in one pass."""
    arr = _as_array(x, model)
    dtype = _DTYPES[precision]
    t = torch.from_numpy(np.ascontiguousarray(arr)).to(dtype)[None].requires_grad_(True)
    out = _run(model.layers, _params(model, dtype), t)
    # residual taken at compute precision, so an exact identity leaves r == 0
    r = (t.detach() - out.detach())[0].double().numpy()
    (grad,) = torch.autograd.grad(out, t, torch.from_numpy(r).to(dtype)[None])
    return r, grad[0].double().numpy()


def dae_vjp(model: DaeModel, x, v, precision: str = "float64"):
    """Vector-Jacobian product ``J(x)^T v`` by reverse-mode traversal."""
    return dae_forward_vjp(model, x, v, precision)[1]


@dataclass
class TrainConfig:
    patch_size: int = 40
    batch_size: int = 64
    epochs: int = 10
    learning_rate: float = 1e-3
    seed: int = 0
    patches_per_image: int = 4
    deterministic: bool = True
    precision: str = "float32"

    def __post_init__(self):
        for name in ("patch_size", "batch_size", "epochs", "patches_per_image"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class TrainResult:
    model: DaeModel
    epoch_loss: list[float] = field(default_factory=list)
    step_loss: list[float] = field(default_factory=list)
    initial_loss: float = float("nan")
    final_loss: float = float("nan")


class DaeTrainingError(RuntimeError):
    pass


def _stack_arrays(dataset):
    arrs = [np.asarray(d.channels if isinstance(d, ProfileStack) else d, dtype=np.float64)
            for d in dataset]
    if not arrs:
        raise DaeTrainingError("empty training dataset")
    return arrs


def empirical_loss(model: DaeModel, dataset, sigma_eta: float, seed: int = 1234,
                   precision: str = "float64") -> float:
    """Monte-Carlo estimate of ``E ||x - A(x + noise)||^2`` per element over whole stacks."""
    rng = np.random.default_rng(seed)
    total, count = 0.0, 0
    for arr in _stack_arrays(dataset):
        noisy = arr + sigma_eta * rng.standard_normal(arr.shape)
        out = dae_forward(model, noisy, precision)
        total += float(np.sum((arr - out) ** 2))
        count += arr.size
    return total / count


def dae_train(dataset, cfg: TrainConfig, sigma_eta: float | None = None,
              model: DaeModel | None = None, depth: int = 5, features: int = 32) -> TrainResult:
    """Fit the denoiser by minimizing ``E ||x - A(x + eta)||^2`` with Adam.

    Each epoch draws ``patches_per_image`` random patches from every stack
    in ``dataset``, shuffles them into batches and adds fresh Gaussian noise
    of standard deviation ``sigma_eta`` to every batch.
    """
    arrs = _stack_arrays(dataset)
    channels = arrs[0].shape[0]
    if sigma_eta is None:
        sigma_eta = model.sigma_eta if model is not None else 25.0 / 255.0
    if sigma_eta < 0:
        raise ValueError("sigma_eta must be non-negative")
    ps = cfg.patch_size
    if any(min(a.shape[1:]) < ps for a in arrs):
        raise DaeTrainingError(f"patch size {ps} exceeds a training image dimension")
    if model is None:
        model = default_model(channels, sigma_eta, depth, features, seed=cfg.seed)
    if model.in_channels != channels:
        raise DaeTrainingError(f"dataset has {channels} channels, model expects "
                               f"{model.in_channels}")

    if cfg.deterministic:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)
    dtype = _DTYPES[cfg.precision]
    rng = np.random.default_rng(cfg.seed)
    params = _params(model, dtype, requires_grad=True)
    flat = [p for pair in params for p in pair]
    opt = torch.optim.Adam(flat, lr=cfg.learning_rate)

    result = TrainResult(model)
    result.initial_loss = empirical_loss(model, arrs, sigma_eta)
    for epoch in range(1, cfg.epochs + 1):
        picks = [(i, rng.integers(0, a.shape[1] - ps + 1), rng.integers(0, a.shape[2] - ps + 1))
                 for i, a in enumerate(arrs) for _ in range(cfg.patches_per_image)]
        order = rng.permutation(len(picks))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            sel = order[start:start + cfg.batch_size]
            clean = np.stack([arrs[picks[k][0]][:, picks[k][1]:picks[k][1] + ps,
                                                picks[k][2]:picks[k][2] + ps] for k in sel])
            noisy = clean + sigma_eta * rng.standard_normal(clean.shape)
            tc = torch.from_numpy(clean).to(dtype)
            tn = torch.from_numpy(noisy).to(dtype)
            opt.zero_grad()
            loss = torch.mean((_run(model.layers, params, tn) - tc) ** 2)
            loss.backward()
            opt.step()
            val = float(loss.detach())
            if not math.isfinite(val):
                raise DaeTrainingError(f"training diverged (non-finite loss) in epoch {epoch}")
            losses.append(val)
        result.step_loss.extend(losses)
        result.epoch_loss.append(float(np.mean(losses)))
        log.info("epoch %d loss %.6g", epoch, result.epoch_loss[-1])

    trained = DaeModel(model.layers,
                       [(w.detach().float().numpy(), b.detach().float().numpy())
                        for w, b in params],
                       sigma_eta, model.in_channels)
    result.model = trained
    result.final_loss = empirical_loss(trained, arrs, sigma_eta)
    return result


# HFDM model files ----------------------------------------------------------

_MAGIC = b"HFDM"
_VERSION = 1
_KINDS = {"conv": 0, "deconv": 1}
_ACTS = {"linear": 0, "relu": 1}


def save_model(model: DaeModel, path) -> None:
    """Write ``model`` as an HFDM file.

    Layout (little-endian): ``b"HFDM"``, u8 version, f64 sigma_eta,
    u32 in_channels, u32 layer count; per layer u8 kind, u8 activation,
    u32 kh, kw, cin, cout, i32 skip; then float32 weight and bias blobs
    in layer order.
    """
    parts = [_MAGIC, struct.pack("<BdII", _VERSION, model.sigma_eta, model.in_channels,
                                 len(model.layers))]
    for layer in model.layers:
        parts.append(struct.pack("<BBIIIIi", _KINDS[layer.kind], _ACTS[layer.activation],
                                 layer.kh, layer.kw, layer.cin, layer.cout, layer.skip))
    for w, b in model.weights:
        parts.append(w.astype("<f4").tobytes())
        parts.append(b.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_model(path) -> DaeModel:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not an HFDM model file")
    version, sigma, cin, n = struct.unpack_from("<BdII", data, 4)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported HFDM version {version}")
    off = 4 + struct.calcsize("<BdII")
    kinds = {v: k for k, v in _KINDS.items()}
    acts = {v: k for k, v in _ACTS.items()}
    layers = []
    rec = struct.calcsize("<BBIIIIi")
    for _ in range(n):
        kind, act, kh, kw, ci, co, skip = struct.unpack_from("<BBIIIIi", data, off)
        layers.append(Layer(kinds[kind], kh, kw, ci, co, acts[act], skip))
        off += rec
    weights = []
    for layer in layers:
        shape = layer.weight_shape()
        nw = int(np.prod(shape))
        w = np.frombuffer(data, "<f4", nw, off).reshape(shape).astype(np.float32)
        off += 4 * nw
        b = np.frombuffer(data, "<f4", layer.cout, off).astype(np.float32)
        off += 4 * layer.cout
        weights.append((w, b))
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes")
    return DaeModel(layers, weights, sigma, cin)
