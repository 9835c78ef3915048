import numpy as np

from hfdaep.dae import DaeModel, default_model


def random_model(channels=2, seed=0, depth=2, features=4, sigma_eta=0.1):
    """Small ReLU model with a nonzero output layer, so it is not the identity."""
    base = default_model(channels, sigma_eta, depth=depth, features=features, seed=seed)
    rng = np.random.default_rng(seed + 1000)
    weights = list(base.weights)
    w, b = weights[-1]
    weights[-1] = (rng.normal(0.0, 0.3, w.shape), rng.normal(0.0, 0.1, b.shape))
    return DaeModel(base.layers, weights, sigma_eta, channels)


def clip_length(sx, sy, px, py, half):
    """Chord of the segment S->P through the square [-half, half]^2 (slab clipping)."""
    d = np.stack([px - sx, py - sy])
    s = np.stack([sx, sy])
    lo, hi = np.zeros_like(sx), np.ones_like(sx)
    for k in range(2):
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-half - s[k]) / d[k]
            t2 = (half - s[k]) / d[k]
        flat = d[k] == 0
        inside = np.abs(s[k]) <= half
        tmin = np.where(flat, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
        tmax = np.where(flat, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
        lo, hi = np.maximum(lo, tmin), np.minimum(hi, tmax)
    return np.clip(hi - lo, 0, None) * np.hypot(*d)
