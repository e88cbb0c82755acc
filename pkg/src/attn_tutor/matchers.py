"""Non-adversarial map-matching losses: MSE, multi-bandwidth Gaussian
MMD, and CORAL on batch covariances. Each slots into the training loop
as a drop-in for the adversarial term so ablations isolate the loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

DEFAULT_BANDWIDTHS = (0.1, 1.0, 10.0)


@dataclass(frozen=True)
class MatchVariant:
    kind: str = "none"  # one of none, mse, mmd, coral
    kernel_bandwidths: tuple = DEFAULT_BANDWIDTHS

    def __post_init__(self):
        if self.kind not in ("none", "mse", "mmd", "coral"):
            raise ValueError(f"unknown matcher kind {self.kind!r}")
        if any(b <= 0 for b in self.kernel_bandwidths):
            raise ValueError("kernel bandwidths must be positive")


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _flat_batch(t):
    t = _as_tensor(t)
    if t.data.ndim == 1:
        return T.reshape(t, (1, -1))
    if t.data.ndim == 2:
        return t
    b = t.shape[0]
    return T.reshape(t, (b, -1))


def mse_loss(alpha, mu):
    """Mean over cells (and batch) of the squared map difference."""
    a = _as_tensor(alpha)
    m = _as_tensor(mu)
    if a.shape != m.shape:
        raise ShapeError(f"map shapes differ: {a.shape} vs {m.shape}")
    return T.tmean(T.square(a - m))


def _pairwise_sq_dists(x, y):
    bx, k = x.shape
    by = y.shape[0]
    diff = T.reshape(x, (bx, 1, k)) - T.reshape(y, (1, by, k))
    return T.tsum(T.square(diff), axis=2)


def mmd_loss(alpha_batch, mu_batch, bandwidths=DEFAULT_BANDWIDTHS):
    """Squared MMD (biased V-statistic) with Gaussian kernels
    exp(-||x-y||^2 / (2 sigma^2)), summed over bandwidths."""
    a = _flat_batch(alpha_batch)
    m = _flat_batch(mu_batch)
    if a.shape[0] < 2 or m.shape[0] < 2:
        raise ValueError("mmd needs batches of at least 2 maps")
    if a.shape[1] != m.shape[1]:
        raise ShapeError(f"map sizes differ: {a.shape[1]} vs {m.shape[1]}")
    daa = _pairwise_sq_dists(a, a)
    dmm = _pairwise_sq_dists(m, m)
    dam = _pairwise_sq_dists(a, m)
    total = Tensor(np.zeros(()))
    for sigma in bandwidths:
        scale = -1.0 / (2.0 * sigma * sigma)
        total = total + (
            T.tmean(T.exp(daa * scale))
            + T.tmean(T.exp(dmm * scale))
            - 2.0 * T.tmean(T.exp(dam * scale))
        )
    return total


def coral_loss(alpha_batch, mu_batch):
    """Frobenius distance between batch covariances, scaled by 1/(4 d^2)."""
    a = _flat_batch(alpha_batch)
    m = _flat_batch(mu_batch)
    if a.shape[0] < 2 or m.shape[0] < 2:
        raise ValueError("coral needs batches of at least 2 maps")
    if a.shape[1] != m.shape[1]:
        raise ShapeError(f"map sizes differ: {a.shape[1]} vs {m.shape[1]}")
    d = a.shape[1]

    def cov(x):
        b = x.shape[0]
        centered = x - T.tmean(x, axis=0, keepdims=True)
        return T.matmul(T.transpose(centered, (1, 0)), centered) * (1.0 / (b - 1))

    diff = cov(a) - cov(m)
    return T.tsum(T.square(diff)) * (1.0 / (4.0 * d * d))


def match_loss(variant: MatchVariant, alpha_batch, mu_batch):
    """Route a batch of attention maps to the loss named by the variant."""
    if variant.kind == "mse":
        return mse_loss(alpha_batch, mu_batch)
    if variant.kind == "mmd":
        return mmd_loss(alpha_batch, mu_batch, bandwidths=variant.kernel_bandwidths)
    return coral_loss(alpha_batch, mu_batch)
