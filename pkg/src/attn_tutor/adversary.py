"""Adversarial supervision of attention maps.

A global discriminator scores a whole map as real (explanation) or fake
(attention); a pixel-wise discriminator applies one shared 1x1-conv
network per grid cell, acting as K logical discriminators without extra
parameters. Losses are clamped BCE; JS-divergence and Pearson chi^2
terms stabilize the generator side.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

CLAMP = 1e-7
DISC_HIDDEN = 8


@dataclass
class AdversarialLossReport:
    d_loss: Tensor
    g_loss: Tensor
    js_term: Tensor
    chi2_term: Tensor

    def __post_init__(self):
        for name in ("d_loss", "g_loss", "js_term", "chi2_term"):
            value = getattr(self, name).data
            if not np.all(np.isfinite(value)):
                raise ValueError(f"{name} is not finite")


def init_discriminator_params(grid, seed):
    """Both discriminators' parameters, named dg.* (global) and dp.* (pixel)."""
    rng = np.random.default_rng([seed, 0xD15C])
    cells = grid * grid

    def norm(shape, fan_in):
        return Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape), requires_grad=True)

    def zeros(shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    h = DISC_HIDDEN
    return {
        "dg.conv1.w": norm((3, 3, 2, h), 18),
        "dg.conv1.b": zeros(h),
        "dg.conv2.w": norm((3, 3, h, h), 9 * h),
        "dg.conv2.b": zeros(h),
        "dg.lin.w": norm((cells * h, 1), cells * h),
        "dg.lin.b": zeros(1),
        "dp.conv1.w": norm((1, 1, 2, h), 2),
        "dp.conv1.b": zeros(h),
        "dp.conv2.w": norm((1, 1, h, 1), h),
        "dp.conv2.b": zeros(1),
    }


def summarize_condition(g_i):
    """Channel-mean of the region features, detached: (B, G, G) constant."""
    return Tensor(np.mean(g_i.data, axis=-1))


def _stack_channels(grid_map, condition):
    b, g = grid_map.shape[0], grid_map.shape[1]
    m = T.reshape(grid_map, (b, g, g, 1))
    c = T.reshape(condition, (b, g, g, 1))
    return T.concat([m, c], axis=3)


def discriminate_global(grid_map, condition, params):
    """Whole-map real/fake probability: two 3x3 convs then a linear head."""
    x = _stack_channels(grid_map, condition)
    x = T.relu(T.conv2d(x, params["dg.conv1.w"], pad=1) + params["dg.conv1.b"])
    x = T.relu(T.conv2d(x, params["dg.conv2.w"], pad=1) + params["dg.conv2.b"])
    b = x.shape[0]
    flat = T.reshape(x, (b, -1))
    logit = T.matmul(flat, params["dg.lin.w"]) + params["dg.lin.b"]
    return T.reshape(T.sigmoid(logit), (b,))


def discriminate_pixel(grid_map, condition, params):
    """Per-cell probabilities from one shared 1x1-conv network: (B, G, G)."""
    x = _stack_channels(grid_map, condition)
    x = T.relu(T.conv2d(x, params["dp.conv1.w"], pad=0) + params["dp.conv1.b"])
    logit = T.conv2d(x, params["dp.conv2.w"], pad=0) + params["dp.conv2.b"]
    b, g = x.shape[0], x.shape[1]
    return T.reshape(T.sigmoid(logit), (b, g, g))


def _clamped_log(t):
    return T.log(T.clip(t, CLAMP, 1.0 - CLAMP))


def minimax_losses(d_real, d_fake, alpha=None, mu=None, saturating=False):
    """Clamped BCE minimax losses, averaged over batch and (for the
    pixel discriminator) over the K cells.

    d_loss is minimized by the discriminator. The generator minimizes
    the non-saturating -E[log D(fake)] by default; with saturating=True
    it minimizes exactly -d_loss (zero-sum bookkeeping). When alpha/mu
    batches are supplied the JS and chi^2 stabilizer terms are computed
    on them, otherwise they are zero.
    """
    for name, t in (("d_real", d_real), ("d_fake", d_fake)):
        if not np.all(np.isfinite(t.data)):
            raise ValueError(f"{name} contains non-finite probabilities")
    d_loss = -(T.tmean(_clamped_log(d_real)) + T.tmean(_clamped_log(1.0 - d_fake)))
    if saturating:
        g_loss = -d_loss
    else:
        g_loss = -T.tmean(_clamped_log(d_fake))
    zero = Tensor(np.zeros(()))
    js = js_divergence(alpha, mu) if alpha is not None else zero
    chi2 = pearson_chi2(alpha, mu) if alpha is not None else zero
    return AdversarialLossReport(d_loss=d_loss, g_loss=g_loss, js_term=js, chi2_term=chi2)


def _check_simplex_rows(t, name):
    data = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
    if np.min(data) < -1e-9:
        raise ValueError(f"{name} has negative mass")
    sums = data.sum(axis=-1)
    if np.max(np.abs(sums - 1.0)) > 1e-6:
        raise ValueError(f"{name} rows must lie on the simplex")


def js_divergence(p, q):
    """Jensen-Shannon divergence in nats, batch-meaned over leading axes.

    Computed as xlogy differences so empty cells contribute exactly zero
    and propagate no gradient spikes.
    """
    p = p if isinstance(p, Tensor) else Tensor(np.asarray(p, dtype=np.float64))
    q = q if isinstance(q, Tensor) else Tensor(np.asarray(q, dtype=np.float64))
    _check_simplex_rows(p, "p")
    _check_simplex_rows(q, "q")
    m = 0.5 * (p + q)
    kl_pm = T.tsum(T.xlogy(p, p) - T.xlogy(p, m), axis=-1)
    kl_qm = T.tsum(T.xlogy(q, q) - T.xlogy(q, m), axis=-1)
    return T.tmean(0.5 * kl_pm + 0.5 * kl_qm)


def pearson_chi2(p, q):
    """Pearson chi^2 divergence sum (p-q)^2 / q, q floored at 1e-7."""
    p = p if isinstance(p, Tensor) else Tensor(np.asarray(p, dtype=np.float64))
    q = q if isinstance(q, Tensor) else Tensor(np.asarray(q, dtype=np.float64))
    _check_simplex_rows(p, "p")
    _check_simplex_rows(q, "q")
    floored = T.clip(q, CLAMP, np.inf)
    return T.tmean(T.tsum(T.square(p - q) / floored, axis=-1))
