"""Explanation maps that stand in for human attention: Grad-CAM from the
classifier's own gradients, RISE from randomized masking, and a random
control whose histogram intersection with the ground truth is tunable.
All maps are detached numpy arrays on the probability simplex.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .model import _pool_matrix, answer_logits, forward, log_softmax
from .tensor import Tensor, backward

MAP_SOURCES = ("gradcam", "rise", "random")


@dataclass(frozen=True)
class ExplanationMap:
    grid: np.ndarray  # (G, G) nonnegative, sums to 1
    source: str
    degenerate: bool = False  # uniform fallback was taken

    def __post_init__(self):
        object.__setattr__(self, "grid", np.asarray(self.grid, dtype=np.float64))
        if self.source not in MAP_SOURCES:
            raise ValueError(f"unknown map source {self.source!r}")
        if self.grid.ndim != 2 or self.grid.shape[0] != self.grid.shape[1]:
            raise ValueError(f"explanation map must be square, got {self.grid.shape}")
        if self.grid.min() < 0.0:
            raise ValueError("explanation map has negative mass")
        if abs(self.grid.sum() - 1.0) > 1e-9:
            raise ValueError(f"explanation map sums to {self.grid.sum()!r}, not 1")


def _normalize_or_uniform(grid):
    """Project a nonnegative map to the simplex; all-zero maps go uniform."""
    total = grid.sum()
    if total <= 1e-300:
        return np.full(grid.shape, 1.0 / grid.size), True
    return grid / total, False


def _pool_maps_to_grid(maps, grid):
    # maps: (B, E, E) at the conv extent; mean-pool to (B, G, G) if needed.
    extent = maps.shape[1]
    if extent == grid:
        return maps
    pool = _pool_matrix(extent, grid)
    return np.einsum("ir,js,brs->bij", pool, pool, maps)


def _detached_params(params):
    return {name: Tensor(t.data) for name, t in params.items()}


def _cam_from_activations(act, act_grad, grid):
    """relu(sum_k mu_k A_k) per sample, pooled and projected to the simplex."""
    weights = act_grad.mean(axis=(1, 2))  # (B, C) spatially averaged
    cam = np.maximum(np.einsum("bc,bxyc->bxy", weights, act), 0.0)
    cam = _pool_maps_to_grid(cam, grid)
    out = np.empty_like(cam)
    for i in range(cam.shape[0]):
        out[i], _ = _normalize_or_uniform(cam[i])
    return out


def grad_cam_batch(config, params, images, questions, true_classes):
    """Channel-weighted conv activations for each sample's labelled class.

    Returns a detached (B, G, G) array of simplex maps. Parameter
    gradients are left exactly as they were on entry.
    """
    true_classes = np.asarray(true_classes)
    if true_classes.min() < 0 or true_classes.max() >= config.answer_classes:
        raise ValueError(
            f"class id out of range [0, {config.answer_classes}): {true_classes}"
        )
    # Backward deposits into params; park existing grads and restore after.
    saved = [(t, t.grad) for t in params.values() if isinstance(t, Tensor)]
    for t, _ in saved:
        t.grad = None
    try:
        bundle = forward(config, params, images, questions)
        logits = answer_logits(params, bundle.g_f)
        onehot = np.zeros(logits.shape)
        onehot[np.arange(len(true_classes)), true_classes] = 1.0
        # Samples never mix across the batch, so the gradient of the summed
        # selected logits recovers each sample's own d logit / d activation.
        backward(T.tsum(logits * Tensor(onehot)))
        act = bundle.conv_act.data
        act_grad = bundle.conv_act.grad
    finally:
        for t, g in saved:
            t.grad = g
    return _cam_from_activations(act, act_grad, config.region_grid)


def grad_cam(config, params, sample, true_class):
    maps = grad_cam_batch(
        config, params, sample.image[None], sample.question[None], [true_class]
    )
    return ExplanationMap(grid=maps[0], source="gradcam")


def _upsample_bilinear(masks, size):
    """(N, g, g) -> (N, size, size), half-pixel centers, edges clamped."""
    coarse = masks.shape[1]
    src = (np.arange(size) + 0.5) * (coarse / size) - 0.5
    lo = np.clip(np.floor(src).astype(int), 0, coarse - 1)
    hi = np.clip(lo + 1, 0, coarse - 1)
    w = np.clip(src - np.floor(src), 0.0, 1.0)
    rows = masks[:, lo, :] * (1.0 - w)[None, :, None] + masks[:, hi, :] * w[None, :, None]
    return rows[:, :, lo] * (1.0 - w)[None, None, :] + rows[:, :, hi] * w[None, None, :]


def _true_class_probs(config, params, images, questions, true_class):
    frozen = _detached_params(params)
    bundle = forward(config, frozen, images, questions)
    logp = log_softmax(answer_logits(frozen, bundle.g_f))
    return np.exp(logp.data[:, true_class])


def rise(config, params, sample, true_class, n_masks=1000, keep_prob=0.5, rng_seed=0):
    """Probability-weighted average of random occlusion masks."""
    if n_masks < 1:
        raise ValueError("n_masks must be at least 1")
    if not 0.0 < keep_prob < 1.0:
        raise ValueError("keep_prob must lie strictly between 0 and 1")
    if not 0 <= true_class < config.answer_classes:
        raise ValueError(f"class id out of range [0, {config.answer_classes}): {true_class}")
    grid = config.region_grid
    coarse = math.ceil(grid / 2)
    size = config.image_size
    rng = np.random.default_rng(rng_seed)
    masks = (rng.random((n_masks, coarse, coarse)) < keep_prob).astype(np.float64)
    up = _upsample_bilinear(masks, size)
    sal = np.zeros((size, size))
    questions = np.tile(sample.question[None], (n_masks, 1))
    chunk = 256  # caps the im2col buffer while batching mask evaluations
    for start in range(0, n_masks, chunk):
        piece = up[start:start + chunk]
        masked = sample.image[None] * piece[..., None]
        probs = _true_class_probs(
            config, params, masked, questions[start:start + chunk], true_class
        )
        sal += np.einsum("n,nxy->xy", probs, piece)
    pooled = _pool_maps_to_grid((sal / n_masks)[None], grid)[0]
    out, degenerate = _normalize_or_uniform(pooled)
    return ExplanationMap(grid=out, source="rise", degenerate=degenerate)


def _disjoint_leaning_draw(gt, rng):
    """Random simplex map avoiding gt's support as much as possible."""
    flat = gt.reshape(-1)
    empty = flat < 1e-12
    weights = np.zeros(flat.size)
    if empty.any():
        weights[empty] = rng.random(int(empty.sum()))
        if weights.sum() <= 0.0:
            weights[empty] = 1.0
    else:
        weights[np.argmin(flat)] = 1.0
    return (weights / weights.sum()).reshape(gt.shape)


def _intersection(p, q):
    return float(np.minimum(p, q).sum())


def random_explanation(gt_attention, overlap_target, rng_seed=0):
    """Random map whose histogram intersection with gt hits the target.

    Mixes gt with a disjoint-leaning random draw; the intersection is
    continuous and nondecreasing in the mixing weight, so a bisection
    lands within the +/-0.02 contract anywhere in the achievable range.
    """
    gt = np.asarray(gt_attention, dtype=np.float64)
    if abs(gt.sum() - 1.0) > 1e-9 or gt.min() < 0.0:
        raise ValueError("gt attention must lie on the simplex")
    if not 0.0 <= overlap_target <= 1.0:
        raise ValueError(f"overlap target must lie in [0, 1], got {overlap_target}")
    if overlap_target == 1.0:
        return ExplanationMap(grid=gt.copy(), source="random")
    rng = np.random.default_rng(rng_seed)
    base = _disjoint_leaning_draw(gt, rng)
    floor = _intersection(gt, base)
    if overlap_target < floor - 0.02:
        raise ValueError(
            f"overlap target {overlap_target} unattainable; "
            f"achievable range is [{floor:.4f}, 1.0]"
        )
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        mixed = mid * gt + (1.0 - mid) * base
        if _intersection(gt, mixed) < overlap_target:
            lo = mid
        else:
            hi = mid
    mixed = hi * gt + (1.0 - hi) * base
    return ExplanationMap(grid=mixed / mixed.sum(), source="random")


def write_map_csv(path, grid):
    """Row-major CSV grid: G rows of G comma-separated decimals."""
    grid = np.asarray(grid)
    lines = [",".join(repr(float(v)) for v in row) for row in grid]
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def read_map_csv(path):
    with open(path) as fh:
        rows = [[float(v) for v in line.split(",")] for line in fh.read().splitlines() if line]
    return np.array(rows)
