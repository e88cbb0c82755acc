"""Training drivers: cross-entropy warm start, the adversarial loop that
plays attention maps against explanation maps, matcher ablations, and the
eta sweep. One worker owns all parameters; evaluation runs on snapshots.
"""

from __future__ import annotations

import hashlib
import math
import os
from contextlib import contextmanager
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import adversary as A
from . import explain as E
from . import matchers as MA
from . import metrics as ME
from . import model as M
from . import tensor as T
from .tensor import Tensor, backward

VARIANTS = ("baseline", "mse", "mmd", "coral", "aan", "paan")
EXPLAINERS = ("gradcam", "rise", "random")
ETA_SWEEP_DEFAULT = (0.0, 0.1, 0.01, 1.0, 10.0, 100.0)


class TrainingAbort(RuntimeError):
    """Non-finite loss; carries the offending term and a last-good snapshot."""

    def __init__(self, term, epoch, batch, last_good):
        super().__init__(
            f"non-finite {term} at epoch {epoch}, batch {batch}; "
            f"aborting with last-good parameters"
        )
        self.term = term
        self.epoch = epoch
        self.batch = batch
        self.last_good = last_good


@dataclass(frozen=True)
class TrainConfig:
    eta: float = 10.0
    variant: str = "paan"
    explainer: str = "gradcam"
    random_overlap: float = 0.07
    warm_epochs: int = 10
    adv_epochs: int = 30
    batch_size: int = 50
    lr_main: float = 0.1
    lr_disc: float = 0.05
    momentum: float = 0.9
    grad_clip: float = 5.0
    d_steps_per_g_step: int = 1
    lambda_js: float = 1.0
    lambda_chi2: float = 1.0
    rise_masks: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.explainer not in EXPLAINERS:
            raise ValueError(f"unknown explainer {self.explainer!r}")
        if self.eta < 0:
            raise ValueError("eta must not be negative")
        if min(self.lr_main, self.lr_disc) <= 0:
            raise ValueError("learning rates must be positive")
        if self.d_steps_per_g_step < 1:
            raise ValueError("d_steps_per_g_step must be at least 1")
        if min(self.warm_epochs, self.adv_epochs) < 0:
            raise ValueError("epoch counts must not be negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive")
        if min(self.lambda_js, self.lambda_chi2) < 0:
            raise ValueError("stabilizer weights must not be negative")
        if not 0.0 <= self.random_overlap <= 1.0:
            raise ValueError("random_overlap must lie in [0, 1]")
        if self.rise_masks < 1:
            raise ValueError("rise_masks must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")

    def fingerprint(self):
        text = "|".join(
            f"{f.name}={getattr(self, f.name)!r}" for f in fields(self)
        )
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class EpochRecord:
    epoch: int
    ce_loss: float
    d_loss: float
    g_loss: float
    js_term: float
    chi2_term: float
    match_loss: float
    metrics: ME.MetricReport


@dataclass
class RunReport:
    fingerprint: str
    variant: str
    records: list

    def __post_init__(self):
        for i, rec in enumerate(self.records):
            if rec.epoch != i:
                raise ValueError(f"epochs must be contiguous from 0, got {rec.epoch} at {i}")


@dataclass
class ModelState:
    model_config: M.VqaModelConfig
    params: dict
    disc_params: dict
    warm_history: list = field(default_factory=list)


class SgdMomentum:
    """Plain SGD with momentum and optional global-norm gradient clipping."""

    def __init__(self, params, lr, momentum=0.9, grad_clip=None):
        self.params = dict(params)
        self.lr = lr
        self.momentum = momentum
        self.grad_clip = grad_clip
        self.velocity = {name: np.zeros_like(t.data) for name, t in self.params.items()}

    def step(self):
        live = [(n, t) for n, t in self.params.items() if t.grad is not None]
        if self.grad_clip is not None and live:
            total = math.sqrt(sum(float(np.sum(t.grad * t.grad)) for _, t in live))
            if total > self.grad_clip:
                scale = self.grad_clip / total
                for _, t in live:
                    t.grad *= scale
        for name, t in live:
            v = self.velocity[name]
            v *= self.momentum
            v += t.grad
            t.data -= self.lr * v

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None


def clone_params(params):
    return {
        name: Tensor(t.data.copy(), requires_grad=True) for name, t in params.items()
    }


def clone_state(state):
    return ModelState(
        model_config=state.model_config,
        params=clone_params(state.params),
        disc_params=clone_params(state.disc_params),
        warm_history=list(state.warm_history),
    )


def init_state(model_config, config):
    return ModelState(
        model_config=model_config,
        params=M.init_params(model_config, config.seed),
        disc_params=A.init_discriminator_params(model_config.region_grid, config.seed),
    )


def split_dataset(samples):
    """Deterministic held-out split: every fifth sample validates."""
    train = [s for i, s in enumerate(samples) if i % 5 != 4]
    val = [s for i, s in enumerate(samples) if i % 5 == 4]
    return train, val


def stack_samples(samples):
    images = np.stack([s.image for s in samples])
    questions = np.stack([s.question for s in samples])
    answers = np.array([s.answer for s in samples])
    gts = np.stack([s.gt_attention for s in samples])
    return images, questions, answers, gts


def _check_finite(value, term, epoch, batch, last_good):
    if not math.isfinite(value):
        raise TrainingAbort(term, epoch, batch, last_good)
    return value


@contextmanager
def _term_guard(term, epoch, batch, last_good):
    """Convert non-finite rejections raised mid-forward into aborts."""
    try:
        yield
    except ValueError as err:
        if "finite" in str(err):
            raise TrainingAbort(term, epoch, batch, last_good) from err
        raise


def _snapshot(params):
    return {name: t.data.copy() for name, t in params.items()}


def evaluate(model_config, params, samples, emd_limit=50):
    """Held-out metrics from a detached forward pass.

    Rank correlation averages over pairs where both maps are non-constant;
    EMD (exact solver) is averaged over the first ``emd_limit`` samples to
    bound evaluation cost.
    """
    images, questions, answers, gts = stack_samples(samples)
    frozen = {name: Tensor(t.data) for name, t in params.items()}
    bundle = M.forward(model_config, frozen, images, questions)
    logits = M.answer_logits(frozen, bundle.g_f).data
    alpha = bundle.alpha.data
    accuracy = float(np.mean(np.argmax(logits, axis=1) == answers))

    grid = model_config.region_grid
    rcs = []
    overlaps = []
    entropies = []
    for i in range(len(samples)):
        flat_gt = gts[i].reshape(-1)
        rho, degenerate = ME.rank_correlation(alpha[i], flat_gt, with_flag=True)
        if not degenerate:
            rcs.append(rho)
        overlaps.append(ME.overlap(alpha[i], flat_gt))
        entropies.append(ME.entropy(alpha[i]))
    emds = [
        ME.emd(alpha[i].reshape(grid, grid), gts[i])
        for i in range(min(emd_limit, len(samples)))
    ]
    return ME.MetricReport(
        rank_correlation=float(np.mean(rcs)) if rcs else 0.0,
        emd=float(np.mean(emds)) if emds else 0.0,
        entropy=float(np.mean(entropies)),
        overlap=float(np.mean(overlaps)),
        accuracy=accuracy,
    )


def warm_start(state, dataset, config):
    """Cross-entropy-only pretraining of the feature and answer parameters."""
    train, val = split_dataset(dataset.samples)
    images, questions, answers, _ = stack_samples(train)
    opt = SgdMomentum(
        state.params, config.lr_main, config.momentum, config.grad_clip
    )
    last_good = _snapshot(state.params)
    for epoch in range(config.warm_epochs):
        order = np.random.default_rng([config.seed, 0x3A71, epoch]).permutation(len(train))
        for b, start in enumerate(range(0, len(train), config.batch_size)):
            idx = order[start:start + config.batch_size]
            with _term_guard("cross_entropy", epoch, b, last_good):
                bundle = M.forward(
                    state.model_config, state.params, images[idx], questions[idx]
                )
                logp = M.classify(state.params, bundle.g_f)
                ce = M.cross_entropy(logp, answers[idx])
            _check_finite(ce.item(), "cross_entropy", epoch, b, last_good)
            backward(ce)
            opt.step()
            opt.zero_grad()
        last_good = _snapshot(state.params)
        report = evaluate(state.model_config, state.params, val, emd_limit=0)
        state.warm_history.append({"epoch": epoch, "accuracy": report.accuracy})
    return state


def _supervision_maps(state, config, samples):
    """Fixed per-sample explanation maps for the rise and random explainers."""
    n = len(samples)
    grid = state.model_config.region_grid
    maps = np.empty((n, grid, grid))
    for i, sample in enumerate(samples):
        if config.explainer == "rise":
            emap = E.rise(
                state.model_config,
                state.params,
                sample,
                sample.answer,
                n_masks=config.rise_masks,
                rng_seed=[config.seed, 0x415E, i],
            )
        else:
            emap = E.random_explanation(
                sample.gt_attention, config.random_overlap, rng_seed=[config.seed, 0xAB, i]
            )
        maps[i] = emap.grid
    return maps


def train_adversarial(state, dataset, config):
    """Alternating optimization on a warm-started state.

    Per batch: a cross-entropy step on all model parameters; explanation
    maps extracted with true labels, detached; discriminator descents on
    (explanation real, attention fake); one attention-network descent on
    eta * (g_loss + lambda_js * JS + lambda_chi2 * chi2). Matcher variants
    swap the last two stages for eta * match_loss; baseline skips them.
    """
    mc = state.model_config
    grid = mc.region_grid
    train, val = split_dataset(dataset.samples)
    images, questions, answers, gts = stack_samples(train)
    adversarial = config.variant in ("aan", "paan")
    matching = config.variant in ("mse", "mmd", "coral")
    supervised = adversarial or matching

    fixed_maps = None
    if supervised and config.explainer in ("rise", "random"):
        fixed_maps = _supervision_maps(state, config, train)

    opt_main = SgdMomentum(state.params, config.lr_main, config.momentum, config.grad_clip)
    opt_disc = SgdMomentum(state.disc_params, config.lr_disc, config.momentum, config.grad_clip)
    discriminate = A.discriminate_pixel if config.variant == "paan" else A.discriminate_global

    records = []
    last_good = _snapshot(state.params)
    for epoch in range(config.adv_epochs):
        order = np.random.default_rng([config.seed, 0xDA7A, epoch]).permutation(len(train))
        sums = {"ce": 0.0, "d": 0.0, "g": 0.0, "js": 0.0, "chi2": 0.0, "match": 0.0}
        n_batches = 0
        for b, start in enumerate(range(0, len(train), config.batch_size)):
            idx = order[start:start + config.batch_size]
            nb = len(idx)
            n_batches += 1

            with _term_guard("cross_entropy", epoch, b, last_good):
                bundle = M.forward(mc, state.params, images[idx], questions[idx])
                logp = M.classify(state.params, bundle.g_f)
                ce = M.cross_entropy(logp, answers[idx])
            sums["ce"] += _check_finite(ce.item(), "cross_entropy", epoch, b, last_good)
            backward(ce)
            opt_main.step()
            opt_main.zero_grad()

            if not supervised:
                continue

            if fixed_maps is not None:
                mu = fixed_maps[idx]
            else:
                with _term_guard("explanation", epoch, b, last_good):
                    mu = E.grad_cam_batch(
                        mc, state.params, images[idx], questions[idx], answers[idx]
                    )
            mu_flat = Tensor(mu.reshape(nb, grid * grid))

            if adversarial:
                mu_grid = Tensor(mu)
                frozen = {name: Tensor(t.data) for name, t in state.params.items()}
                with _term_guard("d_loss", epoch, b, last_good):
                    still = M.forward(mc, frozen, images[idx], questions[idx])
                    cond = A.summarize_condition(still.g_i)
                    alpha_const = Tensor(still.alpha.data.reshape(nb, grid, grid))
                    for _ in range(config.d_steps_per_g_step):
                        real = discriminate(mu_grid, cond, state.disc_params)
                        fake = discriminate(alpha_const, cond, state.disc_params)
                        d_report = A.minimax_losses(real, fake)
                        sums["d"] += _check_finite(
                            d_report.d_loss.item(), "d_loss", epoch, b, last_good
                        ) / config.d_steps_per_g_step
                        backward(d_report.d_loss)
                        opt_disc.step()
                        opt_disc.zero_grad()

            if config.eta == 0.0:
                continue

            if adversarial:
                with _term_guard("g_loss", epoch, b, last_good):
                    live = M.forward(mc, state.params, images[idx], questions[idx])
                    disc_frozen = {
                        name: Tensor(t.data) for name, t in state.disc_params.items()
                    }
                    alpha_grid = T.reshape(live.alpha, (nb, grid, grid))
                    real = discriminate(mu_grid, cond, disc_frozen)
                    fake = discriminate(alpha_grid, cond, disc_frozen)
                    g_report = A.minimax_losses(real, fake, alpha=live.alpha, mu=mu_flat)
                sums["g"] += _check_finite(g_report.g_loss.item(), "g_loss", epoch, b, last_good)
                sums["js"] += _check_finite(g_report.js_term.item(), "js", epoch, b, last_good)
                sums["chi2"] += _check_finite(
                    g_report.chi2_term.item(), "chi2", epoch, b, last_good
                )
                total = config.eta * (
                    g_report.g_loss
                    + config.lambda_js * g_report.js_term
                    + config.lambda_chi2 * g_report.chi2_term
                )
            else:
                with _term_guard("match_loss", epoch, b, last_good):
                    live = M.forward(mc, state.params, images[idx], questions[idx])
                    match = MA.match_loss(
                        MA.MatchVariant(kind=config.variant), live.alpha, mu_flat
                    )
                sums["match"] += _check_finite(match.item(), "match_loss", epoch, b, last_good)
                total = config.eta * match
            backward(total)
            # The generator is the attention network: the supervision descent
            # moves only attn.* weights, so the features and classifier that
            # shape the explanation maps are trained by cross-entropy alone.
            # Moments are shared with the cross-entropy step, one velocity
            # stream per parameter.
            for name, t in state.params.items():
                if not name.startswith("attn."):
                    t.grad = None
            opt_main.step()
            opt_main.zero_grad()

        last_good = _snapshot(state.params)
        report = evaluate(mc, state.params, val)
        records.append(
            EpochRecord(
                epoch=epoch,
                ce_loss=sums["ce"] / n_batches,
                d_loss=sums["d"] / n_batches,
                g_loss=sums["g"] / n_batches,
                js_term=sums["js"] / n_batches,
                chi2_term=sums["chi2"] / n_batches,
                match_loss=sums["match"] / n_batches,
                metrics=report,
            )
        )
    return RunReport(
        fingerprint=config.fingerprint(), variant=config.variant, records=records
    )


def run_training(model_config, dataset, config):
    """Warm start followed by the adversarial phase; returns (state, report)."""
    state = init_state(model_config, config)
    warm_start(state, dataset, config)
    report = train_adversarial(state, dataset, config)
    return state, report


def eta_sweep(model_config, dataset, config, etas=ETA_SWEEP_DEFAULT, workers=1):
    """One adversarial run per eta from a shared warm start and seed.

    Runs are independent (cloned states), so a small thread pool can fan
    them out without changing any run's arithmetic.
    """
    if not etas:
        raise ValueError("etas must be non-empty")
    base = init_state(model_config, config)
    warm_start(base, dataset, config)

    def run_one(eta):
        state = clone_state(base)
        return train_adversarial(state, dataset, replace(config, eta=eta))

    if workers <= 1:
        reports = [run_one(eta) for eta in etas]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(run_one, etas))
    return list(zip(etas, reports))


def write_report_tsv(path, report):
    """Serialize per-epoch held-out metrics; rewrites the file from scratch."""
    if os.path.exists(path):
        os.remove(path)
    for rec in report.records:
        ME.append_metrics_row(path, rec.epoch, report.variant, rec.metrics)
