"""Evaluation metrics for attention maps.

Spearman rank correlation against a reference map, exact earth mover's
distance on the grid (with an entropic approximation for large grids),
map entropy, histogram overlap, and a TSV evaluation log.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError

# Largest grid the exact transportation solver accepts (16x16).
MAX_EXACT_CELLS = 256

TSV_COLUMNS = ("epoch", "variant", "rc", "emd", "entropy", "overlap", "accuracy")


class ConvergenceError(RuntimeError):
    """Iterative solver ran out of iterations; carries the last residual."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = float(residual)


@dataclass
class MetricReport:
    rank_correlation: float
    emd: float
    entropy: float
    overlap: float
    accuracy: float

    def __post_init__(self):
        self.rank_correlation = float(self.rank_correlation)
        self.emd = float(self.emd)
        self.entropy = float(self.entropy)
        self.overlap = float(self.overlap)
        self.accuracy = float(self.accuracy)
        # tiny slack for float round-off at the range edges
        eps = 1e-9
        if not -1.0 - eps <= self.rank_correlation <= 1.0 + eps:
            raise ValueError(f"rank_correlation {self.rank_correlation} outside [-1, 1]")
        if self.emd < -eps:
            raise ValueError(f"emd {self.emd} is negative")
        if self.entropy < -eps:
            raise ValueError(f"entropy {self.entropy} is negative")
        if not -eps <= self.overlap <= 1.0 + eps:
            raise ValueError(f"overlap {self.overlap} outside [0, 1]")
        if not -eps <= self.accuracy <= 1.0 + eps:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 1]")


def _as_float_array(a, name):
    arr = np.asarray(a, dtype=np.float64)
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _check_simplex(arr, name):
    if np.min(arr) < -1e-9:
        raise ValueError(f"{name} has negative mass {np.min(arr)}")
    total = float(np.sum(arr))
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"{name} sums to {total}, expected 1")


def average_ranks(values):
    """Doubled average ranks (ties share the mean rank) as exact integers.

    Doubling keeps tied ranks integral: a tie group occupying sorted
    positions i..j (0-based) gets doubled rank i + j + 2.
    """
    v = np.asarray(values).reshape(-1)
    order = np.argsort(v, kind="stable")
    sv = v[order]
    n = v.size
    doubled = np.empty(n, dtype=np.int64)
    start = 0
    for stop in range(1, n + 1):
        if stop == n or sv[stop] != sv[start]:
            doubled[order[start:stop]] = start + (stop - 1) + 2
            start = stop
    return doubled


def rank_correlation(a, b, *, with_flag=False):
    """Spearman rank correlation between two same-shape maps.

    Ties get average ranks. A constant map has zero rank variance; the
    correlation is then defined as 0.0 and flagged. Rank sums are exact
    integers, so equal inputs give bitwise-equal results regardless of
    any strictly increasing rescaling of the values.
    """
    x = _as_float_array(a, "a").reshape(-1)
    y = _as_float_array(b, "b").reshape(-1)
    if x.shape != y.shape:
        raise ShapeError(f"map shapes differ: {np.shape(a)} vs {np.shape(b)}")
    n = x.size
    if n < 2:
        raise ValueError("rank correlation needs at least 2 cells")
    if np.all(x == x[0]) or np.all(y == y[0]):
        return (0.0, True) if with_flag else 0.0
    rx = average_ranks(x)
    ry = average_ranks(y)
    # exact integer Pearson on the doubled ranks; one float rounding at the end
    sx = int(np.sum(rx))
    sy = int(np.sum(ry))
    sxy = int(np.dot(rx, ry))
    sxx = int(np.dot(rx, rx))
    syy = int(np.dot(ry, ry))
    num = n * sxy - sx * sy
    den = (n * sxx - sx * sx) * (n * syy - sy * sy)
    rho = min(1.0, max(-1.0, num / math.sqrt(den)))
    return (rho, False) if with_flag else rho


def _grid_layout(p, q):
    pp = _as_float_array(p, "p")
    qq = _as_float_array(q, "q")
    if pp.ndim != 2:
        raise ShapeError(f"expected a 2-d grid map, got shape {pp.shape}")
    if pp.shape != qq.shape:
        raise ShapeError(f"grid shapes differ: {pp.shape} vs {qq.shape}")
    _check_simplex(pp, "p")
    _check_simplex(qq, "q")
    h, w = pp.shape
    rows, cols = np.indices((h, w))
    centers = np.stack([rows.reshape(-1), cols.reshape(-1)], axis=1).astype(np.float64)
    return pp.reshape(-1), qq.reshape(-1), centers


def _pairwise_dist(xa, xb):
    d = xa[:, None, :] - xb[None, :, :]
    return np.sqrt(np.sum(d * d, axis=2))


def _transport(supply, demand, cost):
    """Dense transportation problem by successive shortest paths.

    Maintains node potentials so Dijkstra runs on nonnegative reduced
    costs; returns (flow, u, v) with dual potentials for the optimality
    certificate. Backward residual arcs carry reduced cost 0 by
    complementary slackness.
    """
    m, n = cost.shape
    rem_s = supply.copy()
    rem_t = demand.copy()
    flow = np.zeros((m, n))
    pot_s = np.zeros(m)
    pot_t = np.zeros(n)
    tiny = 1e-15 * max(1.0, float(np.sum(supply)))
    max_aug = 8 * (m + n) + 32

    for _ in range(max_aug):
        if float(np.sum(rem_s)) <= tiny or float(np.sum(rem_t)) <= tiny:
            break
        dist_s = np.where(rem_s > tiny, 0.0, np.inf)
        dist_t = np.full(n, np.inf)
        done_s = np.zeros(m, dtype=bool)
        done_t = np.zeros(n, dtype=bool)
        par_t = np.full(n, -1, dtype=np.int64)  # forward arc source -> sink
        par_s = np.full(m, -1, dtype=np.int64)  # backward arc sink -> source
        target = -1
        while True:
            cand_s = np.where(done_s, np.inf, dist_s)
            cand_t = np.where(done_t, np.inf, dist_t)
            i = int(np.argmin(cand_s))
            j = int(np.argmin(cand_t))
            ms, mt = cand_s[i], cand_t[j]
            if not np.isfinite(min(ms, mt)):
                break
            if mt <= ms:
                if rem_t[j] > tiny:
                    target = j
                    break
                done_t[j] = True
                # relax backward arcs along existing flow (reduced cost 0)
                back = (flow[:, j] > tiny) & ~done_s
                better = back & (dist_t[j] < dist_s)
                dist_s[better] = dist_t[j]
                par_s[better] = j
            else:
                done_s[i] = True
                nd = dist_s[i] + (cost[i] + pot_s[i] - pot_t)
                better = ~done_t & (nd < dist_t)
                dist_t[better] = nd[better]
                par_t[better] = i
        if target < 0:
            break
        dstar = dist_t[target]
        pot_s += np.minimum(dist_s, dstar)
        pot_t += np.minimum(dist_t, dstar)
        # walk back to a source with remaining supply, collecting the path
        path = []  # (i, j) forward arcs
        j = target
        while True:
            i = int(par_t[j])
            path.append((i, j))
            j2 = int(par_s[i])
            if j2 < 0:
                break
            j = j2
        start = path[-1][0]
        delta = min(rem_s[start], rem_t[target])
        # backward arc between consecutive forward arcs is (path[k].src, path[k+1].snk)
        for k in range(len(path) - 1):
            delta = min(delta, flow[path[k][0], path[k + 1][1]])
        for k, (i, j) in enumerate(path):
            flow[i, j] += delta
            if k + 1 < len(path):
                flow[i, path[k + 1][1]] -= delta
        rem_s[start] -= delta
        rem_t[target] -= delta
    else:
        raise RuntimeError("transportation solver exceeded its augmentation budget")

    return flow, -pot_s, pot_t


def _certify_optimal(cost, flow, u, v, supply, demand):
    scale = max(1.0, float(np.max(cost)))
    tol = 1e-9 * scale
    slack = cost - u[:, None] - v[None, :]
    if np.min(slack) < -tol:
        raise RuntimeError(f"dual infeasible: slack {np.min(slack)}")
    if np.max(np.abs(flow * slack)) > tol:
        raise RuntimeError("complementary slackness violated")
    if np.min(flow) < -tol:
        raise RuntimeError("negative flow")
    if np.max(np.abs(flow.sum(axis=1) - supply)) > 1e-9:
        raise RuntimeError("supply not conserved")
    if np.max(np.abs(flow.sum(axis=0) - demand)) > 1e-9:
        raise RuntimeError("demand not conserved")


def emd(p, q):
    """Exact 1-Wasserstein distance between two normalized grid maps.

    Euclidean ground metric on unit-spaced cell centers. Solved as a
    transportation problem on the surplus/deficit cells (shared mass
    stays in place, valid because the ground cost is a metric); the
    solution is certified optimal by complementary slackness.
    """
    pp = _as_float_array(p, "p")
    if pp.ndim == 2 and pp.size > MAX_EXACT_CELLS:
        raise ValueError(
            f"grid has {pp.size} cells, exact mode handles at most "
            f"{MAX_EXACT_CELLS}; use sinkhorn_emd instead"
        )
    qq = _as_float_array(q, "q")
    # canonical argument order makes emd(p, q) bitwise equal to emd(q, p)
    if qq.tobytes() < pp.tobytes():
        pp, qq = qq, pp
    pv, qv, centers = _grid_layout(pp, qq)
    pv = pv / np.sum(pv)
    qv = qv / np.sum(qv)
    r = pv - qv
    src = np.nonzero(r > 0)[0]
    snk = np.nonzero(r < 0)[0]
    if src.size == 0 or snk.size == 0:
        return 0.0
    supply = r[src]
    demand = -r[snk]
    cost = _pairwise_dist(centers[src], centers[snk])
    flow, u, v = _transport(supply, demand, cost)
    _certify_optimal(cost, flow, u, v, supply, demand)
    return float(np.sum(flow * cost))


def _logsumexp(m, axis):
    hi = np.max(m, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(hi), hi, 0.0)
    with np.errstate(divide="ignore"):
        out = safe + np.log(np.sum(np.exp(m - safe), axis=axis, keepdims=True))
    out = np.where(np.isfinite(hi), out, -np.inf)
    return np.squeeze(out, axis=axis)


def _round_to_marginals(plan, pv, qv):
    # rescale rows/columns below their targets, then patch the leftover
    # mass with a rank-1 correction; the result is exactly feasible
    rs = plan.sum(axis=1)
    x = np.minimum(1.0, np.divide(pv, rs, out=np.zeros_like(pv), where=rs > 0))
    plan = plan * x[:, None]
    cs = plan.sum(axis=0)
    y = np.minimum(1.0, np.divide(qv, cs, out=np.zeros_like(qv), where=cs > 0))
    plan = plan * y[None, :]
    er = np.maximum(0.0, pv - plan.sum(axis=1))
    ec = np.maximum(0.0, qv - plan.sum(axis=0))
    short = er.sum()
    if short > 1e-15:
        plan = plan + np.outer(er, ec) / short
    return plan


def sinkhorn_emd(p, q, epsilon=0.01, iters=20000, tol=1e-3):
    """Entropic approximation of emd, usable on grids of any size.

    Log-domain Sinkhorn iterations with epsilon annealing for a warm
    start. The final plan is rounded onto the transportation polytope,
    so the result is the cost of a feasible plan; it approaches the
    exact distance from above as epsilon shrinks. tol bounds the L1
    marginal residual before rounding.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    pv, qv, centers = _grid_layout(p, q)
    pv = pv / np.sum(pv)
    qv = qv / np.sum(qv)
    cost = _pairwise_dist(centers, centers)
    with np.errstate(divide="ignore"):
        lp = np.log(pv)
        lq = np.log(qv)
    f = np.zeros_like(pv)
    g = np.zeros_like(qv)

    # anneal from a coarse epsilon down to the requested one
    schedule = []
    e = max(epsilon, 1.0)
    while e > epsilon * 1.0000001:
        schedule.append(e)
        e *= 0.25
    schedule.append(epsilon)

    used = 0
    residual = np.inf
    for stage, eps in enumerate(schedule):
        last = stage == len(schedule) - 1
        budget = iters - used if last else min(60, max(0, iters - used))
        for it in range(budget):
            f = eps * (lp - _logsumexp((g[None, :] - cost) / eps, axis=1))
            g = eps * (lq - _logsumexp((f[:, None] - cost) / eps, axis=0))
            used += 1
            if last and (it % 10 == 9 or it == budget - 1):
                plan = np.exp((f[:, None] + g[None, :] - cost) / eps)
                residual = float(np.sum(np.abs(plan.sum(axis=1) - pv)))
                if residual <= tol:
                    plan = _round_to_marginals(plan, pv, qv)
                    return float(np.sum(plan * cost))
    if not np.isfinite(residual):
        plan = np.exp((f[:, None] + g[None, :] - cost) / schedule[-1])
        residual = float(np.sum(np.abs(plan.sum(axis=1) - pv)))
    raise ConvergenceError(
        f"sinkhorn did not converge after {iters} iterations "
        f"(marginal residual {residual:.3e})",
        residual,
    )


def entropy(p):
    """Shannon entropy -sum p ln p in nats, with 0 ln 0 = 0."""
    pv = _as_float_array(p, "p").reshape(-1)
    _check_simplex(pv, "p")
    terms = np.where(pv > 0, pv * np.log(np.where(pv > 0, pv, 1.0)), 0.0)
    return float(max(0.0, -np.sum(terms)))


def overlap(p, q):
    """Histogram intersection sum(min(p_i, q_i)) of two normalized maps."""
    pv = _as_float_array(p, "p").reshape(-1)
    qv = _as_float_array(q, "q").reshape(-1)
    if pv.shape != qv.shape:
        raise ShapeError(f"map shapes differ: {np.shape(p)} vs {np.shape(q)}")
    _check_simplex(pv, "p")
    _check_simplex(qv, "q")
    return float(np.sum(np.minimum(pv, qv)))


def append_metrics_row(path, epoch, variant, report):
    """Append one evaluation row to a TSV log, writing the header first."""
    fresh = not os.path.exists(path) or os.path.getsize(path) == 0
    row = (
        f"{epoch}\t{variant}\t{report.rank_correlation!r}\t{report.emd!r}"
        f"\t{report.entropy!r}\t{report.overlap!r}\t{report.accuracy!r}\n"
    )
    with open(path, "a", encoding="utf-8") as fh:
        if fresh:
            fh.write("\t".join(TSV_COLUMNS) + "\n")
        fh.write(row)
