"""Hitting-time generalization bound and the weight-analysis toolkit."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import pearsonr

from .env import EnvConfig, hitting_time, run_episode
from .data import episode_to_trajectory
from .model import ParameterSet
from .seeding import derive_seed, make_rng

KL_LABEL = "isotropic-Gaussian KL proxy"
SHIFT_LABEL = "single-policy plug-in (lower-bound estimate of the supremum)"
PREFIX_NOTE = ("synthetic trajectories start from real prefixes, so mixed samples are not independent; "
               "the bound treats them as if they were")


class DiagError(ValueError):
    pass


def _weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise DiagError("weights must be a nonempty vector")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise DiagError("weights must be finite and nonnegative")
    s = w.sum()
    if s <= 0:
        raise DiagError("zero-sum weights")
    return w / s


def n_eff(weights) -> float:
    """1 / sum(w_i^2) of the normalized weights."""
    w = _weights(weights)
    return float(1.0 / np.dot(w, w))


def kl_proxy(params, prior_params, sigma: float = 1.0, groups=("backbone", "theta")) -> float:
    """||theta - theta_0||^2 / (2 sigma^2) under a shared isotropic Gaussian width."""
    if not sigma > 0:
        raise DiagError("sigma must be > 0")
    a = params.flat(groups) if isinstance(params, ParameterSet) else np.asarray(params, dtype=np.float64)
    b = prior_params.flat(groups) if isinstance(prior_params, ParameterSet) else np.asarray(prior_params, dtype=np.float64)
    if a.shape != b.shape:
        raise DiagError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = (a - b).ravel()
    return float(np.dot(diff, diff) / (2.0 * sigma * sigma))


def epsilon_c(kl: float, delta: float, c: float = math.e) -> float:
    if not 1.0 < c <= math.e:
        raise DiagError(f"c must lie in (1, e], got {c}")
    if not 0.0 < delta < 1.0:
        raise DiagError(f"delta must lie in (0, 1), got {delta}")
    if kl < 0:
        raise DiagError("kl must be >= 0")
    return math.log(2.0) / (2.0 * math.log(c)) * (1.0 + math.log(1.0 + kl / math.log(2.0 / delta)))


@dataclass(frozen=True)
class BoundInputs:
    weights: tuple
    hitting_times: tuple
    h_max: float
    kl: float = 0.0
    delta: float = 0.05
    c: float = math.e
    C1: float = 1.0
    delta_task_hat: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        T = np.asarray(self.hitting_times, dtype=np.float64)
        if w.shape != T.shape or w.size == 0:
            raise DiagError("weights and hitting times must be nonempty and aligned")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise DiagError("weights must be nonnegative and sum to 1")
        if np.any(T < 0) or np.any(T > self.h_max):
            raise DiagError("hitting times must lie in [0, h_max]")
        if self.kl < 0 or self.delta_task_hat < 0 or self.C1 <= 0 or self.h_max <= 0:
            raise DiagError("kl, delta_task_hat must be >= 0; C1, h_max must be > 0")


@dataclass(frozen=True)
class BoundReport:
    weighted_empirical: float
    n_eff: float
    kl: float
    epsilon_c: float
    complexity_exact: float
    complexity_simplified: float
    task_shift_hat: float
    bound_exact: float
    bound_simplified: float
    kl_label: str = KL_LABEL
    task_shift_label: str = SHIFT_LABEL
    note: str = PREFIX_NOTE

    def to_json(self) -> dict:
        return asdict(self)


def pac_bound(inputs: BoundInputs) -> BoundReport:
    w = np.asarray(inputs.weights, dtype=np.float64)
    T = np.asarray(inputs.hitting_times, dtype=np.float64)
    emp = float(np.dot(w, T))
    ne = n_eff(w)
    log_term = math.log(2.0 / inputs.delta)
    eps = epsilon_c(inputs.kl, inputs.delta, inputs.c)
    exact = inputs.h_max * (1.0 + inputs.c) / (2.0 * math.sqrt(2.0)) * math.sqrt((inputs.kl + log_term + eps) / ne)
    simple = inputs.C1 * inputs.h_max * math.sqrt((inputs.kl + log_term) / ne)
    return BoundReport(emp, ne, float(inputs.kl), eps, exact, simple, float(inputs.delta_task_hat),
                       emp + exact + inputs.delta_task_hat, emp + simple + inputs.delta_task_hat)


def task_shift_estimate(policy, world, target_tasks, mixed_tasks, mixed_weights=None, n_rollouts: int = 64,
                        rng_seed: int = 0, config: EnvConfig | None = None) -> float:
    """|mean T over target tasks - mean T over weighted mixed tasks| for one policy.

    Both sides draw tasks with the same random stream and reuse the same
    per-episode seeds, so identical inputs give exactly zero.
    """
    if not target_tasks or not mixed_tasks:
        raise DiagError("empty task pool")
    cfg = config or world.config
    p_target = np.full(len(target_tasks), 1.0 / len(target_tasks))
    p_mixed = _weights(np.ones(len(mixed_tasks)) if mixed_weights is None else mixed_weights)

    def mean_time(tasks, p):
        picks = make_rng(rng_seed, "shift_tasks").choice(len(tasks), size=n_rollouts, p=p)
        times = []
        for i, k in enumerate(picks):
            task = tasks[int(k)]
            rng = make_rng(derive_seed(rng_seed, "shift_episode", i))
            state, rewards = run_episode(world, task, policy.start(world, task), rng, cfg)
            times.append(hitting_time(episode_to_trajectory(world, state, rewards, "shift"), cfg.h_max))
        return float(np.mean(times))

    return abs(mean_time(list(target_tasks), p_target) - mean_time(list(mixed_tasks), p_mixed))


# ---------------------------------------------------------------- weight analyses

@dataclass
class WeightChangeReport:
    changes: np.ndarray
    sources: tuple
    by_source: dict = field(default_factory=dict)


def weight_change_report(weights, sources: Sequence[str]) -> WeightChangeReport:
    """n * w_i - 1 per trajectory, with per-source summaries."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(sources),):
        raise DiagError("one source tag per weight required")
    changes = w.size * w - 1.0
    src = np.asarray(sources)
    summary = {}
    for s in sorted(set(sources)):
        c = changes[src == s]
        summary[s] = {"n": int(c.size), "mean": float(c.mean()), "median": float(np.median(c)),
                      "frac_positive": float(np.mean(c > 0))}
    return WeightChangeReport(changes, tuple(sources), summary)


def knn_mean_distance(points, reference, k: int = 10) -> np.ndarray:
    """Mean L1 distance from each point to its ``k`` nearest reference points."""
    P = np.atleast_2d(np.asarray(points, dtype=np.float64))
    R = np.atleast_2d(np.asarray(reference, dtype=np.float64))
    if R.shape[0] < k:
        raise DiagError(f"need at least {k} reference points, got {R.shape[0]}")
    D = cdist(P, R, metric="cityblock")
    return np.sort(D, axis=1)[:, :k].mean(axis=1)


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size or x.size < 2:
        raise DiagError("need two aligned vectors with at least 2 points")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise DiagError("constant input: correlation undefined")
    return float(pearsonr(x, y)[0])


def knn_distance_correlation(synth_embeddings, changes, offline_embeddings, k: int = 10) -> float:
    """Pearson r between synthetic weight change and mean-L1 distance to k offline neighbours."""
    dist = knn_mean_distance(synth_embeddings, offline_embeddings, k)
    return pearson(changes, dist)


@dataclass(frozen=True)
class ShiftMatrix:
    """Percentages; keys read as P(row state in B | column state in A)."""

    high_to_high: float
    high_to_low: float
    low_to_high: float
    low_to_low: float
    n: int

    @property
    def retention(self) -> float:
        return self.high_to_high

    @property
    def promotion(self) -> float:
        return self.low_to_high

    def to_json(self) -> dict:
        return asdict(self)


def weight_shift_matrix(weights_a: dict, weights_b: dict, quantile: float = 0.5) -> ShiftMatrix:
    """Classify each run's weights as high (strictly above the quantile) or low; cross-tabulate."""
    if set(weights_a) != set(weights_b):
        raise DiagError("trajectory id sets differ between runs")
    ids = sorted(weights_a)
    a = np.array([weights_a[i] for i in ids], dtype=np.float64)
    b = np.array([weights_b[i] for i in ids], dtype=np.float64)
    high_a = a > np.quantile(a, quantile)
    high_b = b > np.quantile(b, quantile)

    def pct(mask_b, mask_a):
        return float(100.0 * np.mean(mask_b[mask_a])) if mask_a.any() else float("nan")

    return ShiftMatrix(pct(high_b, high_a), pct(~high_b, high_a), pct(high_b, ~high_a), pct(~high_b, ~high_a), len(ids))


def per_trajectory_csv(ids, sources, weights, changes, knn_dist: dict | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "source", "weight", "rel_change", "knn_dist"])
    for i, s, wt, ch in zip(ids, sources, weights, changes):
        d = "" if knn_dist is None or i not in knn_dist else repr(float(knn_dist[i]))
        w.writerow([i, s, repr(float(wt)), repr(float(ch)), d])
    return buf.getvalue()
