"""Policy extraction from value heads, live rollouts, and evaluation reports."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Trajectory, episode_to_trajectory
from .env import EnvConfig, EnvState, TaskSpec, hitting_time, run_episode
from .model import ILQL, MC, Cursor, ParameterSet, softmax_np
from .seeding import derive_seed, make_rng

SAMPLE = "sample"
GREEDY = "greedy"

RESULT_FIELDS = ("method", "algo", "regime", "seed", "mean", "se", "success_rate", "mean_hitting_time")


class EvalError(ValueError):
    pass


@dataclass
class ExtractedPolicy:
    """Softmax over beta * Q (MC) or beta * (min Q - V) (ILQL) of a frozen role."""

    params: ParameterSet
    algo: str = MC
    beta: float = 1.0
    role: str = "theta"

    def __post_init__(self):
        if self.algo not in (MC, ILQL):
            raise EvalError(f"unknown algo {self.algo!r}")
        if not math.isfinite(self.beta) or self.beta < 0:
            raise EvalError("beta must be finite and >= 0")
        if self.algo != self.params.algo:
            raise EvalError("policy algo does not match its parameters")
        self.params = self.params.clone()

    def cursor(self) -> Cursor:
        return Cursor(self.params, self.role)

    def scores(self, cursor: Cursor) -> np.ndarray:
        if self.algo == MC:
            return cursor.q("q1")
        return np.minimum(cursor.q("q1"), cursor.q("q2")) - cursor.value()

    def distribution(self, cursor: Cursor) -> np.ndarray:
        return softmax_np(self.beta * self.scores(cursor))

    def greedy(self, cursor: Cursor) -> int:
        return int(np.argmax(self.scores(cursor)))

    def start(self, world, task: TaskSpec, mode: str = GREEDY):
        return _PolicyActor(self, world, mode)


class _PolicyActor:
    def __init__(self, policy: ExtractedPolicy, world, mode: str):
        if mode not in (SAMPLE, GREEDY):
            raise EvalError(f"decode mode must be 'sample' or 'greedy', got {mode!r}")
        self.policy, self.world, self.mode = policy, world, mode
        self.cursor = policy.cursor().reset([0])
        self.seen = 0

    def act(self, state: EnvState, rng: np.random.Generator) -> int:
        for a, o in state.history[self.seen:]:
            self.cursor.feed(self.world.action_token(a)).feed(self.world.obs_token(o))
        self.seen = len(state.history)
        if self.mode == GREEDY:
            return self.policy.greedy(self.cursor)
        p = self.policy.distribution(self.cursor)
        return int(rng.choice(p.size, p=p))


def action_distribution(policy: ExtractedPolicy, state_tokens: Sequence[int]) -> np.ndarray:
    return policy.distribution(policy.cursor().reset(state_tokens))


def rollout(policy: ExtractedPolicy, world, task: TaskSpec, config: EnvConfig | None = None,
            mode: str = GREEDY, rng_seed: int = 0) -> tuple[Trajectory, float]:
    rng = make_rng(rng_seed, "rollout")
    state, rewards = run_episode(world, task, policy.start(world, task, mode), rng, config)
    traj = episode_to_trajectory(world, state, rewards, f"rollout-{task.task_id}", behavior_noise=0.0)
    return traj, float(sum(rewards))


@dataclass
class EvalReport:
    rewards: list
    hitting_times: list
    successes: list
    method: str = ""
    algo: str = ""
    regime: str = ""
    seed: int = 0

    @property
    def n(self) -> int:
        return len(self.rewards)

    @property
    def mean(self) -> float:
        return float(np.mean(self.rewards))

    @property
    def se(self) -> float:
        if self.n < 2:
            return 0.0
        return float(np.std(self.rewards, ddof=1) / math.sqrt(self.n))

    @property
    def success_rate(self) -> float:
        return float(np.mean(self.successes))

    @property
    def mean_hitting_time(self) -> float:
        return float(np.mean(self.hitting_times))

    def row(self) -> dict:
        return {"method": self.method, "algo": self.algo, "regime": self.regime, "seed": self.seed,
                "mean": self.mean, "se": self.se, "success_rate": self.success_rate,
                "mean_hitting_time": self.mean_hitting_time}


def eval_pool(trajectories: Sequence[Trajectory]) -> list[TaskSpec]:
    """Distinct tasks of a collection, ordered by task id."""
    seen = {}
    for t in trajectories:
        seen.setdefault(t.task.task_id, t.task)
    return [seen[k] for k in sorted(seen)]


def evaluate(policy: ExtractedPolicy, world, tasks: Sequence[TaskSpec], n_runs: int = 64, rng_seed: int = 0,
             mode: str = GREEDY, config: EnvConfig | None = None, method: str = "", regime: str = "") -> EvalReport:
    """``n_runs`` episodes cycling through ``tasks`` in order."""
    if not tasks:
        raise EvalError("empty eval pool")
    cfg = config or world.config
    rewards, times, wins = [], [], []
    for i in range(int(n_runs)):
        task = tasks[i % len(tasks)]
        traj, total = rollout(policy, world, task, cfg, mode, derive_seed(rng_seed, "episode", i))
        rewards.append(total)
        times.append(hitting_time(traj, cfg.h_max))
        wins.append(traj.steps[-1].reward > 0)
    return EvalReport(rewards, times, wins, method, policy.algo, regime, rng_seed)


def results_csv(reports: Sequence[EvalReport]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=RESULT_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        row = r.row()
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def policy_from_log(log, algo: str, beta: float = 1.0) -> ExtractedPolicy:
    return ExtractedPolicy(log.params, algo, beta)


def run_matrix(cfg, progress=None) -> list[EvalReport]:
    """One report per (seed, regime, algo, method) cell of ``cfg.matrix``.

    Data, prior and synthetic set are prepared once per (seed, regime) and
    shared by every method, as is the evaluation task pool.
    """
    from dataclasses import replace

    from .pipeline import generate, prepare, run_training

    reports = []
    for seed in cfg.matrix.seeds:
        scfg = replace(cfg, seed=int(seed))
        world, offline = generate(scfg)
        for regime in cfg.matrix.regimes:
            prep = prepare(scfg, regime, world, offline)
            tasks = eval_pool(prep.split.eval)
            for algo in cfg.matrix.algos:
                for method in cfg.matrix.methods:
                    log = run_training(scfg, prep, method, algo)
                    rep = evaluate(policy_from_log(log, algo, cfg.eval.beta), world, tasks, cfg.eval.n_runs,
                                   derive_seed(scfg.seed, "eval"), cfg.eval.decode, method=method, regime=regime)
                    rep.seed = int(seed)
                    reports.append(rep)
                    if progress is not None:
                        progress(rep)
    return reports
