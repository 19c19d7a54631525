"""Trajectories, offline collection, category splits and JSONL persistence."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .env import BOS_TOKEN, EnvConfig, EnvState, TaskSpec, run_episode
from .scripted import BehaviorPolicy
from .seeding import make_rng

REAL = "real"
SYNTHETIC = "synthetic"
SOURCES = (REAL, SYNTHETIC)


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Step:
    state_tokens: tuple
    action: int
    reward: float
    done: bool


@dataclass(frozen=True)
class Trajectory:
    traj_id: str
    task: TaskSpec
    steps: tuple
    source: str = REAL
    behavior_noise: float = 0.0

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}, got {self.source!r}")
        if not self.steps:
            raise ValueError("trajectory has no steps")

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def category(self) -> str:
        return self.task.category

    @property
    def complete(self) -> bool:
        return bool(self.steps[-1].done)

    def token_stream(self) -> tuple:
        """History tokens through the final action (the final observation is not stored)."""
        last = self.steps[-1]
        return tuple(last.state_tokens) + (1 + last.action,)

    def history(self, n_actions: int) -> list[tuple[int, int]]:
        """Decoded (action, observation) pairs for all steps but the last."""
        toks = self.steps[-1].state_tokens[1:]
        return [(toks[k] - 1, toks[k + 1] - 1 - n_actions) for k in range(0, len(toks), 2)]

    def total_reward(self) -> float:
        return float(sum(s.reward for s in self.steps))


def history_tokens(world, history) -> tuple:
    toks = [BOS_TOKEN]
    for a, o in history:
        toks.append(world.action_token(a))
        toks.append(world.obs_token(o))
    return tuple(toks)


def episode_to_trajectory(world, state: EnvState, rewards: Sequence[float], traj_id: str,
                          source: str = REAL, behavior_noise: float = 0.0) -> Trajectory:
    steps = []
    n = len(state.history)
    for t, (a, _) in enumerate(state.history):
        steps.append(Step(history_tokens(world, state.history[:t]), int(a), float(rewards[t]),
                          t == n - 1 and state.done))
    return Trajectory(traj_id, state.task, tuple(steps), source, float(behavior_noise))


def collect_offline(world, n_trajectories: int, noise_range=(0.0, 1.0), rng_seed: int = 0,
                    config: EnvConfig | None = None, prefix: str = "real") -> list[Trajectory]:
    """Roll out the noisy scripted behavior policy on uniformly drawn tasks.

    Each trajectory draws its own noise level from ``noise_range``.
    """
    lo, hi = (float(v) for v in noise_range)
    if not 0.0 <= lo <= hi <= 1.0:
        raise ValueError(f"invalid noise range [{lo}, {hi}]")
    tasks = world.tasks()
    out = []
    for i in range(int(n_trajectories)):
        rng = make_rng(rng_seed, "collect", i)
        task = tasks[int(rng.integers(len(tasks)))]
        noise = float(rng.uniform(lo, hi)) if hi > lo else lo
        actor = BehaviorPolicy(noise).start(world, task)
        state, rewards = run_episode(world, task, actor, rng, config)
        out.append(episode_to_trajectory(world, state, rewards, f"{prefix}-{i:06d}", REAL, noise))
    return out


def returns_to_go(trajectory: Trajectory, gamma: float = 1.0) -> list[float]:
    g = 0.0
    out = [0.0] * len(trajectory.steps)
    for t in range(len(trajectory.steps) - 1, -1, -1):
        g = trajectory.steps[t].reward + gamma * g
        out[t] = g
    return out


# ---------------------------------------------------------------- splits

@dataclass(frozen=True)
class DatasetSplit:
    train: tuple
    val: tuple
    eval: tuple
    train_categories: tuple
    heldout_categories: tuple


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5 + 1e-12))


def split_by_category(trajectories: Sequence[Trajectory], train_task_frac: float = 0.6,
                      val_split: float = 0.3, rng_seed: int = 0) -> DatasetSplit:
    """Partition categories into train and held-out; split held-out trajectories into val/eval."""
    if not 0.0 < train_task_frac < 1.0 or not 0.0 < val_split < 1.0:
        raise ValueError("train_task_frac and val_split must lie in (0, 1)")
    cats = sorted({t.category for t in trajectories})
    if len(cats) < 2:
        raise ValueError("single-category input: need at least 2 categories to split")
    rng = make_rng(rng_seed, "split", "categories")
    order = [cats[i] for i in rng.permutation(len(cats))]
    n_train = min(max(_round_half_up(train_task_frac * len(cats)), 1), len(cats) - 1)
    train_cats = tuple(sorted(order[:n_train]))
    held = tuple(sorted(order[n_train:]))
    train_set = set(train_cats)
    train = tuple(t for t in trajectories if t.category in train_set)
    val, ev = [], []
    for c in held:
        members = [t for t in trajectories if t.category == c]
        perm = make_rng(rng_seed, "split", "heldout", c).permutation(len(members))
        n_val = _round_half_up(val_split * len(members))
        chosen = set(perm[:n_val].tolist())
        for k, t in enumerate(members):
            (val if k in chosen else ev).append(t)
    return DatasetSplit(train, tuple(val), tuple(ev), train_cats, held)


def subsample(trajectories: Sequence[Trajectory], fraction: float, rng_seed: int = 0) -> list[Trajectory]:
    """ceil(fraction * n) trajectories drawn without replacement, original order kept."""
    n = len(trajectories)
    if n == 0:
        raise ValueError("cannot subsample an empty collection")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    k = min(n, math.ceil(fraction * n - 1e-9))
    if k == n:
        return list(trajectories)
    picked = sorted(make_rng(rng_seed, "subsample").choice(n, size=k, replace=False).tolist())
    return [trajectories[i] for i in picked]


# ---------------------------------------------------------------- JSONL

def trajectory_to_json(t: Trajectory) -> dict:
    return {
        "traj_id": t.traj_id,
        "task": t.task.to_json(),
        "source": t.source,
        "behavior_noise": t.behavior_noise,
        "steps": [
            {"state_tokens": list(s.state_tokens), "action": s.action, "reward": s.reward, "done": s.done}
            for s in t.steps
        ],
    }


def _field(obj: dict, key: str, line: int, where: str = ""):
    if not isinstance(obj, dict) or key not in obj:
        raise DatasetFormatError(f"line {line}: missing field '{where}{key}'")
    return obj[key]


def trajectory_from_json(obj: dict, line: int = 0) -> Trajectory:
    traj_id = _field(obj, "traj_id", line)
    task_obj = _field(obj, "task", line)
    for k in ("task_id", "category", "params"):
        _field(task_obj, k, line, "task.")
    source = _field(obj, "source", line)
    if source not in SOURCES:
        raise DatasetFormatError(f"line {line}: field 'source' has invalid value {source!r}")
    noise = _field(obj, "behavior_noise", line)
    steps_obj = _field(obj, "steps", line)
    if not isinstance(steps_obj, list) or not steps_obj:
        raise DatasetFormatError(f"line {line}: field 'steps' must be a non-empty list")
    steps = []
    for k, s in enumerate(steps_obj):
        where = f"steps[{k}]."
        toks = _field(s, "state_tokens", line, where)
        action = _field(s, "action", line, where)
        reward = _field(s, "reward", line, where)
        done = _field(s, "done", line, where)
        if not isinstance(reward, (int, float)) or not math.isfinite(reward):
            raise DatasetFormatError(f"line {line}: field '{where}reward' must be a finite number")
        steps.append(Step(tuple(int(x) for x in toks), int(action), float(reward), bool(done)))
    return Trajectory(str(traj_id), TaskSpec.from_json(task_obj), tuple(steps), source, float(noise))


def save_dataset(path, trajectories: Iterable[Trajectory], header: dict | None = None) -> None:
    """One trajectory per line; an optional header object goes on the first line."""
    lines = []
    if header is not None:
        lines.append(json.dumps(header, sort_keys=True, separators=(",", ":")))
    for t in trajectories:
        lines.append(json.dumps(trajectory_to_json(t), sort_keys=True, separators=(",", ":")))
    text = "".join(line + "\n" for line in lines)
    Path(path).write_text(text, encoding="utf-8")


def read_dataset(path) -> tuple[dict | None, list[Trajectory]]:
    header = None
    out = []
    with open(path, encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"line {ln}: malformed JSON ({exc.msg})") from None
            if ln == 1 and isinstance(obj, dict) and "traj_id" not in obj and "synth_cfg" in obj:
                header = obj
                continue
            out.append(trajectory_from_json(obj, ln))
    return header, out


def load_dataset(path) -> list[Trajectory]:
    return read_dataset(path)[1]
