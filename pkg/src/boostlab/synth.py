"""Prefix-seeded self-play: the cloned policy plays the agent, a belief plays the world.

The world role never sees the task's hidden parameters. After the two-step
real prefix it fixes a hypothesis (an item, or a buyer target) that agrees with
the prefix answers and with the task's public category, then answers from that
hypothesis. Each answer is falsified with a probability that grows with the
step index, the desk-scale stand-in for drift in generated dialogue.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch

from .data import SYNTHETIC, REAL, Step, Trajectory, history_tokens
from .env import (
    GUESS_CORRECT,
    GUESS_NO,
    GUESS_WRONG,
    GUESS_YES,
    NEG_ACCEPT,
    NEG_WALKAWAY,
    GuessGameWorld,
    NegotiationWorld,
)
from .model import Cursor, ParameterSet, encode_batch, softmax_np
from .seeding import make_rng

PREFIX_STEPS = 2


class SynthError(ValueError):
    pass


def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, float(x)))


@dataclass(frozen=True)
class SynthConfig:
    corrupt_base: float = 0.2
    corrupt_growth: float = 0.05
    agent_noise: float = 0.0
    rng_seed: int = 0
    corrupt_by_distance: bool = False

    def __post_init__(self):
        for name in ("corrupt_base", "corrupt_growth", "agent_noise"):
            if not np.isfinite(getattr(self, name)):
                raise SynthError(f"{name} must be finite")
        if not 0.0 <= self.agent_noise <= 1.0:
            raise SynthError(f"agent_noise must lie in [0, 1], got {self.agent_noise}")

    def corrupt_prob(self, t: int, scale: float = 1.0) -> float:
        return _clamp01((self.corrupt_base + self.corrupt_growth * (t - PREFIX_STEPS)) * scale)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CategoryGeometry:
    """Per-category centroid of real state encodings plus a reference spread."""

    centroids: dict
    scale: float

    def ratio(self, category: str, h: np.ndarray) -> float:
        return float(np.abs(h - self.centroids[category]).sum() / self.scale)


def category_geometry(params: ParameterSet, trajectories: Sequence[Trajectory]) -> CategoryGeometry:
    """Centroids of the cloned encoder's state vectors over each category's real steps."""
    from .batching import TrajectoryTable

    table = TrajectoryTable(trajectories)
    with torch.no_grad():
        batch = table.all()
        H = encode_batch(params, batch.tokens)[batch.step_traj, batch.pos].numpy()
    cats = np.array([trajectories[i].category for i in batch.step_traj.numpy()])
    centroids = {c: H[cats == c].mean(axis=0) for c in sorted(set(cats))}
    dists = np.array([np.abs(h - centroids[c]).sum() for h, c in zip(H, cats)])
    return CategoryGeometry(centroids, float(max(dists.mean(), 1e-12)))


# ---------------------------------------------------------------- world role

class _GuessBelief:
    def __init__(self, world: GuessGameWorld, category: str, history, rng):
        pool = [i for i in range(world.n_items) if world.item_categories[i] == category]
        cands = world.consistent_items(history, pool) or pool
        self.world = world
        self.item = cands[int(rng.integers(len(cands)))]

    def respond(self, history, action: int, falsify: bool, rng) -> int:
        w = self.world
        if w.is_ask(action):
            ans = w.answer(self.item, action)
            return (GUESS_NO if ans == GUESS_YES else GUESS_YES) if falsify else ans
        hit = action - w.n_attr == self.item
        if falsify:
            hit = not hit
        return GUESS_CORRECT if hit else GUESS_WRONG

    @staticmethod
    def success(obs: int) -> bool:
        return obs == GUESS_CORRECT

    @staticmethod
    def terminal(obs: int) -> bool:
        return obs in (GUESS_CORRECT, GUESS_WRONG)


class _NegotiationBelief:
    def __init__(self, world: NegotiationWorld, brand: str, history, rng):
        lo, hi = world.brand_interval(brand)
        pool = [p for p in world.price_grid if lo <= p <= hi]
        cands = [p for p in pool if self._consistent(world, p, history)] or pool
        self.world = world
        self.target = cands[int(rng.integers(len(cands)))]

    @staticmethod
    def _consistent(world, target, history) -> bool:
        for k, (a, o) in enumerate(history):
            if world.buyer_response(target, a, world.rejections(history[:k])) != o:
                return False
        return True

    def respond(self, history, action: int, falsify: bool, rng) -> int:
        w = self.world
        prior = w.rejections(history)
        obs = w.buyer_response(self.target, action, prior)
        if not falsify:
            return obs
        if obs != NEG_ACCEPT:
            return NEG_ACCEPT
        if prior + 1 >= w.walk_away_rounds:
            return NEG_WALKAWAY
        return 2 + int(rng.integers(action + 1))

    @staticmethod
    def success(obs: int) -> bool:
        return obs == NEG_ACCEPT

    @staticmethod
    def terminal(obs: int) -> bool:
        return obs in (NEG_ACCEPT, NEG_WALKAWAY)


def _prefix_history(traj: Trajectory, world) -> list:
    """(action, observation) pairs of the prefix, read from the recorded stream."""
    toks = traj.steps[PREFIX_STEPS].state_tokens[1:]
    n = world.n_actions
    return [(toks[k] - 1, toks[k + 1] - 1 - n) for k in range(0, len(toks), 2)]


def generate_synthetic(real_traj: Trajectory, behavior_model: ParameterSet, world, synth_cfg: SynthConfig,
                       index: int = 0, geometry: CategoryGeometry | None = None,
                       traj_id: str | None = None) -> Trajectory:
    """One synthetic continuation of ``real_traj``'s two-step prefix."""
    if real_traj.source != REAL:
        raise SynthError("synthetic generation needs a real source trajectory")
    if len(real_traj.steps) < PREFIX_STEPS:
        raise SynthError(f"prefix shorter than {PREFIX_STEPS} steps")
    if synth_cfg.corrupt_by_distance and geometry is None:
        raise SynthError("corrupt_by_distance needs category geometry")
    traj_id = traj_id or f"{real_traj.traj_id}-syn{index}"
    steps = list(real_traj.steps[:PREFIX_STEPS])
    if steps[-1].done:
        return Trajectory(traj_id, real_traj.task, tuple(steps), SYNTHETIC, synth_cfg.agent_noise)

    rng = make_rng(synth_cfg.rng_seed, "synth", traj_id)
    h_max = world.config.h_max
    history = _prefix_history(real_traj, world)
    category = real_traj.category
    if isinstance(world, GuessGameWorld):
        belief = _GuessBelief(world, category, history, rng)
    else:
        belief = _NegotiationBelief(world, category, history, rng)
    cursor = Cursor(behavior_model, "theta").reset(history_tokens(world, history))
    t = len(history)
    while True:
        if rng.random() < synth_cfg.agent_noise:
            action = int(rng.integers(world.n_actions))
        else:
            action = int(rng.choice(world.n_actions, p=softmax_np(cursor.q("q1"))))
        scale = geometry.ratio(category, cursor.hidden) if synth_cfg.corrupt_by_distance else 1.0
        falsify = rng.random() < synth_cfg.corrupt_prob(t, scale)
        obs = belief.respond(history, action, falsify, rng)
        done = belief.terminal(obs) or t + 1 >= h_max
        reward = float(h_max - (t + 1)) if belief.success(obs) else 0.0
        steps.append(Step(history_tokens(world, history), action, reward, done))
        if done:
            break
        history.append((action, obs))
        cursor.feed(world.action_token(action)).feed(world.obs_token(obs))
        t += 1
    return Trajectory(traj_id, real_traj.task, tuple(steps), SYNTHETIC, synth_cfg.agent_noise)


def _open_prefix(traj: Trajectory) -> bool:
    return len(traj.steps) > PREFIX_STEPS


def synthesize(train_real: Sequence[Trajectory], behavior_model: ParameterSet, world, synth_cfg: SynthConfig,
               synth_per_real: int = 1, geometry: CategoryGeometry | None = None) -> list[Trajectory]:
    """``synth_per_real`` counterparts per real trajectory.

    A trajectory that finishes inside the prefix leaves nothing to continue, so
    its slot borrows the prefix of a same-category trajectory that is still
    open after two steps. The slot keeps its own id and the donor shares its
    category, so counts and the category mix match the real set. With no open
    donor in the category the slot holds a verbatim copy.
    """
    if synth_per_real < 0:
        raise SynthError("synth_per_real must be >= 0")
    if synth_cfg.corrupt_by_distance and geometry is None:
        geometry = category_geometry(behavior_model, train_real)
    donors = {}
    for t in train_real:
        if _open_prefix(t):
            donors.setdefault(t.category, []).append(t)
    out = []
    for traj in train_real:
        for k in range(synth_per_real):
            slot = f"{traj.traj_id}-syn{k}"
            source = traj
            if not _open_prefix(traj) and donors.get(traj.category):
                pool = donors[traj.category]
                source = pool[int(make_rng(synth_cfg.rng_seed, "donor", slot).integers(len(pool)))]
            if len(source.steps) < PREFIX_STEPS:
                out.append(Trajectory(slot, traj.task, traj.steps, SYNTHETIC, synth_cfg.agent_noise))
                continue
            syn = generate_synthetic(source, behavior_model, world, synth_cfg, k, geometry, traj_id=slot)
            out.append(syn)
    return out


def build_mixed(train_real: Sequence[Trajectory], synth_per_real: int = 1, behavior_model=None, world=None,
                synth_cfg: SynthConfig | None = None, synthetic: Sequence[Trajectory] | None = None) -> list[Trajectory]:
    """Real trajectories followed by their synthetic counterparts."""
    if synth_per_real < 0:
        raise SynthError("synth_per_real must be >= 0")
    if synth_per_real == 0:
        return list(train_real)
    if synthetic is None:
        if behavior_model is None or world is None:
            raise SynthError("a behavior model and world are needed to generate synthetic data")
        synthetic = synthesize(train_real, behavior_model, world, synth_cfg or SynthConfig(), synth_per_real)
    if len(synthetic) != len(train_real) * synth_per_real:
        raise SynthError("synthetic set size does not match synth_per_real")
    return list(train_real) + list(synthetic)
