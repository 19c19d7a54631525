"""Scripted actors: the noisy behavior policy and a task-aware optimal policy.

A policy exposes ``start(world, task) -> actor`` and an actor exposes
``act(state, rng) -> action``. Learned policies in ``evaluation`` follow the
same protocol, so ``env.run_episode`` drives all of them.
"""

from __future__ import annotations

import numpy as np

from .env import (
    NEG_ACCEPT,
    NEG_WALKAWAY,
    EnvState,
    GuessGameWorld,
    NegotiationWorld,
    TaskSpec,
    minimal_separating_asks,
)


def halving_action(world: GuessGameWorld, history, candidates=None) -> int:
    """Greedy candidate halving: guess a lone candidate, else the most balanced ask."""
    cands = world.consistent_items(history, candidates)
    if len(cands) == 1:
        return world.guess_action(cands[0])
    if not cands:
        return world.guess_action(0)
    sub = world.attributes[cands]
    yes = sub.sum(axis=0)
    best, best_gap = None, None
    for j in range(world.n_attr):
        if 0 < yes[j] < len(cands):
            gap = abs(2 * int(yes[j]) - len(cands))
            if best_gap is None or gap < best_gap:
                best, best_gap = j, gap
    if best is None:
        return world.guess_action(cands[0])
    return best


def ladder_action(world: NegotiationWorld, history) -> int:
    """Open at the top of the grid, then offer the target implied by the last counter."""
    if not history:
        return len(world.price_grid) - 1
    offer_idx, obs = history[-1]
    if obs in (NEG_ACCEPT, NEG_WALKAWAY):
        return 0
    counter = world.price_grid[obs - 2]
    implied = 2 * counter - world.price_grid[offer_idx]
    below = [k for k, p in enumerate(world.price_grid) if p <= implied]
    return below[-1] if below else 0


class _BehaviorActor:
    def __init__(self, world, noise: float):
        self.world = world
        self.noise = noise

    def act(self, state: EnvState, rng: np.random.Generator) -> int:
        # one uniform draw per step keeps the random stream aligned across noise levels
        if rng.random() < self.noise:
            return int(rng.integers(self.world.n_actions))
        if isinstance(self.world, GuessGameWorld):
            return halving_action(self.world, state.history)
        return ladder_action(self.world, state.history)


class BehaviorPolicy:
    """Scripted heuristic blended with uniform-random actions at rate ``noise``."""

    def __init__(self, noise: float = 0.0):
        if not 0.0 <= noise <= 1.0:
            raise ValueError(f"noise must lie in [0, 1], got {noise}")
        self.noise = float(noise)

    def start(self, world, task: TaskSpec):
        return _BehaviorActor(world, self.noise)


class _PlanActor:
    def __init__(self, plan):
        self.plan = list(plan)

    def act(self, state: EnvState, rng) -> int:
        return self.plan[min(state.turn, len(self.plan) - 1)]


class OptimalScriptedPolicy:
    """Knows the hidden task and follows a shortest admissible plan.

    GuessGame: ask a minimum separating attribute set (brute-force subset
    search), then guess. Negotiation: offer the lowest grid price.
    """

    def start(self, world, task: TaskSpec):
        if isinstance(world, GuessGameWorld):
            item = task.params["item"]
            asks = minimal_separating_asks(world, item)
            return _PlanActor(list(asks) + [world.guess_action(item)])
        return _PlanActor([0])


class RandomAskCertainGuessPolicy:
    """Random asks; guesses only once the candidate set is a single item."""

    def start(self, world, task):
        return _RandomCertainActor(world)


class _RandomCertainActor:
    def __init__(self, world):
        self.world = world

    def act(self, state, rng):
        cands = self.world.consistent_items(state.history)
        if len(cands) == 1:
            return self.world.guess_action(cands[0])
        return int(rng.integers(self.world.n_attr))
