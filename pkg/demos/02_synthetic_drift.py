"""
Synthetic continuations and how they drift
==========================================

A behavior-cloned policy continues the first two steps of each real
trajectory while a belief-driven simulator answers. Answers are falsified
with a probability that grows with the turn index. Replaying the same
actions in the true environment shows the growing disagreement.
"""

from collections import Counter


from boostlab.data import collect_offline, split_by_category
from boostlab.env import default_guess_world, reset, step
from boostlab.model import behavior_clone
from boostlab.synth import PREFIX_STEPS, SynthConfig, synthesize

world = default_guess_world(seed=0, n_items=16, n_attr=5, n_categories=4)
offline = collect_offline(world, 400, (0.1, 0.7), rng_seed=0)
split = split_by_category(offline, 0.5, 0.3, rng_seed=0)
prior = behavior_clone(list(split.train) + list(split.val), world, epochs=30, rng_seed=0, d=8)

synthetic = synthesize(split.train, prior, world, SynthConfig(corrupt_base=0.1, corrupt_growth=0.15, rng_seed=0),
                       synth_per_real=4)
print(len(split.train), "real ->", len(synthetic), "synthetic")


def true_observations(traj):
    state = reset(world, traj.task)
    for s in traj.steps:
        state, _, _ = step(world, state, s.action)
    return [o for _, o in state.history]


# %%
# Compare recorded observations with the environment's, turn by turn.
seen, wrong = Counter(), Counter()
for traj in synthetic:
    recorded = [t - 1 - world.n_actions for t in traj.steps[-1].state_tokens[2::2]]
    for t, (a, b) in enumerate(zip(recorded, true_observations(traj))):
        if t >= PREFIX_STEPS:
            seen[t] += 1
            wrong[t] += a != b
for t in sorted(seen):
    if seen[t] >= 20:
        print(f"turn {t}: {wrong[t] / seen[t]:.2f} disagreement over {seen[t]} answers")
