"""
A tour of the guessing game
===========================

Build a small guessing world, play it with scripted policies, and compare
their hitting times against the breadth-first-search optimum.
"""

import numpy as np

from boostlab.data import collect_offline, episode_to_trajectory, split_by_category
from boostlab.env import default_guess_world, hitting_time, optimal_hitting_oracle, run_episode
from boostlab.scripted import BehaviorPolicy, OptimalScriptedPolicy

world = default_guess_world(seed=0, n_items=16, n_attr=5, n_categories=4)
print("categories:", world.categories)
print("actions:", world.n_actions, "(asks first, then one guess per item)")

# %%
# Each task hides one item. The reward is H - T on success, so a faster
# solve scores more.
rng = np.random.default_rng(0)
task = world.tasks()[3]
for name, pol in [("optimal", OptimalScriptedPolicy()), ("noisy", BehaviorPolicy(0.5))]:
    state, rewards = run_episode(world, task, pol.start(world, task), rng)
    traj = episode_to_trajectory(world, state, rewards, name)
    print(f"{name:8s} actions={[s.action for s in traj.steps]} T={hitting_time(traj, world.config.h_max)}")
print("oracle T =", optimal_hitting_oracle(world, task))

# %%
# Offline data comes from the behavior policy at a range of noise levels.
offline = collect_offline(world, 400, (0.1, 0.7), rng_seed=0)
times = [hitting_time(t, world.config.h_max) for t in offline]
print(f"offline: {len(offline)} trajectories, mean T {np.mean(times):.2f}, "
      f"success {np.mean([t.steps[-1].reward > 0 for t in offline]):.2f}")

# %%
# Whole categories are held out, so evaluation tasks are never seen in training.
split = split_by_category(offline, 0.5, 0.3, rng_seed=0)
print("train categories:", split.train_categories, "held out:", split.heldout_categories)
print("sizes:", len(split.train), len(split.val), len(split.eval))
