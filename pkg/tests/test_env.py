import numpy as np
import pytest
from hypothesis import given, strategies as st

from boostlab.data import episode_to_trajectory
from boostlab.env import (
    GUESS_NO,
    GUESS_YES,
    EnvConfig,
    EnvError,
    GuessGameWorld,
    NegotiationWorld,
    bisecting_guess_world,
    default_guess_world,
    default_negotiation_world,
    hitting_time,
    optimal_hitting_oracle,
    reset,
    run_episode,
    sample_task,
    step,
    world_from_json,
)
from boostlab.scripted import BehaviorPolicy, RandomAskCertainGuessPolicy


def play(world, task, actions):
    state = reset(world, task)
    rewards = []
    for a in actions:
        state, r, _ = step(world, state, a)
        rewards.append(r)
    return state, rewards


def test_correct_guess_at_turn_zero():
    w = bisecting_guess_world(3, h_max=20)
    task = w.tasks()[5]
    state, r, done = step(w, reset(w, task), w.guess_action(5))
    assert (r, done) == (19.0, True)


def test_ask_gives_yes_or_no():
    w = bisecting_guess_world(3)
    state, r, done = step(w, reset(w, w.tasks()[2]), 1)
    assert r == 0.0 and not done
    assert state.history[-1][1] in (GUESS_YES, GUESS_NO)


def test_wrong_guess_ends_with_zero():
    w = bisecting_guess_world(3)
    state, r, done = step(w, reset(w, w.tasks()[0]), w.guess_action(1))
    assert (r, done, state.terminal_kind) == (0.0, True, "failure")


def test_negotiation_offer_at_target_accepted():
    w = default_negotiation_world(h_max=10)
    task = next(t for t in w.tasks() if t.params["target"] == w.price_grid[5])
    state, r, done = step(w, reset(w, task), 5)
    assert (r, done) == (9.0, True)


def test_step_errors():
    w = bisecting_guess_world(2)
    task = w.tasks()[0]
    with pytest.raises(EnvError, match="unknown action"):
        step(w, reset(w, task), w.n_actions)
    state, _, _ = step(w, reset(w, task), w.guess_action(0))
    with pytest.raises(EnvError, match="step-after-done"):
        step(w, state, 0)


def _trajectory(world, task, actions):
    state, rewards = play(world, task, actions)
    return episode_to_trajectory(world, state, rewards, "t")


def test_hitting_time_examples():
    w = bisecting_guess_world(3, h_max=20)
    task = w.tasks()[6]
    assert hitting_time(_trajectory(w, task, [0, 1, w.guess_action(6)]), 20) == 3
    assert hitting_time(_trajectory(w, task, [w.guess_action(0)]), 20) == 20
    # four asks then a correct guess: terminal reward 15 -> T = 5, confirmed by the step count
    traj = _trajectory(w, task, [0, 1, 2, 0, w.guess_action(6)])
    assert traj.steps[-1].reward == 15.0
    assert hitting_time(traj, 20) == 5 == len(traj.steps)


def test_hitting_time_needs_complete_trajectory():
    w = bisecting_guess_world(3)
    traj = _trajectory(w, w.tasks()[0], [0, 1])
    with pytest.raises(EnvError, match="incomplete"):
        hitting_time(traj, 20)


def test_budget_exhaustion_is_failure():
    w = bisecting_guess_world(2, h_max=4)
    traj = _trajectory(w, w.tasks()[1], [0, 0, 0, 0])
    assert traj.steps[-1].done and hitting_time(traj, 4) == 4


def test_oracle_examples():
    one = GuessGameWorld([[1]], ["solo"])
    assert optimal_hitting_oracle(one, one.tasks()[0]) == 1
    w = bisecting_guess_world(3)
    assert all(optimal_hitting_oracle(w, t) == 4 for t in w.tasks())
    single = NegotiationWorld([("b", (50, 50))], [50], 3)
    assert optimal_hitting_oracle(single, single.tasks()[0]) == 1


def test_oracle_rejects_large_worlds():
    w = default_guess_world(0, n_items=32, n_attr=6, n_categories=4)
    with pytest.raises(EnvError, match="too large"):
        optimal_hitting_oracle(w, w.tasks()[0])


@given(st.integers(0, 2**32 - 1), st.lists(st.integers(0, 13), min_size=1, max_size=12))
def test_replay_reproduces_observations(seed, actions):
    w = bisecting_guess_world(3)
    task = sample_task(w, rng_seed=seed)
    first, _ = play_until_done(w, task, actions)
    again, _ = play_until_done(w, task, [a for a, _ in first.history])
    assert again.history == first.history


def play_until_done(world, task, actions):
    state = reset(world, task)
    rewards = []
    for a in actions:
        if state.done:
            break
        state, r, _ = step(world, state, a % world.n_actions)
        rewards.append(r)
    return state, rewards


@given(st.integers(0, 10_000))
def test_negotiation_walk_away_after_r_rejections(seed):
    rng = np.random.default_rng(seed)
    w = default_negotiation_world(h_max=10, walk_away_rounds=int(rng.integers(1, 5)))
    task = min(w.tasks(), key=lambda t: t.params["target"])
    top = len(w.price_grid) - 1
    state = reset(w, task)
    n = 0
    while not state.done:
        state, r, done = step(w, state, top)
        n += 1
    assert n == w.walk_away_rounds and r == 0.0 and state.terminal_kind == "failure"


@given(st.integers(0, 10_000), st.floats(0, 1))
def test_turn_never_exceeds_budget(seed, noise):
    w = bisecting_guess_world(3, h_max=8)
    task = sample_task(w, rng_seed=seed)
    state, _ = run_episode(w, task, BehaviorPolicy(noise).start(w, task), np.random.default_rng(seed))
    assert state.done and state.turn <= 8


@given(st.integers(0, 10_000))
def test_oracle_lower_bounds_certain_guessers(seed):
    # the oracle admits a guess only once the candidate set is a single item,
    # so the bound covers policies that never gamble on a guess
    w = bisecting_guess_world(3, h_max=8)
    task = sample_task(w, rng_seed=seed)
    for pol in (BehaviorPolicy(0.0), RandomAskCertainGuessPolicy()):
        state, rewards = run_episode(w, task, pol.start(w, task), np.random.default_rng(seed))
        traj = episode_to_trajectory(w, state, rewards, "x")
        assert optimal_hitting_oracle(w, task) <= hitting_time(traj, 8)


def test_random_certain_guesser_never_beats_oracle():
    w = default_guess_world(1, n_items=16, n_attr=6, n_categories=4)
    rng = np.random.default_rng(0)
    pol = RandomAskCertainGuessPolicy()
    for task in w.tasks():
        state, rewards = run_episode(w, task, pol.start(w, task), rng)
        traj = episode_to_trajectory(w, state, rewards, "x")
        assert hitting_time(traj, w.config.h_max) >= optimal_hitting_oracle(w, task)


def test_world_json_round_trip():
    for w in (default_guess_world(3, n_items=16, n_attr=5, n_categories=4), default_negotiation_world()):
        back = world_from_json(w.to_json())
        assert back.to_json() == w.to_json()
        assert back.tasks() == w.tasks()


def test_reset_is_deterministic():
    w = bisecting_guess_world(3)
    t = w.tasks()[3]
    assert reset(w, t) == reset(w, t)
    assert reset(w, t, EnvConfig(h_max=5)).h_max == 5
