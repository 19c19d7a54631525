from collections import Counter
from dataclasses import replace

import pytest

from boostlab.data import REAL, SYNTHETIC, episode_to_trajectory
from boostlab.env import TaskSpec, bisecting_guess_world, reset, step
from boostlab.model import init_params
from boostlab.synth import PREFIX_STEPS, SynthConfig, SynthError, build_mixed, generate_synthetic, synthesize


def scripted(world, task, actions, traj_id="r"):
    state, rewards = reset(world, task), []
    for a in actions:
        state, r, _ = step(world, state, a)
        rewards.append(r)
    return episode_to_trajectory(world, state, rewards, traj_id), state


@pytest.fixture(scope="module")
def tiny():
    """Four items in one category; asking both attributes pins the item down."""
    w = bisecting_guess_world(2, h_max=20, items_per_category=4)
    return w, init_params(w.vocab_size, w.n_actions, 4, rng_seed=0)


def item_task(world, item):
    return next(t for t in world.tasks() if t.params["item"] == item)


def real_on(world, item, traj_id="r"):
    return scripted(world, item_task(world, item), [0, 1, world.guess_action(item)], traj_id)[0]


def replay(world, syn):
    """Observations the real environment would have returned for the synthetic actions."""
    state, rewards = reset(world, syn.task), []
    for s in syn.steps:
        state, r, _ = step(world, state, s.action)
        rewards.append(r)
    return [o for _, o in state.history], rewards


def test_prefix_is_verbatim(world, split, prior):
    for traj in split.train[:20]:
        if len(traj.steps) <= PREFIX_STEPS:
            continue
        syn = generate_synthetic(traj, prior, world, SynthConfig(rng_seed=3))
        assert syn.steps[:PREFIX_STEPS] == traj.steps[:PREFIX_STEPS]
        assert syn.source == SYNTHETIC and syn.task == traj.task


def test_hidden_task_params_are_never_read(world, split, prior):
    cfg = SynthConfig(rng_seed=1, corrupt_base=0.3)
    for traj in split.train[:20]:
        if len(traj.steps) < PREFIX_STEPS:
            continue
        blind = replace(traj, task=TaskSpec(traj.task.task_id, traj.category, {}))
        assert generate_synthetic(traj, prior, world, cfg).steps == generate_synthetic(blind, prior, world, cfg).steps


def test_zero_corruption_matches_environment(tiny):
    w, model = tiny
    cfg = SynthConfig(corrupt_base=0.0, corrupt_growth=0.0, agent_noise=0.5)
    for item in range(4):
        real = real_on(w, item)
        for k in range(25):
            syn = generate_synthetic(real, model, w, replace(cfg, rng_seed=k))
            obs, rewards = replay(w, syn)
            got = [t - 1 - w.n_actions for t in syn.steps[-1].state_tokens[2::2]]
            assert got == obs[:len(got)]
            assert [s.reward for s in syn.steps] == rewards


def test_full_corruption_flips_every_response(tiny):
    w, model = tiny
    cfg = SynthConfig(corrupt_base=1.0, corrupt_growth=0.0, agent_noise=0.5)
    for item in range(4):
        real = real_on(w, item)
        for k in range(25):
            syn = generate_synthetic(real, model, w, replace(cfg, rng_seed=k))
            obs, rewards = replay(w, syn)
            got = [t - 1 - w.n_actions for t in syn.steps[-1].state_tokens[2::2]]
            assert all(g != o for g, o in zip(got[PREFIX_STEPS:], obs[PREFIX_STEPS:]))
            last = syn.steps[-1]
            if last.done and not w.is_ask(last.action):
                # a hit reads as a miss and vice versa
                assert (last.reward > 0) != (rewards[-1] > 0)


def test_disagreement_grows_with_step(tiny):
    w, model = tiny
    cfg = SynthConfig(corrupt_base=0.1, corrupt_growth=0.15, agent_noise=1.0)
    hits, seen = Counter(), Counter()
    reals = [real_on(w, item, f"r{item}") for item in range(4)]
    for k in range(3000):
        real = reals[k % 4]
        syn = generate_synthetic(real, model, w, cfg, index=k)
        obs, rewards = replay(w, syn)
        got = [t - 1 - w.n_actions for t in syn.steps[-1].state_tokens[2::2]]
        for t in range(PREFIX_STEPS, len(syn.steps)):
            if t < len(syn.steps) - 1:
                bad = got[t] != obs[t]
            elif syn.steps[t].done and not w.is_ask(syn.steps[t].action):
                bad = (syn.steps[t].reward > 0) != (rewards[t] > 0)
            else:
                continue
            seen[t] += 1
            hits[t] += bad
    rates = [hits[t] / seen[t] for t in sorted(seen) if seen[t] >= 100]
    assert len(rates) >= 3
    assert all(b >= a for a, b in zip(rates, rates[1:]))


def test_category_mix_and_count_match_real(split, synthetic):
    assert len(synthetic) == len(split.train)
    assert Counter(t.category for t in synthetic) == Counter(t.category for t in split.train)
    assert all(t.source == SYNTHETIC for t in synthetic)


def test_synthesis_is_deterministic(world, split, prior):
    cfg = SynthConfig(rng_seed=7)
    assert synthesize(split.train[:15], prior, world, cfg) == synthesize(split.train[:15], prior, world, cfg)


def test_build_mixed_sizes(world, offline, prior):
    real = offline[:100]
    assert build_mixed(real, 0) == list(real)
    mixed = build_mixed(real, 1, prior, world, SynthConfig())
    assert len(mixed) == 200
    assert Counter(t.source for t in mixed) == {REAL: 100, SYNTHETIC: 100}
    assert len(build_mixed(offline[:3], 2, prior, world)) == 9
    with pytest.raises(SynthError, match="behavior model"):
        build_mixed(real, 1)
    with pytest.raises(SynthError, match="does not match"):
        build_mixed(real, 2, synthetic=mixed[100:])
    with pytest.raises(SynthError, match=">= 0"):
        build_mixed(real, -1)


def test_donor_rule(tiny):
    w, model = tiny
    short, _ = scripted(w, item_task(w, 2), [w.guess_action(2)], "short")
    open_ = real_on(w, 1, "open")
    syn = synthesize([short, open_], model, w, SynthConfig())
    assert [t.traj_id for t in syn] == ["short-syn0", "open-syn0"]
    # the borrowed prefix answers belong to the donor task, so the slot takes that task
    assert syn[0].task == open_.task and syn[0].category == short.category
    assert syn[0].steps[:PREFIX_STEPS] == open_.steps[:PREFIX_STEPS]
    # no open trajectory in the category: the slot holds a verbatim copy
    alone = synthesize([short], model, w, SynthConfig())
    assert alone[0].steps == short.steps and alone[0].traj_id == "short-syn0"


def test_generation_errors(tiny, offline, prior, world):
    w, model = tiny
    short, _ = scripted(w, item_task(w, 2), [w.guess_action(2)])
    with pytest.raises(SynthError, match="prefix"):
        generate_synthetic(short, model, w, SynthConfig())
    fake = replace(real_on(w, 0), source=SYNTHETIC)
    with pytest.raises(SynthError, match="real source"):
        generate_synthetic(fake, model, w, SynthConfig())
    with pytest.raises(SynthError, match="geometry"):
        generate_synthetic(real_on(w, 0), model, w, SynthConfig(corrupt_by_distance=True))
    with pytest.raises(SynthError, match="agent_noise"):
        SynthConfig(agent_noise=1.5)
