import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import chisquare

from boostlab.data import (
    DatasetFormatError,
    SYNTHETIC,
    collect_offline,
    load_dataset,
    returns_to_go,
    save_dataset,
    split_by_category,
    subsample,
    trajectory_to_json,
)
from boostlab.env import bisecting_guess_world, hitting_time, optimal_hitting_oracle

from conftest import make_traj


def by_category(n_cats, per_cat):
    return [make_traj(f"t{c}-{k}", f"cat{c}") for c in range(n_cats) for k in range(per_cat)]


def test_noise_free_behavior_is_optimal_on_bisecting_world():
    w = bisecting_guess_world(3)
    trajs = collect_offline(w, 50, (0.0, 0.0), rng_seed=1)
    for t in trajs:
        assert hitting_time(t, 20) == optimal_hitting_oracle(w, t.task)


def test_full_noise_is_uniform_over_actions():
    w = bisecting_guess_world(3)
    counts = np.zeros(w.n_actions)
    trajs = collect_offline(w, 8000, (1.0, 1.0), rng_seed=2)
    for t in trajs:
        for s in t.steps:
            counts[s.action] += 1
    assert counts.sum() >= 10_000
    assert chisquare(counts).pvalue > 1e-3


def test_collection_is_seed_deterministic(world):
    assert collect_offline(world, 30, (0.2, 0.5), 7) == collect_offline(world, 30, (0.2, 0.5), 7)
    assert collect_offline(world, 30, (0.2, 0.5), 7) != collect_offline(world, 30, (0.2, 0.5), 8)


def test_collection_rejects_bad_noise(world):
    with pytest.raises(ValueError, match="noise range"):
        collect_offline(world, 3, (0.6, 0.2))


def test_split_category_counts():
    s = split_by_category(by_category(10, 4), 0.6, 0.3, rng_seed=0)
    assert len(s.train_categories) == 6 and len(s.heldout_categories) == 4


def test_split_val_eval_counts_within_category():
    trajs = by_category(2, 10)
    s = split_by_category(trajs, 0.5, 0.3, rng_seed=3)
    held = s.heldout_categories[0]
    assert sum(t.category == held for t in s.val) == 3
    assert sum(t.category == held for t in s.eval) == 7


def test_split_clamps_to_one_each_side():
    s = split_by_category(by_category(2, 3), 0.999, 0.3, rng_seed=0)
    assert len(s.train_categories) == 1 and len(s.heldout_categories) == 1


def test_split_needs_two_categories():
    with pytest.raises(ValueError, match="single-category"):
        split_by_category(by_category(1, 5), 0.5, 0.3)


@given(st.integers(2, 9), st.integers(1, 6), st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.integers(0, 99))
def test_split_partition_properties(n_cats, per_cat, frac, val_split, seed):
    trajs = by_category(n_cats, per_cat)
    s = split_by_category(trajs, frac, val_split, seed)
    assert not set(s.train_categories) & set(s.heldout_categories)
    assert all(t.category in s.train_categories for t in s.train)
    assert all(t.category in s.heldout_categories for t in s.val + s.eval)
    ids = Counter(t.traj_id for t in s.train + s.val + s.eval)
    assert ids == Counter(t.traj_id for t in trajs)
    assert s == split_by_category(trajs, frac, val_split, seed)


def test_subsample_examples():
    forty = by_category(4, 10)
    assert subsample(forty, 1.0) == forty
    assert len(subsample(forty, 0.1, 5)) == 4
    assert len(subsample(by_category(4, 1100), 0.1, 5)) == 440
    with pytest.raises(ValueError, match="empty"):
        subsample([], 0.5)


@given(st.integers(1, 60), st.floats(0.01, 1.0), st.integers(0, 99))
def test_subsample_properties(n, frac, seed):
    trajs = by_category(1, n)
    picked = subsample(trajs, frac, seed)
    assert len(picked) == min(n, int(np.ceil(frac * n - 1e-9)))
    assert len({t.traj_id for t in picked}) == len(picked)
    assert all(t in trajs for t in picked)
    assert picked == subsample(trajs, frac, seed)


def test_returns_to_go_examples():
    assert returns_to_go(make_traj("a", rewards=(0, 0, 19)), 1.0) == [19, 19, 19]
    assert returns_to_go(make_traj("a", rewards=(0, 0, 1)), 0.5) == [0.25, 0.5, 1.0]
    assert returns_to_go(make_traj("a", rewards=(7.0,)), 0.9) == [7.0]


def test_undiscounted_return_is_terminal_reward(offline):
    for t in offline:
        g0 = returns_to_go(t, 1.0)[0]
        T = hitting_time(t, 20)
        assert g0 == (20 - T if T < 20 else 0.0)


def test_dataset_round_trip(tmp_path, offline):
    p = tmp_path / "d.jsonl"
    save_dataset(p, [])
    assert p.read_text() == "" and load_dataset(p) == []
    save_dataset(p, offline[:1])
    assert load_dataset(p) == offline[:1]
    mixed = offline[:5] + [make_traj("s", source=SYNTHETIC)]
    save_dataset(p, mixed)
    assert load_dataset(p) == mixed
    text = p.read_text()
    save_dataset(p, load_dataset(p))
    assert p.read_text() == text


def test_missing_source_names_the_field(tmp_path, offline):
    obj = trajectory_to_json(offline[0])
    good = json.dumps(obj)
    del obj["source"]
    p = tmp_path / "bad.jsonl"
    p.write_text(good + "\n" + json.dumps(obj) + "\n")
    with pytest.raises(DatasetFormatError, match="line 2.*source"):
        load_dataset(p)


def test_malformed_json_reports_line(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text("{not json\n")
    with pytest.raises(DatasetFormatError, match="line 1"):
        load_dataset(p)
