import pytest
import torch
from hypothesis import HealthCheck, settings

from boostlab.data import REAL, Step, Trajectory, collect_offline, split_by_category
from boostlab.env import TaskSpec, default_guess_world
from boostlab.model import ParameterSet, behavior_clone
from boostlab.synth import SynthConfig, synthesize

settings.register_profile("lab", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("lab")


def make_traj(traj_id, category="c0", rewards=(0.0,), actions=None, source=REAL, n_actions=2, task_id=None):
    """Hand-built trajectory; observation tokens are fixed at the first observation id."""
    actions = list(actions) if actions is not None else [0] * len(rewards)
    obs_tok = 1 + n_actions
    steps, toks = [], [0]
    for t, (a, r) in enumerate(zip(actions, rewards)):
        steps.append(Step(tuple(toks), int(a), float(r), t == len(rewards) - 1))
        toks += [1 + int(a), obs_tok]
    task = TaskSpec(task_id or f"{category}-task", category, {})
    return Trajectory(traj_id, task, tuple(steps), source, 0.0)


def bias_params(q1_b, algo="mc", d=1, vocab=8, **heads):
    """Zero backbone, so every state encodes to h = 0 and Q equals the bias."""
    q1_b = torch.as_tensor(q1_b, dtype=torch.float64)
    p = ParameterSet(vocab, q1_b.numel(), d, algo)
    for role in ("theta", "psi"):
        p.heads[role]["q1_b"] = q1_b.clone()
        for k, v in heads.items():
            p.heads[role][k] = torch.as_tensor(v, dtype=torch.float64).clone()
    return p


@pytest.fixture(scope="session")
def world():
    return default_guess_world(seed=0, n_items=16, n_attr=5, n_categories=4)


@pytest.fixture(scope="session")
def offline(world):
    return collect_offline(world, 160, (0.1, 0.7), rng_seed=0)


@pytest.fixture(scope="session")
def split(offline):
    return split_by_category(offline, 0.5, 0.3, rng_seed=0)


@pytest.fixture(scope="session")
def prior(world, split):
    return behavior_clone(list(split.train) + list(split.val), world, epochs=30, lr=1e-2, rng_seed=0, d=8)


@pytest.fixture(scope="session")
def synthetic(world, split, prior):
    return synthesize(split.train, prior, world, SynthConfig(rng_seed=0))


def tiny_config(**overrides):
    """Seconds-scale experiment config for pipeline-level tests."""
    from boostlab.config import ExperimentConfig

    values = dict(
        env={"n_items": 16, "n_attr": 5, "n_categories": 4},
        data={"n_trajectories": 160, "low_data_fraction": 0.5},
        model={"d": 6, "bc_epochs": 5},
        bilevel={"N": 1, "K_psi": 2, "K_theta": 2, "K_phi": 1, "batch_size": 4, "grad_accum": 1},
        eval={"n_runs": 6},
        matrix={"regimes": ("low",)},
    )
    for k, v in overrides.items():
        values[k] = {**values.get(k, {}), **v}
    return ExperimentConfig().with_values(**values)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
