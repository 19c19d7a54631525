import numpy as np
import pytest
import torch

from boostlab.bilevel import (
    BilevelConfig,
    TrainingDiverged,
    TrainingError,
    make_state,
    phase1_update_psi,
    phase2_sync,
    phase3_update_theta,
    phase4_update_phi,
    phi_objective,
    train,
)
from boostlab.losses import LossConfig, combine_weighted, trajectory_losses
from boostlab.model import gradient

SMALL = dict(N=2, K_psi=3, K_theta=2, K_phi=2, eta_psi=1e-2, eta_theta=1e-2, eta_phi=1e-3, batch_size=4,
             grad_accum=2)


def cfg(**kw):
    return BilevelConfig(**{**SMALL, **kw})


@pytest.fixture
def state(split, synthetic, prior):
    return make_state(split, synthetic, cfg(), LossConfig("mc"), prior)


def warm(state):
    """Nonzero heads so that phases have something to move."""
    phase1_update_psi(state)
    phase2_sync(state)
    return state


@pytest.mark.parametrize("algo", ["mc", "ilql"])
def test_step_counts(split, synthetic, prior, algo):
    log = train(split, synthetic, cfg(N=2, K_psi=3), LossConfig(algo), prior)
    assert log.steps(1) == 6
    assert (log.steps(2), log.steps(3), log.steps(4)) == (2, 4, 4)
    assert len(log.weights) == 2


def test_vanilla_skips_upper_phases(split, prior):
    log = train(split, None, cfg(mode="vanilla"), LossConfig("mc"), prior)
    assert (log.steps(1), log.steps(3), log.steps(4)) == (6, 0, 0)


def test_phase1_k_zero_and_eta_zero(split, synthetic, prior):
    for kw in ({"K_psi": 0}, {"eta_psi": 0.0}):
        s = make_state(split, synthetic, cfg(**kw), LossConfig("mc"), prior)
        before = s.snapshot()
        phase1_update_psi(s)
        assert s.snapshot() == before


def test_phase1_one_step_matches_hand_gradient(split, synthetic, prior):
    """Heads-only step from zero heads: d/dQ of (Q - G)^2 + c (lse Q - Q_a) at Q = 0."""
    c = 2.0
    s = make_state(split, synthetic, cfg(K_psi=1, freeze_backbone_in_phase1=True, grad_accum=1),
                   LossConfig("mc", cql_weight=c), prior)
    idx = s.stream(1, "mixed").next()
    batch = s.mixed.batch(idx)
    with torch.no_grad():
        from boostlab.model import encode_batch

        H = encode_batch(s.params, batch.tokens)[batch.step_traj, batch.pos].numpy()
    A = prior.n_actions
    gW, gb = np.zeros((A, prior.d)), np.zeros(A)
    counts = batch.steps_per_traj.numpy()
    owner = batch.step_traj.numpy()
    for i in range(H.shape[0]):
        wt = 1.0 / idx.size / counts[owner[i]]
        a, G = int(batch.actions[i]), float(batch.returns[i])
        dq = np.full(A, c / A)
        dq[a] += -2.0 * G - c
        gW += wt * np.outer(dq, H[i])
        gb += wt * dq
    phase1_update_psi(s)
    eta = s.config.eta_psi
    assert np.allclose(s.params.heads["psi"]["q1_W"].numpy(), -eta * gW, atol=1e-12)
    assert np.allclose(s.params.heads["psi"]["q1_b"].numpy(), -eta * gb, atol=1e-12)


def test_phase1_isolation(state):
    before = state.snapshot()
    phase1_update_psi(state)
    after = state.snapshot()
    assert after["theta"] == before["theta"] and after["phi"] == before["phi"]
    assert after["psi"] != before["psi"] and after["backbone"] != before["backbone"]


def test_phase2_equality_no_aliasing_idempotence(state):
    warm(state)
    assert state.params.checksum("theta") == state.params.checksum("psi")
    state.params.heads["psi"]["q1_b"] += 1.0
    assert state.params.checksum("theta") != state.params.checksum("psi")
    phase2_sync(state)
    snap = state.snapshot()
    phase2_sync(state)
    assert state.snapshot() == snap


def test_phase3_alpha_zero_ignores_train_term(split, synthetic, prior):
    out = []
    for seed in (0, 1):
        s = make_state(split, synthetic, cfg(alpha=0.0), LossConfig("mc"), prior)
        warm(s)
        s.phi.load_flat(np.random.default_rng(seed).normal(size=s.phi.count()))
        phase3_update_theta(s)
        out.append(s.params.flat(("theta", "backbone")))
    assert np.array_equal(out[0], out[1])


def test_phase3_eta_zero(split, synthetic, prior):
    s = make_state(split, synthetic, cfg(eta_theta=0.0, eta_phi=0.0), LossConfig("mc"), prior)
    warm(s)
    before = s.snapshot()
    phase3_update_theta(s)
    assert s.snapshot() == before


def test_phase3_step_is_val_plus_alpha_train(split, synthetic, prior):
    s = make_state(split, synthetic, cfg(K_theta=1, alpha=1.0), LossConfig("mc"), prior)
    warm(s)
    vidx, midx = s.stream(3, "val").next(), s.stream(3, "mixed").next()
    groups = ("theta", "backbone")
    g_val = gradient(lambda p: s.val_term(p, vidx), s.params, groups).values.numpy()
    batch = s.mixed.batch(midx)
    g_tr = gradient(lambda p: combine_weighted(trajectory_losses(p, "theta", batch, s.loss_cfg), s.logits(midx),
                                               s.segments(midx.size)), s.params, groups).values.numpy()
    x0 = s.params.flat(groups)
    phase3_update_theta(s)
    assert np.allclose(s.params.flat(groups), x0 - s.config.eta_theta * (g_val + g_tr), rtol=0, atol=1e-12)


def test_phase3_isolation(state):
    warm(state)
    before = state.snapshot()
    phase3_update_theta(state)
    after = state.snapshot()
    assert after["psi"] == before["psi"] and after["phi"] == before["phi"]


def test_phi_gradient_cancels_post_sync(state):
    warm(state)
    for k in range(5):
        midx = state.stream(4, "mixed").next()
        _, g = phi_objective(state, np.roll(midx, k))
        assert float(g.norm()) < 1e-10


def test_phase4_alpha_zero_and_isolation(split, synthetic, prior):
    s = make_state(split, synthetic, cfg(alpha=0.0), LossConfig("mc"), prior)
    warm(s)
    phase3_update_theta(s)
    phi = s.phi.flat()
    phase4_update_phi(s)
    assert np.array_equal(s.phi.flat(), phi)
    s = make_state(split, synthetic, cfg(alpha=1.0), LossConfig("mc"), prior)
    warm(s)
    phase3_update_theta(s)
    before = s.snapshot()
    phase4_update_phi(s)
    after = s.snapshot()
    assert after["phi"] != before["phi"]
    assert all(after[k] == before[k] for k in ("backbone", "theta", "psi"))


def test_phi_gradient_favours_trajectory_where_theta_wins():
    l_theta = torch.tensor([1.0, 3.0], dtype=torch.float64)
    l_psi = torch.tensor([2.0, 2.0], dtype=torch.float64)
    z = torch.zeros(2, dtype=torch.float64, requires_grad=True)
    (combine_weighted(l_theta, z) - combine_weighted(l_psi, z)).backward()
    # by hand: w = (1/2, 1/2), d/dz1 = w1 (d1 - sum w d) = 0.5 * (-1 - 0) = -0.5
    assert np.allclose(z.grad.numpy(), [-0.5, 0.5], atol=1e-15)
    z2 = (z - 0.1 * z.grad).detach()
    assert torch.softmax(z2, 0)[0] > 0.5


def test_vanilla_equals_degenerate_bilevel(split, synthetic, prior):
    base = dict(alpha=0.0, K_theta=0, K_phi=0)
    a = train(split, None, cfg(mode="vanilla", **base), LossConfig("mc"), prior)
    b = train(split, None, cfg(mode="bilevel_only", **base), LossConfig("mc"), prior)
    assert np.array_equal(a.params.flat(), b.params.flat())
    c = train(split, synthetic, cfg(mode="vanilla_syn", **base), LossConfig("mc"), prior)
    d = train(split, synthetic, cfg(mode="boost", **base), LossConfig("mc"), prior)
    assert np.array_equal(c.params.flat(), d.params.flat())


def test_vanilla_syn_weights_stay_uniform(split, synthetic, prior):
    log = train(split, synthetic, cfg(mode="vanilla_syn"), LossConfig("mc"), prior)
    n = len(split.train) + len(synthetic)
    assert all(np.array_equal(w, np.full(n, 1.0 / n)) for w in log.weights)


def test_isolation_and_sync_every_iteration(split, synthetic, prior):
    log = train(split, synthetic, cfg(N=3), LossConfig("ilql"), prior)
    allowed = {1: {"psi", "backbone"}, 2: {"theta"}, 3: {"theta", "backbone"}, 4: {"phi"}}
    assert len(log.checksums) == 12
    for entry in log.checksums:
        assert set(entry["changed"]) <= allowed[entry["phase"]]
        if entry["phase"] == 2:
            assert entry["theta"] == entry["psi"]


def test_training_is_deterministic(split, synthetic, prior):
    a = train(split, synthetic, cfg(), LossConfig("ilql"), prior)
    b = train(split, synthetic, cfg(), LossConfig("ilql"), prior)
    assert a.csv_text() == b.csv_text() and a.weights_jsonl() == b.weights_jsonl()
    assert np.array_equal(a.params.flat(), b.params.flat()) and np.array_equal(a.phi.flat(), b.phi.flat())


def test_log_csv_shape(split, synthetic, prior):
    log = train(split, synthetic, cfg(), LossConfig("mc"), prior)
    lines = log.csv_text().splitlines()
    assert lines[0] == "outer_iter,phase,step,loss"
    assert len(lines) - 1 == 2 * (3 + 1 + 2 + 2)
    assert len(log.weights_jsonl().splitlines()) == 2


def test_divergence_guard(state):
    with pytest.raises(TrainingDiverged, match="phase 3"):
        state.record(3, 7, 2e6)
    with pytest.raises(TrainingDiverged):
        state.record(1, 0, float("nan"))


def test_config_validation(split, prior):
    with pytest.raises(TrainingError, match="mode"):
        BilevelConfig(mode="magic")
    with pytest.raises(TrainingError, match="alpha"):
        BilevelConfig(alpha=-1.0)
    with pytest.warns(UserWarning, match="eta_phi"):
        BilevelConfig(eta_theta=1e-4, eta_phi=1e-3)
    assert BilevelConfig(eta_theta=1e-3).eta_phi_value == pytest.approx(1e-4)
    with pytest.raises(TrainingError, match="synthetic"):
        train(split, None, cfg(mode="boost"), LossConfig("mc"), prior)
