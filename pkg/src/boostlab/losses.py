"""MC and ILQL losses, the conservative penalty and the trajectory-weighted loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .batching import Batch
from .model import ILQL, MC, ParameterSet, encode_batch, q_values, v_value

LOGIT_CLAMP = 30.0


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    algo: str = MC
    gamma: float = 1.0
    expectile_tau: float = 0.7
    cql_weight: float = 10.0
    beta: float = 1.0

    def __post_init__(self):
        if self.algo not in (MC, ILQL):
            raise LossError(f"algo must be 'mc' or 'ilql', got {self.algo!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise LossError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 < self.expectile_tau < 1.0:
            raise LossError(f"expectile_tau must lie in (0, 1), got {self.expectile_tau}")
        if self.cql_weight < 0:
            raise LossError(f"cql_weight must be >= 0, got {self.cql_weight}")
        if not np.isfinite(self.beta) or self.beta < 0:
            raise LossError(f"beta must be finite and >= 0, got {self.beta}")


def expectile_loss(u, tau: float):
    """|tau - 1{u<0}| * u**2, elementwise for tensors."""
    if not 0.0 < tau < 1.0:
        raise LossError(f"tau must lie in (0, 1), got {tau}")
    if isinstance(u, torch.Tensor):
        w = torch.where(u < 0, torch.full_like(u, 1.0 - tau), torch.full_like(u, tau))
        return w * u * u
    u = float(u)
    return (1.0 - tau if u < 0 else tau) * u * u


def conservative_gap(q: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
    """logsumexp_a Q(s, a) - Q(s, a_data); always >= 0."""
    return torch.logsumexp(q, dim=-1) - q.gather(-1, actions[:, None]).squeeze(-1)


def step_hidden(params: ParameterSet, batch: Batch, H: torch.Tensor | None = None):
    if H is None:
        H = encode_batch(params, batch.tokens)
    return H[batch.step_traj, batch.pos], H[batch.step_traj, batch.next_pos]


def step_losses(params: ParameterSet, role: str, batch: Batch, cfg: LossConfig,
                H: torch.Tensor | None = None) -> torch.Tensor:
    """Unweighted loss of every step in the batch, shape (S,)."""
    if cfg.algo != params.algo:
        raise LossError(f"loss algo {cfg.algo} does not match parameter algo {params.algo}")
    h, h_next = step_hidden(params, batch, H)
    a = batch.actions
    if cfg.algo == MC:
        q = q_values(params, h, role, "q1")
        q_sa = q.gather(-1, a[:, None]).squeeze(-1)
        return (q_sa - batch.returns) ** 2 + cfg.cql_weight * conservative_gap(q, a)
    v_next = v_value(params, h_next, role).detach()
    target = batch.rewards + cfg.gamma * (1.0 - batch.dones) * v_next
    v = v_value(params, h, role)
    total = 0.0
    q_sa = []
    for head in ("q1", "q2"):
        q = q_values(params, h, role, head)
        qa = q.gather(-1, a[:, None]).squeeze(-1)
        q_sa.append(qa)
        total = total + (target - qa) ** 2 + cfg.cql_weight * conservative_gap(q, a)
    q_min = torch.minimum(q_sa[0], q_sa[1]).detach()
    return total + expectile_loss(q_min - v, cfg.expectile_tau)


def _check_weights(weights, n: int) -> torch.Tensor:
    w = torch.as_tensor(weights, dtype=torch.float64)
    if w.shape != (n,):
        raise LossError(f"weight/batch length mismatch: {tuple(w.shape)} vs {n}")
    if bool((w < 0).any()):
        raise LossError("weights must be nonnegative")
    return w


def mc_loss(params: ParameterSet, role: str, batch: Batch, weights, cfg: LossConfig | None = None) -> torch.Tensor:
    """sum_i w_i (Q(s_i,a_i) - G_i)^2 + cql * sum_i w_i (lse Q(s_i) - Q(s_i,a_i)) over steps."""
    cfg = cfg or LossConfig(MC)
    if cfg.algo != MC:
        raise LossError("mc_loss needs an MC loss config")
    per = step_losses(params, role, batch, cfg)
    return (_check_weights(weights, per.numel()) * per).sum()


def ilql_loss(params: ParameterSet, role: str, batch: Batch, weights, cfg: LossConfig | None = None) -> torch.Tensor:
    cfg = cfg or LossConfig(ILQL)
    if cfg.algo != ILQL:
        raise LossError("ilql_loss needs an ILQL loss config")
    per = step_losses(params, role, batch, cfg)
    return (_check_weights(weights, per.numel()) * per).sum()


def trajectory_losses(params: ParameterSet, role: str, batch: Batch, cfg: LossConfig,
                      H: torch.Tensor | None = None) -> torch.Tensor:
    """Mean step loss of every trajectory in the batch, shape (B,)."""
    per = step_losses(params, role, batch, cfg, H)
    sums = torch.zeros(batch.n_traj, dtype=per.dtype).index_add(0, batch.step_traj, per)
    return sums / batch.steps_per_traj.to(per.dtype)


def softmax_weights(logits: torch.Tensor) -> torch.Tensor:
    logits = torch.clamp(logits, -LOGIT_CLAMP, LOGIT_CLAMP)
    return torch.softmax(logits, dim=0)


def combine_weighted(per_traj: torch.Tensor, logits: torch.Tensor,
                     segments: Sequence[np.ndarray] | None = None) -> torch.Tensor:
    """Softmax within each segment (micro-batch), weighted sums averaged over segments."""
    if per_traj.numel() == 0:
        raise LossError("empty minibatch")
    if logits.shape != per_traj.shape:
        raise LossError("one logit per trajectory required")
    if segments is None:
        return (softmax_weights(logits) * per_traj).sum()
    parts = [(softmax_weights(logits[s]) * per_traj[s]).sum() for s in segments]
    return torch.stack(parts).mean()


def weighted_train_loss(params: ParameterSet, role: str, logits: torch.Tensor, batch: Batch,
                        cfg: LossConfig, segments=None, H: torch.Tensor | None = None) -> torch.Tensor:
    """sum_tau softmax(logits)_tau * L_RL(role; tau).

    ``logits`` are the reweighting head's outputs for the batch's trajectories;
    gradients flow into them as well as into the role's parameters.
    """
    if batch.n_traj == 0:
        raise LossError("empty minibatch")
    return combine_weighted(trajectory_losses(params, role, batch, cfg, H), logits, segments)


def val_loss(params: ParameterSet, batch: Batch, cfg: LossConfig, role: str = "theta",
             H: torch.Tensor | None = None) -> torch.Tensor:
    return trajectory_losses(params, role, batch, cfg, H).mean()
