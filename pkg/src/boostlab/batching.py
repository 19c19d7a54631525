"""Padded tensor views of trajectory collections for batched forward passes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .data import Trajectory, returns_to_go


@dataclass
class Batch:
    """One padded minibatch.

    ``tokens`` holds each trajectory's token stream; step ``t`` of a trajectory
    reads its state from token position ``2t`` and its successor from ``2t+2``.
    Step arrays are flat over all steps, with ``step_traj`` pointing at the
    owning row of ``tokens``.
    """

    tokens: torch.Tensor
    step_traj: torch.Tensor
    pos: torch.Tensor
    next_pos: torch.Tensor
    actions: torch.Tensor
    rewards: torch.Tensor
    dones: torch.Tensor
    returns: torch.Tensor
    steps_per_traj: torch.Tensor
    indices: np.ndarray

    @property
    def n_traj(self) -> int:
        return int(self.tokens.shape[0])


class TrajectoryTable:
    """Precomputed arrays for a fixed trajectory collection."""

    def __init__(self, trajectories: Sequence[Trajectory], gamma: float = 1.0):
        if not trajectories:
            raise ValueError("empty trajectory collection")
        self.trajectories = list(trajectories)
        self.gamma = float(gamma)
        n = len(self.trajectories)
        streams = [t.token_stream() for t in self.trajectories]
        self.lengths = np.array([len(t.steps) for t in self.trajectories])
        self.stream_len = np.array([len(s) for s in streams])
        self.tokens = np.zeros((n, int(self.stream_len.max())), dtype=np.int64)
        for i, s in enumerate(streams):
            self.tokens[i, :len(s)] = s
        self.offsets = np.concatenate([[0], np.cumsum(self.lengths)])
        self.actions = np.concatenate([[s.action for s in t.steps] for t in self.trajectories])
        self.rewards = np.concatenate([[s.reward for s in t.steps] for t in self.trajectories])
        self.dones = np.concatenate([[float(s.done) for s in t.steps] for t in self.trajectories])
        self.returns = np.concatenate([returns_to_go(t, self.gamma) for t in self.trajectories])
        self.step_t = np.concatenate([np.arange(k) for k in self.lengths])

    def __len__(self) -> int:
        return len(self.trajectories)

    def batch(self, indices) -> Batch:
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size == 0:
            raise ValueError("empty minibatch")
        L = int(self.stream_len[idx].max())
        sel = np.concatenate([np.arange(self.offsets[i], self.offsets[i + 1]) for i in idx])
        counts = self.lengths[idx]
        t = self.step_t[sel]
        last = np.concatenate([np.arange(k) == k - 1 for k in counts])
        # the final observation is not stored, so a last step points at itself
        nxt = np.where(last, 2 * t, 2 * t + 2)
        return Batch(
            tokens=torch.from_numpy(self.tokens[idx, :L].copy()),
            step_traj=torch.from_numpy(np.repeat(np.arange(idx.size), counts)),
            pos=torch.from_numpy(2 * t),
            next_pos=torch.from_numpy(nxt),
            actions=torch.from_numpy(self.actions[sel].copy()),
            rewards=torch.from_numpy(self.rewards[sel].astype(np.float64)),
            dones=torch.from_numpy(self.dones[sel].astype(np.float64)),
            returns=torch.from_numpy(self.returns[sel].astype(np.float64)),
            steps_per_traj=torch.from_numpy(counts.copy()),
            indices=idx,
        )

    def all(self) -> Batch:
        return self.batch(np.arange(len(self)))
