"""Four-phase bilevel trainer with trajectory reweighting.

Each outer iteration runs:

1. ``psi`` heads (plus the shared backbone) descend the weighted train loss.
2. ``theta`` heads are overwritten with a copy of the ``psi`` heads.
3. ``theta`` heads (plus backbone) descend ``val + alpha * weighted train``.
4. the reweighting head descends ``val + alpha * (train(theta) - train(psi))``.

Only one parameter group moves per phase; a checksum after each phase
enforces that. Vanilla modes stop after phase 2 with uniform weights.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .batching import TrajectoryTable
from .data import DatasetSplit, Trajectory
from .losses import LossConfig, combine_weighted, trajectory_losses
from .model import (
    GradientVector,
    ParameterSet,
    encode_batch,
    gradient,
    init_from_pretrained,
    sgd_step,
    sync_theta_from_psi,
)
from .reweight import EmbeddingCache, ReweightHead, ensure_cache
from .seeding import derive_seed

VANILLA = "vanilla"
VANILLA_SYN = "vanilla_syn"
BILEVEL_ONLY = "bilevel_only"
BOOST = "boost"
MODES = (VANILLA, VANILLA_SYN, BILEVEL_ONLY, BOOST)
BILEVEL_MODES = (BILEVEL_ONLY, BOOST)
SYNTH_MODES = (VANILLA_SYN, BOOST)

DIVERGENCE_LIMIT = 1e6


class TrainingError(RuntimeError):
    pass


class TrainingDiverged(TrainingError):
    def __init__(self, phase: int, step: int, loss: float):
        super().__init__(f"phase {phase} diverged at step {step}: loss={loss}")
        self.phase, self.step, self.loss = phase, step, loss


@dataclass(frozen=True)
class BilevelConfig:
    N: int = 5
    K_psi: int = 20
    K_theta: int = 20
    K_phi: int = 1
    eta_psi: float = 1e-4
    eta_theta: float = 1e-4
    eta_phi: float | None = None
    alpha: float = 1.0
    batch_size: int = 8
    grad_accum: int = 16
    rng_seed: int = 0
    mode: str = BOOST
    optimizer: str = "sgd"
    freeze_backbone_in_phase1: bool = False
    full_batch_softmax: bool = False
    phi_hidden: int = 64
    phi_depth: int = 2

    def __post_init__(self):
        if self.mode not in MODES:
            raise TrainingError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise TrainingError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.N < 1:
            raise TrainingError("N must be >= 1")
        for k in ("K_psi", "K_theta", "K_phi"):
            if getattr(self, k) < 0:
                raise TrainingError(f"{k} must be >= 0")
        for k in ("eta_psi", "eta_theta", "eta_phi_value"):
            v = getattr(self, k)
            if not np.isfinite(v) or v < 0:
                raise TrainingError(f"{k.replace('_value', '')} must be finite and >= 0")
        if self.alpha < 0:
            raise TrainingError("alpha must be >= 0")
        if self.batch_size < 1 or self.grad_accum < 1:
            raise TrainingError("batch_size and grad_accum must be >= 1")
        if self.eta_phi_value > self.eta_theta:
            warnings.warn("eta_phi exceeds eta_theta; the reweighting head is meant to move more slowly")

    @property
    def eta_phi_value(self) -> float:
        return self.eta_theta / 10.0 if self.eta_phi is None else float(self.eta_phi)

    @property
    def step_size(self) -> int:
        return self.batch_size * self.grad_accum


@dataclass
class TrainLog:
    mode: str
    entries: list = field(default_factory=list)
    weights: list = field(default_factory=list)
    checksums: list = field(default_factory=list)
    params: ParameterSet | None = None
    phi: ReweightHead | None = None
    ids: tuple = ()
    sources: tuple = ()

    def steps(self, phase: int) -> int:
        return sum(1 for e in self.entries if e[1] == phase)

    def curve(self, phase: int) -> list[float]:
        return [e[3] for e in self.entries if e[1] == phase]

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["outer_iter", "phase", "step", "loss"])
        for it, ph, st, loss in self.entries:
            w.writerow([it, ph, st, repr(float(loss))])
        return buf.getvalue()

    def weights_jsonl(self) -> str:
        lines = []
        for it, ws in enumerate(self.weights):
            lines.append(json.dumps({"outer_iter": it, "weights": dict(zip(self.ids, map(float, ws)))},
                                    sort_keys=True, separators=(",", ":")))
        return "".join(line + "\n" for line in lines)

    def final_weights(self) -> np.ndarray:
        return np.asarray(self.weights[-1])


class BatchStream:
    """Epoch-style sampling without replacement; the last short chunk is kept."""

    def __init__(self, n: int, size: int, seed: int):
        self.n, self.size = int(n), int(size)
        self.rng = np.random.default_rng(seed)
        self.order = np.zeros(0, dtype=np.int64)
        self.pos = 0

    def next(self) -> np.ndarray:
        if self.pos >= self.order.size:
            self.order = self.rng.permutation(self.n)
            self.pos = 0
        out = self.order[self.pos:self.pos + self.size]
        self.pos += self.size
        return out


class _Adam:
    def __init__(self, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, self.betas, self.eps = lr, betas, eps
        self.m = self.v = None
        self.t = 0

    def direction(self, g: torch.Tensor) -> torch.Tensor:
        b1, b2 = self.betas
        if self.m is None:
            self.m, self.v = torch.zeros_like(g), torch.zeros_like(g)
        self.t += 1
        self.m = b1 * self.m + (1 - b1) * g
        self.v = b2 * self.v + (1 - b2) * g * g
        mhat = self.m / (1 - b1 ** self.t)
        vhat = self.v / (1 - b2 ** self.t)
        return mhat / (vhat.sqrt() + self.eps)


class TrainerState:
    """Everything the phases read and write during one run."""

    def __init__(self, params: ParameterSet, phi: ReweightHead, config: BilevelConfig, loss_cfg: LossConfig,
                 mixed: TrajectoryTable, val: TrajectoryTable | None, embeddings: torch.Tensor, log: TrainLog):
        self.params, self.phi = params, phi
        self.config, self.loss_cfg = config, loss_cfg
        self.mixed, self.val = mixed, val
        self.embeddings = embeddings
        self.log = log
        self.outer = 0
        self._adam = {}

    # -- helpers

    def stream(self, phase: int, which: str) -> BatchStream:
        n = len(self.mixed) if which == "mixed" else len(self.val)
        return BatchStream(n, self.config.step_size, derive_seed(self.config.rng_seed, "batches", self.outer, phase, which))

    def segments(self, n: int):
        if self.config.full_batch_softmax:
            return None
        b = self.config.batch_size
        return [np.arange(s, min(s + b, n)) for s in range(0, n, b)]

    def logits(self, idx: np.ndarray, grad: bool = False) -> torch.Tensor:
        if self.config.mode not in BILEVEL_MODES:
            return torch.zeros(idx.size, dtype=torch.float64)
        if grad:
            return self.phi.forward(self.embeddings[idx])
        with torch.no_grad():
            return self.phi.forward(self.embeddings[idx])

    def val_term(self, params: ParameterSet, idx: np.ndarray) -> torch.Tensor:
        batch = self.val.batch(idx)
        per = trajectory_losses(params, "theta", batch, self.loss_cfg)
        return torch.stack([per[s].mean() for s in self.segments(idx.size) or [np.arange(idx.size)]]).mean()

    def update(self, groups, grad: GradientVector, lr: float) -> None:
        if self.config.optimizer == "sgd":
            sgd_step(self.params, groups, grad, lr)
            return
        opt = self._adam.setdefault(tuple(groups), _Adam(lr))
        sgd_step(self.params, groups, GradientVector(grad.groups, opt.direction(grad.values)), lr)

    def update_phi(self, g: torch.Tensor, lr: float) -> None:
        if self.config.optimizer == "adam":
            g = self._adam.setdefault(("phi",), _Adam(lr)).direction(g)
        self.phi.load_flat(self.phi.flat() - lr * g.numpy())

    def record(self, phase: int, step: int, loss: float) -> None:
        if not np.isfinite(loss) or abs(loss) > DIVERGENCE_LIMIT:
            raise TrainingDiverged(phase, step, loss)
        self.log.entries.append((self.outer, phase, step, float(loss)))

    def snapshot(self) -> dict:
        return {
            "backbone": self.params.checksum("backbone"),
            "theta": self.params.checksum("theta"),
            "psi": self.params.checksum("psi"),
            "phi": self.phi.checksum(),
        }

    def check_isolation(self, phase: int, before: dict, allowed: set) -> None:
        after = self.snapshot()
        changed = {k for k in before if before[k] != after[k]}
        self.log.checksums.append({"outer_iter": self.outer, "phase": phase, "changed": sorted(changed), **after})
        if not changed <= allowed:
            raise TrainingError(f"phase {phase} modified {sorted(changed - allowed)}")


# ---------------------------------------------------------------- phases

def phase1_update_psi(state: TrainerState) -> TrainerState:
    cfg = state.config
    groups = ("psi",) if cfg.freeze_backbone_in_phase1 else ("psi", "backbone")
    before = state.snapshot()
    stream = state.stream(1, "mixed")
    for k in range(cfg.K_psi):
        idx = stream.next()
        batch = state.mixed.batch(idx)
        logits = state.logits(idx)
        seg = state.segments(idx.size)
        value = {}

        def loss_fn(p):
            loss = combine_weighted(trajectory_losses(p, "psi", batch, state.loss_cfg), logits, seg)
            value["loss"] = float(loss.detach())
            return loss

        g = gradient(loss_fn, state.params, groups)
        state.record(1, k, value["loss"])
        state.update(groups, g, cfg.eta_psi)
    state.check_isolation(1, before, set(groups))
    return state


def phase2_sync(state: TrainerState) -> TrainerState:
    before = state.snapshot()
    sync_theta_from_psi(state.params)
    state.record(2, 0, 0.0)
    state.check_isolation(2, before, {"theta"})
    return state


def phase3_update_theta(state: TrainerState) -> TrainerState:
    cfg = state.config
    groups = ("theta", "backbone")
    before = state.snapshot()
    vstream, mstream = state.stream(3, "val"), state.stream(3, "mixed")
    for k in range(cfg.K_theta):
        vidx = vstream.next()
        midx = mstream.next() if cfg.alpha > 0 else None
        value = {}

        def loss_fn(p):
            loss = state.val_term(p, vidx)
            if midx is not None:
                batch = state.mixed.batch(midx)
                train = combine_weighted(trajectory_losses(p, "theta", batch, state.loss_cfg),
                                         state.logits(midx), state.segments(midx.size))
                loss = loss + cfg.alpha * train
            value["loss"] = float(loss.detach())
            return loss

        g = gradient(loss_fn, state.params, groups)
        state.record(3, k, value["loss"])
        state.update(groups, g, cfg.eta_theta)
    state.check_isolation(3, before, set(groups))
    return state


def phi_objective(state: TrainerState, midx: np.ndarray, vidx: np.ndarray | None = None):
    """Phase-4 loss as a function of the reweighting head, plus its gradient.

    Both roles' per-trajectory losses come from one backbone pass on the same
    minibatch and share the softmax normalization.
    """
    cfg = state.config
    batch = state.mixed.batch(midx)
    with torch.no_grad():
        H = encode_batch(state.params, batch.tokens)
        l_theta = trajectory_losses(state.params, "theta", batch, state.loss_cfg, H)
        l_psi = trajectory_losses(state.params, "psi", batch, state.loss_cfg, H)
        l_val = state.val_term(state.params, vidx) if vidx is not None else torch.zeros((), dtype=torch.float64)
    tensors = state.phi.tensors()
    for t in tensors:
        t.requires_grad_(True)
    try:
        logits = state.phi.forward(state.embeddings[midx])
        seg = state.segments(midx.size)
        loss = l_val + cfg.alpha * (combine_weighted(l_theta, logits, seg) - combine_weighted(l_psi, logits, seg))
        grads = torch.autograd.grad(loss, tensors)
    finally:
        for t in tensors:
            t.requires_grad_(False)
    return float(loss.detach()), torch.cat([g.reshape(-1) for g in grads])


def phase4_update_phi(state: TrainerState) -> TrainerState:
    cfg = state.config
    before = state.snapshot()
    vstream, mstream = state.stream(4, "val"), state.stream(4, "mixed")
    for k in range(cfg.K_phi):
        loss, g = phi_objective(state, mstream.next(), vstream.next())
        if not torch.isfinite(g).all():
            raise TrainingDiverged(4, k, float("nan"))
        state.record(4, k, loss)
        state.update_phi(g, cfg.eta_phi_value)
    state.check_isolation(4, before, {"phi"})
    return state


# ---------------------------------------------------------------- driver

def training_data(split: DatasetSplit, synth: Sequence[Trajectory] | None, mode: str) -> list[Trajectory]:
    if mode in SYNTH_MODES:
        if not synth:
            raise TrainingError(f"mode {mode} needs synthetic trajectories")
        return list(split.train) + list(synth)
    return list(split.train)


def make_state(split: DatasetSplit, synth, config: BilevelConfig, loss_cfg: LossConfig, pretrained: ParameterSet,
               cache: EmbeddingCache | None = None, phi: ReweightHead | None = None) -> TrainerState:
    data = training_data(split, synth, config.mode)
    if config.mode in BILEVEL_MODES and not split.val:
        raise TrainingError("bilevel modes need a nonempty validation set")
    mixed = TrajectoryTable(data, loss_cfg.gamma)
    val = TrajectoryTable(split.val, loss_cfg.gamma) if split.val else None
    cache = ensure_cache(cache, pretrained, data)
    embeddings = torch.from_numpy(cache.matrix([t.traj_id for t in data]))
    if phi is None:
        phi = ReweightHead(pretrained.d, config.phi_hidden, config.phi_depth,
                           rng_seed=derive_seed(config.rng_seed, "phi"))
    params = init_from_pretrained(pretrained, loss_cfg.algo)
    log = TrainLog(config.mode, ids=tuple(t.traj_id for t in data), sources=tuple(t.source for t in data))
    return TrainerState(params, phi, config, loss_cfg, mixed, val, embeddings, log)


def current_weights(state: TrainerState) -> np.ndarray:
    n = len(state.mixed)
    if state.config.mode not in BILEVEL_MODES:
        return np.full(n, 1.0 / n)
    with torch.no_grad():
        logits = state.phi.forward(state.embeddings).numpy()
    from .reweight import normalize_minibatch
    from .losses import LOGIT_CLAMP
    return normalize_minibatch(logits, clamp=LOGIT_CLAMP)


def train(split: DatasetSplit, synth, config: BilevelConfig, loss_cfg: LossConfig, pretrained: ParameterSet,
          cache: EmbeddingCache | None = None, phi: ReweightHead | None = None) -> TrainLog:
    """Run ``config.N`` outer iterations; returns the log with final parameters."""
    state = make_state(split, synth, config, loss_cfg, pretrained, cache, phi)
    bilevel = config.mode in BILEVEL_MODES
    for it in range(config.N):
        state.outer = it
        phase1_update_psi(state)
        phase2_sync(state)
        if bilevel:
            phase3_update_theta(state)
            phase4_update_phi(state)
        state.log.weights.append(current_weights(state))
    state.log.params = state.params
    state.log.phi = state.phi
    return state.log
