"""Recurrent backbone with linear Q/V heads for two roles sharing one backbone.

Parameter groups:

* ``backbone``: token embedding plus GRU layers, stored exactly once.
* ``theta``: the primary policy's heads.
* ``psi``: the auxiliary policy's heads (same shapes as ``theta``).

Everything runs in float64 so gradients can be checked against finite
differences. Rollouts use a numpy copy of the encoder that advances one
token at a time.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .seeding import make_rng

DTYPE = torch.float64
MC = "mc"
ILQL = "ilql"
ALGOS = (MC, ILQL)
ROLES = ("theta", "psi")
GROUPS = ("backbone", "theta", "psi")

_HEADS = {MC: ("q1_W", "q1_b"), ILQL: ("q1_W", "q1_b", "q2_W", "q2_b", "v_W", "v_b")}

CHECKPOINT_MAGIC = b"BSTC"
CHECKPOINT_VERSION = 1


class ModelError(ValueError):
    pass


def _backbone_names(n_layers: int) -> list[str]:
    names = ["embed"]
    for layer in range(n_layers):
        names += [f"W_ih{layer}", f"W_hh{layer}", f"b_ih{layer}", f"b_hh{layer}"]
    return names


class ParameterSet:
    """Backbone + per-role head blocks, enumerated in a fixed order."""

    def __init__(self, vocab_size: int, n_actions: int, d: int, algo: str, n_layers: int = 1,
                 backbone: dict | None = None, theta: dict | None = None, psi: dict | None = None):
        if algo not in ALGOS:
            raise ModelError(f"algo must be one of {ALGOS}, got {algo!r}")
        self.vocab_size, self.n_actions, self.d = int(vocab_size), int(n_actions), int(d)
        self.algo, self.n_layers = algo, int(n_layers)
        self.backbone = backbone if backbone is not None else self._zero_backbone()
        self.heads = {
            "theta": theta if theta is not None else self.zero_heads(),
            "psi": psi if psi is not None else self.zero_heads(),
        }
        for name in _backbone_names(self.n_layers):
            if name not in self.backbone:
                raise ModelError(f"backbone missing tensor {name}")
        for role in ROLES:
            if set(self.heads[role]) != set(_HEADS[algo]):
                raise ModelError(f"{role} heads do not match algo {algo}")

    # -- construction

    def _zero_backbone(self) -> dict:
        d = self.d
        out = {"embed": torch.zeros(self.vocab_size, d, dtype=DTYPE)}
        for layer in range(self.n_layers):
            out[f"W_ih{layer}"] = torch.zeros(3 * d, d, dtype=DTYPE)
            out[f"W_hh{layer}"] = torch.zeros(3 * d, d, dtype=DTYPE)
            out[f"b_ih{layer}"] = torch.zeros(3 * d, dtype=DTYPE)
            out[f"b_hh{layer}"] = torch.zeros(3 * d, dtype=DTYPE)
        return out

    def zero_heads(self) -> dict:
        a, d = self.n_actions, self.d
        shapes = {"q1_W": (a, d), "q1_b": (a,), "q2_W": (a, d), "q2_b": (a,), "v_W": (1, d), "v_b": (1,)}
        return {k: torch.zeros(shapes[k], dtype=DTYPE) for k in _HEADS[self.algo]}

    # -- enumeration

    def names(self, group: str) -> list[str]:
        if group == "backbone":
            return _backbone_names(self.n_layers)
        if group in ROLES:
            return list(_HEADS[self.algo])
        raise ModelError(f"unknown parameter group {group!r}")

    def group(self, group: str) -> list[torch.Tensor]:
        store = self.backbone if group == "backbone" else self.heads[group]
        return [store[n] for n in self.names(group)]

    def tensors(self, groups: Sequence[str] = GROUPS) -> list[torch.Tensor]:
        out = []
        for g in groups:
            out += self.group(g)
        return out

    def count(self, groups: Sequence[str] | str = GROUPS) -> int:
        groups = (groups,) if isinstance(groups, str) else groups
        return sum(t.numel() for t in self.tensors(groups))

    def flat(self, groups: Sequence[str] | str = GROUPS) -> np.ndarray:
        groups = (groups,) if isinstance(groups, str) else groups
        ts = self.tensors(groups)
        if not ts:
            return np.zeros(0)
        return torch.cat([t.detach().reshape(-1) for t in ts]).numpy().copy()

    def load_flat(self, groups: Sequence[str] | str, values) -> None:
        groups = (groups,) if isinstance(groups, str) else groups
        values = torch.tensor(np.asarray(values, dtype=np.float64))
        if values.numel() != self.count(groups):
            raise ModelError("flat vector length does not match the parameter groups")
        off = 0
        with torch.no_grad():
            for t in self.tensors(groups):
                n = t.numel()
                t.copy_(values[off:off + n].reshape(t.shape))
                off += n

    def checksum(self, group: str) -> str:
        return hashlib.sha256(self.flat(group).tobytes()).hexdigest()

    def clone(self) -> "ParameterSet":
        cp = lambda d: {k: v.detach().clone() for k, v in d.items()}
        return ParameterSet(self.vocab_size, self.n_actions, self.d, self.algo, self.n_layers,
                            cp(self.backbone), cp(self.heads["theta"]), cp(self.heads["psi"]))

    def requires_grad_(self, flag: bool = True) -> "ParameterSet":
        for t in self.tensors():
            t.requires_grad_(flag)
        return self


def init_params(vocab_size: int, n_actions: int, d: int = 32, algo: str = MC, n_layers: int = 1,
                rng_seed: int = 0) -> ParameterSet:
    """Backbone from U(-1/sqrt(d), 1/sqrt(d)); heads zero so the initial Q is 0."""
    params = ParameterSet(vocab_size, n_actions, d, algo, n_layers)
    rng = make_rng(rng_seed, "init_params")
    bound = 1.0 / np.sqrt(d)
    with torch.no_grad():
        for name in params.names("backbone"):
            t = params.backbone[name]
            t.copy_(torch.from_numpy(rng.uniform(-bound, bound, size=tuple(t.shape))))
    return params


def init_from_pretrained(pretrained: ParameterSet, algo: str) -> ParameterSet:
    """Fresh zero heads for both roles on a copy of the pretrained backbone."""
    bb = {k: v.detach().clone() for k, v in pretrained.backbone.items()}
    return ParameterSet(pretrained.vocab_size, pretrained.n_actions, pretrained.d, algo,
                        pretrained.n_layers, backbone=bb)


# ---------------------------------------------------------------- forward

def _check_tokens(params: ParameterSet, tokens: torch.Tensor) -> None:
    if tokens.numel() and (int(tokens.min()) < 0 or int(tokens.max()) >= params.vocab_size):
        raise ModelError("unknown token: id outside the vocabulary")


def encode_batch(params: ParameterSet, tokens: torch.Tensor) -> torch.Tensor:
    """Hidden state after every token: (B, L) token ids -> (B, L, d)."""
    tokens = torch.as_tensor(tokens, dtype=torch.long)
    _check_tokens(params, tokens)
    B, L = tokens.shape
    d = params.d
    x = params.backbone["embed"][tokens]
    for layer in range(params.n_layers):
        W_ih, W_hh = params.backbone[f"W_ih{layer}"], params.backbone[f"W_hh{layer}"]
        b_ih, b_hh = params.backbone[f"b_ih{layer}"], params.backbone[f"b_hh{layer}"]
        gi = torch.addmm(b_ih, x.reshape(B * L, d), W_ih.T).reshape(B, L, 3 * d).unbind(1)
        h = torch.zeros(B, d, dtype=DTYPE)
        outs = []
        for s in range(L):
            gh = torch.addmm(b_hh, h, W_hh.T)
            i_r, i_z, i_n = gi[s].chunk(3, 1)
            h_r, h_z, h_n = gh.chunk(3, 1)
            r = torch.sigmoid(i_r + h_r)
            z = torch.sigmoid(i_z + h_z)
            n = torch.tanh(i_n + r * h_n)
            h = n + z * (h - n)
            outs.append(h)
        x = torch.stack(outs, 1)
    return x


def encode(params: ParameterSet, state_tokens: Sequence[int]) -> torch.Tensor:
    """Final hidden state for one token sequence."""
    toks = torch.as_tensor([list(state_tokens)], dtype=torch.long)
    if toks.shape[1] == 0:
        raise ModelError("empty token sequence")
    return encode_batch(params, toks)[0, -1]


def q_values(params: ParameterSet, h: torch.Tensor, role: str = "theta", head: str = "q1") -> torch.Tensor:
    if head not in ("q1", "q2"):
        raise ModelError(f"unknown Q head {head!r}")
    if head == "q2" and params.algo == MC:
        raise ModelError("q2 is only defined under the ILQL configuration")
    hs = params.heads[role]
    return h @ hs[f"{head}_W"].T + hs[f"{head}_b"]


def v_value(params: ParameterSet, h: torch.Tensor, role: str = "theta") -> torch.Tensor:
    if params.algo == MC:
        raise ModelError("V head is only defined under the ILQL configuration")
    hs = params.heads[role]
    return (h @ hs["v_W"].T + hs["v_b"]).squeeze(-1)


class IncrementalEncoder:
    """Numpy GRU that advances one token at a time (rollouts, no gradients)."""

    def __init__(self, params: ParameterSet):
        self.d = params.d
        self.vocab_size = params.vocab_size
        g = lambda t: t.detach().numpy().copy()
        self.embed = g(params.backbone["embed"])
        self.layers = [
            (g(params.backbone[f"W_ih{k}"]), g(params.backbone[f"W_hh{k}"]),
             g(params.backbone[f"b_ih{k}"]), g(params.backbone[f"b_hh{k}"]))
            for k in range(params.n_layers)
        ]

    def initial(self) -> list[np.ndarray]:
        return [np.zeros(self.d) for _ in self.layers]

    def advance(self, state: list[np.ndarray], token: int) -> list[np.ndarray]:
        if not 0 <= token < self.vocab_size:
            raise ModelError(f"unknown token {token}")
        d = self.d
        x = self.embed[token]
        new = []
        for (W_ih, W_hh, b_ih, b_hh), h in zip(self.layers, state):
            gi = W_ih @ x + b_ih
            gh = W_hh @ h + b_hh
            r = 1.0 / (1.0 + np.exp(-(gi[:d] + gh[:d])))
            z = 1.0 / (1.0 + np.exp(-(gi[d:2 * d] + gh[d:2 * d])))
            n = np.tanh(gi[2 * d:] + r * gh[2 * d:])
            h = n + z * (h - n)
            new.append(h)
            x = h
        return new

    def run(self, tokens: Sequence[int]) -> list[np.ndarray]:
        state = self.initial()
        for t in tokens:
            state = self.advance(state, int(t))
        return state


class HeadReader:
    """Numpy copies of one role's heads for fast action scoring."""

    def __init__(self, params: ParameterSet, role: str = "theta"):
        hs = params.heads[role]
        self.algo = params.algo
        self.q1 = (hs["q1_W"].detach().numpy().copy(), hs["q1_b"].detach().numpy().copy())
        if params.algo == ILQL:
            self.q2 = (hs["q2_W"].detach().numpy().copy(), hs["q2_b"].detach().numpy().copy())
            self.v = (hs["v_W"].detach().numpy().copy(), hs["v_b"].detach().numpy().copy())

    def q(self, h: np.ndarray, head: str = "q1") -> np.ndarray:
        W, b = getattr(self, head)
        return W @ h + b

    def value(self, h: np.ndarray) -> float:
        W, b = self.v
        return float((W @ h + b)[0])


# ---------------------------------------------------------------- gradients

@dataclass(frozen=True)
class GradientVector:
    groups: tuple
    values: torch.Tensor

    def __len__(self) -> int:
        return int(self.values.numel())


def gradient(loss_evaluator: Callable[[ParameterSet], torch.Tensor], params: ParameterSet,
             group: str | Sequence[str]) -> GradientVector:
    """Reverse-mode gradient of a scalar loss w.r.t. the named group(s) only."""
    groups = (group,) if isinstance(group, str) else tuple(group)
    for g in groups:
        params.names(g)
    targets = params.tensors(groups)
    saved = [t.requires_grad for t in params.tensors()]
    for t in params.tensors():
        t.requires_grad_(False)
    for t in targets:
        t.requires_grad_(True)
    try:
        loss = loss_evaluator(params)
        if not torch.isfinite(loss):
            raise ModelError(f"non-finite loss {float(loss.detach())}")
        grads = torch.autograd.grad(loss, targets, allow_unused=True)
    finally:
        for t, flag in zip(params.tensors(), saved):
            t.requires_grad_(flag)
    flat = torch.cat([
        (g if g is not None else torch.zeros_like(t)).reshape(-1) for g, t in zip(grads, targets)
    ]) if targets else torch.zeros(0, dtype=DTYPE)
    if not torch.isfinite(flat).all():
        raise ModelError("non-finite gradient")
    return GradientVector(groups, flat.detach())


def sgd_step(params: ParameterSet, group: str | Sequence[str], grad: GradientVector, lr: float) -> ParameterSet:
    groups = (group,) if isinstance(group, str) else tuple(group)
    if tuple(grad.groups) != groups:
        raise ModelError(f"gradient groups {grad.groups} do not match {groups}")
    if len(grad) != params.count(groups):
        raise ModelError("shape mismatch between gradient and parameter group")
    off = 0
    with torch.no_grad():
        for t in params.tensors(groups):
            n = t.numel()
            t.sub_(lr * grad.values[off:off + n].reshape(t.shape))
            off += n
    return params


def sync_theta_from_psi(params: ParameterSet) -> ParameterSet:
    with torch.no_grad():
        params.heads["theta"] = {k: v.detach().clone() for k, v in params.heads["psi"].items()}
    return params


# ---------------------------------------------------------------- checkpoints

def _head_blob(params: ParameterSet, group: str) -> bytes:
    return params.flat(group).astype("<f8").tobytes()


def checkpoint_bytes(params: ParameterSet) -> bytes:
    """Header then float64 values (little endian) in enumeration order."""
    header = CHECKPOINT_MAGIC + struct.pack(
        "<IIIIII", CHECKPOINT_VERSION, params.d, params.vocab_size, params.n_actions,
        ALGOS.index(params.algo), params.n_layers)
    return header + b"".join(_head_blob(params, g) for g in GROUPS)


def params_from_bytes(blob: bytes) -> ParameterSet:
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ModelError("not a checkpoint file (bad magic)")
    version, d, vocab, n_actions, algo_idx, n_layers = struct.unpack("<IIIIII", blob[4:28])
    if version != CHECKPOINT_VERSION:
        raise ModelError(f"unsupported checkpoint version {version}")
    params = ParameterSet(vocab, n_actions, d, ALGOS[algo_idx], n_layers)
    values = np.frombuffer(blob[28:], dtype="<f8")
    if values.size != params.count():
        raise ModelError("checkpoint payload length does not match its header")
    params.load_flat(GROUPS, values)
    return params


def save_checkpoint(params: ParameterSet, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(params))


def load_checkpoint(path) -> ParameterSet:
    return params_from_bytes(Path(path).read_bytes())


def fingerprint(params: ParameterSet) -> str:
    return hashlib.sha256(checkpoint_bytes(params)).hexdigest()


# ---------------------------------------------------------------- streaming

class Cursor:
    """Walks a token stream with the numpy encoder and scores the current state."""

    def __init__(self, params: ParameterSet, role: str = "theta"):
        self.encoder = IncrementalEncoder(params)
        self.heads = HeadReader(params, role)
        self.state = self.encoder.initial()

    def reset(self, tokens: Sequence[int]) -> "Cursor":
        self.state = self.encoder.run(tokens)
        return self

    def feed(self, token: int) -> "Cursor":
        self.state = self.encoder.advance(self.state, token)
        return self

    @property
    def hidden(self) -> np.ndarray:
        return self.state[-1]

    def q(self, head: str = "q1") -> np.ndarray:
        return self.heads.q(self.hidden, head)

    def value(self) -> float:
        return self.heads.value(self.hidden)


def softmax_np(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - np.max(x))
    return z / z.sum()


# ---------------------------------------------------------------- behavior cloning

def bc_loss(params: ParameterSet, batch, role: str = "theta") -> torch.Tensor:
    """Mean action cross-entropy under softmax(q1) over all steps."""
    H = encode_batch(params, batch.tokens)
    logits = q_values(params, H[batch.step_traj, batch.pos], role, "q1")
    return torch.nn.functional.cross_entropy(logits, batch.actions)


def behavior_clone(dataset, world, epochs: int = 100, lr: float = 1e-2, rng_seed: int = 0,
                   d: int = 32, n_layers: int = 1, optimizer: str = "adam",
                   loss_history: list | None = None) -> ParameterSet:
    """Full-batch cloning of the dataset's actions; returns the frozen prior.

    Both head roles hold the cloned logits head; downstream training replaces
    the heads with zeros via ``init_from_pretrained``.
    """
    from .batching import TrajectoryTable

    if not dataset:
        raise ModelError("behavior cloning needs a nonempty dataset")
    params = init_params(world.vocab_size, world.n_actions, d, MC, n_layers, rng_seed)
    batch = TrajectoryTable(dataset).all()
    tensors = params.tensors(("backbone", "theta"))
    for t in tensors:
        t.requires_grad_(True)
    if optimizer == "adam":
        opt = torch.optim.Adam(tensors, lr=lr)
    elif optimizer == "gd":
        opt = torch.optim.SGD(tensors, lr=lr)
    else:
        raise ModelError(f"unknown optimizer {optimizer!r}")
    for _ in range(int(epochs)):
        opt.zero_grad()
        loss = bc_loss(params, batch)
        if loss_history is not None:
            loss_history.append(float(loss.detach()))
        loss.backward()
        opt.step()
    for t in tensors:
        t.requires_grad_(False)
        t.grad = None
    if loss_history is not None:
        with torch.no_grad():
            loss_history.append(float(bc_loss(params, batch)))
    sync_psi = {k: v.detach().clone() for k, v in params.heads["theta"].items()}
    params.heads["psi"] = sync_psi
    return params
