"""Frozen trajectory embeddings and the MLP that turns them into weight logits."""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .model import DTYPE, ParameterSet, encode_batch, fingerprint
from .seeding import make_rng

CACHE_MAGIC = b"BSTE"


class ReweightError(ValueError):
    pass


class EmbeddingCache:
    """traj_id -> embedding, tied to the checkpoint that produced it."""

    def __init__(self, vectors: dict, fingerprint: str, d: int):
        self._vectors = {k: np.asarray(v, dtype=np.float64).copy() for k, v in vectors.items()}
        for k, v in self._vectors.items():
            if v.shape != (d,) or not np.all(np.isfinite(v)):
                raise ReweightError(f"bad cached vector for {k!r}")
            v.setflags(write=False)
        self.fingerprint = fingerprint
        self.d = int(d)
        self.hits = 0

    def __len__(self) -> int:
        return len(self._vectors)

    def __contains__(self, traj_id) -> bool:
        return traj_id in self._vectors

    def ids(self) -> list[str]:
        return list(self._vectors)

    def get(self, traj_id: str) -> np.ndarray:
        self.hits += 1
        return self._vectors[traj_id]

    def matrix(self, traj_ids: Sequence[str]) -> np.ndarray:
        missing = [t for t in traj_ids if t not in self._vectors]
        if missing:
            raise ReweightError(f"no cached embedding for {missing[0]!r}")
        self.hits += len(traj_ids)
        if not traj_ids:
            return np.zeros((0, self.d))
        return np.stack([self._vectors[t] for t in traj_ids])

    def check(self, params: ParameterSet) -> None:
        if fingerprint(params) != self.fingerprint:
            raise ReweightError("embedding cache fingerprint does not match the checkpoint")

    def __eq__(self, other) -> bool:
        return (isinstance(other, EmbeddingCache) and self.fingerprint == other.fingerprint
                and self.d == other.d and self.ids() == other.ids()
                and all(np.array_equal(self._vectors[k], other._vectors[k]) for k in self._vectors))

    def to_bytes(self) -> bytes:
        fp = bytes.fromhex(self.fingerprint)
        out = [CACHE_MAGIC, struct.pack("<II", len(self), self.d), struct.pack("<H", len(fp)), fp]
        for k, v in self._vectors.items():
            key = k.encode("utf-8")
            out.append(struct.pack("<H", len(key)) + key)
            out.append(v.astype("<f4").tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "EmbeddingCache":
        if blob[:4] != CACHE_MAGIC:
            raise ReweightError("not an embedding cache file (bad magic)")
        count, d = struct.unpack_from("<II", blob, 4)
        (n_fp,) = struct.unpack_from("<H", blob, 12)
        off = 14
        fp = blob[off:off + n_fp].hex()
        off += n_fp
        vectors = {}
        for _ in range(count):
            (n_key,) = struct.unpack_from("<H", blob, off)
            off += 2
            key = blob[off:off + n_key].decode("utf-8")
            off += n_key
            vectors[key] = np.frombuffer(blob, dtype="<f4", count=d, offset=off).astype(np.float64)
            off += 4 * d
        if off != len(blob):
            raise ReweightError("trailing bytes in embedding cache file")
        return cls(vectors, fp, d)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "EmbeddingCache":
        return cls.from_bytes(Path(path).read_bytes())


def build_embedding_cache(pretrained: ParameterSet, trajectories, chunk: int = 256) -> EmbeddingCache:
    """Final hidden state after each trajectory's last token, stored at float32 precision.

    Only the backbone is read; head parameters never enter the embedding.
    """
    vectors = {}
    trajs = list(trajectories)
    with torch.no_grad():
        for start in range(0, len(trajs), chunk):
            part = trajs[start:start + chunk]
            streams = [t.token_stream() for t in part]
            L = max(len(s) for s in streams)
            toks = torch.zeros(len(part), L, dtype=torch.long)
            for i, s in enumerate(streams):
                toks[i, :len(s)] = torch.as_tensor(s)
            H = encode_batch(pretrained, toks)
            for i, (t, s) in enumerate(zip(part, streams)):
                vectors[t.traj_id] = H[i, len(s) - 1].numpy().astype(np.float32).astype(np.float64)
    return EmbeddingCache(vectors, fingerprint(pretrained), pretrained.d)


def ensure_cache(cache: EmbeddingCache | None, pretrained: ParameterSet, trajectories) -> EmbeddingCache:
    """Reuse ``cache`` if it matches the checkpoint, extending it to new ids."""
    if cache is None:
        return build_embedding_cache(pretrained, trajectories)
    cache.check(pretrained)
    missing = [t for t in trajectories if t.traj_id not in cache]
    if not missing:
        return cache
    extra = build_embedding_cache(pretrained, missing)
    merged = {k: cache._vectors[k] for k in cache.ids()}
    merged.update({k: extra._vectors[k] for k in extra.ids()})
    return EmbeddingCache(merged, cache.fingerprint, cache.d)


class ReweightHead:
    """ReLU MLP: d -> hidden ... -> 1. ``depth`` counts linear layers."""

    def __init__(self, in_dim: int, hidden: int = 64, depth: int = 2, rng_seed: int = 0,
                 zero: bool = False, layers: list | None = None):
        if depth < 1:
            raise ReweightError("depth must be >= 1")
        self.in_dim, self.hidden, self.depth = int(in_dim), int(hidden), int(depth)
        if layers is not None:
            self.layers = layers
            return
        rng = make_rng(rng_seed, "reweight_head")
        widths = [self.in_dim] + [self.hidden] * (self.depth - 1) + [1]
        self.layers = []
        for k in range(self.depth):
            fan_in, fan_out = widths[k], widths[k + 1]
            last = k == self.depth - 1
            if zero or last:
                W = np.zeros((fan_out, fan_in))
            else:
                W = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
            self.layers.append((torch.from_numpy(W), torch.zeros(fan_out, dtype=DTYPE)))

    def tensors(self) -> list[torch.Tensor]:
        return [t for pair in self.layers for t in pair]

    def count(self) -> int:
        return sum(t.numel() for t in self.tensors())

    def flat(self) -> np.ndarray:
        return torch.cat([t.detach().reshape(-1) for t in self.tensors()]).numpy().copy()

    def load_flat(self, values) -> None:
        values = torch.as_tensor(np.asarray(values, dtype=np.float64))
        if values.numel() != self.count():
            raise ReweightError("flat vector length does not match the head")
        off = 0
        with torch.no_grad():
            for t in self.tensors():
                t.copy_(values[off:off + t.numel()].reshape(t.shape))
                off += t.numel()

    def checksum(self) -> str:
        return hashlib.sha256(self.flat().tobytes()).hexdigest()

    def clone(self) -> "ReweightHead":
        layers = [(W.detach().clone(), b.detach().clone()) for W, b in self.layers]
        return ReweightHead(self.in_dim, self.hidden, self.depth, layers=layers)

    def forward(self, E) -> torch.Tensor:
        """Logits for a (n, d) embedding matrix, differentiable in the head."""
        x = torch.as_tensor(E, dtype=DTYPE)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ReweightError(f"embedding dimension mismatch: expected {self.in_dim}, got {tuple(x.shape)}")
        for k, (W, b) in enumerate(self.layers):
            x = x @ W.T + b
            if k < self.depth - 1:
                x = torch.relu(x)
        return x[:, 0]

    def to_json(self) -> dict:
        return {"in_dim": self.in_dim, "hidden": self.hidden, "depth": self.depth,
                "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in self.layers]}

    @classmethod
    def from_json(cls, obj: dict) -> "ReweightHead":
        layers = [(torch.tensor(l["W"], dtype=DTYPE).reshape(len(l["b"]), -1), torch.tensor(l["b"], dtype=DTYPE))
                  for l in obj["layers"]]
        return cls(obj["in_dim"], obj["hidden"], obj["depth"], layers=layers)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), separators=(",", ":")) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ReweightHead":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def reweight_logit(phi: ReweightHead, embedding) -> float:
    e = np.asarray(embedding, dtype=np.float64)
    if e.shape != (phi.in_dim,):
        raise ReweightError(f"embedding dimension mismatch: expected {phi.in_dim}, got {e.shape}")
    with torch.no_grad():
        return float(phi.forward(e[None, :])[0])


def normalize_minibatch(logits, clamp: float | None = None) -> np.ndarray:
    """Max-subtracted softmax over the minibatch."""
    x = np.asarray(logits, dtype=np.float64)
    if x.size == 0:
        raise ReweightError("empty batch")
    if not np.all(np.isfinite(x)):
        raise ReweightError("logits must be finite")
    if clamp is not None:
        x = np.clip(x, -clamp, clamp)
    z = np.exp(x - x.max())
    return z / z.sum()


def dataset_weights(phi: ReweightHead, cache: EmbeddingCache, traj_ids: Sequence[str]) -> np.ndarray:
    """Softmax weights with the whole collection as a single batch."""
    from .losses import LOGIT_CLAMP

    with torch.no_grad():
        logits = phi.forward(cache.matrix(list(traj_ids))).numpy()
    return normalize_minibatch(logits, clamp=LOGIT_CLAMP)
