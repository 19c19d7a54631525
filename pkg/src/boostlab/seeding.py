"""Named seed derivation: every random stream descends from one root seed."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root: int, *names) -> int:
    """Return a 64-bit seed derived from ``root`` and a path of names.

    The derivation is a hash, so sibling streams are independent and adding a
    new stream never perturbs existing ones.
    """
    h = hashlib.sha256(str(int(root)).encode())
    for name in names:
        h.update(b"/")
        h.update(str(name).encode())
    return int.from_bytes(h.digest()[:8], "little")


def make_rng(root: int, *names) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *names))
