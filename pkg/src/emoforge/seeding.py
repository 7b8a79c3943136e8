"""Deterministic seed derivation.

Every random stream in the pipeline is derived from one root seed plus a
string label, via SHA-256. This keeps stages independent (reordering one
stage's draws cannot perturb another) and reproducible across processes.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root: int, *labels: str) -> int:
    """Fold a root seed and labels into a 63-bit seed."""
    h = hashlib.sha256()
    h.update(str(int(root)).encode("utf-8"))
    for label in labels:
        h.update(b"\x1f")
        h.update(label.encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "big") >> 1


def rng_for(root: int, *labels: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *labels))


def hash_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
