"""Seed-derivation tree.

Every random stream in a run is keyed by ``(master_seed, label, *indices)``
so that changing one replication's key changes only that replication, and
results do not depend on execution order or worker count.
"""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master_seed: int, label: str, *indices) -> int:
    key = "/".join([str(int(master_seed)), label, *map(str, indices)])
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little") >> 1


def rng_for(master_seed: int, label: str, *indices) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, label, *indices))
