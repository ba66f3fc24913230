"""Deterministic seed derivation.

Every random decision in the pipeline flows from one base seed; sub-seeds are
derived by hashing the base seed with a string label, so adding a stage never
perturbs the streams of existing stages. Python's builtin hash() is salted per
process and must not be used here.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from any mix of strings and integers."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def rng_for(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
