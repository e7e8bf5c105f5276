"""Seed derivation shared by every module.

All randomness flows from one integer master seed. Sub-streams are keyed by
short labels so that adding a new consumer never perturbs existing streams.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _label_words(label) -> list[int]:
    if isinstance(label, (int, np.integer)):
        return [int(label) & 0xFFFFFFFF, (int(label) >> 32) & 0xFFFFFFFF]
    digest = hashlib.blake2b(str(label).encode(), digest_size=8).digest()
    return [int.from_bytes(digest[:4], "little"), int.from_bytes(digest[4:], "little")]


def seed_sequence(seed: int, *labels) -> np.random.SeedSequence:
    key: list[int] = []
    for label in labels:
        key.extend(_label_words(label))
    return np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(key))


def rng_for(seed: int, *labels) -> np.random.Generator:
    """Independent generator for the stream named by ``labels``."""
    return np.random.default_rng(seed_sequence(seed, *labels))


def derive_seed(seed: int, *labels) -> int:
    return int(seed_sequence(seed, *labels).generate_state(2, np.uint32).view(np.uint64)[0])
