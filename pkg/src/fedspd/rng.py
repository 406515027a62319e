"""Deterministic per-(role, client, round) random streams.

Every random draw in a run comes from a generator keyed by the global seed and
a (role, client, round) triple, so results do not depend on execution order or
on how many workers process clients.
"""
import zlib

import numpy as np


def role_key(role: str) -> int:
    return zlib.crc32(role.encode("utf-8"))


def derive_seed_sequence(seed: int, role: str, client: int = 0, rnd: int = 0) -> np.random.SeedSequence:
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(role_key(role), int(client), int(rnd)))


class Streams:
    """Factory for keyed generators rooted at one global seed."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def __call__(self, role: str, client: int = 0, rnd: int = 0) -> np.random.Generator:
        return np.random.default_rng(derive_seed_sequence(self.seed, role, client, rnd))

    def __repr__(self):
        return f"Streams(seed={self.seed})"
