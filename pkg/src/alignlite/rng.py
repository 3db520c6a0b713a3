"""Named-stream PRNG: every consumer derives its own generator from (root seed, purpose name)."""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stream(root_seed: int, name: str) -> np.random.Generator:
    """Independent generator for one purpose. Same (seed, name) -> same stream."""
    tag = int.from_bytes(hashlib.blake2s(name.encode("utf-8")).digest()[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([root_seed & _MASK64, tag]))


def derive_seed(root_seed: int, name: str) -> int:
    """Stable child seed for nested components that take an integer seed."""
    return int(stream(root_seed, name).integers(0, 2**63 - 1))
