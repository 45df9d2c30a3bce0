"""
Seed derivation for reproducible trials.
"""

import hashlib

import numpy as np


def derive_seed(base: int, *labels) -> int:
    """Derive a 63-bit seed from a base seed and any number of labels."""
    text = "|".join(str(part) for part in (base,) + labels)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def make_rng(seed) -> np.random.Generator:
    """Create a PCG64 generator; passes existing generators through."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))
