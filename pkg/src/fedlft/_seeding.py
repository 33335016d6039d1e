"""Deterministic seed derivation.

Every random stream in the package is keyed by a tuple of non-negative
integers hashed through numpy's SeedSequence, so a client's stream depends
only on (global seed, user) and never on what the server chose.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1


def derive_seed(*keys: int) -> int:
    """Hash a tuple of non-negative integers into a 64-bit seed."""
    words = np.random.SeedSequence([int(k) & MASK64 for k in keys]).generate_state(2, np.uint32)
    return (int(words[0]) << 32) | int(words[1])


def rng_for(*keys: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*keys))


def visit_order(n: int, rng_seed: int, round_index: int, epoch: int = 0) -> np.ndarray:
    """Order in which a client walks its n entries during one local epoch.

    The first epoch of a round is keyed by (rng_seed, round); further local
    epochs append the epoch number.
    """
    keys = (rng_seed, round_index) if epoch == 0 else (rng_seed, round_index, epoch)
    return rng_for(*keys).permutation(n)
