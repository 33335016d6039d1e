"""Synthetic HDI tensors with a known low-rank ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .lft_math import LatentFactors
from .tensor_store import Shape, SparseTensor, from_arrays

DEFAULT_SHAPE = Shape(50, 100, 16)


@dataclass(frozen=True)
class SynthSpec:
    shape: Shape = DEFAULT_SHAPE
    true_rank: int = 3
    density: float = 0.2
    noise_std: float = 0.0
    value_clip: Optional[tuple[float, float]] = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.density <= 1.0:
            raise ValueError(f"density must lie in (0, 1], got {self.density}")
        if self.true_rank < 1:
            raise ValueError("true_rank must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")

    @property
    def num_entries(self) -> int:
        return max(1, int(np.floor(self.density * self.shape.size + 0.5)))


def _draw_truth(rng: np.random.Generator, spec: SynthSpec) -> LatentFactors:
    i, j, k = spec.shape.as_tuple()
    r = spec.true_rank
    # uniform on (0, 1]
    return LatentFactors(1.0 - rng.random((i, r)), 1.0 - rng.random((j, r)), 1.0 - rng.random((k, r)))


def generate(spec: SynthSpec) -> SparseTensor:
    """Sample ``density * |I||J||K|`` distinct coordinates of a rank-``true_rank``
    CP tensor, plus optional Gaussian noise and clipping.

    Entries come out sorted by (user, service, time).
    """
    rng = np.random.default_rng(spec.seed)
    truth = _draw_truth(rng, spec)
    flat = np.sort(rng.choice(spec.shape.size, size=spec.num_entries, replace=False))
    users, services, times = np.unravel_index(flat, spec.shape.as_tuple())
    values = np.einsum("nr,nr,nr->n", truth.D[users], truth.E[services], truth.T[times])
    if spec.noise_std > 0:
        values = values + rng.normal(0.0, spec.noise_std, size=values.size)
    if spec.value_clip is not None:
        values = np.clip(values, *spec.value_clip)
    return from_arrays(spec.shape, users, services, times, values)


def ground_truth(spec: SynthSpec) -> LatentFactors:
    """The factors ``generate`` builds its values from."""
    return _draw_truth(np.random.default_rng(spec.seed), spec)
