"""Accuracy metrics and per-round reports."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .errors import EmptySet
from .lft_math import LatentFactors, predict_many, weighted_loss_of_tensor
from .tensor_store import Entry, SparseTensor


class EvaluationSet:
    """Held-out observed entries.

    When ``train`` is supplied, disjointness from it is checked up front.
    """

    def __init__(self, entries: SparseTensor, train: Optional[SparseTensor] = None):
        if train is not None and len(entries) and len(train):
            overlap = np.intersect1d(entries.linear_index(), train.linear_index())
            if overlap.size:
                raise ValueError(f"{overlap.size} test entries also occur in the training set")
        self.tensor = entries

    def __len__(self) -> int:
        return len(self.tensor)

    @property
    def entries(self) -> list[Entry]:
        return self.tensor.entries

    def residuals(self, f: LatentFactors, clamp: Optional[tuple[float, float]] = None) -> np.ndarray:
        if len(self) == 0:
            raise EmptySet("evaluation set is empty")
        t = self.tensor
        pred = predict_many(f, t.users, t.services, t.times)
        if clamp is not None:
            pred = np.clip(pred, *clamp)
        return t.values - pred

    def cold_start_mask(self, train: SparseTensor) -> np.ndarray:
        """True where the test entry's user, service or time never appears in training."""
        t = self.tensor
        seen = [np.zeros(n, dtype=bool) for n in t.shape.as_tuple()]
        for flags, coord in zip(seen, (train.users, train.services, train.times)):
            flags[coord] = True
        return ~(seen[0][t.users] & seen[1][t.services] & seen[2][t.times])

    def without(self, mask: np.ndarray) -> "EvaluationSet":
        return EvaluationSet(self.tensor.take(np.flatnonzero(~mask)))


def _as_set(psi) -> EvaluationSet:
    return psi if isinstance(psi, EvaluationSet) else EvaluationSet(psi)


def rmse(psi, f: LatentFactors, clamp=None) -> float:
    res = _as_set(psi).residuals(f, clamp)
    return math.sqrt(float(np.dot(res, res)) / res.size)


def mae(psi, f: LatentFactors, clamp=None) -> float:
    res = _as_set(psi).residuals(f, clamp)
    return float(np.abs(res).sum()) / res.size


@dataclass(frozen=True)
class RoundReport:
    """Monitoring record after round ``round`` (1-based) has completed.

    ``test_rmse``/``test_mae`` are None when no held-out set was given.
    Byte counts are payload bytes for the round (8 bytes per real).
    """

    round: int
    train_rmse: float
    test_rmse: Optional[float]
    test_mae: Optional[float]
    weighted_loss: float
    client_bytes_total: int
    server_bytes: int

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


class Convergence:
    """Stops once train RMSE moves by less than ``tol`` for ``patience``
    consecutive rounds. ``tol=0`` never fires."""

    def __init__(self, tol: float = 1e-5, patience: int = 3):
        self.tol = tol
        self.patience = patience
        self._last: Optional[float] = None
        self._streak = 0

    def update(self, train_rmse: float) -> bool:
        if self._last is not None and abs(train_rmse - self._last) < self.tol:
            self._streak += 1
        else:
            self._streak = 0
        self._last = train_rmse
        return self._streak >= self.patience


def as_eval_set(test) -> Optional[EvaluationSet]:
    if test is None or isinstance(test, EvaluationSet):
        return test
    return EvaluationSet(test)


def round_report(round_number: int, f: LatentFactors, train: SparseTensor,
                 test: Optional[EvaluationSet], lam: float,
                 client_bytes: int = 0, server_bytes: int = 0) -> RoundReport:
    return RoundReport(
        round=round_number,
        train_rmse=rmse(train, f),
        test_rmse=rmse(test, f) if test is not None else None,
        test_mae=mae(test, f) if test is not None else None,
        weighted_loss=weighted_loss_of_tensor(train, f, lam),
        client_bytes_total=client_bytes,
        server_bytes=server_bytes,
    )
