"""Multi-trial experiments and CSV reporting."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional, TextIO

from ._seeding import derive_seed
from .centralized import train_centralized
from .federation import InProcessTransport, Transport, run_training
from .lft_math import Hyperparams, LatentFactors
from .metrics import EvaluationSet, RoundReport, mae, rmse
from .tensor_store import SparseTensor, SplitSpec, split

__all__ = [
    "CSV_HEADER",
    "TrialResult",
    "ExperimentResult",
    "trial_seed",
    "run_experiment",
    "write_report_csv",
    "report_csv_text",
]

CSV_HEADER = ["trial", "round", "train_rmse", "test_rmse", "test_mae",
              "weighted_loss", "client_bytes", "server_bytes"]

_TRIAL_TAG = 3


def trial_seed(base_seed: int, trial: int) -> int:
    return derive_seed(base_seed, _TRIAL_TAG, trial)


@dataclass
class TrialResult:
    trial: int
    seed: int
    test_rmse: float
    test_mae: float
    n_test: int
    n_cold: int
    reports: list[RoundReport]
    factors: LatentFactors = field(repr=False)


@dataclass
class ExperimentResult:
    trials: list[TrialResult]

    @property
    def mean_rmse(self) -> float:
        return math.fsum(t.test_rmse for t in self.trials) / len(self.trials)

    @property
    def mean_mae(self) -> float:
        return math.fsum(t.test_mae for t in self.trials) / len(self.trials)

    @property
    def best_rmse(self) -> float:
        return min(t.test_rmse for t in self.trials)

    def rows(self) -> Iterable[tuple[int, RoundReport]]:
        for t in self.trials:
            for r in t.reports:
                yield t.trial, r


def run_experiment(
    dataset: SparseTensor,
    hp: Hyperparams,
    split_spec: SplitSpec,
    trials: int = 5,
    *,
    trainer: str = "federated",
    mode: Optional[str] = None,
    exclude_cold_start: bool = False,
    transport_factory: Callable[[], Transport] = InProcessTransport,
    workers: int = 1,
) -> ExperimentResult:
    """Independent seeded trials, each with its own split and training run.

    Trial ``n`` uses seed ``trial_seed(split_spec.seed, n)`` both for its split
    and for model initialisation.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    results = []
    for n in range(trials):
        seed = trial_seed(split_spec.seed, n)
        train, test = split(dataset, replace(split_spec, seed=seed))
        psi = EvaluationSet(test)
        cold = psi.cold_start_mask(train)
        if exclude_cold_start:
            psi = psi.without(cold)
        trial_hp = replace(hp, seed=seed)
        if trainer == "federated":
            with transport_factory() as transport:
                f, reports = run_training(train, trial_hp, transport, test=psi,
                                          mode=mode or "snapshot", workers=workers)
        elif trainer == "centralized":
            f, reports = train_centralized(train, trial_hp, mode or "snapshot", test=psi)
        else:
            raise ValueError(f"unknown trainer {trainer!r}")
        results.append(TrialResult(n, seed, rmse(psi, f), mae(psi, f), len(psi), int(cold.sum()),
                                   reports, f))
    return ExperimentResult(results)


def _cell(x) -> str:
    return "" if x is None else repr(float(x))


def write_report_csv(fh: TextIO, rows: Iterable[tuple[int, RoundReport]]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for trial, r in rows:
        w.writerow([trial, r.round, _cell(r.train_rmse), _cell(r.test_rmse), _cell(r.test_mae),
                    _cell(r.weighted_loss), r.client_bytes_total, r.server_bytes])


def report_csv_text(rows: Iterable[tuple[int, RoundReport]]) -> str:
    buf = io.StringIO()
    write_report_csv(buf, rows)
    return buf.getvalue()
