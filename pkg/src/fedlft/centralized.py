"""Centralized LFT trained by per-element SGD over all observed entries.

Two gradient-freshness modes:

* ``snapshot``: each epoch takes gradients against the epoch-start (E, T)
  while applying updates to the live matrices as it goes. With the same seed
  this reproduces federated training bit for bit.
* ``fresh``: classic SGD, every update uses the current d_i, e_j, t_k.

Entries are visited user by user in ascending order, each user's entries in
the same seeded order a federated client would use.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from . import _kernels
from ._seeding import visit_order
from .errors import DimensionMismatch, EmptyTensor
from .lft_math import Hyperparams, LatentFactors, client_seed, init_factors
from .metrics import Convergence, RoundReport, as_eval_set, round_report
from .tensor_store import SparseTensor

MODES = ("snapshot", "fresh")


class _Schedule:
    """Per-epoch visiting order over the whole tensor."""

    def __init__(self, train: SparseTensor, hp: Hyperparams):
        self.hp = hp
        by_user = np.argsort(train.users, kind="stable")
        counts = np.bincount(train.users, minlength=train.shape.num_users)
        starts = np.concatenate(([0], np.cumsum(counts)))
        self.groups = [(client_seed(hp.seed, u), by_user[starts[u]:starts[u + 1]])
                       for u in range(train.shape.num_users) if counts[u]]

    def order(self, epoch_index: int) -> np.ndarray:
        # user-major, then local epoch: the order the server applies uploads in
        return np.concatenate([idx[visit_order(idx.size, seed, epoch_index, local)]
                               for seed, idx in self.groups
                               for local in range(self.hp.local_epochs)])


def train_centralized(
    train: SparseTensor,
    hp: Hyperparams,
    mode: str = "snapshot",
    *,
    test=None,
    monitor: Optional[Callable[[RoundReport, LatentFactors], None]] = None,
    init: Optional[LatentFactors] = None,
) -> tuple[LatentFactors, list[RoundReport]]:
    """Train for up to ``hp.max_rounds`` epochs.

    ``init`` replaces the seeded initialisation (warm start); it is copied,
    never modified.
    """
    if len(train) == 0:
        raise EmptyTensor("cannot train on an empty tensor")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    test = as_eval_set(test)
    if init is None:
        f = init_factors(train.shape, hp)
    elif init.shape != train.shape or init.rank != hp.rank:
        raise DimensionMismatch(f"initial factors {init.shape.as_tuple()} rank {init.rank} do not fit "
                                f"{train.shape.as_tuple()} rank {hp.rank}")
    else:
        f = init.copy()
    D, E, T = f.D, f.E, f.T
    schedule = _Schedule(train, hp)
    convergence = Convergence(hp.convergence_tol, hp.convergence_patience)
    lr, lam = hp.learning_rate, hp.regularization
    reports = []

    for epoch in range(hp.max_rounds):
        if mode == "snapshot":
            E_snap, T_snap = E.copy(), T.copy()
            _kernels.central_snapshot_pass(train.users, train.services, train.times, train.values,
                                           schedule.order(epoch), D, E_snap, T_snap, E, T,
                                           lr, lam, hp.sequential_d_update)
        else:
            _kernels.central_fresh_pass(train.users, train.services, train.times, train.values,
                                        schedule.order(epoch), D, E, T, lr, lam)
        f = LatentFactors(D, E, T)
        report = round_report(epoch + 1, f, train, test, lam)
        reports.append(report)
        if monitor is not None:
            monitor(report, f.copy())
        if convergence.update(report.train_rmse):
            break
    return f.copy(), reports
