"""Client and server state machines and the round loop.

One round: the server publishes a snapshot of (E, T); every client downloads
it, walks its own shard once in a seeded order updating its private d_i and
recording one (grad_e, grad_t) pair per element; the server then applies the
uploaded records one by one, batches in ascending user order.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .. import _kernels
from .._seeding import visit_order
from ..errors import DimensionMismatch, Disconnected, EmptyTensor, RoundMismatch
from ..lft_math import Hyperparams, LatentFactors, client_seed, init_server_matrices, init_user_vector
from ..metrics import Convergence, RoundReport, as_eval_set, round_report
from ..tensor_store import SparseTensor, UserShard, partition_by_user
from .accounting import CommLedger
from .messages import GradientBatch, ModelDownload
from .transport import InProcessTransport, Transport

log = logging.getLogger(__name__)

MODES = ("snapshot", "interleaved")


@dataclass(frozen=True, eq=False)
class ServerState:
    E: np.ndarray
    T: np.ndarray
    round: int
    hp: Hyperparams

    @property
    def rank(self) -> int:
        return self.E.shape[1]

    def download(self) -> ModelDownload:
        return ModelDownload(self.E.copy(), self.T.copy(), self.round)


@dataclass(frozen=True, eq=False)
class ClientState:
    user: int
    d: np.ndarray
    shard: UserShard
    rng_seed: int
    last_round: int = -1

    def __post_init__(self):
        if self.shard.user != self.user:
            raise ValueError(f"shard of user {self.shard.user} given to client {self.user}")


def init_server(train: SparseTensor, hp: Hyperparams) -> ServerState:
    E, T = init_server_matrices(train.shape, hp)
    return ServerState(E, T, 0, hp)


def init_client(shard: UserShard, hp: Hyperparams) -> ClientState:
    d = init_user_vector(hp.seed, shard.user, hp.rank, hp.init_scale)
    return ClientState(shard.user, d, shard, client_seed(hp.seed, shard.user))


def client_round(c: ClientState, dl: ModelDownload, hp: Hyperparams) -> tuple[ClientState, GradientBatch]:
    """Local training on one download.

    E and T in ``dl`` are never modified; only the client's own d_i moves.
    The returned batch carries gradients, service and time indices only.
    """
    if dl.round <= c.last_round:
        raise RoundMismatch(f"client {c.user} already trained round {c.last_round}, got {dl.round}")
    rank = c.d.shape[0]
    shard = c.shard
    if dl.rank != rank:
        raise DimensionMismatch(f"download has rank {dl.rank}, client vector has {rank}")
    n = len(shard)
    if n and (shard.services.max() >= dl.E.shape[0] or shard.times.max() >= dl.T.shape[0]):
        raise DimensionMismatch("shard indexes rows beyond the downloaded matrices")

    d = c.d.copy()
    epochs = hp.local_epochs if n else 0
    grad_e = np.empty((n * epochs, rank))
    grad_t = np.empty((n * epochs, rank))
    orders = []
    for epoch in range(epochs):
        order = visit_order(n, c.rng_seed, dl.round, epoch)
        _kernels.client_pass(shard.services, shard.times, shard.values, order, d, dl.E, dl.T,
                             hp.learning_rate, hp.regularization, hp.sequential_d_update,
                             grad_e, grad_t, epoch * n)
        orders.append(order)
    order = np.concatenate(orders) if orders else np.empty(0, dtype=np.int64)
    batch = GradientBatch(c.user, dl.round, shard.services[order], shard.times[order], grad_e, grad_t)
    return replace(c, d=d, last_round=dl.round), batch


def _check_batch(s: ServerState, b: GradientBatch) -> None:
    if b.round != s.round:
        raise RoundMismatch(f"batch from user {b.user} is for round {b.round}, server is at {s.round}")
    if len(b) == 0:
        return
    if b.rank != s.rank:
        raise DimensionMismatch(f"batch rank {b.rank} != model rank {s.rank}")
    if (b.services.min() < 0 or b.services.max() >= s.E.shape[0]
            or b.times.min() < 0 or b.times.max() >= s.T.shape[0]):
        raise DimensionMismatch(f"batch from user {b.user} indexes rows outside E or T")


def server_apply_batch(s: ServerState, batch: GradientBatch) -> ServerState:
    """Apply one batch record by record, without closing the round."""
    _check_batch(s, batch)
    E, T = s.E.copy(), s.T.copy()
    _kernels.server_apply(batch.services, batch.times, batch.grad_e, batch.grad_t,
                          E, T, s.hp.learning_rate)
    return replace(s, E=E, T=T)


def server_round(s: ServerState, batches: Sequence[GradientBatch], hp: Optional[Hyperparams] = None) -> ServerState:
    """Apply all batches of the round (ascending user, then upload order) and
    advance the round counter."""
    hp = hp or s.hp
    for b in batches:
        _check_batch(s, b)
    E, T = s.E.copy(), s.T.copy()
    for b in sorted(batches, key=lambda b: b.user):
        _kernels.server_apply(b.services, b.times, b.grad_e, b.grad_t, E, T, hp.learning_rate)
    return ServerState(E, T, s.round + 1, hp)


def export_factors(server: ServerState, clients: Sequence[ClientState]) -> LatentFactors:
    """Assemble D, E, T for offline evaluation.

    This reads the clients' private vectors directly and is not a protocol
    message; nothing here passes through a Transport.
    """
    D = np.stack([c.d for c in clients]) if clients else np.empty((0, server.rank))
    return LatentFactors(D, server.E.copy(), server.T.copy())


def run_training(
    train: SparseTensor,
    hp: Hyperparams,
    transport: Optional[Transport] = None,
    monitor: Optional[Callable[[RoundReport, LatentFactors], None]] = None,
    *,
    test=None,
    mode: str = "snapshot",
    workers: int = 1,
) -> tuple[LatentFactors, list[RoundReport]]:
    """Federated training until ``hp.max_rounds`` or the convergence rule fires.

    ``workers > 1`` runs client rounds on a thread pool; results are identical
    to the single-threaded run. ``mode="interleaved"`` lets each client
    download the model as updated by the previous clients' batches (always
    sequential, ascending user order).
    """
    if len(train) == 0:
        raise EmptyTensor("cannot train on an empty tensor")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    transport = transport if transport is not None else InProcessTransport()
    test = as_eval_set(test)

    shards = partition_by_user(train)
    server = init_server(train, hp)
    clients = [init_client(s, hp) for s in shards]
    convergence = Convergence(hp.convergence_tol, hp.convergence_patience)
    reports: list[RoundReport] = []

    def participate(c: ClientState, dl: ModelDownload):
        try:
            received = transport.send_download(c.user, dl)
        except Disconnected:
            log.debug("client %d missed the download of round %d", c.user, dl.round)
            return c, None
        if len(c.shard) == 0:
            return c, None
        c, batch = client_round(c, received, hp)
        try:
            return c, transport.send_batch(c.user, batch)
        except Disconnected:
            log.debug("batch of client %d lost in round %d", c.user, dl.round)
            return c, None

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 and mode == "snapshot" else None
    try:
        for _ in range(hp.max_rounds):
            log_start = len(transport.log)
            rnd = server.round
            if mode == "snapshot":
                dl = server.download()
                results = (pool.map(lambda c: participate(c, dl), clients) if pool
                           else [participate(c, dl) for c in clients])
                results = list(results)
                clients = [c for c, _ in results]
                server = server_round(server, [b for _, b in results if b is not None], hp)
            else:
                for idx, c in enumerate(clients):
                    clients[idx], batch = participate(c, server.download())
                    if batch is not None:
                        server = server_apply_batch(server, batch)
                server = replace(server, round=server.round + 1)

            ledger = CommLedger.from_log(transport.log[log_start:], rnd)
            factors = export_factors(server, clients)
            report = round_report(server.round, factors, train, test, hp.regularization,
                                  ledger.client_bytes_total, ledger.server_bytes)
            reports.append(report)
            if monitor is not None:
                monitor(report, factors)
            if convergence.update(report.train_rmse):
                log.info("converged after round %d", server.round)
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return export_factors(server, clients), reports
