"""Per-round communication cost, by formula and as measured on a transport."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from ..errors import LengthMismatch
from .transport import LogEntry

REAL_BYTES = 8


def client_bytes_per_round(rank: int, num_services: int, num_times: int, shard_size: int) -> int:
    """Download of E and T plus one (grad_e, grad_t) pair per observed element."""
    return REAL_BYTES * rank * (num_services + num_times + 2 * shard_size)


def server_bytes_per_round(rank: int, num_users: int, num_services: int, num_times: int,
                           shard_sizes: Sequence[int]) -> int:
    if len(shard_sizes) != num_users:
        raise LengthMismatch(f"{len(shard_sizes)} shard sizes for {num_users} users")
    return sum(client_bytes_per_round(rank, num_services, num_times, n) for n in shard_sizes)


@dataclass
class CommLedger:
    """Measured payload bytes of one round."""

    round: int
    per_client_bytes: dict[int, int] = field(default_factory=dict)
    server_bytes: int = 0
    overhead_bytes: int = 0

    @property
    def client_bytes_total(self) -> int:
        return sum(self.per_client_bytes.values())

    @classmethod
    def from_log(cls, log: Iterable[LogEntry], round_index: int) -> "CommLedger":
        ledger = cls(round_index)
        for e in log:
            if e.round != round_index:
                continue
            ledger.per_client_bytes[e.user] = ledger.per_client_bytes.get(e.user, 0) + e.payload_bytes
            # the server is the other end of every message
            ledger.server_bytes += e.payload_bytes
            ledger.overhead_bytes += e.overhead_bytes
        return ledger
