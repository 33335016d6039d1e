"""Sparse user-service-time tensor storage.

Only observed entries are kept, as parallel coordinate/value arrays (COO).
Nothing here ever allocates an array proportional to |I|*|J|*|K|.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .errors import DuplicateCoordinate, EmptyTensor, NonFiniteValue, OutOfBounds

__all__ = [
    "Shape",
    "Entry",
    "SparseTensor",
    "UserShard",
    "SplitSpec",
    "build",
    "from_arrays",
    "partition_by_user",
    "split",
    "density",
    "train_size",
]


@dataclass(frozen=True)
class Shape:
    num_users: int
    num_services: int
    num_times: int

    def __post_init__(self):
        for name in ("num_users", "num_services", "num_times"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.num_users, self.num_services, self.num_times)

    @property
    def size(self) -> int:
        return self.num_users * self.num_services * self.num_times


class Entry(NamedTuple):
    user: int
    service: int
    time: int
    value: float


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class SparseTensor:
    """Observed entries of a user-service-time tensor in coordinate form.

    Instances are immutable: the backing arrays are flagged read-only, so a
    tensor can be shared between threads freely.
    """

    __slots__ = ("shape", "users", "services", "times", "values")

    def __init__(self, shape: Shape, users, services, times, values):
        self.shape = shape
        self.users = _frozen(np.asarray(users, dtype=np.int64))
        self.services = _frozen(np.asarray(services, dtype=np.int64))
        self.times = _frozen(np.asarray(times, dtype=np.int64))
        self.values = _frozen(np.asarray(values, dtype=np.float64))

    def __len__(self) -> int:
        return int(self.values.shape[0])

    def __iter__(self) -> Iterator[Entry]:
        for u, s, t, v in zip(self.users.tolist(), self.services.tolist(),
                              self.times.tolist(), self.values.tolist()):
            yield Entry(u, s, t, v)

    @property
    def entries(self) -> list[Entry]:
        return list(self)

    @property
    def nnz(self) -> int:
        return len(self)

    def linear_index(self) -> np.ndarray:
        """Row-major flat coordinate of each entry (int64, never dense)."""
        _, j, k = self.shape.as_tuple()
        return (self.users * j + self.services) * k + self.times

    def take(self, idx: np.ndarray) -> "SparseTensor":
        return SparseTensor(self.shape, self.users[idx], self.services[idx],
                            self.times[idx], self.values[idx])

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseTensor):
            return NotImplemented
        return (self.shape == other.shape
                and np.array_equal(self.users, other.users)
                and np.array_equal(self.services, other.services)
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.values, other.values))

    def __repr__(self) -> str:
        return f"SparseTensor(shape={self.shape.as_tuple()}, nnz={len(self)})"


def from_arrays(shape: Shape, users, services, times, values) -> SparseTensor:
    """Validate coordinate arrays and wrap them as a SparseTensor.

    Raises OutOfBounds, NonFiniteValue or DuplicateCoordinate, reporting the
    first offending entry in input order.
    """
    t = SparseTensor(shape, users, services, times, values)
    n = len(t)
    if not (t.users.shape == t.services.shape == t.times.shape == (n,)):
        raise ValueError("coordinate and value arrays must be 1-D and of equal length")
    if n == 0:
        return t

    bad = np.zeros(n, dtype=bool)
    for coord, bound in ((t.users, shape.num_users), (t.services, shape.num_services),
                         (t.times, shape.num_times)):
        bad |= (coord < 0) | (coord >= bound)
    if bad.any():
        first = int(np.flatnonzero(bad)[0])
        raise OutOfBounds(f"entry {first} {_entry_at(t, first)} outside shape {shape.as_tuple()}")

    finite = np.isfinite(t.values)
    if not finite.all():
        first = int(np.flatnonzero(~finite)[0])
        raise NonFiniteValue(f"entry {first} {_entry_at(t, first)} has a non-finite value")

    lin = t.linear_index()
    order = np.argsort(lin, kind="stable")
    dup = np.flatnonzero(lin[order][1:] == lin[order][:-1])
    if dup.size:
        # second occurrence (in input order) of the earliest duplicated key
        second = int(order[dup + 1].min())
        e = _entry_at(t, second)
        raise DuplicateCoordinate(f"coordinate {(e.user, e.service, e.time)} appears more than once")
    return t


def _entry_at(t: SparseTensor, i: int) -> Entry:
    return Entry(int(t.users[i]), int(t.services[i]), int(t.times[i]), float(t.values[i]))


def build(shape: Shape, entries: Iterable[Entry | Sequence]) -> SparseTensor:
    """Build a tensor from entries, preserving the given order."""
    rows = list(entries)
    if not rows:
        return from_arrays(shape, [], [], [], [])
    u, s, t, v = zip(*rows)
    try:
        coords = [np.asarray(c, dtype=np.int64) for c in (u, s, t)]
    except (OverflowError, ValueError) as exc:
        raise OutOfBounds(str(exc)) from None
    return from_arrays(shape, *coords, np.asarray(v, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class UserShard:
    """One user's private observations. Coordinates other than the user are
    kept as arrays; the user index is implied for every entry."""

    user: int
    services: np.ndarray
    times: np.ndarray
    values: np.ndarray

    def __len__(self) -> int:
        return int(self.values.shape[0])

    @property
    def entries(self) -> list[Entry]:
        return [Entry(self.user, s, t, v) for s, t, v in
                zip(self.services.tolist(), self.times.tolist(), self.values.tolist())]


def partition_by_user(t: SparseTensor) -> list[UserShard]:
    """Split the tensor into exactly |I| shards, one per user (possibly empty).

    Within a shard, entries keep their order from ``t``.
    """
    order = np.argsort(t.users, kind="stable")
    counts = np.bincount(t.users, minlength=t.shape.num_users)
    bounds = np.concatenate(([0], np.cumsum(counts)))
    services, times, values = t.services[order], t.times[order], t.values[order]
    shards = []
    for i in range(t.shape.num_users):
        sl = slice(bounds[i], bounds[i + 1])
        shards.append(UserShard(i, _frozen(services[sl]), _frozen(times[sl]), _frozen(values[sl])))
    return shards


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def train_size(n: int, fraction: float) -> int:
    """round(fraction * n), halves rounded up, kept inside [1, n - 1]."""
    k = int(np.floor(fraction * n + 0.5))
    return min(max(k, 1), n - 1)


def split(t: SparseTensor, spec: SplitSpec) -> tuple[SparseTensor, SparseTensor]:
    """Uniform per-entry train/test split.

    The shuffle is ``np.random.default_rng(spec.seed).permutation(len(t))``;
    the first ``train_size`` positions of the permutation are the training
    entries. Both halves keep the original entry order.
    """
    n = len(t)
    if n < 2:
        raise EmptyTensor(f"need at least 2 entries to split, got {n}")
    perm = np.random.default_rng(spec.seed).permutation(n)
    n_train = train_size(n, spec.train_fraction)
    return t.take(np.sort(perm[:n_train])), t.take(np.sort(perm[n_train:]))


def density(t: SparseTensor) -> float:
    return len(t) / t.shape.size
