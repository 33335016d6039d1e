"""Protocol messages and their binary wire encoding.

Frame layout (all little-endian)::

    u32 payload_length | u8 tag | payload

    tag 1, ModelDownload payload:
        u32 round, u32 num_services, u32 num_times, u32 rank,
        f64[num_services * rank] E (row-major), f64[num_times * rank] T

    tag 2, GradientBatch payload:
        u32 user, u32 round, u32 rank, u32 count,
        count records of: u32 service, u32 time, f64[rank] grad_e, f64[rank] grad_t

``payload_length`` counts the payload only, not the tag byte. The 8-byte
reals are what the communication ledger counts; indices, dimension words and
the 5-byte frame header are framing overhead.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields
from typing import Iterator, NamedTuple, Union

import numpy as np

from ..errors import DimensionMismatch

TAG_DOWNLOAD = 1
TAG_BATCH = 2

FRAME_HEADER = struct.Struct("<IB")
_DOWNLOAD_HEAD = struct.Struct("<IIII")
_BATCH_HEAD = struct.Struct("<IIII")
REAL_BYTES = 8


def _readonly(a, dtype) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=dtype)
    if a.flags.writeable:
        a = a.copy()
        a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ModelDownload:
    E: np.ndarray
    T: np.ndarray
    round: int

    def __post_init__(self):
        object.__setattr__(self, "E", _readonly(self.E, np.float64))
        object.__setattr__(self, "T", _readonly(self.T, np.float64))
        if self.E.ndim != 2 or self.T.ndim != 2 or self.E.shape[1] != self.T.shape[1]:
            raise DimensionMismatch("E and T must be 2-D with equal rank")

    @property
    def rank(self) -> int:
        return self.E.shape[1]

    def payload_real_bytes(self) -> int:
        return REAL_BYTES * (self.E.size + self.T.size)


class GradientRecord(NamedTuple):
    service: int
    time: int
    grad_e: np.ndarray
    grad_t: np.ndarray


GRADIENT_RECORD_FIELDS = ("service", "time", "grad_e", "grad_t")


@dataclass(frozen=True, eq=False)
class GradientBatch:
    """Per-element (grad_e, grad_t) uploads from one client for one round.

    Stored column-wise; iterating yields GradientRecord items in upload order.
    """

    user: int
    round: int
    services: np.ndarray
    times: np.ndarray
    grad_e: np.ndarray
    grad_t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "services", _readonly(self.services, np.int64))
        object.__setattr__(self, "times", _readonly(self.times, np.int64))
        object.__setattr__(self, "grad_e", _readonly(self.grad_e, np.float64))
        object.__setattr__(self, "grad_t", _readonly(self.grad_t, np.float64))
        n = self.services.shape[0]
        if (self.times.shape != (n,) or self.grad_e.ndim != 2 or self.grad_e.shape[0] != n
                or self.grad_t.shape != self.grad_e.shape):
            raise DimensionMismatch("inconsistent gradient batch columns")

    def __len__(self) -> int:
        return int(self.services.shape[0])

    def __iter__(self) -> Iterator[GradientRecord]:
        for p in range(len(self)):
            yield GradientRecord(int(self.services[p]), int(self.times[p]),
                                 self.grad_e[p], self.grad_t[p])

    @property
    def items(self) -> list[GradientRecord]:
        return list(self)

    @property
    def rank(self) -> int:
        return self.grad_e.shape[1]

    def payload_real_bytes(self) -> int:
        return REAL_BYTES * (self.grad_e.size + self.grad_t.size)


Message = Union[ModelDownload, GradientBatch]

# field names a message may carry; anything else is a schema violation
ALLOWED_FIELDS = {
    ModelDownload: ("E", "T", "round"),
    GradientBatch: ("user", "round", "services", "times", "grad_e", "grad_t"),
}


def schema_violations() -> list[str]:
    """Audit the message classes against the allowed field lists."""
    problems = []
    for cls, allowed in ALLOWED_FIELDS.items():
        names = tuple(f.name for f in fields(cls))
        if names != allowed:
            problems.append(f"{cls.__name__} fields {names} != {allowed}")
    if GradientRecord._fields != GRADIENT_RECORD_FIELDS:
        problems.append(f"GradientRecord fields {GradientRecord._fields}")
    return problems


def _record_dtype(rank: int) -> np.dtype:
    return np.dtype([("service", "<u4"), ("time", "<u4"),
                     ("grad_e", "<f8", (rank,)), ("grad_t", "<f8", (rank,))])


def encode(msg: Message) -> bytes:
    """Serialize a message into one complete frame."""
    if isinstance(msg, ModelDownload):
        head = _DOWNLOAD_HEAD.pack(msg.round, msg.E.shape[0], msg.T.shape[0], msg.rank)
        payload = b"".join((head, msg.E.astype("<f8").tobytes(), msg.T.astype("<f8").tobytes()))
        tag = TAG_DOWNLOAD
    elif isinstance(msg, GradientBatch):
        rec = np.empty(len(msg), dtype=_record_dtype(msg.rank))
        rec["service"] = msg.services
        rec["time"] = msg.times
        rec["grad_e"] = msg.grad_e
        rec["grad_t"] = msg.grad_t
        payload = _BATCH_HEAD.pack(msg.user, msg.round, msg.rank, len(msg)) + rec.tobytes()
        tag = TAG_BATCH
    else:
        raise TypeError(f"not a protocol message: {type(msg).__name__}")
    return FRAME_HEADER.pack(len(payload), tag) + payload


def decode_payload(tag: int, payload: bytes) -> Message:
    if tag == TAG_DOWNLOAD:
        rnd, n_j, n_k, rank = _DOWNLOAD_HEAD.unpack_from(payload)
        reals = np.frombuffer(payload, dtype="<f8", offset=_DOWNLOAD_HEAD.size)
        if reals.size != rank * (n_j + n_k):
            raise ValueError("download payload length does not match its dimensions")
        E = reals[: n_j * rank].reshape(n_j, rank)
        T = reals[n_j * rank:].reshape(n_k, rank)
        return ModelDownload(E.astype(np.float64), T.astype(np.float64), rnd)
    if tag == TAG_BATCH:
        user, rnd, rank, count = _BATCH_HEAD.unpack_from(payload)
        dt = _record_dtype(rank)
        if len(payload) - _BATCH_HEAD.size != count * dt.itemsize:
            raise ValueError("batch payload length does not match its record count")
        rec = np.frombuffer(payload, dtype=dt, offset=_BATCH_HEAD.size, count=count)
        return GradientBatch(user, rnd, rec["service"].astype(np.int64), rec["time"].astype(np.int64),
                             rec["grad_e"].reshape(count, rank).astype(np.float64),
                             rec["grad_t"].reshape(count, rank).astype(np.float64))
    raise ValueError(f"unknown message tag {tag}")


def decode(frame: bytes) -> Message:
    length, tag = FRAME_HEADER.unpack_from(frame)
    payload = frame[FRAME_HEADER.size:]
    if len(payload) != length:
        raise ValueError(f"frame declares {length} payload bytes, carries {len(payload)}")
    return decode_payload(tag, payload)


def message_kind(msg) -> str:
    return type(msg).__name__
