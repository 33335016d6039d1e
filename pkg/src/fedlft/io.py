"""File formats: QoS triple text files and binary model files.

Triple files hold one observation per line, ``user service time value``,
whitespace separated. Lines starting with ``#`` are comments; ``save`` writes
a ``# shape I J K`` comment that ``load`` uses when no shape is given.

Model files are ``MAGIC`` followed by |I|, |J|, |K|, R as little-endian u32
and then D, E, T as contiguous little-endian float64, row-major.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import FedLFTError, OutOfBounds, ParseError
from .lft_math import LatentFactors
from .tensor_store import Shape, SparseTensor, from_arrays

PathLike = Union[str, os.PathLike]

MAGIC = b"FLLFTM\x00\x01"
_DIMS = struct.Struct("<IIII")


def save(t: SparseTensor, path: PathLike) -> None:
    with open(path, "w") as fh:
        fh.write("# shape %d %d %d\n" % t.shape.as_tuple())
        for u, s, k, v in zip(t.users.tolist(), t.services.tolist(), t.times.tolist(), t.values.tolist()):
            fh.write(f"{u} {s} {k} {v!r}\n")


def _shape_hint(line: str) -> Optional[tuple[int, int, int]]:
    parts = line[1:].split()
    if len(parts) == 4 and parts[0] == "shape":
        try:
            return tuple(int(p) for p in parts[1:])  # type: ignore[return-value]
        except ValueError:
            return None
    return None


def load(path: PathLike, shape: Optional[Shape] = None, one_based: bool = False) -> SparseTensor:
    """Read a triple file.

    Without ``shape`` the file's shape comment is used, or failing that the
    smallest shape containing every entry.
    """
    users, services, times, values, lines = [], [], [], [], []
    hint = None
    offset = 1 if one_based else 0
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                hint = hint or _shape_hint(line)
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ParseError(lineno, f"expected 4 fields, found {len(parts)}")
            try:
                u, s, k = (int(p) - offset for p in parts[:3])
            except ValueError:
                raise ParseError(lineno, f"indices must be integers: {line!r}") from None
            try:
                v = float(parts[3])
            except ValueError:
                raise ParseError(lineno, f"value is not a number: {parts[3]!r}") from None
            if not np.isfinite(v):
                raise ParseError(lineno, f"value is not finite: {parts[3]!r}")
            if min(u, s, k) < 0:
                raise OutOfBounds(f"line {lineno}: negative index")
            users.append(u)
            services.append(s)
            times.append(k)
            values.append(v)
            lines.append(lineno)

    if shape is None:
        if hint is not None:
            shape = Shape(*hint)
        elif users:
            shape = Shape(max(users) + 1, max(services) + 1, max(times) + 1)
        else:
            raise FedLFTError(f"{path}: no entries and no shape given")
    bounds = shape.as_tuple()
    for n, (u, s, k) in enumerate(zip(users, services, times)):
        if u >= bounds[0] or s >= bounds[1] or k >= bounds[2]:
            raise OutOfBounds(f"line {lines[n]}: ({u}, {s}, {k}) outside shape {bounds}")
    return from_arrays(shape, users, services, times, values)


def save_model(f: LatentFactors, path: PathLike) -> None:
    i, j, k = f.D.shape[0], f.E.shape[0], f.T.shape[0]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_DIMS.pack(i, j, k, f.rank))
        for m in (f.D, f.E, f.T):
            fh.write(np.ascontiguousarray(m, dtype="<f8").tobytes())


def load_model(path: PathLike) -> LatentFactors:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise FedLFTError(f"{path}: not a model file (bad magic)")
    i, j, k, rank = _DIMS.unpack_from(data, len(MAGIC))
    body = np.frombuffer(data, dtype="<f8", offset=len(MAGIC) + _DIMS.size)
    if body.size != rank * (i + j + k):
        raise FedLFTError(f"{path}: expected {rank * (i + j + k)} reals, found {body.size}")
    D = body[: i * rank].reshape(i, rank)
    E = body[i * rank:(i + j) * rank].reshape(j, rank)
    T = body[(i + j) * rank:].reshape(k, rank)
    return LatentFactors(D.astype(np.float64), E.astype(np.float64), T.astype(np.float64))


def export_text(f: LatentFactors, path: PathLike) -> None:
    """Human-readable dump of D, E and T."""
    with open(path, "w") as fh:
        for name, m in (("D", f.D), ("E", f.E), ("T", f.T)):
            fh.write(f"# {name} {m.shape[0]}x{m.shape[1]}\n")
            np.savetxt(fh, m, fmt="%.17g")
