"""Rank-R CP model algebra: prediction, instant and full losses, gradients.

For an observed element y at (i, j, k) with factor rows d_i, e_j, t_k the
instant loss is

    eps = (y - sum_r d_ir e_jr t_kr)^2 + lam * sum_r (d_ir^2 + e_jr^2 + t_kr^2)

and each factor's gradient is its exact partial derivative,
``2 * ((y - yhat) * -(product of the other two rows) + lam * own row)``,
all evaluated at the same pre-update ``yhat``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from ._seeding import derive_seed
from .errors import EmptyTensor, InvalidHyperparams, LengthMismatch, OutOfBounds
from .tensor_store import Shape, SparseTensor, UserShard

__all__ = [
    "Hyperparams",
    "LatentFactors",
    "ElementGradients",
    "server_seed",
    "client_seed",
    "init_user_vector",
    "init_factors",
    "predict",
    "predict_many",
    "element_loss",
    "element_gradients",
    "apply_step",
    "full_loss",
    "weighted_federated_loss",
    "weighted_loss_of_tensor",
]

# seed-derivation tags, so no two random streams can share a key
_SERVER_TAG = 1
_CLIENT_TAG = 2


@dataclass(frozen=True)
class Hyperparams:
    rank: int = 20
    learning_rate: float = 0.00038
    regularization: float = 0.001
    max_rounds: int = 200
    seed: int = 0
    init_scale: float = 0.004
    # training-loop knobs
    sequential_d_update: bool = False
    local_epochs: int = 1
    convergence_tol: float = 1e-5
    convergence_patience: int = 3

    def __post_init__(self):
        checks = [
            (self.rank >= 1, "rank must be >= 1"),
            (self.learning_rate > 0, "learning_rate must be > 0"),
            (self.regularization >= 0, "regularization must be >= 0"),
            (self.max_rounds >= 1, "max_rounds must be >= 1"),
            (self.init_scale > 0, "init_scale must be > 0"),
            (0 <= self.seed < 2**64, "seed must be a 64-bit unsigned integer"),
            (self.local_epochs >= 1, "local_epochs must be >= 1"),
            (self.convergence_tol >= 0, "convergence_tol must be >= 0"),
            (self.convergence_patience >= 1, "convergence_patience must be >= 1"),
        ]
        for ok, message in checks:
            if not ok:
                raise InvalidHyperparams(message)


@dataclass(eq=False)
class LatentFactors:
    D: np.ndarray
    E: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        for name in ("D", "E", "T"):
            setattr(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.float64))
        ranks = {self.D.shape[1], self.E.shape[1], self.T.shape[1]}
        if len(ranks) != 1 or self.D.ndim != 2 or self.E.ndim != 2 or self.T.ndim != 2:
            raise LengthMismatch("D, E and T must be 2-D with the same number of columns")

    @property
    def rank(self) -> int:
        return self.D.shape[1]

    @property
    def shape(self) -> Shape:
        return Shape(self.D.shape[0], self.E.shape[0], self.T.shape[0])

    def copy(self) -> "LatentFactors":
        return LatentFactors(self.D.copy(), self.E.copy(), self.T.copy())

    def identical(self, other: "LatentFactors") -> bool:
        """Bitwise equality of all three matrices."""
        return all(a.shape == b.shape and a.tobytes() == b.tobytes()
                   for a, b in ((self.D, other.D), (self.E, other.E), (self.T, other.T)))


class ElementGradients(NamedTuple):
    grad_d: np.ndarray
    grad_e: np.ndarray
    grad_t: np.ndarray


def server_seed(seed: int) -> int:
    return derive_seed(seed, _SERVER_TAG)


def client_seed(seed: int, user: int) -> int:
    return derive_seed(seed, _CLIENT_TAG, user)


def _uniform_open_closed(rng: np.random.Generator, size, scale: float) -> np.ndarray:
    # random() is in [0, 1); 1 - random() is in (0, 1]
    return scale * (1.0 - rng.random(size))


def init_server_matrices(shape: Shape, hp: Hyperparams) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(server_seed(hp.seed))
    E = _uniform_open_closed(rng, (shape.num_services, hp.rank), hp.init_scale)
    T = _uniform_open_closed(rng, (shape.num_times, hp.rank), hp.init_scale)
    return E, T


def init_user_vector(seed: int, user: int, rank: int, init_scale: float) -> np.ndarray:
    """A client's own d_i, drawn from a stream only that client derives."""
    rng = np.random.default_rng(client_seed(seed, user))
    return _uniform_open_closed(rng, rank, init_scale)


def init_factors(shape: Shape, hp: Hyperparams) -> LatentFactors:
    """Uniform (0, init_scale] initialisation.

    E and T come from the server stream; row i of D is exactly the vector
    client i would draw for itself, so centralized and federated training
    start from identical factors.
    """
    E, T = init_server_matrices(shape, hp)
    D = np.empty((shape.num_users, hp.rank))
    for i in range(shape.num_users):
        D[i] = init_user_vector(hp.seed, i, hp.rank, hp.init_scale)
    return LatentFactors(D, E, T)


def _check_index(f: LatentFactors, i: int, j: int, k: int) -> None:
    for name, idx, n in (("user", i, f.D.shape[0]), ("service", j, f.E.shape[0]),
                         ("time", k, f.T.shape[0])):
        if not 0 <= idx < n:
            raise OutOfBounds(f"{name} index {idx} outside [0, {n})")


def predict(f: LatentFactors, i: int, j: int, k: int) -> float:
    _check_index(f, i, j, k)
    return float(np.sum(f.D[i] * f.E[j] * f.T[k]))


def predict_many(f: LatentFactors, users, services, times) -> np.ndarray:
    """Vectorised predictions for coordinate arrays (no bounds check)."""
    return np.einsum("nr,nr,nr->n", f.D[users], f.E[services], f.T[times])


def element_loss(y: float, f: LatentFactors, i: int, j: int, k: int, lam: float) -> float:
    _check_index(f, i, j, k)
    d, e, t = f.D[i], f.E[j], f.T[k]
    err = y - np.sum(d * e * t)
    return float(err * err + lam * np.sum(d * d + e * e + t * t))


def element_gradients(y: float, f: LatentFactors, i: int, j: int, k: int,
                      lam: float) -> ElementGradients:
    _check_index(f, i, j, k)
    d, e, t = f.D[i], f.E[j], f.T[k]
    err = y - np.sum(d * e * t)
    return ElementGradients(
        2.0 * (err * -(e * t) + lam * d),
        2.0 * (err * -(d * t) + lam * e),
        2.0 * (err * -(d * e) + lam * t),
    )


def apply_step(vector, grad, eta: float) -> np.ndarray:
    v = np.asarray(vector, dtype=np.float64)
    g = np.asarray(grad, dtype=np.float64)
    if v.shape != g.shape:
        raise LengthMismatch(f"vector has shape {v.shape}, gradient {g.shape}")
    return v - eta * g


def _per_element_terms(f: LatentFactors, users, services, times, values):
    d, e, t = f.D[users], f.E[services], f.T[times]
    err = values - np.einsum("nr,nr,nr->n", d, e, t)
    reg = np.einsum("nr->n", d * d + e * e + t * t)
    return err * err, reg


def full_loss(train: SparseTensor, f: LatentFactors, lam: float) -> float:
    """Regularised squared error summed over observed elements only."""
    if len(train) == 0:
        raise EmptyTensor("full_loss needs at least one observed entry")
    sq, reg = _per_element_terms(f, train.users, train.services, train.times, train.values)
    return float(sq.sum() + lam * reg.sum())


def weighted_federated_loss(shards: Sequence[UserShard], f: LatentFactors, lam: float) -> float:
    """Shard-size weighted squared error plus the per-element regulariser.

    Monitoring only; training minimises the unweighted per-element loss.
    """
    total = sum(len(s) for s in shards)
    if total == 0:
        raise EmptyTensor("all shards are empty")
    sq_term = 0.0
    reg_term = 0.0
    for s in shards:
        if len(s) == 0:
            continue
        users = np.full(len(s), s.user, dtype=np.int64)
        sq, reg = _per_element_terms(f, users, s.services, s.times, s.values)
        sq_term += (len(s) / total) * sq.sum()
        reg_term += reg.sum()
    return float(sq_term + lam * reg_term)


def weighted_loss_of_tensor(train: SparseTensor, f: LatentFactors, lam: float) -> float:
    """Same value as ``weighted_federated_loss(partition_by_user(train), ...)``
    without materialising the shards."""
    if len(train) == 0:
        raise EmptyTensor("empty tensor")
    sq, reg = _per_element_terms(f, train.users, train.services, train.times, train.values)
    per_user = np.bincount(train.users, weights=sq, minlength=train.shape.num_users)
    sizes = np.bincount(train.users, minlength=train.shape.num_users)
    return float(np.dot(sizes / len(train), per_user) + lam * reg.sum())
