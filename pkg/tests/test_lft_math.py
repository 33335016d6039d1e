import numpy as np
import pytest
from hypothesis import given, strategies as st

from fedlft.errors import EmptyTensor, InvalidHyperparams, LengthMismatch, OutOfBounds
from fedlft.lft_math import (
    Hyperparams, LatentFactors, apply_step, element_gradients, element_loss, full_loss,
    init_factors, init_user_vector, predict, weighted_federated_loss, weighted_loss_of_tensor,
)
from fedlft.tensor_store import Shape, UserShard, build, partition_by_user

from conftest import random_tensor, unit_factors
from oracles import fd_gradients, rel_err


def rows(d, e, t):
    return LatentFactors(np.atleast_2d(d).astype(float), np.atleast_2d(e).astype(float),
                         np.atleast_2d(t).astype(float))


# -- initialisation ---------------------------------------------------------

def test_init_deterministic():
    hp = Hyperparams(rank=4, seed=17)
    assert init_factors(Shape(3, 4, 5), hp).identical(init_factors(Shape(3, 4, 5), hp))


def test_init_seed_matters():
    a = init_factors(Shape(3, 4, 5), Hyperparams(rank=4, seed=1))
    b = init_factors(Shape(3, 4, 5), Hyperparams(rank=4, seed=2))
    assert not a.identical(b)


def test_init_range():
    f = init_factors(Shape(30, 40, 10), Hyperparams(rank=8, init_scale=0.004))
    for m in (f.D, f.E, f.T):
        assert m.max() <= 0.004
        assert m.min() > 0


def test_init_dimensions():
    f = init_factors(Shape(2, 3, 4), Hyperparams(rank=5))
    assert (f.D.shape, f.E.shape, f.T.shape) == ((2, 5), (3, 5), (4, 5))


def test_d_rows_are_client_vectors():
    hp = Hyperparams(rank=3, seed=8)
    f = init_factors(Shape(4, 2, 2), hp)
    for i in range(4):
        assert np.array_equal(f.D[i], init_user_vector(8, i, 3, hp.init_scale))


@pytest.mark.parametrize("kwargs", [dict(rank=0), dict(learning_rate=0), dict(regularization=-1),
                                    dict(max_rounds=0), dict(init_scale=0), dict(seed=-1)])
def test_hyperparam_invariants(kwargs):
    with pytest.raises(InvalidHyperparams):
        Hyperparams(**kwargs)


# -- prediction -------------------------------------------------------------

def test_predict_zero():
    assert predict(unit_factors(3, value=0.0), 0, 0, 0) == 0.0


def test_predict_rank_one():
    assert predict(rows([2.0], [3.0], [0.5]), 0, 0, 0) == 3.0


def test_predict_rank_two():
    assert predict(rows([1, 2], [3, 4], [5, 6]), 0, 0, 0) == 63.0


def test_predict_bounds():
    with pytest.raises(OutOfBounds):
        predict(unit_factors(), 1, 0, 0)


@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_predict_column_linearity(seed, rank):
    rng = np.random.default_rng(seed)
    f = LatentFactors(rng.normal(size=(2, rank)), rng.normal(size=(3, rank)), rng.normal(size=(2, rank)))
    r = int(rng.integers(rank))
    g = f.copy()
    g.D[:, r] = 0.0
    term = f.D[1, r] * f.E[2, r] * f.T[0, r]
    assert predict(g, 1, 2, 0) == pytest.approx(predict(f, 1, 2, 0) - term, abs=1e-12)


# -- instant loss and gradients ---------------------------------------------

def test_element_loss_values():
    f = unit_factors()
    assert element_loss(1.0, f, 0, 0, 0, 0.0) == 0.0
    assert element_loss(2.0, f, 0, 0, 0, 0.0) == 1.0
    assert element_loss(2.0, f, 0, 0, 0, 0.5) == 2.5


def test_gradients_zero_residual():
    g = element_gradients(1.0, unit_factors(), 0, 0, 0, 0.0)
    for part in g:
        assert np.array_equal(part, [0.0])


def test_gradients_hand_values():
    # y=2, yhat=1 -> each grad = 2 * (1)(-1) = -2
    g = element_gradients(2.0, unit_factors(), 0, 0, 0, 0.0)
    assert [x.tolist() for x in g] == [[-2.0]] * 3
    # y=0, yhat=1, lam=0.5 -> 2 * ((-1)(-1) + 0.5) = 3
    g = element_gradients(0.0, unit_factors(), 0, 0, 0, 0.5)
    assert [x.tolist() for x in g] == [[3.0]] * 3


@pytest.mark.parametrize("y,lam", [(2.0, 0.0), (0.0, 0.5)])
def test_hand_values_match_finite_differences(y, lam):
    fd = fd_gradients(y, [1.0], [1.0], [1.0], lam)
    g = element_gradients(y, unit_factors(), 0, 0, 0, lam)
    for a, b in zip(g, fd):
        assert rel_err(a, b).max() < 1e-6


@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 5, 20]))
def test_gradients_match_finite_differences(seed, rank):
    rng = np.random.default_rng(seed)
    d, e, t = (rng.uniform(-1, 1, rank) for _ in range(3))
    y, lam = rng.uniform(-3, 3), rng.uniform(0, 1)
    g = element_gradients(y, rows(d, e, t), 0, 0, 0, lam)
    for a, b in zip(g, fd_gradients(y, d, e, t, lam)):
        assert rel_err(a, b).max() < 1e-6


@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_gradient_role_symmetry(seed, rank):
    rng = np.random.default_rng(seed)
    d, e, t = (rng.normal(size=rank) for _ in range(3))
    y, lam = rng.normal(), rng.uniform(0, 1)
    gd, ge, gt = element_gradients(y, rows(d, e, t), 0, 0, 0, lam)
    # relabel (d, e, t) -> (e, t, d): outputs permute the same way
    hd, he, ht = element_gradients(y, rows(e, t, d), 0, 0, 0, lam)
    np.testing.assert_allclose(hd, ge, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(he, gt, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(ht, gd, rtol=1e-12, atol=1e-12)


@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_descent_property(seed, rank):
    rng = np.random.default_rng(seed)
    d, e, t = (rng.uniform(-1, 1, rank) for _ in range(3))
    y, lam, eta = rng.uniform(-2, 2), rng.uniform(0, 1), 1e-4
    f = rows(d, e, t)
    before = element_loss(y, f, 0, 0, 0, lam)
    gd, ge, gt = element_gradients(y, f, 0, 0, 0, lam)
    stepped = rows(apply_step(d, gd, eta), apply_step(e, ge, eta), apply_step(t, gt, eta))
    assert element_loss(y, stepped, 0, 0, 0, lam) <= before + 1e-15


def test_regularisation_pull_on_exact_fit():
    # residual zero: gradient is lam * v and a step shrinks by (1 - eta*lam)
    rng = np.random.default_rng(3)
    d, e, t = (rng.uniform(0.1, 1, 4) for _ in range(3))
    f = rows(d, e, t)
    y = predict(f, 0, 0, 0)
    gd, ge, gt = element_gradients(y, f, 0, 0, 0, 0.1)
    np.testing.assert_allclose(gd, 2 * 0.1 * d, rtol=1e-12)
    assert np.linalg.norm(apply_step(d, gd, 0.5)) < np.linalg.norm(d)


# -- apply_step ---------------------------------------------------------------

def test_apply_step_values():
    assert apply_step([1.0], [-1.0], 0.1).tolist() == [1.1]
    assert apply_step([0.3, 0.7], [0.0, 0.0], 0.5).tolist() == [0.3, 0.7]
    assert apply_step([0.5, 0.5], [1.0, -1.0], 0.5).tolist() == [0.0, 1.0]


def test_apply_step_length_mismatch():
    with pytest.raises(LengthMismatch):
        apply_step([1.0, 2.0], [1.0], 0.1)


# -- whole-tensor losses ----------------------------------------------------

def test_full_loss_values():
    t = build(Shape(1, 2, 1), [(0, 0, 0, 1.0), (0, 1, 0, 2.0)])
    assert full_loss(t, unit_factors(1, (1, 2, 1), 0.0), 0.0) == 5.0
    single = build(Shape(1, 1, 1), [(0, 0, 0, 2.0)])
    assert full_loss(single, unit_factors(), 0.5) == 2.5
    exact = build(Shape(1, 1, 1), [(0, 0, 0, 1.0)])
    assert full_loss(exact, unit_factors(), 0.0) == 0.0


def test_full_loss_empty():
    with pytest.raises(EmptyTensor):
        full_loss(build(Shape(1, 1, 1), []), unit_factors(), 0.0)


def test_full_loss_equals_sum_of_element_losses():
    rng = np.random.default_rng(2)
    t = random_tensor(rng, (3, 4, 2), n=10)
    f = LatentFactors(rng.normal(size=(3, 2)), rng.normal(size=(4, 2)), rng.normal(size=(2, 2)))
    total = sum(element_loss(e.value, f, e.user, e.service, e.time, 0.3) for e in t)
    assert full_loss(t, f, 0.3) == pytest.approx(total, rel=1e-12)


def test_weighted_loss_single_client():
    rng = np.random.default_rng(5)
    t = random_tensor(rng, (1, 4, 3), n=6)
    f = LatentFactors(rng.normal(size=(1, 2)), rng.normal(size=(4, 2)), rng.normal(size=(3, 2)))
    assert weighted_federated_loss(partition_by_user(t), f, 0.0) == pytest.approx(full_loss(t, f, 0.0))


def test_weighted_loss_equal_shards():
    # each shard has squared error S = 4 over 2 entries: total is S
    t = build(Shape(2, 2, 1), [(0, 0, 0, 2.0), (0, 1, 0, 0.0), (1, 0, 0, 0.0), (1, 1, 0, 2.0)])
    f = unit_factors(1, (2, 2, 1), 0.0)
    assert weighted_federated_loss(partition_by_user(t), f, 0.0) == pytest.approx(4.0)


def test_weighted_loss_hand_evaluated():
    # shard A = {2} (1 of 3 entries), shard B = {1, 1}: (1/3)*4 + (2/3)*2
    t = build(Shape(2, 2, 1), [(0, 0, 0, 2.0), (1, 0, 0, 1.0), (1, 1, 0, 1.0)])
    f = unit_factors(1, (2, 2, 1), 0.0)
    assert weighted_federated_loss(partition_by_user(t), f, 0.0) == pytest.approx(8 / 3, rel=1e-15)


def test_weighted_loss_all_empty():
    empty = [UserShard(0, np.array([], int), np.array([], int), np.array([]))]
    with pytest.raises(EmptyTensor):
        weighted_federated_loss(empty, unit_factors(), 0.0)


@given(st.integers(0, 2**32 - 1))
def test_vectorised_weighted_loss_agrees(seed):
    rng = np.random.default_rng(seed)
    t = random_tensor(rng, (4, 3, 3), n=int(rng.integers(1, 30)))
    f = LatentFactors(rng.normal(size=(4, 2)), rng.normal(size=(3, 2)), rng.normal(size=(3, 2)))
    lam = float(rng.uniform(0, 1))
    assert weighted_loss_of_tensor(t, f, lam) == pytest.approx(
        weighted_federated_loss(partition_by_user(t), f, lam), rel=1e-12)
