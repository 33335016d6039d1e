import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fedlft.errors import EmptySet
from fedlft.evaluation import CSV_HEADER, ExperimentResult, report_csv_text, run_experiment, trial_seed
from fedlft.lft_math import Hyperparams, LatentFactors, predict
from fedlft.metrics import Convergence, EvaluationSet, RoundReport, mae, rmse
from fedlft.synth import SynthSpec, generate
from fedlft.tensor_store import Shape, SplitSpec, build, from_arrays

from conftest import random_tensor, unit_factors

TWO_POINT = build(Shape(1, 2, 1), [(0, 0, 0, 1.0), (0, 1, 0, 0.0)])
ZERO = LatentFactors(np.zeros((1, 2)), np.zeros((2, 2)), np.zeros((1, 2)))


def random_factors(rng, shape, rank):
    i, j, k = shape
    return LatentFactors(rng.random((i, rank)), rng.random((j, rank)), rng.random((k, rank)))


def test_two_point_values():
    assert abs(rmse(TWO_POINT, ZERO) - math.sqrt(0.5)) < 1e-12
    assert abs(mae(TWO_POINT, ZERO) - 0.5) < 1e-12


def test_perfect_predictions():
    f = unit_factors(2, (1, 2, 1), 1.0)
    t = build(Shape(1, 2, 1), [(0, 0, 0, 2.0), (0, 1, 0, 2.0)])
    assert rmse(t, f) == 0.0 and mae(t, f) == 0.0


def test_empty_set():
    empty = build(Shape(1, 1, 1), [])
    with pytest.raises(EmptySet):
        rmse(empty, ZERO)
    with pytest.raises(EmptySet):
        mae(EvaluationSet(empty), ZERO)


@given(st.integers(0, 2**32 - 1), st.integers(1, 40))
def test_rmse_at_least_mae(seed, n):
    rng = np.random.default_rng(seed)
    t = random_tensor(rng, (3, 4, 5), n)
    f = random_factors(rng, (3, 4, 5), 2)
    assert rmse(t, f) >= mae(t, f) * (1 - 1e-15)


@given(st.integers(0, 2**32 - 1))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    t = random_tensor(rng, (4, 5, 6), 30)
    f = random_factors(rng, (4, 5, 6), 3)
    p = rng.permutation(len(t))
    shuffled = from_arrays(t.shape, t.users[p], t.services[p], t.times[p], t.values[p])
    assert rmse(shuffled, f) == pytest.approx(rmse(t, f), rel=1e-14)
    assert mae(shuffled, f) == pytest.approx(mae(t, f), rel=1e-14)


def test_streaming_recomputation():
    rng = np.random.default_rng(12)
    t = random_tensor(rng, (10, 20, 6), 500)
    f = random_factors(rng, (10, 20, 6), 4)
    sq = ab = 0.0
    count = 0
    for e in t:
        r = e.value - predict(f, e.user, e.service, e.time)
        count += 1
        sq += (r * r - sq) / count  # running means
        ab += (abs(r) - ab) / count
    assert abs(rmse(t, f) - math.sqrt(sq)) <= 1e-12 * max(1.0, math.sqrt(sq))
    assert abs(mae(t, f) - ab) <= 1e-12 * max(1.0, ab)


@pytest.mark.parametrize("c", [0.5, 2.0, 7.25])
def test_mae_scales_with_residuals(c):
    rng = np.random.default_rng(1)
    t = random_tensor(rng, (3, 3, 3), 12)
    scaled = from_arrays(t.shape, t.users, t.services, t.times, c * t.values)
    zero = LatentFactors(np.zeros((3, 1)), np.zeros((3, 1)), np.zeros((3, 1)))
    assert mae(scaled, zero) == pytest.approx(c * mae(t, zero), rel=1e-13)


def test_clamp():
    f = unit_factors(1, (1, 2, 1), 2.0)  # predicts 8
    assert mae(TWO_POINT, f, clamp=(0.0, 1.0)) == 0.5


def test_disjointness_checked():
    train = build(Shape(1, 2, 1), [(0, 0, 0, 3.0)])
    with pytest.raises(ValueError):
        EvaluationSet(TWO_POINT, train)
    EvaluationSet(build(Shape(1, 2, 1), [(0, 1, 0, 3.0)]), train)


def test_cold_start_mask():
    train = build(Shape(2, 3, 2), [(0, 0, 0, 1.0), (0, 1, 1, 1.0)])
    test = EvaluationSet(build(Shape(2, 3, 2), [(0, 0, 1, 1.0), (1, 0, 0, 1.0), (0, 2, 0, 1.0)]), train)
    assert test.cold_start_mask(train).tolist() == [False, True, True]
    assert len(test.without(test.cold_start_mask(train))) == 1


def test_convergence_rule():
    c = Convergence(tol=0.1, patience=2)
    assert [c.update(x) for x in (1.0, 0.5, 0.45, 0.6, 0.58, 0.57)] == [False, False, False, False, False, True]
    never = Convergence(tol=0.0, patience=1)
    assert not any(never.update(1.0) for _ in range(5))


# -- experiments ------------------------------------------------------------

DATA = generate(SynthSpec(Shape(10, 20, 6), 2, 0.5, seed=21))
FAST = Hyperparams(rank=2, learning_rate=0.01, regularization=0.0, max_rounds=60, init_scale=0.5,
                   convergence_tol=0.0)


def test_single_trial_aggregate():
    res = run_experiment(DATA, FAST, SplitSpec(0.5, 4), trials=1)
    assert res.mean_rmse == res.trials[0].test_rmse == res.best_rmse
    assert res.mean_mae == res.trials[0].test_mae
    assert res.trials[0].seed == trial_seed(4, 0)


def test_experiment_deterministic():
    a = run_experiment(DATA, FAST, SplitSpec(0.5, 4), trials=2)
    b = run_experiment(DATA, FAST, SplitSpec(0.5, 4), trials=2)
    assert report_csv_text(a.rows()) == report_csv_text(b.rows())
    assert a.mean_rmse == b.mean_rmse


def test_trials_are_independent():
    res = run_experiment(DATA, FAST, SplitSpec(0.5, 4), trials=3)
    assert len({t.seed for t in res.trials}) == 3
    assert len({t.test_rmse for t in res.trials}) == 3


def test_mean_within_twice_best():
    res = run_experiment(DATA, FAST, SplitSpec(0.6, 8), trials=5)
    assert res.mean_rmse <= 2 * res.best_rmse


def test_centralized_trainer_and_cold_start_flag():
    sparse = generate(SynthSpec(Shape(10, 40, 6), 2, 0.08, seed=2))
    res = run_experiment(sparse, FAST, SplitSpec(0.3, 1), trials=1, trainer="centralized")
    excl = run_experiment(sparse, FAST, SplitSpec(0.3, 1), trials=1, trainer="centralized",
                          exclude_cold_start=True)
    assert res.trials[0].n_cold > 0
    assert excl.trials[0].n_test == res.trials[0].n_test - res.trials[0].n_cold


def test_experiment_argument_errors():
    with pytest.raises(ValueError):
        run_experiment(DATA, FAST, SplitSpec(0.5, 1), trials=0)
    with pytest.raises(ValueError):
        run_experiment(DATA, FAST, SplitSpec(0.5, 1), trials=1, trainer="gossip")


def test_csv_layout():
    rep = RoundReport(1, 0.5, None, None, 0.25, 100, 200)
    rep2 = RoundReport(2, 0.1, 0.3, 0.2, 1e-17, 100, 200)
    text = report_csv_text([(0, rep), (3, rep2)])
    lines = text.splitlines()
    assert lines[0] == "trial,round,train_rmse,test_rmse,test_mae,weighted_loss,client_bytes,server_bytes"
    assert lines[1] == "0,1,0.5,,,0.25,100,200"
    rows = list(csv.DictReader(io.StringIO(text)))
    assert list(rows[1]) == CSV_HEADER
    assert float(rows[1]["weighted_loss"]) == 1e-17
    assert ExperimentResult([]).trials == []
