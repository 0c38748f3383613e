import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from fcpflow import metrics as M
from fcpflow.errors import BandwidthError, DimensionError, UndefinedMetricError

# --- brute-force oracles (plain loops, no vectorization) -----------------


def bf_dist(a, b):
    return math.sqrt(sum((u - v) ** 2 for u, v in zip(a, b)))


def bf_energy(X, Y):
    xy = sum(bf_dist(x, y) for x in X for y in Y) / (len(X) * len(Y))
    xx = sum(bf_dist(x, y) for x in X for y in X) / len(X) ** 2
    yy = sum(bf_dist(x, y) for x in Y for y in Y) / len(Y) ** 2
    return 2 * xy - xx - yy


def bf_mmd(X, Y, sigma):
    k = lambda a, b: math.exp(-bf_dist(a, b) ** 2 / (2 * sigma**2))
    xx = sum(k(a, b) for a in X for b in X) / len(X) ** 2
    yy = sum(k(a, b) for a in Y for b in Y) / len(Y) ** 2
    xy = sum(k(a, b) for a in X for b in Y) / (len(X) * len(Y))
    return math.sqrt(max(xx + yy - 2 * xy, 0))


def bf_ks(X, Y):
    x, y = list(np.ravel(X)), list(np.ravel(Y))
    best = 0.0
    for t in x + y:
        fx = sum(v <= t for v in x) / len(x)
        fy = sum(v <= t for v in y) / len(y)
        best = max(best, abs(fx - fy))
    return best


def bf_acf(X):
    T = len(X[0])
    out = []
    for lag in range(1, T):
        vals = []
        for row in X:
            m = sum(row) / T
            den = sum((v - m) ** 2 for v in row)
            if den == 0:
                continue
            vals.append(sum((row[t] - m) * (row[t + lag] - m) for t in range(T - lag)) / den)
        out.append(sum(vals) / len(vals))
    return out


def bf_crps(y, ens):
    total = 0.0
    for t in range(len(y)):
        col = [e[t] for e in ens]
        a = sum(abs(v - y[t]) for v in col) / len(col)
        b = sum(abs(u - v) for u, v in itertools.product(col, col)) / (2 * len(col) ** 2)
        total += a - b
    return total / len(y)


def small_instances(n_cases=30):
    r = np.random.default_rng(2024)
    for _ in range(n_cases):
        n, m = r.integers(2, 6), r.integers(2, 6)
        T = r.integers(1, 5)
        yield r.standard_normal((n, T)), r.standard_normal((m, T)) + r.normal(0, 0.5)


# --- stated examples -----------------------------------------------------


def test_energy_examples():
    assert M.energy_distance([[0.0], [2.0]], [[1.0], [1.0]]) == 1.0
    X = np.array([[0.3, 1.0]] * 3)
    Y = np.array([[1.3, 2.0]] * 4)
    assert M.energy_distance(X, Y) == pytest.approx(2 * math.sqrt(2), abs=1e-14)
    assert M.energy_distance(Y, Y) == 0.0


def test_ks_examples():
    assert M.ks_distance([[0.0], [1.0]], [[0.5], [1.5]]) == 0.5
    assert M.ks_distance([[0.0, 1.0]], [[2.0, 3.0]]) == 1.0
    assert M.ks_distance([[1.0, 2.0]], [[2.0, 1.0]]) == 0.0


def test_wasserstein_examples():
    assert M.wasserstein_1d([[0.0]], [[1.0]]) == 1.0
    assert M.wasserstein_1d([[0.0], [0.0]], [[0.0], [2.0]]) == 1.0
    assert M.wasserstein_1d([[1.0, 5.0]], [[5.0, 1.0]]) == 0.0


def test_mmd_examples():
    d, sigma = 1.7, 0.9
    val = M.mmd_gaussian([[0.0], [0.0]], [[d], [d]], bandwidth=sigma)
    assert val == pytest.approx(math.sqrt(2 - 2 * math.exp(-(d**2) / (2 * sigma**2))), abs=1e-15)
    X = np.random.default_rng(0).standard_normal((4, 3))
    assert M.mmd_gaussian(X, X) == 0.0


def test_mmd_zero_bandwidth():
    with pytest.raises(BandwidthError):
        M.mmd_gaussian([[1.0], [1.0]], [[1.0], [1.0]])


def test_mse_autocorrelation_examples():
    alt = np.array([[1.0, -1, 1, -1], [-1.0, 1, -1, 1]])
    assert M.mse_autocorrelation(alt, alt[::-1]) == 0.0
    X = np.array([[1.0, 2.0, 4.0, 3.0], [0.0, 1.0, 0.0, 2.0]])
    Y = np.array([[3.0, 1.0, 2.0, 2.5], [1.0, 1.5, 2.0, 2.5]])
    expect = sum((a - b) ** 2 for a, b in zip(bf_acf(X), bf_acf(Y)))
    assert M.mse_autocorrelation(X, Y) == pytest.approx(expect, abs=1e-12)


def test_autocorrelation_skips_constant_rows():
    X = np.array([[1.0, 1, 1, 1], [1.0, 2, 3, 4]])
    acf, skipped = M.autocorrelation(X)
    assert skipped == 1
    np.testing.assert_allclose(acf, bf_acf(X[1:]), atol=1e-12)
    with pytest.raises(UndefinedMetricError):
        M.autocorrelation(np.ones((2, 4)))
    with pytest.raises(DimensionError):
        M.autocorrelation(np.ones((2, 2)))


def test_pinball_examples():
    assert M.pinball([1.0], {0.5: [0.0]}, [0.5]) == 0.5
    assert M.pinball([2.0], {0.9: [1.0]}, [0.9]) == pytest.approx(0.9, abs=1e-15)
    y = np.array([1.0, 2.0, 3.0])
    assert M.pinball(y, {0.1: y, 0.9: y}, [0.1, 0.9]) == 0.0


def test_crps_examples():
    assert M.crps_ensemble([1.0], [[0.0], [1.0]]) == 0.25
    y = np.array([0.5, -1.0])
    assert M.crps_ensemble(y, np.tile(y, (4, 1))) == 0.0
    assert M.crps_ensemble([1.0, 3.0], np.tile([2.0, 0.0], (5, 1))) == pytest.approx(2.0, abs=1e-12)


def test_mse_mean_examples():
    assert M.mse_mean_prediction([0.0], [[0.0], [2.0]]) == 1.0
    assert M.mse_mean_prediction([2.0, 3.0], [[1.0, 2.0]] * 3) == 1.0
    assert M.mse_mean_prediction([1.0], [[0.0], [2.0]]) == 0.0


def test_shape_mismatch():
    with pytest.raises(DimensionError):
        M.energy_distance(np.zeros((3, 2)), np.zeros((3, 3)))
    with pytest.raises(DimensionError):
        M.crps_ensemble([1.0, 2.0], np.zeros((3, 3)))


# --- brute-force agreement ----------------------------------------------


def test_metrics_match_brute_force():
    for X, Y in small_instances():
        assert M.energy_distance(X, Y) == pytest.approx(max(bf_energy(X, Y), 0), abs=1e-12)
        assert M.mmd_gaussian(X, Y, bandwidth=1.0) == pytest.approx(bf_mmd(X, Y, 1.0), abs=1e-12)
        assert M.ks_distance(X, Y) == pytest.approx(bf_ks(X, Y), abs=1e-12)
        # scipy's implementation is an independent oracle for the 1-D distance
        assert M.wasserstein_1d(X, Y) == pytest.approx(stats.wasserstein_distance(X.ravel(), Y.ravel()), abs=1e-12)
        if X.shape[1] >= 3:
            exp = sum((a - b) ** 2 for a, b in zip(bf_acf(X), bf_acf(Y)))
            assert M.mse_autocorrelation(X, Y) == pytest.approx(exp, abs=1e-12)
        y = Y[0]
        assert M.crps_ensemble(y, X) == pytest.approx(bf_crps(y, X), abs=1e-12)


def test_median_bandwidth_brute_force():
    X, Y = next(small_instances())
    Z = np.vstack([X, Y])
    d = [bf_dist(Z[i], Z[j]) for i in range(len(Z)) for j in range(i + 1, len(Z))]
    assert M.median_bandwidth(X, Y) == pytest.approx(float(np.median(d)), abs=1e-12)


def test_crps_equals_mae_for_point_forecast():
    r = np.random.default_rng(5)
    for _ in range(20):
        y, m = r.standard_normal(7), r.standard_normal(7)
        assert abs(M.crps_ensemble(y, m[None, :]) - np.mean(np.abs(m - y))) <= 1e-12


# --- properties ----------------------------------------------------------

sets = arrays(np.float64, st.tuples(st.integers(2, 6), st.just(3)),
              elements=st.floats(-10, 10, allow_nan=False, width=64))


@settings(max_examples=60, deadline=None)
@given(sets, sets)
def test_symmetric_and_nonnegative(X, Y):
    for f in (M.energy_distance, M.ks_distance, M.wasserstein_1d):
        a, b = f(X, Y), f(Y, X)
        assert a >= 0 and a == pytest.approx(b, abs=1e-9)
    a = M.mmd_gaussian(X, Y, bandwidth=2.0)
    assert a >= 0 and a == pytest.approx(M.mmd_gaussian(Y, X, bandwidth=2.0), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(sets)
def test_identity_gives_zero(X):
    assert M.energy_distance(X, X) == 0.0
    assert M.ks_distance(X, X) == 0.0
    assert M.wasserstein_1d(X, X) == 0.0
    assert M.mmd_gaussian(X, X, bandwidth=1.0) == 0.0


def test_reports():
    r = np.random.default_rng(1)
    X, Y = r.standard_normal((30, 5)), r.standard_normal((40, 5))
    rep = M.generation_report(X, Y)
    assert rep.ed == M.energy_distance(X, Y)
    assert rep.mmd == M.mmd_gaussian(X, Y)
    assert set(rep.values()) == {"ed", "ks", "wd", "mmd", "mse_a"}
    truths = r.standard_normal((4, 5))
    frep = M.forecast_report(truths, [t[None, :] for t in truths])
    assert frep.pl == frep.crps == frep.mse == 0.0
