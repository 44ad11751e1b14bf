import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hetreg.core import ClusterStructure, Dataset, FitResult, Partition, SubgroupModel, huber_value
from hetreg.engine import EngineConfig
from hetreg.errors import InvalidParameterError
from hetreg.selection import (
    TuningGrid,
    bic,
    bic_constant,
    cv_path,
    cv_select,
    make_folds,
    select_K,
)
from hetreg.solver import SolverOptions, duplicate_design, fit_penalized


def sparse_linear(n=100, p=5, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    beta = np.zeros(p)
    beta[[0, 2]] = (2.0, -1.5)
    return Dataset(X @ beta + noise * rng.standard_normal(n), X), beta


def test_default_grid_has_eighty_points():
    grid = TuningGrid()
    assert grid.size == 80
    lam = grid.lambdas(2.0)
    assert lam[0] == 2.0 and lam[-1] == pytest.approx(2e-3)
    np.testing.assert_allclose(np.diff(np.log(lam)), np.log(1e-3) / 19)


@pytest.mark.parametrize("bad", [dict(gammas=(1.2,)), dict(gammas=()), dict(n_lambdas=1),
                                 dict(lambda_min_ratio=1.0), dict(folds=1), dict(rule="max")])
def test_grid_validation(bad):
    with pytest.raises(InvalidParameterError):
        TuningGrid(**bad)


@given(n=st.integers(2, 200), folds=st.integers(2, 10), seed=st.integers(0, 1000))
@settings(max_examples=80, deadline=None)
def test_folds_partition_the_samples(n, folds, seed):
    if n < folds:
        with pytest.raises(InvalidParameterError):
            make_folds(n, folds, seed)
        return
    fs = make_folds(n, folds, seed)
    allidx = np.concatenate(fs)
    assert sorted(allidx.tolist()) == list(range(n))
    sizes = [f.size for f in fs]
    assert max(sizes) - min(sizes) <= 1


def test_noiseless_model_recovers_exact_support():
    data, beta = sparse_linear()
    cs = ClusterStructure.singletons(5)
    res = cv_select(data, cs, delta=1.0, rng=0, intercept=False, opts=SolverOptions(tol=1e-9, intercept=False))
    sol = fit_penalized(duplicate_design(data.X, cs), data.y, res.lambda_, res.gamma, 1.0, cs,
                        SolverOptions(tol=1e-9, intercept=False))
    np.testing.assert_array_equal(sol.beta != 0, beta != 0)


def test_two_folds_on_four_samples():
    data, _ = sparse_linear(n=4)
    cs = ClusterStructure.from_clusters([[0, 1, 2], [2, 3, 4]], 5)
    lam, gamma, table = cv_select(data, cs, 1.0, TuningGrid(folds=2), rng=1, intercept=False)
    assert lam >= 0 and gamma in TuningGrid().gammas
    assert table.shape == (4, 20)


def test_degenerate_subsample_is_flagged():
    data = Dataset(np.ones(20), np.ones((20, 3)))
    res = cv_select(data, ClusterStructure.singletons(3), 1.0, rng=0, intercept=True)
    assert res.degenerate
    assert res.gamma == 1.0  # singleton structures only use gamma = 1


def test_singleton_structure_collapses_gamma():
    data, _ = sparse_linear(noise=0.3)
    res = cv_select(data, ClusterStructure.singletons(5), 1.0, rng=0, intercept=False)
    assert res.gammas == (1.0,) and res.table.shape == (1, 20)


def test_ties_prefer_larger_lambda_then_larger_gamma():
    from hetreg.selection import _first_hit

    table = np.array([[3.0, 1.0, 1.0], [2.0, 1.0, 1.0]])
    assert _first_hit(table, 1.0, (0.1, 0.7)) == (1, 1)


def test_one_standard_error_rule_is_sparser():
    data, _ = sparse_linear(n=120, p=5, noise=1.0, seed=3)
    cs = ClusterStructure.from_clusters([[0, 1], [2, 3, 4]], 5)
    Xt = duplicate_design(data.X, cs)
    folds = make_folds(data.n, 5, 0)
    a = cv_path(Xt, data.y, cs, 1.0, TuningGrid(), intercept=False, folds=folds)
    b = cv_path(Xt, data.y, cs, 1.0, TuningGrid(rule="1se"), intercept=False, folds=folds)
    ja = np.flatnonzero(a.lambdas[a.gammas.index(a.gamma)] == a.lambda_)[0]
    jb = np.flatnonzero(b.lambdas[b.gammas.index(b.gamma)] == b.lambda_)[0]
    assert jb <= ja
    np.testing.assert_array_equal(a.table, b.table)


def test_cv_is_invariant_to_sample_order():
    data, _ = sparse_linear(n=60, noise=0.5, seed=2)
    cs = ClusterStructure.from_clusters([[0, 1, 2], [2, 3, 4]], 5)
    Xt = duplicate_design(data.X, cs)
    folds = make_folds(60, 5, 4)
    perm = np.random.default_rng(9).permutation(60)
    inv = np.argsort(perm)
    opts = SolverOptions(tol=1e-10, intercept=False)
    a = cv_path(Xt, data.y, cs, 1.0, TuningGrid(n_lambdas=8), intercept=False, opts=opts, folds=folds)
    b = cv_path(Xt[perm], data.y[perm], cs, 1.0, TuningGrid(n_lambdas=8), intercept=False, opts=opts,
                folds=[np.sort(inv[f]) for f in folds])
    assert a.gamma == b.gamma and a.lambda_ == pytest.approx(b.lambda_, rel=1e-12)
    np.testing.assert_allclose(a.table, b.table, rtol=1e-7)


def test_warm_started_path_matches_cold_refits():
    data, _ = sparse_linear(n=80, noise=0.5, seed=5)
    cs = ClusterStructure.from_clusters([[0, 1, 2], [2, 3, 4]], 5)
    Xt = duplicate_design(data.X, cs)
    folds = make_folds(80, 5, 0)
    opts = SolverOptions(tol=1e-9, intercept=True)
    grid = TuningGrid(n_lambdas=10)
    res = cv_path(Xt, data.y, cs, 1.0, grid, intercept=True, opts=opts, folds=folds)
    rng = np.random.default_rng(0)
    for _ in range(5):
        a, j = int(rng.integers(len(res.gammas))), int(rng.integers(grid.n_lambdas))
        total = 0.0
        for test in folds:
            train = np.setdiff1d(np.arange(80), test)
            sol = fit_penalized(Xt[train], data.y[train], res.lambdas[a, j] * train.size / 80, res.gammas[a], 1.0,
                                cs, opts)
            total += huber_value(data.y[test] - Xt[test] @ sol.expanded_v - sol.intercept, 1.0).sum()
        assert total / 80 == pytest.approx(res.table[a, j], rel=1e-4)


# ---------------------------------------------------------------------------
# BIC
# ---------------------------------------------------------------------------


def _fit(models, labels):
    part = Partition(np.asarray(labels), len(models))
    return FitResult(part, tuple(models), 0.0, (), {})


def test_bic_null_model_anchor():
    rng = np.random.default_rng(0)
    data = Dataset(rng.standard_normal(40) + 3, rng.standard_normal((40, 4)))
    med = float(np.median(data.y))
    m = SubgroupModel(np.zeros(4), med, 0.0, 0.5, 1.3)
    expected = math.log(np.mean(huber_value(data.y - med, 1.3)))
    assert bic(data, None, _fit([m], np.zeros(40, dtype=int))) == pytest.approx(expected, rel=1e-14)


def test_bic_grows_linearly_with_degrees_of_freedom():
    rng = np.random.default_rng(1)
    n, p = 60, 8
    data = Dataset(rng.standard_normal(n), rng.standard_normal((n, p)))
    beta = np.zeros(p)
    beta[0] = 0.3
    tiny = beta.copy()
    tiny[5] = 1e-300  # another nonzero that leaves the loss unchanged
    labels = np.arange(n) % 2
    a = bic(data, None, _fit([SubgroupModel(beta, None, 0, 0.5, 1.0)] * 2, labels))
    b = bic(data, None, _fit([SubgroupModel(tiny, None, 0, 0.5, 1.0), SubgroupModel(beta, None, 0, 0.5, 1.0)],
                             labels))
    assert b - a == pytest.approx(bic_constant(p, 2) * math.log(n) / n, rel=1e-9)
    assert b > a


def test_bic_matches_direct_formula():
    rng = np.random.default_rng(2)
    n, p, K = 50, 10, 2
    X = rng.standard_normal((n, p))
    y = rng.standard_normal(n) * 2
    labels = rng.integers(0, K, n)
    betas = rng.standard_normal((K, p)) * (rng.random((K, p)) < 0.4)
    deltas = (0.8, 1.7)
    models = [SubgroupModel(betas[k], 0.25 * k, 0.1, 0.5, deltas[k]) for k in range(K)]
    total = 0.0
    for i in range(n):
        k = labels[i]
        r = y[i] - X[i] @ betas[k] - 0.25 * k
        d = deltas[k]
        total += 0.5 * r * r if abs(r) <= d else d * abs(r) - 0.5 * d * d
    df = int(np.count_nonzero(betas))
    expected = math.log(total / n) + math.log(math.log(p * K)) * math.log(n) / n * df
    assert bic(Dataset(y, X), None, _fit(models, labels)) == pytest.approx(expected, abs=1e-10)


def test_bic_zero_loss_is_clamped_with_warning():
    X = np.eye(3)
    data = Dataset(np.array([1.0, 2.0, 3.0]), X)
    m = SubgroupModel(np.array([1.0, 2.0, 3.0]), None, 0, 0.5, 1.0)
    with pytest.warns(RuntimeWarning):
        v = bic(data, None, _fit([m], [0, 0, 0]))
    assert v == pytest.approx(math.log(1e-300) + math.log(math.log(3)) * math.log(3) / 3 * 3)


def test_bic_constant_clamp():
    assert bic_constant(1, 2) == 0.0
    assert bic_constant(200, 2) == pytest.approx(math.log(math.log(400)))


# ---------------------------------------------------------------------------
# choosing K
# ---------------------------------------------------------------------------


def test_select_k_single_point_range():
    data, _ = sparse_linear(n=40, noise=0.3)
    cfg = EngineConfig(K=1, starts=2, tuning="fixed", lambda_=1.0, intercept=False)
    K, curve = select_K(data, None, cfg, [2])
    assert K == 2 and len(curve) == 1


def test_select_k_rejects_bad_range():
    data, _ = sparse_linear(n=10)
    with pytest.raises(InvalidParameterError):
        select_K(data, None, EngineConfig(), [0, 1])


def test_select_k_picks_one_group_for_noiseless_single_regime_data():
    for seed in range(5):
        rng = np.random.default_rng(100 + seed)
        X = rng.standard_normal((120, 10))
        beta = np.zeros(10)
        beta[[0, 1, 5]] = (2.0, -1.5, 1.0)
        data = Dataset(X @ beta, X)
        cs = ClusterStructure.from_clusters([[0, 1, 2, 3, 4], [4, 5, 6, 7, 8, 9]], 10)
        cfg = EngineConfig(starts=5, tuning="cv-refine", intercept=False, seed=seed,
                           grid=TuningGrid(n_lambdas=10), max_outer_iter=20)
        sel = select_K(data, cs, cfg, range(1, 4))
        assert sel.K == 1
        assert [k for k, _ in sel.curve] == [1, 2, 3]
        assert sel.best is sel.fits[1]
