import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.metrics import adjusted_rand_score, matthews_corrcoef, normalized_mutual_info_score

from _oracles import (
    ari_pairs,
    best_support_counts,
    mcc_direct,
    nmi_direct,
    rmse_loop,
    set_partitions,
    stability_direct,
)
from hetreg.core import Partition
from hetreg.errors import InvalidInputError
from hetreg.metrics import (
    ari,
    contingency,
    identification_report,
    match_labels,
    mcc,
    nmi,
    pmre,
    rmse,
    stability,
)


class Est:
    def __init__(self, labels, betas):
        self.partition = Partition(np.asarray(labels), np.asarray(betas).shape[0])
        self.betas = np.asarray(betas, dtype=float)


labels = st.lists(st.integers(0, 3), min_size=2, max_size=30)


# ---------------------------------------------------------------------------
# ARI / NMI
# ---------------------------------------------------------------------------


def test_ari_examples():
    assert ari([0, 0, 1, 1], [0, 0, 1, 1]) == 1.0
    assert ari([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(-0.5, abs=1e-15)
    assert ari([0, 0, 0, 0], [0, 0, 1, 1]) == pytest.approx(0.0, abs=1e-15)


def test_nmi_examples():
    assert nmi([0, 0, 1, 1], [1, 1, 0, 0]) == pytest.approx(1.0)
    assert nmi([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(0.0, abs=1e-15)
    assert nmi([0, 0, 0], [1, 1, 1]) == 1.0


def test_length_mismatch():
    with pytest.raises(InvalidInputError):
        ari([0, 1], [0, 1, 1])
    with pytest.raises(InvalidInputError):
        nmi([0, 1], [0])


@pytest.mark.parametrize("n", range(1, 6))
def test_ari_nmi_exhaustive_all_pairs_small(n):
    parts = list(set_partitions(n, 3))
    for a in parts:
        for b in parts:
            assert ari(a, b) == pytest.approx(ari_pairs(a, b), abs=1e-12)
            assert nmi(a, b) == pytest.approx(nmi_direct(a, b), abs=1e-12)


@pytest.mark.parametrize("n", [6, 7, 8])
def test_ari_nmi_exhaustive_against_references(n):
    parts = list(set_partitions(n, 3))
    rng = np.random.default_rng(n)
    refs = [parts[i] for i in rng.choice(len(parts), 8, replace=False)]
    for a in parts:
        for b in refs:
            assert ari(a, b) == pytest.approx(ari_pairs(a, b), abs=1e-12)
            assert nmi(a, b) == pytest.approx(nmi_direct(a, b), abs=1e-12)


@given(labels, st.randoms(use_true_random=False))
@settings(max_examples=100, deadline=None)
def test_ari_nmi_symmetric_and_relabel_invariant(a, rnd):
    b = [rnd.randrange(3) for _ in a]
    assert ari(a, b) == pytest.approx(ari(b, a), abs=1e-12)
    assert nmi(a, b) == pytest.approx(nmi(b, a), abs=1e-12)
    relabel = {v: 10 - v for v in set(a)}
    a2 = [relabel[v] for v in a]
    assert ari(a2, b) == pytest.approx(ari(a, b), abs=1e-12)
    assert nmi(a2, b) == pytest.approx(nmi(a, b), abs=1e-12)
    if len(set(a)) >= 2:
        assert ari(a, a) == pytest.approx(1.0) and nmi(a, a) == pytest.approx(1.0)


@given(labels, labels)
@settings(max_examples=100, deadline=None)
def test_ari_nmi_match_scikit_learn(a, b):
    m = min(len(a), len(b))
    a, b = a[:m], b[:m]
    assert ari(a, b) == pytest.approx(adjusted_rand_score(a, b), abs=1e-12)
    if len(set(a)) > 1 or len(set(b)) > 1:
        assert nmi(a, b) == pytest.approx(normalized_mutual_info_score(a, b), abs=1e-12)


def test_contingency_drops_unused_labels():
    t = contingency([0, 0, 5, 5], [2, 3, 3, 3])
    assert t.tolist() == [[1, 1], [0, 2]]


# ---------------------------------------------------------------------------
# MCC and support recovery
# ---------------------------------------------------------------------------


def test_mcc_zero_denominator():
    assert mcc(0, 0, 10, 5) == 0.0


@pytest.mark.parametrize("n", range(1, 9))
def test_mcc_exhaustive_binary_vectors(n):
    for est in np.ndindex(*(2,) * n):
        for truth in [tuple(int(v) for v in np.binary_repr(k, n)) for k in range(2 ** n)][:: max(1, 2 ** n // 16)]:
            E, T = np.array(est, bool), np.array(truth, bool)
            tp, fp = int(np.sum(E & T)), int(np.sum(E & ~T))
            tn, fn = int(np.sum(~E & ~T)), int(np.sum(~E & T))
            assert mcc(tp, fp, tn, fn) == pytest.approx(mcc_direct(est, truth), abs=1e-12)


@given(st.lists(st.booleans(), min_size=4, max_size=40), st.randoms(use_true_random=False))
@settings(max_examples=100, deadline=None)
def test_mcc_matches_scikit_learn(truth, rnd):
    est = [rnd.random() < 0.5 for _ in truth]
    E, T = np.array(est), np.array(truth)
    counts = (np.sum(E & T), np.sum(E & ~T), np.sum(~E & ~T), np.sum(~E & T))
    if len(set(est)) > 1 and len(set(truth)) > 1:
        assert mcc(*counts) == pytest.approx(matthews_corrcoef(T, E), abs=1e-12)


def test_identification_perfect_after_permutation():
    B = np.array([[1.0, 0, 2, 0, 0, 0], [0, 0, 0, 3.0, 0, 1]])
    truth = Est([0, 0, 1, 1], B)
    est = Est([1, 1, 0, 0], B[::-1] * 0.5)
    rep = identification_report(est, truth)
    assert (rep.tpr, rep.fpr, rep.mcc) == (1.0, 0.0, 1.0)
    assert rep.matched_perm == (1, 0)


def test_identification_all_zero_estimate():
    B = np.zeros((2, 200))
    B[0, :15] = 1
    B[1, 20:35] = 1
    rep = identification_report(Est(np.arange(10) % 2, np.zeros((2, 200))), Est(np.arange(10) % 2, B))
    assert (rep.tpr, rep.fpr, rep.mcc) == (0.0, 0.0, 0.0)


@pytest.mark.parametrize("seed", range(30))
def test_identification_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n, p = 12, 6
    Ke, Kt = rng.integers(1, 4), rng.integers(1, 4)
    el, tl = rng.integers(0, Ke, n), rng.integers(0, Kt, n)
    Be = rng.standard_normal((Ke, p)) * (rng.random((Ke, p)) < 0.5)
    Bt = rng.standard_normal((Kt, p)) * (rng.random((Kt, p)) < 0.5)
    rep = identification_report(Est(el, Be), Est(tl, Bt))
    E, T = best_support_counts(list(el), list(tl), (Be != 0).tolist(), (Bt != 0).tolist())
    tp = sum(e and t for e, t in zip(E, T))
    fn = sum(t and not e for e, t in zip(E, T))
    fp = sum(e and not t for e, t in zip(E, T))
    tn = sum(not e and not t for e, t in zip(E, T))
    assert rep.counts == (tp, fp, tn, fn)
    assert rep.mcc == pytest.approx(mcc_direct(E, T), abs=1e-12)
    assert 0 <= rep.tpr <= 1 and 0 <= rep.fpr <= 1 and -1 <= rep.mcc <= 1


def test_identification_invariant_to_estimated_relabelling():
    rng = np.random.default_rng(3)
    Bt = rng.standard_normal((3, 8)) * (rng.random((3, 8)) < 0.4)
    Be = rng.standard_normal((3, 8)) * (rng.random((3, 8)) < 0.4)
    tl, el = rng.integers(0, 3, 30), rng.integers(0, 3, 30)
    perm = np.array([2, 0, 1])
    a = identification_report(Est(el, Be), Est(tl, Bt))
    inv = np.argsort(perm)
    b = identification_report(Est(perm[el], Be[inv]), Est(tl, Bt))
    assert (a.tpr, a.fpr, a.mcc) == (b.tpr, b.fpr, b.mcc)


def test_match_labels_falls_back_to_assignment_for_many_groups():
    t = np.repeat(np.arange(8), 3)
    e = (t + 3) % 8
    perm = match_labels(e, t)
    assert all(perm[(k + 3) % 8] == k for k in range(8))


# ---------------------------------------------------------------------------
# RMSE, PMRE, stability
# ---------------------------------------------------------------------------


def test_rmse_examples():
    B = np.array([[1.0, 2.0], [0.0, -1.0]])
    truth = Est([0, 0, 1], B)
    assert rmse(Est([1, 1, 0], B[::-1]), truth) == 0.0
    expected = np.sqrt((5 + 5 + 1) / 3)
    assert rmse(Est([0, 0, 0], np.zeros((1, 2))), truth) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("seed", range(50))
def test_rmse_matches_loop(seed):
    rng = np.random.default_rng(seed)
    n, p = int(rng.integers(1, 40)), int(rng.integers(1, 12))
    Ke, Kt = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    Be, Bt = rng.standard_normal((Ke, p)), rng.standard_normal((Kt, p))
    el, tl = rng.integers(0, Ke, n), rng.integers(0, Kt, n)
    assert rmse(Est(el, Be), Est(tl, Bt)) == pytest.approx(rmse_loop(el, Be, tl, Bt), abs=1e-12)


def test_rmse_joint_permutation_invariance():
    rng = np.random.default_rng(1)
    Be, Bt = rng.standard_normal((3, 5)), rng.standard_normal((2, 5))
    el, tl = rng.integers(0, 3, 20), rng.integers(0, 2, 20)
    perm = np.array([1, 2, 0])
    assert rmse(Est(perm[el], Be[np.argsort(perm)]), Est(tl, Bt)) == pytest.approx(rmse(Est(el, Be), Est(tl, Bt)))


def test_pmre_examples():
    assert pmre([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert pmre([2.0], [1.0]) == 0.5
    assert pmre([1.0, 0.0, 2.0], [1.0, 5.0, 1.0], return_excluded=True) == (0.25, 1)
    with pytest.raises(InvalidInputError):
        pmre([0.0, 0.0], [1.0, 1.0])


def test_stability_examples():
    assert stability([0, 0, 1, 1], [0, 0, 1, 1]) == 0.0
    assert stability([0, 0, 1, 1], [0, 1, 0, 1]) == 0.5
    a = np.array([0, 0, 1, 1, 2, 2, 2])
    b = a.copy()
    b[1], b[2] = 1, 0  # swap two samples between the two size-2 groups
    assert stability(a, b) == pytest.approx(8 / 49)


def test_stability_on_a_subsample():
    a = [0, 1, 1, 0, 2]
    b = [5, 5, 7]
    idx = [1, 2, 4]
    assert stability(a, b, idx) == pytest.approx(stability_direct(a, b, idx))
    with pytest.raises(InvalidInputError):
        stability(a, [], [])


@pytest.mark.parametrize("n", range(1, 7))
def test_stability_exhaustive(n):
    parts = list(set_partitions(n, 3))
    ident = list(range(n))
    for a in parts:
        for b in parts:
            assert stability(a, b) == pytest.approx(stability_direct(a, b, ident), abs=1e-12)
