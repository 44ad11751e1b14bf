import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from hetreg.errors import InvalidConfigError
from hetreg.simulate import (
    ScenarioSpec,
    ar1_design,
    gen_clusters,
    gen_dataset,
    gen_truth,
    group_sizes,
    sample_errors,
    scenario_clusters,
)

GOLDEN = json.loads((Path(__file__).parent / "data" / "golden_coefficients.json").read_text())


def expected_row(entry, p):
    beta = np.zeros(p)
    genes, coefs = entry["genes"], entry["coefs"][: len(entry["genes"])]
    for g, c in zip(genes, coefs):
        beta[max(g, 1) - 1] = c
    return beta


def overlaps(clusters):
    return [len(set(a) & set(b)) for a, b in zip(clusters, clusters[1:])]


# ---------------------------------------------------------------------------
# cluster layouts
# ---------------------------------------------------------------------------


def test_s1_layout():
    cs = gen_clusters("S1")
    listed = cs.clusters[: cs.L - cs.n_wrapped]
    assert len(listed) == 24
    assert all(len(c) == 10 for c in listed)
    assert listed[0] == tuple(range(10))
    assert set(overlaps(listed)) == {2}


def test_s2_layout():
    cs = gen_clusters("S2")
    assert cs.L == 39 and cs.n_wrapped == 0
    assert all(len(c) == 10 for c in cs.clusters)
    assert set(overlaps(cs.clusters)) == {5}


def test_s4_layout():
    cs = gen_clusters("S4")
    assert cs.L == 36
    sizes = [len(c) for c in cs.clusters]
    assert sizes.count(1) == 8
    assert set(sizes) <= {1, 3, 5, 10, 15, 20}


@pytest.mark.parametrize("name,L", [("S3", 25), ("S5", 38), ("S6", 35)])
def test_other_layouts_cover_every_gene(name, L):
    cs = gen_clusters(name)
    assert cs.L == L
    assert set().union(*map(set, cs.clusters)) == set(range(200))
    assert max(max(c) for c in cs.clusters) == 199


@pytest.mark.parametrize("name,shape", [("lowdim10", (2, 6)), ("lowdim20", (3, 8)),
                                        ("lowdim32", (5, 8)), ("lowdim50", (6, 10))])
def test_lowdim_layouts(name, shape):
    cs = gen_clusters(name)
    listed = cs.clusters[: cs.L - cs.n_wrapped]
    assert (len(listed), len(listed[0])) == shape
    assert all(len(c) == shape[1] for c in listed)
    assert set(overlaps(listed)) == {2}
    assert (len(listed), shape[1]) == tuple(GOLDEN["lowdim"][name[6:]]["clusters"])


def test_unknown_scenario():
    with pytest.raises(InvalidConfigError):
        gen_clusters("S7")
    with pytest.raises(InvalidConfigError):
        gen_truth("lowdim10", "three")


# ---------------------------------------------------------------------------
# coefficients
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("scenario", ["S1", "S4", "S6"])
def test_coefficients_match_the_golden_transcription(scenario):
    g = GOLDEN["p200"]
    B2 = gen_truth(scenario).betas
    np.testing.assert_array_equal(B2[0], expected_row(g["subgroup1"], 200))
    np.testing.assert_array_equal(B2[1], expected_row(g["subgroup2"], 200))
    B3 = gen_truth(scenario, "three").betas
    np.testing.assert_array_equal(B3[:2], B2)
    np.testing.assert_array_equal(B3[2], expected_row(g["subgroup3"], 200))


@pytest.mark.parametrize("p", ["10", "20", "32", "50"])
def test_lowdim_coefficients_match_the_golden_transcription(p):
    entry = GOLDEN["lowdim"][p]
    B = gen_truth(f"lowdim{p}").betas
    assert B.shape == (2, int(p))
    np.testing.assert_array_equal(B[0], expected_row(entry["subgroup1"], int(p)))
    np.testing.assert_array_equal(B[1], expected_row(entry["subgroup2"], int(p)))


def test_two_group_supports():
    B = gen_truth("S1").betas
    assert (B[0] != 0).sum() == 15 and (B[1] != 0).sum() == 15
    shared = np.flatnonzero((B[0] != 0) & (B[1] != 0)) + 1
    assert shared.tolist() == GOLDEN["p200"]["shared_12"]
    same = [j for j in shared if B[0, j - 1] == B[1, j - 1]]
    # the text also names gene 31, but the printed values there are 0.5 and -0.5
    assert same == GOLDEN["p200"]["identical_12_from_listing"]
    assert B[0, 0] == 2 and B[0, 32] == 1


def test_three_group_design():
    B = gen_truth("S1", "three").betas
    assert (B[2] != 0).sum() == 15
    shared = np.flatnonzero(np.all(B != 0, axis=0)) + 1
    assert shared.tolist() == GOLDEN["p200"]["shared_123"]
    assert B[0, 2] == B[1, 2] == B[2, 2]


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def test_ar1_lag_one_correlation():
    X = ar1_design(100_000, 6, 0.5, np.random.default_rng(0))
    for j in range(5):
        assert abs(np.corrcoef(X[:, j], X[:, j + 1])[0, 1] - 0.5) < 0.01
    assert abs(np.corrcoef(X[:, 0], X[:, 2])[0, 1] - 0.25) < 0.01
    np.testing.assert_allclose(X.var(axis=0), 1.0, atol=0.02)


def test_mixture_branch_frequency():
    _, normal = sample_errors("mix", 100_000, np.random.default_rng(1))
    assert abs(normal.mean() - 0.7) < 0.01


def test_cauchy_errors_are_heavy_tailed():
    eps, normal = sample_errors("t1", 10_000, np.random.default_rng(2))
    assert not normal.any()
    assert np.abs(eps).max() > 100


@pytest.mark.parametrize("n,K,balance,expected", [
    (300, 2, "balanced", [150, 150]), (300, 2, "unbalanced", [210, 90]),
    (301, 3, "balanced", [101, 100, 100]), (7, 2, "unbalanced", [4, 3]),
])
def test_group_sizes(n, K, balance, expected):
    assert group_sizes(n, K, balance).tolist() == expected


def test_dataset_shapes_and_sizes():
    data, truth = gen_dataset(ScenarioSpec("S1", n=300, balance="unbalanced", seed=4))
    assert data.X.shape == (300, 200)
    assert sorted(truth.partition.sizes().tolist()) == [90, 210]
    data3, truth3 = gen_dataset(ScenarioSpec("S2", balance="three", seed=4))
    assert truth3.partition.sizes().tolist() == [100, 100, 100]


def test_noiseless_data_are_exactly_linear():
    data, truth = gen_dataset(ScenarioSpec("S3", error="gauss", noise_scale=0.0, seed=1))
    fitted = np.einsum("ij,ij->i", data.X, truth.betas[truth.partition.labels])
    np.testing.assert_array_equal(data.y, fitted)


def test_generation_is_reproducible():
    spec = ScenarioSpec("S5", error="mix", seed=9)
    a, ta = gen_dataset(spec)
    b, tb = gen_dataset(spec)
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.y, b.y)
    assert ta.partition == tb.partition
    c, _ = gen_dataset(replace(spec, seed=10))
    assert not np.array_equal(a.y, c.y)


def test_custom_scenario():
    spec = ScenarioSpec("custom", n=20, betas=((1.0, 0.0), (0.0, -1.0)), clusters=((0, 1),), seed=0)
    data, truth = gen_dataset(spec)
    assert data.X.shape == (20, 2) and truth.K == 2
    assert scenario_clusters(spec).L == 1


@pytest.mark.parametrize("bad", [dict(balance="even"), dict(error="laplace"), dict(rho=1.0),
                                 dict(scenario="lowdim10", balance="three"), dict(n=1),
                                 dict(scenario="custom"), dict(noise_scale=-1.0)])
def test_invalid_specs(bad):
    with pytest.raises(InvalidConfigError):
        ScenarioSpec(**bad)
