"""Synthetic heterogeneous-regression benchmarks.

Six 200-gene cluster layouts (S1-S6), four small layouts (``lowdim10`` to
``lowdim50``), fixed sparse coefficient patterns for two or three
subgroups, an AR(1)-correlated Gaussian design, and three error laws.

Gene numbers in the listings below are 1-based, as published; everything
returned is 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ClusterStructure, Dataset, Partition
from .errors import InvalidConfigError

SCENARIOS = ("S1", "S2", "S3", "S4", "S5", "S6", "lowdim10", "lowdim20", "lowdim32", "lowdim50")
BALANCES = ("balanced", "unbalanced", "three")
ERRORS = ("t1", "mix", "gauss")
MIX_NORMAL_PROB = 0.7
UNBALANCED_SHARE = 0.7

# ---------------------------------------------------------------------------
# cluster layouts (1-based, inclusive)
# ---------------------------------------------------------------------------


def _run(first: int, size: int, stride: int, count: int) -> list[tuple[int, int]]:
    return [(first + i * stride, first + i * stride + size - 1) for i in range(count)]


def _singletons(first: int, last: int) -> list[tuple[int, int]]:
    return [(j, j) for j in range(first, last + 1)]


_LAYOUTS: dict[str, list[tuple[int, int]]] = {
    # 24 clusters of 10 sharing 2 genes with their predecessor
    "S1": _run(1, 10, 8, 24),
    # 39 clusters of 10 sharing 5 genes
    "S2": _run(1, 10, 5, 39),
    # overlap 2 up to {97..106}, overlap 5 up to {122..131}, then disjoint to the end
    "S3": _run(1, 10, 8, 13) + _run(102, 10, 5, 5) + _run(132, 10, 10, 7),
    "S4": (
        [(1, 5), (4, 8), (7, 16), (15, 24), (23, 25), (24, 26), (25, 39), (38, 52), (51, 70)]
        + _run(69, 3, 1, 5)
        + _run(74, 5, 3, 5)
        + _run(89, 10, 8, 5)
        + _run(129, 15, 13, 2)
        + _run(155, 20, 18, 2)
        + _singletons(193, 200)
    ),
    "S5": (
        [(1, 6), (2, 7), (3, 10), (6, 13), (9, 18), (14, 23), (19, 33), (29, 43), (39, 58), (54, 73)]
        + _run(69, 6, 1, 3)
        + _run(72, 8, 3, 3)
        + _run(81, 10, 5, 5)
        + _run(106, 15, 10, 5)
        + [(156, 175), (171, 190)]
        + _singletons(191, 200)
    ),
    "S6": (
        [(1, 3), (2, 4), (3, 7), (6, 10), (9, 18), (17, 26), (25, 39), (38, 52), (51, 70), (69, 88)]
        + _run(87, 5, 3, 3)
        + _run(96, 6, 4, 3)
        + _run(108, 8, 6, 3)
        + [(126, 135), (131, 140), (136, 150), (146, 160), (156, 175), (171, 190)]
        + _singletons(191, 200)
    ),
    "lowdim10": _run(1, 6, 4, 2),
    "lowdim20": _run(1, 8, 6, 3),
    "lowdim32": _run(1, 8, 6, 5),
    "lowdim50": _run(1, 10, 8, 6),
}

_P = {name: 200 for name in ("S1", "S2", "S3", "S4", "S5", "S6")}
_P.update(lowdim10=10, lowdim20=20, lowdim32=32, lowdim50=50)

# ---------------------------------------------------------------------------
# coefficient patterns (1-based gene, value)
# ---------------------------------------------------------------------------

_GENES_1 = (1, 3, 6, 9, 10, 11, 13, 16, 20, 21, 25, 27, 29, 31, 33)
_COEF_1 = (2, 1, 0.5, -1, 1.5, 0.5, -1, 2, -1, 0.5, -1, 0.5, 1.5, 0.5, 1)
_GENES_2 = (2, 3, 5, 9, 10, 12, 14, 17, 18, 19, 22, 23, 26, 31, 33)
_COEF_2 = (-2, 1, -2, -1, 0.5, 1.5, 1, -1, -0.5, 2, -0.5, 1, -2, -0.5, -1)
# printed starting at "0"; that entry is read as gene 1
_GENES_3 = (0, 3, 4, 6, 7, 10, 11, 12, 15, 17, 24, 25, 31, 32, 34)
_COEF_3 = (-1, 1, -2, -0.5, 1, 2, -1, 2, 0.5, -1, 1, 1.5, 0.5, 1, -1.5)

_LOWDIM = {
    10: (((1, 2, 4), (2, 1, 0.5)), ((3, 4, 6), (-2, 1, -0.5))),
    20: (((1, 2, 6, 8, 10, 11), (2, 1, 0.5, -1, 1.5, -2)), ((1, 3, 4, 7, 10, 14), (-2, 1, 0.5, -1, 1.5, 2))),
    # five genes are listed against six coefficients; the first five are used
    32: (((1, 8, 10, 13, 16), (2, 1, 0.5, -1, 1.5)), ((1, 4, 7, 10, 14, 19), (-2, 1, 0.5, -1, 1.5, 2))),
}
_LOWDIM[50] = _LOWDIM[32]


def _vector(p, genes, coefs):
    beta = np.zeros(p)
    for g, c in zip(genes, coefs):
        beta[max(g, 1) - 1] = c
    return beta


# ---------------------------------------------------------------------------
# public types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioSpec:
    """One simulation design.

    ``scenario="custom"`` takes the coefficient matrix from ``betas`` (K x p)
    and optional 0-based ``clusters``.
    """

    scenario: str = "S1"
    n: int = 300
    balance: str = "balanced"
    error: str = "mix"
    noise_scale: float = 0.5
    rho: float = 0.5
    seed: int = 0
    betas: tuple | None = None
    clusters: tuple | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS + ("custom",):
            raise InvalidConfigError(f"unknown scenario {self.scenario!r}")
        if self.balance not in BALANCES:
            raise InvalidConfigError(f"unknown balance {self.balance!r}")
        if self.error not in ERRORS:
            raise InvalidConfigError(f"unknown error law {self.error!r}")
        if self.scenario == "custom" and self.betas is None:
            raise InvalidConfigError("custom scenario needs betas")
        if self.balance == "three" and self.scenario.startswith("lowdim"):
            raise InvalidConfigError("three-subgroup coefficients exist only for S1-S6")
        if not -1.0 < self.rho < 1.0:
            raise InvalidConfigError("rho must lie in (-1, 1)")
        if self.noise_scale < 0:
            raise InvalidConfigError("noise_scale must be >= 0")
        if self.n < self.K:
            raise InvalidConfigError("n must be at least the number of subgroups")

    @property
    def K(self) -> int:
        if self.scenario == "custom":
            return int(np.atleast_2d(self.betas).shape[0])
        return 3 if self.balance == "three" else 2

    @property
    def p(self) -> int:
        if self.scenario == "custom":
            return int(np.atleast_2d(self.betas).shape[1])
        return _P[self.scenario]


@dataclass(frozen=True)
class GroundTruth:
    partition: Partition | None
    betas: np.ndarray

    def __post_init__(self):
        b = np.array(self.betas, dtype=float)
        b.flags.writeable = False
        object.__setattr__(self, "betas", b)

    @property
    def supports(self) -> np.ndarray:
        return self.betas != 0

    @property
    def K(self) -> int:
        return self.betas.shape[0]


def gen_clusters(scenario: str) -> ClusterStructure:
    """0-based cluster structure of a named layout; listings past gene 200 are clipped."""
    if scenario not in _LAYOUTS:
        raise InvalidConfigError(f"unknown scenario {scenario!r}")
    p = _P[scenario]
    clusters = [list(range(a - 1, min(b, p))) for a, b in _LAYOUTS[scenario]]
    return ClusterStructure.from_clusters(clusters, p)


def gen_truth(scenario: str, balance: str = "balanced") -> GroundTruth:
    """Coefficient matrix (K x p) of a scenario; labels are drawn by :func:`gen_dataset`."""
    if scenario not in _P:
        raise InvalidConfigError(f"unknown scenario {scenario!r}")
    if balance not in BALANCES:
        raise InvalidConfigError(f"unknown balance {balance!r}")
    p = _P[scenario]
    if scenario.startswith("lowdim"):
        if balance == "three":
            raise InvalidConfigError("three-subgroup coefficients exist only for S1-S6")
        rows = [_vector(p, g, c) for g, c in _LOWDIM[p]]
    else:
        rows = [_vector(p, _GENES_1, _COEF_1), _vector(p, _GENES_2, _COEF_2)]
        if balance == "three":
            rows.append(_vector(p, _GENES_3, _COEF_3))
    return GroundTruth(None, np.vstack(rows))


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def ar1_design(n: int, p: int, rho: float, rng) -> np.ndarray:
    """Rows i.i.d. N(0, S) with ``S[j, k] = rho**|j-k|``, built by the AR(1) recursion."""
    z = rng.standard_normal((n, p))
    x = np.empty_like(z)
    x[:, 0] = z[:, 0]
    c = np.sqrt(1.0 - rho * rho)
    for j in range(1, p):
        x[:, j] = rho * x[:, j - 1] + c * z[:, j]
    return x


def sample_errors(law: str, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` errors; also return whether each came from the normal branch."""
    if law == "gauss":
        return rng.standard_normal(n), np.ones(n, dtype=bool)
    if law == "t1":
        return rng.standard_cauchy(n), np.zeros(n, dtype=bool)
    if law == "mix":
        normal = rng.random(n) < MIX_NORMAL_PROB
        eps = np.where(normal, rng.standard_normal(n), rng.standard_cauchy(n))
        return eps, normal
    raise InvalidConfigError(f"unknown error law {law!r}")


def group_sizes(n: int, K: int, balance: str) -> np.ndarray:
    """Subgroup sizes; equal shares use largest-remainder rounding."""
    if balance == "unbalanced":
        if K != 2:
            raise InvalidConfigError("the 7:3 structure has two subgroups")
        first = int(np.floor(UNBALANCED_SHARE * n))
        return np.array([first, n - first])
    base = np.full(K, n // K)
    base[: n - base.sum()] += 1
    return base


def gen_dataset(spec: ScenarioSpec) -> tuple[Dataset, GroundTruth]:
    """Simulate ``y_i = x_i' beta_{g_i} + noise_scale * eps_i``."""
    rng = np.random.default_rng(spec.seed)
    if spec.scenario == "custom":
        betas = np.atleast_2d(np.asarray(spec.betas, dtype=float))
    else:
        betas = gen_truth(spec.scenario, spec.balance).betas
    K, p = betas.shape
    X = ar1_design(spec.n, p, spec.rho, rng)
    sizes = group_sizes(spec.n, K, "unbalanced" if spec.balance == "unbalanced" else "balanced")
    labels = rng.permutation(np.repeat(np.arange(K), sizes))
    eps, _ = sample_errors(spec.error, spec.n, rng)
    y = np.einsum("ij,ij->i", X, betas[labels]) + spec.noise_scale * eps
    truth = GroundTruth(Partition(labels, K), betas)
    return Dataset(y, X), truth


def scenario_clusters(spec: ScenarioSpec) -> ClusterStructure:
    if spec.scenario == "custom":
        if spec.clusters is None:
            return ClusterStructure.singletons(spec.p)
        return ClusterStructure.from_clusters(spec.clusters, spec.p)
    return gen_clusters(spec.scenario)
