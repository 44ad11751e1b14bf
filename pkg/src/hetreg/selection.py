"""Tuning-parameter selection by K-fold CV and choice of K by a modified BIC."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import ClusterStructure, Dataset, FitResult, huber_value
from .errors import InvalidParameterError
from .solver import SolverOptions, duplicate_design, fit_penalized, lambda_max


CV_RULES = ("min", "1se")


@dataclass(frozen=True)
class TuningGrid:
    """Candidate values for the CV search.

    The lambda path for every gamma runs from that gamma's ``lambda_max``
    down to ``lambda_min_ratio * lambda_max`` in ``n_lambdas`` log-spaced
    steps. ``rule="min"`` keeps the grid point with the smallest CV loss;
    ``rule="1se"`` keeps the earliest path position (largest fraction of
    ``lambda_max``) whose CV loss is within one standard error of that
    minimum.
    """

    gammas: tuple[float, ...] = (0.1, 0.3, 0.5, 0.7)
    n_lambdas: int = 20
    lambda_min_ratio: float = 1e-3
    folds: int = 5
    rule: str = "min"

    def __post_init__(self):
        g = tuple(float(x) for x in self.gammas)
        if not g or any(not 0.0 <= x <= 1.0 for x in g):
            raise InvalidParameterError("gammas must be a non-empty subset of [0, 1]")
        if self.n_lambdas < 2:
            raise InvalidParameterError("n_lambdas must be >= 2")
        if not 0.0 < self.lambda_min_ratio < 1.0:
            raise InvalidParameterError("lambda_min_ratio must lie in (0, 1)")
        if self.folds < 2:
            raise InvalidParameterError("folds must be >= 2")
        if self.rule not in CV_RULES:
            raise InvalidParameterError(f"rule must be one of {CV_RULES}")
        object.__setattr__(self, "gammas", g)

    @property
    def size(self) -> int:
        return len(self.gammas) * self.n_lambdas

    def lambdas(self, lam_max: float) -> np.ndarray:
        return lam_max * np.logspace(0.0, math.log10(self.lambda_min_ratio), self.n_lambdas)


@dataclass(frozen=True)
class CVResult:
    """Outcome of :func:`cv_select`; unpacks as ``(lambda_, gamma, table)``."""

    lambda_: float
    gamma: float
    table: np.ndarray
    lambdas: np.ndarray
    gammas: tuple[float, ...]
    degenerate: bool = False
    se: np.ndarray | None = None

    def __iter__(self):
        return iter((self.lambda_, self.gamma, self.table))


def make_folds(n: int, folds: int, rng) -> list[np.ndarray]:
    """Random split of ``range(n)`` into ``folds`` parts whose sizes differ by at most one."""
    if folds < 2 or n < folds:
        raise InvalidParameterError(f"need n >= folds >= 2, got n={n}, folds={folds}")
    perm = np.random.default_rng(rng).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, folds)]


def cv_path(
    Xtil,
    y,
    cs: ClusterStructure,
    delta: float,
    grid: TuningGrid | None = None,
    rng=None,
    intercept: bool = True,
    opts: SolverOptions | None = None,
    folds=None,
) -> CVResult:
    """CV search on an already duplicated design.

    Every fold walks each gamma's lambda path from the largest value down,
    warm-starting each fit from the previous one. Training fits use
    ``lambda * n_train / n`` so that the penalty keeps its weight relative to
    a loss that is summed over fewer samples. The score of a grid point is the
    held-out Huber loss averaged over all samples.
    """
    grid = grid or TuningGrid()
    Xtil = np.ascontiguousarray(Xtil, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.size
    opts = opts or SolverOptions(intercept=intercept)
    if opts.intercept != intercept:
        opts = SolverOptions(opts.tol, opts.max_iter, opts.init_step, intercept, opts.backend)
    gammas = (1.0,) if cs.is_singleton else grid.gammas
    if folds is None:
        folds = make_folds(n, grid.folds, rng)

    lam_max = np.array([lambda_max(Xtil, y, g, delta, cs, intercept, opts, certify=False) for g in gammas])
    lambdas = np.vstack([grid.lambdas(lm) for lm in lam_max])
    if not np.any(lam_max > 0):
        table = np.full((len(gammas), grid.n_lambdas), np.nan)
        return CVResult(0.0, gammas[0], table, lambdas, gammas, degenerate=True)

    loss = np.zeros((len(gammas), grid.n_lambdas))
    fold_means = np.zeros((len(folds), len(gammas), grid.n_lambdas))
    for f, test in enumerate(folds):
        train = np.setdiff1d(np.arange(n), test, assume_unique=True)
        Xtr, ytr = Xtil[train], y[train]
        Xte, yte = Xtil[test], y[test]
        shrink = train.size / n
        for a, g in enumerate(gammas):
            v, b, step = None, None, None
            for j, lam in enumerate(lambdas[a]):
                sol = fit_penalized(Xtr, ytr, lam * shrink, g, delta, cs, opts, v0=v, intercept0=b, step0=step)
                v, b, step = sol.expanded_v, sol.intercept, sol.step
                pred = Xte @ v + (b if b is not None else 0.0)
                fold_loss = float(np.sum(huber_value(yte - pred, delta)))
                loss[a, j] += fold_loss
                fold_means[f, a, j] = fold_loss / test.size
    table = loss / n
    se = fold_means.std(axis=0, ddof=1) / math.sqrt(len(folds))

    best = np.nanmin(table)
    cutoff = best
    if grid.rule == "1se":
        a0, j0 = _first_hit(table, best, gammas)
        cutoff = best + se[a0, j0]
    a, j = _first_hit(table, cutoff, gammas)
    return CVResult(float(lambdas[a, j]), gammas[a], table, lambdas, gammas, se=se)


def _first_hit(table, cutoff, gammas):
    """First grid point with ``table <= cutoff``: larger lambda first, then larger gamma."""
    order = sorted(range(len(gammas)), key=lambda a: -gammas[a])
    for j in range(table.shape[1]):
        for a in order:
            if table[a, j] <= cutoff:
                return a, j
    raise AssertionError("cutoff below the table minimum")


def cv_select(
    subsample: Dataset,
    cs: ClusterStructure,
    delta: float,
    grid: TuningGrid | None = None,
    rng=None,
    intercept: bool = True,
    opts: SolverOptions | None = None,
) -> CVResult:
    """Choose ``(lambda, gamma)`` for one subgroup by K-fold CV.

    Returns a :class:`CVResult`; ``degenerate`` is set when the data carry no
    signal at all (every ``lambda_max`` is zero), in which case the pair is
    ``(0, first gamma)``.
    """
    grid = grid or TuningGrid()
    if subsample.n < grid.folds:
        raise InvalidParameterError(f"subsample of size {subsample.n} is smaller than folds={grid.folds}")
    return cv_path(duplicate_design(subsample.X, cs), subsample.y, cs, delta, grid, rng, intercept, opts)


# ---------------------------------------------------------------------------
# choosing K
# ---------------------------------------------------------------------------


def bic_constant(p: int, K: int) -> float:
    """``log(log(p K))``, clamped at zero where ``p K <= e``."""
    pk = p * K
    return math.log(math.log(pk)) if pk > math.e else 0.0


def bic(data: Dataset, cs: ClusterStructure | None, fitted: FitResult) -> float:
    """Modified BIC of a fitted heterogeneous model.

    ``log(sum_k sum_{i in k} rho_{delta_k}(r_i) / n) + C log(n) / n * d_f`` with
    ``C = log(log(pK))`` and ``d_f`` the number of nonzero coefficients over
    all subgroups (intercepts excluded). ``cs`` is accepted for symmetry with
    the other entry points and is not used by the formula.
    """
    n, p, K = data.n, data.p, fitted.K
    labels = fitted.partition.labels
    if labels.size != n:
        raise InvalidParameterError("fit and data have different sample counts")
    total = 0.0
    for k, m in enumerate(fitted.models):
        idx = labels == k
        if np.any(idx):
            total += float(np.sum(huber_value(data.y[idx] - m.predict(data.X[idx]), m.delta)))
    mean_loss = total / n
    if mean_loss <= 0.0:
        warnings.warn("zero loss in BIC; clamped to 1e-300", RuntimeWarning, stacklevel=2)
        mean_loss = 1e-300
    df = int(sum(np.count_nonzero(m.beta) for m in fitted.models))
    return math.log(mean_loss) + bic_constant(p, K) * math.log(n) / n * df


@dataclass(frozen=True)
class KSelection:
    """Outcome of :func:`select_K`; unpacks as ``(K, curve)``."""

    K: int
    curve: list[tuple[int, float]]
    fits: dict[int, FitResult] = field(repr=False, default_factory=dict)

    def __iter__(self):
        return iter((self.K, self.curve))

    @property
    def best(self) -> FitResult:
        return self.fits[self.K]


def select_K(data: Dataset, cs: ClusterStructure | None, cfg, K_range) -> KSelection:
    """Fit the engine for every K in ``K_range`` and keep the BIC minimiser (ties: smaller K)."""
    from dataclasses import replace

    from .engine import fit

    Ks = sorted({int(k) for k in K_range})
    if not Ks or Ks[0] < 1 or Ks[-1] > data.n:
        raise InvalidParameterError("K_range must lie within 1..n")
    curve, fits = [], {}
    for K in Ks:
        res = fit(data, replace(cfg, K=K), cs)
        fits[K] = res
        curve.append((K, bic(data, cs, res)))
    best = min(curve, key=lambda kv: (kv[1], kv[0]))[0]
    return KSelection(best, curve, fits)
