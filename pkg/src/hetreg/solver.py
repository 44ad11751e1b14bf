"""Huber loss + sparse overlapping group lasso for a single subgroup.

Overlapping clusters are handled by covariate duplication: every feature is
copied once per cluster containing it, which turns the overlapping penalty
into a non-overlapping sparse group lasso on the expanded design. The
expanded problem is solved by accelerated proximal gradient with
backtracking (see ``_kernels_py.pg_solve``), and the solution is mapped back
by summing duplicates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._backend import kernels as _default_kernels
from ._backend import load as _load_backend
from .core import ClusterStructure, huber_value, sgl_penalty
from .errors import InvalidInputError, InvalidParameterError, InvalidStructureError


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-6
    max_iter: int = 50_000
    init_step: float = 1.0
    intercept: bool = False
    backend: str | None = None

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidParameterError("tol must be positive")
        if self.max_iter < 1:
            raise InvalidParameterError("max_iter must be >= 1")
        if not self.init_step > 0:
            raise InvalidParameterError("init_step must be positive")

    @property
    def kernels(self):
        return _default_kernels if self.backend is None else _load_backend(self.backend)


@dataclass(frozen=True)
class SolverSolution:
    beta: np.ndarray
    expanded_v: np.ndarray
    intercept: float | None
    objective: float
    iterations: int
    converged: bool
    kkt_residual: float
    step: float = 1.0
    trace: np.ndarray | None = None


def _check_structure(cs: ClusterStructure, p: int):
    if cs.p != p:
        raise InvalidStructureError(f"cluster structure is for p={cs.p}, design has p={p}")


def duplicate_design(X, cs: ClusterStructure) -> np.ndarray:
    """Expanded design whose column ``k`` is column ``dup_map[k, 1]`` of ``X``."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise InvalidInputError("X must be 2-D")
    _check_structure(cs, X.shape[1])
    return np.ascontiguousarray(X[:, cs.dup_features])


def recombine(v, cs: ClusterStructure) -> np.ndarray:
    """Sum the duplicates of every original feature."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size != cs.expanded_dim:
        raise InvalidInputError(f"expected a vector of length {cs.expanded_dim}, got shape {v.shape}")
    return np.bincount(cs.dup_features, weights=v, minlength=cs.p)


def _thresholds(lambda_, gamma, cs):
    return lambda_ * gamma, lambda_ * (1.0 - gamma) * np.asarray(cs.weights)


def _check_tuning(lambda_, gamma):
    if lambda_ < 0 or not np.isfinite(lambda_):
        raise InvalidParameterError("lambda must be finite and >= 0")
    if not 0.0 <= gamma <= 1.0:
        raise InvalidParameterError("gamma must lie in [0, 1]")


def prox_sparse_group(u, step, lambda_, gamma, cs: ClusterStructure, backend=None) -> np.ndarray:
    """Exact proximal map of ``step * lambda * (gamma |v|_1 + (1-gamma) sum_l w_l |v_l|_2)``.

    Soft-thresholding followed by block-wise shrinkage; a block whose
    soft-thresholded norm is zero maps to zero.
    """
    if not step > 0:
        raise InvalidParameterError("step must be positive")
    _check_tuning(lambda_, gamma)
    u = np.asarray(u, dtype=float)
    if u.size != cs.expanded_dim:
        raise InvalidInputError("u length must equal the expanded dimension")
    k = _load_backend(backend) if backend else _default_kernels
    thr1, thr2 = _thresholds(lambda_, gamma, cs)
    return k.prox_sgl(u, step * thr1, step * thr2, cs.block_ptr)


def block_zero_thresholds(g, ptr, weights, gamma) -> np.ndarray:
    """Per block, the smallest ``lam >= 0`` with ``|soft(g_l, lam*gamma)|_2 <= lam*(1-gamma)*w_l``.

    All blocks are bisected together; the excess is monotone decreasing in
    ``lam``, so each bracket halves per pass.
    """
    g = np.abs(np.asarray(g, dtype=float))
    ptr = np.asarray(ptr)
    weights = np.asarray(weights, dtype=float)
    starts, sizes = ptr[:-1], np.diff(ptr)
    gmax = np.maximum.reduceat(g, starts) if g.size else np.zeros(0)
    if gamma <= 0.0:
        return np.sqrt(np.add.reduceat(g * g, starts)) / weights
    if gamma >= 1.0:
        return gmax
    lo = np.zeros_like(gmax)
    # either bound alone already zeroes the block
    norm = np.sqrt(np.add.reduceat(g * g, starts))
    with np.errstate(over="ignore"):
        hi = np.minimum(gmax / gamma, norm / ((1.0 - gamma) * weights))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        s = np.maximum(g - np.repeat(mid, sizes) * gamma, 0.0)
        over = np.sqrt(np.add.reduceat(s * s, starts)) > mid * (1.0 - gamma) * weights
        lo = np.where(over, mid, lo)
        hi = np.where(over, hi, mid)
        if np.all(hi - lo <= 4e-16 * hi):
            break
    return np.where(gmax > 0, hi, 0.0)


def block_zero_threshold(g, weight, gamma) -> float:
    """Single-block version of :func:`block_zero_thresholds`."""
    g = np.atleast_1d(np.asarray(g, dtype=float))
    if g.size == 0:
        return 0.0
    return float(block_zero_thresholds(g, [0, g.size], [weight], gamma)[0])


def _robust_location(y, delta, kernels):
    y = np.asarray(y, dtype=float)
    return float(kernels.huber_location(y, delta, float(np.median(y))))


def null_gradient(Xtil, y, delta, intercept, kernels=None):
    """Gradient magnitude of the loss at ``v = 0`` (intercept at its optimum)."""
    kernels = kernels or _default_kernels
    y = np.asarray(y, dtype=float)
    loc = _robust_location(y, delta, kernels) if intercept else 0.0
    r0 = y - loc
    return np.asarray(Xtil).T @ np.clip(r0, -delta, delta), loc


def lambda_max(
    Xtil,
    y,
    gamma: float,
    delta: float,
    cs: ClusterStructure,
    intercept: bool = False,
    opts: SolverOptions | None = None,
    certify: bool = True,
) -> float:
    """Smallest penalty level at which the fitted coefficients are all zero.

    The per-block zero threshold is found by bisection; the result is then
    certified by a solver call and doubled until the solver returns zero.
    """
    if not 0.0 <= gamma <= 1.0:
        raise InvalidParameterError("gamma must lie in [0, 1]")
    Xtil = np.asarray(Xtil, dtype=float)
    if Xtil.shape[1] != cs.expanded_dim:
        raise InvalidInputError("expanded design has the wrong number of columns")
    opts = opts or SolverOptions(intercept=intercept)
    g, _ = null_gradient(Xtil, y, delta, intercept, opts.kernels)
    lam = float(block_zero_thresholds(g, cs.block_ptr, cs.weights, gamma).max())
    if lam == 0.0 or not certify:
        return lam
    check = SolverOptions(tol=opts.tol, max_iter=opts.max_iter, init_step=opts.init_step,
                          intercept=intercept, backend=opts.backend)
    for _ in range(60):
        sol = fit_penalized(Xtil, y, lam, gamma, delta, cs, check)
        if not np.any(sol.expanded_v):
            return lam
        lam *= 2.0
    raise InvalidParameterError("could not certify a zero solution")


def fit_penalized(
    Xtil,
    y,
    lambda_: float,
    gamma: float,
    delta: float,
    cs: ClusterStructure,
    opts: SolverOptions | None = None,
    v0=None,
    intercept0: float | None = None,
    step0: float | None = None,
    trace: bool = False,
) -> SolverSolution:
    """Minimise ``sum_i rho_delta(y_i - x_i'v - b) + penalty(v)`` on the expanded space.

    ``v0``/``intercept0``/``step0`` warm-start the iteration.
    """
    opts = opts or SolverOptions()
    _check_tuning(lambda_, gamma)
    if not delta > 0:
        raise InvalidParameterError("delta must be positive")
    Xtil = np.ascontiguousarray(Xtil, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if Xtil.ndim != 2 or Xtil.shape[0] != y.size:
        raise InvalidInputError("design rows must match the response length")
    if Xtil.shape[1] != cs.expanded_dim:
        raise InvalidInputError("expanded design has the wrong number of columns")
    kernels = opts.kernels
    v0 = np.zeros(cs.expanded_dim) if v0 is None else np.array(v0, dtype=float)
    if intercept0 is None:
        intercept0 = float(np.median(y)) if y.size else 0.0
    thr1, thr2 = _thresholds(lambda_, gamma, cs)
    v, b, F, it, conv, kkt, step, hist = kernels.pg_solve(
        Xtil, y, cs.block_ptr, thr1, thr2, float(delta), v0, float(intercept0),
        bool(opts.intercept), float(opts.tol), int(opts.max_iter),
        float(step0 if step0 is not None else opts.init_step), bool(trace),
    )
    return SolverSolution(
        beta=recombine(v, cs),
        expanded_v=v,
        intercept=b if opts.intercept else None,
        objective=F,
        iterations=it,
        converged=conv,
        kkt_residual=kkt,
        step=step,
        trace=hist if trace else None,
    )


def solve_original(
    X,
    y,
    lambda_: float,
    gamma: float,
    delta: float,
    cs: ClusterStructure,
    opts: SolverOptions | None = None,
    **warm,
) -> SolverSolution:
    """Duplicate, solve on the expanded space, recombine."""
    Xtil = duplicate_design(X, cs)
    return fit_penalized(Xtil, y, lambda_, gamma, delta, cs, opts, **warm)


def objective_original(X, y, beta, v, intercept, lambda_, gamma, delta, cs) -> float:
    """Per-subgroup penalized objective evaluated on the original covariates."""
    r = np.asarray(y, dtype=float) - np.asarray(X, dtype=float) @ np.asarray(beta, dtype=float)
    if intercept is not None:
        r = r - intercept
    return float(np.sum(huber_value(r, delta))) + sgl_penalty(v, cs, lambda_, gamma)
