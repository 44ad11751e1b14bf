"""Alternating update/assignment fit of the heterogeneous regression model.

Each start draws a random partition, then alternates

* update: a Huber + sparse overlapping group lasso fit per subgroup, and
* assignment: every sample moves to the subgroup whose model gives it the
  smallest Huber loss (smallest index on ties),

until the penalized objective stops changing. The start with the smallest
final objective wins.

Covariates are optionally standardized once on the full data; the penalty
then acts on standardized coefficients while the returned models live on the
original scale (``FitResult.x_scale`` records the column scales).
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import (
    MAD_FACTOR,
    ClusterStructure,
    Dataset,
    FitResult,
    HuberSpec,
    Partition,
    StartRecord,
    SubgroupModel,
    compute_delta,
    mad,
    sgl_penalty,
    subgroup_losses,
)
from .errors import (
    AllStartsFailed,
    HetregError,
    InvalidConfigError,
    InvalidStructureError,
    NumericalFailure,
    UnsupportedPrediction,
)
from .selection import TuningGrid, cv_path
from .solver import SolverOptions, duplicate_design, fit_penalized, lambda_max, recombine

log = logging.getLogger(__name__)

LOSSES = ("huber", "squared")
STRUCTURES = ("overlapping-clusters", "singleton-lasso")
TUNINGS = ("fixed", "cv", "cv-refine")
DELTA_MODES = ("adaptive", "frozen")
DELTA_SCOPES = ("pooled", "subgroup")
_STRUCTURE_ALIASES = {"clusters": "overlapping-clusters", "lasso": "singleton-lasso"}
SQUARED_DELTA_FACTOR = 1e12
INIT_RETRIES = 100


@dataclass(frozen=True)
class EngineConfig:
    """Settings of :func:`fit`.

    Parameters
    ----------
    K : int
        Number of subgroups.
    starts : int
        Number of random initial partitions.
    outer_tol : float
        Stop once the objective changes by less than this between two
        consecutive iterations (or the partition stops changing).
    loss : {"huber", "squared"}
        ``"squared"`` pins the Huber threshold at ``1e12`` times the robust
        scale of ``y``, which is least squares for any practical residual.
    structure : {"overlapping-clusters", "singleton-lasso"}
        ``"singleton-lasso"`` ignores the cluster structure (plain lasso).
    tuning : {"fixed", "cv", "cv-refine"}
        ``fixed`` uses ``lambda_``/``gamma`` as given (standardized scale).
        ``cv`` runs K-fold CV inside every update step. ``cv-refine``
        screens the starts with common fixed penalties and one common Huber
        threshold (so their objectives are comparable), then refines the
        best start: CV tunes every subgroup once, the iteration continues
        with that tuning held, and this repeats up to ``refine_rounds``
        times while the partition keeps moving.
    screen_ratios : tuple of float
        Decreasing screening penalties of ``cv-refine``, as fractions of the
        full-data ``lambda_max`` at ``screen_gamma``. Each start runs to
        convergence at every level in turn, warm-started from the last.
    screen_gamma : float
        Mixing weight used while screening.
    pilot_ratio : float
        The common screening threshold comes from the residuals of a pooled
        (one-group) fit at ``pilot_ratio`` times its ``lambda_max``.
    delta : float, optional
        Pins every subgroup's Huber threshold.
    delta_mode : {"adaptive", "frozen"}
        ``adaptive`` recomputes the thresholds from the current residuals at
        every update; ``frozen`` keeps the first values.
    delta_scope : {"pooled", "subgroup"}
        ``pooled`` takes one threshold from the residuals of all samples,
        each under its own subgroup's model; ``subgroup`` computes one per
        subgroup from that subgroup's residuals only.
    solver_tol, cv_tol : float
        KKT tolerance of the subgroup fits, and the looser one used for the
        many fits along the CV paths (only their held-out losses matter).
    threads : int, optional
        Worker threads for the starts. Results do not depend on it.
    """

    K: int = 2
    starts: int = 20
    outer_tol: float = 1e-3
    max_outer_iter: int = 100
    loss: str = "huber"
    structure: str = "overlapping-clusters"
    seed: int = 0
    standardize: bool = True
    intercept: bool = True
    tuning: str = "cv"
    lambda_: float | tuple[float, ...] | None = None
    gamma: float | tuple[float, ...] = 0.5
    screen_ratios: tuple[float, ...] = (0.3, 0.2, 0.1)
    screen_gamma: float = 0.5
    pilot_ratio: float = 0.03
    refine_rounds: int = 2
    delta: float | None = None
    delta_mode: str = "adaptive"
    delta_scope: str = "pooled"
    grid: TuningGrid = field(default_factory=TuningGrid)
    solver_tol: float = 1e-6
    cv_tol: float = 1e-4
    solver_max_iter: int = 5000
    threads: int | None = None
    backend: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "structure", _STRUCTURE_ALIASES.get(self.structure, self.structure))
        if self.K < 1:
            raise InvalidConfigError("K must be >= 1")
        if self.starts < 1:
            raise InvalidConfigError("starts must be >= 1")
        if not (self.solver_tol > 0 and self.cv_tol > 0):
            raise InvalidConfigError("solver tolerances must be positive")
        if not self.outer_tol > 0:
            raise InvalidConfigError("outer_tol must be positive")
        if self.refine_rounds < 1:
            raise InvalidConfigError("refine_rounds must be >= 1")
        if self.max_outer_iter < 1:
            raise InvalidConfigError("max_outer_iter must be >= 1")
        for name, allowed in (("loss", LOSSES), ("structure", STRUCTURES), ("tuning", TUNINGS),
                              ("delta_mode", DELTA_MODES), ("delta_scope", DELTA_SCOPES)):
            if getattr(self, name) not in allowed:
                raise InvalidConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if self.seed < 0:
            raise InvalidConfigError("seed must be non-negative")
        if self.tuning == "fixed":
            if self.lambda_ is None:
                raise InvalidConfigError("fixed tuning needs lambda_")
            for name in ("lambda_", "gamma"):
                vals = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
                if vals.size not in (1, self.K):
                    raise InvalidConfigError(f"{name} needs 1 or K values")
        lam = np.atleast_1d(np.asarray(self.lambda_ if self.lambda_ is not None else 0.0, dtype=float))
        gam = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        if np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise InvalidConfigError("lambda_ must be finite and >= 0")
        if np.any((gam < 0) | (gam > 1)):
            raise InvalidConfigError("gamma must lie in [0, 1]")
        object.__setattr__(self, "screen_ratios", tuple(float(r) for r in np.atleast_1d(self.screen_ratios)))
        r = self.screen_ratios
        if not r or not all(0 < a <= 1 for a in r) or any(b >= a for a, b in zip(r, r[1:])):
            raise InvalidConfigError("screen_ratios must be decreasing values in (0, 1]")
        if not 0 < self.pilot_ratio <= 1:
            raise InvalidConfigError("pilot_ratio must lie in (0, 1]")
        if not 0 <= self.screen_gamma <= 1:
            raise InvalidConfigError("screen_gamma must lie in [0, 1]")
        if self.delta is not None and not self.delta > 0:
            raise InvalidConfigError("delta must be positive")
        if self.threads is not None and self.threads < 1:
            raise InvalidConfigError("threads must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = asdict(self.grid)
        for key in ("lambda_", "gamma"):
            if isinstance(d[key], (tuple, list, np.ndarray)):
                d[key] = [float(x) for x in d[key]]
        return d


def _pick(values, k):
    a = np.atleast_1d(np.asarray(values, dtype=float))
    return float(a[k] if a.size > 1 else a[0])


def _stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for a (start, iteration, subgroup, ...) key."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------


def init_partition(n: int, K: int, rng) -> Partition:
    """Uniform random labels with every subgroup nonempty.

    Labels are redrawn up to a fixed number of times; if every draw leaves
    a subgroup empty, the last draw is patched by seeding each subgroup with
    one distinct randomly chosen sample.
    """
    if K < 1 or n < K:
        raise InvalidConfigError(f"cannot split n={n} samples into K={K} nonempty subgroups")
    rng = np.random.default_rng(rng)
    for _ in range(INIT_RETRIES):
        labels = rng.integers(0, K, size=n)
        if np.bincount(labels, minlength=K).min() > 0:
            return Partition(labels, K)
    labels[rng.permutation(n)[:K]] = np.arange(K)
    return Partition(labels, K)


# ---------------------------------------------------------------------------
# shared per-fit state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Phase:
    """How one run of update/assignment iterations tunes its subgroups.

    ``kind`` is ``"fixed"`` (``lambdas``/``gammas`` per subgroup) or
    ``"cv"``; ``delta`` pins the Huber threshold when set.
    """

    kind: str
    lambdas: tuple = ()
    gammas: tuple = ()
    delta: float | None = None


@dataclass
class _Sub:
    """One subgroup's model on the standardized, expanded scale."""

    v: np.ndarray
    b: float | None
    lam: float
    gamma: float
    delta: float
    step: float
    beta: np.ndarray  # recombined, standardized scale


class _Workspace:
    def __init__(self, data: Dataset, cfg: EngineConfig, cs: ClusterStructure | None):
        if cfg.K > data.n:
            raise InvalidConfigError(f"K={cfg.K} exceeds the number of samples n={data.n}")
        if cfg.structure == "singleton-lasso" or cs is None:
            cs = ClusterStructure.singletons(data.p)
        elif cs.p != data.p:
            raise InvalidStructureError(f"cluster structure is for p={cs.p}, data have p={data.p}")
        self.data, self.cfg, self.cs = data, cfg, cs
        X = data.X
        if cfg.standardize:
            center = X.mean(axis=0) if cfg.intercept else np.zeros(data.p)
            scale = np.sqrt(np.mean((X - center) ** 2, axis=0))
            scale[~(scale > 0)] = 1.0
        else:
            center, scale = np.zeros(data.p), np.ones(data.p)
        self.center, self.scale = center, scale
        self.Z = np.ascontiguousarray((X - center) / scale)
        self.Zt = duplicate_design(self.Z, cs)
        self.y = np.asarray(data.y)
        self.floor = HuberSpec.for_response(self.y)
        y_scale = MAD_FACTOR * mad(self.y)
        self.squared_delta = SQUARED_DELTA_FACTOR * (y_scale if y_scale > 0 else 1.0)
        self.opts = SolverOptions(tol=cfg.solver_tol, max_iter=cfg.solver_max_iter,
                                  intercept=cfg.intercept, backend=cfg.backend)
        self.cv_opts = SolverOptions(tol=max(cfg.cv_tol, cfg.solver_tol), max_iter=cfg.solver_max_iter,
                                     intercept=cfg.intercept, backend=cfg.backend)

    # -- conversions -------------------------------------------------------

    def to_model(self, s: _Sub) -> SubgroupModel:
        beta = s.beta / self.scale
        b = None
        if self.cfg.intercept:
            b = float(s.b - self.center @ beta)
        v = s.v / self.scale[self.cs.dup_features]
        return SubgroupModel(beta=beta, intercept=b, lambda_=s.lam, gamma=s.gamma, delta=s.delta, expanded_v=v)

    def from_model(self, m: SubgroupModel) -> _Sub:
        if m.expanded_v is None:
            raise InvalidConfigError("warm-start models need their latent decomposition")
        v = np.asarray(m.expanded_v) * self.scale[self.cs.dup_features]
        beta = recombine(v, self.cs)
        b = None
        if self.cfg.intercept:
            b = float((m.intercept or 0.0) + self.center @ np.asarray(m.beta))
        return _Sub(v, b, m.lambda_, m.gamma, m.delta, self.opts.init_step, beta)

    # -- pieces of one iteration -------------------------------------------

    def deltas(self, labels, subs, pinned=None) -> list[float]:
        cfg, K = self.cfg, self.cfg.K
        if cfg.loss == "squared":
            return [self.squared_delta] * K
        if pinned is not None:
            return [float(pinned)] * K
        if subs[0] is not None and cfg.delta_mode == "frozen":
            return [s.delta for s in subs]
        # residuals under the previous models; about each subgroup's median on the first pass
        r = np.empty(self.y.size)
        groups = [np.flatnonzero(labels == k) for k in range(K)]
        for idx, s in zip(groups, subs):
            y = self.y[idx]
            r[idx] = y - np.median(y) if s is None else y - self.Z[idx] @ s.beta - (s.b or 0.0)
        if cfg.delta_scope == "pooled":
            return [compute_delta(r, self.floor)] * K
        return [compute_delta(r[idx], self.floor) for idx in groups]

    def phases(self) -> tuple[list[_Phase], _Phase | None]:
        """Phases every start runs through, and the continuation of the best start (if any)."""
        cfg, K = self.cfg, self.cfg.K
        lasso = cfg.structure == "singleton-lasso"
        if cfg.tuning == "fixed":
            lams = tuple(_pick(cfg.lambda_, k) for k in range(K))
            gams = tuple(1.0 if lasso else _pick(cfg.gamma, k) for k in range(K))
            return [_Phase("fixed", lams, gams, cfg.delta)], None
        cv = _Phase("cv", delta=cfg.delta)
        if cfg.tuning == "cv":
            return [cv], None
        gamma = 1.0 if lasso else cfg.screen_gamma
        delta = self.pilot_delta(gamma)
        lm = lambda_max(self.Zt, self.y, gamma, delta, self.cs, cfg.intercept, self.opts, certify=False)
        return [_Phase("fixed", (r * lm,) * K, (gamma,) * K, delta) for r in cfg.screen_ratios], cv

    def pilot_delta(self, gamma: float) -> float:
        """Common threshold for screening, from a lightly penalized pooled fit."""
        cfg = self.cfg
        if cfg.delta is not None:
            return float(cfg.delta)
        if cfg.loss == "squared":
            return self.squared_delta
        r = self.y - np.median(self.y) if cfg.intercept else self.y
        d0 = compute_delta(r, self.floor)
        lm = lambda_max(self.Zt, self.y, gamma, d0, self.cs, cfg.intercept, self.opts, certify=False)
        if lm == 0.0:
            return d0
        sol = fit_penalized(self.Zt, self.y, cfg.pilot_ratio * lm, gamma, d0, self.cs, self.opts)
        return compute_delta(self.y - self.Zt @ sol.expanded_v - (sol.intercept or 0.0), self.floor)

    def tune(self, phase: _Phase, k, Xt, y, delta, prev: _Sub | None, key) -> tuple[float, float]:
        if phase.kind == "fixed":
            return phase.lambdas[k], phase.gammas[k]
        cfg = self.cfg
        grid = cfg.grid
        if y.size < 2 * grid.folds:
            # too small for CV: keep the previous pair, or a default on the first pass
            if prev is not None:
                return prev.lam, prev.gamma
            gamma = 1.0 if cfg.structure == "singleton-lasso" else 0.5
            lm = lambda_max(Xt, y, gamma, delta, self.cs, cfg.intercept, self.opts, certify=False)
            return 0.1 * lm, gamma
        res = cv_path(Xt, y, self.cs, delta, grid, _stream(cfg.seed, *key), cfg.intercept, self.cv_opts)
        return res.lambda_, res.gamma

    def update(self, labels, subs, phase: _Phase, key) -> list[_Sub]:
        out = []
        deltas = self.deltas(labels, subs, phase.delta)
        for k in range(self.cfg.K):
            idx = np.flatnonzero(labels == k)
            prev = subs[k]
            delta = deltas[k]
            try:
                Xt, y = self.Zt[idx], self.y[idx]
                lam, gamma = self.tune(phase, k, Xt, y, delta, prev, key + (k,))
                warm = {} if prev is None else {"v0": prev.v, "intercept0": prev.b, "step0": prev.step}
                sol = fit_penalized(Xt, y, lam, gamma, delta, self.cs, self.opts, **warm)
            except NumericalFailure as e:
                e.subgroup = k
                raise
            if not sol.converged:
                log.debug("subgroup %d solve stopped at max_iter (kkt %.3g)", k, sol.kkt_residual)
            out.append(_Sub(sol.expanded_v, sol.intercept, lam, gamma, delta, sol.step, sol.beta))
        return out

    def losses(self, subs) -> np.ndarray:
        L = np.empty((self.data.n, len(subs)))
        for k, s in enumerate(subs):
            r = self.y - self.Z @ s.beta - (s.b or 0.0)
            a = np.abs(r)
            L[:, k] = np.where(a <= s.delta, 0.5 * r * r, s.delta * a - 0.5 * s.delta * s.delta)
        return L

    def penalty(self, subs) -> float:
        return sum(sgl_penalty(s.v, self.cs, s.lam, s.gamma) for s in subs)

    def objective(self, labels, subs, L=None) -> float:
        L = self.losses(subs) if L is None else L
        return float(L[np.arange(labels.size), labels].sum()) + self.penalty(subs)


def _repair(labels: np.ndarray, L: np.ndarray, K: int) -> np.ndarray:
    """Refill empty subgroups with the worst-fitted sample of a subgroup that can spare one."""
    labels = labels.copy()
    own = L[np.arange(labels.size), labels]
    for k in range(K):
        counts = np.bincount(labels, minlength=K)
        if counts[k] > 0:
            continue
        donors = counts[labels] >= 2
        cand = np.where(donors, own, -np.inf)
        i = int(np.argmax(cand))
        log.debug("subgroup %d emptied; moving sample %d into it", k, i)
        labels[i] = k
        own[i] = L[i, k]
    return labels


def _assign(L: np.ndarray) -> np.ndarray:
    return _repair(np.argmin(L, axis=1), L, L.shape[1])


# ---------------------------------------------------------------------------
# one start
# ---------------------------------------------------------------------------


@dataclass
class _Outcome:
    labels: np.ndarray
    subs: list
    objective: float
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)


def _same_tuning(a, b, rtol=1e-9) -> bool:
    if any(s is None for s in a):
        return False
    return all(x.lam == y.lam and x.gamma == y.gamma and abs(x.delta - y.delta) <= rtol * y.delta
               for x, y in zip(a, b))


def _run(ws: _Workspace, labels, subs, phase: _Phase, start: int) -> _Outcome:
    cfg = ws.cfg
    labels = np.asarray(labels)
    subs = list(subs) if subs is not None else [None] * cfg.K
    trace: list[float] = []
    prev_obj = None
    prev_subs = subs
    static = phase.kind == "fixed" and (phase.delta is not None or cfg.loss == "squared")
    converged = False
    it = 0
    for it in range(1, cfg.max_outer_iter + 1):
        subs = ws.update(labels, subs, phase, (start,))
        after_update = ws.objective(labels, subs)
        L = ws.losses(subs)
        new_labels = _assign(L)
        obj = ws.objective(new_labels, subs, L)
        for val in (after_update, obj):
            if trace and val > trace[-1] + 1e-8 * abs(trace[-1]):
                log.debug("start %d iteration %d: objective rose %.6g -> %.6g", start, it, trace[-1], val)
            trace.append(val)
        # an unchanged partition is a fixed point only if the next update would see the same tuning
        settled = np.array_equal(new_labels, labels) and (static or _same_tuning(prev_subs, subs))
        stop = settled or (prev_obj is not None and abs(prev_obj - obj) < cfg.outer_tol)
        labels, prev_obj, prev_subs = new_labels, obj, subs
        if stop:
            converged = True
            break
    return _Outcome(labels, subs, prev_obj, it, converged, trace)


def _chain(ws: _Workspace, labels, phases, start: int) -> _Outcome:
    subs, iters, trace = None, 0, []
    for phase in phases:
        out = _run(ws, labels, subs, phase, start)
        labels, subs = out.labels, out.subs
        iters += out.iterations
        trace += out.trace
    out.iterations, out.trace = iters, trace
    return out


def _start(ws: _Workspace, phases, r: int):
    init = init_partition(ws.data.n, ws.cfg.K, _stream(ws.cfg.seed, r)).labels
    try:
        return init, _chain(ws, init, phases, r), None
    except (HetregError, ArithmeticError, np.linalg.LinAlgError) as e:
        return init, None, e


def run_single_start(data: Dataset, cfg: EngineConfig, cs: ClusterStructure | None, start: int = 0,
                     trace: bool = False):
    """Run start number ``start`` of a fit (without the continuation of ``cv-refine``).

    Returns ``(objective, partition, models, iterations)``, plus the
    objective after every update and every assignment when ``trace`` is
    set. The initial partition is drawn from a generator derived from
    ``(cfg.seed, start)``.
    """
    ws = _Workspace(data, cfg, cs)
    phases, _ = ws.phases()
    init = init_partition(data.n, cfg.K, _stream(cfg.seed, start)).labels
    out = _chain(ws, init, phases, start)
    res = (out.objective, Partition(out.labels, cfg.K), [ws.to_model(s) for s in out.subs], out.iterations)
    return res + (list(out.trace),) if trace else res


def run_from_partition(data: Dataset, cfg: EngineConfig, cs: ClusterStructure | None, labels, start: int = 0):
    """Like :func:`run_single_start`, from a given initial partition."""
    ws = _Workspace(data, cfg, cs)
    phases, _ = ws.phases()
    labels = Partition(np.asarray(labels), cfg.K).labels
    if np.bincount(labels, minlength=cfg.K).min() == 0:
        raise InvalidConfigError("every initial subgroup must be nonempty")
    out = _chain(ws, labels, phases, start)
    return out.objective, Partition(out.labels, cfg.K), [ws.to_model(s) for s in out.subs], out.iterations


def update_step(
    data: Dataset,
    part: Partition,
    cfg: EngineConfig,
    cs: ClusterStructure | None,
    previous=None,
    key: tuple[int, ...] = (0,),
) -> list[SubgroupModel]:
    """Fit every subgroup of ``part`` once.

    ``previous`` (a list of models) provides warm starts and, in adaptive
    mode, the residuals the Huber thresholds are computed from. ``key`` seeds
    the CV folds.
    """
    if part.K != cfg.K:
        raise InvalidConfigError("partition and config disagree on K")
    if part.sizes().min() == 0:
        raise InvalidConfigError("every subgroup must be nonempty")
    ws = _Workspace(data, cfg, cs)
    subs = [None] * cfg.K if previous is None else [ws.from_model(m) for m in previous]
    first, second = ws.phases()
    return [ws.to_model(s) for s in ws.update(part.labels, subs, second or first[-1], key)]


def assignment_step(data: Dataset, models, repair: bool = True) -> Partition:
    """Label every sample with its smallest-loss subgroup (smallest index on ties).

    With ``repair`` (as inside :func:`fit`), subgroups left empty are then
    refilled with the worst-fitted sample of a subgroup that can spare one.
    """
    L = subgroup_losses(data, models)
    labels = _assign(L) if repair else np.argmin(L, axis=1)
    return Partition(labels, len(models))


# ---------------------------------------------------------------------------
# multi-start fit
# ---------------------------------------------------------------------------


def _resolve_threads(cfg: EngineConfig) -> int:
    return cfg.threads or os.cpu_count() or 1


def fit(data: Dataset, cfg: EngineConfig, cs: ClusterStructure | None = None) -> FitResult:
    """Fit the heterogeneous model from ``cfg.starts`` random partitions and keep the best.

    With ``K == 1`` every start is the same partition, so a single start is
    run.
    """
    ws = _Workspace(data, cfg, cs)
    phases, refine = ws.phases()
    R = cfg.starts if cfg.K > 1 else 1
    threads = min(_resolve_threads(cfg), R)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda r: _start(ws, phases, r), range(R)))
    else:
        results = [_start(ws, phases, r) for r in range(R)]

    records, best, best_r = [], None, -1
    for r, (init, out, err) in enumerate(results):
        if err is not None:
            records.append(StartRecord(r, init, 0, float("nan"), False, f"{type(err).__name__}: {err}"))
            continue
        records.append(StartRecord(r, init, out.iterations, out.objective, out.converged))
        if best is None or out.objective < best.objective:
            best, best_r = out, r
    if best is None:
        raise AllStartsFailed([(r, rec.error) for r, rec in enumerate(records)])

    config = cfg.to_dict()
    config["best_start"] = best_r
    config["structure_L"] = ws.cs.L
    if refine is not None:
        config["screening"] = {"lambdas": [ph.lambdas[0] for ph in phases], "gamma": phases[0].gammas[0],
                               "delta": phases[0].delta, "objective": best.objective}
        iters = 0
        for _ in range(cfg.refine_rounds):
            # tune by CV once on the screened partition, then iterate with that tuning held fixed
            subs = ws.update(best.labels, best.subs, refine, (R,))
            held = _Phase("fixed", tuple(s.lam for s in subs), tuple(s.gamma for s in subs), refine.delta)
            prev = best.labels
            best = _run(ws, best.labels, subs, held, R)
            iters += best.iterations
            if np.array_equal(best.labels, prev):
                break
        config["refine_iterations"] = iters
        config["refine_converged"] = best.converged

    return FitResult(
        partition=Partition(best.labels, cfg.K),
        models=tuple(ws.to_model(s) for s in best.subs),
        objective=float(best.objective),
        starts=tuple(records),
        config=config,
        x_scale=ws.scale.copy() if cfg.standardize else None,
        trace=tuple(best.trace),
    )


def predict(models, X, y=None, labels=None):
    """Predict subgroup labels and responses for new samples.

    The label of a sample is the subgroup whose model gives its observed
    response the smallest Huber loss, so ``y`` is required unless ``labels``
    are supplied. Returns ``(labels, yhat)``.
    """
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    models = list(models)
    if labels is not None:
        lab = np.atleast_1d(np.asarray(labels, dtype=np.int64))
        if lab.size != X.shape[0] or lab.min() < 0 or lab.max() >= len(models):
            raise InvalidConfigError("labels must give a valid subgroup for every sample")
    elif y is None:
        raise UnsupportedPrediction(
            "subgroup membership is decided by the Huber loss of the observed response; "
            "pass y, or pass labels explicitly"
        )
    else:
        yv = np.atleast_1d(np.asarray(y, dtype=float))
        if yv.size != X.shape[0]:
            raise InvalidConfigError("y must have one entry per row of X")
        L = subgroup_losses(Dataset(yv, X), models)
        lab = np.argmin(L, axis=1)
    preds = np.column_stack([m.predict(X) for m in models])
    yhat = preds[np.arange(X.shape[0]), lab]
    if single:
        return int(lab[0]), float(yhat[0])
    return lab, yhat
