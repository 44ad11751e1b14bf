"""Domain types shared by every module, plus the Huber loss primitives.

Indices are 0-based throughout the Python API: features are ``0..p-1`` and
subgroup labels are ``0..K-1``. The CLI converts to and from the 1-based
conventions of its file formats.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import InvalidInputError, InvalidParameterError, InvalidStructureError

MAD_FACTOR = 1.4826
HUBER_TUNING = 1.345


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


# ---------------------------------------------------------------------------
# Huber loss
# ---------------------------------------------------------------------------


def _check_delta(delta):
    if not delta > 0:
        raise InvalidParameterError(f"Huber threshold must be positive, got {delta!r}")


def huber_value(t, delta):
    """Huber loss ``rho_delta(t)``; accepts scalars or arrays."""
    _check_delta(delta)
    a = np.abs(t)
    out = np.where(a <= delta, 0.5 * np.square(t), delta * a - 0.5 * delta * delta)
    return float(out) if np.ndim(out) == 0 else out


def huber_grad(t, delta):
    """Derivative of :func:`huber_value` (the clipped residual)."""
    _check_delta(delta)
    out = np.clip(t, -delta, delta)
    return float(out) if np.ndim(out) == 0 else out


def mad(x) -> float:
    """Raw median absolute deviation about the median (no consistency factor)."""
    x = np.asarray(x, dtype=float)
    return float(np.median(np.abs(x - np.median(x))))


@dataclass(frozen=True)
class HuberSpec:
    """Parameters of the data-driven Huber threshold rule.

    ``delta`` is optional and only records a value already computed with
    this spec.
    """

    delta_floor: float = 1e-6
    mad_factor: float = MAD_FACTOR
    tuning_constant: float = HUBER_TUNING
    delta: float | None = None

    def __post_init__(self):
        if not self.delta_floor > 0:
            raise InvalidParameterError("delta_floor must be positive")
        if self.delta is not None and self.delta < self.delta_floor:
            raise InvalidParameterError("delta must be >= delta_floor")

    @classmethod
    def for_response(cls, y) -> "HuberSpec":
        """Spec whose floor is ``1e-6`` times the MAD of ``y`` (or of 1.0)."""
        scale = mad(y)
        if not scale > 0:
            scale = 1.0
        return cls(delta_floor=1e-6 * scale)


def compute_delta(residuals, spec: HuberSpec | None = None) -> float:
    """``max(floor, 1.345 * 1.4826 * MAD(residuals))``."""
    r = np.asarray(residuals, dtype=float).ravel()
    if r.size == 0:
        raise InvalidInputError("cannot compute a Huber threshold from no residuals")
    if not np.all(np.isfinite(r)):
        raise InvalidInputError("residuals must be finite")
    spec = spec or HuberSpec()
    d = spec.tuning_constant * spec.mad_factor * mad(r)
    return max(spec.delta_floor, d)


# ---------------------------------------------------------------------------
# Data containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    y: np.ndarray
    X: np.ndarray
    feature_names: tuple[str, ...] | None = None
    ids: tuple[str, ...] | None = None

    def __post_init__(self):
        y = np.array(self.y, dtype=float).ravel()
        X = np.array(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2:
            raise InvalidInputError("X must be a 2-D matrix")
        if y.size < 1 or X.shape[1] < 1:
            raise InvalidInputError("need n >= 1 samples and p >= 1 features")
        if X.shape[0] != y.size:
            raise InvalidInputError(f"X has {X.shape[0]} rows but y has {y.size} entries")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise InvalidInputError("data contain NaN or Inf")
        if self.feature_names is not None and len(self.feature_names) != X.shape[1]:
            raise InvalidInputError("feature_names length must equal p")
        if self.ids is not None and len(self.ids) != y.size:
            raise InvalidInputError("ids length must equal n")
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "X", _frozen(np.ascontiguousarray(X)))
        if self.feature_names is not None:
            object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if self.ids is not None:
            object.__setattr__(self, "ids", tuple(self.ids))

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        ids = None if self.ids is None else tuple(np.asarray(self.ids, dtype=object)[idx])
        return Dataset(self.y[idx], self.X[idx], self.feature_names, ids)


@dataclass(frozen=True)
class ClusterStructure:
    """Possibly overlapping feature clusters and their duplication map.

    Use :meth:`from_clusters` to build one; it sorts and deduplicates each
    cluster and wraps uncovered features in singleton clusters.
    """

    p: int
    clusters: tuple[tuple[int, ...], ...]
    n_wrapped: int = 0
    sizes: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)
    block_ptr: np.ndarray = field(init=False, repr=False)
    dup_map: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.p < 1:
            raise InvalidStructureError("p must be >= 1")
        if not self.clusters:
            raise InvalidStructureError("at least one cluster is required")
        covered = np.zeros(self.p, dtype=bool)
        for l, c in enumerate(self.clusters):
            if len(c) == 0:
                raise InvalidStructureError(f"cluster {l} is empty")
            if list(c) != sorted(set(c)):
                raise InvalidStructureError(f"cluster {l} is not sorted and deduplicated")
            if c[0] < 0 or c[-1] >= self.p:
                raise InvalidStructureError(f"cluster {l} has an index outside 0..{self.p - 1}")
            covered[list(c)] = True
        if not covered.all():
            raise InvalidStructureError("every feature must belong to at least one cluster")
        sizes = np.array([len(c) for c in self.clusters], dtype=np.int64)
        ptr = np.zeros(len(sizes) + 1, dtype=np.int64)
        np.cumsum(sizes, out=ptr[1:])
        dup = np.array([(l, j) for l, c in enumerate(self.clusters) for j in c], dtype=np.int64)
        object.__setattr__(self, "sizes", _frozen(sizes))
        object.__setattr__(self, "weights", _frozen(np.sqrt(sizes.astype(float))))
        object.__setattr__(self, "block_ptr", _frozen(ptr))
        object.__setattr__(self, "dup_map", _frozen(dup))

    @classmethod
    def from_clusters(cls, clusters: Sequence[Sequence[int]], p: int) -> "ClusterStructure":
        cleaned = []
        for l, c in enumerate(clusters):
            c = sorted({int(j) for j in c})
            if not c:
                raise InvalidStructureError(f"cluster {l} is empty")
            if c[0] < 0 or c[-1] >= p:
                raise InvalidStructureError(f"cluster {l} has an index outside 0..{p - 1}")
            cleaned.append(tuple(c))
        covered = set().union(*cleaned) if cleaned else set()
        extra = [(j,) for j in range(p) if j not in covered]
        return cls(p=p, clusters=tuple(cleaned) + tuple(extra), n_wrapped=len(extra))

    @classmethod
    def singletons(cls, p: int) -> "ClusterStructure":
        return cls(p=p, clusters=tuple((j,) for j in range(p)))

    @property
    def L(self) -> int:
        return len(self.clusters)

    @property
    def expanded_dim(self) -> int:
        return int(self.block_ptr[-1])

    @property
    def dup_features(self) -> np.ndarray:
        """Original feature index of every expanded coordinate."""
        return self.dup_map[:, 1]

    @property
    def is_singleton(self) -> bool:
        return bool(np.all(self.sizes == 1))

    def to_lists(self, one_based: bool = False) -> list[list[int]]:
        off = 1 if one_based else 0
        return [[j + off for j in c] for c in self.clusters]


@dataclass(frozen=True)
class Partition:
    labels: np.ndarray
    K: int

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.int64).ravel()
        if self.K < 1:
            raise InvalidInputError("K must be >= 1")
        if labels.size and (labels.min() < 0 or labels.max() >= self.K):
            raise InvalidInputError(f"labels must lie in 0..{self.K - 1}")
        object.__setattr__(self, "labels", _frozen(labels))

    @property
    def n(self) -> int:
        return self.labels.size

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.K)

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels == k)

    def __eq__(self, other):
        if not isinstance(other, Partition):
            return NotImplemented
        return self.K == other.K and np.array_equal(self.labels, other.labels)

    __hash__ = None


@dataclass(frozen=True)
class SubgroupModel:
    """Fitted coefficients of one subgroup.

    ``expanded_v`` holds the latent per-cluster decomposition on the original
    covariate scale; summing duplicates of each feature gives ``beta``.
    """

    beta: np.ndarray
    intercept: float | None
    lambda_: float
    gamma: float
    delta: float
    expanded_v: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "beta", _frozen(np.array(self.beta, dtype=float)))
        if self.expanded_v is not None:
            object.__setattr__(self, "expanded_v", _frozen(np.array(self.expanded_v, dtype=float)))
        if not 0.0 <= self.gamma <= 1.0:
            raise InvalidParameterError("gamma must lie in [0, 1]")
        if self.lambda_ < 0:
            raise InvalidParameterError("lambda must be non-negative")
        _check_delta(self.delta)

    def predict(self, X) -> np.ndarray:
        out = np.asarray(X, dtype=float) @ self.beta
        if self.intercept is not None:
            out = out + self.intercept
        return out

    @property
    def support(self) -> np.ndarray:
        return self.beta != 0


@dataclass(frozen=True)
class StartRecord:
    seed: int
    initial_labels: np.ndarray
    iterations: int
    objective: float
    converged: bool
    error: str | None = None


@dataclass(frozen=True)
class FitResult:
    partition: Partition
    models: tuple[SubgroupModel, ...]
    objective: float
    starts: tuple[StartRecord, ...]
    config: dict[str, Any]
    x_scale: np.ndarray | None = None
    trace: tuple[float, ...] = ()

    @property
    def K(self) -> int:
        return self.partition.K

    @property
    def betas(self) -> np.ndarray:
        return np.vstack([m.beta for m in self.models])


# ---------------------------------------------------------------------------
# Objective of the heterogeneous model
# ---------------------------------------------------------------------------


def sgl_penalty(v, cs: ClusterStructure, lambda_: float, gamma: float) -> float:
    """``lambda * (gamma * |v|_1 + (1 - gamma) * sum_l w_l |v_l|_2)`` on the expanded space."""
    v = np.asarray(v, dtype=float)
    if v.size != cs.expanded_dim:
        raise InvalidInputError("expanded vector length does not match the cluster structure")
    if lambda_ == 0:
        return 0.0
    sq = np.add.reduceat(v * v, cs.block_ptr[:-1])
    group = float(np.dot(cs.weights, np.sqrt(sq)))
    return float(lambda_ * (gamma * np.abs(v).sum() + (1.0 - gamma) * group))


def model_penalty(model: SubgroupModel, cs: ClusterStructure, x_scale=None) -> float:
    if model.expanded_v is None:
        raise InvalidInputError("penalty needs the latent decomposition of the model")
    v = model.expanded_v
    if x_scale is not None:
        v = v * np.asarray(x_scale)[cs.dup_features]
    return sgl_penalty(v, cs, model.lambda_, model.gamma)


def subgroup_losses(data: Dataset, models: Sequence[SubgroupModel]) -> np.ndarray:
    """n x K matrix of Huber losses of every sample under every subgroup model."""
    out = np.empty((data.n, len(models)))
    for k, m in enumerate(models):
        out[:, k] = huber_value(data.y - m.predict(data.X), m.delta)
    return out


def penalized_objective(
    data: Dataset,
    partition: Partition,
    models: Sequence[SubgroupModel],
    cs: ClusterStructure,
    x_scale=None,
) -> float:
    """Sum of within-subgroup Huber losses plus every subgroup's penalty.

    ``x_scale`` is the column scale the penalty was applied on when the
    engine standardized covariates.
    """
    if len(models) != partition.K:
        raise InvalidInputError("need one model per subgroup")
    total = 0.0
    for k, m in enumerate(models):
        idx = partition.members(k)
        if idx.size:
            r = data.y[idx] - m.predict(data.X[idx])
            total += float(np.sum(huber_value(r, m.delta)))
        total += model_penalty(m, cs, x_scale)
    return total
