"""File formats: data CSV, cluster lists, fit/truth JSON, run manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .core import ClusterStructure, Dataset, FitResult, Partition, SubgroupModel
from .errors import InvalidInputError, InvalidStructureError

RESPONSE = "y"
ID = "id"


@dataclass(frozen=True)
class Table:
    """A parsed data CSV. ``y`` is ``None`` when the file has no response column."""

    X: np.ndarray
    y: np.ndarray | None
    ids: list[str]
    features: list[str]

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def dataset(self) -> Dataset:
        if self.y is None:
            raise InvalidInputError(f"no {RESPONSE!r} column")
        return Dataset(self.y, self.X)


def read_table(path) -> Table:
    """Read a headed CSV: column ``y`` is the response, ``id`` is carried verbatim,
    every other column is a numeric feature (file order kept).

    Without an ``id`` column the samples are numbered 1..n in row order.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidInputError(f"{path}: empty file (a header row is required)") from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise InvalidInputError(f"{path}:1: duplicate column names")
        y_col = header.index(RESPONSE) if RESPONSE in header else None
        id_col = header.index(ID) if ID in header else None
        feat_cols = [j for j, h in enumerate(header) if j not in (y_col, id_col)]
        rows, ys, ids = [], [], []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InvalidInputError(f"{path}:{line_no}: expected {len(header)} fields, found {len(row)}")
            try:
                rows.append([float(row[j]) for j in feat_cols])
                if y_col is not None:
                    ys.append(float(row[y_col]))
            except ValueError as e:
                raise InvalidInputError(f"{path}:{line_no}: {e}") from None
            ids.append(row[id_col].strip() if id_col is not None else str(len(ids) + 1))
    if not rows:
        raise InvalidInputError(f"{path}: no data rows")
    X = np.array(rows, dtype=float).reshape(len(rows), len(feat_cols))
    if not np.all(np.isfinite(X)) or (ys and not np.all(np.isfinite(ys))):
        bad = int(np.flatnonzero(~np.all(np.isfinite(np.column_stack([X] + ([np.array(ys)] if ys else []))),
                                         axis=1))[0])
        raise InvalidInputError(f"{path}: non-finite value in data row {bad + 1}")
    y = np.array(ys, dtype=float) if y_col is not None else None
    return Table(X, y, ids, [header[j] for j in feat_cols])


def write_table(path, X, y=None, ids=None, features=None) -> None:
    X = np.asarray(X, dtype=float)
    features = features or [f"x{j + 1}" for j in range(X.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(([ID] if ids is not None else []) + ([RESPONSE] if y is not None else []) + list(features))
        for i in range(X.shape[0]):
            lead = ([ids[i]] if ids is not None else []) + ([repr(float(y[i]))] if y is not None else [])
            w.writerow(lead + [repr(float(v)) for v in X[i]])


_CLUSTER_LINE = re.compile(r"^\s*([^:]+?)\s*:\s*(.*?)\s*$")


def read_clusters(path, p: int) -> tuple[ClusterStructure, list[str]]:
    """Parse ``name: j1,j2,...`` lines (1-based feature indices).

    Blank lines and ``#`` comments are skipped. Returns the structure and
    the cluster names.
    """
    path = Path(path)
    clusters, names = [], []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            m = _CLUSTER_LINE.match(text)
            if m is None:
                raise InvalidStructureError(f"{path}:{line_no}: expected 'name: j1,j2,...'")
            try:
                idx = [int(tok) for tok in m.group(2).replace(" ", "").split(",") if tok]
            except ValueError as e:
                raise InvalidStructureError(f"{path}:{line_no}: {e}") from None
            if not idx:
                raise InvalidStructureError(f"{path}:{line_no}: cluster {m.group(1)!r} is empty")
            bad = [j for j in idx if not 1 <= j <= p]
            if bad:
                raise InvalidStructureError(
                    f"{path}:{line_no}: cluster {m.group(1)!r} has index {bad[0]} outside 1..{p}"
                )
            names.append(m.group(1))
            clusters.append([j - 1 for j in idx])
    if not clusters:
        raise InvalidStructureError(f"{path}: no clusters")
    return ClusterStructure.from_clusters(clusters, p), names


def write_clusters(path, cs: ClusterStructure, names=None) -> None:
    lists = cs.to_lists(one_based=True)
    names = names or [f"C{l + 1}" for l in range(len(lists))]
    with open(path, "w", encoding="utf-8") as fh:
        for name, members in zip(names, lists):
            fh.write(f"{name}: {','.join(str(j) for j in members)}\n")


# ---------------------------------------------------------------------------
# JSON documents
# ---------------------------------------------------------------------------


def _sparse(v) -> list[list]:
    v = np.asarray(v, dtype=float)
    return [[int(j) + 1, float(v[j])] for j in np.flatnonzero(v)]


def _dense(pairs, size: int) -> np.ndarray:
    out = np.zeros(size)
    for j, val in pairs:
        if not 1 <= int(j) <= size:
            raise InvalidInputError(f"coefficient index {j} outside 1..{size}")
        out[int(j) - 1] = float(val)
    return out


def _num(x):
    """JSON-safe float (``NaN`` becomes ``null``)."""
    x = float(x)
    return x if math.isfinite(x) else None


def fit_document(result: FitResult, cs: ClusterStructure, feature_names=None) -> dict:
    """Everything needed to predict with, and re-verify, a fit.

    Coefficients are stored sparsely as 1-based ``(index, value)`` pairs on
    the original covariate scale; ``latent`` holds the per-cluster
    decomposition over the duplicated features.
    """
    sizes = result.partition.sizes()
    subgroups = []
    for k, m in enumerate(result.models):
        subgroups.append({
            "subgroup": k + 1,
            "size": int(sizes[k]),
            "lambda": float(m.lambda_),
            "gamma": float(m.gamma),
            "delta": float(m.delta),
            "intercept": None if m.intercept is None else float(m.intercept),
            "coefficients": _sparse(m.beta),
            "latent": _sparse(m.expanded_v) if m.expanded_v is not None else None,
        })
    starts = [
        {"start": s.seed, "iterations": s.iterations, "objective": _num(s.objective),
         "converged": s.converged, "error": s.error}
        for s in result.starts
    ]
    return {
        "K": result.K,
        "p": int(result.models[0].beta.size),
        "objective": float(result.objective),
        "x_scale": None if result.x_scale is None else [float(s) for s in result.x_scale],
        "clusters": cs.to_lists(one_based=True),
        "features": list(feature_names) if feature_names is not None else None,
        "subgroups": subgroups,
        "starts": starts,
        "config": _jsonable(result.config),
    }


@dataclass(frozen=True)
class StoredFit:
    K: int
    p: int
    models: tuple[SubgroupModel, ...]
    cs: ClusterStructure
    objective: float
    x_scale: np.ndarray | None
    doc: dict


def load_fit(path) -> StoredFit:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        K, p = int(doc["K"]), int(doc["p"])
        cs = ClusterStructure.from_clusters([[j - 1 for j in c] for c in doc["clusters"]], p)
        models = []
        for g in doc["subgroups"]:
            latent = g.get("latent")
            models.append(SubgroupModel(
                beta=_dense(g["coefficients"], p),
                intercept=g["intercept"],
                lambda_=g["lambda"],
                gamma=g["gamma"],
                delta=g["delta"],
                expanded_v=None if latent is None else _dense(latent, cs.expanded_dim),
            ))
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidInputError(f"{path}: not a fit document ({e})") from None
    if len(models) != K:
        raise InvalidInputError(f"{path}: K={K} but {len(models)} subgroups stored")
    scale = doc.get("x_scale")
    return StoredFit(K, p, tuple(models), cs, float(doc["objective"]),
                     None if scale is None else np.asarray(scale, dtype=float), doc)


def truth_document(partition: Partition, betas) -> dict:
    return {
        "K": int(np.asarray(betas).shape[0]),
        "labels": [int(g) + 1 for g in partition.labels],
        "betas": [[float(b) for b in row] for row in np.asarray(betas)],
    }


def load_truth(path):
    from .simulate import GroundTruth

    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        betas = np.asarray(doc["betas"], dtype=float)
        labels = np.asarray(doc["labels"], dtype=np.int64) - 1
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidInputError(f"{path}: not a truth document ({e})") from None
    return GroundTruth(Partition(labels, betas.shape[0]), betas)


def write_labels(path, ids, labels) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "subgroup"])
        for i, g in zip(ids, labels):
            w.writerow([i, int(g) + 1])


def read_labels(path) -> tuple[list[str], np.ndarray]:
    """Inverse of :func:`write_labels`; returns 0-based labels."""
    ids, labels = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["sample_id", "subgroup"]:
            raise InvalidInputError(f"{path}:1: expected header 'sample_id,subgroup'")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                ids.append(row[0])
                labels.append(int(row[1]) - 1)
            except (IndexError, ValueError) as e:
                raise InvalidInputError(f"{path}:{line_no}: {e}") from None
    lab = np.asarray(labels, dtype=np.int64)
    if lab.size and lab.min() < 0:
        raise InvalidInputError(f"{path}: subgroup labels start at 1")
    return ids, lab


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n", encoding="utf-8")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    return obj


def digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest(command: str, config: dict, seed, inputs: dict, wall_time: float, outputs=()) -> dict:
    """Run record written next to every command's outputs."""
    return {
        "command": command,
        "config": _jsonable(config),
        "seed": seed,
        "inputs": {name: {"path": str(p), "sha256": digest(p)} for name, p in inputs.items() if p is not None},
        "outputs": sorted(str(o) for o in outputs),
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "wall_time_s": round(float(wall_time), 3),
    }
