"""Command-line interface: ``hetreg {fit,select-k,simulate,evaluate,predict}``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .core import Partition
from .engine import EngineConfig, fit, predict
from .errors import (
    AllStartsFailed,
    HetregError,
    InvalidConfigError,
    InvalidParameterError,
    NumericalFailure,
)
from .metrics import ari, identification_report, nmi, pmre, rmse, stability
from .selection import TuningGrid, select_K
from .simulate import BALANCES, ERRORS, SCENARIOS, ScenarioSpec, gen_dataset, scenario_clusters

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
THREADS_ENV = "HETREG_THREADS"

log = logging.getLogger("hetreg")


class UsageError(HetregError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _threads(args) -> int | None:
    if args.threads is not None:
        return args.threads
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            value = int(env)
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be a positive integer, got {env!r}") from None
        if value < 1:
            raise UsageError(f"{THREADS_ENV} must be a positive integer, got {env!r}")
        return value
    return None


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# fit / select-k
# ---------------------------------------------------------------------------


def _engine_config(args, K: int) -> EngineConfig:
    grid = TuningGrid(folds=args.folds, n_lambdas=args.n_lambdas, rule=args.cv_rule)
    lam = None
    if args.lambda_ is not None:
        lam = args.lambda_[0] if len(args.lambda_) == 1 else tuple(args.lambda_)
    gamma = args.gamma[0] if len(args.gamma) == 1 else tuple(args.gamma)
    try:
        return EngineConfig(
            K=K, starts=args.starts, outer_tol=args.tol, max_outer_iter=args.max_iter, loss=args.loss,
            structure=args.structure, seed=args.seed, standardize=args.standardize, intercept=args.intercept,
            tuning=args.tuning, lambda_=lam, gamma=gamma, grid=grid, threads=_threads(args),
        )
    except (InvalidConfigError, InvalidParameterError) as e:
        raise UsageError(str(e)) from None


def _load_inputs(args):
    table = io.read_table(args.data)
    data = table.dataset()
    cs, names = (None, None)
    if args.clusters is not None:
        cs, names = io.read_clusters(args.clusters, data.p)
    return table, data, cs


def _write_fit(out: Path, result, table, cs) -> list[str]:
    cs_used = cs if cs is not None and result.config["structure"] == "overlapping-clusters" else None
    if cs_used is None:
        from .core import ClusterStructure

        cs_used = ClusterStructure.singletons(table.X.shape[1])
    doc = io.fit_document(result, cs_used, table.features)
    doc["config"].pop("threads", None)
    io.write_json(out / "fit.json", doc)
    io.write_labels(out / "labels.csv", table.ids, result.partition.labels)
    return ["fit.json", "labels.csv"]


def cmd_fit(args) -> int:
    t0 = time.perf_counter()
    if args.k is not None and (args.k_min is not None or args.k_max is not None):
        raise UsageError("give either --k or --k-min/--k-max")
    if args.k is None and args.k_min is None and args.k_max is None:
        raise UsageError("fit needs --k (or --k-min/--k-max to choose K by BIC)")
    if args.k is None:
        return cmd_select_k(args)
    table, data, cs = _load_inputs(args)
    cfg = _engine_config(args, args.k)
    result = fit(data, cfg, cs)
    out = _out_dir(args.out)
    written = _write_fit(out, result, table, cs)
    io.write_json(out / "manifest.json", io.manifest(
        "fit", cfg.to_dict(), args.seed, {"data": args.data, "clusters": args.clusters},
        time.perf_counter() - t0, written))
    print(f"K={result.K} objective={result.objective:.6g} sizes={result.partition.sizes().tolist()}")
    return EXIT_OK


def cmd_select_k(args) -> int:
    t0 = time.perf_counter()
    k_min = 1 if args.k_min is None else args.k_min
    k_max = 5 if args.k_max is None else args.k_max
    if not 1 <= k_min <= k_max:
        raise UsageError("need 1 <= --k-min <= --k-max")
    table, data, cs = _load_inputs(args)
    cfg = _engine_config(args, k_min)
    sel = select_K(data, cs, cfg, range(k_min, k_max + 1))
    out = _out_dir(args.out)
    with open(out / "bic.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["K", "BIC"])
        for K, value in sel.curve:
            w.writerow([K, repr(float(value))])
    written = ["bic.csv"] + _write_fit(out, sel.best, table, cs)
    config = cfg.to_dict()
    config.update(K=sel.K, k_min=k_min, k_max=k_max)
    io.write_json(out / "manifest.json", io.manifest(
        "select-k", config, args.seed, {"data": args.data, "clusters": args.clusters},
        time.perf_counter() - t0, written))
    print(f"selected K={sel.K}; BIC " + ", ".join(f"K={K}: {v:.6g}" for K, v in sel.curve))
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    try:
        spec = ScenarioSpec(scenario=args.scenario, n=args.n, balance=args.balance, error=args.error,
                            noise_scale=args.noise_scale, rho=args.rho, seed=args.seed)
    except InvalidConfigError as e:
        raise UsageError(str(e)) from None
    data, truth = gen_dataset(spec)
    out = _out_dir(args.out)
    io.write_table(out / "data.csv", data.X, data.y)
    io.write_clusters(out / "clusters.txt", scenario_clusters(spec))
    io.write_json(out / "truth.json", io.truth_document(truth.partition, truth.betas))
    written = ["data.csv", "clusters.txt", "truth.json"]
    config = {"scenario": spec.scenario, "n": spec.n, "balance": spec.balance, "error": spec.error,
              "noise_scale": spec.noise_scale, "rho": spec.rho}
    io.write_json(out / "manifest.json", io.manifest("simulate", config, args.seed, {},
                                                     time.perf_counter() - t0, written))
    print(f"wrote {spec.n} samples x {spec.p} features to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


class _Estimate:
    def __init__(self, partition, betas):
        self.partition, self.betas = partition, betas


def cmd_evaluate(args) -> int:
    t0 = time.perf_counter()
    ids, labels = io.read_labels(args.labels)
    metrics: dict = {"n": int(labels.size)}
    inputs = {"labels": args.labels}
    if args.truth is None and args.other_labels is None:
        raise UsageError("evaluate needs --truth or --other-labels")
    if args.fit is not None:
        stored = io.load_fit(args.fit)
        inputs["fit"] = args.fit
        if labels.size and labels.max() >= stored.K:
            raise io.InvalidInputError("labels refer to more subgroups than the fit has")
        est = _Estimate(Partition(labels, stored.K), np.vstack([m.beta for m in stored.models]))
    else:
        est = None
    if args.truth is not None:
        truth = io.load_truth(args.truth)
        inputs["truth"] = args.truth
        if truth.partition.labels.size != labels.size:
            raise io.InvalidInputError(
                f"labels cover {labels.size} samples but the truth covers {truth.partition.labels.size}")
        metrics["ARI"] = ari(labels, truth.partition)
        metrics["NMI"] = nmi(labels, truth.partition)
        if est is not None:
            if est.betas.shape[1] != truth.betas.shape[1]:
                raise io.InvalidInputError("fit and truth have different numbers of features")
            rep = identification_report(est, truth)
            tp, fp, tn, fn = rep.counts
            metrics.update(TPR=rep.tpr, FPR=rep.fpr, MCC=rep.mcc, RMSE=rmse(est, truth),
                           TP=tp, FP=fp, TN=tn, FN=fn, matched=[int(t) + 1 if t >= 0 else None
                                                               for t in rep.matched_perm])
    if args.other_labels is not None:
        other_ids, other = io.read_labels(args.other_labels)
        inputs["other_labels"] = args.other_labels
        if other_ids != ids:
            raise io.InvalidInputError("the two label files cover different samples")
        metrics["ARI_pair"] = ari(labels, other)
        metrics["NMI_pair"] = nmi(labels, other)
        metrics["stability"] = stability(labels, other)
    out = _out_dir(args.out)
    io.write_json(out / "metrics.json", io._jsonable(metrics))
    io.write_json(out / "manifest.json", io.manifest("evaluate", {}, None, inputs,
                                                     time.perf_counter() - t0, ["metrics.json"]))
    print(" ".join(f"{k}={v:.4g}" for k, v in metrics.items() if isinstance(v, float)))
    return EXIT_OK


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------


def cmd_predict(args) -> int:
    t0 = time.perf_counter()
    stored = io.load_fit(args.fit)
    table = io.read_table(args.data)
    if table.X.shape[1] != stored.p:
        raise io.InvalidInputError(f"{args.data}: {table.X.shape[1]} features, the fit expects {stored.p}")
    labels, yhat = predict(stored.models, table.X, y=table.y)
    y = table.y
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(y != 0, np.abs((y - yhat) / y), np.nan)
    out = _out_dir(args.out)
    with open(out / "predictions.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "subgroup", "yhat", "abs_rel_err"])
        for i in range(table.n):
            w.writerow([table.ids[i], int(labels[i]) + 1, repr(float(yhat[i])),
                        "" if np.isnan(rel[i]) else repr(float(rel[i]))])
    value, excluded = pmre(y, yhat, return_excluded=True)
    summary = {"PMRE": value, "n": table.n, "excluded_zero_response": excluded}
    io.write_json(out / "manifest.json", io.manifest("predict", summary, None,
                                                     {"fit": args.fit, "data": args.data},
                                                     time.perf_counter() - t0, ["predictions.csv"]))
    print(f"PMRE={value:.6g} over {table.n - excluded} samples")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _fit_arguments(p: argparse.ArgumentParser, default_k_range: bool) -> None:
    p.add_argument("--data", required=True, help="CSV with header; column 'y' is the response")
    p.add_argument("--clusters", help="one cluster per line, 'name: j1,j2,...' (1-based)")
    if not default_k_range:
        p.add_argument("--k", type=int)
    p.add_argument("--k-min", type=int)
    p.add_argument("--k-max", type=int)
    p.add_argument("--starts", type=int, default=20)
    p.add_argument("--loss", choices=("huber", "squared"), default="huber")
    p.add_argument("--structure", choices=("clusters", "lasso"), default="clusters")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-3, help="outer objective tolerance")
    p.add_argument("--max-iter", type=int, default=100, help="outer iteration cap")
    p.add_argument("--standardize", type=_bool, default=True)
    p.add_argument("--intercept", type=_bool, default=True)
    p.add_argument("--tuning", choices=("cv-refine", "cv", "fixed"), default="cv-refine")
    p.add_argument("--lambda", dest="lambda_", type=float, nargs="+", help="fixed lambda (1 or K values)")
    p.add_argument("--gamma", type=float, nargs="+", default=[0.5], help="fixed gamma (1 or K values)")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--n-lambdas", type=int, default=20)
    p.add_argument("--cv-rule", choices=("min", "1se"), default="min")
    p.add_argument("--threads", type=int)
    p.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hetreg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the heterogeneous model")
    _fit_arguments(p, default_k_range=False)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select-k", help="choose K by the modified BIC and fit it")
    _fit_arguments(p, default_k_range=True)
    p.set_defaults(func=cmd_select_k)

    p = sub.add_parser("simulate", help="write a simulated dataset")
    p.add_argument("--scenario", choices=SCENARIOS, required=True)
    p.add_argument("--n", type=int, default=300)
    p.add_argument("--balance", choices=BALANCES, default="balanced")
    p.add_argument("--error", choices=ERRORS, default="mix")
    p.add_argument("--noise-scale", type=float, default=0.5)
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="score a fit against the truth or another fit")
    p.add_argument("--labels", required=True)
    p.add_argument("--fit")
    p.add_argument("--truth")
    p.add_argument("--other-labels")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="label and predict new samples (needs their y)")
    p.add_argument("--fit", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"hetreg: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalFailure, AllStartsFailed, FloatingPointError) as e:
        print(f"hetreg: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InvalidConfigError, InvalidParameterError) as e:
        print(f"hetreg: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (HetregError, OSError) as e:
        print(f"hetreg: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
