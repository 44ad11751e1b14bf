"""Time the compiled kernels against the numpy fallback.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each kernel runs on the same inputs with both backends; the table reports
the best wall time over ``--repeat`` runs and the speed-up. Results of the
two backends are also compared, so a broken build shows up here as well.
"""

from __future__ import annotations

import argparse
import json
import sys
import timeit

import numpy as np

from hetreg._backend import available, load
from hetreg.simulate import ScenarioSpec, gen_dataset, scenario_clusters
from hetreg.solver import _thresholds, duplicate_design, lambda_max


def cases(rng):
    spec = ScenarioSpec("S1", n=150, error="mix", seed=0)
    data, _ = gen_dataset(spec)
    cs = scenario_clusters(spec)
    Xt = np.ascontiguousarray(duplicate_design(data.X, cs))
    y = data.y
    delta = 1.345
    thr1, thr2 = _thresholds(0.2 * lambda_max(Xt, y, 0.5, delta, cs, certify=False), 0.5, cs)
    u = rng.standard_normal(cs.expanded_dim)
    r = rng.standard_t(2, size=5000)
    v0 = np.zeros(cs.expanded_dim)
    grad = -(Xt.T @ np.clip(y, -delta, delta))
    ptr = cs.block_ptr
    return {
        "huber_sum (n=5000)": lambda k: k.huber_sum(r, delta),
        "huber_location (n=5000)": lambda k: k.huber_location(r, delta, 0.0),
        f"prox_sgl (dim={cs.expanded_dim})": lambda k: k.prox_sgl(u, thr1, thr2, ptr),
        f"kkt_residual (dim={cs.expanded_dim})": lambda k: k.kkt_residual(grad, v0, thr1, thr2, ptr),
        f"pg_solve (n={data.n}, dim={cs.expanded_dim})": lambda k: k.pg_solve(
            Xt, y, ptr, thr1, thr2, delta, v0, 0.0, False, 1e-6, 50_000, 1.0, False),
    }


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        # solver runs: rounding changes the path, so compare the optimum reached
        return bool(np.isclose(a[2], b[2], rtol=1e-9) and np.allclose(a[0], b[0], atol=1e-5))
    return bool(np.allclose(a, b, rtol=1e-9, atol=1e-12))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write the timings here")
    args = ap.parse_args(argv)

    backends = available()
    if "cython" not in backends:
        print("compiled kernels are not built; only the numpy fallback is available", file=sys.stderr)
    mods = {name: load(name) for name in backends}
    rows = []
    for label, call in cases(np.random.default_rng(0)).items():
        row = {"kernel": label}
        outs = {}
        for name, mod in mods.items():
            outs[name] = call(mod)
            number = 1 if label.startswith("pg_solve") else 200
            best = min(timeit.repeat(lambda: call(mod), number=number, repeat=args.repeat)) / number
            row[name] = best
        if len(outs) == 2:
            row["agree"] = _same(outs["cython"], outs["python"])
        rows.append(row)

    width = max(len(r["kernel"]) for r in rows)
    head = f"{'kernel':<{width}}  " + "  ".join(f"{b:>12}" for b in backends)
    if len(backends) == 2:
        head += "  speed-up  agree"
    print(head)
    for r in rows:
        line = f"{r['kernel']:<{width}}  " + "  ".join(f"{r[b] * 1e3:>9.3f} ms" for b in backends)
        if len(backends) == 2:
            line += f"  {r['python'] / r['cython']:>7.1f}x  {r['agree']}"
        print(line)
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
