"""Command-line entry point: ``sparsefunc <verb> [options]``.

Exit status is 0 on success, 1 on invalid input (bad config, missing file,
failed lemma check) and 2 on any other failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import bounds
from .core import ValidationError
from .harness import (
    ConfigError,
    ExperimentSpec,
    apply_functional,
    apply_robust,
    gen_functional_instance,
    gen_robust_instance,
    load_spec,
    mc_risk,
    rate_sweep,
    spec_to_dict,
)
from .svgplot import loglog_svg

RISK_COLUMNS = ["estimator", "p", "n", "s", "sigma", "trials", "mse", "stderr", "bound",
                "violation_rate", "wall_ms"]


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return format(float(x), ".17g")


def risk_rows_csv(rows, timing: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RISK_COLUMNS)
    for r in rows:
        w.writerow([r.estimator_id, fmt(r.p), fmt(r.n), fmt(r.s), fmt(r.sigma), fmt(r.trials),
                    fmt(r.mean_sq_error), fmt(r.std_error), fmt(r.deviation_bound),
                    fmt(r.violation_rate), fmt(r.wall_time_ms if timing else 0)])
    return buf.getvalue()


def risk_rows_json(rows, timing: bool = False) -> str:
    data = []
    for r in rows:
        d = asdict(r)
        if not timing:
            d["wall_time_ms"] = 0
        data.append(d)
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def write_matrix_csv(path: Path, M: np.ndarray, header: dict) -> None:
    """One line per column of M; two leading comment lines name and give
    p, n, s, sigma and seed."""
    lines = ["# " + " ".join(header), "# " + " ".join(fmt(v) for v in header.values())]
    lines += [",".join(fmt(v) for v in M[:, i]) for i in range(M.shape[1])]
    path.write_text("\n".join(lines) + "\n")


def read_matrix_csv(path: Path) -> np.ndarray:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read matrix file {path}: {e.strerror}") from None
    cols = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            cols.append([float(v) for v in line.split(",")])
        except ValueError:
            raise ConfigError(f"{path}: line {lineno}: non-numeric entry") from None
    if not cols:
        raise ConfigError(f"{path}: no data rows")
    if len({len(c) for c in cols}) != 1:
        raise ConfigError(f"{path}: columns have different lengths")
    return np.asfortranarray(np.array(cols).T)


def write_sidecar(out: Path, verb: str, payload: dict) -> None:
    side = out.with_name(out.name + ".config.json")
    payload = {"command": verb, "version": __version__, **payload}
    side.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")


def emit(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def resolve_threads(arg) -> int:
    if arg is not None:
        return max(1, int(arg))
    env = os.environ.get("SF_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"SF_THREADS: expected integer, got {env!r}") from None
    return 1


def _load(args) -> tuple[ExperimentSpec, dict]:
    if not args.config:
        raise ConfigError(f"{args.verb}: --config is required")
    spec, extras = load_spec(args.config)
    if args.seed is not None:
        spec = replace(spec, master_seed=args.seed).validate()
    return spec, extras


# -- verbs ------------------------------------------------------------------

def cmd_gen(args) -> int:
    spec, extras = _load(args)
    if not args.out:
        raise ConfigError("gen: --out is required")
    out = Path(args.out)
    if spec.robust:
        Y, mu, Theta, S = gen_robust_instance(spec, args.trial)
    else:
        Y, Theta, S = gen_functional_instance(spec, args.trial)
    header = {"p": spec.p, "n": spec.n, "s": spec.s, "sigma": spec.sigma, "seed": spec.master_seed}
    write_matrix_csv(out, Y, header)
    theta_path = out.with_name(out.stem + ".theta" + (out.suffix or ".csv"))
    write_matrix_csv(theta_path, Theta, header)
    write_sidecar(out, "gen", {"config": spec_to_dict(spec), "extras": extras, "trial": args.trial,
                               "support": S.one_based(), "theta_file": theta_path.name})
    return 0


def cmd_estimate(args) -> int:
    spec, extras = _load(args)
    src = args.input or extras.get("input")
    if not src:
        raise ConfigError("estimate: --input (or config key 'input') is required")
    Y = read_matrix_csv(Path(src))
    if Y.shape != (spec.p, spec.n):
        raise ConfigError(f"input: matrix is {Y.shape[0]}x{Y.shape[1]}, config says {spec.p}x{spec.n}")
    if not spec.estimators:
        raise ConfigError("estimators: at least one estimator is required")
    results = []
    for est in spec.estimators:
        if spec.robust:
            mu_hat, warns = apply_robust(est, spec, Y)
            results.append({"estimator": est.name, "estimate": mu_hat.tolist(), "support": None,
                            "warnings": warns})
        else:
            if est.id == "oracle":
                raise ConfigError("estimate: the oracle estimator needs the true support")
            res = apply_functional(est, spec, Y)
            results.append({"estimator": est.name, "estimate": res.estimate.tolist(),
                            "support": None if res.support is None else res.support.one_based(),
                            "warnings": res.warnings})
    if args.format == "json":
        text = json.dumps(results, indent=2) + "\n"
    else:
        lines = []
        for r in results:
            lines.append(f"# estimator={r['estimator']}")
            lines.append("estimate," + ",".join(fmt(v) for v in r["estimate"]))
            if r["support"] is not None:
                lines.append("support" + "".join("," + str(i) for i in r["support"]))
            if r["warnings"]:
                lines.append("warnings," + ",".join(r["warnings"]))
        text = "\n".join(lines) + "\n"
    emit(text, args.out)
    return 0


def _risk_output(args, verb, rows, spec, extras, t0, threads) -> int:
    text = risk_rows_json(rows, args.timing) if args.format == "json" else risk_rows_csv(rows, args.timing)
    emit(text, args.out)
    if args.out:
        write_sidecar(Path(args.out), verb, {
            "config": spec_to_dict(spec), "extras": extras, "threads": threads,
            "wall_time_ms": {r.estimator_id + f"@p={r.p},n={r.n},s={r.s}": r.wall_time_ms for r in rows},
            "total_wall_time_s": time.perf_counter() - t0,
            "warnings": {r.estimator_id + f"@p={r.p},n={r.n},s={r.s}": r.warnings for r in rows},
        })
    return 0


def cmd_bench(args) -> int:
    spec, extras = _load(args)
    threads = resolve_threads(args.threads)
    t0 = time.perf_counter()
    rows = mc_risk(spec, threads)
    return _risk_output(args, "bench", rows, spec, extras, t0, threads)


def cmd_sweep(args) -> int:
    spec, extras = _load(args)
    if "axis" not in extras or "values" not in extras:
        raise ConfigError("sweep: config needs 'axis' and 'values'")
    values = extras["values"]
    if not isinstance(values, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in values):
        raise ConfigError("values: expected a list of integers")
    threads = resolve_threads(args.threads)
    t0 = time.perf_counter()
    rows = rate_sweep(spec, extras["axis"], values, threads)
    return _risk_output(args, "sweep", rows, spec, extras, t0, threads)


def cmd_verify(args) -> int:
    seed = 20180101 if args.seed is None else args.seed
    suite = bounds.verify_suite(args.trials, seed)
    width = max(len(name) for name, _ in suite)
    lines = [f"{'check':<{width}}  {'kind':<5}  {'analytic':>14}  {'empirical':>14}  {'slack':>10}  trials  result"]
    for name, r in suite:
        lines.append(f"{name:<{width}}  {r.kind:<5}  {r.bound_value:>14.6g}  {r.empirical_value:>14.6g}  "
                     f"{r.slack:>10.3g}  {r.trials:>6}  {'PASS' if r.holds else 'FAIL'}")
    ok = all(r.holds for _, r in suite)
    lines.append(f"{sum(r.holds for _, r in suite)}/{len(suite)} checks hold")
    sys.stdout.write("\n".join(lines) + "\n")
    if args.out:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["check", "kind", "analytic", "empirical", "slack", "trials", "holds"])
        for name, r in suite:
            w.writerow([name, r.kind, fmt(r.bound_value), fmt(r.empirical_value), fmt(r.slack),
                        r.trials, int(r.holds)])
        Path(args.out).write_text(buf.getvalue())
        write_sidecar(Path(args.out), "verify", {"seed": seed, "trials": args.trials})
    return 0 if ok else 1


def cmd_plot(args) -> int:
    src = args.input
    if not src:
        raise ConfigError("plot: --input <sweep csv> is required")
    if not args.out:
        raise ConfigError("plot: --out is required")
    try:
        with open(src, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as e:
        raise ConfigError(f"cannot read {src}: {e.strerror}") from None
    if not rows or not {"estimator", "mse", "p", "n", "s"} <= set(rows[0]):
        raise ConfigError(f"{src}: not a sweep table (needs estimator, p, n, s, mse columns)")
    axis = next((a for a in ("p", "n", "s") if len({r[a] for r in rows}) > 1), "p")
    series: dict[str, list] = {}
    for r in rows:
        series.setdefault(r["estimator"], []).append((float(r[axis]), float(r["mse"])))
    svg = loglog_svg(series, axis, "mean squared error", title=f"MSE vs {axis}")
    Path(args.out).write_text(svg)
    return 0


VERBS = {"gen": cmd_gen, "estimate": cmd_estimate, "bench": cmd_bench, "sweep": cmd_sweep,
         "verify": cmd_verify, "plot": cmd_plot}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sparsefunc", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        p = sub.add_parser(verb)
        p.add_argument("--config", help="experiment config (JSON)")
        p.add_argument("--out", help="output path (stdout when omitted, where allowed)")
        p.add_argument("--seed", type=int, help="override master_seed / verify seed")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--threads", type=int, help="worker threads (default: $SF_THREADS or 1)")
        p.add_argument("--input", help="input file (estimate: matrix CSV; plot: sweep CSV)")
        p.add_argument("--trial", type=int, default=0, help="gen: trial index to draw")
        p.add_argument("--trials", type=int, default=2000, help="verify: Monte Carlo draws per check")
        p.add_argument("--timing", action="store_true",
                       help="bench/sweep: fill wall_ms (makes output run-dependent)")
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1
    try:
        return VERBS[args.verb](args)
    except (ValidationError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
