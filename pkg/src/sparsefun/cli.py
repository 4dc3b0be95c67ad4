"""Command-line interface: fit models from long-format CSV, evaluate fitted
components on grids, predict new trajectories, and run simulation studies.

Exit codes: 0 success, 2 input/usage error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .kernel import NumericalError
from .meanfit import LongitudinalSample
from .regression import FitSettings, ModelBundle, fit_model, predict_response
from .model_io import model_from_json, model_to_json
from .sim import SimConfig, _generate_with_noise, run_experiment, rows_to_csv
from .tuning import DEFAULT_LAMBDA_GRID

REQUIRED_COLUMNS = ("subject_id", "process", "time", "value")


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def read_long_csv(path: str) -> dict:
    """Parse a long-format dataset file into {"X": [samples], "Y": [samples]}.

    Expected header: subject_id, process, time, value (extra columns are
    ignored). All malformed rows are reported together, by line number.
    Subjects come back sorted by id so downstream fits are invariant to the
    row order of the file.
    """
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ValueError(f"cannot read data file {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            dupes = sorted({h for h in header if header.count(h) > 1})
            raise ValueError(f"{path}: duplicate column(s) in header: {', '.join(dupes)}")
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise ValueError(f"{path}: missing column(s): {', '.join(missing)}")
        idx = {c: header.index(c) for c in REQUIRED_COLUMNS}
        errors: list[str] = []
        per_subject: dict[str, dict[str, list]] = {}
        n_rows = 0
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            n_rows += 1
            if len(row) < len(header):
                errors.append(f"row {line_no}: expected {len(header)} fields, got {len(row)}")
                continue
            sid = row[idx["subject_id"]].strip()
            proc = row[idx["process"]].strip()
            if not sid:
                errors.append(f"row {line_no}: empty subject_id")
                continue
            if proc not in ("X", "Y"):
                errors.append(f"row {line_no}: process must be X or Y, got {proc!r}")
                continue
            try:
                t = float(row[idx["time"]])
                v = float(row[idx["value"]])
            except ValueError:
                errors.append(f"row {line_no}: non-numeric time or value")
                continue
            if not (math.isfinite(t) and math.isfinite(v)):
                errors.append(f"row {line_no}: non-finite time or value")
                continue
            bucket = per_subject.setdefault(sid, {"X": [], "Y": []})
            bucket[proc].append((t, v))
        if errors:
            shown = errors[:20]
            more = f" (+{len(errors) - 20} more)" if len(errors) > 20 else ""
            raise ValueError(f"{path}: bad rows: " + "; ".join(shown) + more)
        if n_rows == 0:
            raise ValueError(f"{path}: no data rows")
    out = {"X": [], "Y": []}
    for sid in sorted(per_subject):
        for proc in ("X", "Y"):
            rows = per_subject[sid][proc]
            if rows:
                times = np.array([r[0] for r in rows])
                values = np.array([r[1] for r in rows])
                out[proc].append(LongitudinalSample(subject_id=sid, times=times, values=values))
    return out


def infer_domain(samples) -> tuple[float, float]:
    """[min, max] of the observed times, padded by 1% of the span each side."""
    times = np.concatenate([s.times for s in samples])
    lo, hi = float(times.min()), float(times.max())
    pad = 0.01 * max(hi - lo, 1.0)
    return lo - pad, hi + pad


def _float_repr(x) -> str:
    return repr(float(x))


def _write_csv(path: str | None, header: list, rows) -> None:
    out = open(path, "w", newline="", encoding="utf-8") if path else sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
    finally:
        if path:
            out.close()


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _lambda_grid_from_args(args) -> np.ndarray:
    if args.lambda_min <= 0 or args.lambda_max <= args.lambda_min:
        raise ValueError("lambda grid needs 0 < min < max")
    if args.lambda_points < 1:
        raise ValueError("lambda grid needs at least one point")
    return np.logspace(math.log10(args.lambda_min), math.log10(args.lambda_max),
                       args.lambda_points)


def cmd_fit(args) -> int:
    data = read_long_csv(args.data)
    xs, ys = data["X"], data["Y"]
    x_ids = {s.subject_id for s in xs}
    y_ids = {s.subject_id for s in ys}
    lonely = sorted(x_ids.symmetric_difference(y_ids))
    if lonely:
        raise ValueError("subjects missing one process: " + ", ".join(lonely[:10])
                         + (" ..." if len(lonely) > 10 else ""))
    if not xs:
        raise ValueError("no subjects with both X and Y observations")
    domain_x = tuple(args.domain_x) if args.domain_x else infer_domain(xs)
    domain_y = tuple(args.domain_y) if args.domain_y else infer_domain(ys)
    settings = FitSettings(
        order_x=args.order_x, order_y=args.order_y,
        domain_x=domain_x, domain_y=domain_y,
        quad_q=args.quad_q, lambda_grid=_lambda_grid_from_args(args),
        cv_folds=args.folds, cv_seed=args.cv_seed,
        j_max=args.j_max, criterion=args.criterion, k_max=args.k_max,
        lambda_mean_x=args.lambda_mean_x, lambda_mean_y=args.lambda_mean_y,
        lambda_cov_x=args.lambda_cov_x, lambda_cov_y=args.lambda_cov_y,
        lambda_cross=args.lambda_cross)
    model = fit_model(xs, ys, settings)
    provenance = {
        "command": "fit",
        "version": __version__,
        "data": os.path.basename(args.data),
        "flags": {
            "order_x": args.order_x, "order_y": args.order_y,
            "domain_x": list(domain_x), "domain_y": list(domain_y),
            "quad_q": args.quad_q, "folds": args.folds, "cv_seed": args.cv_seed,
            "j_max": args.j_max, "criterion": args.criterion,
            "lambda_min": args.lambda_min, "lambda_max": args.lambda_max,
            "lambda_points": args.lambda_points,
        },
    }
    with open(args.output, "w", encoding="utf-8") as f:
        f.write(model_to_json(model, provenance))
    sig2 = np.asarray(model.singular.sigma2, dtype=float)
    total = float(sig2.sum())
    fve = list(np.cumsum(sig2) / total) if total > 0 else []
    report = {
        "lambdas": model.lambdas,
        "j1": model.beta.j1,
        "j2": model.beta.j2,
        "sigma2": [float(v) for v in sig2],
        "fve_singular": [float(v) for v in fve],
        "eigenvalues_x": [float(v) for v in model.eigen_x.eigenvalues],
        "eigenvalues_y": [float(v) for v in model.eigen_y.eigenvalues],
        "n_subjects": len(xs),
        "provenance": provenance,
    }
    with open(args.report, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=1)
        f.write("\n")
    print(f"model written to {args.output}, report to {args.report}")
    return 0


def _load_model(path: str) -> ModelBundle:
    try:
        with open(path, encoding="utf-8") as f:
            return model_from_json(f.read())
    except OSError as exc:
        raise ValueError(f"cannot read model file {path}: {exc}") from exc


def cmd_eval_grid(args) -> int:
    model = _load_model(args.model)
    g = args.grid
    if g < 2:
        raise ValueError("grid size must be at least 2")
    ax, bx = model.spec_x.domain
    ay, by = model.spec_y.domain
    s = np.linspace(ax, bx, g)
    t = np.linspace(ay, by, g)
    if args.what == "beta":
        vals = model.beta.evaluate_grid(s, t)
        rows = ([_float_repr(s[i]), _float_repr(t[j]), _float_repr(vals[i, j])]
                for i in range(g) for j in range(g))
        _write_csv(args.output, ["s", "t", "beta"], rows)
    elif args.what == "crosscov":
        vals = model.crosscov.evaluate_grid(s, t)
        rows = ([_float_repr(s[i]), _float_repr(t[j]), _float_repr(vals[i, j])]
                for i in range(g) for j in range(g))
        _write_csv(args.output, ["s", "t", "crosscov"], rows)
    elif args.what == "eigen":
        eigen = model.eigen_x if args.process == "X" else model.eigen_y
        pts = s if args.process == "X" else t
        cols = [f(pts) for f in eigen.eigenfunctions]
        header = ["time"] + [f"eigen_{k + 1}" for k in range(len(cols))]
        rows = ([_float_repr(pts[i])] + [_float_repr(c[i]) for c in cols] for i in range(g))
        _write_csv(args.output, header, rows)
    else:   # singular
        k = args.k
        avail = min(len(model.singular.psi), len(model.singular.phi))
        if not 1 <= k <= avail:
            raise ValueError(f"singular pair k={k} not available (have {avail})")
        psi_vals = model.singular.psi[k - 1](s)
        phi_vals = model.singular.phi[k - 1](t)
        rows = ([_float_repr(s[i]), _float_repr(psi_vals[i]),
                 _float_repr(t[i]), _float_repr(phi_vals[i])] for i in range(g))
        _write_csv(args.output, ["s", f"psi_{k}", "t", f"phi_{k}"], rows)
    return 0


def cmd_predict(args) -> int:
    model = _load_model(args.model)
    data = read_long_csv(args.data)
    xs = {s.subject_id: s for s in data["X"]}
    all_ids = sorted({s.subject_id for proc in ("X", "Y") for s in data[proc]})
    ay, by = model.spec_y.domain
    t_grid = np.linspace(ay, by, args.grid)
    rows = []
    for sid in all_ids:
        if sid not in xs:
            rows.append([sid, "", "", "error: no X observations"])
            continue
        try:
            yhat = predict_response(model, xs[sid], t_grid)
        except (ValueError, NumericalError) as exc:
            rows.append([sid, "", "", f"error: {exc}"])
            continue
        for tv, yv in zip(t_grid, yhat):
            rows.append([sid, _float_repr(tv), _float_repr(yv), "ok"])
    _write_csv(args.output, ["subject_id", "time", "prediction", "status"], rows)
    return 0


def cmd_simulate(args) -> int:
    stn = float(args.stn)
    cfg = SimConfig(case=args.case, n=args.n, stn=stn,
                    m_set=tuple(int(m) for m in args.m_set.split(",")),
                    replicates=args.replicates, seed=args.seed)
    settings = FitSettings(quad_q=args.quad_q, cv_folds=args.folds,
                           cv_seed=args.cv_seed, j_max=args.j_max,
                           criterion=args.criterion)
    if args.dump_data:
        dump_rows = []
        for rep in range(cfg.replicates):
            x_samples, y_samples, _, noise = _generate_with_noise(cfg, rep)
            for (x, y), (eps_x, eps_y) in zip(zip(x_samples, y_samples), noise):
                for t, v, e in zip(x.times, x.values, eps_x):
                    dump_rows.append([rep, x.subject_id, "X", _float_repr(t),
                                      _float_repr(v), _float_repr(e)])
                for t, v, e in zip(y.times, y.values, eps_y):
                    dump_rows.append([rep, y.subject_id, "Y", _float_repr(t),
                                      _float_repr(v), _float_repr(e)])
        _write_csv(args.dump_data, ["replicate", "subject_id", "process", "time",
                                    "value", "noise"], dump_rows)
    result = run_experiment(cfg, settings, threads=args.threads)
    with open(args.rows_out, "w", encoding="utf-8") as f:
        f.write(rows_to_csv(result.rows))
    summary = {
        "config": {"case": cfg.case, "n": cfg.n, "stn": str(cfg.stn),
                   "m_set": list(cfg.m_set), "replicates": cfg.replicates,
                   "seed": cfg.seed},
        "flags": {"quad_q": args.quad_q, "folds": args.folds, "cv_seed": args.cv_seed,
                  "j_max": args.j_max, "criterion": args.criterion,
                  "threads": args.threads},
        "version": __version__,
        "summary": result.summary,
    }
    with open(args.summary_out, "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=1)
        f.write("\n")
    print(f"{result.summary['ok']} of {cfg.replicates} replicates fitted; "
          f"rows in {args.rows_out}, summary in {args.summary_out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _default_threads() -> int:
    env = os.environ.get("SPARSEFUN_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"SPARSEFUN_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparsefun",
        description="Cross-covariance, singular components and the regression "
                    "coefficient surface from sparse longitudinal data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a model from a long-format CSV")
    p_fit.add_argument("--data", required=True, help="CSV with subject_id,process,time,value")
    p_fit.add_argument("--output", default="model.json", help="model file to write")
    p_fit.add_argument("--report", default="report.json", help="fit report to write")
    p_fit.add_argument("--order-x", type=int, default=2)
    p_fit.add_argument("--order-y", type=int, default=2)
    p_fit.add_argument("--domain-x", type=float, nargs=2, metavar=("A", "B"),
                       help="X time domain (default: observed range +1%%)")
    p_fit.add_argument("--domain-y", type=float, nargs=2, metavar=("A", "B"))
    p_fit.add_argument("--quad-q", type=int, default=41)
    p_fit.add_argument("--folds", type=int, default=5)
    p_fit.add_argument("--cv-seed", type=int, default=0)
    p_fit.add_argument("--j-max", type=int, default=10)
    p_fit.add_argument("--criterion", choices=["AIC", "BIC", "FVE"], default="AIC")
    p_fit.add_argument("--k-max", type=int, default=None)
    p_fit.add_argument("--lambda-min", type=float, default=1e-8)
    p_fit.add_argument("--lambda-max", type=float, default=1.0)
    p_fit.add_argument("--lambda-points", type=int, default=20)
    for name in ("mean-x", "mean-y", "cov-x", "cov-y", "cross"):
        p_fit.add_argument(f"--lambda-{name}", type=float, default=None,
                           help=f"fix the {name} penalty instead of cross-validating")
    p_fit.add_argument("--threads", type=int, default=None,
                       help="worker bound (fit itself runs single-process)")
    p_fit.set_defaults(func=cmd_fit)

    p_eval = sub.add_parser("eval-grid", help="evaluate a fitted component on a grid")
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--what", required=True, choices=["beta", "crosscov", "singular", "eigen"])
    p_eval.add_argument("--grid", type=int, default=33, help="points per axis")
    p_eval.add_argument("--k", type=int, default=1, help="singular pair index (singular only)")
    p_eval.add_argument("--process", choices=["X", "Y"], default="X", help="eigen only")
    p_eval.add_argument("--output", default=None, help="CSV path (default stdout)")
    p_eval.set_defaults(func=cmd_eval_grid)

    p_pred = sub.add_parser("predict", help="predict response trajectories for new subjects")
    p_pred.add_argument("--model", required=True)
    p_pred.add_argument("--data", required=True, help="CSV with the new subjects' X rows")
    p_pred.add_argument("--grid", type=int, default=33, help="prediction time points")
    p_pred.add_argument("--output", default=None, help="CSV path (default stdout)")
    p_pred.set_defaults(func=cmd_predict)

    p_sim = sub.add_parser("simulate", help="run a seeded replicate study")
    p_sim.add_argument("--case", type=int, choices=[1, 2], required=True)
    p_sim.add_argument("--n", type=int, required=True)
    p_sim.add_argument("--stn", default="inf", help="signal-to-noise ratio, or inf")
    p_sim.add_argument("--replicates", type=int, default=1)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--m-set", default="2,3,4,5")
    p_sim.add_argument("--rows-out", default="replicates.csv")
    p_sim.add_argument("--summary-out", default="summary.json")
    p_sim.add_argument("--dump-data", default=None,
                       help="also write every generated observation with its noise")
    p_sim.add_argument("--quad-q", type=int, default=41)
    p_sim.add_argument("--folds", type=int, default=5)
    p_sim.add_argument("--cv-seed", type=int, default=0)
    p_sim.add_argument("--j-max", type=int, default=10)
    p_sim.add_argument("--criterion", choices=["AIC", "BIC", "FVE"], default="AIC")
    p_sim.add_argument("--threads", type=int, default=None)
    p_sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "threads", None) is None and args.command in ("fit", "simulate"):
            args.threads = _default_threads()
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
