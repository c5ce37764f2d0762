"""Command-line entry point: ``errorlayers <subcommand> [flags]``.

Data goes to stdout as CSV or JSON; diagnostics go to stderr.  Exit status
is 0 on success, 1 on a numerical/module error and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from contextlib import redirect_stderr
from typing import Any, Sequence

import numpy as np

from . import compound, moments, sampler, tail_risk
from .mixture import CapacityError, ErrorSchedule, GaussianSpec, mixture_from

DEFAULT_DIGITS = 9


class UsageError(Exception):
    pass


# -- argument parsing --------------------------------------------------------

def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _layers(text: str):
    if text.strip().lower() in ("inf", "infinity"):
        return math.inf
    try:
        n = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected an integer or 'inf', got {text!r}") from exc
    if n < 0:
        raise argparse.ArgumentTypeError("n must be >= 0")
    return n


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    return str(text).strip().lower() in ("1", "true", "yes", "on")


def _common_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("model")
    g.add_argument("--mu", type=float, default=0.0)
    g.add_argument("--sigma", type=float, default=1.0)
    g.add_argument("--epsilon", type=float, default=None)
    g.add_argument("--n", type=_layers, default=None, help="number of layers (or 'inf' with --kappa)")
    g.add_argument("--n-list", type=_int_list, default=None)
    g.add_argument("--kappa", type=float, default=None, help="geometric decay of the error rate")
    g.add_argument("--p", type=float, default=0.5, help="probability of overestimation per layer")
    g.add_argument("--s2", type=float, default=None, help="log-variance of the precision prior")
    g.add_argument("--k-list", type=_float_list, default=None)
    g.add_argument("--grid-min", type=float, default=-8.0)
    g.add_argument("--grid-max", type=float, default=8.0)
    g.add_argument("--grid-step", type=float, default=None)
    g.add_argument("--preset", choices=sorted(tail_risk.REFERENCE_TABLES), default=None)
    r = p.add_argument_group("run")
    r.add_argument("--seed", type=int, default=12345)
    r.add_argument("--samples", type=int, default=1_000_000)
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--format", choices=("csv", "json"), default="csv")
    r.add_argument("--digits", type=int, default=DEFAULT_DIGITS)
    r.add_argument("--deterministic", type=_bool, nargs="?", const=True, default=False,
                   help="single-threaded, fixed-order evaluation")
    r.add_argument("--config", default=None, help="key=value file mirroring the flags")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(
        prog="errorlayers",
        description="Tails of a Normal under nested errors on its scale.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("density", parents=[common], help="mixture density and log-density on a grid")
    sub.add_parser("moments", parents=[common], help="closed-form moments (constant or decaying rates)")
    sub.add_parser("exceedance", parents=[common], help="exceedance ratio table against the Normal")
    sub.add_parser("compound", parents=[common], help="Normal-Lognormal compound and its Student-t proxy")
    sub.add_parser("simulate", parents=[common], help="Monte Carlo checks of the closed forms")
    return parser


def read_config(path: str) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment, keys may use dashes."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.lstrip("-").replace("-", "_")] = value
    return out


def parse_args(argv: Sequence[str] | None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            values = read_config(args.config)
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        known = vars(args)
        unknown = sorted(set(values) - set(known) - {"command"})
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        # String defaults are run through each flag's type; explicit flags win.
        sub = parser._subparsers._group_actions[0].choices[args.command]
        sub.set_defaults(**{k: v for k, v in values.items() if k != "config"})
        args = parser.parse_args(argv)
        if isinstance(args.deterministic, str):
            args.deterministic = _bool(args.deterministic)
    return args


# -- output ------------------------------------------------------------------

def _num(v: Any, digits: int):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if not math.isfinite(v):
            return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
        return float(f"{v:.{digits}g}")
    return v


def _cell(v: Any, digits: int) -> str:
    v = _num(v, digits)
    if isinstance(v, float):
        return f"{v:.{digits}g}"
    if isinstance(v, bool):
        return "true" if v else "false"
    return "" if v is None else str(v)


def write_csv(out, header: Sequence[str], rows, digits: int):
    w = csv.writer(out, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v, digits) for v in row])


def _jsonable(obj, digits: int):
    if isinstance(obj, dict):
        return {k: _jsonable(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v, digits) for v in obj]
    return _num(obj, digits)


def write_json(out, obj, digits: int):
    json.dump(_jsonable(obj, digits), out, indent=2, allow_nan=False)
    out.write("\n")


def _records(header, rows):
    return [dict(zip(header, row)) for row in rows]


# -- subcommands -------------------------------------------------------------

def _base(args) -> GaussianSpec:
    try:
        return GaussianSpec(args.mu, args.sigma)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _schedule(args, epsilon: float, n) -> ErrorSchedule:
    if n == math.inf:
        raise UsageError("n = inf is only meaningful for 'moments' with --kappa")
    try:
        if args.kappa is not None:
            return ErrorSchedule.geometric(epsilon, args.kappa, n, args.p)
        return ErrorSchedule.constant(epsilon, n, args.p)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _grid(args, default_step: float) -> np.ndarray:
    step = args.grid_step if args.grid_step is not None else default_step
    if step <= 0 or args.grid_max < args.grid_min:
        raise UsageError("grid needs grid-step > 0 and grid-max >= grid-min")
    count = int(round((args.grid_max - args.grid_min) / step)) + 1
    return args.grid_min + step * np.arange(count)


def cmd_density(args, out):
    eps = 0.1 if args.epsilon is None else args.epsilon
    n = 10 if args.n is None else args.n
    mix = mixture_from(_base(args), _schedule(args, eps, n))
    x = _grid(args, 0.01)
    dens = mix.pdf(x)
    logd = mix.logpdf(x)
    header = ("x", "density", "log_density")
    rows = list(zip(x, dens, logd))
    if args.format == "csv":
        write_csv(out, header, rows, args.digits)
    else:
        write_json(out, {"epsilon": eps, "n": n, "points": _records(header, rows)}, args.digits)


def moment_report(args) -> dict:
    base = _base(args)
    eps = 0.1 if args.epsilon is None else args.epsilon
    n = 10 if args.n is None else args.n
    if args.p != 0.5:
        raise moments.ClosedFormUnavailable(
            f"closed-form moments need --p 0.5 (got {args.p}); run 'errorlayers simulate' instead")
    if args.kappa is not None:
        d = moments.DecaySchedule(eps, args.kappa, n)
        var = moments.decaying_eps_variance(base, d)
        es4 = moments.decaying_eps_fourth_central(base, d) / 3.0
        mu = base.mu
        raw = (mu, mu**2 + var, mu**3 + 3 * mu * var, mu**4 + 6 * mu**2 * var + 3 * es4)
        m = moments.MomentSet(mu, var, 0.0, 3.0 * es4 / var**2 - 3.0, raw)
    else:
        if n == math.inf:
            raise UsageError("constant rates with n = inf diverge; give --kappa < 1")
        m = moments.constant_eps_moments(base, eps, n)
    return {
        "mean": m.mean, "variance": m.variance, "skewness": m.skewness,
        "excess_kurtosis": m.excess_kurtosis,
        "raw1": m.raw[0], "raw2": m.raw[1], "raw3": m.raw[2], "raw4": m.raw[3],
    }


def cmd_moments(args, out):
    report = moment_report(args)
    if args.format == "json":
        write_json(out, report, args.digits)
    else:
        write_csv(out, ("quantity", "value"), report.items(), args.digits)


def _k_label(k: float) -> str:
    return f"{k:g}"


def cmd_exceedance(args, out):
    preset = tail_risk.REFERENCE_TABLES.get(args.preset) if args.preset else None
    eps = args.epsilon if args.epsilon is not None else (preset["epsilon"] if preset else 0.1)
    n_values = args.n_list or list(tail_risk.REFERENCE_N)
    k_values = args.k_list or list(tail_risk.REFERENCE_K)
    table = tail_risk.ratio_table(n_values, k_values, eps, _base(args))
    header = ["n"] + [_k_label(k) for k in table.k_values]
    rows = [[n] + list(table.cells[i]) for i, n in enumerate(table.n_values)]

    printed = None
    if preset is not None:
        lookup = {(n, k): preset["cells"][i][j]
                  for i, n in enumerate(tail_risk.REFERENCE_N)
                  for j, k in enumerate(tail_risk.REFERENCE_K)}
        printed = [[lookup.get((n, k)) for k in table.k_values] for n in table.n_values]
        header += [f"paper_rounded_{_k_label(k)}" for k in table.k_values]
        for i, row in enumerate(rows):
            row += [tail_risk.round_like(table.cells[i, j], p) if p else ""
                    for j, p in enumerate(printed[i])]

    if args.format == "csv":
        write_csv(out, header, rows, args.digits)
    else:
        obj = {"epsilon": eps, "n_values": table.n_values, "k_values": table.k_values,
               "cells": table.cells}
        if preset is not None:
            obj["preset"] = args.preset
            obj["paper_rounded"] = [row[1 + len(k_values):] for row in rows]
            obj["printed"] = printed
        write_json(out, obj, args.digits)


def compound_report(args) -> dict:
    s2 = 0.5 if args.s2 is None else args.s2
    try:
        prior = compound.match_gamma(s2)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    quad = compound.cnl_moments_quadrature(s2)
    summary = {
        "s2": s2, "alpha": prior.alpha, "beta": prior.beta, "dof": prior.student_t.dof,
        "cv": prior.cv,
        "cnl_mass": quad.mass,
        "cnl_variance": quad.variance, "cnl_variance_closed_form": compound.cnl_variance(s2),
        "cnl_excess_kurtosis": quad.excess_kurtosis,
        "cnl_excess_kurtosis_closed_form": compound.cnl_excess_kurtosis(s2),
    }
    x = _grid(args, 0.5)
    density_rows = list(zip(x, compound.student_t_density(x, prior), compound.cnl_density(x, s2)))

    gamma = prior.gamma()
    p99 = float(gamma.ppf(0.99))
    lam = np.geomspace(float(gamma.ppf(0.5)), 8.0 * float(gamma.isf(1e-6)), 25)
    grid = compound.failure_rate_grid(prior, lam)
    log_ratio = compound.log_survival_ratio(prior, lam)
    rate_rows = [(xi, rg, rl, lr, bool(xi > p99)) for (xi, rg, rl), lr in zip(grid, log_ratio)]
    summary["gamma_p99"] = p99
    beyond = [r for r in rate_rows if r[4]]
    summary["lognormal_rate_below_gamma_beyond_p99"] = all(r[2] < r[1] for r in beyond)
    summary["survival_ratio_increasing_beyond_p99"] = bool(np.all(np.diff([r[3] for r in beyond]) > 0))
    return {
        "summary": summary,
        "density_grid": _records(("x", "t_density", "cnl_density"), density_rows),
        "failure_rate_grid": _records(("x", "r_gamma", "r_lognormal", "log_survival_ratio", "beyond_gamma_p99"), rate_rows),
    }


def cmd_compound(args, out):
    report = compound_report(args)
    if args.format == "json":
        write_json(out, report, args.digits)
        return
    rows = [("summary", None, k, v) for k, v in report["summary"].items()]
    for section in ("density_grid", "failure_rate_grid"):
        for rec in report[section]:
            x = rec["x"]
            rows += [(section, x, k, v) for k, v in rec.items() if k != "x"]
    write_csv(out, ("section", "x", "quantity", "value"), rows, args.digits)


def simulate_report(args) -> list[dict]:
    base = _base(args)
    eps = 0.1 if args.epsilon is None else args.epsilon
    n = 10 if args.n is None else args.n
    s2 = 0.5 if args.s2 is None else args.s2
    ks = args.k_list or [3.0]
    workers = 1 if args.deterministic else args.workers
    try:
        cfg = sampler.SimConfig(seed=args.seed, samples=args.samples, workers=workers)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    schedule = _schedule(args, eps, n)
    mix = mixture_from(base, schedule)
    exact = moments.mixture_moments_oracle(mix)

    x = sampler.sample_layered(base, schedule, cfg)
    checks = [
        ("layered_variance", sampler.variance_estimate(x), exact.variance),
        ("layered_excess_kurtosis", sampler.excess_kurtosis_estimate(x), exact.excess_kurtosis),
    ]
    for k in ks:
        checks.append((f"tail_probability_k{_k_label(k)}", sampler.tail_probability(x, k),
                       tail_risk.mixture_exceedance(mix, k)))
    y = sampler.sample_cnl(s2, cfg)
    checks.append(("cnl_variance", sampler.variance_estimate(y), compound.cnl_variance(s2)))
    return [{"check": name, "estimate": est.value, "closed_form": target,
             "se": est.se, "z": est.z(target)} for name, est, target in checks]


def cmd_simulate(args, out):
    rows = simulate_report(args)
    if args.format == "json":
        write_json(out, {"seed": args.seed, "samples": args.samples, "checks": rows}, args.digits)
    else:
        header = ("check", "estimate", "closed_form", "se", "z")
        write_csv(out, header, [[r[h] for h in header] for r in rows], args.digits)


COMMANDS = {
    "density": cmd_density,
    "moments": cmd_moments,
    "exceedance": cmd_exceedance,
    "compound": cmd_compound,
    "simulate": cmd_simulate,
}


def main(argv: Sequence[str] | None = None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        with redirect_stderr(err):
            args = parse_args(argv)
    except UsageError as exc:
        print(f"errorlayers: usage error: {exc}", file=err)
        return 2
    except SystemExit as exc:  # argparse reports on stderr itself
        return int(exc.code or 0)
    if args.digits < 1 or args.digits > 17:
        print("errorlayers: usage error: --digits must be in 1..17", file=err)
        return 2
    buf = io.StringIO()
    try:
        COMMANDS[args.command](args, buf)
    except UsageError as exc:
        print(f"errorlayers: usage error: {exc}", file=err)
        return 2
    except compound.QuadratureError as exc:
        print(f"errorlayers: quadrature failed after {exc.nodes} nodes: {exc}", file=err)
        return 1
    except (CapacityError, moments.ClosedFormUnavailable, moments.DivergenceError,
            ArithmeticError, ValueError) as exc:
        print(f"errorlayers: error: {exc}", file=err)
        return 1
    out.write(buf.getvalue())
    return 0


if __name__ == "__main__":
    sys.exit(main())
