"""Command-line front end.

Every subcommand renders all of its outputs in memory first and writes them
to ``--out`` only when the whole run succeeded, so a failed run leaves no
partial files behind. Floats are written with ``repr`` and JSON keys are
sorted, so reruns with the same inputs and seed are byte-identical.

Exit codes: 0 success, 2 usage, 3 malformed or inconsistent data,
4 numerical failure (degeneracy, knife edge, non-convergence).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .demand import verify_equilibrium
from .discrete import (
    blocking_pairs,
    decentralized_choice,
    sample_students,
    scaled_capacities,
    student_proposing_da,
)
from .equilibrium import solve
from .errors import DataError, DomainError, InfeasibleTargetError, MarketError, NumericError
from .ingest import build_observation, default_tables, read_records, read_tables
from .inverse import MarketObservation, demand_curve, invert, linear_target_cutoff, target_cutoff
from .market import MarketParams
from .statics import equilibrium_jacobians, unconstrained_jacobians
from .tatonnement import TatonnementConfig, da_tatonnement, simultaneous_tatonnement

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(MarketError):
    pass


# ---------------------------------------------------------------- inputs


def _open_existing(path: str):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p.open("r", encoding="utf-8", newline="")


def load_market(path: str, as_delta: bool = False) -> tuple[MarketParams, list[str]]:
    """Read ``school, gamma|delta|gamma_or_delta, q`` rows."""
    with _open_existing(path) as fh:
        reader = csv.DictReader(fh)
        cols = set(reader.fieldnames or ())
        if "school" not in cols or "q" not in cols:
            raise DataError(f"{path}: market file needs columns school and q")
        if "gamma" in cols:
            key, is_delta = "gamma", False
        elif "delta" in cols:
            key, is_delta = "delta", True
        elif "gamma_or_delta" in cols:
            key, is_delta = "gamma_or_delta", as_delta
        else:
            raise DataError(f"{path}: market file needs a gamma, delta or gamma_or_delta column")
        names, weights, q = [], [], []
        for line, row in enumerate(reader, start=2):
            try:
                names.append(row["school"].strip())
                weights.append(float(row[key]))
                q.append(float(row["q"]))
            except (AttributeError, TypeError, ValueError):
                raise DataError(f"{path}: line {line}: expected a name and two numbers") from None
    if not names:
        raise DataError(f"{path}: no schools")
    if len(set(names)) != len(names):
        raise DataError(f"{path}: duplicate school names")
    try:
        params = MarketParams.from_delta(weights, q) if is_delta else MarketParams(weights, q)
    except DomainError as exc:
        raise DataError(f"{path}: {exc}") from None
    return params, names


def load_observation(path: str, population: float | None) -> MarketObservation:
    with _open_existing(path) as fh:
        return MarketObservation.read_csv(fh, population)


def _cutoff_arg(text: str | None, n: int, default: float) -> np.ndarray:
    if text is None:
        return np.full(n, default)
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise UsageError(f"cutoffs must be comma-separated numbers, got {text!r}") from None
    if len(vals) == 1:
        vals = vals * n
    if len(vals) != n:
        raise UsageError(f"expected 1 or {n} cutoffs, got {len(vals)}")
    return np.array(vals)


# ---------------------------------------------------------------- outputs


def _csv(rows, header) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _render(write, *args) -> str:
    buf = io.StringIO()
    write(buf, *args)
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _f(x) -> float | None:
    x = float(x)
    return x if math.isfinite(x) else None


def _flush(out: Path, files: dict[str, str]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out / name).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------- commands


def cmd_solve(args) -> dict[str, str]:
    params, names = load_market(args.market, args.delta)
    sol = solve(params)
    cert = verify_equilibrium(params, sol.p, args.tol)
    rows = [
        [names[c], repr(float(params.gamma[c])), repr(float(params.q[c])),
         repr(float(params.ratios[c])), repr(float(sol.p[c])), repr(float(sol.D_star.D[c]))]
        for c in range(params.n_schools)
    ]
    certificate = {
        "tolerance": args.tol,
        "passes": cert.passes(args.tol),
        "max_capacity_violation": _f(cert.max_capacity_violation),
        "max_stability_violation": _f(cert.max_stability_violation),
        "ncp_residual": _f(cert.ncp_residual),
        "clearing_gap": _f(cert.clearing_gap),
        "b_index": sol.b_index,
        "ratio_order": [names[c] for c in sol.order],
    }
    if not cert.passes(args.tol):
        raise NumericError(f"equilibrium certificate fails at tolerance {args.tol}")
    return {
        "equilibrium.csv": _csv(rows, ["school", "gamma", "q", "ratio", "p_star", "D_star"]),
        "certificate.json": _json(certificate),
    }


def cmd_iterate(args) -> dict[str, str]:
    params, names = load_market(args.market, args.delta)
    if args.algorithm == "simultaneous":
        p0 = _cutoff_arg(args.p0, params.n_schools, 0.15)
        config = TatonnementConfig(p0, args.alpha, args.beta, args.epsilon, args.max_iters)
        traj = simultaneous_tatonnement(params, config)
    else:
        p0 = _cutoff_arg(args.p0, params.n_schools, 0.0)
        traj = da_tatonnement(params, p0, max_rounds=args.max_iters)
    p_star = solve(params).p
    final = traj.final_p.p
    summary = {
        "algorithm": args.algorithm,
        "iterations": len(traj),
        "converged": traj.converged,
        "final_p": {names[c]: float(final[c]) for c in range(final.size)},
        "p_star": {names[c]: float(p_star[c]) for c in range(final.size)},
        "max_abs_error": float(np.max(np.abs(final - p_star))),
    }
    return {"trajectory.csv": _render(traj.write_csv, names), "trajectory.json": _json(summary)}


def cmd_simulate(args) -> dict[str, str]:
    params, names = load_market(args.market, args.delta)
    p_star = solve(params).p
    files = {}
    summary = {"seed": args.seed, "p_star": [float(x) for x in p_star], "runs": []}
    for n in args.n_students:
        sample = sample_students(params, n, seed=[args.seed, n])
        caps = scaled_capacities(params, n)
        da = student_proposing_da(sample, caps)
        choice = decentralized_choice(sample, p_star)
        audit = blocking_pairs(sample, caps, da.assignment) if n <= args.audit_limit else None
        files[f"da_n{n}.csv"] = _render(da.write_csv, sample, names)
        files[f"choice_n{n}.csv"] = _render(choice.write_csv, sample, names)
        summary["runs"].append(
            {
                "n_students": n,
                "capacities": caps.tolist(),
                "da_rounds": da.rounds,
                "da_implied_cutoffs": [float(x) for x in da.implied_cutoffs],
                "da_fill": da.fill_counts.tolist(),
                "choice_fill": choice.fill_counts.tolist(),
                "blocking_pairs": None if audit is None else len(audit),
            }
        )
        if audit:
            raise NumericError(f"deferred acceptance left {len(audit)} blocking pairs at n={n}")
    files["simulate.json"] = _json(summary)
    return files


def cmd_statics(args) -> dict[str, str]:
    params, names = load_market(args.market, args.delta)
    sol = solve(params)
    p = sol.p if args.cutoffs is None else _cutoff_arg(args.cutoffs, params.n_schools, 0.0)
    jac = unconstrained_jacobians(params, p)
    if args.cutoffs is None:
        jac = jac.merged(equilibrium_jacobians(params))
    meta = {"at": "equilibrium" if args.cutoffs is None else "given cutoffs",
            "cutoffs": [float(x) for x in p], "has_ties": jac.has_ties,
            "matrices": sorted(jac.matrices())}
    return {"jacobians.csv": _render(jac.write_csv, names), "jacobians.json": _json(meta)}


def cmd_invert(args) -> dict[str, str]:
    obs = load_observation(args.obs, args.population)
    est = invert(obs, args.method)
    if not est.converged:
        raise NumericError(f"inversion did not converge (residual {est.residual!r})")
    top = int(est.ranking()[0])
    meta = {"method": est.method, "residual": est.residual, "iterations": est.iterations,
            "n_schools": obs.n_schools, "population": obs.population, "top_school": obs.labels[top],
            "top_gamma": float(est.gamma[top])}
    return {"preferability.csv": _render(est.write_csv, obs), "preferability.json": _json(meta)}


def cmd_ingest(args) -> dict[str, str]:
    if args.tables is None:
        tables = default_tables()
    else:
        with _open_existing(args.tables) as fh:
            tables = read_tables(fh)
    with _open_existing(args.records) as fh:
        records = read_records(fh)
    obs, meta = build_observation(records, tables)
    meta["records_file"] = Path(args.records).name
    return {"observation.csv": _render(obs.write_csv), "observation.json": _json(meta)}


def cmd_curve(args) -> dict[str, str]:
    obs = load_observation(args.obs, args.population)
    if args.school not in obs.labels:
        raise UsageError(f"school {args.school!r} not in {args.obs}")
    c = obs.labels.index(args.school)
    est = invert(obs, args.method)
    grid = np.linspace(0.0, 1.0, args.points)
    curve = demand_curve(est.gamma, obs.p_obs, c, grid)
    scale = obs.population
    rows = [[repr(float(x)), repr(float(d)), "" if scale is None else repr(float(d * scale))] for x, d in curve]
    meta = {"school": args.school, "observed_cutoff": float(obs.p_obs[c]),
            "observed_demand": float(obs.D_obs[c]), "population": scale}
    if args.target is not None:
        target = args.target / scale if args.target_is_count else args.target
        if args.target_is_count and scale is None:
            raise UsageError("a head-count target needs --population or demand counts in the file")
        meta["target"] = args.target
        meta["target_demand_fraction"] = target
        meta["target_cutoff"] = target_cutoff(est.gamma, obs.p_obs, c, target)
        meta["linear_target_cutoff"] = linear_target_cutoff(float(obs.p_obs[c]), float(obs.D_obs[c]), target)
    return {"curve.csv": _csv(rows, ["p", "D_fraction", "D_count"]), "curve.json": _json(meta)}


# ---------------------------------------------------------------- parser


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scoremarket", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="out", help="output directory (created if missing)")

    market = argparse.ArgumentParser(add_help=False)
    market.add_argument("--market", required=True, help="CSV with school, gamma|delta, q")
    market.add_argument("--delta", action="store_true", help="read a gamma_or_delta column as delta = log gamma")

    obs = argparse.ArgumentParser(add_help=False)
    obs.add_argument("--obs", required=True, help="CSV with name, cutoff, demand_fraction|demand_count")
    obs.add_argument("--population", type=float, help="head count that demand fractions refer to")
    obs.add_argument("--method", choices=("auto", "recursion", "root-finder"), default="auto")

    p = sub.add_parser("solve", parents=[common, market], help="equilibrium cutoffs and certificate")
    p.add_argument("--tol", type=float, default=1e-10)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("iterate", parents=[common, market], help="tatonnement trajectory")
    p.add_argument("--algorithm", choices=("simultaneous", "da"), default="simultaneous")
    p.add_argument("--p0", help="starting cutoffs: one value or a comma-separated list")
    p.add_argument("--alpha", type=float, default=0.2)
    p.add_argument("--beta", type=float, default=0.01)
    p.add_argument("--epsilon", type=float, default=1e-8)
    p.add_argument("--max-iters", type=_positive_int, default=50)
    p.set_defaults(func=cmd_iterate)

    p = sub.add_parser("simulate", parents=[common, market], help="finite-sample DA and decentralized choice")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-students", type=_positive_int, nargs="+", default=[20, 200, 2000])
    p.add_argument("--audit-limit", type=int, default=2000, help="largest n that gets a blocking-pair audit")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("statics", parents=[common, market], help="comparative-statics Jacobians")
    p.add_argument("--cutoffs", help="evaluate unconstrained Jacobians here instead of at equilibrium")
    p.set_defaults(func=cmd_statics)

    p = sub.add_parser("invert", parents=[common, obs], help="recover preferability from observations")
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("ingest", parents=[common], help="build an observation file from admissions records")
    p.add_argument("--records", required=True)
    p.add_argument("--tables", help="percentile table CSV (default: bundled synthetic table)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("curve", parents=[common, obs], help="one school's demand curve, others held fixed")
    p.add_argument("--school", required=True)
    p.add_argument("--points", type=_positive_int, default=201)
    p.add_argument("--target", type=float, help="target enrollment")
    p.add_argument("--target-is-count", action="store_true", help="read --target as a head count")
    p.set_defaults(func=cmd_curve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        files = args.func(args)
        _flush(Path(args.out), files)
    except UsageError as exc:
        print(f"scoremarket {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, InfeasibleTargetError) as exc:
        print(f"scoremarket {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"scoremarket {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DomainError as exc:
        print(f"scoremarket {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"scoremarket {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
