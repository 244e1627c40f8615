"""Command-line front end.

Exit codes:
  0  success
  1  domain error: malformed case, unobservable placement, power flow or
     WLS non-convergence, solver failure (message on stderr)
  2  usage error: bad flags, unreadable or invalid config file

Precedence: built-in defaults < --config file < explicit flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import EstimationError, SdpseError
from .experiments import (
    ExperimentConfig,
    case_context,
    estimate_set,
    fmt,
    run_fraction_sweep,
    run_noise_study,
    run_placement_study,
    run_pmu_sweep,
    trial_seeds,
)
from .measurement import MeasurementSet, add_noise, add_pmu_angles, generate_true_measurements, sample_placement
from .network import build_admittance, load_case
from .powerflow import solve_newton
from .wls import solve_wls

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config; explicit flags override it")
    p.add_argument("--case", help="bundled case name or path to .json/.m file")
    p.add_argument("--rank-tol", type=float, dest="rank_tol")
    p.add_argument("--gap-tol", type=float, dest="gap_tol")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int, dest="base_seed")
    p.add_argument("--output", help="output file (CSV for sweeps, JSON for estimate)")
    p.add_argument("--jobs", type=int, help="worker processes for trials")
    p.add_argument("--noise-scale", type=float, dest="noise_scale", help="multiplier on every sigma when drawing noise")
    p.add_argument("--pmu-fraction", type=float, dest="pmu_fraction")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdpse",
        description="SDP relaxation vs WLS for AC power-system state estimation.",
        epilog=__doc__.split("\n", 2)[2],
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("estimate", help="one estimation run: WLS, SDP or both")
    _shared(p)
    p.add_argument("--fraction", type=float, help="fraction of each meter kind kept")
    p.add_argument("--method", choices=["wls", "sdp", "both"], default="both")
    p.add_argument("--measurements", help="measurement-set JSON to use instead of sampling")

    p = sub.add_parser("sweep", help="rank versus measurement fraction")
    _shared(p)
    p.add_argument("--grid", type=float, nargs="+", help="fractions to sweep")

    p = sub.add_parser("pmu-sweep", help="rank versus PMU angle fraction")
    _shared(p)
    p.add_argument("--fraction", type=float, help="conventional meter fraction")
    p.add_argument("--grid", type=float, nargs="+", help="PMU fractions to sweep")

    p = sub.add_parser("noise-study", help="rank histogram over noise draws at full placement")
    _shared(p)

    p = sub.add_parser("placement-study", help="compare explicit meter placements")
    _shared(p)

    p = sub.add_parser("validate-case", help="parse a case and solve its power flow")
    p.add_argument("--case", required=True)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _config(args) -> ExperimentConfig:
    base = {}
    if getattr(args, "config", None):
        try:
            base = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(base, dict):
            raise UsageError("config must be a JSON object")
    for key in ("case", "rank_tol", "gap_tol", "trials", "base_seed", "output", "jobs", "noise_scale", "pmu_fraction"):
        val = getattr(args, key, None)
        if val is not None:
            base[key] = val
    if getattr(args, "fraction", None) is not None:
        base["fractions"] = args.fraction
    try:
        return ExperimentConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc


def _state_table(rows: dict[str, np.ndarray], bus_ids) -> str:
    cols = list(rows)
    header = ["bus"] + [f"{c}_{q}" for c in cols for q in ("vm", "va_deg")]
    lines = ["  ".join(f"{h:>12}" for h in header)]
    for i, bus in enumerate(bus_ids):
        vals = [str(bus)]
        for c in cols:
            v = rows[c][i]
            vals += [fmt(float(abs(v))), fmt(float(np.degrees(np.angle(v))))]
        lines.append("  ".join(f"{x:>12}" for x in vals))
    return "\n".join(lines)


def cmd_estimate(args) -> int:
    config = _config(args)
    ctx = case_context(config.case)
    if args.measurements:
        try:
            mset = MeasurementSet.from_json(Path(args.measurements).read_text())
        except (OSError, ValueError, KeyError) as exc:
            raise UsageError(f"cannot read measurements {args.measurements}: {exc}") from exc
    else:
        p_seed, n_seed, a_seed = trial_seeds(config.base_seed, 0)
        full = generate_true_measurements(ctx.case, ctx.truth, ctx.adm, config.sigma_map())
        mset = add_noise(sample_placement(full, config.fractions, p_seed, ctx.adm), n_seed, config.noise_scale)
        if config.pmu_fraction > 0:
            mset = add_pmu_angles(mset, ctx.truth.v, config.pmu_fraction, a_seed, ctx.adm.slack)

    out: dict = {"case": config.case, "m": mset.m}
    states = {"true": ctx.truth.v}
    if args.method in ("wls", "both"):
        res = solve_wls(mset, ctx.adm)
        if not res.converged:
            raise EstimationError(f"WLS did not converge in {res.iterations} iterations")
        out["wls_objective"] = res.objective
        out["wls_iterations"] = res.iterations
        states["wls"] = res.state.v
    if args.method in ("sdp", "both"):
        res = estimate_set(mset, ctx, replace(config, output=None), keep_solution=True)
        out.update(
            sdp_status=res["status"],
            sdp_objective=res["sdp_objective"],
            numerical_rank=res["numerical_rank"],
            trailing_ratio=res["trailing_ratio"],
            recovery_residual=res["recovery_residual"],
            recovered_wls_refined_objective=res["recovered_wls_refined_objective"],
        )
        if res["recovered"] is not None:
            states["sdp"] = res["recovered"].v
    for k, v in out.items():
        print(f"{k}: {fmt(v)}")
    print(_state_table(states, [b.id for b in ctx.case.buses]))
    if config.output:
        payload = {k: (fmt(v) if isinstance(v, float) else v) for k, v in out.items()}
        payload["states"] = {
            k: {"vm": [fmt(float(x)) for x in np.abs(v)], "va_deg": [fmt(float(x)) for x in np.degrees(np.angle(v))]}
            for k, v in states.items()
        }
        Path(config.output).write_text(json.dumps(payload, indent=1) + "\n")
    if out.get("sdp_status", "optimal") != "optimal":
        print(f"SDP solve ended with status {out['sdp_status']}", file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


def _emit(result, config) -> int:
    if not config.output:
        sys.stdout.write(result.summary_csv())
    else:
        print(f"wrote {config.output}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = _config(args)
    return _emit(run_fraction_sweep(config, args.grid), config)


def cmd_pmu_sweep(args) -> int:
    config = _config(args)
    return _emit(run_pmu_sweep(config, args.grid), config)


def cmd_noise_study(args) -> int:
    config = _config(args)
    return _emit(run_noise_study(config), config)


def cmd_placement_study(args) -> int:
    config = _config(args)
    if not config.placements:
        raise UsageError("placement-study needs 'placements' in the config file")
    try:
        result = run_placement_study(config)
    except KeyError as exc:
        raise UsageError(f"placement names an unknown meter: {exc}") from exc
    if not config.output:
        sys.stdout.write(result.to_csv())
    else:
        print(f"wrote {config.output}")
    return EXIT_OK


def cmd_validate_case(args) -> int:
    case = load_case(args.case)
    adm = build_admittance(case)
    pf = solve_newton(case, adm=adm)
    if not pf.converged:
        print(f"power flow did not converge (mismatch {pf.max_mismatch:.3g})", file=sys.stderr)
        return EXIT_DOMAIN
    print(f"{case.name}: {case.n} buses, {len(case.branches)} branches, slack bus {case.buses[case.slack_index].id}")
    print(f"power flow converged in {pf.iterations} iterations, mismatch {fmt(pf.max_mismatch)}")
    return EXIT_OK


COMMANDS = {
    "estimate": cmd_estimate,
    "sweep": cmd_sweep,
    "pmu-sweep": cmd_pmu_sweep,
    "noise-study": cmd_noise_study,
    "placement-study": cmd_placement_study,
    "validate-case": cmd_validate_case,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"sdpse: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SdpseError as exc:
        print(f"sdpse: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
