"""Monte Carlo harness: fraction sweeps, placement comparisons, PMU sweeps, noise studies.

Every trial draws from three independent streams spawned from
``SeedSequence([base_seed, trial])``: placement, noise and PMU placement.
The streams do not depend on the grid point, so trial ``k`` at 0% PMU is the
same draw as trial ``k`` of a plain fraction sweep, and placement and noise
can be replayed separately from the recorded seeds.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ObservabilityError, SdpseError
from .measurement import (
    CONVENTIONAL_KINDS,
    MeasurementSet,
    MeterKind,
    add_noise,
    add_pmu_angles,
    check_observability,
    generate_true_measurements,
    sample_placement,
)
from .network import AdmittanceSet, NetworkCase, build_admittance, load_case
from .powerflow import PowerFlowSolution, solve_newton
from .rank import recover_rank1, spectrum
from .relaxation import assemble
from .solver import solve, verify_certificate
from .wls import StateVector, solve_wls

log = logging.getLogger(__name__)

BOUND_SLACK = 1e-6


@dataclass
class ExperimentConfig:
    case: str = "ieee14"
    fractions: float | dict = 0.7
    pmu_fraction: float = 0.0
    trials: int = 50
    base_seed: int = 0
    rank_tol: float = 1e-5
    gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    max_iter: int = 200
    noise_scale: float = 1.0
    sigmas: dict | None = None
    vm_model: str = "exact"
    fraction_grid: list = field(default_factory=lambda: [0.4, 0.5, 0.6, 0.7])
    pmu_grid: list = field(default_factory=lambda: [0.0, 0.1, 0.2, 0.3, 0.4])
    placements: list | None = None
    output: str | None = None
    jobs: int = 1

    def __post_init__(self):
        if int(self.trials) < 1:
            raise ValueError("trials must be at least 1")
        self.trials = int(self.trials)
        fr = self.fractions if isinstance(self.fractions, dict) else {"all": self.fractions}
        for v in list(fr.values()) + list(self.fraction_grid) + list(self.pmu_grid) + [self.pmu_fraction]:
            if not 0.0 <= float(v) <= 1.0:
                raise ValueError(f"fraction {v} outside [0, 1]")
        if isinstance(self.fractions, dict):
            for k in self.fractions:
                MeterKind(k)
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be nonnegative")
        if not self.rank_tol > 0:
            raise ValueError("rank_tol must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)

    def sigma_map(self) -> dict | None:
        if not self.sigmas:
            return None
        return {MeterKind(k): float(v) for k, v in self.sigmas.items()}


@dataclass
class TrialRecord:
    trial: int
    fraction: float
    pmu_fraction: float
    placement_seed: int
    noise_seed: int
    pmu_seed: int
    m: int
    n_pmu: int
    status: str
    sdp_objective: float
    wls_objective: float
    numerical_rank: int
    trailing_ratio: float
    recovered_wls_refined_objective: float
    recovery_residual: float
    max_angle_residual: float
    certified: bool = False
    error: str = ""
    timings: dict = field(default_factory=dict)

    @property
    def bound_ok(self) -> bool:
        """SDP objective does not exceed the WLS objective (checked on optimal solves)."""
        if self.status != "optimal" or not math.isfinite(self.wls_objective):
            return True
        return self.sdp_objective <= self.wls_objective + BOUND_SLACK


CSV_COLUMNS = [
    "trial",
    "fraction",
    "pmu_fraction",
    "placement_seed",
    "noise_seed",
    "pmu_seed",
    "m",
    "n_pmu",
    "status",
    "sdp_objective",
    "wls_objective",
    "numerical_rank",
    "trailing_ratio",
    "recovered_wls_refined_objective",
    "recovery_residual",
    "max_angle_residual",
    "bound_ok",
    "certified",
    "error",
]


def fmt(value) -> str:
    """Six significant digits for floats; everything else verbatim."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return "nan"
        return f"{float(value):.6g}"
    return str(value)


def to_csv(rows: Iterable[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt(row.get(c, "")) for c in columns])
    return buf.getvalue()


def record_row(rec: TrialRecord) -> dict:
    row = asdict(rec)
    row.pop("timings")
    row["bound_ok"] = rec.bound_ok
    return row


def trial_seeds(base_seed: int, trial: int) -> tuple[int, int, int]:
    """(placement, noise, pmu) integer seeds for one trial."""
    children = np.random.SeedSequence([int(base_seed), int(trial)]).spawn(3)
    return tuple(int(c.generate_state(1)[0]) for c in children)


@dataclass(frozen=True)
class CaseContext:
    case: NetworkCase
    adm: AdmittanceSet
    truth: PowerFlowSolution


@lru_cache(maxsize=8)
def case_context(spec: str) -> CaseContext:
    case = load_case(spec)
    adm = build_admittance(case)
    pf = solve_newton(case, adm=adm)
    if not pf.converged:
        raise SdpseError(f"power flow for {spec} did not converge (mismatch {pf.max_mismatch:.3g})")
    return CaseContext(case, adm, pf)


def _full_set(ctx: CaseContext, config: ExperimentConfig) -> MeasurementSet:
    return generate_true_measurements(ctx.case, ctx.truth, ctx.adm, config.sigma_map())


def estimate_set(
    mset: MeasurementSet,
    ctx: CaseContext,
    config: ExperimentConfig,
    keep_solution: bool = False,
):
    """Run SDP, WLS and WLS-from-recovered-state on one measurement set."""
    t0 = time.perf_counter()
    out = {
        "status": "not_run",
        "sdp_objective": float("nan"),
        "wls_objective": float("nan"),
        "numerical_rank": -1,
        "trailing_ratio": float("nan"),
        "recovered_wls_refined_objective": float("nan"),
        "recovery_residual": float("nan"),
        "max_angle_residual": 0.0,
        "certified": False,
        "error": "",
        "timings": {},
    }
    problem = assemble(mset, ctx.adm, vm_model=config.vm_model)
    sol = solve(problem, gap_tol=config.gap_tol, feas_tol=config.feas_tol, max_iter=config.max_iter)
    t1 = time.perf_counter()
    out["status"] = sol.status
    out["sdp_objective"] = sol.objective
    if sol.status == "optimal":
        out["certified"] = verify_certificate(problem, sol, gap_tol=config.gap_tol, feas_tol=config.feas_tol).ok
    recovered = None
    if np.all(np.isfinite(sol.w)) and np.any(sol.w):
        spec = spectrum(sol.w, config.rank_tol)
        out["numerical_rank"] = spec.numerical_rank
        out["trailing_ratio"] = spec.trailing_ratio
        out["max_angle_residual"] = max((abs(h.trace(sol.w)) for h in problem.angle_constraints), default=0.0)
        recovered = recover_rank1(sol.w, ctx.adm.slack)
        out["recovery_residual"] = recovered.residual_norm
    try:
        out["wls_objective"] = solve_wls(mset, ctx.adm).objective
    except SdpseError as exc:
        out["error"] = f"wls: {exc}"
    t2 = time.perf_counter()
    if recovered is not None and np.all(np.abs(recovered.v) > 0):
        try:
            init = StateVector.from_complex(recovered.v, ctx.adm.slack)
            out["recovered_wls_refined_objective"] = solve_wls(mset, ctx.adm, init=init).objective
        except (SdpseError, ValueError) as exc:
            out["error"] = (out["error"] + "; " if out["error"] else "") + f"refine: {exc}"
    out["timings"] = {"sdp": t1 - t0, "wls": t2 - t1, "refine": time.perf_counter() - t2}
    if keep_solution:
        out["solution"] = sol
        out["problem"] = problem
        out["recovered"] = recovered
    return out


def run_trial(config: ExperimentConfig, fraction, pmu_fraction: float, trial: int) -> TrialRecord:
    ctx = case_context(config.case)
    p_seed, n_seed, a_seed = trial_seeds(config.base_seed, trial)
    frac_label = fraction if isinstance(fraction, (int, float)) else float("nan")
    base = dict(
        trial=trial,
        fraction=float(frac_label),
        pmu_fraction=float(pmu_fraction),
        placement_seed=p_seed,
        noise_seed=n_seed,
        pmu_seed=a_seed,
    )
    t0 = time.perf_counter()
    try:
        full = _full_set(ctx, config)
        placed = sample_placement(full, fraction, p_seed, ctx.adm)
        noisy = add_noise(placed, n_seed, scale=config.noise_scale)
        if pmu_fraction > 0:
            noisy = add_pmu_angles(noisy, ctx.truth.v, pmu_fraction, a_seed, ctx.adm.slack)
        res = estimate_set(noisy, ctx, config)
    except SdpseError as exc:
        log.warning("trial %d failed: %s", trial, exc)
        nan = float("nan")
        return TrialRecord(
            **base,
            m=0,
            n_pmu=0,
            status="error",
            sdp_objective=nan,
            wls_objective=nan,
            numerical_rank=-1,
            trailing_ratio=nan,
            recovered_wls_refined_objective=nan,
            recovery_residual=nan,
            max_angle_residual=nan,
            error=str(exc),
            timings={"total": time.perf_counter() - t0},
        )
    rec = TrialRecord(
        **base,
        m=noisy.m,
        n_pmu=noisy.count(MeterKind.V_ANGLE),
        **{k: v for k, v in res.items() if k != "timings"},
        timings={**res["timings"], "total": time.perf_counter() - t0},
    )
    if not rec.bound_ok:
        log.warning(
            "trial %d: SDP objective %.6g above WLS objective %.6g", trial, rec.sdp_objective, rec.wls_objective
        )
    return rec


def _run_many(config: ExperimentConfig, jobs: Sequence[tuple]) -> list[TrialRecord]:
    """Run (fraction, pmu_fraction, trial) jobs; results come back in job order."""
    if config.jobs <= 1 or len(jobs) <= 1:
        return [run_trial(config, *job) for job in jobs]
    with ProcessPoolExecutor(max_workers=config.jobs) as pool:
        futures = [pool.submit(run_trial, config, *job) for job in jobs]
        return [f.result() for f in futures]


@dataclass
class SweepResult:
    records: list[TrialRecord]
    summary: list[dict]
    summary_columns: list[str]

    def records_csv(self) -> str:
        return to_csv((record_row(r) for r in self.records), CSV_COLUMNS)

    def summary_csv(self) -> str:
        return to_csv(self.summary, self.summary_columns)

    def write(self, path: str | Path) -> tuple[Path, Path]:
        """Write ``path`` (per-trial rows) and ``<stem>_summary.csv``."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.records_csv())
        summary = path.with_name(path.stem + "_summary.csv")
        summary.write_text(self.summary_csv())
        return path, summary


def _ok(records: Iterable[TrialRecord]) -> list[TrialRecord]:
    return [r for r in records if r.status == "optimal"]


def _group_summary(key: str, value, recs: list[TrialRecord]) -> dict:
    good = _ok(recs)
    ranks = [r.numerical_rank for r in good]
    ratios = [r.trailing_ratio for r in good]
    nan = float("nan")
    return {
        key: value,
        "trials": len(recs),
        "optimal": len(good),
        "mean_rank": float(np.mean(ranks)) if ranks else nan,
        "min_rank": min(ranks) if ranks else -1,
        "max_rank": max(ranks) if ranks else -1,
        "mean_trailing_ratio": float(np.mean(ratios)) if ratios else nan,
        "bound_violations": sum(not r.bound_ok for r in recs),
    }


SUMMARY_COLUMNS = ["trials", "optimal", "mean_rank", "min_rank", "max_rank", "mean_trailing_ratio", "bound_violations"]


def run_fraction_sweep(config: ExperimentConfig, grid: Sequence[float] | None = None) -> SweepResult:
    """Each grid fraction applied to every meter kind; placement and noise redrawn per trial."""
    grid = list(config.fraction_grid if grid is None else grid)
    jobs = [(float(f), config.pmu_fraction, t) for f in grid for t in range(config.trials)]
    records = _run_many(config, jobs)
    summary = []
    for i, f in enumerate(grid):
        chunk = records[i * config.trials : (i + 1) * config.trials]
        summary.append(_group_summary("fraction", float(f), chunk))
    result = SweepResult(records, summary, ["fraction"] + SUMMARY_COLUMNS)
    if config.output:
        result.write(config.output)
    return result


def run_pmu_sweep(config: ExperimentConfig, grid: Sequence[float] | None = None) -> SweepResult:
    """Fixed conventional placement fraction, PMU angle fraction varied over ``grid``."""
    grid = list(config.pmu_grid if grid is None else grid)
    jobs = [(config.fractions, float(a), t) for a in grid for t in range(config.trials)]
    records = _run_many(config, jobs)
    summary = []
    for i, a in enumerate(grid):
        chunk = records[i * config.trials : (i + 1) * config.trials]
        row = _group_summary("pmu_fraction", float(a), chunk)
        finite = [r.max_angle_residual for r in chunk if math.isfinite(r.max_angle_residual)]
        row["max_angle_residual"] = max(finite, default=0.0)
        summary.append(row)
    result = SweepResult(records, summary, ["pmu_fraction"] + SUMMARY_COLUMNS + ["max_angle_residual"])
    if config.output:
        result.write(config.output)
    return result


def run_noise_study(config: ExperimentConfig) -> SweepResult:
    """All meters present, fresh noise per trial; the summary is a rank histogram."""
    jobs = [(1.0, config.pmu_fraction, t) for t in range(config.trials)]
    records = _run_many(config, jobs)
    good = _ok(records)
    counts: dict[int, int] = {}
    for r in good:
        counts[r.numerical_rank] = counts.get(r.numerical_rank, 0) + 1
    summary = [{"rank": k, "count": counts[k]} for k in sorted(counts)]
    result = SweepResult(records, summary, ["rank", "count"])
    if config.output:
        result.write(config.output)
    return result


PLACEMENT_COLUMNS = [
    "placement",
    "m",
    "status",
    "sdp_objective",
    "wls_objective",
    "numerical_rank",
    "trailing_ratio",
    "recovered_wls_refined_objective",
    "recovery_residual",
    "max_state_error",
]


@dataclass
class PlacementResult:
    rows: list[dict]
    states: dict[str, np.ndarray]

    def to_csv(self) -> str:
        return to_csv(self.rows, PLACEMENT_COLUMNS)

    def states_json(self) -> str:
        return json.dumps(
            {
                k: {"magnitude": np.abs(v).tolist(), "angle_deg": np.degrees(np.angle(v)).tolist()}
                for k, v in self.states.items()
            },
            indent=1,
        )


def run_placement_study(config: ExperimentConfig, placements: dict | Sequence | None = None) -> PlacementResult:
    """Fixed meter lists compared side by side.

    ``placements`` maps a label to a list of ``[kind, location]`` pairs
    (flows as ``[kind, [branch, end]]``). One noise draw (trial 0 noise
    seed) is applied to the full meter set before selection, so a meter
    reads the same value in every placement that contains it.
    """
    placements = config.placements if placements is None else placements
    if not placements:
        raise ValueError("no placements given")
    if not isinstance(placements, dict):
        placements = {f"placement_{i}": p for i, p in enumerate(placements)}
    ctx = case_context(config.case)
    _, n_seed, _ = trial_seeds(config.base_seed, 0)
    noisy_full = add_noise(_full_set(ctx, config), n_seed, scale=config.noise_scale)
    rows, states = [], {}
    for label, keys in placements.items():
        mset = noisy_full.select(keys)
        if not check_observability(mset, ctx.adm):
            raise ObservabilityError(f"placement {label!r} is not observable")
        res = estimate_set(mset, ctx, config, keep_solution=True)
        rec = res["recovered"]
        err = float("nan")
        if rec is not None:
            states[label] = rec.v
            err = float(np.max(np.abs(rec.v - ctx.truth.v * np.exp(-1j * np.angle(ctx.truth.v[ctx.adm.slack])))))
        rows.append(
            {
                "placement": label,
                "m": mset.m,
                **{k: res[k] for k in PLACEMENT_COLUMNS if k in res},
                "max_state_error": err,
            }
        )
    out = PlacementResult(rows, states)
    if config.output:
        path = Path(config.output)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(out.to_csv())
        path.with_name(path.stem + "_states.json").write_text(out.states_json())
    return out


def kind_counts(mset: MeasurementSet) -> dict[str, int]:
    return {k.value: mset.count(k) for k in list(CONVENTIONAL_KINDS) + [MeterKind.V_ANGLE]}
