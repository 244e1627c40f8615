"""Synthetic meter data: true values, random placement, Gaussian noise, PMU angles.

Locations are bus indices for injections, magnitudes and angles, and
``(branch index, end)`` tuples for line flows.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .errors import ObservabilityError
from .network import AdmittanceSet, NetworkCase
from .powerflow import PowerFlowSolution, complex_injections, line_flows

MAX_PLACEMENT_RETRIES = 100
ANGLE_MARGIN = 1e-3  # rad kept away from +-pi/2 for the tangent form


class MeterKind(str, Enum):
    P_INJECTION = "p_injection"
    Q_INJECTION = "q_injection"
    P_FLOW = "p_flow"
    Q_FLOW = "q_flow"
    V_MAGNITUDE = "v_magnitude"
    V_ANGLE = "v_angle"

    @property
    def is_flow(self) -> bool:
        return self in (MeterKind.P_FLOW, MeterKind.Q_FLOW)


CONVENTIONAL_KINDS = (
    MeterKind.P_INJECTION,
    MeterKind.Q_INJECTION,
    MeterKind.P_FLOW,
    MeterKind.Q_FLOW,
    MeterKind.V_MAGNITUDE,
)

DEFAULT_SIGMA = {
    MeterKind.P_FLOW: 0.008,
    MeterKind.Q_FLOW: 0.008,
    MeterKind.P_INJECTION: 0.01,
    MeterKind.Q_INJECTION: 0.01,
    MeterKind.V_MAGNITUDE: 0.004,
    MeterKind.V_ANGLE: 0.0,
}


@dataclass(frozen=True)
class Measurement:
    kind: MeterKind
    location: int | tuple[int, str]
    value: float
    sigma: float

    def __post_init__(self):
        if self.kind is MeterKind.V_ANGLE:
            if self.sigma < 0:
                raise ValueError("negative sigma")
        elif not self.sigma > 0:
            raise ValueError(f"{self.kind.value} meter at {self.location}: sigma must be positive")

    @property
    def key(self) -> tuple:
        return (self.kind, self.location)

    def to_dict(self) -> dict:
        loc = list(self.location) if isinstance(self.location, tuple) else self.location
        return {"kind": self.kind.value, "location": loc, "value": self.value, "sigma": self.sigma}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Measurement":
        loc = d["location"]
        loc = (int(loc[0]), str(loc[1])) if isinstance(loc, (list, tuple)) else int(loc)
        return cls(MeterKind(d["kind"]), loc, float(d["value"]), float(d["sigma"]))


@dataclass(frozen=True)
class MeasurementSet:
    measurements: tuple[Measurement, ...]
    seed: int | None = None
    truth: PowerFlowSolution | None = field(default=None, compare=False, repr=False)
    observable: bool | None = field(default=None, compare=False)

    def __post_init__(self):
        keys = [meas.key for meas in self.measurements]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate (kind, location) in measurement set")

    def __len__(self) -> int:
        return len(self.measurements)

    def __iter__(self):
        return iter(self.measurements)

    @property
    def m(self) -> int:
        return len(self.measurements)

    @property
    def z(self) -> np.ndarray:
        return np.array([meas.value for meas in self.measurements])

    @property
    def sigma(self) -> np.ndarray:
        return np.array([meas.sigma for meas in self.measurements])

    def of_kind(self, kind: MeterKind) -> list[Measurement]:
        return [meas for meas in self.measurements if meas.kind is kind]

    def count(self, kind: MeterKind) -> int:
        return sum(1 for meas in self.measurements if meas.kind is kind)

    def select(self, keys: Sequence[tuple]) -> "MeasurementSet":
        """Subset in this set's order; unknown keys raise KeyError."""
        wanted = {(MeterKind(k), tuple(loc) if isinstance(loc, list) else loc) for k, loc in keys}
        have = {meas.key for meas in self.measurements}
        missing = wanted - have
        if missing:
            raise KeyError(f"meters not in set: {sorted(missing, key=str)}")
        kept = tuple(meas for meas in self.measurements if meas.key in wanted)
        return replace(self, measurements=kept, observable=None)

    def to_json(self) -> str:
        return json.dumps(
            {"seed": self.seed, "measurements": [meas.to_dict() for meas in self.measurements]},
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "MeasurementSet":
        data = json.loads(text)
        return cls(tuple(Measurement.from_dict(d) for d in data["measurements"]), seed=data.get("seed"))


def _seed_int(seed) -> int | None:
    if seed is None:
        return None
    if isinstance(seed, (int, np.integer)):
        return int(seed)
    return int(np.random.SeedSequence(seed).generate_state(1)[0])


def generate_true_measurements(
    case: NetworkCase,
    sol: PowerFlowSolution,
    adm: AdmittanceSet,
    sigmas: Mapping[MeterKind, float] | None = None,
) -> MeasurementSet:
    """Every conventional meter at every legal location, noise-free.

    Order: P injections, Q injections, P flows, Q flows (from-end of each
    in-service branch), voltage magnitudes.
    """
    if not sol.converged:
        raise ValueError("power-flow solution did not converge")
    sig = {**DEFAULT_SIGMA, **(sigmas or {})}
    s_bus = complex_injections(sol.v, adm)
    s_from = line_flows(sol.v, adm, "from")
    live = [k for k, br in enumerate(case.branches) if br.in_service]
    out: list[Measurement] = []
    out += [Measurement(MeterKind.P_INJECTION, i, float(s_bus[i].real), sig[MeterKind.P_INJECTION]) for i in range(case.n)]
    out += [Measurement(MeterKind.Q_INJECTION, i, float(s_bus[i].imag), sig[MeterKind.Q_INJECTION]) for i in range(case.n)]
    out += [Measurement(MeterKind.P_FLOW, (k, "from"), float(s_from[k].real), sig[MeterKind.P_FLOW]) for k in live]
    out += [Measurement(MeterKind.Q_FLOW, (k, "from"), float(s_from[k].imag), sig[MeterKind.Q_FLOW]) for k in live]
    out += [Measurement(MeterKind.V_MAGNITUDE, i, float(abs(sol.v[i])), sig[MeterKind.V_MAGNITUDE]) for i in range(case.n)]
    return MeasurementSet(tuple(out), truth=sol, observable=True)


def placement_count(fraction: float, available: int) -> int:
    # round first so 0.7 * 20 does not become 15 through representation error
    return min(available, math.ceil(round(fraction * available, 9)))


def _fraction_map(fractions) -> dict[MeterKind, float]:
    if isinstance(fractions, (int, float)):
        return {k: float(fractions) for k in CONVENTIONAL_KINDS}
    out = {MeterKind(k): float(v) for k, v in fractions.items()}
    return out


def sample_placement(
    full: MeasurementSet,
    fractions: float | Mapping,
    seed,
    adm: AdmittanceSet,
    max_retries: int = MAX_PLACEMENT_RETRIES,
) -> MeasurementSet:
    """Keep ceil(fraction * available) random meters of each kind.

    Kinds missing from ``fractions`` are kept in full. Draws are repeated
    until :func:`check_observability` passes.
    """
    fr = _fraction_map(fractions)
    for f in fr.values():
        if not 0.0 <= f <= 1.0:
            raise ValueError(f"fraction {f} outside [0, 1]")
    if all(fr.get(k, 1.0) == 1.0 for k in MeterKind):
        return full

    rng = np.random.default_rng(seed)
    groups: dict[MeterKind, list[int]] = {}
    for pos, meas in enumerate(full.measurements):
        groups.setdefault(meas.kind, []).append(pos)

    for _ in range(max_retries):
        keep: list[int] = []
        for kind, positions in groups.items():
            k = placement_count(fr.get(kind, 1.0), len(positions))
            chosen = rng.choice(len(positions), size=k, replace=False)
            keep.extend(positions[c] for c in chosen)
        keep.sort()
        cand = replace(full, measurements=tuple(full.measurements[p] for p in keep), seed=_seed_int(seed), observable=None)
        if check_observability(cand, adm):
            return replace(cand, observable=True)
    raise ObservabilityError(f"unobservable after {max_retries} retries")


def add_noise(mset: MeasurementSet, seed, scale: float = 1.0) -> MeasurementSet:
    """Add independent N(0, (scale*sigma)^2) noise; recorded sigmas are unchanged."""
    rng = np.random.default_rng(seed)
    sig = mset.sigma
    noise = rng.standard_normal(len(sig)) * sig * scale
    out = tuple(
        meas if meas.sigma == 0 else replace(meas, value=meas.value + float(e))
        for meas, e in zip(mset.measurements, noise)
    )
    return replace(mset, measurements=out)


def add_pmu_angles(
    mset: MeasurementSet,
    v_true: np.ndarray,
    fraction: float,
    seed,
    slack: int,
) -> MeasurementSet:
    """Append noise-free angle meters at buses that already carry a magnitude meter.

    ``ceil(fraction * n)`` buses are drawn (capped by the candidates); the
    slack bus and buses whose angle is within ``ANGLE_MARGIN`` of +-pi/2 are
    never candidates. Angles are relative to the slack bus.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"PMU fraction {fraction} outside [0, 1]")
    n = len(v_true)
    angles = np.angle(v_true * np.conj(v_true[slack]) / abs(v_true[slack]))
    have = {meas.location for meas in mset.of_kind(MeterKind.V_ANGLE)}
    candidates = [
        meas.location
        for meas in mset.of_kind(MeterKind.V_MAGNITUDE)
        if meas.location != slack
        and meas.location not in have
        and abs(angles[meas.location]) < math.pi / 2 - ANGLE_MARGIN
    ]
    k = min(len(candidates), placement_count(fraction, n))
    if k == 0:
        return mset
    rng = np.random.default_rng(seed)
    chosen = sorted(candidates[c] for c in rng.choice(len(candidates), size=k, replace=False))
    extra = tuple(Measurement(MeterKind.V_ANGLE, int(i), float(angles[i]), 0.0) for i in chosen)
    return replace(mset, measurements=mset.measurements + extra, observable=None)


def check_observability(mset: MeasurementSet, adm: AdmittanceSet) -> bool:
    """Full column rank of the measurement Jacobian at flat start (slack angle removed)."""
    from .wls import StateVector, wls_jacobian

    n = adm.n
    if mset.m < 2 * n - 1:
        return False
    jac = wls_jacobian(StateVector.flat(n, adm.slack), mset, adm)
    s = np.linalg.svd(jac, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return False
    return bool(np.sum(s > 1e-8 * s[0]) == 2 * n - 1)
