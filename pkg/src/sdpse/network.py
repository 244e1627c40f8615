"""Network cases and admittance matrices.

Two input formats are understood:

* the canonical JSON schema (per-unit quantities, angles in degrees)::

      {"base_mva": 100,
       "buses":    [{"id": 1, "kind": "slack", "p_demand": 0.0, "q_demand": 0.0,
                     "g_shunt": 0.0, "b_shunt": 0.0,
                     "v_mag_setpoint": 1.0, "v_ang_setpoint": 0.0}, ...],
       "branches": [{"from_bus": 1, "to_bus": 2, "r": 0.01, "x": 0.1,
                     "b_charge": 0.0, "tap": 1.0, "shift": 0.0,
                     "in_service": true}, ...],
       "gens":     [{"bus": 1, "p_gen": 0.0, "q_gen": 0.0, "v_setpoint": 1.0}]}

* MATPOWER-style ``.m`` text, of which only ``baseMVA``, ``bus``, ``gen`` and
  ``branch`` are read (MW/MVAr quantities are divided by ``baseMVA``).

Bus ids in files are external numbers; everything inside :class:`NetworkCase`
uses contiguous 0-based indices and keeps ``Bus.id`` for reporting.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import CaseError

BUS_KINDS = ("slack", "PV", "PQ")


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str
    p_demand: float = 0.0
    q_demand: float = 0.0
    g_shunt: float = 0.0
    b_shunt: float = 0.0
    v_mag_setpoint: float = 1.0
    v_ang_setpoint: float = 0.0  # radians


@dataclass(frozen=True)
class Branch:
    from_bus: int  # internal index
    to_bus: int
    r: float
    x: float
    b_charge: float = 0.0
    tap: float = 1.0
    shift: float = 0.0  # radians
    in_service: bool = True


@dataclass(frozen=True)
class Generator:
    bus: int  # internal index
    p_gen: float
    q_gen: float
    v_setpoint: float


@dataclass(frozen=True)
class NetworkCase:
    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    slack_index: int
    name: str = ""

    @property
    def n(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    def scheduled_injection(self) -> np.ndarray:
        """Net scheduled complex injection (generation minus load) per bus."""
        s = np.array([-(b.p_demand + 1j * b.q_demand) for b in self.buses], dtype=complex)
        for g in self.generators:
            s[g.bus] += g.p_gen + 1j * g.q_gen
        return s

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "base_mva": self.base_mva,
            "buses": [
                {
                    "id": b.id,
                    "kind": b.kind,
                    "p_demand": b.p_demand,
                    "q_demand": b.q_demand,
                    "g_shunt": b.g_shunt,
                    "b_shunt": b.b_shunt,
                    "v_mag_setpoint": b.v_mag_setpoint,
                    "v_ang_setpoint": math.degrees(b.v_ang_setpoint),
                }
                for b in self.buses
            ],
            "branches": [
                {
                    "from_bus": self.buses[br.from_bus].id,
                    "to_bus": self.buses[br.to_bus].id,
                    "r": br.r,
                    "x": br.x,
                    "b_charge": br.b_charge,
                    "tap": br.tap,
                    "shift": math.degrees(br.shift),
                    "in_service": br.in_service,
                }
                for br in self.branches
            ],
            "gens": [
                {
                    "bus": self.buses[g.bus].id,
                    "p_gen": g.p_gen,
                    "q_gen": g.q_gen,
                    "v_setpoint": g.v_setpoint,
                }
                for g in self.generators
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


@dataclass(frozen=True)
class AdmittanceSet:
    """Bus and branch-end admittance matrices.

    ``y_from[l] @ v`` is the current leaving the from-end of branch ``l`` and
    ``y_to[l] @ v`` the current leaving its to-end. Out-of-service branches
    keep their row index but have all-zero rows.
    """

    y_bus: np.ndarray
    y_from: np.ndarray
    y_to: np.ndarray
    from_idx: np.ndarray
    to_idx: np.ndarray
    slack: int = 0

    @property
    def n(self) -> int:
        return self.y_bus.shape[0]

    @property
    def n_branch(self) -> int:
        return self.y_from.shape[0]

    def end_matrix(self, end: str) -> tuple[np.ndarray, np.ndarray]:
        """(row matrix, bus index of that end) for ``end`` in {from, to}."""
        if end == "from":
            return self.y_from, self.from_idx
        if end == "to":
            return self.y_to, self.to_idx
        raise ValueError(f"unknown branch end {end!r}")


# --------------------------------------------------------------------------
# construction / validation


def _finalize(base_mva, buses, branches, generators, name) -> NetworkCase:
    slack = [i for i, b in enumerate(buses) if b.kind == "slack"]
    if not slack:
        raise CaseError("missing slack bus")
    if len(slack) > 1:
        ids = ", ".join(str(buses[i].id) for i in slack)
        raise CaseError(f"multiple slack buses ({ids})")
    for b in buses:
        if b.kind in ("slack", "PV") and not b.v_mag_setpoint > 0:
            raise CaseError(f"bus {b.id}: voltage setpoint must be positive")
    for k, br in enumerate(branches):
        if br.from_bus == br.to_bus:
            raise CaseError(f"branch {k}: from_bus == to_bus ({buses[br.from_bus].id})")
        if br.r == 0 and br.x == 0:
            raise CaseError(f"branch {k}: zero series impedance")
        if not br.tap > 0:
            raise CaseError(f"branch {k}: tap must be positive")
    n = len(buses)
    live = [br for br in branches if br.in_service]
    if n > 1:
        graph = sp.coo_matrix(
            (np.ones(len(live)), ([br.from_bus for br in live], [br.to_bus for br in live])),
            shape=(n, n),
        )
        ncomp, labels = connected_components(graph, directed=False)
        if ncomp > 1:
            island = [buses[i].id for i in range(n) if labels[i] != labels[slack[0]]]
            raise CaseError(f"disconnected network: buses {island} not connected to the slack bus")
    return NetworkCase(
        base_mva=float(base_mva),
        buses=tuple(buses),
        branches=tuple(branches),
        generators=tuple(generators),
        slack_index=slack[0],
        name=name,
    )


def _index_buses(ids: list[int]) -> dict[int, int]:
    index: dict[int, int] = {}
    for i, bid in enumerate(ids):
        if bid in index:
            raise CaseError(f"duplicate bus id {bid}")
        index[bid] = i
    return index


def _lookup(index: dict[int, int], bid, where: str) -> int:
    try:
        return index[int(bid)]
    except (KeyError, TypeError, ValueError):
        raise CaseError(f"{where}: unknown bus {bid!r}") from None


def _parse_json(text: str, name: str) -> NetworkCase:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseError(f"JSON syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise CaseError("top level must be an object")

    def get(obj, key, where, default=None, conv=float):
        if key not in obj:
            if default is None:
                raise CaseError(f"{where}: missing field {key!r}")
            return default
        try:
            return conv(obj[key])
        except (TypeError, ValueError):
            raise CaseError(f"{where}.{key}: invalid value {obj[key]!r}") from None

    base_mva = get(data, "base_mva", "case", 100.0)
    raw_buses = data.get("buses")
    if not isinstance(raw_buses, list) or not raw_buses:
        raise CaseError("case: 'buses' must be a non-empty list")
    index = _index_buses([get(b, "id", f"buses[{i}]", conv=int) for i, b in enumerate(raw_buses)])

    buses = []
    for i, b in enumerate(raw_buses):
        where = f"buses[{i}]"
        kind = b.get("kind", "PQ")
        if kind not in BUS_KINDS:
            raise CaseError(f"{where}.kind: expected one of {BUS_KINDS}, got {kind!r}")
        buses.append(
            Bus(
                id=int(b["id"]),
                kind=kind,
                p_demand=get(b, "p_demand", where, 0.0),
                q_demand=get(b, "q_demand", where, 0.0),
                g_shunt=get(b, "g_shunt", where, 0.0),
                b_shunt=get(b, "b_shunt", where, 0.0),
                v_mag_setpoint=get(b, "v_mag_setpoint", where, 1.0),
                v_ang_setpoint=math.radians(get(b, "v_ang_setpoint", where, 0.0)),
            )
        )

    branches = []
    for i, br in enumerate(data.get("branches", [])):
        where = f"branches[{i}]"
        branches.append(
            Branch(
                from_bus=_lookup(index, br.get("from_bus"), f"{where}.from_bus"),
                to_bus=_lookup(index, br.get("to_bus"), f"{where}.to_bus"),
                r=get(br, "r", where),
                x=get(br, "x", where),
                b_charge=get(br, "b_charge", where, 0.0),
                tap=get(br, "tap", where, 1.0),
                shift=math.radians(get(br, "shift", where, 0.0)),
                in_service=bool(br.get("in_service", True)),
            )
        )

    gens = []
    for i, g in enumerate(data.get("gens", [])):
        where = f"gens[{i}]"
        k = _lookup(index, g.get("bus"), f"{where}.bus")
        gens.append(
            Generator(
                bus=k,
                p_gen=get(g, "p_gen", where, 0.0),
                q_gen=get(g, "q_gen", where, 0.0),
                v_setpoint=get(g, "v_setpoint", where, buses[k].v_mag_setpoint),
            )
        )
    return _finalize(base_mva, buses, branches, gens, name or str(data.get("name", "")))


_MP_TABLE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;", re.S)
_MP_SCALAR = re.compile(r"mpc\.baseMVA\s*=\s*([^;]+);")


def _matpower_rows(text: str, key: str, body_start: int, body: str, ncols: int) -> list[list[float]]:
    rows = []
    line = text.count("\n", 0, body_start) + 1
    for raw_line in body.split("\n"):
        content = raw_line.split("%", 1)[0]
        for chunk in content.split(";"):
            if not chunk.strip():
                continue
            try:
                vals = [float(tok) for tok in chunk.replace(",", " ").split()]
            except ValueError:
                raise CaseError(f"line {line}: mpc.{key}: non-numeric entry in {chunk.strip()!r}") from None
            if len(vals) < ncols:
                raise CaseError(f"line {line}: mpc.{key}: expected at least {ncols} columns, got {len(vals)}")
            rows.append(vals)
        line += 1
    return rows


def _parse_matpower(text: str, name: str) -> NetworkCase:
    m = _MP_SCALAR.search(text)
    if not m:
        raise CaseError("missing mpc.baseMVA")
    try:
        base = float(m.group(1))
    except ValueError:
        raise CaseError(f"line {text.count(chr(10), 0, m.start()) + 1}: invalid baseMVA {m.group(1)!r}") from None

    tables = {}
    for t in _MP_TABLE.finditer(text):
        key = t.group(1)
        ncols = {"bus": 13, "gen": 10, "branch": 11}.get(key)
        if ncols is not None:
            tables[key] = _matpower_rows(text, key, t.start(2), t.group(2), ncols)
    for key in ("bus", "branch"):
        if key not in tables:
            raise CaseError(f"missing mpc.{key} table")

    index = _index_buses([int(r[0]) for r in tables["bus"]])
    # PV/ref voltage setpoints come from in-service generators (first one wins)
    vg: dict[int, float] = {}
    gens = []
    for r in tables.get("gen", []):
        k = _lookup(index, int(r[0]), "mpc.gen")
        if r[7] <= 0:
            continue
        vg.setdefault(k, r[5])
        gens.append(Generator(bus=k, p_gen=r[1] / base, q_gen=r[2] / base, v_setpoint=r[5]))

    kinds = {1: "PQ", 2: "PV", 3: "slack"}
    buses = []
    for i, r in enumerate(tables["bus"]):
        code = int(r[1])
        if code not in kinds:
            raise CaseError(f"bus {int(r[0])}: unsupported bus type {code}")
        kind = kinds[code]
        if kind == "PV" and i not in vg:
            kind = "PQ"
        buses.append(
            Bus(
                id=int(r[0]),
                kind=kind,
                p_demand=r[2] / base,
                q_demand=r[3] / base,
                g_shunt=r[4] / base,
                b_shunt=r[5] / base,
                v_mag_setpoint=vg.get(i, r[7]) if kind != "PQ" else r[7],
                v_ang_setpoint=math.radians(r[8]),
            )
        )

    branches = []
    for r in tables["branch"]:
        branches.append(
            Branch(
                from_bus=_lookup(index, int(r[0]), "mpc.branch"),
                to_bus=_lookup(index, int(r[1]), "mpc.branch"),
                r=r[2],
                x=r[3],
                b_charge=r[4],
                tap=r[8] if r[8] != 0 else 1.0,
                shift=math.radians(r[9]),
                in_service=r[10] > 0,
            )
        )
    return _finalize(base, buses, branches, gens, name)


def parse_case(text: str, format: str = "json", name: str = "") -> NetworkCase:
    """Parse case-file contents in ``format`` ('json' or 'matpower')."""
    if format == "json":
        return _parse_json(text, name)
    if format == "matpower":
        return _parse_matpower(text, name)
    raise ValueError(f"unknown case format {format!r}")


def bundled_cases() -> list[str]:
    root = resources.files("sdpse") / "cases"
    return sorted(p.name.rsplit(".", 1)[0] for p in root.iterdir() if p.name.endswith(".json"))


def load_case(spec: str | Path) -> NetworkCase:
    """Load a case from a path, or by bundled name (``ieee14``, ``ieee14.json``)."""
    path = Path(spec)
    if path.exists():
        fmt = "matpower" if path.suffix == ".m" else "json"
        return parse_case(path.read_text(), fmt, name=path.stem)
    stem = path.name.rsplit(".", 1)[0] if path.suffix in (".json", ".m") else path.name
    res = resources.files("sdpse") / "cases" / f"{stem}.json"
    if not res.is_file():
        raise CaseError(f"case {str(spec)!r} not found (bundled: {', '.join(bundled_cases())})")
    return parse_case(res.read_text(), "json", name=stem)


# --------------------------------------------------------------------------
# admittance


def build_admittance(case: NetworkCase) -> AdmittanceSet:
    n, nl = case.n, case.n_branch
    y_bus = np.zeros((n, n), dtype=complex)
    y_from = np.zeros((nl, n), dtype=complex)
    y_to = np.zeros((nl, n), dtype=complex)
    f = np.array([br.from_bus for br in case.branches], dtype=int)
    t = np.array([br.to_bus for br in case.branches], dtype=int)

    for k, br in enumerate(case.branches):
        if not br.in_service:
            continue
        ys = 1.0 / complex(br.r, br.x)
        ratio = br.tap * np.exp(1j * br.shift)
        ytt = ys + 0.5j * br.b_charge
        yff = ytt / (ratio * np.conj(ratio))
        yft = -ys / np.conj(ratio)
        ytf = -ys / ratio
        i, j = br.from_bus, br.to_bus
        y_from[k, i] += yff
        y_from[k, j] += yft
        y_to[k, i] += ytf
        y_to[k, j] += ytt
        y_bus[i, i] += yff
        y_bus[i, j] += yft
        y_bus[j, i] += ytf
        y_bus[j, j] += ytt

    for i, b in enumerate(case.buses):
        y_bus[i, i] += b.g_shunt + 1j * b.b_shunt

    return AdmittanceSet(y_bus=y_bus, y_from=y_from, y_to=y_to, from_idx=f, to_idx=t, slack=case.slack_index)
