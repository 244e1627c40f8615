"""Quadratic-form matrices of the measurement functions and the relaxed problem data.

With ``X = [real(v); imag(v)]`` (length 2n) every conventional measurement is a
quadratic form ``tr(H X X^T)``. Replacing ``X X^T`` by a PSD matrix ``W`` and
dropping rank(W) = 1 gives the convex problem::

    min  sum_i alpha_i
    s.t. [[alpha_i - z_i^2/s_i^2 + 2 z_i tr(H_i W)/s_i^2, -tr(H_i W)/s_i],
          [-tr(H_i W)/s_i,                                 1           ]] >= 0
         W >= 0,  tr(M0 W) = 0,  tr(H_a W) = 0 for each PMU angle.

The 2x2 blocks are formed by the solver; this module only holds
``(H_i, z_i, sigma_i)`` triples.

Voltage-magnitude meters read |V| while ``tr(H_vm W)`` is |V|^2. Two models:

* ``"exact"`` (default): the term ``(z - sqrt(u))^2 / sigma^2`` with
  ``u = tr(H_vm W)`` is convex in ``u`` and equals
  ``min {(u - 2 z s + z^2) / sigma^2 : s^2 <= u}``, so it enters through a
  2x2 block ``[[u, s], [s, 1]] >= 0``. On rank-1 W the relaxed objective then
  coincides with the WLS objective term by term.
* ``"squared"``: ``z = |V|^2`` and ``sigma = 2 |V| sigma_V`` (first-order
  propagation) in the ordinary quadratic block.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .measurement import ANGLE_MARGIN, MeasurementSet, MeterKind
from .network import AdmittanceSet


@dataclass(frozen=True)
class HMatrix:
    kind: str
    matrix: sp.csr_matrix
    location: object = None

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def trace(self, w: np.ndarray) -> float:
        """tr(H W) for a dense square W."""
        return float(self.matrix.multiply(np.asarray(w).T).sum())

    def quadratic(self, x: np.ndarray) -> float:
        """tr(H x x^T) = x^T H x."""
        return float(x @ (self.matrix @ x))

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def triplets(self) -> list[list]:
        coo = self.matrix.tocoo()
        return [[int(i), int(j), float(v)] for i, j, v in zip(coo.row, coo.col, coo.data)]


def stack_voltage(v: np.ndarray) -> np.ndarray:
    """X = [real(v); imag(v)]."""
    return np.r_[np.real(v), np.imag(v)]


def _sym(a: sp.spmatrix) -> sp.csr_matrix:
    out = (0.5 * (a + a.T)).tocsr()
    out.eliminate_zeros()
    return out


def _quadratic_pair(y: sp.spmatrix) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """(H_r, H_q) with x^T H_r x = Re s, x^T H_q x = Im s for s = v^T conj(Y v) style forms."""
    yt = y.T
    re_sum, im_sum = (y + yt).real, (y + yt).imag
    re_dif, im_dif = (y - yt).real, (y - yt).imag
    h_r = 0.5 * sp.bmat([[re_sum, -im_dif], [im_dif, re_sum]])
    h_q = -0.5 * sp.bmat([[im_sum, re_dif], [-re_dif, im_sum]])
    return _sym(h_r), _sym(h_q)


def build_injection_matrices(k: int, adm: AdmittanceSet) -> tuple[HMatrix, HMatrix]:
    n = adm.n
    row = sp.csr_matrix(adm.y_bus[k : k + 1, :])
    y_k = sp.vstack([sp.csr_matrix((k, n)), row, sp.csr_matrix((n - k - 1, n))]).tocsr()
    h_r, h_q = _quadratic_pair(y_k)
    return (
        HMatrix(MeterKind.P_INJECTION.value, h_r, k),
        HMatrix(MeterKind.Q_INJECTION.value, h_q, k),
    )


def build_flow_matrices(branch: int, end: str, adm: AdmittanceSet) -> tuple[HMatrix, HMatrix]:
    n = adm.n
    y_end, idx = adm.end_matrix(end)
    bus = int(idx[branch])
    row = sp.csr_matrix(y_end[branch : branch + 1, :])
    y_l = sp.vstack([sp.csr_matrix((bus, n)), row, sp.csr_matrix((n - bus - 1, n))]).tocsr()
    h_p, h_q = _quadratic_pair(y_l)
    loc = (branch, end)
    return HMatrix(MeterKind.P_FLOW.value, h_p, loc), HMatrix(MeterKind.Q_FLOW.value, h_q, loc)


def build_vmag_matrix(k: int, n: int) -> HMatrix:
    m = sp.csr_matrix(([1.0, 1.0], ([k, n + k], [k, n + k])), shape=(2 * n, 2 * n))
    return HMatrix(MeterKind.V_MAGNITUDE.value, m, k)


def build_angle_matrix(i: int, delta: float, n: int, eps: float = ANGLE_MARGIN) -> HMatrix:
    """Encodes Vd_i^2 tan(delta) - Vq_i Vd_i = 0 as tr(H W) = 0 (symmetrized)."""
    if abs(delta) >= math.pi / 2 - eps:
        raise ValueError(f"angle {delta:.6g} rad at bus {i} too close to +-pi/2 for the tangent form")
    rows = [i, i, n + i]
    cols = [i, n + i, i]
    vals = [math.tan(delta), -0.5, -0.5]
    m = sp.csr_matrix((vals, (rows, cols)), shape=(2 * n, 2 * n))
    m.eliminate_zeros()
    return HMatrix("angle_pmu", m, i)


def reference_matrix(slack: int, n: int) -> HMatrix:
    m = sp.csr_matrix(([1.0], ([n + slack], [n + slack])), shape=(2 * n, 2 * n))
    return HMatrix("reference", m, slack)


@dataclass(frozen=True)
class MeasurementTerm:
    h: HMatrix
    z: float
    sigma: float
    model: str = "quadratic"  # or "magnitude": z is |V| and tr(H W) is |V|^2

    def residual_cost(self, t: float) -> float:
        """Weighted squared residual for the quantity t = tr(H W)."""
        if self.model == "magnitude":
            return (self.z - math.sqrt(max(t, 0.0))) ** 2 / self.sigma**2
        return (self.z - t) ** 2 / self.sigma**2


@dataclass(frozen=True)
class SdpProblem:
    n: int
    slack: int
    terms: tuple[MeasurementTerm, ...]
    m0: HMatrix
    angle_constraints: tuple[HMatrix, ...] = ()

    @property
    def m(self) -> int:
        return len(self.terms)

    @property
    def h_list(self) -> list[HMatrix]:
        return [t.h for t in self.terms]

    def scaled(self, c: float) -> "SdpProblem":
        """Same problem with every sigma multiplied by ``c``."""
        terms = tuple(MeasurementTerm(t.h, t.z, t.sigma * c, t.model) for t in self.terms)
        return SdpProblem(self.n, self.slack, terms, self.m0, self.angle_constraints)

    def to_json(self) -> str:
        def enc(h: HMatrix):
            loc = list(h.location) if isinstance(h.location, tuple) else h.location
            return {"kind": h.kind, "location": loc, "entries": h.triplets()}

        return json.dumps(
            {
                "n": self.n,
                "slack": self.slack,
                "terms": [{**enc(t.h), "z": t.z, "sigma": t.sigma, "model": t.model} for t in self.terms],
                "m0": enc(self.m0),
                "angle_constraints": [enc(h) for h in self.angle_constraints],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "SdpProblem":
        d = json.loads(text)
        dim = 2 * d["n"]

        def dec(e):
            ent = np.array(e["entries"], dtype=float).reshape(-1, 3)
            mat = sp.csr_matrix((ent[:, 2], (ent[:, 0].astype(int), ent[:, 1].astype(int))), shape=(dim, dim))
            loc = tuple(e["location"]) if isinstance(e["location"], list) else e["location"]
            return HMatrix(e["kind"], mat, loc)

        return cls(
            n=d["n"],
            slack=d["slack"],
            terms=tuple(
                MeasurementTerm(dec(t), float(t["z"]), float(t["sigma"]), t.get("model", "quadratic"))
                for t in d["terms"]
            ),
            m0=dec(d["m0"]),
            angle_constraints=tuple(dec(e) for e in d["angle_constraints"]),
        )


def assemble(
    mset: MeasurementSet,
    adm: AdmittanceSet,
    slack: int | None = None,
    vm_model: str = "exact",
) -> SdpProblem:
    """One (H, z, sigma) term per conventional meter, one equality per PMU angle."""
    if vm_model not in ("exact", "squared"):
        raise ValueError(f"unknown vm_model {vm_model!r}")
    slack = adm.slack if slack is None else slack
    n = adm.n
    inj_cache: dict[int, tuple[HMatrix, HMatrix]] = {}
    flow_cache: dict[tuple, tuple[HMatrix, HMatrix]] = {}
    terms = []
    angles = []
    for meas in mset:
        kind = meas.kind
        if kind is MeterKind.V_ANGLE:
            angles.append(build_angle_matrix(meas.location, meas.value, n))
            continue
        if not meas.sigma > 0:
            raise ValueError(f"zero sigma on {kind.value} meter at {meas.location}")
        if kind in (MeterKind.P_INJECTION, MeterKind.Q_INJECTION):
            if meas.location not in inj_cache:
                inj_cache[meas.location] = build_injection_matrices(meas.location, adm)
            h = inj_cache[meas.location][0 if kind is MeterKind.P_INJECTION else 1]
        elif kind.is_flow:
            if meas.location not in flow_cache:
                flow_cache[meas.location] = build_flow_matrices(*meas.location, adm)
            h = flow_cache[meas.location][0 if kind is MeterKind.P_FLOW else 1]
        else:
            h = build_vmag_matrix(meas.location, n)
        if kind is not MeterKind.V_MAGNITUDE:
            terms.append(MeasurementTerm(h, float(meas.value), meas.sigma))
        elif vm_model == "exact":
            terms.append(MeasurementTerm(h, float(meas.value), meas.sigma, "magnitude"))
        else:
            terms.append(MeasurementTerm(h, float(meas.value) ** 2, 2 * abs(meas.value) * meas.sigma))
    return SdpProblem(n=n, slack=slack, terms=tuple(terms), m0=reference_matrix(slack, n), angle_constraints=tuple(angles))
