"""Gauss-Newton weighted-least-squares state estimation (the classical baseline).

State columns in every Jacobian are ordered as
``[angle of each non-slack bus (ascending index), magnitude of every bus]``.
The angle reference is fixed by deleting the slack-angle column, which plays
the same role as the reference constraint in the relaxation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import EstimationError
from .measurement import MeasurementSet, MeterKind
from .network import AdmittanceSet
from .powerflow import dsbr_dv, dsbus_dv

MAX_HALVINGS = 10
# objective changes below this relative level are round-off, not ascent
ROUNDOFF = 64 * np.finfo(float).eps
# Gauss-Newton model decreases below this (relative) are taken without a line search
TINY_DECREASE = 1e-10


@dataclass(frozen=True)
class StateVector:
    angles: np.ndarray
    magnitudes: np.ndarray
    slack: int = 0

    def __post_init__(self):
        if self.angles[self.slack] != 0:
            raise ValueError("slack angle must be exactly 0")
        if np.any(self.magnitudes <= 0):
            raise ValueError("voltage magnitudes must be positive")

    @property
    def n(self) -> int:
        return len(self.angles)

    @property
    def v(self) -> np.ndarray:
        return self.magnitudes * np.exp(1j * self.angles)

    @classmethod
    def flat(cls, n: int, slack: int = 0) -> "StateVector":
        return cls(np.zeros(n), np.ones(n), slack)

    @classmethod
    def from_complex(cls, v: np.ndarray, slack: int = 0) -> "StateVector":
        """Rotate ``v`` so the slack bus sits at angle 0."""
        v = np.asarray(v, dtype=complex)
        ang = np.angle(v) - np.angle(v[slack])
        ang = (ang + np.pi) % (2 * np.pi) - np.pi
        ang[slack] = 0.0
        return cls(ang, np.abs(v), slack)

    def to_vector(self) -> np.ndarray:
        keep = np.arange(self.n) != self.slack
        return np.r_[self.angles[keep], self.magnitudes]

    def with_vector(self, x: np.ndarray) -> "StateVector":
        keep = np.arange(self.n) != self.slack
        ang = np.zeros(self.n)
        ang[keep] = x[: self.n - 1]
        return StateVector(ang, np.array(x[self.n - 1 :]), self.slack)


@dataclass(frozen=True)
class EstimationResult:
    state: StateVector
    objective: float
    iterations: int
    converged: bool
    residuals: np.ndarray


def measurement_function(v: np.ndarray, mset: MeasurementSet, adm: AdmittanceSet) -> np.ndarray:
    s_bus = v * np.conj(adm.y_bus @ v)
    flows = {}
    h = np.empty(mset.m)
    for i, meas in enumerate(mset):
        kind, loc = meas.kind, meas.location
        if kind is MeterKind.P_INJECTION:
            h[i] = s_bus[loc].real
        elif kind is MeterKind.Q_INJECTION:
            h[i] = s_bus[loc].imag
        elif kind.is_flow:
            br, end = loc
            if end not in flows:
                y, idx = adm.end_matrix(end)
                flows[end] = v[idx] * np.conj(y @ v)
            s = flows[end][br]
            h[i] = s.real if kind is MeterKind.P_FLOW else s.imag
        elif kind is MeterKind.V_MAGNITUDE:
            h[i] = abs(v[loc])
        else:
            h[i] = np.angle(v[loc])
    return h


def evaluate_h(state: StateVector, mset: MeasurementSet, adm: AdmittanceSet) -> np.ndarray:
    """Residual vector z - h(state)."""
    return mset.z - measurement_function(state.v, mset, adm)


def wls_jacobian(state: StateVector, mset: MeasurementSet, adm: AdmittanceSet) -> np.ndarray:
    """Analytic d h / d x, shape (m, 2n-1)."""
    n = state.n
    v = state.v
    keep = np.arange(n) != state.slack
    needs_bus = any(not meas.kind.is_flow for meas in mset)
    if needs_bus:
        dsb_va, dsb_vm = dsbus_dv(adm.y_bus, v)
    flow_d = {}
    jac = np.zeros((mset.m, 2 * n))
    for i, meas in enumerate(mset):
        kind, loc = meas.kind, meas.location
        if kind is MeterKind.P_INJECTION:
            jac[i, :n], jac[i, n:] = dsb_va[loc].real, dsb_vm[loc].real
        elif kind is MeterKind.Q_INJECTION:
            jac[i, :n], jac[i, n:] = dsb_va[loc].imag, dsb_vm[loc].imag
        elif kind.is_flow:
            br, end = loc
            if end not in flow_d:
                y, idx = adm.end_matrix(end)
                flow_d[end] = dsbr_dv(y, idx, v)
            d_va, d_vm = flow_d[end]
            part = np.real if kind is MeterKind.P_FLOW else np.imag
            jac[i, :n], jac[i, n:] = part(d_va[br]), part(d_vm[br])
        elif kind is MeterKind.V_MAGNITUDE:
            jac[i, n + loc] = 1.0
        else:
            jac[i, loc] = 1.0
    return jac[:, np.r_[np.flatnonzero(keep), n + np.arange(n)]]


def _solve_gain(gain: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(gain), rhs)
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-10 * max(1.0, float(np.max(np.diag(gain))))
    try:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(gain + jitter * np.eye(len(gain))), rhs)
    except np.linalg.LinAlgError:
        raise EstimationError("singular gain matrix: measurement set is not observable") from None


def solve_wls(
    mset: MeasurementSet,
    adm: AdmittanceSet,
    init: StateVector | None = None,
    tol: float = 1e-12,
    max_iter: int = 50,
) -> EstimationResult:
    """Damped Gauss-Newton on J(x) = sum (z_i - h_i(x))^2 / sigma_i^2.

    Noise-free meters (sigma = 0, i.e. PMU angles) are not weighted; their
    bus angles are pinned to the measured value and removed from the unknowns.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = adm.n
    state = init if init is not None else StateVector.flat(n, adm.slack)

    sig = mset.sigma
    weighted = sig > 0
    pinned = {}
    for meas in mset:
        if meas.sigma == 0 and meas.kind is MeterKind.V_ANGLE:
            pinned[meas.location] = meas.value
    x = state.to_vector()
    non_slack = [i for i in range(n) if i != adm.slack]
    free = np.ones(2 * n - 1, dtype=bool)
    for bus, ang in pinned.items():
        if bus == adm.slack:
            continue
        col = non_slack.index(bus)
        free[col] = False
        x[col] = ang
    state = state.with_vector(x)
    winv = 1.0 / sig[weighted] ** 2

    def objective(st):
        r = evaluate_h(st, mset, adm)
        return float(np.sum(r[weighted] ** 2 * winv)), r

    obj, r = objective(state)
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        jac = wls_jacobian(state, mset, adm)[np.ix_(weighted, free)]
        gain = jac.T @ (winv[:, None] * jac)
        grad = jac.T @ (winv * r[weighted])
        dx = _solve_gain(gain, grad)
        if not np.all(np.isfinite(dx)):
            raise EstimationError(f"non-finite Gauss-Newton step at iteration {it}")
        step = 1.0
        if float(grad @ dx) < TINY_DECREASE * (1.0 + obj):
            x_new = x.copy()
            x_new[free] += dx
            x, state = x_new, state.with_vector(x_new)
            obj, r = objective(state)
            if np.max(np.abs(dx)) < tol:
                converged = True
                break
            continue
        for _ in range(MAX_HALVINGS + 1):
            x_new = x.copy()
            x_new[free] += step * dx
            if np.all(x_new[n - 1 :] > 0):
                cand = state.with_vector(x_new)
                obj_new, r_new = objective(cand)
                if obj_new <= obj + ROUNDOFF * max(obj, 1.0):
                    break
            step *= 0.5
        else:
            # no descent along the Gauss-Newton direction: stationary to working precision
            converged = bool(np.max(np.abs(dx)) < np.sqrt(tol))
            break
        x, state, obj, r = x_new, cand, obj_new, r_new
        if np.max(np.abs(step * dx)) < tol:
            converged = True
            break

    if not np.isfinite(obj):
        raise EstimationError("divergent estimate (non-finite objective)")
    return EstimationResult(state=state, objective=obj, iterations=it, converged=converged, residuals=r)


def gradient_norm(result: EstimationResult, mset: MeasurementSet, adm: AdmittanceSet) -> float:
    """Infinity norm of J^T R^-1 r over the free coordinates at ``result``."""
    sig = mset.sigma
    weighted = sig > 0
    jac = wls_jacobian(result.state, mset, adm)
    pinned = {meas.location for meas in mset if meas.sigma == 0 and meas.kind is MeterKind.V_ANGLE}
    non_slack = [i for i in range(adm.n) if i != adm.slack]
    free = np.ones(jac.shape[1], dtype=bool)
    for bus in pinned:
        if bus in non_slack:
            free[non_slack.index(bus)] = False
    g = jac[np.ix_(weighted, free)].T @ (result.residuals[weighted] / sig[weighted] ** 2)
    return float(np.max(np.abs(g))) if g.size else 0.0
