"""Newton-Raphson AC power flow in polar coordinates.

Reactive limits at PV buses are not enforced.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PowerFlowError
from .network import AdmittanceSet, NetworkCase, build_admittance


@dataclass(frozen=True)
class PowerFlowSolution:
    v: np.ndarray
    converged: bool
    iterations: int
    max_mismatch: float


def complex_injections(v: np.ndarray, adm: AdmittanceSet) -> np.ndarray:
    """Bus injections ``v * conj(Y_bus v)``; real part P, imaginary part Q."""
    return v * np.conj(adm.y_bus @ v)


def line_flows(v: np.ndarray, adm: AdmittanceSet, end: str = "from") -> np.ndarray:
    """Complex power entering each branch at ``end``."""
    y, idx = adm.end_matrix(end)
    return v[idx] * np.conj(y @ v)


def dsbus_dv(y_bus: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Partial derivatives of bus injections w.r.t. angles and magnitudes."""
    ibus = y_bus @ v
    diag_v = np.diag(v)
    vnorm = v / np.abs(v)
    ds_dva = 1j * diag_v @ np.conj(np.diag(ibus) - y_bus @ diag_v)
    ds_dvm = diag_v @ np.conj(y_bus @ np.diag(vnorm)) + np.diag(np.conj(ibus) * vnorm)
    return ds_dva, ds_dvm


def dsbr_dv(y_end: np.ndarray, idx: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Partial derivatives of branch-end flows w.r.t. angles and magnitudes."""
    nl, n = y_end.shape
    i_end = y_end @ v
    v_end = v[idx]
    vnorm = v / np.abs(v)
    incidence = np.zeros((nl, n))
    incidence[np.arange(nl), idx] = 1.0
    ds_dva = 1j * (
        np.conj(i_end)[:, None] * incidence * v[None, :] - v_end[:, None] * np.conj(y_end * v[None, :])
    )
    ds_dvm = v_end[:, None] * np.conj(y_end * vnorm[None, :]) + np.conj(i_end)[:, None] * incidence * vnorm[None, :]
    return ds_dva, ds_dvm


def flat_start(case: NetworkCase) -> np.ndarray:
    vm = np.ones(case.n)
    va = np.zeros(case.n)
    for i, b in enumerate(case.buses):
        if b.kind in ("slack", "PV"):
            vm[i] = b.v_mag_setpoint
    va[case.slack_index] = case.buses[case.slack_index].v_ang_setpoint
    return vm * np.exp(1j * va)


def solve_newton(
    case: NetworkCase,
    tol: float = 1e-8,
    max_iter: int = 20,
    adm: AdmittanceSet | None = None,
    v0: np.ndarray | None = None,
) -> PowerFlowSolution:
    if tol <= 0:
        raise ValueError("tol must be positive")
    adm = adm if adm is not None else build_admittance(case)
    kinds = [b.kind for b in case.buses]
    pv = np.array([i for i, k in enumerate(kinds) if k == "PV"], dtype=int)
    pq = np.array([i for i, k in enumerate(kinds) if k == "PQ"], dtype=int)
    pvpq = np.r_[pv, pq]
    s_sched = case.scheduled_injection()

    v = flat_start(case) if v0 is None else np.asarray(v0, dtype=complex).copy()
    vm, va = np.abs(v), np.angle(v)

    def mismatch(v):
        ds = complex_injections(v, adm) - s_sched
        return np.r_[ds[pvpq].real, ds[pq].imag]

    f = mismatch(v)
    norm = np.max(np.abs(f)) if f.size else 0.0
    it = 0
    while norm > tol and it < max_iter:
        it += 1
        ds_dva, ds_dvm = dsbus_dv(adm.y_bus, v)
        jac = np.block(
            [
                [ds_dva[np.ix_(pvpq, pvpq)].real, ds_dvm[np.ix_(pvpq, pq)].real],
                [ds_dva[np.ix_(pq, pvpq)].imag, ds_dvm[np.ix_(pq, pq)].imag],
            ]
        )
        try:
            dx = -np.linalg.solve(jac, f)
        except np.linalg.LinAlgError:
            raise PowerFlowError(f"singular power-flow Jacobian at iteration {it}") from None
        va[pvpq] += dx[: len(pvpq)]
        vm[pq] += dx[len(pvpq) :]
        v = vm * np.exp(1j * va)
        f = mismatch(v)
        norm = np.max(np.abs(f)) if f.size else 0.0
        if not np.isfinite(norm):
            break

    return PowerFlowSolution(v=v, converged=bool(norm <= tol), iterations=it, max_mismatch=float(norm))
