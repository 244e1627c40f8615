"""Interior-point solution of the relaxed estimation problem.

The relaxation is handed to the Clarabel conic solver. Decision vector::

    x = [svec(W'), alpha_1..alpha_m, r_1..r_m]

where ``W'`` is W with row/column ``n + slack`` removed: ``tr(M0 W) = 0``
together with ``W >= 0`` forces that whole row and column to vanish, and
keeping it would leave the problem without a strictly feasible point.

Every term gets a weighted residual ``r_i`` and the 2x2 PSD block
``[[alpha_i, r_i], [., 1]]`` (``alpha_i >= r_i^2``). This block is congruent
(``T = [[1, z_i/s_i], [0, 1]]``) to the Schur block of the relaxation when
``r_i`` is tied to W by the equality ``sigma_i r_i + tr(H_i W) = z_i``; the
congruent form keeps every right-hand side of order z_i rather than z_i/sigma_i.

An exact magnitude term with ``u = tr(H_i W)`` instead uses
``sigma_i^2 alpha_i + 2 z_i sigma_i r_i + z_i^2 = u``. Minimizing alpha_i over
``r_i`` gives ``r_i = (sqrt(u) - z_i)/sigma_i`` and
``alpha_i = (z_i - sqrt(u))^2/sigma_i^2`` (for z_i > 0), the exact cost.

``svec`` stacks the upper triangle column by column with off-diagonal
entries scaled by sqrt(2), so ``tr(H W) = svec(H) . svec(W)``.

Some sparse placements admit PSD directions D with tr(H_i D) = 0 for every
meter, so the optimal set is unbounded and no backend converges cleanly. When
no uncapped answer certifies, the problem is re-solved with
``tr(W) <= TRACE_CAP_PER_BUS * n``. Any state with RMS magnitude below
sqrt(TRACE_CAP_PER_BUS) pu satisfies the cap, so the capped optimum is still a
lower bound on the WLS objective; ``ConicSolution.trace_cap`` records it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import clarabel
import cvxopt
import numpy as np
import scipy.sparse as sp
from cvxopt import solvers

from .relaxation import SdpProblem

STATUSES = ("optimal", "max_iter", "infeasible", "numerical_failure")
SQRT2 = math.sqrt(2.0)
# the inner solve runs this much tighter than the tolerances the certificate checks
INNER_MARGIN = 0.1
BACKENDS = ("clarabel", "clarabel-short-steps", "cvxopt")
TRACE_CAP_PER_BUS = 4.0

_INFEASIBLE = {"PrimalInfeasible", "DualInfeasible", "AlmostPrimalInfeasible", "AlmostDualInfeasible"}


@dataclass
class ConicSolution:
    w: np.ndarray
    alphas: np.ndarray
    objective: float
    status: str
    residuals: dict = field(default_factory=dict)
    dual: np.ndarray | None = None
    blocks: list[np.ndarray] = field(default_factory=list, repr=False)
    iterations: int = 0
    x: np.ndarray | None = field(default=None, repr=False)
    trace_cap: float | None = None

    def to_json(self, report: "CertificateReport | None" = None) -> str:
        out = {
            "status": self.status,
            "objective": self.objective,
            "alphas": self.alphas.tolist(),
            "w": self.w.tolist(),
            "residuals": self.residuals,
            "iterations": self.iterations,
            "trace_cap": self.trace_cap,
        }
        if report is not None:
            out["certificate"] = report.as_dict()
        return json.dumps(out)

    @classmethod
    def from_json(cls, text: str) -> "ConicSolution":
        d = json.loads(text)
        return cls(
            w=np.array(d["w"], dtype=float),
            alphas=np.array(d["alphas"], dtype=float),
            objective=float(d["objective"]),
            status=d["status"],
            residuals=d.get("residuals", {}),
            iterations=d.get("iterations", 0),
            trace_cap=d.get("trace_cap"),
        )


def _svec_index(dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Row and column of each svec position (upper triangle, column-major)."""
    cols, rows = [], []
    for j in range(dim):
        rows.extend(range(j + 1))
        cols.extend([j] * (j + 1))
    return np.array(rows), np.array(cols)


def svec(mat: np.ndarray) -> np.ndarray:
    r, c = _svec_index(mat.shape[0])
    return np.where(r == c, 1.0, SQRT2) * mat[r, c]


def smat(vec: np.ndarray, dim: int) -> np.ndarray:
    r, c = _svec_index(dim)
    vals = np.where(r == c, 1.0, 1.0 / SQRT2) * vec
    out = np.zeros((dim, dim))
    out[r, c] = vals
    out[c, r] = vals
    return out


@dataclass
class _ConicForm:
    keep: np.ndarray
    nw: int
    nt: int  # length of svec(W')
    a: sp.csc_matrix
    b: np.ndarray
    q: np.ndarray
    cones: list
    n_eq: int
    psd2_rows: list[int]  # first row of each 2x2 cone
    w_row: int  # first row of the W cone; a cap row sits at n_eq when present
    trace_cap: float | None = None


def _conic_form(problem: SdpProblem, trace_cap: float | None = None) -> _ConicForm:
    n, m = problem.n, problem.m
    drop = n + problem.slack
    keep = np.array([i for i in range(2 * n) if i != drop])
    nw = len(keep)
    nt = nw * (nw + 1) // 2
    local = -np.ones(2 * n, dtype=int)
    local[keep] = np.arange(nw)

    def svec_h(mat: sp.spmatrix) -> tuple[np.ndarray, np.ndarray]:
        coo = sp.triu(mat, format="coo")
        li, lj = local[coo.row], local[coo.col]
        ok = (li >= 0) & (lj >= 0) & (coo.data != 0)
        li, lj, v = li[ok], lj[ok], coo.data[ok]
        lo, hi = np.minimum(li, lj), np.maximum(li, lj)
        return hi * (hi + 1) // 2 + lo, v * np.where(lo == hi, 1.0, SQRT2)

    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    b: list[float] = []
    row = 0

    def put(r, c, v):
        c = np.atleast_1d(np.asarray(c, dtype=int))
        rows.append(np.full(len(c), r))
        cols.append(c)
        vals.append(np.atleast_1d(np.asarray(v, dtype=float)))

    for ha in problem.angle_constraints:
        put(row, *svec_h(ha.matrix))
        b.append(0.0)
        row += 1
    for i, term in enumerate(problem.terms):
        hc, hv = svec_h(term.h.matrix)
        if term.model == "magnitude":
            # sigma^2 alpha + 2 z sigma r - tr(H W) = -z^2
            put(row, [nt + i, nt + m + i], [term.sigma**2, 2.0 * term.z * term.sigma])
            put(row, hc, -hv)
            b.append(-term.z**2)
        else:
            # sigma r + tr(H W) = z
            put(row, nt + m + i, term.sigma)
            put(row, hc, hv)
            b.append(term.z)
        row += 1
    n_eq = row
    cones = [clarabel.ZeroConeT(n_eq)] if n_eq else []
    if trace_cap is not None:
        # tr(W') + s = cap, s >= 0
        diag = np.arange(nw)
        put(row, diag * (diag + 1) // 2 + diag, np.ones(nw))
        b.append(float(trace_cap))
        row += 1
        cones.append(clarabel.NonnegativeConeT(1))
    w_row = row

    # s = svec(W') in the PSD cone
    rows.append(row + np.arange(nt))
    cols.append(np.arange(nt))
    vals.append(-np.ones(nt))
    b.extend([0.0] * nt)
    row += nt
    cones.append(clarabel.PSDTriangleConeT(nw))

    psd2_rows = []
    for i in range(m):
        # [[alpha, r], [., 1]]
        psd2_rows.append(row)
        put(row, nt + i, -1.0)
        put(row + 1, nt + m + i, -SQRT2)
        b += [0.0, 0.0, 1.0]
        row += 3
        cones.append(clarabel.PSDTriangleConeT(2))

    nx = nt + 2 * m
    a = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(row, nx)
    )
    a.sum_duplicates()
    q = np.zeros(nx)
    q[nt : nt + m] = 1.0
    return _ConicForm(keep, nw, nt, a, np.array(b), q, cones, n_eq, psd2_rows, w_row, trace_cap)


def _unpack(problem: SdpProblem, form: _ConicForm, x: np.ndarray):
    """W, alphas and the [[alpha, r], [r, 1]] block of every term."""
    n, m = problem.n, problem.m
    w = np.zeros((2 * n, 2 * n))
    w[np.ix_(form.keep, form.keep)] = smat(x[: form.nt], form.nw)
    alphas = x[form.nt : form.nt + m].copy()
    r = x[form.nt + m :]
    blocks = [np.array([[a, ri], [ri, 1.0]]) for a, ri in zip(alphas, r)]
    return w, alphas, blocks


@dataclass
class _Attempt:
    backend: str
    raw: str
    iterations: int
    x: np.ndarray | None = None
    z: np.ndarray | None = None
    error: str | None = None


def _run_clarabel(
    form: _ConicForm, gap_tol: float, feas_tol: float, max_iter: int, step_fraction: float = 0.99
) -> _Attempt:
    settings = clarabel.DefaultSettings()
    settings.max_step_fraction = step_fraction
    settings.verbose = False
    settings.max_iter = int(max_iter)
    settings.tol_gap_abs = gap_tol * INNER_MARGIN
    settings.tol_gap_rel = gap_tol * INNER_MARGIN
    settings.tol_feas = feas_tol * INNER_MARGIN
    settings.chordal_decomposition_enable = False
    settings.max_threads = 1
    p = sp.csc_matrix((len(form.q), len(form.q)))
    try:
        res = clarabel.DefaultSolver(p, form.q, form.a, form.b, form.cones, settings).solve()
    except Exception as exc:  # the extension raises plain exceptions on bad data
        return _Attempt("clarabel", "error", 0, error=str(exc))
    raw = str(res.status)
    x = np.array(res.x)
    return _Attempt("clarabel", raw, int(res.iterations), x, np.array(res.z))


def _run_cvxopt(problem: SdpProblem, form: _ConicForm, gap_tol: float, feas_tol: float, max_iter: int) -> _Attempt:
    """Pose the same problem in cvxopt's dual form and map the result back.

    Block variable ``X = diag(W', B_1, ..., B_m)``, ``B_i = [[alpha_i, r_i], [r_i, 1]]``
    with the constraint ``B_i[1,1] = 1`` explicit. cvxopt's multipliers ``y``
    and slack ``S = C - sum y_k A_k`` become the dual ``z``. A trace cap adds
    a scalar slack ``c >= 0`` with ``tr(W') + c = cap``.
    """
    nw, nt, m, n_eq = form.nw, form.nt, problem.m, form.n_eq
    n_l = 0 if form.trace_cap is None else 1
    size = n_l + nw * nw + 4 * m
    off = n_l + nw * nw + 4 * np.arange(m)
    r_w, c_w = _svec_index(nw)
    # full-matrix position of each svec entry, with the 1/sqrt(2) split for off-diagonals
    a_eq = form.a[:n_eq].tocoo()
    rows, cols, vals = [], [], []
    for k, j, v in zip(a_eq.row, a_eq.col, a_eq.data):
        if j < nt:
            i1, i2 = r_w[j], c_w[j]
            if i1 == i2:
                rows.append(n_l + i2 * nw + i1)
                cols.append(k)
                vals.append(v)
            else:
                rows += [n_l + i2 * nw + i1, n_l + i1 * nw + i2]
                cols += [k, k]
                vals += [v / SQRT2, v / SQRT2]
        elif j < nt + m:
            rows.append(off[j - nt])
            cols.append(k)
            vals.append(v)
        else:
            rows += [off[j - nt - m] + 1, off[j - nt - m] + 2]
            cols += [k, k]
            vals += [0.5 * v, 0.5 * v]
    # B22 = 1
    for i in range(m):
        rows.append(off[i] + 3)
        cols.append(n_eq + i)
        vals.append(1.0)
    ny = n_eq + m
    bvec = np.r_[form.b[:n_eq], np.ones(m)]
    if n_l:
        diag = np.arange(nw)
        rows += [0] + list(n_l + diag * nw + diag)
        cols += [ny] * (nw + 1)
        vals += [1.0] * (nw + 1)
        ny += 1
        bvec = np.r_[bvec, form.trace_cap]
    g = cvxopt.spmatrix([float(v) for v in vals], [int(r) for r in rows], [int(c) for c in cols], (size, ny))
    h = np.zeros(size)
    h[off] = 1.0
    opts = {
        "show_progress": False,
        "maxiters": int(max_iter),
        "abstol": gap_tol * INNER_MARGIN,
        "reltol": gap_tol * INNER_MARGIN,
        "feastol": feas_tol * INNER_MARGIN,
    }
    dims = {"l": n_l, "q": [], "s": [nw] + [2] * m}
    try:
        res = solvers.conelp(cvxopt.matrix(-bvec), g, cvxopt.matrix(h), dims, options=opts)
    except (ValueError, ArithmeticError) as exc:
        return _Attempt("cvxopt", "error", 0, error=str(exc))
    if res["z"] is None or res["x"] is None:
        return _Attempt("cvxopt", str(res["status"]), int(res.get("iterations", 0)))
    zz = np.array(res["z"]).ravel()
    ss = np.array(res["s"]).ravel()
    y = np.array(res["x"]).ravel()

    def block_svec(vec, lo, dim):
        mat = vec[lo : lo + dim * dim].reshape(dim, dim, order="F")
        return svec(0.5 * (mat + mat.T))

    x = np.empty(nt + 2 * m)
    x[:nt] = block_svec(zz, n_l, nw)
    blk = np.array([0.5 * (zz[o : o + 4].reshape(2, 2) + zz[o : o + 4].reshape(2, 2).T) for o in off])
    x[nt : nt + m] = blk[:, 0, 0]
    x[nt + m :] = blk[:, 0, 1]
    z = np.empty(len(form.b))
    z[:n_eq] = -y[:n_eq]
    if n_l:
        z[n_eq] = ss[0]
    z[form.w_row : form.w_row + nt] = block_svec(ss, n_l, nw)
    for i, r0 in enumerate(form.psd2_rows):
        z[r0 : r0 + 3] = block_svec(ss, int(off[i]), 2)
    return _Attempt("cvxopt", str(res["status"]), int(res.get("iterations", 0)), x, z)


def _failed(problem: SdpProblem, status: str, residuals: dict, iterations: int = 0) -> ConicSolution:
    n, m = problem.n, problem.m
    return ConicSolution(
        w=np.zeros((2 * n, 2 * n)),
        alphas=np.zeros(m),
        objective=float("nan"),
        status=status,
        residuals=residuals,
        iterations=iterations,
    )


def _run_backends(problem, form, gap_tol, feas_tol, max_iter, notes, suffix=""):
    """(certified solution or None, first uncertified solution or None)."""
    best = None
    for backend in BACKENDS:
        if backend == "clarabel":
            att = _run_clarabel(form, gap_tol, feas_tol, max_iter)
        elif backend == "clarabel-short-steps":
            att = _run_clarabel(form, gap_tol, feas_tol, max_iter, step_fraction=0.95)
        else:
            att = _run_cvxopt(problem, form, gap_tol, feas_tol, max_iter)
        notes[backend + suffix] = att.error or att.raw
        if att.x is None or not np.all(np.isfinite(att.x)) or not np.all(np.isfinite(att.z)):
            continue
        w, alphas, blocks = _unpack(problem, form, att.x)
        sol = ConicSolution(
            w=w,
            alphas=alphas,
            objective=float(alphas.sum()),
            status="optimal",
            dual=att.z,
            blocks=blocks,
            iterations=att.iterations,
            x=att.x,
            trace_cap=form.trace_cap,
        )
        report = verify_certificate(problem, sol, gap_tol=gap_tol, feas_tol=feas_tol)
        sol.residuals = {
            "primal_feasibility": report.primal_residual,
            "dual_feasibility": report.dual_residual,
            "duality_gap": report.duality_gap,
            "backend": backend + suffix,
        }
        if report.ok:
            return sol, best
        sol.status = "max_iter" if att.iterations >= max_iter else "numerical_failure"
        if best is None:
            best = sol
    return None, best


def solve(
    problem: SdpProblem,
    gap_tol: float = 1e-8,
    feas_tol: float = 1e-8,
    max_iter: int = 200,
    trace_cap: str | float | None = "auto",
) -> ConicSolution:
    """Solve the relaxation; see :func:`verify_certificate` for what 'optimal' guarantees.

    Clarabel runs first, then Clarabel with shorter steps, then cvxopt on the
    same data; the first answer that passes the certificate is kept. cvxopt
    is the one that copes with zero-residual optima, where strict
    complementarity fails. ``trace_cap="auto"`` repeats the ladder with
    ``tr(W) <= TRACE_CAP_PER_BUS * n`` when nothing certifies; a number is
    enforced from the start; ``None`` never caps.
    """
    notes: dict = {}
    sol = best = None
    if trace_cap is None or trace_cap == "auto":
        sol, best = _run_backends(problem, _conic_form(problem), gap_tol, feas_tol, max_iter, notes)
    if sol is None and trace_cap is not None:
        cap = TRACE_CAP_PER_BUS * problem.n if trace_cap == "auto" else float(trace_cap)
        sol, best_capped = _run_backends(
            problem, _conic_form(problem, cap), gap_tol, feas_tol, max_iter, notes, suffix="+cap"
        )
        best = best or best_capped
    if sol is not None:
        sol.residuals["solver_status"] = notes
        return sol
    if all(v in _INFEASIBLE or v in ("primal infeasible", "dual infeasible") for v in notes.values()):
        return _failed(problem, "infeasible", {"solver_status": notes})
    if best is None:
        return _failed(problem, "numerical_failure", {"solver_status": notes})
    best.residuals["solver_status"] = notes
    return best


@dataclass
class CertificateReport:
    min_eig_w: float
    reference_residual: float
    angle_residual: float
    min_block_eig: float
    schur_slack_min: float
    schur_slack_max: float
    primal_residual: float
    dual_residual: float
    duality_gap: float
    violations: list[str]
    ok: bool

    def as_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def schur_block(alpha: float, z: float, sigma: float, t: float) -> np.ndarray:
    """[[alpha - z^2/s^2 + 2 z t/s^2, -t/s], [-t/s, 1]]; PSD iff alpha >= (z - t)^2/s^2."""
    return np.array(
        [
            [alpha - z**2 / sigma**2 + 2 * z * t / sigma**2, -t / sigma],
            [-t / sigma, 1.0],
        ]
    )


def verify_certificate(
    problem: SdpProblem,
    sol: ConicSolution,
    gap_tol: float = 1e-8,
    feas_tol: float = 1e-8,
) -> CertificateReport:
    """Recompute every optimality quantity from (W, alpha) and, if present, the raw iterates.

    Checks W >= 0, tr(M0 W) = 0, tr(H_a W) = 0, the Schur block of every term,
    the trace cap if the solution carries one, and with solver iterates also
    the equality residuals, dual feasibility and the duality gap.

    The Schur block ``[[alpha - z^2/s^2 + 2 z t/s^2, -t/s], [-t/s, 1]]`` has
    pivot 1, so it is PSD exactly when its Schur complement
    ``alpha - (z - t)^2/s^2`` is nonnegative; that complement is what gets
    tested. ``t`` is only feasible to ``feas_tol``, and the weighted cost moves
    by ``2 |r| / sigma`` per unit of ``t``, so each term gets the band
    ``[-d_i, 10 gap_tol (1 + |obj|) + d_i]`` with ``d_i = feas_tol (1 + 2 |r_i| / sigma_i)``.
    """
    w = sol.w
    scale = 1.0 + abs(sol.objective) if np.isfinite(sol.objective) else 1.0
    violations: list[str] = []

    min_eig_w = float(np.linalg.eigvalsh(0.5 * (w + w.T))[0])
    if min_eig_w < -feas_tol:
        violations.append(f"W not PSD (lambda_min={min_eig_w:.3g})")
    ref = abs(problem.m0.trace(w))
    if ref > feas_tol:
        violations.append(f"reference residual {ref:.3g}")
    ang = max((abs(h.trace(w)) for h in problem.angle_constraints), default=0.0)
    if ang > feas_tol:
        violations.append(f"angle residual {ang:.3g}")

    t = np.array([term.h.trace(w) for term in problem.terms])
    block_eigs = []
    slack = []
    low_bad, high_bad = [], []
    for i, term in enumerate(problem.terms):
        a = float(sol.alphas[i])
        # the magnitude model compares z with sqrt(tr(H W))
        ti = math.sqrt(max(t[i], 0.0)) if term.model == "magnitude" else t[i]
        blk = schur_block(a, term.z, term.sigma, ti)
        block_eigs.append(float(np.linalg.eigvalsh(blk)[0]))
        gap_i = a - term.residual_cost(t[i])
        slack.append(gap_i)
        band = feas_tol * (1.0 + 2.0 * abs(term.z - ti) / term.sigma**2)
        if gap_i < -band:
            low_bad.append(f"{term.h.kind}@{term.h.location}")
        if gap_i > 10 * gap_tol * scale + band:
            high_bad.append(f"{term.h.kind}@{term.h.location}")
    if low_bad:
        more = " ..." if len(low_bad) > 10 else ""
        violations.append("Schur block not PSD: " + ", ".join(low_bad[:10]) + more)
    if high_bad:
        more = " ..." if len(high_bad) > 10 else ""
        violations.append("alpha not tight: " + ", ".join(high_bad[:10]) + more)
    slack = np.array(slack) if slack else np.zeros(1)

    primal_res = 0.0
    dual_res = 0.0
    gap = float("nan")
    if sol.trace_cap is not None and np.trace(w) > sol.trace_cap + feas_tol:
        violations.append(f"trace cap exceeded ({np.trace(w):.6g} > {sol.trace_cap:.6g})")

    if sol.x is not None and sol.dual is not None:
        form = _conic_form(problem, sol.trace_cap)
        x, z = sol.x, sol.dual
        s = form.b - form.a @ x
        cone_min = [float(np.linalg.eigvalsh(smat(s[r : r + 3], 2))[0]) for r in form.psd2_rows]
        if cone_min and min(cone_min) < -feas_tol:
            violations.append(f"solver cone violated ({min(cone_min):.3g})")
        primal_res = float(np.max(np.abs(s[: form.n_eq]), initial=0.0))
        if primal_res > feas_tol:
            violations.append(f"equality residual {primal_res:.3g}")
        # dual: q + A^T z = 0 with z in the (self-dual) cones
        dual_res = float(np.max(np.abs(form.q + form.a.T @ z), initial=0.0))
        zw = smat(z[form.w_row : form.w_row + form.nt], form.nw)
        z_min = float(np.linalg.eigvalsh(zw)[0])
        if form.w_row > form.n_eq:
            z_min = min(z_min, float(z[form.n_eq]))
        for r in form.psd2_rows:
            z_min = min(z_min, float(np.linalg.eigvalsh(smat(z[r : r + 3], 2))[0]))
        dual_res = max(dual_res, -z_min)
        if dual_res > feas_tol * scale:
            violations.append(f"dual residual {dual_res:.3g}")
        gap = float(form.q @ x + form.b @ z)
        if not abs(gap) <= gap_tol * scale:
            violations.append(f"duality gap {gap:.3g}")

    return CertificateReport(
        min_eig_w=min_eig_w,
        reference_residual=float(ref),
        angle_residual=float(ang),
        min_block_eig=float(min(block_eigs, default=0.0)),
        schur_slack_min=float(slack.min()),
        schur_slack_max=float(slack.max()),
        primal_residual=primal_res,
        dual_residual=dual_res,
        duality_gap=gap,
        violations=violations,
        ok=not violations,
    )
