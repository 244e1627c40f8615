"""Spectral diagnostics of W: numerical rank, trailing-eigenvalue ratio, rank-1 recovery."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_RANK_TOL = 1e-5
SYMMETRY_TOL = 1e-10


@dataclass(frozen=True)
class SpectralSummary:
    eigenvalues: np.ndarray  # descending, negatives clamped to 0
    numerical_rank: int
    trailing_ratio: float
    rank_tol: float
    min_raw_eigenvalue: float = 0.0


@dataclass(frozen=True)
class RecoveredState:
    v: np.ndarray
    residual_norm: float
    source: str = "rank1_recovery"

    def is_rank1(self, tol: float = 1e-6) -> bool:
        return self.residual_norm <= tol


def _check_symmetric(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError(f"W must be square, got shape {w.shape}")
    scale = max(float(np.max(np.abs(w), initial=0.0)), 1e-300)
    asym = float(np.max(np.abs(w - w.T), initial=0.0)) / scale
    if asym > SYMMETRY_TOL:
        raise ValueError(f"W is not symmetric (relative asymmetry {asym:.3g})")
    return 0.5 * (w + w.T)


def spectrum(w: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL) -> SpectralSummary:
    """Eigenvalues of W (descending) and the rank/ratio diagnostics.

    The rank counts eigenvalues above ``rank_tol * lambda_1``; the trailing
    ratio is ``sum_{j>=2} lambda_j / lambda_1``. Negative eigenvalues (solver
    round-off) are set to zero first.
    """
    if not rank_tol > 0:
        raise ValueError("rank_tol must be positive")
    w = _check_symmetric(w)
    raw = np.linalg.eigvalsh(w)[::-1]
    lam = np.clip(raw, 0.0, None)
    top = lam[0] if lam.size else 0.0
    if top <= 0:
        return SpectralSummary(lam, 0, 0.0, rank_tol, float(raw[-1]) if raw.size else 0.0)
    rank = int(np.sum(lam > rank_tol * top))
    ratio = float(np.sum(lam[1:]) / top)
    return SpectralSummary(lam, rank, ratio, rank_tol, float(raw[-1]))


def trailing_ratio(eigenvalues) -> float:
    lam = np.sort(np.clip(np.asarray(eigenvalues, dtype=float), 0.0, None))[::-1]
    if lam.size == 0 or lam[0] <= 0:
        raise ValueError("largest eigenvalue must be positive")
    return float(np.sum(lam[1:]) / lam[0])


def recover_rank1(w: np.ndarray, slack: int) -> RecoveredState:
    """v from X = sqrt(lambda_1) u_1, rotated so v[slack] is real and positive."""
    w = _check_symmetric(w)
    if w.shape[0] % 2:
        raise ValueError("W must have even dimension 2n")
    n = w.shape[0] // 2
    if not 0 <= slack < n:
        raise ValueError(f"slack index {slack} outside 0..{n - 1}")
    lam, vec = np.linalg.eigh(w)
    if lam[-1] <= 0:
        raise ValueError("largest eigenvalue of W is not positive")
    x = np.sqrt(lam[-1]) * vec[:, -1]
    v = x[:n] + 1j * x[n:]
    if abs(v[slack]) > 0:
        v = v * (abs(v[slack]) / v[slack])
        v[slack] = abs(v[slack])
    resid = np.linalg.norm(w - np.outer(x, x)) / np.linalg.norm(w)
    return RecoveredState(v=v, residual_norm=float(resid))
