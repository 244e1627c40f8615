import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sdpse.rank import recover_rank1, spectrum, trailing_ratio
from sdpse.relaxation import stack_voltage


def test_trailing_ratio_examples():
    assert trailing_ratio([15, 13]) == pytest.approx(13 / 15)
    assert trailing_ratio([29, 2, 0.5, 0.1, 0.1]) == pytest.approx(2.7 / 29)
    assert round(trailing_ratio([29, 2, 0.5, 0.1, 0.1]), 4) == 0.0931
    with pytest.raises(ValueError):
        trailing_ratio([0, 0])


def test_rank_one_spectrum_and_recovery(ctx14):
    v = ctx14.truth.v
    x = stack_voltage(v)
    w = np.outer(x, x)
    spec = spectrum(w)
    assert spec.numerical_rank == 1
    assert spec.trailing_ratio < 1e-14
    rec = recover_rank1(w, ctx14.adm.slack)
    assert rec.is_rank1()
    np.testing.assert_allclose(rec.v, v, atol=1e-12)


def test_recovery_fixes_phase(ctx14):
    x = stack_voltage(ctx14.truth.v * np.exp(0.7j))
    rec = recover_rank1(np.outer(x, x), ctx14.adm.slack)
    assert abs(rec.v[ctx14.adm.slack].imag) < 1e-14 and rec.v[ctx14.adm.slack].real > 0
    np.testing.assert_allclose(rec.v, ctx14.truth.v, atol=1e-12)


@given(arrays(float, (6, 3), elements=st.floats(-2, 2)), st.sampled_from([1e-5, 1e-3]))
def test_rank_bounded_by_factor_width(a, tol):
    w = a @ a.T
    spec = spectrum(w, tol)
    assert spec.numerical_rank <= 3
    assert np.all(np.diff(spec.eigenvalues) <= 1e-12)
    assert spec.trailing_ratio >= 0


def test_rank_threshold_is_relative():
    w = np.diag([10.0, 1e-3, 1e-5, 0.0])
    assert spectrum(w, 1e-5).numerical_rank == 2
    assert spectrum(w, 1e-7).numerical_rank == 3
    assert spectrum(100 * w, 1e-5).numerical_rank == 2


def test_input_validation():
    with pytest.raises(ValueError):
        spectrum(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        spectrum(np.ones((2, 3)))
    with pytest.raises(ValueError):
        recover_rank1(np.eye(3), 0)
    with pytest.raises(ValueError):
        recover_rank1(np.eye(4), 5)
    with pytest.raises(ValueError):
        recover_rank1(-np.eye(4), 0)
    spec = spectrum(np.zeros((4, 4)))
    assert spec.numerical_rank == 0


def test_recovered_state_warm_starts_wls(ctx14, full14):
    from sdpse.measurement import add_noise
    from sdpse.relaxation import assemble
    from sdpse.solver import solve
    from sdpse.wls import StateVector, solve_wls

    mset = add_noise(full14, 8, scale=0.01)
    sol = solve(assemble(mset, ctx14.adm))
    rec = recover_rank1(sol.w, ctx14.adm.slack)
    assert spectrum(sol.w).numerical_rank == 1
    warm = solve_wls(mset, ctx14.adm, init=StateVector.from_complex(rec.v, ctx14.adm.slack))
    flat = solve_wls(mset, ctx14.adm)
    assert warm.objective <= flat.objective + 1e-9
    assert warm.iterations <= flat.iterations
