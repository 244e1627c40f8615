import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdpse.measurement import MeterKind, add_noise, add_pmu_angles, sample_placement
from sdpse.wls import StateVector, gradient_norm, measurement_function, solve_wls, wls_jacobian


def central_difference(state, mset, adm, h=1e-6):
    x0 = state.to_vector()
    cols = []
    for k in range(x0.size):
        e = np.zeros_like(x0)
        e[k] = h
        hp = measurement_function(state.with_vector(x0 + e).v, mset, adm)
        hm = measurement_function(state.with_vector(x0 - e).v, mset, adm)
        cols.append((hp - hm) / (2 * h))
    return np.column_stack(cols)


@settings(max_examples=10)
@given(st.integers(0, 2**31 - 1))
def test_jacobian_matches_finite_differences(full14, ctx14, seed):
    rng = np.random.default_rng(seed)
    n = ctx14.case.n
    state = StateVector(rng.uniform(-0.5, 0.5, n) * (np.arange(n) != ctx14.adm.slack), rng.uniform(0.9, 1.1, n), ctx14.adm.slack)
    jac = wls_jacobian(state, full14, ctx14.adm)
    fd = central_difference(state, full14, ctx14.adm)
    assert np.max(np.abs(jac - fd)) <= 1e-6 * max(1.0, np.max(np.abs(jac)))


def test_measurement_function_matches_values(full14, ctx14):
    np.testing.assert_allclose(measurement_function(ctx14.truth.v, full14, ctx14.adm), full14.z, atol=1e-12)


def test_noise_free_recovery_from_flat_start(full14, ctx14):
    res = solve_wls(full14, ctx14.adm)
    assert res.converged and res.iterations <= 10
    assert np.max(np.abs(res.state.v - ctx14.truth.v)) <= 1e-6
    assert res.objective < 1e-12


def test_noisy_estimate_is_stationary(full14, ctx14):
    noisy = add_noise(sample_placement(full14, 0.8, 3, ctx14.adm), 3)
    res = solve_wls(noisy, ctx14.adm)
    assert res.converged
    assert gradient_norm(res, noisy, ctx14.adm) < 1e-6
    # objective equals the weighted residual sum at the returned state
    r = (noisy.z - measurement_function(res.state.v, noisy, ctx14.adm)) / noisy.sigma
    assert res.objective == pytest.approx(float(r @ r), rel=1e-9)


def test_pmu_angles_pinned(full14, ctx14):
    mset = add_pmu_angles(add_noise(full14, 2), ctx14.truth.v, 0.3, 2, ctx14.adm.slack)
    res = solve_wls(mset, ctx14.adm)
    for meas in mset.of_kind(MeterKind.V_ANGLE):
        assert res.state.angles[meas.location] == pytest.approx(meas.value, abs=1e-10)


def test_state_vector_round_trip(ctx14):
    sv = StateVector.from_complex(ctx14.truth.v * np.exp(0.3j), ctx14.adm.slack)
    np.testing.assert_allclose(sv.v, ctx14.truth.v, atol=1e-12)
    np.testing.assert_allclose(sv.with_vector(sv.to_vector()).v, sv.v)


def test_objective_scales_with_redundancy(full14, ctx14):
    # noisy WLS residuals are chi-squared with m - (2n - 1) degrees of freedom
    objs, m = [], None
    for seed in range(50):
        mset = add_noise(sample_placement(full14, 0.7, seed, ctx14.adm), 1000 + seed)
        res = solve_wls(mset, ctx14.adm)
        assert res.converged
        objs.append(res.objective)
        m = mset.m
    dof = m - (2 * ctx14.adm.n - 1)
    assert abs(np.mean(objs) - dof) < 4 * np.sqrt(2 * dof / len(objs))


def test_lossless_flat_jacobian_has_no_magnitude_coupling_in_p():
    import json

    from sdpse.measurement import generate_true_measurements
    from sdpse.network import build_admittance, parse_case
    from sdpse.powerflow import solve_newton

    case = parse_case(json.dumps({
        "buses": [{"id": 1, "kind": "slack"}, {"id": 2, "kind": "PQ", "p_demand": 0.1}, {"id": 3, "kind": "PQ"}],
        "branches": [{"from_bus": 1, "to_bus": 2, "r": 0.0, "x": 0.1}, {"from_bus": 2, "to_bus": 3, "r": 0.0, "x": 0.2}],
    }))
    adm = build_admittance(case)
    full = generate_true_measurements(case, solve_newton(case, adm=adm), adm)
    jac = wls_jacobian(StateVector.flat(3, 0), full, adm)
    p_rows = [i for i, meas in enumerate(full) if meas.kind in (MeterKind.P_INJECTION, MeterKind.P_FLOW)]
    np.testing.assert_allclose(jac[np.ix_(p_rows, range(2, 5))], 0, atol=1e-14)
