import numpy as np
import pytest

from sdpse.network import build_admittance, load_case
from sdpse.powerflow import complex_injections, solve_newton


@pytest.mark.parametrize("name", ["stand5", "ieee14", "ieee30", "ieee57", "ieee118"])
def test_converges(name):
    case = load_case(name)
    adm = build_admittance(case)
    pf = solve_newton(case, adm=adm)
    assert pf.converged
    assert pf.iterations <= 10
    s = complex_injections(pf.v, adm)
    sched = case.scheduled_injection()
    pq = [i for i, b in enumerate(case.buses) if b.kind == "PQ"]
    pv = [i for i, b in enumerate(case.buses) if b.kind == "PV"]
    np.testing.assert_allclose(s[pq], sched[pq], atol=1e-7)
    np.testing.assert_allclose(s.real[pv], sched.real[pv], atol=1e-7)


def test_ieee14_reference_solution():
    # published MATPOWER case14 solution
    case = load_case("ieee14")
    pf = solve_newton(case)
    vm = np.abs(pf.v)
    va = np.degrees(np.angle(pf.v))
    assert vm[3] == pytest.approx(1.018, abs=5e-4)
    assert va[13] == pytest.approx(-16.03, abs=5e-3)
    assert va[1] == pytest.approx(-4.98, abs=5e-3)


def test_setpoints_held():
    case = load_case("ieee14")
    pf = solve_newton(case)
    for i, b in enumerate(case.buses):
        if b.kind in ("slack", "PV"):
            assert abs(pf.v[i]) == pytest.approx(b.v_mag_setpoint, abs=1e-10)
    assert np.angle(pf.v[case.slack_index]) == pytest.approx(0.0, abs=1e-12)


def flat_case(r=0.0):
    import json

    from sdpse.network import parse_case

    return parse_case(json.dumps({
        "buses": [{"id": 1, "kind": "slack"}, {"id": 2, "kind": "PQ"}, {"id": 3, "kind": "PV"}],
        "branches": [{"from_bus": 1, "to_bus": 2, "r": r, "x": 0.1}, {"from_bus": 2, "to_bus": 3, "r": r, "x": 0.2}],
    }))


def test_flat_no_load_solution():
    from sdpse.measurement import MeterKind, generate_true_measurements

    case = flat_case(r=0.01)
    adm = build_admittance(case)
    pf = solve_newton(case, adm=adm)
    assert pf.converged and pf.iterations <= 1
    np.testing.assert_allclose(pf.v, 1.0, atol=1e-14)
    full = generate_true_measurements(case, pf, adm)
    for meas in full:
        expected = 1.0 if meas.kind is MeterKind.V_MAGNITUDE else 0.0
        assert meas.value == pytest.approx(expected, abs=1e-14)


def test_lossless_line_carries_nothing_at_flat_voltage():
    from sdpse.powerflow import line_flows

    adm = build_admittance(flat_case())
    for end in ("from", "to"):
        np.testing.assert_allclose(line_flows(np.ones(3, complex), adm, end), 0, atol=1e-14)


def test_injections_match_naive_loops(rng):
    from conftest import random_voltage
    from sdpse.powerflow import line_flows

    adm = build_admittance(load_case("ieee14"))
    y = np.asarray(adm.y_bus.todense()) if hasattr(adm.y_bus, "todense") else np.asarray(adm.y_bus)
    for _ in range(5):
        v = random_voltage(rng, adm.n)
        naive = np.array([v[k] * sum(np.conj(y[k, j] * v[j]) for j in range(adm.n)) for k in range(adm.n)])
        np.testing.assert_allclose(complex_injections(v, adm), naive, rtol=1e-12, atol=1e-12)
        y_f, f = adm.end_matrix("from")
        y_f = np.asarray(y_f.todense()) if hasattr(y_f, "todense") else np.asarray(y_f)
        naive_f = np.array([v[f[b]] * np.conj(sum(y_f[b, j] * v[j] for j in range(adm.n))) for b in range(adm.n_branch)])
        np.testing.assert_allclose(line_flows(v, adm, "from"), naive_f, rtol=1e-12, atol=1e-12)
