import json

import numpy as np
import pytest

from sdpse.errors import CaseError
from sdpse.network import build_admittance, bundled_cases, load_case, parse_case


def small_case(**overrides):
    d = {
        "base_mva": 100,
        "buses": [
            {"id": 1, "kind": "slack", "v_mag_setpoint": 1.0},
            {"id": 2, "kind": "PQ", "p_demand": 0.5, "q_demand": 0.2},
            {"id": 3, "kind": "PV", "v_mag_setpoint": 1.02},
        ],
        "branches": [
            {"from_bus": 1, "to_bus": 2, "r": 0.01, "x": 0.1, "b_charge": 0.02},
            {"from_bus": 2, "to_bus": 3, "r": 0.02, "x": 0.2},
            {"from_bus": 1, "to_bus": 3, "r": 0.01, "x": 0.15, "tap": 0.98, "shift": 2.0},
        ],
        "gens": [{"bus": 3, "p_gen": 0.3}],
    }
    d.update(overrides)
    return json.dumps(d)


def test_bundled_cases_load():
    names = bundled_cases()
    for name in ("ieee14", "ieee30", "ieee57", "ieee118", "stand5"):
        assert name in names
    sizes = {name: load_case(name).n for name in ("ieee14", "ieee30", "ieee57", "ieee118")}
    assert sizes == {"ieee14": 14, "ieee30": 30, "ieee57": 57, "ieee118": 118}


def test_matpower_and_json_agree():
    from importlib import resources

    text = (resources.files("sdpse") / "cases" / "ieee14.m").read_text()
    a = build_admittance(parse_case(text, "matpower"))
    b = build_admittance(load_case("ieee14"))
    np.testing.assert_allclose(dense(a.y_bus), dense(b.y_bus), atol=1e-12)


def test_duplicate_bus_named():
    bad = json.loads(small_case())
    bad["buses"][2]["id"] = 2
    with pytest.raises(CaseError, match="2"):
        parse_case(json.dumps(bad))


def test_missing_slack_rejected():
    bad = json.loads(small_case())
    bad["buses"][0]["kind"] = "PQ"
    with pytest.raises(CaseError):
        parse_case(json.dumps(bad))


def test_unknown_branch_bus_rejected():
    bad = json.loads(small_case())
    bad["branches"][0]["to_bus"] = 9
    with pytest.raises(CaseError):
        parse_case(json.dumps(bad))


def test_unknown_case_name():
    with pytest.raises(CaseError, match="not found"):
        load_case("no_such_case")


def test_json_round_trip():
    case = parse_case(small_case())
    again = parse_case(case.to_json())
    np.testing.assert_allclose(dense(build_admittance(case).y_bus), dense(build_admittance(again).y_bus))


def dense(m):
    return np.asarray(m.todense()) if hasattr(m, "todense") else np.asarray(m)


def test_admittance_row_sums_without_shunts():
    # no charging, no taps, no shunts: every row of Y sums to zero
    d = json.loads(small_case())
    for br in d["branches"]:
        br.update(b_charge=0.0, tap=1.0, shift=0.0)
    y = dense(build_admittance(parse_case(json.dumps(d))).y_bus)
    np.testing.assert_allclose(y.sum(axis=1), 0, atol=1e-12)


def test_admittance_symmetric_without_phase_shift():
    y = dense(build_admittance(load_case("ieee14")).y_bus)
    np.testing.assert_allclose(y, y.T, atol=1e-12)


def test_branch_end_matrices_reproduce_injection(rng):
    adm = build_admittance(parse_case(small_case()))
    v = 1 + 0.1 * rng.standard_normal(3) + 0.1j * rng.standard_normal(3)
    y_f, f = adm.end_matrix("from")
    y_t, t = adm.end_matrix("to")
    # sum of branch-end currents leaving each bus equals Y v (no bus shunts here)
    i_bus = np.zeros(3, complex)
    np.add.at(i_bus, f, dense(y_f) @ v)
    np.add.at(i_bus, t, dense(y_t) @ v)
    np.testing.assert_allclose(i_bus, dense(adm.y_bus) @ v, atol=1e-12)
    with pytest.raises(ValueError):
        adm.end_matrix("middle")


def test_from_row_matches_branch_formula():
    # tap-free branch: the from-end row is (y_shunt + y) at the from bus and -y at the to bus
    case = load_case("ieee14")
    adm = build_admittance(case)
    y_f, f = adm.end_matrix("from")
    y_f = dense(y_f)
    checked = 0
    for b, br in enumerate(case.branches):
        if br.tap != 1.0 or br.shift != 0.0:
            continue
        y = 1.0 / complex(br.r, br.x)
        row = np.zeros(case.n, complex)
        row[br.from_bus] = y + 0.5j * br.b_charge
        row[br.to_bus] = -y
        assert np.array_equal(y_f[b], row)
        checked += 1
    assert checked > 10
