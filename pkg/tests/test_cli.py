import json

import pytest

from sdpse.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_estimate_both(capsys, tmp_path):
    out_json = tmp_path / "est.json"
    code, out, _ = run(capsys, "estimate", "--case", "ieee14.json", "--fraction", "0.7", "--seed", "7", "--method", "both", "--output", str(out_json))
    assert code == 0
    for key in ("wls_objective", "sdp_objective", "numerical_rank", "trailing_ratio"):
        assert key in out
    assert "sdp_vm" in out and "wls_va_deg" in out
    payload = json.loads(out_json.read_text())
    assert len(payload["states"]["sdp"]["vm"]) == 14


def test_estimate_is_repeatable(capsys):
    first = run(capsys, "estimate", "--case", "ieee14", "--fraction", "0.8", "--seed", "3", "--method", "sdp")
    second = run(capsys, "estimate", "--case", "ieee14", "--fraction", "0.8", "--seed", "3", "--method", "sdp")
    assert first == second and first[0] == 0


def test_estimate_from_measurement_file(capsys, tmp_path, full14):
    path = tmp_path / "m.json"
    path.write_text(full14.to_json())
    code, out, _ = run(capsys, "estimate", "--case", "ieee14", "--measurements", str(path), "--method", "wls")
    assert code == 0
    assert "wls_objective: " in out


def test_validate_case(capsys, tmp_path):
    code, out, _ = run(capsys, "validate-case", "--case", "ieee30")
    assert code == 0 and "30 buses" in out
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"buses": [{"id": 1, "kind": "slack"}, {"id": 4, "kind": "PQ"}, {"id": 4, "kind": "PQ"}], "branches": []}))
    code, _, err = run(capsys, "validate-case", "--case", str(bad))
    assert code == 1 and "4" in err


def test_usage_errors(capsys, tmp_path):
    assert run(capsys)[0] == 2
    assert run(capsys, "frobnicate")[0] == 2
    assert run(capsys, "sweep", "--trials", "0")[0] == 2
    assert run(capsys, "estimate", "--method", "magic")[0] == 2
    assert run(capsys, "sweep", "--config", str(tmp_path / "missing.json"))[0] == 2
    assert run(capsys, "placement-study")[0] == 2


def test_domain_errors(capsys):
    code, _, err = run(capsys, "estimate", "--case", "nowhere")
    assert code == 1 and "CaseError" in err
    code, _, err = run(capsys, "estimate", "--case", "ieee14", "--fraction", "0.05")
    assert code == 1 and "Observability" in err


def test_sweep_with_config_and_flag_override(capsys, tmp_path):
    cfg = tmp_path / "fig2.json"
    cfg.write_text(json.dumps({"case": "ieee14", "trials": 5, "fraction_grid": [0.7], "output": str(tmp_path / "fig2.csv")}))
    code, out, _ = run(capsys, "sweep", "--config", str(cfg), "--trials", "1")
    assert code == 0
    rows = (tmp_path / "fig2.csv").read_text().splitlines()
    assert len(rows) == 2  # header plus one trial: the flag overrides the file


def test_pmu_and_noise_commands(capsys):
    code, out, _ = run(capsys, "pmu-sweep", "--trials", "1", "--fraction", "0.7", "--grid", "0", "0.2")
    assert code == 0 and out.startswith("pmu_fraction,")
    code, out, _ = run(capsys, "noise-study", "--trials", "1")
    assert code == 0 and out.startswith("rank,count")


def test_help_documents_exit_codes(capsys):
    with pytest.raises(SystemExit):
        from sdpse.cli import build_parser

        build_parser().parse_args(["--help"])
    out = capsys.readouterr().out
    assert "usage error" in out and "domain error" in out
