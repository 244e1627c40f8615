import json

import pytest

from sdpse.experiments import (
    CSV_COLUMNS,
    ExperimentConfig,
    TrialRecord,
    fmt,
    record_row,
    run_fraction_sweep,
    run_noise_study,
    run_placement_study,
    run_pmu_sweep,
    run_trial,
    trial_seeds,
)
from sdpse.errors import ObservabilityError


def test_config_validation_and_json(tmp_path):
    with pytest.raises(ValueError):
        ExperimentConfig(trials=0)
    with pytest.raises(ValueError):
        ExperimentConfig(fractions=1.2)
    with pytest.raises(ValueError):
        ExperimentConfig(fractions={"p_flow": -0.1})
    with pytest.raises(ValueError):
        ExperimentConfig(fractions={"bogus": 0.5})
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"trails": 3})
    cfg = ExperimentConfig(trials=3, fractions={"p_flow": 0.5}, pmu_grid=[0.0, 0.2])
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    assert ExperimentConfig.load(path) == cfg


def test_fmt_six_significant_digits():
    assert fmt(1 / 3) == "0.333333"
    assert fmt(123456789.0) == "1.23457e+08"
    assert fmt(7) == "7"
    assert fmt(True) == "1"
    assert fmt(float("nan")) == "nan"


def test_seed_streams_independent():
    seeds = trial_seeds(0, 0)
    assert len(set(seeds)) == 3
    assert trial_seeds(0, 0) == seeds
    assert trial_seeds(0, 1) != seeds
    assert trial_seeds(1, 0) != seeds


def test_sweep_csv_byte_deterministic():
    cfg = ExperimentConfig(trials=1, base_seed=7)
    a = run_fraction_sweep(cfg, [0.7])
    b = run_fraction_sweep(cfg, [0.7])
    assert a.records_csv() == b.records_csv()
    assert a.summary_csv() == b.summary_csv()
    header = a.records_csv().splitlines()[0].split(",")
    assert header == CSV_COLUMNS
    assert "timings" not in a.records_csv()
    assert set(a.records[0].timings) >= {"sdp", "wls", "total"}


def test_trials_independent_of_order():
    cfg = ExperimentConfig(trials=2, base_seed=3)
    forward = [run_trial(cfg, 0.8, 0.0, t) for t in (0, 1)]
    backward = [run_trial(cfg, 0.8, 0.0, t) for t in (1, 0)]
    assert record_row(forward[0]) == record_row(backward[1])
    assert record_row(forward[1]) == record_row(backward[0])


def test_noise_free_full_placement_is_rank_one():
    res = run_fraction_sweep(ExperimentConfig(trials=2, noise_scale=0.0), [1.0])
    assert res.summary[0]["mean_rank"] == 1.0
    assert all(r.certified for r in res.records)
    hist = run_noise_study(ExperimentConfig(trials=2, noise_scale=0.0))
    assert hist.summary == [{"rank": 1, "count": 2}]


def test_zero_pmu_reproduces_fraction_sweep():
    cfg = ExperimentConfig(trials=2, fractions=0.7, base_seed=5)
    pmu = run_pmu_sweep(cfg, [0.0])
    plain = run_fraction_sweep(cfg, [0.7])
    assert pmu.records_csv() == plain.records_csv()


def test_pmu_sweep_records_constraints():
    res = run_pmu_sweep(ExperimentConfig(trials=2, fractions=0.7), [0.2])
    for r in res.records:
        assert r.n_pmu == 3
        assert r.max_angle_residual <= 1e-7
    assert res.summary[0]["max_angle_residual"] <= 1e-7


def test_bound_flag():
    nan = float("nan")
    base = dict(trial=0, fraction=0.7, pmu_fraction=0, placement_seed=1, noise_seed=2, pmu_seed=3, m=10, n_pmu=0,
                numerical_rank=1, trailing_ratio=0.0, recovered_wls_refined_objective=nan, recovery_residual=0.0,
                max_angle_residual=0.0)
    assert TrialRecord(status="optimal", sdp_objective=1.0, wls_objective=1.0 - 1e-7, **base).bound_ok
    assert not TrialRecord(status="optimal", sdp_objective=1.0, wls_objective=0.9, **base).bound_ok
    assert TrialRecord(status="numerical_failure", sdp_objective=1.0, wls_objective=0.9, **base).bound_ok


def test_output_files(tmp_path):
    out = tmp_path / "sub" / "sweep.csv"
    run_fraction_sweep(ExperimentConfig(trials=1, output=str(out)), [0.7])
    assert out.exists() and (tmp_path / "sub" / "sweep_summary.csv").exists()


FIVE_BUS_BASE = (
    [["p_flow", [k, "from"]] for k in range(1, 6)]
    + [["q_flow", [k, "from"]] for k in range(1, 6)]
    + [["v_magnitude", b] for b in range(1, 5)]
)


def injections(buses):
    return [["p_injection", b] for b in buses] + [["q_injection", b] for b in buses]


def test_placement_study_location_matters(tmp_path):
    cfg = ExperimentConfig(case="stand5", output=str(tmp_path / "p.csv"))
    res = run_placement_study(
        cfg,
        {"a": FIVE_BUS_BASE + injections([0, 1, 2, 4]), "b": FIVE_BUS_BASE + injections([0, 1, 3, 4])},
    )
    a, b = res.rows
    assert a["m"] == b["m"]
    assert a["numerical_rank"] == 1 and b["numerical_rank"] > 1
    for row in res.rows:
        assert row["sdp_objective"] <= row["wls_objective"] + 1e-6
    assert (tmp_path / "p_states.json").exists()
    states = json.loads((tmp_path / "p_states.json").read_text())
    assert set(states) == {"a", "b"}


def test_placement_study_identical_rows():
    placement = FIVE_BUS_BASE + injections([0, 1, 2, 4])
    res = run_placement_study(ExperimentConfig(case="stand5"), [placement, placement])
    first, second = res.rows
    first.pop("placement"), second.pop("placement")
    assert first == second


def test_placement_study_unobservable():
    with pytest.raises(ObservabilityError):
        run_placement_study(ExperimentConfig(case="stand5"), {"thin": injections([0, 1])})
