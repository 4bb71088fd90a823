"""End-to-end checks of the command-line front end.

Most tests drive `persgain.cli.main` in-process; that is the same code the
console script runs, minus interpreter startup. Determinism across runs is
asserted at the byte level on the emitted files.
"""

import filecmp
import json
import math
import shutil
from pathlib import Path

import numpy as np
import pytest

from persgain.cli import main
from persgain.dataset import load_csv, one_factor_dgp


def run_cli(args):
    return main([str(a) for a in args])


def read(path):
    return Path(path).read_bytes()


# --------------------------------------------------------------------------
# gain


def test_gain_prints_formula_value(capsys):
    assert run_cli(["gain", "--mu-a", 30, "--mu-b", 30, "--sigma", 1, "--rho", 0]) == 0
    line = capsys.readouterr().out.splitlines()[0]
    key, value = line.split()
    assert key == "gain"
    assert float(value) == pytest.approx(1.0 / math.sqrt(math.pi), rel=1e-12)


def test_gain_perfect_correlation_is_zero(capsys):
    assert run_cli(["gain", "--mu-a", 5, "--mu-b", 5, "--sigma", 2, "--rho", 1]) == 0
    assert capsys.readouterr().out.splitlines()[0] == "gain 0.0"


def test_gain_with_s_reports_mean_averaged_value(capsys):
    from persgain.analytic import expected_gain_over_means

    assert (
        run_cli(
            ["gain", "--mu-a", 0, "--mu-b", 0, "--sigma", 0.267, "--rho", 0.8,
             "--s", 0.007, "--quadrature"]
        )
        == 0
    )
    out = dict(line.split() for line in capsys.readouterr().out.splitlines())
    expected = expected_gain_over_means(0.267, 0.8, 0.007, backend="quadrature")
    assert float(out["expected_gain_over_means"]) == expected.value
    assert out["backend"] == "quadrature"


def test_gain_validation_failure_exits_2_naming_field(capsys):
    assert run_cli(["gain", "--mu-a", 1, "--mu-b", 2, "--sigma", -1, "--rho", 0]) == 2
    assert "sigma" in capsys.readouterr().err


def test_gain_accepts_config_file(tmp_path, capsys):
    cfg = tmp_path / "g.json"
    cfg.write_text(json.dumps({"mu_a": 30.0, "mu_b": 30.0, "sigma": 1.0, "rho": 0.0}))
    assert run_cli(["gain", "--config", cfg]) == 0
    base = capsys.readouterr().out
    # flags override config fields
    assert run_cli(["gain", "--config", cfg, "--rho", 1]) == 0
    assert capsys.readouterr().out.splitlines()[0] == "gain 0.0"
    assert base.splitlines()[0] != "gain 0.0"


# --------------------------------------------------------------------------
# config plumbing


def test_unknown_config_field_exits_2(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"m": 3, "sigma": 1.0, "rho": 0.0, "bogus": 1}))
    assert run_cli(["simulate", "--config", cfg, "--out", tmp_path / "o"]) == 2
    assert "bogus" in capsys.readouterr().err


def test_missing_required_field_exits_2(tmp_path, capsys):
    assert run_cli(["simulate", "--sigma", 1, "--rho", 0, "--out", tmp_path / "o"]) == 2
    err = capsys.readouterr().err
    assert "missing required" in err and "m" in err


def test_malformed_json_config_exits_2(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text("{not json")
    assert run_cli(["simulate", "--config", cfg, "--out", tmp_path / "o"]) == 2
    assert "JSON" in capsys.readouterr().err


def test_missing_config_file_exits_2(tmp_path, capsys):
    assert run_cli(["simulate", "--config", tmp_path / "nope.json", "--out", tmp_path / "o"]) == 2
    assert "not found" in capsys.readouterr().err


def test_output_dir_env_var_default(tmp_path, monkeypatch):
    monkeypatch.setenv("PERSGAIN_OUT", str(tmp_path / "from_env"))
    assert run_cli(["simulate", "--m", 2, "--sigma", 1, "--rho", 0,
                    "--n-individuals", 200, "--n-replications", 5]) == 0
    assert (tmp_path / "from_env" / "result.json").exists()
    assert (tmp_path / "from_env" / "resolved_config.json").exists()


# --------------------------------------------------------------------------
# simulate / sweep


SIM_ARGS = ["--m", 4, "--sigma", 1.5, "--rho", 0.3, "--sigma-eps", 0.5,
            "--n-individuals", 500, "--n-replications", 24, "--seed", 7]


def test_simulate_outputs_and_resolved_config(tmp_path):
    out = tmp_path / "run"
    assert run_cli(["simulate", *SIM_ARGS, "--out", out]) == 0
    result = json.loads((out / "result.json").read_text())
    assert set(result) == {"gain_mean", "gain_se", "v_personalized_mean", "v_uniform_mean"}
    lines = (out / "replications.csv").read_text().splitlines()
    assert lines[0] == "replication,gain"
    assert len(lines) == 1 + 24
    resolved = json.loads((out / "resolved_config.json").read_text())
    assert resolved["command"] == "simulate"
    assert resolved["config"]["m"] == 4
    assert resolved["config"]["seed"] == 7
    assert "artifact_version" in resolved
    assert sorted(resolved["outputs"]) == ["replications.csv", "result.json"]


def test_rerun_from_resolved_config_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli(["simulate", *SIM_ARGS, "--out", a]) == 0
    assert run_cli(["simulate", "--config", a / "resolved_config.json", "--out", b]) == 0
    for name in ["result.json", "replications.csv", "resolved_config.json"]:
        assert read(a / name) == read(b / name), name


def test_jobs_do_not_change_bytes(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli(["simulate", *SIM_ARGS, "--jobs", 1, "--out", a]) == 0
    assert run_cli(["simulate", *SIM_ARGS, "--jobs", 4, "--out", b]) == 0
    for name in ["result.json", "replications.csv", "resolved_config.json"]:
        assert read(a / name) == read(b / name), name


def test_resolved_config_for_other_command_is_rejected(tmp_path, capsys):
    a = tmp_path / "a"
    assert run_cli(["simulate", *SIM_ARGS, "--out", a]) == 0
    assert run_cli(["sweep", "--config", a / "resolved_config.json", "--out", tmp_path / "b"]) == 2
    assert "resolved for command" in capsys.readouterr().err


def test_sweep_csv_has_one_row_per_arm_count(tmp_path):
    out = tmp_path / "sw"
    assert run_cli(["sweep", "--m-values", "2,5,10", "--sigma", 10, "--rho", 0.5,
                    "--n-individuals", 400, "--n-replications", 10, "--out", out]) == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0] == "m,gain_mean,gain_se,v_personalized_mean,v_uniform_mean"
    assert [row.split(",")[0] for row in lines[1:]] == ["2", "5", "10"]


# --------------------------------------------------------------------------
# synth -> estimate -> evaluate pipeline


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One synthetic experiment shared by the data-facing CLI tests."""
    root = tmp_path_factory.mktemp("pipeline")
    dgp = one_factor_dgp(
        m=3, sigma=0.25, rho=0.5, intercepts=(0.30, 0.34, 0.29), noise_sd=0.25
    )
    cfg = root / "synth.json"
    cfg.write_text(json.dumps({"dgp": dgp.to_config(), "n": 20_000, "seed": 3}))
    out = root / "synth"
    assert run_cli(["synth", "--config", cfg, "--out", out]) == 0
    return {"root": root, "out": out, "dgp": dgp, "config": cfg}


def test_synth_writes_loadable_dataset(pipeline):
    dataset = load_csv(pipeline["out"] / "data.csv")
    assert dataset.n == 20_000
    assert dataset.arm_names == ("arm_0", "arm_1", "arm_2")
    schema = json.loads((pipeline["out"] / "schema.json").read_text())
    assert schema["covariate_names"] == list(dataset.covariate_names)
    assert schema["arm_names"] == list(dataset.arm_names)


def test_synth_sealed_file_covers_every_unit_and_arm(pipeline):
    lines = (pipeline["out"] / "sealed.csv").read_text().splitlines()
    assert lines[0] == "unit_id,y_arm_0,y_arm_1,y_arm_2"
    assert len(lines) == 1 + 20_000


def test_synth_rerun_is_byte_identical(pipeline, tmp_path):
    out2 = tmp_path / "again"
    assert run_cli(["synth", "--config", pipeline["config"], "--out", out2]) == 0
    for name in ["data.csv", "sealed.csv", "schema.json"]:
        assert read(pipeline["out"] / name) == read(out2 / name), name


def test_estimate_recovers_dgp_moments(pipeline, tmp_path):
    out = tmp_path / "est"
    assert run_cli(["estimate", "--data", pipeline["out"] / "data.csv",
                    "--train-frac", 0.7, "--quantiles", 10, "--seed", 0,
                    "--out", out]) == 0
    moments = json.loads((out / "moments.json").read_text())
    dgp = pipeline["dgp"]
    assert moments["sigma_hat"] == pytest.approx(dgp.true_sigma(), rel=0.15)
    assert abs(moments["rho_hat_mean"] - dgp.true_rho_mean()) < 0.07
    assert moments["sigma_eps_hat"] == pytest.approx(0.25, rel=0.05)
    assert moments["s_hat"] == pytest.approx(dgp.true_s(), rel=0.25)


def test_estimate_rerun_is_byte_identical(pipeline, tmp_path):
    outs = []
    for name in ("e1", "e2"):
        out = tmp_path / name
        assert run_cli(["estimate", "--data", pipeline["out"] / "data.csv", "--out", out]) == 0
        outs.append(out)
    assert read(outs[0] / "moments.json") == read(outs[1] / "moments.json")


def test_estimate_empty_holdout_arm_exits_2_naming_the_cell(tmp_path, capsys):
    # arm b holds a single unit; the split sends it to the training side,
    # so every holdout quantile bin for b is empty
    rows = ["unit_id,arm,outcome,propensity,x"]
    for i in range(30):
        rows.append(f"u{i:03d},a,{0.1 * (i % 7)},0.5,{i / 30}")
    rows.append("u030,b,0.4,0.5,0.5")
    data = tmp_path / "thin.csv"
    data.write_text("\n".join(rows) + "\n")
    rc = run_cli(["estimate", "--data", data, "--train-frac", 0.5,
                  "--quantiles", 2, "--out", tmp_path / "o"])
    err = capsys.readouterr().err
    assert rc == 2
    assert "arm 'b'" in err and "bin" in err


def test_evaluate_report_benchmark_first_and_ols_wins(pipeline, tmp_path):
    out = tmp_path / "ev"
    assert run_cli(["evaluate", "--data", pipeline["out"] / "data.csv",
                    "--policies", "uniform,ols", "--n-boot", 200, "--out", out]) == 0
    lines = (out / "report.csv").read_text().splitlines()
    assert lines[0] == "policy,value,se_boot,abs_improvement,rel_improvement,diff_se_boot"
    first = lines[1].split(",")
    assert first[0].startswith("best_uniform[")
    assert float(first[3]) == 0.0
    by_name = {line.split(",")[0]: line.split(",") for line in lines[1:]}
    ols = by_name["ols_interaction"]
    # strong linear heterogeneity in the DGP: the fitted policy should clear
    # the benchmark by many bootstrap SEs
    assert float(ols[3]) > 3 * float(ols[5])


def test_evaluate_unknown_policy_exits_2(pipeline, tmp_path, capsys):
    rc = run_cli(["evaluate", "--data", pipeline["out"] / "data.csv",
                  "--policies", "uniform,frisbee", "--out", tmp_path / "o"])
    assert rc == 2
    assert "frisbee" in capsys.readouterr().err


def test_evaluate_missing_data_file_exits_2(tmp_path, capsys):
    rc = run_cli(["evaluate", "--data", tmp_path / "ghost.csv", "--out", tmp_path / "o"])
    assert rc == 2


# --------------------------------------------------------------------------
# profile commands


FAST_PROFILE_ARGS = ["--n-individuals", 2_000, "--n-replications", 30, "--seed", 0]


def test_predict_bundled_profile(tmp_path):
    out = tmp_path / "p"
    assert run_cli(["predict", "--profile", "penn_geisinger", *FAST_PROFILE_ARGS,
                    "--out", out]) == 0
    doc = json.loads((out / "prediction.json").read_text())
    assert doc["profile"]["m"] == 20
    assert doc["profile"]["sigma"] == 0.267
    assert "assumed: choose before use" in doc["profile"]["outcome_scale_note"]
    assert doc["gain_mean"] > 0
    assert doc["gain_se"] > 0


def test_predict_profile_file_matches_bundled(tmp_path):
    import persgain

    bundled = Path(persgain.__file__).parent / "profiles" / "walmart.json"
    copy = tmp_path / "my_walmart.json"
    shutil.copy(bundled, copy)
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli(["predict", "--profile", "walmart", *FAST_PROFILE_ARGS, "--out", a]) == 0
    assert run_cli(["predict", "--profile", copy, *FAST_PROFILE_ARGS, "--out", b]) == 0
    assert read(a / "prediction.json") == read(b / "prediction.json")


def test_predict_unknown_profile_exits_2(tmp_path, capsys):
    assert run_cli(["predict", "--profile", "atlantis", "--out", tmp_path / "o"]) == 2
    err = capsys.readouterr().err
    assert "atlantis" in err and "penn_geisinger" in err and "walmart" in err


def test_sensitivity_rows_sorted_with_baseline_flag(tmp_path):
    out = tmp_path / "s"
    assert run_cli(["sensitivity", "--profile", "walmart", "--parameter", "rho",
                    "--grid", "0.9,0.3,0.61", *FAST_PROFILE_ARGS, "--out", out]) == 0
    lines = (out / "sensitivity.csv").read_text().splitlines()
    assert lines[0] == "parameter,value,gain_mean,gain_se,is_baseline"
    values = [float(line.split(",")[1]) for line in lines[1:]]
    assert values == sorted(values) == [0.3, 0.61, 0.9]
    flags = [line.split(",")[4] for line in lines[1:]]
    assert flags == ["0", "1", "0"]


def test_counterfactual_four_rows(tmp_path):
    out = tmp_path / "c"
    assert run_cli(["counterfactual", "--profile-a", "walmart",
                    "--profile-b", "penn_geisinger", "--parameter", "sigma",
                    *FAST_PROFILE_ARGS, "--out", out]) == 0
    lines = (out / "counterfactual.csv").read_text().splitlines()
    assert lines[0] == "study,parameter,value_used,source,gain_mean,gain_se"
    assert len(lines) == 1 + 4
    sources = [line.split(",")[3] for line in lines[1:]]
    assert sources == ["own", "penn_geisinger", "own", "walmart"]


def test_elasticity_baseline_first(tmp_path):
    out = tmp_path / "e"
    assert run_cli(["elasticity", "--profile", "penn_geisinger", "--delta", 0.01,
                    *FAST_PROFILE_ARGS, "--out", out]) == 0
    lines = (out / "elasticity.csv").read_text().splitlines()
    assert lines[0].startswith("change,parameter,old_value,new_value,")
    body = [line.split(",") for line in lines[1:]]
    assert body[0][0] == "baseline"
    assert {row[0] for row in body[1:]} == {"s_down", "sigma_up", "rho_down", "sigma_eps_down"}
    assert len({row[-1] for row in body}) == 1  # one winner named on every row


def test_profile_commands_are_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run_cli(["elasticity", "--profile", "walmart", *FAST_PROFILE_ARGS,
                        "--out", out]) == 0
    assert read(a / "elasticity.csv") == read(b / "elasticity.csv")
    assert read(a / "resolved_config.json") == read(b / "resolved_config.json")


def test_floats_round_trip_through_outputs(tmp_path):
    # values printed to CSV/JSON carry full precision: parsing them back
    # reproduces the in-memory doubles bit for bit
    out = tmp_path / "rt"
    assert run_cli(["simulate", *SIM_ARGS, "--out", out]) == 0
    from persgain.cli import _sim_config_from, _DEFAULTS
    from persgain.simulate import simulate_gain

    resolved = json.loads((out / "resolved_config.json").read_text())["config"]
    result = simulate_gain(_sim_config_from(resolved))
    doc = json.loads((out / "result.json").read_text())
    assert doc["gain_mean"] == result.gain_mean
    csv_rows = (out / "replications.csv").read_text().splitlines()[1:]
    parsed = [float(row.split(",")[1]) for row in csv_rows]
    assert parsed == list(result.per_replication_gains)
