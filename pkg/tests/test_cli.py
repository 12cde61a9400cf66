import json

import numpy as np
import pytest

from malt.cli import main
from malt.models import load_model


def run(*argv):
    return main([str(a) for a in argv])


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Clustered data plus a small trained MLP, a linear model and a binary two-layer net."""
    root = tmp_path_factory.mktemp("cli")
    assert run("gen-data", "--kind", "clusters", "--d", 6, "--classes", 4, "--r", 24, "--seed", 2, "--out", root / "data") == 0
    assert run("train", "--data", root / "data" / "data.csv", "--hidden", "16", "--steps", 50, "--lr", 0.5,
               "--out", root / "mlp") == 0
    assert run("train", "--data", root / "data" / "data.csv", "--model-kind", "linear", "--steps", 30,
               "--out", root / "linear") == 0
    assert run("gen-data", "--kind", "clusters", "--d", 6, "--classes", 2, "--r", 16, "--seed", 3, "--out", root / "bin") == 0
    assert run("train", "--data", root / "bin" / "data.csv", "--model-kind", "linear", "--steps", 30,
               "--out", root / "bin_linear") == 0
    return root


def test_gen_data_files_and_rerun(tmp_path):
    for out in ("a", "b"):
        assert run("gen-data", "--d", 8, "--p", 2, "--r", 20, "--seed", 1, "--out", tmp_path / out) == 0
    a = _files(tmp_path / "a")
    assert {"data.csv", "basis.json"} <= set(a)
    rows = a["data.csv"].decode().splitlines()
    assert len(rows) - 1 == 20
    basis = json.loads(a["basis.json"])
    assert basis["ambient_dim"] == 8 and basis["data_dim"] == 2
    assert a == _files(tmp_path / "b")


def test_gen_data_invalid_spec(tmp_path, capsys):
    assert run("gen-data", "--p", 8, "--d", 8, "--out", tmp_path) == 2
    assert "data_dim must be < ambient_dim" in capsys.readouterr().err


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"d": 5, "p": 3, "r": 7}))
    assert run("gen-data", "--config", cfg, "--r", 9, "--out", tmp_path / "o") == 0
    resolved = json.loads((tmp_path / "o" / "resolved_config.json").read_text())
    assert (resolved["d"], resolved["p"], resolved["r"]) == (5, 3, 9)
    cfg.write_text(json.dumps({"bogus": 1}))
    assert run("gen-data", "--config", cfg, "--out", tmp_path / "o") == 2
    cfg.write_text("{not json")
    assert run("gen-data", "--config", cfg, "--out", tmp_path / "o") == 3


def test_train_two_layer_snapshot_and_zero_steps(workspace, tmp_path):
    data = workspace / "bin" / "data.csv"
    assert run("train", "--data", data, "--model-kind", "two_layer", "--m", 8, "--steps", 20, "--out", tmp_path / "t") == 0
    trained = load_model(tmp_path / "t" / "model.json")
    assert not np.array_equal(trained.first_layer, trained.init_snapshot)
    assert run("train", "--data", data, "--model-kind", "two_layer", "--m", 8, "--steps", 0, "--out", tmp_path / "z") == 0
    fresh = load_model(tmp_path / "z" / "model.json")
    assert np.array_equal(fresh.first_layer, trained.init_snapshot)
    assert np.array_equal(fresh.first_layer, fresh.init_snapshot)
    assert run("train", "--data", data, "--model-kind", "two_layer", "--m", 8, "--steps", 20, "--out", tmp_path / "t2") == 0
    assert _files(tmp_path / "t") == _files(tmp_path / "t2")


def test_train_bad_data_file(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("label,x0,x1\n0,0.1,abc\n")
    assert run("train", "--data", bad, "--out", tmp_path) == 3
    assert "row" in capsys.readouterr().err
    assert run("train", "--data", tmp_path / "missing.csv", "--out", tmp_path) == 3
    assert run("train", "--out", tmp_path) == 2


def test_attack_outputs(workspace, tmp_path):
    out = tmp_path / "att"
    assert run("attack", "--model", workspace / "mlp" / "model.json", "--data", workspace / "data" / "data.csv",
               "--compare", "malt,naive", "--a", 3, "--iters", 20, "--epsilon", 0.3, "--c-sweep", "3",
               "--out", out) == 0
    files = _files(out)
    assert {"results.csv", "summary.json", "rank_histogram.png", "resolved_config.json"} <= set(files)
    summary = json.loads(files["summary.json"])
    for s in summary["methods"].values():
        assert sum(s["success_by_rank"]) == s["attack_successes"]
        assert len(s["success_by_rank"]) == 3
    assert "malt_vs_naive" in summary["inclusion"]
    assert summary["c_sweep"]["3"]["identical_to_default"] in (True, False)
    header = files["results.csv"].decode().splitlines()[0]
    assert header == ("example_index,label,clean_pred,method,success,target_used,target_rank_in_plan,"
                      "confidence_rank_of_target,linf_norm,forward_passes,backward_passes")
    assert len(files["results.csv"].decode().splitlines()) == 1 + 2 * 24


def test_attack_two_class_methods_agree(workspace, tmp_path):
    assert run("attack", "--model", workspace / "bin_linear" / "model.json", "--data", workspace / "bin" / "data.csv",
               "--compare", "malt,naive", "--epsilon", 0.2, "--iters", 10, "--no-figures", "--out", tmp_path) == 0
    s = json.loads((tmp_path / "summary.json").read_text())["methods"]
    assert s["malt"]["success_by_rank"] == s["naive"]["success_by_rank"]
    assert s["malt"]["robust_accuracy"] == s["naive"]["robust_accuracy"]
    assert not (tmp_path / "rank_histogram.png").exists()


def test_attack_exact_linear_needs_linear_model(workspace, tmp_path):
    args = ["--data", workspace / "data" / "data.csv", "--method", "exact-linear", "--out", tmp_path]
    assert run("attack", "--model", workspace / "mlp" / "model.json", *args) == 2
    assert run("attack", "--model", workspace / "linear" / "model.json", *args) == 0


def test_budget_only(capsys):
    assert run("attack", "--c", 100, "--a", 9, "--iters", 100, "--budget-only") == 0
    report = json.loads(capsys.readouterr().out)
    assert (report["backward_total"], report["forward_total"], report["combined_total"]) == (1000, 900, 1900)


def test_budget_command(capsys):
    assert run("budget") == 0
    payload = json.loads(capsys.readouterr().out)
    aa = payload["reports"][1]
    assert (aa["backward_total"], aa["forward_total"]) == (1900, 7827)
    assert payload["combined_ratio"] == pytest.approx(9727 / 1900)
    assert run("budget", "--method", "nope") == 2


def test_probe_linear_is_zero(workspace, tmp_path):
    assert run("probe", "--model", workspace / "linear" / "model.json", "--data", workspace / "data" / "data.csv",
               "--kind", "gradient", "--epsilon", 0.031372549, "--out", tmp_path) == 0
    resolved = json.loads((tmp_path / "resolved_config.json").read_text())
    assert resolved["epsilon"] == 0.031372549 and resolved["steps"] == 100
    rows = [r.split(",") for r in (tmp_path / "trace.csv").read_text().splitlines()[1:]]
    assert len(rows) == 100
    assert all(float(r[1]) <= 1e-12 for r in rows)
    stats = (tmp_path / "stats.csv").read_text().splitlines()
    assert stats[0] == "step_i,alpha_mean,alpha_std,alpha_part_mean,alpha_part_std"
    assert {"alpha_stats.png", "logit_trace.png"} <= set(_files(tmp_path))


def test_verify_theory_degenerate_delta(tmp_path, capsys):
    grid = tmp_path / "g.json"
    grid.write_text(json.dumps({"configs": [{"delta": 1.0}]}))
    assert run("verify-theory", "--grid", grid, "--out", tmp_path / "o") == 2
    assert not (tmp_path / "o").exists()


def test_verify_theory_columns(tmp_path):
    small = {"num_points": 8, "train_steps": 5, "n_direction_samples": 4}
    grid = tmp_path / "g.json"
    grid.write_text(json.dumps({
        "configs": [dict(d=16, p=4, m=16, **small)], "trials_per_cfg": 20,
        "trend": {"d_grid": [16, 32], "trials": 2, "overrides": small},
    }))
    assert run("verify-theory", "--grid", grid, "--out", tmp_path / "o") == 0
    trials = (tmp_path / "o" / "trials.csv").read_text().splitlines()
    header = trials[0].split(",")
    for col in ("measured_sup_grad_diff", "thm41_bound", "measured_grad_norm", "thm42_bound", "lemmaA2_drift"):
        assert col in header
    assert len(trials) == 21
    assert len((tmp_path / "o" / "trend.csv").read_text().splitlines()) == 3
    violations = (tmp_path / "o" / "violations.csv").read_text().splitlines()[0].split(",")
    assert "thm41_violation_rate" in violations and "thm42_violation_rate" in violations


def test_help_lists_reported_defaults(capsys):
    with pytest.raises(SystemExit):
        run("attack", "--help")
    text = capsys.readouterr().out
    for needle in ("default: 100", "default: 9", "0.0313725"):
        assert needle in text
