"""Command-line surface: config round-trips, stage wiring, error reporting,
and pipeline determinism."""

import json

import numpy as np
import pytest

from rcakit.cli import main
from rcakit.config import RunConfig, load_config, save_config
from rcakit.panel import read_csv


FAST = {
    "d_full": 8, "k_mask": 1, "T": 120, "expected_degree": 2.0,
    "n_windows": 2, "alarms_per_window": 1,
    "L_outer": 1, "steps_per_round": 8, "L_inner": 2, "l_scheduling": 0,
    "r": 1, "n_rw": 2000,
}


def write_cfg(tmp_path, **overrides):
    cfg = RunConfig(**{**FAST, **overrides})
    path = tmp_path / "config.json"
    save_config(cfg, path)
    return path


# -- config ------------------------------------------------------------------------


def test_config_round_trip(tmp_path):
    cfg = RunConfig(seed=5, lam=2.5, mechanism="noise")
    path = tmp_path / "c.json"
    save_config(cfg, path)
    assert load_config(path) == cfg


def test_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 1, "bogus_knob": 2}))
    with pytest.raises(ValueError, match="bogus_knob"):
        load_config(path)


def test_config_fingerprint_tracks_content():
    a, b = RunConfig(seed=0), RunConfig(seed=1)
    assert a.fingerprint() == RunConfig(seed=0).fingerprint()
    assert a.fingerprint() != b.fingerprint()


def test_config_ablation_forces_r_zero():
    cfg = RunConfig(r=4, disable_deconfounding=True)
    assert cfg.to_train_config().r == 0


def test_config_init_command(tmp_path, capsys):
    out = tmp_path / "defaults.json"
    assert main(["config-init", "--out", str(out)]) == 0
    assert load_config(out) == RunConfig()
    capsys.readouterr()
    # bare invocation prints the defaults as JSON
    assert main(["config-init"]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed == RunConfig().to_dict()


# -- generate ----------------------------------------------------------------------


def test_generate_writes_bundle(tmp_path):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "bundle"
    assert main(["generate", "--config", str(cfg),
                 "--out-dir", str(out)]) == 0
    panel = read_csv(out / "metrics.csv")
    assert panel.T == FAST["T"] and panel.d == FAST["d_full"] - FAST["k_mask"]
    assert (out / "ground_truth.json").exists()
    assert (out / "alarms.json").exists()


def test_generate_seed_repetition_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, seed=11)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    main(["generate", "--config", str(cfg), "--out-dir", str(out1)])
    main(["generate", "--config", str(cfg), "--out-dir", str(out2)])
    for name in ("metrics.csv", "ground_truth.json", "alarms.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


# -- stage errors ------------------------------------------------------------------


def test_discover_reports_missing_metrics(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    rc = main(["discover", "--config", str(cfg),
               "--out-dir", str(tmp_path / "o"),
               "--metrics", str(tmp_path / "nope.csv")])
    assert rc == 1
    assert "error" in capsys.readouterr().err


def test_localize_rejects_mismatched_checkpoint(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "o"
    main(["generate", "--config", str(cfg), "--out-dir", str(out)])
    main(["discover", "--config", str(cfg), "--out-dir", str(out),
          "--metrics", str(out / "metrics.csv")])
    # panel with wrong width
    bad = out / "narrow.csv"
    bad.write_text("a,b\n" + "\n".join("1.0,2.0" for _ in range(50)) + "\n")
    rc = main(["localize", "--config", str(cfg), "--out-dir", str(out),
               "--metrics", str(bad),
               "--checkpoint", str(out / "checkpoint.json"),
               "--alarms", str(out / "alarms.json")])
    assert rc == 1
    assert "trained on" in capsys.readouterr().err


def test_evaluate_rejects_empty_rankings(tmp_path, capsys):
    rankings = tmp_path / "rankings.json"
    rankings.write_text("[]")
    truth = tmp_path / "truth.json"
    truth.write_text("{}")
    rc = main(["evaluate", "--rankings", str(rankings),
               "--truth", str(truth)])
    assert rc == 1
    assert "nothing to evaluate" in capsys.readouterr().err


# -- full pipeline ------------------------------------------------------------------


@pytest.mark.slow
def test_run_pipeline_end_to_end_and_deterministic(tmp_path):
    cfg = write_cfg(tmp_path, seed=2)
    out1, out2 = tmp_path / "run1", tmp_path / "run2"
    assert main(["run", "--config", str(cfg), "--out-dir", str(out1)]) == 0
    assert main(["run", "--config", str(cfg), "--out-dir", str(out2)]) == 0

    report = json.loads((out1 / "metrics_report.json").read_text())
    for key in ("PR@1", "PR@3", "PR@5", "PR@Avg", "RankScore", "cases"):
        assert key in report
    graph_metrics = json.loads((out1 / "graph_metrics.json").read_text())
    assert set(graph_metrics) == {"AUC", "SHD"}
    manifest = json.loads((out1 / "manifest.json").read_text())
    assert manifest["config_fingerprint"] == RunConfig(**{**FAST, "seed": 2}).fingerprint()

    # byte-identical reports and rankings across repeats
    names = ["metrics_report.json", "metrics_report.csv", "rankings.json",
             "graph.json", "graph_metrics.json", "weights.csv"]
    names += sorted(p.name for p in out1.iterdir()
                    if p.name.startswith("ranking_"))
    for name in names:
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name
