import csv
import json

import pytest

from lorank import cli, export
from lorank.cli import RunConfig


SMALL_CONFIG = {
    "model": {"layers": 4, "dim": 16, "seed": 5},
    "task": {"perturbed_layers": [1, 2], "magnitude": [1.5, 1.0],
             "batch_size": 32, "seed": 6},
    "calibration": {"n_batches": 4},
    "allocation": {"r_min": 1, "r_max": 8, "seed": 7},
}


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(SMALL_CONFIG))
    return str(path)


def test_defaults_match_reference_setup():
    cfg = RunConfig()
    assert cfg.n_batches == 8
    assert cfg.aggregation == "mean"
    assert cfg.r_min == 1
    assert cfg.layers == 8 and len(cfg.perturbed_layers) == 3


def test_full_pipeline(tmp_path, small_config):
    scores = tmp_path / "scores.json"
    pattern = tmp_path / "pattern.json"
    resized = tmp_path / "resize.json"
    rankmap = tmp_path / "map.csv"

    assert cli.main(["calibrate", "--config", small_config,
                     "--out", str(scores)]) == 0
    assert cli.main(["allocate", "--scores", str(scores), "--base-rank", "4",
                     "--r-max", "8", "--base-alpha", "8",
                     "--out", str(pattern)]) == 0
    assert cli.main(["resize", "--config", small_config,
                     "--pattern", str(pattern), "--out", str(resized)]) == 0
    assert cli.main(["report", "--patterns", str(pattern),
                     "--out", str(rankmap)]) == 0

    loaded, alphas, meta = export.read_pattern(pattern)
    assert sum(loaded.ranks()) == 16
    summary = json.loads(resized.read_text())
    assert summary["total_rank"] == 16
    for mid, info in summary["modules"].items():
        assert info["new_rank"] == loaded.rank_of(mid)
        assert info["new_alpha"] == alphas[mid]
    rows = list(csv.reader(rankmap.read_text().splitlines()))
    assert rows[0] == ["layer", "linear"]


def test_pipeline_determinism(tmp_path, small_config):
    outs = []
    for tag in ("one", "two"):
        d = tmp_path / tag
        d.mkdir()
        scores = d / "scores.json"
        pattern = d / "pattern.json"
        cli.main(["calibrate", "--config", small_config, "--out", str(scores)])
        cli.main(["allocate", "--scores", str(scores), "--base-rank", "4",
                  "--r-max", "8", "--out", str(pattern)])
        outs.append((scores.read_bytes(), pattern.read_bytes(),
                     (d / "pattern.json.trace.txt").read_bytes()))
    assert outs[0] == outs[1]


def test_baseline_budget_and_provenance(tmp_path, small_config):
    base = tmp_path / "baseline.json"
    assert cli.main(["baseline", "--config", small_config,
                     "--out", str(base)]) == 0
    pattern, _, meta = export.read_pattern(base)
    assert pattern.provenance == "random"
    assert pattern.budget == 16
    assert meta["calibration"]["aggregation"] == "random"


def test_zero_magnitude_warns_and_exits_zero(tmp_path, capsys):
    cfg = json.loads(json.dumps(SMALL_CONFIG))
    cfg["task"]["magnitude"] = 0.0
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "scores.json"
    assert cli.main(["calibrate", "--config", str(path), "--out", str(out)]) == 0
    assert "warning" in capsys.readouterr().err
    doc = json.loads(out.read_text())
    assert all(v == 0.0 for v in doc["scores"].values())


def test_exit_code_2_on_bad_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"model": {"not_a_key": 1}}))
    assert cli.main(["calibrate", "--config", str(path),
                     "--out", str(tmp_path / "s.json")]) == 2


def test_exit_code_2_on_infeasible_bounds(tmp_path, small_config):
    scores = tmp_path / "scores.json"
    cli.main(["calibrate", "--config", small_config, "--out", str(scores)])
    assert cli.main(["allocate", "--scores", str(scores), "--base-rank", "4",
                     "--r-min", "6", "--r-max", "8",
                     "--out", str(tmp_path / "p.json")]) == 2


def test_exit_code_2_on_module_mismatch(tmp_path, small_config):
    scores = tmp_path / "scores.json"
    pattern = tmp_path / "pattern.json"
    cli.main(["calibrate", "--config", small_config, "--out", str(scores)])
    cli.main(["allocate", "--scores", str(scores), "--base-rank", "4",
              "--r-max", "8", "--out", str(pattern)])
    other = json.loads(json.dumps(SMALL_CONFIG))
    other["model"]["layers"] = 6
    other_path = tmp_path / "other.json"
    other_path.write_text(json.dumps(other))
    assert cli.main(["resize", "--config", str(other_path),
                     "--pattern", str(pattern)]) == 2


def test_resize_noop_when_pattern_is_uniform(tmp_path, small_config, capsys):
    cfg = json.loads(json.dumps(SMALL_CONFIG))
    cfg["task"]["magnitude"] = 0.0  # degenerate -> uniform fallback
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    scores = tmp_path / "scores.json"
    pattern = tmp_path / "pattern.json"
    summary = tmp_path / "resize.json"
    cli.main(["calibrate", "--config", str(path), "--out", str(scores)])
    cli.main(["allocate", "--scores", str(scores), "--base-rank", "4",
              "--r-max", "8", "--base-alpha", "8", "--out", str(pattern)])
    loaded, _, _ = export.read_pattern(pattern)
    assert loaded.provenance == "uniform"
    assert cli.main(["resize", "--config", str(path), "--pattern", str(pattern),
                     "--out", str(summary)]) == 0
    doc = json.loads(summary.read_text())
    for info in doc["modules"].values():
        assert info["old_rank"] == info["new_rank"] == 4
        assert info["old_alpha"] == info["new_alpha"]


def test_artifacts_flow_downstream_unmodified(tmp_path, small_config):
    # every artifact written by one command is accepted by the next
    scores = tmp_path / "s.json"
    pattern = tmp_path / "p.json"
    base = tmp_path / "b.json"
    cli.main(["calibrate", "--config", small_config, "--out", str(scores)])
    cli.main(["allocate", "--scores", str(scores), "--base-rank", "4",
              "--r-max", "8", "--out", str(pattern)])
    cli.main(["baseline", "--config", small_config, "--out", str(base)])
    assert cli.main(["report", "--patterns", str(pattern), str(base),
                     "--out", str(tmp_path / "m.csv")]) == 0


def test_sweep_grid_and_entropy(tmp_path, small_config):
    out = tmp_path / "sweep.csv"
    assert cli.main(["sweep", "--config", small_config,
                     "--r-min-grid", "1,4", "--n-batches-grid", "4",
                     "--seeds", "11", "--train-steps", "20",
                     "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.read_text().splitlines()))
    assert len(rows) == 2
    assert all(r["error"] == "" for r in rows)
    by_rmin = {r["r_min"]: r for r in rows}
    # raising the floor pushes the allocation toward uniform: entropy up
    assert float(by_rmin["4"]["entropy"]) > float(by_rmin["1"]["entropy"])
    assert float(by_rmin["4"]["frac_at_rmax"]) <= float(by_rmin["1"]["frac_at_rmax"])


def test_seed_override_derivation(small_config):
    cfg = RunConfig.from_file(small_config)
    ns = type("NS", (), {"seed": 100, "n_batches": None, "agg": None,
                         "r_min": None, "r_max": None, "base_rank": None})()
    cfg.apply_overrides(ns)
    assert (cfg.model_seed, cfg.data_seed, cfg.allocation_seed) == (100, 101, 102)
