import json
import shutil
from pathlib import Path

import pytest
from click.testing import CliRunner

from flowscan.cli import main

MICRO_YAML = """\
grid: {n_r: 16, n_gamma: 16, r_max: 27.0, cart_h: 28, cart_w: 28}
model: {latent_dim: 8, n_flows: 2, n_ortho: 2, enc_blocks: 2, dec_blocks: 2,
        enc_channels: 8, dec_channels: 8, head_hidden: 32}
train: {steps: 6, batch_size: 2, lr: 0.001, log_every: 3}
acquisition: {n_lines: 4, n_posterior_samples: 2}
policy: {n_candidates: 20}
data: {n_train: 2, n_val: 1, n_test: 2, n_frames: 3}
"""


def _invoke(args):
    return CliRunner().invoke(main, [str(a) for a in args])


def _text(result):
    out = result.output
    try:
        out += result.stderr
    except (ValueError, AttributeError):
        pass
    return out


def _ok(args):
    result = _invoke(args)
    assert result.exit_code == 0, _text(result)
    return result


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One full CLI pipeline: pretrain, adapt under two policies, evaluate."""
    work = tmp_path_factory.mktemp("cli")
    cfg = work / "micro.yaml"
    cfg.write_text(MICRO_YAML)
    ck = work / "ck"
    ck.mkdir()
    _ok(["pretrain", "--config", cfg, "--out", ck / "pre.pt", "--seed", 0])
    _ok(["train-inference", "--config", cfg, "--checkpoint", ck / "pre.pt",
         "--policy", "trace", "--out", ck / "trace.pt"])
    _ok(["train-inference", "--config", cfg, "--checkpoint", ck / "pre.pt",
         "--policy", "equispaced", "--out", ck / "equi.pt"])
    _ok(["evaluate", "--config", cfg,
         "--checkpoint", ck / "trace.pt", "--checkpoint", ck / "equi.pt",
         "--policy", "trace", "--policy", "equispaced",
         "--out", work / "eval", "--seed", 3])
    return {"work": work, "cfg": cfg, "ck": ck, "eval": work / "eval"}


def test_pretrain_artifacts(workspace):
    ck = workspace["ck"]
    assert (ck / "pre.pt").exists()
    manifest = json.loads((ck / "pre.manifest.json").read_text())
    assert manifest["format"].startswith("flowscan-checkpoint")
    assert manifest["trained_policy"] is None
    assert manifest["extra"]["config"]["grid"]["n_r"] == 16
    lines = (ck / "pre.metrics.tsv").read_text().strip().splitlines()
    assert lines[0].startswith("# step\t")
    assert len(lines) >= 2


def test_adapted_manifest_names_policy(workspace):
    ck = workspace["ck"]
    manifest = json.loads((ck / "trace.manifest.json").read_text())
    assert manifest["trained_policy"] == "trace"
    assert json.loads(
        (ck / "equi.manifest.json").read_text())["trained_policy"] == "equispaced"


def test_evaluate_artifacts(workspace):
    out = workspace["eval"]
    report = json.loads((out / "report.json").read_text())
    assert set(report) == {"trace-l4", "equispaced-l4"}
    for entry in report.values():
        assert entry["n_videos"] == 2 and entry["n_frames"] == 6
        assert 0.0 <= entry["l1"] <= 1.0
    table = (out / "metrics.tsv").read_text().strip().splitlines()
    assert table[0].split("\t")[:3] == ["policy", "n_lines", "l1"]
    assert len(table) == 3
    for name in ("trace", "equispaced"):
        log = out / f"decisions-{name}-l4.jsonl"
        records = [json.loads(l) for l in log.read_text().splitlines()]
        assert len(records) == 6
        assert all(r["policy"] == name for r in records)


def test_single_checkpoint_serves_every_policy(workspace):
    out = workspace["work"] / "eval-uniform"
    _ok(["evaluate", "--config", workspace["cfg"],
         "--checkpoint", workspace["ck"] / "pre.pt",
         "--policy", "uniform", "--policy", "variable_density",
         "--lines", 3, "--out", out])
    report = json.loads((out / "report.json").read_text())
    assert set(report) == {"uniform-l3", "variable_density-l3"}
    assert (out / "decisions-uniform-l3.jsonl").exists()


def test_multi_checkpoint_must_name_policies(workspace):
    result = _invoke(["evaluate", "--config", workspace["cfg"],
                      "--checkpoint", workspace["ck"] / "pre.pt",
                      "--checkpoint", workspace["ck"] / "trace.pt",
                      "--policy", "trace", "--out",
                      workspace["work"] / "eval-bad"])
    assert result.exit_code == 2
    assert "was not adapted under any policy" in _text(result)

    result = _invoke(["evaluate", "--config", workspace["cfg"],
                      "--checkpoint", workspace["ck"] / "trace.pt",
                      "--checkpoint", workspace["ck"] / "equi.pt",
                      "--policy", "trace", "--policy", "uniform",
                      "--out", workspace["work"] / "eval-bad"])
    assert result.exit_code == 2
    assert "no checkpoint was adapted under: uniform" in _text(result)


def test_evaluate_requires_a_checkpoint(workspace):
    result = _invoke(["evaluate", "--config", workspace["cfg"],
                      "--out", workspace["work"] / "eval-none"])
    assert result.exit_code == 2
    assert "--checkpoint" in _text(result)


def test_replay_reproduces_the_report(workspace):
    out = workspace["work"] / "replay"
    _ok(["evaluate", "--config", workspace["cfg"],
         "--checkpoint", workspace["ck"] / "trace.pt",
         "--replay", workspace["eval"] / "decisions-trace-l4.jsonl",
         "--out", out, "--seed", 3])
    replayed = json.loads((out / "replay-report.json").read_text())
    original = json.loads(
        (workspace["eval"] / "report.json").read_text())["trace-l4"]
    assert replayed["l1"] == original["l1"]
    assert replayed["psnr"] == original["psnr"]


def test_replay_takes_exactly_one_checkpoint(workspace):
    result = _invoke(["evaluate", "--config", workspace["cfg"],
                      "--checkpoint", workspace["ck"] / "trace.pt",
                      "--checkpoint", workspace["ck"] / "equi.pt",
                      "--replay", workspace["eval"] / "decisions-trace-l4.jsonl",
                      "--out", workspace["work"] / "replay2"])
    assert result.exit_code == 2
    assert "exactly one" in _text(result)


def test_simulate_dumps_frames(workspace):
    out = workspace["work"] / "sim"
    _ok(["simulate", "--config", workspace["cfg"],
         "--checkpoint", workspace["ck"] / "pre.pt",
         "--policy", "uniform", "--video-index", 1, "--out", out])
    pgms = sorted((out / "frames").glob("*.pgm"))
    assert len(pgms) == 6  # 3 frames x (recon, truth)
    header = pgms[0].read_bytes()[:20]
    assert header.startswith(b"P5\n16 16\n255\n")
    assert len(pgms[0].read_bytes()) == len(b"P5\n16 16\n255\n") + 16 * 16
    records = [json.loads(l)
               for l in (out / "decisions.jsonl").read_text().splitlines()]
    assert len(records) == 3
    report = json.loads((out / "report.json").read_text())
    assert report["n_videos"] == 1 and report["n_frames"] == 3


def test_simulate_video_index_out_of_range(workspace):
    result = _invoke(["simulate", "--config", workspace["cfg"],
                      "--checkpoint", workspace["ck"] / "pre.pt",
                      "--video-index", 99,
                      "--out", workspace["work"] / "sim-bad"])
    assert result.exit_code == 2
    assert "out of range" in _text(result)


def test_benchmark_writes_timings(workspace):
    out = workspace["work"] / "bench.json"
    result = _ok(["benchmark", "--config", workspace["cfg"],
                  "--checkpoint", workspace["ck"] / "pre.pt",
                  "--policy", "trace", "--trials", 2, "--repeats", 1,
                  "--out", out])
    assert "active kernel backend:" in result.output
    payload = json.loads(out.read_text())
    assert payload["backend"] in ("numba", "numpy")
    assert payload["kernels"]
    assert payload["acquisition"]["trace"]["median_s"] > 0.0


def test_bad_config_exits_2(workspace, tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("optimizer: {lr: 0.1}\n")
    result = _invoke(["pretrain", "--config", bad,
                      "--out", tmp_path / "x.pt"])
    assert result.exit_code == 2
    assert "unknown section" in _text(result)

    result = _invoke(["pretrain", "--config", tmp_path / "absent.yaml",
                      "--out", tmp_path / "x.pt"])
    assert result.exit_code == 2


def test_grid_mismatch_exits_2(workspace, tmp_path):
    other = tmp_path / "other.yaml"
    other.write_text(MICRO_YAML.replace("n_r: 16", "n_r: 32"))
    result = _invoke(["evaluate", "--config", other,
                      "--checkpoint", workspace["ck"] / "pre.pt",
                      "--policy", "uniform", "--out", tmp_path / "eval"])
    assert result.exit_code == 2
    assert "grid" in _text(result)


def test_tampered_checkpoint_exits_3(workspace, tmp_path):
    src = workspace["ck"] / "pre.pt"
    dst = tmp_path / "pre.pt"
    blob = bytearray(src.read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    dst.write_bytes(bytes(blob))
    shutil.copy(workspace["ck"] / "pre.manifest.json",
                tmp_path / "pre.manifest.json")
    result = _invoke(["evaluate", "--config", workspace["cfg"],
                      "--checkpoint", dst, "--policy", "uniform",
                      "--out", tmp_path / "eval"])
    assert result.exit_code == 3
    assert "numerical failure" in _text(result)


def test_help_lists_all_commands():
    result = _ok(["--help"])
    for cmd in ("pretrain", "train-inference", "evaluate", "simulate",
                "benchmark"):
        assert cmd in result.output
