import json

import numpy as np
import pytest
import torch

from flowscan import (AcquisitionConfig, MetricReport, PolicyConfig,
                      RejectedInputError, benchmark_latency, evaluate,
                      make_policy, replay_decision_log)
from flowscan.evaluate import (metrics_table, read_decision_log,
                               write_report)

LOG_FIELDS = {"video", "frame", "policy", "lines", "n_lines", "score",
              "candidates_examined", "elapsed_s"}


def _acq(**kw):
    base = dict(n_lines=4, noise_std=0.02, n_posterior_samples=2)
    base.update(kw)
    return AcquisitionConfig(**base)


def _policy(name, n_gamma=16, **kw):
    cfg = PolicyConfig(n_lines=4, n_posterior_samples=2, n_candidates=25,
                       **kw)
    return make_policy(name, n_gamma, cfg)


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("kw", [
    {"n_lines": 0}, {"noise_std": -0.1}, {"n_posterior_samples": 0},
    {"cold_start": "warm"}, {"metric_domain": "fourier"},
    {"reconstruction": "mode"},
])
def test_acquisition_config_rejects_invalid(kw):
    with pytest.raises(RejectedInputError):
        AcquisitionConfig(**kw)


# ---------------------------------------------------------------------------
# evaluation determinism and structure
# ---------------------------------------------------------------------------

def test_evaluate_is_deterministic_bitwise(tmp_path, trained_tiny,
                                           tiny_test_ds, tiny_spec):
    acq = _acq()
    outs = []
    for run in range(2):
        log = tmp_path / f"run{run}.jsonl"
        report = evaluate(trained_tiny, _policy("trace"), tiny_test_ds,
                          tiny_spec, acq, seed=11, decisions_path=log)
        outs.append((json.dumps(report.to_dict(), sort_keys=True),
                     log.read_bytes()))
    assert outs[0][0] == outs[1][0]
    assert outs[0][1] == outs[1][1]


def test_evaluate_report_structure(trained_tiny, tiny_test_ds, tiny_spec):
    report = evaluate(trained_tiny, _policy("equispaced"), tiny_test_ds,
                      tiny_spec, _acq(), seed=0)
    assert isinstance(report, MetricReport)
    assert report.policy == "equispaced"
    assert report.n_videos == len(tiny_test_ds)
    assert report.n_frames == tiny_test_ds.n_frames
    assert 0.0 <= report.l1 <= 1.0
    assert -1.0 <= report.ssim <= 1.0
    assert np.isfinite(report.psnr)
    assert set(report.per_video) == {vid for vid, _ in tiny_test_ds}
    for stats in report.per_video.values():
        assert set(stats) == {"l1", "ssim", "psnr", "n_frames"}
    # the headline numbers are means of per-video means
    np.testing.assert_allclose(
        report.l1, np.mean([v["l1"] for v in report.per_video.values()]))
    assert report.config["n_lines"] == 4
    assert report.config["seed"] == 0


def test_evaluate_never_touches_weights(trained_tiny, tiny_test_ds,
                                        tiny_spec):
    before = {k: v.clone() for k, v in trained_tiny.state_dict().items()}
    evaluate(trained_tiny, _policy("covariance"), tiny_test_ds, tiny_spec,
             _acq(), seed=1)
    after = trained_tiny.state_dict()
    for k, v in before.items():
        assert torch.equal(v, after[k]), f"{k} changed during evaluation"


def test_evaluate_rejects_empty_dataset(trained_tiny, tiny_spec):
    with pytest.raises(RejectedInputError):
        evaluate(trained_tiny, _policy("uniform"), [], tiny_spec, _acq())


def test_decision_log_schema(tmp_path, trained_tiny, tiny_test_ds,
                             tiny_spec):
    log = tmp_path / "decisions.jsonl"
    evaluate(trained_tiny, _policy("trace"), tiny_test_ds, tiny_spec,
             _acq(), seed=3, decisions_path=log)
    records = [json.loads(line) for line in log.read_text().splitlines()]
    assert len(records) == tiny_test_ds.n_frames
    for rec in records:
        assert set(rec) == LOG_FIELDS
        assert rec["policy"] == "trace"
        assert rec["elapsed_s"] == 0.0
        assert rec["n_lines"] == len(rec["lines"]) == 4
        assert rec["lines"] == sorted(set(rec["lines"]))
    # frame 0 is the cold-start mask with a placeholder score
    first = [r for r in records if r["frame"] == 0]
    assert all(r["score"] == 0.0 for r in first)
    assert all(r["lines"] == [0, 4, 8, 12] for r in first)


def test_decision_log_empty_cold_start(tmp_path, trained_tiny, tiny_test_ds,
                                       tiny_spec):
    log = tmp_path / "decisions.jsonl"
    evaluate(trained_tiny, _policy("uniform"), tiny_test_ds, tiny_spec,
             _acq(cold_start="empty"), seed=3, decisions_path=log)
    records = [json.loads(line) for line in log.read_text().splitlines()]
    for rec in records:
        if rec["frame"] == 0:
            assert rec["lines"] == [] and rec["n_lines"] == 0
        else:
            assert rec["n_lines"] == 4


def test_frame_hook_sees_every_frame(trained_tiny, tiny_test_ds, tiny_spec):
    seen = []
    evaluate(trained_tiny, _policy("equispaced"), tiny_test_ds, tiny_spec,
             _acq(), seed=0,
             frame_hook=lambda vid, t, mask, recon, frame: seen.append(
                 (vid, t, recon.shape, frame.shape)))
    assert len(seen) == tiny_test_ds.n_frames
    assert all(shape == (tiny_spec.n_r, tiny_spec.n_gamma)
               for _, _, shape, _ in seen)


def test_metric_domains_and_reconstructions_differ(trained_tiny,
                                                   tiny_test_ds, tiny_spec):
    base = evaluate(trained_tiny, _policy("equispaced"), tiny_test_ds,
                    tiny_spec, _acq(), seed=5)
    polar = evaluate(trained_tiny, _policy("equispaced"), tiny_test_ds,
                     tiny_spec, _acq(metric_domain="polar"), seed=5)
    sample = evaluate(trained_tiny, _policy("equispaced"), tiny_test_ds,
                      tiny_spec, _acq(reconstruction="sample_average"),
                      seed=5)
    assert base.l1 != polar.l1
    assert base.l1 != sample.l1


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

def test_replay_reproduces_report_bitwise(tmp_path, trained_tiny,
                                          tiny_test_ds, tiny_spec):
    acq = _acq()
    log = tmp_path / "decisions.jsonl"
    report = evaluate(trained_tiny, _policy("trace"), tiny_test_ds,
                      tiny_spec, acq, seed=7, decisions_path=log)
    replayed = replay_decision_log(trained_tiny, tiny_test_ds, tiny_spec,
                                   acq, log, seed=7)
    assert replayed.policy == "trace"
    assert replayed.l1 == report.l1
    assert replayed.ssim == report.ssim
    assert replayed.psnr == report.psnr
    assert replayed.per_video == report.per_video


def test_replay_with_empty_cold_start(tmp_path, trained_tiny, tiny_test_ds,
                                      tiny_spec):
    acq = _acq(cold_start="empty")
    log = tmp_path / "decisions.jsonl"
    report = evaluate(trained_tiny, _policy("uniform"), tiny_test_ds,
                      tiny_spec, acq, seed=2, decisions_path=log)
    replayed = replay_decision_log(trained_tiny, tiny_test_ds, tiny_spec,
                                   acq, log, seed=2)
    assert replayed.per_video == report.per_video


def test_replay_validates_coverage(tmp_path, trained_tiny, tiny_test_ds,
                                   tiny_spec):
    acq = _acq()
    log = tmp_path / "decisions.jsonl"
    evaluate(trained_tiny, _policy("uniform"), tiny_test_ds, tiny_spec, acq,
             seed=2, decisions_path=log)
    # drop the last record: coverage validation must catch it
    lines = log.read_text().splitlines()
    (tmp_path / "short.jsonl").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(RejectedInputError):
        replay_decision_log(trained_tiny, tiny_test_ds, tiny_spec, acq,
                            tmp_path / "short.jsonl", seed=2)
    # drop a middle frame: ordering validation in the reader catches it
    broken = [ln for ln in lines if '"frame": 1' not in ln]
    (tmp_path / "gap.jsonl").write_text("\n".join(broken) + "\n")
    with pytest.raises(RejectedInputError):
        read_decision_log(tmp_path / "gap.jsonl")


def test_read_decision_log_errors(tmp_path):
    with pytest.raises(RejectedInputError):
        read_decision_log(tmp_path / "missing.jsonl")
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"video": "v", "frame": 0}\nnot json\n')
    with pytest.raises(RejectedInputError):
        read_decision_log(bad)


# ---------------------------------------------------------------------------
# report/table serialization
# ---------------------------------------------------------------------------

def test_write_report_deterministic(tmp_path, trained_tiny, tiny_test_ds,
                                    tiny_spec):
    report = evaluate(trained_tiny, _policy("equispaced"), tiny_test_ds,
                      tiny_spec, _acq(), seed=0)
    a = write_report(report, tmp_path / "a.json").read_bytes()
    b = write_report(report, tmp_path / "b.json").read_bytes()
    assert a == b
    payload = json.loads(a)
    assert payload["policy"] == "equispaced"
    both = write_report({"x": report, "y": report}, tmp_path / "c.json")
    assert set(json.loads(both.read_text())) == {"x", "y"}


def test_metrics_table_format():
    rows = [{"policy": "trace", "n_lines": 6, "l1": 0.0123456, "ssim": 0.9,
             "psnr": 30.0, "n_videos": 2, "n_frames": 10}]
    table = metrics_table(rows)
    lines = table.splitlines()
    assert lines[0] == "policy\tn_lines\tl1\tssim\tpsnr\tn_videos\tn_frames"
    assert lines[1].startswith("trace\t6\t0.012346\t0.900000\t30.0000")


# ---------------------------------------------------------------------------
# latency benchmark
# ---------------------------------------------------------------------------

def test_benchmark_latency_contract(trained_tiny, tiny_spec):
    out = benchmark_latency(trained_tiny, _policy("trace"), tiny_spec,
                            _acq(), trials=5, seed=0)
    assert out["policy"] == "trace"
    assert out["trials"] == 5
    assert len(out["times"]) == 5
    assert all(t > 0 for t in out["times"])
    assert out["median_s"] <= out["p95_s"]
    with pytest.raises(RejectedInputError):
        benchmark_latency(trained_tiny, _policy("trace"), tiny_spec, _acq(),
                          trials=0)
