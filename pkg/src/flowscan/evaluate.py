"""Feed-forward evaluation of acquisition policies, plus log replay and
latency benchmarking.

Evaluation walks each video with a frozen model: observe the current mask,
encode, reconstruct from the flowed posterior mean, score against ground
truth, then let the policy pick the next frame's lines from a posterior
ensemble. No optimizer runs here; online encoder adaptation is a training
concern (train_inference) and evaluation measures whatever checkpoint it
is handed.

Metrics are computed in the Cartesian display domain inside the sector
validity mask by default (both reconstruction and ground truth are
resampled from their polar grids), or on the raw polar grid when
configured. Every acquisition choice is appended to a JSONL decision log
with a constant elapsed_s of 0.0 so logs from identical configurations are
byte-identical; replaying a log reproduces the metric report bit for bit
without consulting the policy.
"""

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import RejectedInputError
from .masks import NoiseModel, ScanLineMask, apply_mask, zero_fill
from .metrics import l1_metric, psnr_metric, ssim_metric
from .phantom import generate_video
from .policy import draw_ensemble
from .polar import polar_to_cartesian, validity_mask
from .training import cold_start_mask

COLD_STARTS = ("equispaced", "empty")

METRIC_DOMAINS = ("cartesian", "polar")

RECONSTRUCTIONS = ("mean", "sample_average")


@dataclass(frozen=True)
class AcquisitionConfig:
    """Per-frame acquisition settings shared by adaptation and evaluation.

    n_lines: line budget per frame.
    noise_std: observation noise level.
    n_posterior_samples: ensemble size for the adaptive policies.
    cold_start: first-frame mask before any posterior exists; "equispaced"
        observes an evenly spaced set, "empty" observes nothing.
    metric_domain: where reconstructions are scored.
    reconstruction: "mean" decodes the flowed posterior mean;
        "sample_average" averages decoded posterior draws.
    """

    n_lines: int = 6
    noise_std: float = 0.02
    n_posterior_samples: int = 3
    cold_start: str = "equispaced"
    metric_domain: str = "cartesian"
    reconstruction: str = "mean"

    def __post_init__(self):
        if self.n_lines < 1:
            raise RejectedInputError("n_lines must be >= 1")
        if self.noise_std < 0:
            raise RejectedInputError("noise_std must be >= 0")
        if self.n_posterior_samples < 1:
            raise RejectedInputError("n_posterior_samples must be >= 1")
        if self.cold_start not in COLD_STARTS:
            raise RejectedInputError(
                f"cold_start must be one of {COLD_STARTS}")
        if self.metric_domain not in METRIC_DOMAINS:
            raise RejectedInputError(
                f"metric_domain must be one of {METRIC_DOMAINS}")
        if self.reconstruction not in RECONSTRUCTIONS:
            raise RejectedInputError(
                f"reconstruction must be one of {RECONSTRUCTIONS}")


@dataclass(frozen=True)
class MetricReport:
    """Aggregated reconstruction quality of one policy over one dataset.

    The headline numbers are means over per-video means so long videos do
    not dominate. per_video maps video id to its own averages.
    """

    policy: str
    l1: float
    ssim: float
    psnr: float
    n_videos: int
    n_frames: int
    per_video: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return {"policy": self.policy, "l1": self.l1, "ssim": self.ssim,
                "psnr": self.psnr, "n_videos": self.n_videos,
                "n_frames": self.n_frames, "per_video": self.per_video,
                "config": self.config}


def _video_streams(seed, n_videos):
    # mirrors the stream layout of train_inference so a given (seed, video)
    # pair sees the same noise and policy draws in both passes
    out = []
    for child in np.random.SeedSequence(seed).spawn(n_videos):
        noise_ss, eps_ss, policy_ss = child.spawn(3)
        out.append((np.random.default_rng(noise_ss),
                    np.random.default_rng(eps_ss),
                    np.random.default_rng(policy_ss)))
    return out


class _FrameScorer:
    """Converts reconstructions to the metric domain and scores them."""

    def __init__(self, spec, domain):
        self.spec = spec
        self.domain = domain
        self.valid = validity_mask(spec) if domain == "cartesian" else None
        self._gt_cache = {}

    def ground_truth(self, key, frame):
        if self.domain == "polar":
            return frame
        got = self._gt_cache.get(key)
        if got is None:
            got = polar_to_cartesian(np.asarray(frame, dtype=np.float64),
                                     self.spec)
            self._gt_cache[key] = got
        return got

    def score(self, recon_polar, gt, key):
        if self.domain == "cartesian":
            recon = polar_to_cartesian(recon_polar, self.spec)
        else:
            recon = recon_polar
        truth = self.ground_truth(key, gt)
        return {"l1": l1_metric(recon, truth, self.valid),
                "ssim": ssim_metric(recon, truth, self.valid),
                "psnr": psnr_metric(recon, truth, self.valid)}


def _reconstruct(models, enc_out, acq, eps_rng):
    if acq.reconstruction == "mean":
        out = models.posterior_mean_reconstruction(enc_out)[0]
        return out.numpy().astype(np.float64)
    draws = models.sample_posterior(enc_out, eps_rng,
                                    acq.n_posterior_samples)
    return draws.mean(axis=0)


def _mask_record(mask):
    return [] if mask is None else list(mask.lines)


def _aggregate(policy_name, per_video, acq_dict, extra_cfg):
    ordered = dict(sorted(per_video.items()))
    n_frames = sum(v["n_frames"] for v in ordered.values())
    agg = {m: float(np.mean([v[m] for v in ordered.values()]))
           for m in ("l1", "ssim", "psnr")}
    cfg = dict(acq_dict)
    cfg.update(extra_cfg)
    return MetricReport(policy=policy_name, l1=agg["l1"], ssim=agg["ssim"],
                        psnr=agg["psnr"], n_videos=len(ordered),
                        n_frames=n_frames, per_video=ordered, config=cfg)


def _acq_dict(acq):
    return {"n_lines": acq.n_lines, "noise_std": acq.noise_std,
            "n_posterior_samples": acq.n_posterior_samples,
            "cold_start": acq.cold_start,
            "metric_domain": acq.metric_domain,
            "reconstruction": acq.reconstruction}


@torch.no_grad()
def evaluate(models, policy, dataset, spec, acq, seed=0, decisions_path=None,
             frame_hook=None):
    """Score one policy over a dataset with a frozen model.

    Returns a MetricReport; optionally appends one JSONL record per frame
    to decisions_path recording the mask actually acquired at that frame
    together with the policy scores that chose it. frame_hook, when given,
    is called as frame_hook(video_id, t, mask, reconstruction, frame) after
    each frame is scored.
    """
    videos = list(dataset.videos if hasattr(dataset, "videos") else dataset)
    if not videos:
        raise RejectedInputError("nothing to evaluate: the dataset is empty")
    models.eval()
    noise = NoiseModel(acq.noise_std)
    scorer = _FrameScorer(spec, acq.metric_domain)
    streams = _video_streams(seed, len(videos))
    per_video = {}
    sink = open(decisions_path, "a", encoding="utf-8") \
        if decisions_path is not None else None
    try:
        for (vid, frames), (noise_rng, eps_rng, policy_rng) in zip(
                videos, streams):
            mask = cold_start_mask(acq, models.config.n_gamma)
            chooser = {"score": 0.0, "candidates_examined": 0}
            scores = {"l1": [], "ssim": [], "psnr": []}
            for t in range(frames.shape[0]):
                if mask is not None:
                    obs = apply_mask(frames[t], mask, noise, noise_rng,
                                     frame_index=t)
                    filled, mask_img = zero_fill(obs, models.config.n_gamma)
                else:
                    filled = np.zeros((models.config.n_r,
                                       models.config.n_gamma))
                    mask_img = filled
                enc_out = models.encode(filled, mask_img)
                recon = _reconstruct(models, enc_out, acq, eps_rng)
                frame_scores = scorer.score(recon, frames[t], (vid, t))
                for key, val in frame_scores.items():
                    scores[key].append(val)
                if frame_hook is not None:
                    frame_hook(vid, t, mask, recon, frames[t])
                if sink is not None:
                    record = {"video": vid, "frame": t,
                              "policy": policy.name,
                              "lines": _mask_record(mask),
                              "n_lines": len(mask) if mask else 0,
                              "score": chooser["score"],
                              "candidates_examined":
                                  chooser["candidates_examined"],
                              "elapsed_s": 0.0}
                    sink.write(json.dumps(record, sort_keys=True) + "\n")
                if t + 1 < frames.shape[0]:
                    ens = None
                    if policy.needs_samples:
                        ens = draw_ensemble(enc_out, models,
                                            acq.n_posterior_samples,
                                            policy_rng)
                    decision = policy.select(t + 1, policy_rng, ens)
                    mask = decision.mask
                    chooser = {"score": decision.score,
                               "candidates_examined":
                                   decision.candidates_examined}
            per_video[vid] = {
                "l1": float(np.mean(scores["l1"])),
                "ssim": float(np.mean(scores["ssim"])),
                "psnr": float(np.mean(scores["psnr"])),
                "n_frames": int(frames.shape[0])}
        if sink is not None:
            sink.flush()
    finally:
        if sink is not None:
            sink.close()
    return _aggregate(policy.name, per_video, _acq_dict(acq),
                      {"seed": int(seed), "grid": [spec.n_r, spec.n_gamma]})


def read_decision_log(path):
    """Parse a JSONL decision log into {video: [record, ...]} in frame
    order."""
    path = Path(path)
    if not path.exists():
        raise RejectedInputError(f"decision log not found: {path}")
    by_video = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise RejectedInputError(
                f"{path}:{lineno}: not valid JSON: {exc}")
        by_video.setdefault(record["video"], []).append(record)
    for vid, records in by_video.items():
        records.sort(key=lambda r: r["frame"])
        for t, record in enumerate(records):
            if record["frame"] != t:
                raise RejectedInputError(
                    f"decision log for video {vid} is missing frame {t}")
    return by_video


@torch.no_grad()
def replay_decision_log(models, dataset, spec, acq, log_path, seed=0):
    """Re-run an evaluation along the exact masks of a decision log.

    The policy is never consulted; observation noise comes from the same
    per-video streams as evaluate, so replaying a log produced by evaluate
    with the same seed reproduces its MetricReport bit for bit.
    """
    by_video = read_decision_log(log_path)
    videos = list(dataset.videos if hasattr(dataset, "videos") else dataset)
    if not videos:
        raise RejectedInputError("nothing to replay: the dataset is empty")
    models.eval()
    noise = NoiseModel(acq.noise_std)
    scorer = _FrameScorer(spec, acq.metric_domain)
    streams = _video_streams(seed, len(videos))
    per_video = {}
    policy_name = "replay"
    for (vid, frames), (noise_rng, eps_rng, _) in zip(videos, streams):
        records = by_video.get(vid)
        if records is None:
            raise RejectedInputError(f"decision log has no video {vid}")
        if len(records) != frames.shape[0]:
            raise RejectedInputError(
                f"decision log covers {len(records)} frames of video {vid}; "
                f"the dataset has {frames.shape[0]}")
        policy_name = records[0].get("policy", policy_name)
        scores = {"l1": [], "ssim": [], "psnr": []}
        for t in range(frames.shape[0]):
            lines = records[t]["lines"]
            if lines:
                mask = ScanLineMask(tuple(lines), models.config.n_gamma)
                obs = apply_mask(frames[t], mask, noise, noise_rng,
                                 frame_index=t)
                filled, mask_img = zero_fill(obs, models.config.n_gamma)
            else:
                filled = np.zeros((models.config.n_r, models.config.n_gamma))
                mask_img = filled
            enc_out = models.encode(filled, mask_img)
            recon = _reconstruct(models, enc_out, acq, eps_rng)
            frame_scores = scorer.score(recon, frames[t], (vid, t))
            for key, val in frame_scores.items():
                scores[key].append(val)
        per_video[vid] = {
            "l1": float(np.mean(scores["l1"])),
            "ssim": float(np.mean(scores["ssim"])),
            "psnr": float(np.mean(scores["psnr"])),
            "n_frames": int(frames.shape[0])}
    return _aggregate(policy_name, per_video, _acq_dict(acq),
                      {"seed": int(seed), "grid": [spec.n_r, spec.n_gamma],
                       "replayed_from": str(log_path)})


def write_report(report, path):
    """Deterministic JSON dump of one or more MetricReports."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(report, MetricReport):
        payload = report.to_dict()
    else:
        payload = {name: r.to_dict() for name, r in report.items()}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def metrics_table(rows):
    """Tab-separated policy x budget table (one row per evaluation)."""
    lines = ["policy\tn_lines\tl1\tssim\tpsnr\tn_videos\tn_frames"]
    for row in rows:
        lines.append(
            f"{row['policy']}\t{row['n_lines']}\t{row['l1']:.6f}"
            f"\t{row['ssim']:.6f}\t{row['psnr']:.4f}"
            f"\t{row['n_videos']}\t{row['n_frames']}")
    return "\n".join(lines) + "\n"


@torch.no_grad()
def benchmark_latency(models, policy, spec, acq, trials=20, seed=0):
    """Wall-clock of the full acquisition step: encode the current
    observation, draw the posterior ensemble, and run the policy's
    selection. One untimed warmup step absorbs JIT compilation.

    Returns {"policy", "trials", "median_s", "p95_s", "times"}.
    """
    if trials < 1:
        raise RejectedInputError("trials must be >= 1")
    models.eval()
    rng = np.random.default_rng(seed)
    frame = generate_video(spec, 2, rng)[0]
    noise = NoiseModel(acq.noise_std)
    from .masks import equispaced_mask
    mask = equispaced_mask(0, models.config.n_gamma, acq.n_lines)

    def step(stream):
        obs = apply_mask(frame, mask, noise, stream)
        filled, mask_img = zero_fill(obs, models.config.n_gamma)
        enc_out = models.encode(filled, mask_img)
        ens = None
        if policy.needs_samples:
            ens = draw_ensemble(enc_out, models, acq.n_posterior_samples,
                                stream)
        return policy.select(1, stream, ens)

    step(np.random.default_rng(seed + 1))  # warmup: JIT + allocator
    times = []
    for k in range(trials):
        stream = np.random.default_rng(seed + 2 + k)
        t0 = time.perf_counter()
        step(stream)
        times.append(time.perf_counter() - t0)
    arr = np.asarray(times)
    return {"policy": policy.name, "trials": int(trials),
            "median_s": float(np.median(arr)),
            "p95_s": float(np.percentile(arr, 95.0)),
            "times": [float(t) for t in times]}
