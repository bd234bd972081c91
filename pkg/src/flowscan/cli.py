"""Command line entry points.

Five subcommands cover the workflow: pretrain fits the model on dense
frames, train-inference adapts the encoder online along one policy's scan
paths and saves the adapted checkpoint, evaluate scores policies over a
video set with frozen weights (and can replay a prior decision log),
simulate rolls a single video end to end with per-frame image dumps, and
benchmark times the compute kernels and the acquisition step.

Exit codes: 0 on success, 2 for configuration or input errors, 3 for
numerical failures during training or inference.
"""

import dataclasses
import functools
import json
import sys
import time
from pathlib import Path

import click
import numpy as np
import torch

from . import __version__, kernels
from .config import config_to_dict, load_config
from .datasets import (SPLITS, load_echonet_format, load_videos,
                       synth_phantom_dataset)
from .errors import (ConfigurationError, FlowscanError, NumericalError,
                     RejectedInputError)
from .evaluate import (benchmark_latency, evaluate, metrics_table,
                       replay_decision_log, write_report)
from .kernels.bench import format_kernel_benchmark, run_kernel_benchmark
from .model import FlowPosterior, load_checkpoint, save_checkpoint
from .polar import density_weights
from .policy import POLICY_NAMES, make_policy
from .training import pretrain_generative, train_inference

_SPLIT_SIZES = {"train": "n_train", "val": "n_val", "test": "n_test"}


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigurationError, RejectedInputError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except NumericalError as exc:
            click.echo(f"numerical failure: {exc}", err=True)
            diag = getattr(exc, "diagnostics", None)
            if diag:
                click.echo(f"diagnostics: {json.dumps(diag, sort_keys=True)}",
                           err=True)
            sys.exit(3)
        except FlowscanError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
    return wrapper


def _limit(dataset, limit):
    if limit is None or limit >= len(dataset):
        return dataset
    return dataclasses.replace(dataset, videos=dataset.videos[:limit])


def _dataset_for(cfg, split, bundle=None, limit=None):
    """Resolve the video source: an explicit .npz bundle, the configured
    scan directory, or generated phantoms."""
    if bundle is not None:
        dataset, _ = load_videos(bundle)
        shape = dataset.videos[0][1].shape[1:]
        if shape != (cfg.grid.n_r, cfg.grid.n_gamma):
            raise ConfigurationError(
                f"dataset grid {shape} does not match configured grid "
                f"({cfg.grid.n_r}, {cfg.grid.n_gamma})")
    elif cfg.data.source == "echonet_format":
        dataset = load_echonet_format(cfg.data.path, cfg.grid, split=split)
        for vid, reason in dataset.skipped:
            click.echo(f"skipped video {vid}: {reason}", err=True)
    else:
        count = getattr(cfg.data, _SPLIT_SIZES[split])
        dataset = synth_phantom_dataset(cfg.grid, split, cfg.data.base_seed,
                                        count, cfg.data.n_frames, cfg.phantom)
    return _limit(dataset, limit)


def _load_model_for(cfg, checkpoint):
    model, manifest = load_checkpoint(checkpoint)
    got = (model.config.n_r, model.config.n_gamma)
    want = (cfg.grid.n_r, cfg.grid.n_gamma)
    if got != want:
        raise ConfigurationError(
            f"checkpoint {checkpoint} was trained on a {got} grid but the "
            f"config specifies {want}")
    return model, manifest


def _train_cfg(cfg, use_density_weights, **overrides):
    train = cfg.train
    if use_density_weights:
        train = dataclasses.replace(train,
                                    loss_weights=density_weights(cfg.grid))
    if overrides:
        train = dataclasses.replace(train, **{
            k: v for k, v in overrides.items() if v is not None})
    return train


def _fresh(path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.exists():
        path.unlink()
    return path


def _policy_models(cfg, checkpoints, names):
    """Map each requested policy to its checkpoint.

    One checkpoint serves every policy; with several, each policy needs a
    checkpoint whose manifest says it was adapted under that policy.
    """
    if not checkpoints:
        raise ConfigurationError("at least one --checkpoint is required")
    loaded = [(_load_model_for(cfg, c), c) for c in checkpoints]
    if len(loaded) == 1:
        (model, _), _ = loaded[0]
        return {name: model for name in names}
    by_policy = {}
    for (model, manifest), path in loaded:
        trained = manifest.get("trained_policy")
        if trained is None:
            raise ConfigurationError(
                f"{path} was not adapted under any policy; with multiple "
                f"checkpoints every one must name its policy")
        if trained in by_policy:
            raise ConfigurationError(
                f"two checkpoints claim policy '{trained}'")
        by_policy[trained] = model
    missing = [n for n in names if n not in by_policy]
    if missing:
        raise ConfigurationError(
            f"no checkpoint was adapted under: {', '.join(missing)}")
    return {name: by_policy[name] for name in names}


def _write_pgm(path, image):
    """8-bit grayscale dump; image is float in [0, 1]."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    data = (arr * 255.0 + 0.5).astype(np.uint8)
    header = f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode()
    Path(path).write_bytes(header + data.tobytes())


@click.group()
@click.version_option(__version__)
def main():
    """Adaptive scan-line subsampling with a flow-based posterior."""


@main.command("pretrain")
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="YAML config; defaults apply when omitted.")
@click.option("--out", type=click.Path(), default="checkpoints/pretrained.pt",
              show_default=True)
@click.option("--seed", type=int, default=0, show_default=True,
              help="Seed for weight init and training draws.")
@click.option("--steps", type=int, default=None, help="Override train.steps.")
@click.option("--dataset", "bundle", type=click.Path(), default=None,
              help="Train on this .npz bundle instead of the config source.")
@click.option("--metrics-log", type=click.Path(), default=None,
              help="TSV loss log (default: next to the checkpoint).")
@click.option("--density-weights/--no-density-weights", default=True,
              show_default=True,
              help="Weight the likelihood by the polar density grid.")
@_handle_errors
def pretrain_cmd(config_path, out, seed, steps, bundle, metrics_log,
                 density_weights):
    """Fit encoder and decoder on dense (fully observed) frames."""
    cfg = load_config(config_path)
    train_cfg = _train_cfg(cfg, density_weights, steps=steps, seed=seed)
    dataset = _dataset_for(cfg, "train", bundle)
    torch.manual_seed(seed)
    model = FlowPosterior(cfg.model)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    out = Path(out)
    metrics_log = _fresh(metrics_log or out.with_suffix(".metrics.tsv"))
    click.echo(f"pretraining on {dataset.n_frames} frames "
               f"({len(dataset)} videos), {train_cfg.steps} steps")
    started = time.perf_counter()

    def log_fn(rec):
        click.echo(f"  step {rec['step']:6d}  loss {rec['total']:.3f}  "
                   f"recon {rec['recon']:.3f}  kl {rec['kl_base']:.3f}  "
                   f"logdet {rec['log_det']:.3f}")

    pretrain_generative(dataset, model, train_cfg, rng,
                        metrics_path=metrics_log, log_fn=log_fn)
    manifest_path = save_checkpoint(
        model, out, step=train_cfg.steps,
        extra={"seed": seed, "config": config_to_dict(cfg)})
    click.echo(f"done in {time.perf_counter() - started:.1f}s; "
               f"checkpoint {out}, manifest {manifest_path}, "
               f"loss log {metrics_log}")


@main.command("train-inference")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--checkpoint", type=click.Path(),
              default="checkpoints/pretrained.pt", show_default=True)
@click.option("--policy", "policy_name", type=click.Choice(POLICY_NAMES),
              default="trace", show_default=True)
@click.option("--split", type=click.Choice(SPLITS), default="train",
              show_default=True)
@click.option("--dataset", "bundle", type=click.Path(), default=None)
@click.option("--videos", "limit", type=int, default=None,
              help="Adapt on only the first N videos.")
@click.option("--out", type=click.Path(), default=None,
              help="Adapted checkpoint (default checkpoints/<policy>.pt).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--density-weights/--no-density-weights", default=True,
              show_default=True)
@_handle_errors
def train_inference_cmd(config_path, checkpoint, policy_name, split, bundle,
                        limit, out, seed, density_weights):
    """Adapt the encoder online along one policy's scan paths."""
    cfg = load_config(config_path)
    train_cfg = _train_cfg(cfg, density_weights, seed=seed)
    model, _ = _load_model_for(cfg, checkpoint)
    dataset = _dataset_for(cfg, split, bundle, limit)
    policy = make_policy(policy_name, cfg.grid.n_gamma, cfg.policy)
    out = Path(out) if out else Path(checkpoint).parent / f"{policy_name}.pt"
    click.echo(f"adapting encoder under '{policy_name}' on {len(dataset)} "
               f"videos ({dataset.n_frames} frames)")
    started = time.perf_counter()
    history = train_inference(dataset, policy, model, train_cfg,
                              cfg.acquisition, seed=seed)
    manifest_path = save_checkpoint(
        model, out, step=history["frames"], trained_policy=policy_name,
        extra={"seed": seed, "source_checkpoint": str(checkpoint),
               "config": config_to_dict(cfg)})
    click.echo(f"done in {time.perf_counter() - started:.1f}s; "
               f"{history['frames']} adaptation steps, final loss "
               f"{history['last_total']:.3f}")
    click.echo(f"checkpoint {out}, manifest {manifest_path}")


@main.command("evaluate")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--checkpoint", "checkpoints", type=click.Path(),
              multiple=True, help="Repeatable. One checkpoint serves all "
              "policies; several are matched by their trained policy.")
@click.option("--policy", "policy_names", type=click.Choice(POLICY_NAMES),
              multiple=True, help="Repeatable; defaults to all policies.")
@click.option("--lines", "line_budgets", type=int, multiple=True,
              help="Repeatable line budgets; default acquisition.n_lines.")
@click.option("--split", type=click.Choice(SPLITS), default="test",
              show_default=True)
@click.option("--dataset", "bundle", type=click.Path(), default=None)
@click.option("--videos", "limit", type=int, default=None)
@click.option("--out", type=click.Path(), default="runs/evaluate",
              show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--replay", "replay_log", type=click.Path(), default=None,
              help="Replay this decision log instead of running policies.")
@_handle_errors
def evaluate_cmd(config_path, checkpoints, policy_names, line_budgets, split,
                 bundle, limit, out, seed, replay_log):
    """Score policies over a video set with frozen weights."""
    cfg = load_config(config_path)
    dataset = _dataset_for(cfg, split, bundle, limit)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    if replay_log is not None:
        if len(checkpoints) != 1:
            raise ConfigurationError(
                "replay takes exactly one --checkpoint")
        model, _ = _load_model_for(cfg, checkpoints[0])
        report = replay_decision_log(model, dataset, cfg.grid,
                                     cfg.acquisition, replay_log, seed=seed)
        path = write_report(report, out / "replay-report.json")
        click.echo(f"replayed {replay_log}: l1 {report.l1:.4f}  "
                   f"ssim {report.ssim:.4f}  psnr {report.psnr:.2f} dB")
        click.echo(f"report written to {path}")
        return

    names = list(policy_names) or list(POLICY_NAMES)
    budgets = list(line_budgets) or [cfg.acquisition.n_lines]
    models = _policy_models(cfg, checkpoints, names)
    rows, reports = [], {}
    for n_lines in budgets:
        acq = dataclasses.replace(cfg.acquisition, n_lines=n_lines)
        pcfg = dataclasses.replace(cfg.policy, n_lines=n_lines)
        for name in names:
            policy = make_policy(name, cfg.grid.n_gamma, pcfg)
            decisions = _fresh(out / f"decisions-{name}-l{n_lines}.jsonl")
            report = evaluate(models[name], policy, dataset, cfg.grid, acq,
                              seed=seed, decisions_path=decisions)
            reports[f"{name}-l{n_lines}"] = report
            rows.append({"policy": name, "n_lines": n_lines,
                         "l1": report.l1, "ssim": report.ssim,
                         "psnr": report.psnr, "n_videos": report.n_videos,
                         "n_frames": report.n_frames})
            click.echo(f"{name:<18} l={n_lines:<3} l1 {report.l1:.4f}  "
                       f"ssim {report.ssim:.4f}  psnr {report.psnr:.2f} dB")
    table = metrics_table(rows)
    (out / "metrics.tsv").write_text(table)
    write_report(reports, out / "report.json")
    click.echo(f"table {out / 'metrics.tsv'}, report {out / 'report.json'}, "
               f"decision logs under {out}")


@main.command("simulate")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--checkpoint", type=click.Path(),
              default="checkpoints/pretrained.pt", show_default=True)
@click.option("--policy", "policy_name", type=click.Choice(POLICY_NAMES),
              default="trace", show_default=True)
@click.option("--split", type=click.Choice(SPLITS), default="test",
              show_default=True)
@click.option("--video-index", type=int, default=0, show_default=True,
              help="Which video of the split to roll out.")
@click.option("--dataset", "bundle", type=click.Path(), default=None)
@click.option("--out", type=click.Path(), default="runs/simulate",
              show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@_handle_errors
def simulate_cmd(config_path, checkpoint, policy_name, split, video_index,
                 bundle, out, seed):
    """Roll one video end to end, dumping per-frame reconstructions."""
    cfg = load_config(config_path)
    model, _ = _load_model_for(cfg, checkpoint)
    dataset = _dataset_for(cfg, split, bundle)
    if not 0 <= video_index < len(dataset):
        raise ConfigurationError(
            f"video index {video_index} out of range; the {split} split has "
            f"{len(dataset)} videos")
    one = dataclasses.replace(
        dataset, videos=(dataset.videos[video_index],))
    vid = one.videos[0][0]
    policy = make_policy(policy_name, cfg.grid.n_gamma, cfg.policy)
    out = Path(out)
    frames_dir = out / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)

    def frame_hook(video, t, mask, recon, frame):
        _write_pgm(frames_dir / f"{video}-{t:04d}-recon.pgm", recon)
        _write_pgm(frames_dir / f"{video}-{t:04d}-truth.pgm", frame)

    decisions = _fresh(out / "decisions.jsonl")
    report = evaluate(model, policy, one, cfg.grid, cfg.acquisition,
                      seed=seed, decisions_path=decisions,
                      frame_hook=frame_hook)
    path = write_report(report, out / "report.json")
    n = one.videos[0][1].shape[0]
    click.echo(f"rolled video {vid} ({n} frames) under '{policy_name}': "
               f"l1 {report.l1:.4f}  ssim {report.ssim:.4f}  "
               f"psnr {report.psnr:.2f} dB")
    click.echo(f"frames under {frames_dir}, decisions {decisions}, "
               f"report {path}")


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--checkpoint", type=click.Path(), default=None,
              help="Time the full acquisition step with this model.")
@click.option("--policy", "policy_names", type=click.Choice(POLICY_NAMES),
              multiple=True, help="Repeatable; defaults to trace and "
              "covariance.")
@click.option("--trials", type=int, default=20, show_default=True)
@click.option("--repeats", type=int, default=5, show_default=True,
              help="Repeats per kernel in the backend comparison.")
@click.option("--out", type=click.Path(), default=None,
              help="Also write results as JSON.")
@click.option("--seed", type=int, default=0, show_default=True)
@_handle_errors
def benchmark(config_path, checkpoint, policy_names, trials, repeats, out,
              seed):
    """Time the kernel backends and the per-frame acquisition step."""
    cfg = load_config(config_path)
    click.echo(f"active kernel backend: {kernels.BACKEND}")
    results = run_kernel_benchmark(
        n_r=cfg.grid.n_r, n_gamma=cfg.grid.n_gamma,
        n_s=cfg.acquisition.n_posterior_samples,
        n_candidates=cfg.policy.n_candidates,
        l=cfg.acquisition.n_lines, repeats=repeats, seed=seed)
    click.echo(format_kernel_benchmark(results))

    latency = {}
    if checkpoint is not None:
        model, _ = _load_model_for(cfg, checkpoint)
        names = list(policy_names) or ["trace", "covariance"]
        click.echo(f"\nacquisition step (encode + {cfg.acquisition.n_posterior_samples} "
                   f"decodes + selection), {trials} trials:")
        for name in names:
            policy = make_policy(name, cfg.grid.n_gamma, cfg.policy)
            latency[name] = benchmark_latency(model, policy, cfg.grid,
                                              cfg.acquisition, trials=trials,
                                              seed=seed)
            click.echo(f"  {name:<18} median {latency[name]['median_s'] * 1e3:8.2f} ms"
                       f"   p95 {latency[name]['p95_s'] * 1e3:8.2f} ms")
    if out:
        payload = {"backend": kernels.BACKEND, "kernels": results,
                   "acquisition": latency, "repeats": repeats,
                   "trials": trials}
        Path(out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        click.echo(f"wrote {out}")


if __name__ == "__main__":
    main()
