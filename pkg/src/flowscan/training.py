"""Variational training: offline pretraining and per-frame online adaptation.

The single objective everywhere is the negative free energy of a partial
observation y over mask A:

    L = E_q[ log p(y | z_K) ] - beta * ( log q(z_0 | y) - log p(z_K)
                                          - sum_k log|det J_k| )

with a diagonal Gaussian likelihood of scale noise_std on the observed
pixels only, optionally weighted by the polar density grid so shells
contribute in proportion to the area they cover.

Pretraining fits encoder and decoder jointly on fully observed noisy
frames. Online adaptation (train_inference) walks videos frame by frame,
takes one optimizer step on the encoder per frame against the partial
observation the policy chose, then re-encodes and asks the policy for the
next frame's lines. The decoder stays frozen throughout; evaluation with a
static mask sequence never calls an optimizer at all (see evaluate).
"""

import copy
import time
from dataclasses import dataclass

import numpy as np
import torch

from .errors import RejectedInputError, TrainingError
from .masks import NoiseModel, apply_mask, zero_fill
from .model import LOG_2PI
from .policy import draw_ensemble


@dataclass(frozen=True, eq=False)
class TrainConfig:
    """Optimization hyperparameters shared by both training phases.

    noise_std is the Gaussian likelihood scale (and the synthetic
    observation noise level); it must be positive because the density is
    evaluated. loss_weights, when set, is an (n_r, n_gamma) grid of
    per-pixel likelihood weights (typically the polar density weights).
    """

    steps: int = 2000
    batch_size: int = 16
    lr: float = 1e-4
    beta: float = 1e-4
    noise_std: float = 0.02
    iwae_samples: int = 8
    grad_clip: float = 10.0
    log_every: int = 50
    seed: int = 0
    loss_weights: np.ndarray = None

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1 or self.iwae_samples < 1:
            raise RejectedInputError(
                "steps, batch_size and iwae_samples must be >= 1")
        if self.lr <= 0 or self.noise_std <= 0:
            raise RejectedInputError("lr and noise_std must be positive")
        if self.beta < 0:
            raise RejectedInputError("beta must be >= 0")
        if self.grad_clip <= 0:
            raise RejectedInputError("grad_clip must be positive")
        if self.log_every < 1:
            raise RejectedInputError("log_every must be >= 1")
        if self.loss_weights is not None:
            w = np.asarray(self.loss_weights, dtype=np.float64)
            if w.ndim != 2 or not np.all(np.isfinite(w)) or np.any(w < 0):
                raise RejectedInputError(
                    "loss_weights must be a finite non-negative 2-d grid")
            object.__setattr__(self, "loss_weights", w)


@dataclass(eq=False)
class LossBreakdown:
    """The free-energy pieces of one step.

    total is the live tensor to backprop; the floats are detached scalars.
    By construction total == -(recon - beta * (kl_base - log_det)).
    """

    total: torch.Tensor
    recon: float
    kl_base: float
    log_det: float
    beta: float

    def scalars(self):
        return {"recon": self.recon, "kl_base": self.kl_base,
                "log_det": self.log_det, "total": float(self.total.detach())}

    @property
    def bound(self):
        """The beta = 1 evidence lower bound of the same draw."""
        return self.recon - (self.kl_base - self.log_det)


def _terms(models, enc_out, eps, target_cols, cols, weight_cols, noise_std):
    """Shared free-energy pieces; every return is per-draw, shape (B,)."""
    z0 = models.reparameterize(enc_out, eps)
    z_k, log_det = models.flow(enc_out, z0)
    decoded = models.decode(z_k)
    pred = decoded[:, :, cols]
    resid = (target_cols - pred) / noise_std
    point = -0.5 * resid * resid - float(np.log(noise_std)) - 0.5 * LOG_2PI
    recon = (point * weight_cols).sum(dim=(-2, -1))
    log_q0 = (-0.5 * eps * eps - torch.log(enc_out.sigma)
              - 0.5 * LOG_2PI).sum(dim=-1)
    log_pk = (-0.5 * z_k * z_k - 0.5 * LOG_2PI).sum(dim=-1)
    return recon, log_q0, log_pk, log_det


def _weight_cols(cfg, models, cols, n_r):
    if cfg.loss_weights is None:
        return torch.ones((1, 1), dtype=models.dtype)
    w = cfg.loss_weights
    if w.shape[0] != n_r:
        raise RejectedInputError(
            f"loss_weights rows ({w.shape[0]}) do not match n_r ({n_r})")
    return torch.as_tensor(w[:, cols]).to(models.dtype)


def free_energy(obs, enc_out, models, cfg, rng):
    """Single-draw negative free energy of one observation.

    obs is the Observation the encoder saw; enc_out the matching
    PosteriorParams (batch 1). One eps draw comes from rng. Returns a
    LossBreakdown whose total is ready for backward().
    """
    if enc_out.batch != 1:
        raise RejectedInputError("free_energy expects a batch-1 posterior")
    cols = list(obs.mask.lines)
    target = torch.as_tensor(obs.values).to(models.dtype).unsqueeze(0)
    wcols = _weight_cols(cfg, models, cols, obs.values.shape[0])
    eps = torch.from_numpy(
        rng.standard_normal((1, enc_out.latent_dim))).to(models.dtype)
    recon, log_q0, log_pk, log_det = _terms(
        models, enc_out, eps, target, cols, wcols, cfg.noise_std)
    total = -(recon - cfg.beta * (log_q0 - log_pk - log_det)).mean()
    with torch.no_grad():
        return LossBreakdown(total=total, recon=float(recon.mean()),
                             kl_base=float((log_q0 - log_pk).mean()),
                             log_det=float(log_det.mean()), beta=cfg.beta)


def iwae_bound(obs, enc_out, models, cfg, rng, n_importance=None):
    """Importance-weighted evidence bound of one observation.

    log (1/k) sum_i w_i with w_i = p(y|z_i) p(z_i) / q(z_i|y) over k
    posterior draws; k = 1 reproduces the single-draw ELBO and the bound
    is monotone in k toward log p(y).
    """
    if enc_out.batch != 1:
        raise RejectedInputError("iwae_bound expects a batch-1 posterior")
    k = cfg.iwae_samples if n_importance is None else int(n_importance)
    if k < 1:
        raise RejectedInputError("need at least one importance sample")
    cols = list(obs.mask.lines)
    target = torch.as_tensor(obs.values).to(models.dtype).unsqueeze(0)
    wcols = _weight_cols(cfg, models, cols, obs.values.shape[0])
    eps = torch.from_numpy(
        rng.standard_normal((k, enc_out.latent_dim))).to(models.dtype)
    with torch.no_grad():
        recon, log_q0, log_pk, log_det = _terms(
            models, enc_out, eps, target, cols, wcols, cfg.noise_std)
        log_w = recon + log_pk - (log_q0 - log_det)
        return float(torch.logsumexp(log_w, dim=0) - float(np.log(k)))


def _flatten_frames(videos):
    """Accepts a VideoDataset, a list of (id, frames) pairs, or a plain
    (N, n_r, n_gamma) array; returns the frame pool as one array."""
    if hasattr(videos, "videos"):
        videos = videos.videos
    if isinstance(videos, np.ndarray):
        if videos.ndim != 3:
            raise RejectedInputError(
                f"expected (N, n_r, n_gamma) frames, got {videos.shape}")
        return videos
    chunks = [np.asarray(frames) for _, frames in videos]
    if not chunks:
        raise RejectedInputError("no training frames supplied")
    return np.concatenate(chunks, axis=0)


def _snapshot(models, optimizer):
    return (copy.deepcopy(models.state_dict()),
            copy.deepcopy(optimizer.state_dict()))


def _grad_norm(params):
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(p.grad.detach().pow(2).sum())
    return total ** 0.5


def pretrain_generative(videos, models, cfg, rng, metrics_path=None,
                        log_fn=None):
    """Fit encoder and decoder on fully observed noisy frames.

    Every cfg.log_every steps the loss pieces are appended to the metrics
    file (tab-separated: step, recon, kl, log_det, total, seconds) and the
    current weights become the rollback point; a non-finite loss or
    gradient restores that rollback instead of poisoning the model. More
    than 5 consecutive rollbacks abort with diagnostics.

    Returns a history dict; models is trained in place.
    """
    frames = _flatten_frames(videos)
    n_r, n_gamma = frames.shape[1], frames.shape[2]
    if (n_r, n_gamma) != (models.config.n_r, models.config.n_gamma):
        raise RejectedInputError(
            f"frame grid ({n_r}, {n_gamma}) does not match the model")
    cols = list(range(n_gamma))
    wcols = _weight_cols(cfg, models, cols, n_r)
    mask_img = torch.ones((1, n_r, n_gamma), dtype=models.dtype)
    optimizer = torch.optim.Adam(models.parameters(), lr=cfg.lr)
    models.train()
    good = _snapshot(models, optimizer)
    history = {"step": [], "recon": [], "kl_base": [], "log_det": [],
               "total": [], "rollbacks": 0}
    sink = None
    if metrics_path is not None:
        sink = open(metrics_path, "a", encoding="utf-8")
        sink.write("# step\trecon\tkl_base\tlog_det\ttotal\tseconds\n")
    start = time.perf_counter()
    bad_streak = 0
    try:
        for step in range(1, cfg.steps + 1):
            idx = rng.integers(0, frames.shape[0], size=cfg.batch_size)
            batch = frames[idx].astype(np.float64)
            noisy = batch + cfg.noise_std * rng.standard_normal(batch.shape)
            target = torch.as_tensor(noisy).to(models.dtype)
            enc_out = models.encode(
                target, mask_img.expand(cfg.batch_size, -1, -1))
            eps = torch.from_numpy(rng.standard_normal(
                (cfg.batch_size, models.config.latent_dim))).to(models.dtype)
            recon, log_q0, log_pk, log_det = _terms(
                models, enc_out, eps, target, cols, wcols, cfg.noise_std)
            total = -(recon - cfg.beta * (log_q0 - log_pk - log_det)).mean()

            bad = not bool(torch.isfinite(total))
            if not bad:
                optimizer.zero_grad(set_to_none=True)
                total.backward()
                gnorm = _grad_norm(models.parameters())
                bad = not np.isfinite(gnorm)
            if bad:
                models.load_state_dict(good[0])
                optimizer.load_state_dict(good[1])
                history["rollbacks"] += 1
                bad_streak += 1
                if bad_streak > 5:
                    raise TrainingError(
                        "pretraining diverged repeatedly",
                        diagnostics={"step": step,
                                     "rollbacks": history["rollbacks"]})
                continue
            bad_streak = 0
            torch.nn.utils.clip_grad_norm_(models.parameters(), cfg.grad_clip)
            optimizer.step()

            if step % cfg.log_every == 0 or step == cfg.steps:
                with torch.no_grad():
                    row = {"step": step, "recon": float(recon.mean()),
                           "kl_base": float((log_q0 - log_pk).mean()),
                           "log_det": float(log_det.mean()),
                           "total": float(total.detach())}
                for key, val in row.items():
                    history[key].append(val)
                good = _snapshot(models, optimizer)
                if sink is not None:
                    sink.write(
                        f"{step}\t{row['recon']:.6f}\t{row['kl_base']:.6f}"
                        f"\t{row['log_det']:.6f}\t{row['total']:.6f}"
                        f"\t{time.perf_counter() - start:.3f}\n")
                    sink.flush()
                if log_fn is not None:
                    log_fn(row)
    finally:
        if sink is not None:
            sink.close()
    models.eval()
    return history


def _video_streams(seed, n_videos):
    """Per-video (noise, eps, policy) generator triples from one seed."""
    out = []
    for child in np.random.SeedSequence(seed).spawn(n_videos):
        noise_ss, eps_ss, policy_ss = child.spawn(3)
        out.append((np.random.default_rng(noise_ss),
                    np.random.default_rng(eps_ss),
                    np.random.default_rng(policy_ss)))
    return out


def cold_start_mask(acq, n_gamma):
    """First-frame mask before any posterior exists: an equispaced set, or
    None for a fully blind start (nothing observed at t = 0)."""
    if acq.cold_start == "equispaced":
        from .masks import equispaced_mask
        return equispaced_mask(0, n_gamma, acq.n_lines)
    return None


def train_inference(videos, policy, models, cfg, acq, seed=0, log_fn=None):
    """Online adaptation of the encoder along policy-driven scan paths.

    Walks each video in order: observe the current mask, take one Adam step
    on the encoder against that partial observation, re-encode, and let the
    policy pick the next frame's lines from a fresh posterior ensemble. The
    decoder is frozen (its parameters are not in the optimizer and its
    normalization stats are held in eval mode). Encoder state persists
    across videos; one optimizer serves the whole pass.

    Returns a history dict; the adapted encoder lives in models.
    """
    if hasattr(videos, "videos"):
        videos = videos.videos
    if len(videos) == 0:
        raise RejectedInputError("no videos to adapt on")
    n_gamma = models.config.n_gamma
    noise = NoiseModel(acq.noise_std)
    optimizer = torch.optim.Adam(models.inference_parameters(), lr=cfg.lr)
    models.train()
    models.decoder.eval()
    streams = _video_streams(seed, len(videos))
    history = {"videos": 0, "frames": 0, "last_total": None}
    zeros = np.zeros((models.config.n_r, n_gamma))
    try:
        for (vid, frames), (noise_rng, eps_rng, policy_rng) in zip(
                videos, streams):
            mask = cold_start_mask(acq, n_gamma)
            for t in range(frames.shape[0]):
                if mask is not None:
                    obs = apply_mask(frames[t], mask, noise, noise_rng,
                                     frame_index=t)
                    filled, mask_img = zero_fill(obs, n_gamma)
                else:
                    obs, filled, mask_img = None, zeros, zeros
                enc_out = models.encode(filled, mask_img)
                if obs is not None:
                    loss = free_energy(obs, enc_out, models, cfg, eps_rng)
                else:
                    # blind start: no observed pixels, prior-matching only
                    eps = torch.from_numpy(eps_rng.standard_normal(
                        (1, models.config.latent_dim))).to(models.dtype)
                    z0 = models.reparameterize(enc_out, eps)
                    z_k, log_det = models.flow(enc_out, z0)
                    log_q0 = (-0.5 * eps * eps - torch.log(enc_out.sigma)
                              - 0.5 * LOG_2PI).sum(dim=-1)
                    log_pk = (-0.5 * z_k * z_k - 0.5 * LOG_2PI).sum(dim=-1)
                    total = (cfg.beta * (log_q0 - log_pk - log_det)).mean()
                    with torch.no_grad():
                        loss = LossBreakdown(
                            total=total, recon=0.0,
                            kl_base=float((log_q0 - log_pk).mean()),
                            log_det=float(log_det.mean()), beta=cfg.beta)
                if not bool(torch.isfinite(loss.total)):
                    raise TrainingError(
                        "online adaptation diverged",
                        diagnostics={"video": vid, "frame": t,
                                     "loss": loss.scalars()})
                optimizer.zero_grad(set_to_none=True)
                loss.total.backward()
                torch.nn.utils.clip_grad_norm_(
                    models.inference_parameters(), cfg.grad_clip)
                optimizer.step()
                history["frames"] += 1
                history["last_total"] = float(loss.total.detach())

                if t + 1 < frames.shape[0]:
                    with torch.no_grad():
                        enc_next = models.encode(filled, mask_img)
                    ens = None
                    if policy.needs_samples:
                        ens = draw_ensemble(enc_next, models,
                                            acq.n_posterior_samples,
                                            policy_rng)
                    try:
                        decision = policy.select(t + 1, policy_rng, ens)
                    except Exception as exc:
                        raise TrainingError(
                            f"policy '{policy.name}' failed during "
                            f"adaptation",
                            diagnostics={"video": vid, "frame": t + 1,
                                         "error": str(exc)}) from exc
                    mask = decision.mask
            history["videos"] += 1
            if log_fn is not None:
                log_fn({"video": vid, "frames": int(frames.shape[0]),
                        "last_total": history["last_total"]})
    finally:
        models.eval()
    return history
