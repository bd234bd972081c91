"""Flow-based variational posterior over latent frame state.

The model is a convolutional VAE whose approximate posterior is sharpened by
a stack of Sylvester flows:

    z' = z + Q R1 tanh(R2 Q^T z + b)

with Q a (latent_dim, n_ortho) matrix of orthonormal columns and R1, R2
upper triangular. By the Sylvester determinant identity the Jacobian
log-determinant reduces to the n_ortho-dimensional sum

    sum_i log|1 + tanh'(pre_i) * R1_ii * R2_ii|

and bounding both triangular diagonals to (-0.97, 0.97) keeps every factor
positive, so each step is invertible by fixed-point iteration.

All flow parameters are amortized: the encoder maps an observation to mu,
sigma, and the per-layer (Q, R1, R2, b), so the flow stack is data that
rides along with the posterior rather than a free-standing module. The
decoder is the only generative piece; freezing it after pretraining while
adapting the encoder online needs no parameter bookkeeping beyond the
module split.

Encoder input is the zero-filled partial polar frame stacked with its
binary line-mask image, so observed zeros are distinguishable from
unobserved bins. All stochastic draws are injected as numpy arrays from a
caller-owned Generator; no torch RNG state is consumed anywhere.
"""

import hashlib
import json
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import ModelStateError, NumericalError, RejectedInputError

LOG_2PI = float(np.log(2.0 * np.pi))

SIGMA_FLOOR = 1e-6

_FULL_PRESET = dict(latent_dim=512, n_flows=8, n_ortho=16,
                    enc_blocks=4, dec_blocks=4)
_DESK_PRESET = dict(latent_dim=64, n_flows=4, n_ortho=8,
                    enc_blocks=4, dec_blocks=4)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    latent_dim: dimension of z.
    n_flows: number of Sylvester flow steps (0 disables the flow).
    n_ortho: columns of each flow's orthonormal Q.
    enc_blocks / dec_blocks: stride-2 gated conv stages; the grid must be
        divisible by 2 ** blocks on both axes.
    enc_channels / dec_channels: constant tower widths.
    head_hidden: width of the shared dense layer feeding the mu / sigma /
        flow-parameter heads.
    """

    n_r: int = 64
    n_gamma: int = 64
    latent_dim: int = 512
    n_flows: int = 8
    n_ortho: int = 16
    enc_blocks: int = 4
    dec_blocks: int = 4
    enc_channels: int = 64
    dec_channels: int = 128
    head_hidden: int = 512
    diag_bound: float = 0.97

    def __post_init__(self):
        for name in ("n_r", "n_gamma", "latent_dim", "n_ortho",
                     "enc_blocks", "dec_blocks", "enc_channels",
                     "dec_channels", "head_hidden"):
            if getattr(self, name) < 1:
                raise RejectedInputError(f"{name} must be positive")
        if self.n_flows < 0:
            raise RejectedInputError("n_flows must be >= 0")
        if not 0.0 < self.diag_bound < 1.0:
            raise RejectedInputError("diag_bound must lie in (0, 1)")
        if self.n_ortho > self.latent_dim:
            raise RejectedInputError("n_ortho cannot exceed latent_dim")
        for n, blocks, axis in ((self.n_r, self.enc_blocks, "n_r"),
                                (self.n_gamma, self.enc_blocks, "n_gamma"),
                                (self.n_r, self.dec_blocks, "n_r"),
                                (self.n_gamma, self.dec_blocks, "n_gamma")):
            if n % (1 << blocks) != 0:
                raise RejectedInputError(
                    f"{axis}={n} not divisible by 2**{blocks}")

    @property
    def preset(self):
        me = {k: getattr(self, k) for k in _FULL_PRESET}
        if me == _FULL_PRESET:
            return "full"
        if me == _DESK_PRESET:
            return "desk"
        return "custom"


def desk_config(n_r=64, n_gamma=64, **overrides):
    """Small preset that trains in minutes on one CPU core."""
    kw = dict(_DESK_PRESET, n_r=n_r, n_gamma=n_gamma,
              enc_channels=32, dec_channels=32, head_hidden=256)
    kw.update(overrides)
    return ModelConfig(**kw)


def orthonormalize(raw):
    """Orthonormal columns from an unconstrained (..., D, M) matrix via QR.

    Signs are fixed from the R diagonal so the result is a deterministic,
    differentiable function of the raw input. Rank-deficient inputs have no
    well-defined Q and raise.
    """
    if raw.shape[-2] < raw.shape[-1]:
        raise RejectedInputError(
            f"need at least as many rows as columns, got {tuple(raw.shape)}")
    q, r = torch.linalg.qr(raw)
    d = torch.diagonal(r, dim1=-2, dim2=-1)
    dd = d.detach()
    if bool((dd.abs() < 1e-10).any()) or not bool(torch.isfinite(dd).all()):
        raise NumericalError(
            "QR orthonormalization hit a rank-deficient matrix",
            diagnostics={"min_abs_diag": float(dd.abs().min())})
    return q * torch.sign(d).unsqueeze(-2)


@dataclass
class FlowStack:
    """Per-input Sylvester flow parameters, stacked over layers.

    q:  (K, B, D, M) orthonormal columns
    r1: (K, B, M, M) upper triangular, diagonal in (-diag_bound, diag_bound)
    r2: same layout as r1
    b:  (K, B, M)

    K = 0 is a valid empty stack (identity transport, zero log-det).
    """

    q: torch.Tensor
    r1: torch.Tensor
    r2: torch.Tensor
    b: torch.Tensor

    @property
    def n_flows(self):
        return self.q.shape[0]

    def validate(self):
        """Cheap invariant check on detached tensors.

        Columns of every Q must be orthonormal to 1e-5 and the product of
        the triangular diagonals must stay above -1 (the log-det argument
        must be positive for every possible tanh' in [0, 1]).
        """
        if self.n_flows == 0:
            return
        with torch.no_grad():
            q = self.q.detach()
            eye = torch.eye(q.shape[-1], dtype=q.dtype)
            gram = q.transpose(-1, -2) @ q
            err = (gram - eye).abs().max()
            if not bool(torch.isfinite(err)) or float(err) > 1e-5:
                raise ModelStateError(
                    "flow Q columns are not orthonormal",
                    diagnostics={"max_gram_error": float(err)})
            d1 = torch.diagonal(self.r1.detach(), dim1=-2, dim2=-1)
            d2 = torch.diagonal(self.r2.detach(), dim1=-2, dim2=-1)
            prod = d1 * d2
            if not bool(torch.isfinite(prod).all()) or float(prod.min()) <= -1.0:
                raise ModelStateError(
                    "flow diagonal product violates R1_ii * R2_ii > -1",
                    diagnostics={"min_diag_product": float(prod.min())})


def flow_forward(z0, stack, validate=True):
    """Push z0 through the stack; returns (z_K, log_det).

    z0 is (..., D) and broadcasts against the stack's batch dimension, so a
    single observation's stack (B = 1) transports any number of draws.
    """
    if validate:
        stack.validate()
    log_det = z0.new_zeros(z0.shape[:-1])
    z = z0
    for k in range(stack.n_flows):
        q, r1, r2, b = stack.q[k], stack.r1[k], stack.r2[k], stack.b[k]
        w = (z.unsqueeze(-2) @ q).squeeze(-2)
        pre = (w.unsqueeze(-2) @ r2.transpose(-1, -2)).squeeze(-2) + b
        h = torch.tanh(pre)
        delta = (h.unsqueeze(-2) @ r1.transpose(-1, -2)).squeeze(-2)
        z = z + (delta.unsqueeze(-2) @ q.transpose(-1, -2)).squeeze(-2)
        hprime = 1.0 - h * h
        d1 = torch.diagonal(r1, dim1=-2, dim2=-1)
        d2 = torch.diagonal(r2, dim1=-2, dim2=-1)
        log_det = log_det + torch.log1p(hprime * d1 * d2).sum(dim=-1)
    return z, log_det


@torch.no_grad()
def flow_inverse(z_k, stack, max_iter=200, tol=1e-12):
    """Invert the stack by per-layer fixed-point iteration.

    Each layer only moves z inside span(Q), so the iteration runs in the
    M-dimensional dual coordinates w = Q^T z:

        w <- Q^T z' - R1 tanh(R2 w + b),    z = z' + Q (w - w')
    """
    z = z_k
    for k in reversed(range(stack.n_flows)):
        q, r1, r2, b = stack.q[k], stack.r1[k], stack.r2[k], stack.b[k]
        w_prime = (z.unsqueeze(-2) @ q).squeeze(-2)
        w = w_prime.clone()
        converged = False
        for _ in range(max_iter):
            h = torch.tanh((w.unsqueeze(-2) @ r2.transpose(-1, -2)).squeeze(-2) + b)
            w_new = w_prime - (h.unsqueeze(-2) @ r1.transpose(-1, -2)).squeeze(-2)
            if float((w_new - w).abs().max()) < tol:
                w = w_new
                converged = True
                break
            w = w_new
        if not converged:
            raise NumericalError(
                "flow inversion fixed point did not converge",
                diagnostics={"layer": k, "max_iter": max_iter})
        z = z + ((w - w_prime).unsqueeze(-2) @ q.transpose(-1, -2)).squeeze(-2)
    return z


@dataclass
class PosteriorParams:
    """Encoder output for one observation batch: base Gaussian (mu, sigma)
    plus the amortized flow stack."""

    mu: torch.Tensor
    sigma: torch.Tensor
    flows: FlowStack

    @property
    def batch(self):
        return self.mu.shape[0]

    @property
    def latent_dim(self):
        return self.mu.shape[-1]


def _gated_conv(prev, ch, transpose=False):
    if transpose:
        conv = nn.ConvTranspose2d(prev, 2 * ch, kernel_size=4, stride=2,
                                  padding=1)
    else:
        conv = nn.Conv2d(prev, 2 * ch, kernel_size=3, stride=2, padding=1)
    return nn.Sequential(conv, nn.BatchNorm2d(2 * ch), nn.GLU(dim=1))


class Encoder(nn.Module):
    """Gated conv tower over (frame, mask) emitting mu, sigma, and the
    per-layer flow parameters."""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        layers = []
        prev = 2
        for _ in range(cfg.enc_blocks):
            layers.append(_gated_conv(prev, cfg.enc_channels))
            prev = cfg.enc_channels
        self.conv = nn.Sequential(*layers)
        h = cfg.n_r >> cfg.enc_blocks
        w = cfg.n_gamma >> cfg.enc_blocks
        self.hidden = nn.Sequential(
            nn.Linear(prev * h * w, cfg.head_hidden), nn.GELU())
        d, m = cfg.latent_dim, cfg.n_ortho
        self.mu_head = nn.Linear(cfg.head_hidden, d)
        self.sigma_head = nn.Linear(cfg.head_hidden, d)
        # a layer's raw parameter block: q (d*m) | r1 (m*m) | r2 (m*m) | b (m)
        self.per_layer = d * m + 2 * m * m + m
        self.flow_head = nn.Linear(cfg.head_hidden, cfg.n_flows * self.per_layer)
        self._init_heads()

    def _init_heads(self):
        cfg = self.cfg
        # Start the posterior moderately tight and the flow at identity with
        # well-conditioned Q: small weights, structured bias. softplus of
        # the sigma bias is ~0.1; each layer's q bias is a fixed orthogonal
        # seed so QR never sees a rank-deficient matrix at init.
        nn.init.zeros_(self.mu_head.bias)
        nn.init.constant_(self.sigma_head.bias, -2.25)
        nn.init.normal_(self.flow_head.weight, std=1e-3)
        with torch.no_grad():
            bias = torch.zeros(cfg.n_flows, self.per_layer)
            d, m = cfg.latent_dim, cfg.n_ortho
            gen = torch.Generator().manual_seed(20240915)
            for k in range(cfg.n_flows):
                seed = torch.empty(d, m)
                nn.init.orthogonal_(seed, generator=gen)
                bias[k, :d * m] = seed.reshape(-1)
            self.flow_head.bias.copy_(bias.reshape(-1))

    def _unpack_flows(self, raw, batch):
        cfg = self.cfg
        d, m = cfg.latent_dim, cfg.n_ortho
        k = cfg.n_flows
        raw = raw.reshape(batch, k, self.per_layer).transpose(0, 1)
        q_raw = raw[..., :d * m].reshape(k, batch, d, m)
        ofs = d * m
        r1_raw = raw[..., ofs:ofs + m * m].reshape(k, batch, m, m)
        ofs += m * m
        r2_raw = raw[..., ofs:ofs + m * m].reshape(k, batch, m, m)
        b = raw[..., ofs + m * m:]
        if k == 0:
            return FlowStack(q=q_raw, r1=r1_raw, r2=r2_raw, b=b)
        q = orthonormalize(q_raw)
        bound = cfg.diag_bound

        def _triangle(t):
            diag = bound * torch.tanh(torch.diagonal(t, dim1=-2, dim2=-1))
            return torch.triu(t, diagonal=1) + torch.diag_embed(diag)

        return FlowStack(q=q, r1=_triangle(r1_raw), r2=_triangle(r2_raw), b=b)

    def forward(self, x):
        feat = self.hidden(self.conv(x).flatten(1))
        mu = self.mu_head(feat)
        sigma = nn.functional.softplus(self.sigma_head(feat)) + SIGMA_FLOOR
        flows = self._unpack_flows(self.flow_head(feat), x.shape[0])
        return PosteriorParams(mu=mu, sigma=sigma, flows=flows)


class Decoder(nn.Module):
    """Latent -> full polar frame in [0, 1]."""

    def __init__(self, cfg):
        super().__init__()
        ch = cfg.dec_channels
        self.h0 = cfg.n_r >> cfg.dec_blocks
        self.w0 = cfg.n_gamma >> cfg.dec_blocks
        self.c0 = ch
        self.proj = nn.Linear(cfg.latent_dim, ch * self.h0 * self.w0)
        blocks = [_gated_conv(ch, ch, transpose=True)
                  for _ in range(cfg.dec_blocks)]
        self.deconv = nn.Sequential(*blocks)
        half = max(ch // 2, 1)
        self.head = nn.Sequential(
            nn.Conv2d(ch, ch, kernel_size=3, padding=1), nn.GELU(),
            nn.Conv2d(ch, half, kernel_size=3, padding=1), nn.GELU(),
            nn.Conv2d(half, 1, kernel_size=3, padding=1))

    def forward(self, z):
        x = self.proj(z).view(-1, self.c0, self.h0, self.w0)
        return torch.sigmoid(self.head(self.deconv(x))).squeeze(1)


class FlowPosterior(nn.Module):
    """Encoder (inference side, phi) + decoder (generative side, theta).

    encode / reparameterize / flow / decode are exposed separately because
    the sampling policies need posterior draws without reconstruction
    losses and the trainer needs every intermediate term.
    """

    def __init__(self, config):
        super().__init__()
        if not isinstance(config, ModelConfig):
            config = ModelConfig(**config)
        self.config = config
        self.encoder = Encoder(config)
        self.decoder = Decoder(config)

    @property
    def dtype(self):
        return self.encoder.mu_head.weight.dtype

    def inference_parameters(self):
        """Everything the online adaptation is allowed to touch (phi)."""
        return self.encoder.parameters()

    def generative_parameters(self):
        """Decoder parameters (theta), frozen after pretraining."""
        return self.decoder.parameters()

    def _as_tensor(self, arr):
        t = torch.as_tensor(np.asarray(arr)).to(self.dtype)
        if t.dim() == 2:
            t = t.unsqueeze(0)
        return t

    def encode(self, zero_filled, mask_image):
        """zero_filled, mask_image: (n_r, n_gamma) or (B, n_r, n_gamma)
        arrays/tensors as produced by zero_fill. Returns PosteriorParams."""
        cfg = self.config
        frames = self._as_tensor(zero_filled)
        mask = self._as_tensor(mask_image)
        if frames.shape[-2:] != (cfg.n_r, cfg.n_gamma):
            raise RejectedInputError(
                f"frame grid {tuple(frames.shape[-2:])} does not match model "
                f"({cfg.n_r}, {cfg.n_gamma})")
        if mask.shape != frames.shape:
            raise RejectedInputError(
                f"mask image {tuple(mask.shape)} does not match frames "
                f"{tuple(frames.shape)}")
        if not bool(torch.isfinite(frames).all()):
            raise RejectedInputError("encoder input contains non-finite values")
        x = torch.stack([frames, mask], dim=1)
        return self.encoder(x)

    def reparameterize(self, params, eps):
        """z0 = mu + sigma * eps with caller-supplied standard normal eps
        (numpy array or tensor, (..., latent_dim))."""
        eps = torch.as_tensor(np.asarray(eps)).to(self.dtype) \
            if not torch.is_tensor(eps) else eps
        return params.mu + params.sigma * eps

    def flow(self, params, z0, validate=True):
        return flow_forward(z0, params.flows, validate=validate)

    def decode(self, z):
        if z.dim() == 1:
            z = z.unsqueeze(0)
        return self.decoder(z)

    @contextmanager
    def _decoder_frozen_stats(self):
        # batch-norm running stats update in forward even under no_grad;
        # decoding for sampling or reconstruction must not mutate theta
        was = self.decoder.training
        self.decoder.eval()
        try:
            yield
        finally:
            if was:
                self.decoder.train()

    @torch.no_grad()
    def posterior_mean_reconstruction(self, params):
        """Decode of the flowed posterior mean (the eps = 0 point estimate
        used for metric reconstructions)."""
        z_k, _ = self.flow(params, params.mu)
        with self._decoder_frozen_stats():
            return self.decode(z_k)

    @torch.no_grad()
    def sample_posterior(self, params, rng, n_samples):
        """n_samples decoded draws as (n_samples, n_r, n_gamma) float64.
        params must hold a single observation (batch 1)."""
        if params.batch != 1:
            raise RejectedInputError(
                "posterior sampling expects a single-observation batch")
        eps = rng.standard_normal((n_samples, params.latent_dim))
        z0 = self.reparameterize(params, torch.from_numpy(eps).to(self.dtype))
        z_k, _ = self.flow(params, z0)
        with self._decoder_frozen_stats():
            out = self.decode(z_k).numpy().astype(np.float64)
        if not np.all(np.isfinite(out)):
            raise ModelStateError("posterior decode produced non-finite values")
        return out


def count_parameters(model):
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def _config_hash(cfg_dict):
    blob = json.dumps(cfg_dict, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(model, path, step=0, trained_policy=None, extra=None):
    """Serialize weights plus a JSON manifest next to them.

    The manifest records the architecture (preset name, latent_dim, n_flows,
    n_ortho, a config hash), the training step, parameter count, which
    policy the inference side was adapted under (if any), and a sha256 of
    the weight file so stale or mismatched checkpoints are detectable
    without loading tensors.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cfg_dict = asdict(model.config)
    payload = {
        "state_dict": model.state_dict(),
        "config": cfg_dict,
        "step": int(step),
        "trained_policy": trained_policy,
    }
    torch.save(payload, path)
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    manifest = {
        "format": "flowscan-checkpoint-v2",
        "weights_file": path.name,
        "sha256": digest,
        "step": int(step),
        "parameters": count_parameters(model),
        "preset": model.config.preset,
        "latent_dim": model.config.latent_dim,
        "n_flows": model.config.n_flows,
        "n_ortho": model.config.n_ortho,
        "config": cfg_dict,
        "config_hash": _config_hash(cfg_dict),
        "trained_policy": trained_policy,
    }
    if extra:
        manifest["extra"] = extra
    manifest_path = path.with_suffix(".manifest.json")
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path


def load_checkpoint(path):
    """Returns (model, manifest_dict). Verifies the manifest hash when the
    manifest file is present; a missing manifest is tolerated, a wrong hash
    is not."""
    path = Path(path)
    if not path.exists():
        raise RejectedInputError(f"checkpoint not found: {path}")
    manifest = None
    manifest_path = path.with_suffix(".manifest.json")
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        if manifest.get("sha256") != digest:
            raise ModelStateError(
                f"checkpoint {path.name} does not match its manifest hash")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    try:
        model = FlowPosterior(ModelConfig(**payload["config"]))
        model.load_state_dict(payload["state_dict"])
    except (KeyError, RuntimeError) as exc:
        raise ModelStateError(f"cannot restore checkpoint {path}: {exc}") from exc
    model.eval()
    if manifest is None:
        manifest = {"weights_file": path.name,
                    "step": payload.get("step", 0),
                    "config": payload["config"],
                    "trained_policy": payload.get("trained_policy")}
    return model, manifest
