"""Synthetic sector-scan videos: drifting ellipse phantoms over speckle.

Each video is a short sequence of Cartesian frames containing a static
speckled background and a few bright-walled ellipses whose centers,
orientations, and axes evolve smoothly (sinusoidal drift, slow rotation,
gentle pulsation). Frames are rendered in Cartesian coordinates and
resampled to the polar grid, so structures deform the way real sector
scans do: compressed near the apex, stretched at depth.

Intensities stay in [0, 1]; observation noise is not added here (the
acquisition loop owns the noise draw).
"""

from dataclasses import dataclass

import numpy as np
from skimage.filters import gaussian as _gaussian_blur

from . import kernels
from .errors import RejectedInputError
from .polar import cartesian_to_polar


@dataclass(frozen=True)
class PhantomConfig:
    """Ranges for the randomized scene parameters.

    Fractions are relative to the Cartesian frame height so the same config
    works at any grid resolution.
    """

    n_ellipses_min: int = 2
    n_ellipses_max: int = 4
    background: float = 0.08
    speckle_amp: float = 0.045
    speckle_sigma_frac: float = 0.018
    axis_frac_min: float = 0.10
    axis_frac_max: float = 0.22
    wall_amp_min: float = 0.55
    wall_amp_max: float = 0.80
    fill_amp_min: float = 0.18
    fill_amp_max: float = 0.35
    wall_width_min: float = 0.07
    wall_width_max: float = 0.14
    drift_frac: float = 0.045
    rot_speed_max: float = 0.05
    pulse_frac: float = 0.08

    def __post_init__(self):
        if not 1 <= self.n_ellipses_min <= self.n_ellipses_max:
            raise RejectedInputError("ellipse count range is invalid")
        if self.background < 0 or self.speckle_amp < 0:
            raise RejectedInputError("background terms must be >= 0")


def _sample_ellipses(spec, rng, cfg):
    """Per-ellipse static parameters and motion coefficients."""
    h = spec.cart_h
    n = int(rng.integers(cfg.n_ellipses_min, cfg.n_ellipses_max + 1))
    ellipses = []
    for _ in range(n):
        r_c = rng.uniform(0.30, 0.75) * spec.r_max
        g_c = rng.uniform(0.7 * spec.gamma_min, 0.7 * spec.gamma_max)
        ellipses.append({
            "cy": r_c * np.cos(g_c),
            "cx": spec.apex_col + r_c * np.sin(g_c),
            "a": rng.uniform(cfg.axis_frac_min, cfg.axis_frac_max) * h,
            "b": rng.uniform(cfg.axis_frac_min, cfg.axis_frac_max) * h,
            "theta": rng.uniform(0.0, np.pi),
            "wall_amp": rng.uniform(cfg.wall_amp_min, cfg.wall_amp_max),
            "fill_amp": rng.uniform(cfg.fill_amp_min, cfg.fill_amp_max),
            "wall_w": rng.uniform(cfg.wall_width_min, cfg.wall_width_max),
            "drift_amp": rng.uniform(0.3, 1.0, size=2) * cfg.drift_frac * h,
            "drift_phase": rng.uniform(0.0, 2 * np.pi, size=2),
            "rot_speed": rng.uniform(-cfg.rot_speed_max, cfg.rot_speed_max),
            "pulse": rng.uniform(0.0, cfg.pulse_frac),
            "pulse_phase": rng.uniform(0.0, 2 * np.pi),
        })
    return ellipses


def _background(spec, rng, cfg):
    noise = rng.standard_normal((spec.cart_h, spec.cart_w))
    sigma = max(cfg.speckle_sigma_frac * spec.cart_h, 0.5)
    speckle = _gaussian_blur(noise, sigma=sigma, preserve_range=True)
    std = speckle.std()
    if std > 0:
        speckle /= std
    return cfg.background + cfg.speckle_amp * speckle


def generate_video(spec, n_frames, rng, cfg=None):
    """Render one video as (n_frames, n_r, n_gamma) float32 in [0, 1]."""
    if n_frames < 1:
        raise RejectedInputError("n_frames must be positive")
    cfg = cfg or PhantomConfig()
    ellipses = _sample_ellipses(spec, rng, cfg)
    base = _background(spec, rng, cfg)
    out = np.empty((n_frames, spec.n_r, spec.n_gamma), dtype=np.float32)
    omega = 2.0 * np.pi / n_frames
    for t in range(n_frames):
        canvas = base.copy()
        for e in ellipses:
            cy = e["cy"] + e["drift_amp"][0] * np.sin(omega * t + e["drift_phase"][0])
            cx = e["cx"] + e["drift_amp"][1] * np.sin(omega * t + e["drift_phase"][1])
            theta = e["theta"] + e["rot_speed"] * t
            pulse = 1.0 + e["pulse"] * np.sin(omega * t + e["pulse_phase"])
            kernels.ellipse_field(
                canvas, cy, cx, e["a"] * pulse, e["b"] / pulse,
                np.cos(theta), np.sin(theta),
                e["wall_w"], e["wall_amp"], e["fill_amp"])
        np.clip(canvas, 0.0, 1.0, out=canvas)
        out[t] = cartesian_to_polar(canvas, spec).astype(np.float32)
    return out
