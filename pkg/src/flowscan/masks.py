"""Scan-line masks and partial observations.

A mask is a small sorted set of column indices into the polar grid; applying
one to a frame gathers the selected columns and adds per-pixel Gaussian
noise, producing an Observation. The dense subsampling operator is never
materialized; masks act as gathers.

The three static baselines live here too (equispaced with a per-frame
phase shift, uniform random, center-weighted variable density). They never
see frame content; their signatures take only the grid geometry and a
random stream.
"""

from dataclasses import dataclass

import numpy as np

from .errors import RejectedInputError


@dataclass(frozen=True)
class ScanLineMask:
    """An ordered set of observed scan-line indices on an n_gamma-line grid."""

    lines: tuple
    n_gamma: int

    def __post_init__(self):
        lines = tuple(int(v) for v in self.lines)
        object.__setattr__(self, "lines", lines)
        if len(lines) == 0:
            raise RejectedInputError("mask must contain at least one line")
        if self.n_gamma < 1:
            raise RejectedInputError("n_gamma must be positive")
        if any(b <= a for a, b in zip(lines, lines[1:])):
            raise RejectedInputError(
                f"line indices must be strictly increasing, got {lines}")
        if lines[0] < 0 or lines[-1] >= self.n_gamma:
            raise RejectedInputError(
                f"line indices {lines} out of range for n_gamma={self.n_gamma}")

    def __len__(self):
        return len(self.lines)

    @property
    def fraction(self):
        return len(self.lines) / self.n_gamma

    def as_array(self):
        return np.asarray(self.lines, dtype=np.int64)

    def as_bool(self):
        out = np.zeros(self.n_gamma, dtype=bool)
        out[list(self.lines)] = True
        return out


@dataclass(frozen=True)
class NoiseModel:
    """Additive per-pixel Gaussian observation noise."""

    std: float = 0.02

    def __post_init__(self):
        if self.std < 0:
            raise RejectedInputError("noise std must be >= 0")


@dataclass(frozen=True)
class Observation:
    """The acquired columns of one frame: values is (n_r, len(mask.lines))."""

    values: np.ndarray
    mask: ScanLineMask
    frame_index: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 2 or values.shape[1] != len(self.mask):
            raise RejectedInputError(
                f"observation values {values.shape} do not match a "
                f"{len(self.mask)}-line mask")


def apply_mask(frame, mask, noise, rng, frame_index=0):
    """Acquire the masked columns of a frame with observation noise.

    Returns an Observation whose columns are frame[:, mask.lines] plus
    independent N(0, std^2) noise. std = 0 is noiseless and draws nothing
    from rng.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2:
        raise RejectedInputError(f"expected a 2-d frame, got shape {frame.shape}")
    if not np.all(np.isfinite(frame)):
        raise RejectedInputError("frame contains non-finite values")
    if mask.n_gamma != frame.shape[1] or mask.lines[-1] >= frame.shape[1]:
        raise RejectedInputError(
            f"mask over {mask.n_gamma} lines does not fit frame width "
            f"{frame.shape[1]}")
    values = frame[:, list(mask.lines)].copy()
    if noise.std > 0:
        values += noise.std * rng.standard_normal(values.shape)
    return Observation(values=values, mask=mask, frame_index=frame_index)


def zero_fill(obs, n_gamma):
    """Scatter an observation back onto the full grid.

    Returns (zero_filled, mask_image): the observed values in their original
    columns with zeros elsewhere, and the binary image marking which
    columns are observed. This is the fixed-shape encoder input.
    """
    if n_gamma != obs.mask.n_gamma:
        raise RejectedInputError(
            f"n_gamma={n_gamma} does not match the mask's {obs.mask.n_gamma}")
    n_r = obs.values.shape[0]
    filled = np.zeros((n_r, n_gamma), dtype=np.float64)
    cols = list(obs.mask.lines)
    filled[:, cols] = obs.values
    mask_image = np.zeros((n_r, n_gamma), dtype=np.float64)
    mask_image[:, cols] = 1.0
    return filled, mask_image


def full_mask(n_gamma):
    """Every line observed (used for pretraining on dense frames)."""
    return ScanLineMask(tuple(range(n_gamma)), n_gamma)


def equispaced_mask(t, n_gamma, n_lines):
    """Evenly spaced lines whose phase shifts by one index per frame.

    Spacing is s = floor(n_gamma / n_lines); frame t uses offset t mod s,
    so over any s consecutive frames every line in [0, n_lines * s) is
    visited exactly once.
    """
    _check_budget(n_gamma, n_lines)
    stride = n_gamma // n_lines
    phase = int(t) % stride
    lines = tuple(phase + k * stride for k in range(n_lines))
    return ScanLineMask(lines, n_gamma)


def uniform_random_mask(rng, n_gamma, n_lines):
    """n_lines distinct lines drawn uniformly without replacement."""
    _check_budget(n_gamma, n_lines)
    lines = rng.choice(n_gamma, size=n_lines, replace=False)
    return ScanLineMask(tuple(sorted(int(v) for v in lines)), n_gamma)


def variable_density_mask(rng, n_gamma, n_lines, decay=6.0):
    """Center-weighted random lines.

    Draw probability falls off as (1 - |i - c| / (c + 1)) ** decay around
    the center line c = (n_gamma - 1) / 2, sampled sequentially without
    replacement with renormalization.
    """
    _check_budget(n_gamma, n_lines)
    if decay < 0:
        raise RejectedInputError("decay must be non-negative")
    c = (n_gamma - 1) / 2.0
    idx = np.arange(n_gamma)
    w = (1.0 - np.abs(idx - c) / (c + 1.0)) ** decay
    chosen = []
    for _ in range(n_lines):
        p = w / w.sum()
        pick = int(rng.choice(n_gamma, p=p))
        chosen.append(pick)
        w[pick] = 0.0
    return ScanLineMask(tuple(sorted(chosen)), n_gamma)


def _check_budget(n_gamma, n_lines):
    if n_gamma < 1:
        raise RejectedInputError("n_gamma must be positive")
    if n_lines < 1 or n_lines > n_gamma:
        raise RejectedInputError(
            f"line budget {n_lines} must be in [1, {n_gamma}]")
