"""Polar scan geometry: sector grids, scan conversion, and loss weights.

The polar grid indexes depth along rows (r = 0 at the transducer apex) and
scan-line angle along columns. Angles are measured from the vertical
centerline of the Cartesian image, so a polar bin (i, j) maps to Cartesian

    row = r_i * cos(gamma_j)
    col = (cart_w - 1) / 2 + r_i * sin(gamma_j)

with the apex at the top-center of the Cartesian frame. Both directions of
the conversion use bilinear interpolation, which keeps them linear maps.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kernels
from .errors import RejectedInputError


@dataclass(frozen=True)
class PolarGridSpec:
    """Geometry of the sector scan.

    n_r, n_gamma: number of depth samples and scan-line angles.
    gamma_min, gamma_max: angular extent in radians around the centerline.
    r_max: maximum depth in Cartesian pixels.
    cart_h, cart_w: Cartesian frame size in pixels.
    """

    n_r: int = 64
    n_gamma: int = 64
    gamma_min: float = -np.pi / 6
    gamma_max: float = np.pi / 6
    r_max: float = 111.0
    cart_h: int = 112
    cart_w: int = 112

    def __post_init__(self):
        if self.n_r < 1 or self.n_gamma < 2:
            raise RejectedInputError(
                f"need n_r >= 1 and n_gamma >= 2, got {self.n_r}x{self.n_gamma}")
        if not self.gamma_min < self.gamma_max:
            raise RejectedInputError("gamma_min must be < gamma_max")
        if self.r_max <= 0:
            raise RejectedInputError("r_max must be positive")
        if self.cart_h < 2 or self.cart_w < 2:
            raise RejectedInputError("Cartesian dimensions must be >= 2")

    @property
    def n_pixels(self):
        return self.n_r * self.n_gamma

    @property
    def dr(self):
        return self.r_max / max(self.n_r - 1, 1)

    @property
    def dgamma(self):
        return (self.gamma_max - self.gamma_min) / (self.n_gamma - 1)

    @property
    def apex_col(self):
        return (self.cart_w - 1) / 2.0

    def radii(self):
        return np.linspace(0.0, self.r_max, self.n_r)

    def angles(self):
        return np.linspace(self.gamma_min, self.gamma_max, self.n_gamma)


@lru_cache(maxsize=16)
def _polar_sample_coords(spec):
    """Cartesian (row, col) sampling coordinates for every polar bin."""
    r = spec.radii()[:, None]
    g = spec.angles()[None, :]
    fi = (r * np.cos(g)).reshape(-1)
    fj = (spec.apex_col + r * np.sin(g)).reshape(-1)
    return fi, fj


@lru_cache(maxsize=16)
def _cartesian_sample_coords(spec):
    """Polar (depth, angle) fractional indices for every Cartesian pixel,
    plus the in-sector validity mask."""
    rows = np.arange(spec.cart_h)[:, None].astype(np.float64)
    cols = np.arange(spec.cart_w)[None, :].astype(np.float64)
    dx = cols - spec.apex_col
    r = np.hypot(rows, dx)
    gamma = np.arctan2(dx, rows)
    eps = 1e-9
    inside = (r <= spec.r_max + eps) \
        & (gamma >= spec.gamma_min - eps) & (gamma <= spec.gamma_max + eps)
    fi = np.clip(r / spec.dr, 0.0, spec.n_r - 1.0)
    fj = np.clip((gamma - spec.gamma_min) / spec.dgamma, 0.0, spec.n_gamma - 1.0)
    return fi.reshape(-1), fj.reshape(-1), inside


def _check_grid(arr, shape, what):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.shape != shape:
        raise RejectedInputError(f"{what} shape {arr.shape} does not match {shape}")
    if not np.all(np.isfinite(arr)):
        raise RejectedInputError(f"{what} contains non-finite values")
    return arr


def cartesian_to_polar(image, spec):
    """Resample a Cartesian frame onto the polar grid (bilinear, 0 outside)."""
    image = _check_grid(image, (spec.cart_h, spec.cart_w), "image")
    fi, fj = _polar_sample_coords(spec)
    out = kernels.bilinear_gather(image, fi, fj)
    return out.reshape(spec.n_r, spec.n_gamma)


def polar_to_cartesian(polar, spec):
    """Render a polar grid back to the Cartesian frame; 0 outside the sector."""
    polar = _check_grid(polar, (spec.n_r, spec.n_gamma), "polar grid")
    fi, fj, inside = _cartesian_sample_coords(spec)
    out = kernels.bilinear_gather(polar, fi, fj).reshape(spec.cart_h, spec.cart_w)
    out[~inside] = 0.0
    return out


def validity_mask(spec):
    """Boolean Cartesian mask of pixels inside the scan sector."""
    _, _, inside = _cartesian_sample_coords(spec)
    return inside.copy()


def density_weights(spec):
    """Per-bin loss weights compensating the polar-to-Cartesian area change.

    The Cartesian area represented by a polar bin grows linearly with depth
    (Jacobian of the polar map is r), so weights are proportional to r_i,
    normalized to mean 1. The apex row r = 0 gets the equivalent radius of
    its half-bin disk sector, dr/8, keeping all weights strictly positive.
    """
    r = spec.radii()
    w = r.copy()
    w[0] = spec.dr / 8.0 if spec.n_r > 1 else 1.0
    w = np.repeat(w[:, None], spec.n_gamma, axis=1)
    return w / w.mean()
