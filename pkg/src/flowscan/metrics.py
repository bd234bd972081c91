"""Reconstruction quality metrics.

All three metrics take (reconstruction, ground_truth) in [0, 1] units and
an optional boolean validity mask restricting the comparison to pixels
inside the imaging sector. PSNR follows the 8-bit convention: the peak is
255 while the MSE is computed in [0, 1] units, so a squared error of 1e-3
maps to about 78.1 dB, and identical images are capped at PSNR_CAP instead
of infinity. SSIM comes from scikit-image with the parameters pinned in
SSIM_PARAMS; with a validity mask the per-pixel SSIM map is averaged over
the valid region only.
"""

import numpy as np
from skimage.metrics import structural_similarity

from .errors import RejectedInputError

PSNR_CAP = 300.0

SSIM_PARAMS = {"win_size": 7, "gaussian_weights": False, "data_range": 1.0}


def _check_pair(reconstruction, ground_truth, validity_mask):
    rec = np.asarray(reconstruction, dtype=np.float64)
    ref = np.asarray(ground_truth, dtype=np.float64)
    if rec.shape != ref.shape or rec.ndim != 2:
        raise RejectedInputError(
            f"metric inputs must be matching 2-d images, got {rec.shape} "
            f"vs {ref.shape}")
    if not (np.all(np.isfinite(rec)) and np.all(np.isfinite(ref))):
        raise RejectedInputError("metric inputs contain non-finite values")
    if validity_mask is None:
        valid = np.ones(rec.shape, dtype=bool)
    else:
        valid = np.asarray(validity_mask, dtype=bool)
        if valid.shape != rec.shape:
            raise RejectedInputError(
                f"validity mask {valid.shape} does not match images "
                f"{rec.shape}")
        if not valid.any():
            raise RejectedInputError("validity mask selects no pixels")
    return rec, ref, valid


def l1_metric(reconstruction, ground_truth, validity_mask=None):
    """Mean absolute error over the valid region."""
    rec, ref, valid = _check_pair(reconstruction, ground_truth, validity_mask)
    return float(np.abs(rec - ref)[valid].mean())


def mse_metric(reconstruction, ground_truth, validity_mask=None):
    """Mean squared error over the valid region."""
    rec, ref, valid = _check_pair(reconstruction, ground_truth, validity_mask)
    diff = rec - ref
    return float((diff * diff)[valid].mean())


def psnr_metric(reconstruction, ground_truth, validity_mask=None, peak=255.0):
    """20 log10(peak) - 10 log10(MSE), MSE in [0, 1] units; PSNR_CAP when
    the images agree exactly."""
    err = mse_metric(reconstruction, ground_truth, validity_mask)
    if err == 0.0:
        return PSNR_CAP
    return float(min(20.0 * np.log10(peak) - 10.0 * np.log10(err), PSNR_CAP))


def ssim_metric(reconstruction, ground_truth, validity_mask=None):
    """Mean structural similarity over the valid region."""
    rec, ref, valid = _check_pair(reconstruction, ground_truth, validity_mask)
    if min(rec.shape) < SSIM_PARAMS["win_size"]:
        raise RejectedInputError(
            f"images smaller than the {SSIM_PARAMS['win_size']}-pixel SSIM "
            f"window")
    score, ssim_map = structural_similarity(
        ref, rec, full=True, **SSIM_PARAMS)
    if validity_mask is None:
        return float(score)
    return float(ssim_map[valid].mean())
