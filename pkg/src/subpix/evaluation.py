"""Accuracy and pixel-locking metrics for refined disparity or flow fields.

Fields are arrays of shape (rows, cols) or (rows, cols, n). Ground truth
may contain non-finite values for unknown pixels.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ArgumentError, UndefinedResultError

N_BINS = 40


def _as_field(a):
    a = np.asarray(a, dtype=np.float64)
    return a[..., None] if a.ndim == 2 else a


def _check_shapes(*arrays):
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise ArgumentError(f"field shapes differ: {sorted(shapes)}")


def inlier_mask(d_round, gt, threshold=1.0, valid=None):
    """Pixels whose discrete match lies within ``threshold`` px of the truth
    (max norm) and whose ground truth is known."""
    d_round, gt = _as_field(d_round), _as_field(gt)
    _check_shapes(d_round, gt)
    ok = np.all(np.isfinite(gt), axis=-1)
    if valid is not None:
        ok &= np.asarray(valid, dtype=bool)
    dev = np.max(np.abs(np.where(np.isfinite(gt), d_round - gt, np.inf)), axis=-1)
    return ok & (dev < threshold)


def _errors(d_hat, gt, mask):
    d_hat, gt = _as_field(d_hat), _as_field(gt)
    _check_shapes(d_hat, gt)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != d_hat.shape[:-1]:
        raise ArgumentError("mask shape does not match the fields")
    if not mask.any():
        raise UndefinedResultError("empty inlier mask")
    return d_hat[mask] - gt[mask]


def mae(d_hat, gt, mask):
    """Mean absolute error of 1D disparities over ``mask``."""
    e = _errors(d_hat, gt, mask)
    if e.shape[-1] != 1:
        raise ArgumentError("MAE is defined for 1D disparities; use md")
    return float(np.mean(np.abs(e[:, 0])))


def md(d_hat, gt, mask):
    """Mean L2 distance between estimated and true disparity vectors."""
    e = _errors(d_hat, gt, mask)
    return float(np.mean(np.linalg.norm(e, axis=-1)))


def rmse(d_hat, gt, mask):
    e = _errors(d_hat, gt, mask)
    return float(np.sqrt(np.mean(np.sum(e * e, axis=-1))))


def fractional_part(gt, d_round):
    """``gt - d_round`` wrapped to [-0.5, 0.5).

    The result is rounded to 1e-12 so that equal fractions reached through
    different integer parts fall in the same bin even on a bin edge.
    """
    f = np.asarray(gt, dtype=np.float64) - np.asarray(d_round, dtype=np.float64)
    f = np.round(np.mod(f + 0.5, 1.0) - 0.5, 12)
    return np.where(f >= 0.5, f - 1.0, f)


def bin_index(frac, n_bins=N_BINS):
    return np.clip(np.floor((np.asarray(frac) + 0.5) * n_bins).astype(int), 0, n_bins - 1)


def snr_pixel_locking(d_hat, d_round, gt, mask, n_bins=N_BINS):
    """Power of the fractional-part-predictable error over the residual power.

    The expected error given the fractional part is the mean error of the
    pixels in the same 1/``n_bins`` px bin; its deviation from the global
    mean error is the signal ``eps``. SNR is ``sum(eps^2) / sum((e - eps)^2)``
    over the masked pixels.

    Returns
    -------
    snr_linear : float
        NaN when every error is zero.
    snr_db : float
        ``10 log10(snr_linear)``; ``-inf`` when the signal vanishes or the
        ratio is undefined.
    bin_table : list of dict
        One row per bin: ``lo``, ``hi``, ``mean_error``, ``epsilon`` and
        ``count``. Empty bins have NaN statistics and ``empty=True``.
    """
    e = _errors(d_hat, gt, mask)
    if e.shape[-1] != 1:
        raise ArgumentError("pixel-locking SNR is defined for 1D disparities")
    e = e[:, 0]
    frac = fractional_part(_as_field(gt)[mask][:, 0], _as_field(d_round)[mask][:, 0])
    b = bin_index(frac, n_bins)
    counts = np.bincount(b, minlength=n_bins)
    sums = np.bincount(b, weights=e, minlength=n_bins)
    means = np.divide(sums, counts, out=np.full(n_bins, np.nan), where=counts > 0)
    eps_bins = means - np.mean(e)
    # deviations at round-off level of the means are treated as exact zeros
    tiny = 64 * np.finfo(np.float64).eps * float(np.max(np.abs(e)))
    eps_bins[np.abs(eps_bins) <= tiny] = 0.0
    eps = eps_bins[b]
    signal = float(np.sum(eps * eps))
    noise = float(np.sum((e - eps) ** 2))
    if noise == 0.0:
        snr = float("nan") if signal == 0.0 else float("inf")
    else:
        snr = signal / noise
    snr_db = 10.0 * math.log10(snr) if snr > 0 and math.isfinite(snr) else (
        float("inf") if snr == float("inf") else float("-inf"))
    table = []
    for i in range(n_bins):
        lo = -0.5 + i / n_bins
        table.append({"lo": lo, "hi": lo + 1.0 / n_bins,
                      "mean_error": float(means[i]), "epsilon": float(eps_bins[i]),
                      "count": int(counts[i]), "empty": bool(counts[i] == 0)})
    return snr, snr_db, table


@dataclass
class EvalReport:
    n_inliers: int
    mae: float = float("nan")
    md: float = float("nan")
    rmse: float = float("nan")
    snr_linear: float = float("nan")
    snr_db: float = float("nan")
    bin_table: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def evaluate(d_hat, d_round, gt, threshold=1.0, valid=None):
    """Full report: MAE and SNR for 1D fields, mean distance for any n."""
    d_hat, d_round, gt = _as_field(d_hat), _as_field(d_round), _as_field(gt)
    mask = inlier_mask(d_round, gt, threshold, valid)
    report = EvalReport(int(mask.sum()))
    report.md = md(d_hat, gt, mask)
    report.rmse = rmse(d_hat, gt, mask)
    if d_hat.shape[-1] == 1:
        report.mae = mae(d_hat, gt, mask)
        report.snr_linear, report.snr_db, report.bin_table = snr_pixel_locking(
            d_hat, d_round, gt, mask)
    return report
