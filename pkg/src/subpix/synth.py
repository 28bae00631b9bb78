"""Synthetic ground truth and brute-force oracles.

`make_shifted_pair` builds image pairs with a known fractional disparity.
The source image is linearly (1D) or bilinearly (2D) resampled from the
base image while the target is the base itself, so every source patch is
exactly the interpolation of its integer-positioned target neighbours.
That is the model assumed by feature-space refinement, which makes these
pairs the reference fixtures for exact shift recovery.

The grid oracles evaluate interpolated costs exhaustively and never call
the closed forms they are used to check.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .cost import as_cost_kind
from .errors import ArgumentError


def make_texture(shape, seed=0, smoothness=1.5):
    """Smoothed white noise rescaled to [0, 1]."""
    rng = np.random.default_rng(seed)
    img = ndimage.gaussian_filter(rng.standard_normal(shape), smoothness, mode="wrap")
    img -= img.min()
    return img / img.max()


def make_sinusoid(shape, period=7.3, angle=0.3):
    rows, cols = np.indices(shape, dtype=np.float64)
    phase = (np.cos(angle) * cols + np.sin(angle) * rows) * 2 * np.pi / period
    return 0.5 + 0.5 * np.sin(phase)


def resample(image, shift):
    """``out[p] = image(p + shift)`` by (bi)linear interpolation.

    ``shift`` is a scalar (column shift) or a (row, col) pair. Samples outside
    the image are clamped to the border; callers crop those margins away.
    """
    image = np.asarray(image, dtype=np.float64)
    shift = np.atleast_1d(np.asarray(shift, dtype=np.float64))
    if shift.size == 1:
        shift = np.array([0.0, shift[0]])
    rows, cols = image.shape[:2]
    y, x = np.indices((rows, cols), dtype=np.float64)
    y += shift[0]
    x += shift[1]
    y0, x0 = np.floor(y), np.floor(x)
    fy, fx = (y - y0)[..., None], (x - x0)[..., None]
    if image.ndim == 2:
        fy, fx = fy[..., 0], fx[..., 0]
    y0 = np.clip(y0.astype(int), 0, rows - 1)
    x0 = np.clip(x0.astype(int), 0, cols - 1)
    y1 = np.clip(y0 + 1, 0, rows - 1)
    x1 = np.clip(x0 + 1, 0, cols - 1)
    return ((1 - fy) * (1 - fx) * image[y0, x0] + (1 - fy) * fx * image[y0, x1]
            + fy * (1 - fx) * image[y1, x0] + fy * fx * image[y1, x1])


@dataclass(frozen=True)
class SyntheticPair:
    """Image pair with a constant known disparity: ``source[p] == target(p + shift)``."""

    source: np.ndarray
    target: np.ndarray
    shift: np.ndarray
    kind: str
    noise_sigma: float = 0.0

    def truth(self):
        """Ground-truth disparity field, shape (rows, cols, n)."""
        rows, cols = self.source.shape[:2]
        return np.broadcast_to(self.shift, (rows, cols, self.shift.size)).copy()


def make_shifted_pair(base, shift, noise_sigma=0.0, rng=None):
    """Pair whose source is ``base`` resampled at ``p + shift``.

    Parameters
    ----------
    base : numpy.ndarray, rank 2 or 3
    shift : float or sequence of 2 floats
        Column shift (1D pair) or (row, col) shift (2D pair), in pixels.
    noise_sigma : float
        Standard deviation of i.i.d. Gaussian noise added to the resampled
        image.
    rng : numpy.random.Generator, optional
    """
    base = np.asarray(base, dtype=np.float64)
    shift = np.atleast_1d(np.asarray(shift, dtype=np.float64))
    if shift.size not in (1, 2):
        raise ArgumentError("shift must have 1 or 2 components")
    extent = (base.shape[1],) if shift.size == 1 else base.shape[:2]
    if any(abs(s) >= n for s, n in zip(shift, extent)):
        raise ArgumentError(f"shift {shift} exceeds image extent {extent}")
    m = int(math.ceil(np.abs(shift).max())) + 1
    source = resample(base, shift)
    if noise_sigma > 0:
        rng = np.random.default_rng() if rng is None else rng
        source = source + rng.normal(0.0, noise_sigma, source.shape)
    crop = (slice(m, base.shape[0] - m), slice(m, base.shape[1] - m))
    if any(s.stop - s.start < 1 for s in crop):
        raise ArgumentError("image too small for the warp margins")
    kind = "linear-1d" if shift.size == 1 else "bilinear-2d"
    return SyntheticPair(source[crop], base[crop].copy(), shift, kind, float(noise_sigma))


# oracles --------------------------------------------------------------------

def _whitened_cost(fs, ft, kind):
    """Cost of unwhitened vectors, whitening both after interpolation."""
    fs = np.asarray(fs, dtype=np.float64)
    ft = np.asarray(ft, dtype=np.float64)
    if kind.zero_mean:
        fs = fs - fs.mean(axis=-1, keepdims=True)
        ft = ft - ft.mean(axis=-1, keepdims=True)
    if kind.family == "ncc":
        num = np.sum(fs * ft, axis=-1)
        den = np.linalg.norm(fs, axis=-1) * np.linalg.norm(ft, axis=-1)
        return -num / np.where(den > 0, den, np.inf)
    if kind.family == "ssd":
        return np.sum((fs - ft) ** 2, axis=-1)
    return np.sum(np.abs(fs - ft), axis=-1)


def grid_oracle_1d(f, kind, step=1e-4):
    """Best ``delta`` on the grid ``0, step, ..., 1`` for interval features
    ``f = (fs, ft_lo, ft_hi)``; ties go to the smaller delta."""
    if not 0 < step <= 0.1:
        raise ArgumentError("step must lie in (0, 0.1]")
    kind = as_cost_kind(kind)
    fs, lo, hi = (np.asarray(v, dtype=np.float64) for v in f)
    grid = np.linspace(0.0, 1.0, int(round(1.0 / step)) + 1)
    ft = (1.0 - grid)[:, None] * lo + grid[:, None] * hi
    costs = _whitened_cost(fs, ft, kind)
    return float(grid[int(np.argmin(costs))])


def _alpha_costs(fs, ts, kind, alphas):
    beta = np.concatenate([alphas, 1.0 - alphas.sum(axis=1, keepdims=True)], axis=1)
    return _whitened_cost(fs, beta @ ts.vectors, kind)


def grid_oracle_nd(fs, ts, kind, step=1e-3, bounds=(-0.5, 1.5), max_points=250_000):
    """Best affine weights on a grid, for at most 4 targets.

    The grid spans ``bounds`` for each free coordinate ``alpha`` (the last
    weight is ``1 - sum(alpha)``). When the full grid at ``step`` exceeds
    ``max_points``, the search runs coarse to fine: each level scans a box
    of +-4 previous steps around the previous best point with a step four
    times smaller, down to ``step``. The costs searched here are convex (SSD,
    SAD) or unimodal on the affine span (NCC), so the refinement stays in
    the basin of the global optimum.

    Returns
    -------
    beta : numpy.ndarray
    d : numpy.ndarray
        ``ts.D @ beta``.
    """
    kind = as_cost_kind(kind)
    m = ts.vectors.shape[0]
    if m > 4:
        raise ArgumentError("grid oracle supports at most 4 targets")
    k = m - 1
    lo, hi = bounds
    fs = np.asarray(fs, dtype=np.float64)

    levels = [step]
    while ((hi - lo) / levels[0] + 1) ** k > max_points:
        levels.insert(0, levels[0] * 4)
    center = None
    for i, s in enumerate(levels):
        if i == 0:
            axes = [np.arange(lo, hi + s / 2, s)] * k
        else:
            w = 4 * levels[i - 1]
            axes = [np.arange(c - w, c + w + s / 2, s) for c in center]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, k)
        costs = np.concatenate([_alpha_costs(fs, ts, kind, chunk)
                                for chunk in np.array_split(pts, max(1, len(pts) // 20000))])
        center = pts[int(np.argmin(costs))]
    beta = np.append(center, 1.0 - center.sum())
    return beta, ts.D @ beta
