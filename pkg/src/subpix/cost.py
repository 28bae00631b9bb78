"""Match scores, cost volumes and discrete extremum extraction.

Disparities follow the convention ``source[p] ~ target[p + d]``. A search
range of dimension 1 moves along the column axis; a range of dimension 2
moves along (row, column).
"""

import enum
import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .features import FeatureVolume, Whitening, whiten_vectors


class CostKind(enum.Enum):
    NCC = "ncc"
    ZNCC = "zncc"
    SSD = "ssd"
    ZSSD = "zssd"
    SAD = "sad"
    ZSAD = "zsad"

    @property
    def zero_mean(self):
        return self.value.startswith("z")

    @property
    def family(self):
        """Base cost without the zero-mean prefix: ``"ncc"``, ``"ssd"`` or ``"sad"``."""
        return self.value[1:] if self.zero_mean else self.value

    @property
    def maximize(self):
        return self.family == "ncc"

    @property
    def whitening(self):
        """Whitening the inputs of `score` must carry."""
        if self.family == "ncc":
            return Whitening.ZERO_MEAN_NORMALIZED if self.zero_mean else Whitening.NORMALIZED
        return Whitening.ZERO_MEAN if self.zero_mean else Whitening.RAW

    @property
    def refinement_whitening(self):
        """Whitening of the features that refinement interpolates before
        normalizing them."""
        return Whitening.ZERO_MEAN if self.zero_mean else Whitening.RAW


def as_cost_kind(kind):
    if isinstance(kind, CostKind):
        return kind
    try:
        return CostKind(str(kind).lower())
    except ValueError:
        raise ArgumentError(f"unknown cost function {kind!r}") from None


def score(fs, ft, kind):
    """Match score between two already whitened feature vectors.

    NCC kinds return the dot product (inputs are unit vectors), SSD kinds the
    squared L2 distance and SAD kinds the L1 distance.
    """
    kind = as_cost_kind(kind)
    fs = np.asarray(fs, dtype=np.float64)
    ft = np.asarray(ft, dtype=np.float64)
    if fs.shape != ft.shape:
        raise ArgumentError(f"feature length mismatch: {fs.shape} vs {ft.shape}")
    if np.isnan(fs).any() or np.isnan(ft).any():
        raise ArgumentError("NaN in feature vector")
    return float(_score(fs, ft, kind.family))


def _score(fs, ft, family):
    if family == "ncc":
        return np.sum(fs * ft, axis=-1)
    diff = fs - ft
    if family == "ssd":
        return np.sum(diff * diff, axis=-1)
    return np.sum(np.abs(diff), axis=-1)


def to_cost(values, kind):
    """Map scores to the minimization convention (negate NCC scores)."""
    return -values if as_cost_kind(kind).maximize else values


@dataclass(frozen=True)
class SearchRange:
    """Inclusive integer disparity intervals, one ``(lo, hi)`` pair per dimension."""

    bounds: tuple

    def __post_init__(self):
        bounds = tuple((int(lo), int(hi)) for lo, hi in self.bounds)
        if not bounds:
            raise ArgumentError("a search range needs at least one dimension")
        for lo, hi in bounds:
            if lo > hi:
                raise ArgumentError(f"empty search interval [{lo}, {hi}]")
        object.__setattr__(self, "bounds", bounds)

    @classmethod
    def symmetric(cls, radius, ndim=1):
        return cls(((-radius, radius),) * ndim)

    @property
    def ndim(self):
        return len(self.bounds)

    @property
    def shape(self):
        return tuple(hi - lo + 1 for lo, hi in self.bounds)

    @property
    def lo(self):
        return np.array([lo for lo, _ in self.bounds])

    def disparities(self):
        """All disparity vectors in lexicographic order."""
        return list(itertools.product(*[range(lo, hi + 1) for lo, hi in self.bounds]))

    def contains(self, d):
        d = np.asarray(d)
        return bool(all(lo <= x <= hi for x, (lo, hi) in zip(d, self.bounds)))


@dataclass(frozen=True)
class CostVolume:
    """Scores for every pixel and candidate disparity.

    ``data[p + index]`` holds the score of disparity ``range.lo + index``;
    ``valid`` has the same shape.
    """

    data: np.ndarray
    kind: CostKind
    range: SearchRange
    valid: np.ndarray

    @property
    def image_shape(self):
        return self.data.shape[:2]

    def costs(self):
        """Volume in the minimization convention with invalid cells at +inf."""
        c = to_cost(self.data.astype(np.float64), self.kind)
        return np.where(self.valid, c, np.inf)


def _shift_axes(ndim):
    return (1,) if ndim == 1 else tuple(range(ndim))


def shifted(arr, d, axes, fill=0):
    """``out[p] = arr[p + d]`` along ``axes``, with out-of-image cells set to ``fill``.

    Returns the shifted array and a mask of in-image cells.
    """
    out = np.full_like(arr, fill)
    inside = np.zeros(arr.shape[:2], dtype=bool)
    src = [slice(None)] * 2
    dst = [slice(None)] * 2
    for ax, off in zip(axes, d):
        n = arr.shape[ax]
        if abs(off) >= n:
            return out, inside
        if off >= 0:
            src[ax], dst[ax] = slice(off, n), slice(0, n - off)
        else:
            src[ax], dst[ax] = slice(0, n + off), slice(-off, n)
    out[tuple(dst)] = arr[tuple(src)]
    inside[tuple(dst)] = True
    return out, inside


def build_cost_volume(fs, ft, search_range, kind):
    """Score every pixel of ``fs`` against every shifted pixel of ``ft``.

    Both volumes must be raw or carry the whitening ``kind`` requires; raw
    volumes are whitened here. Cells whose target falls outside the image,
    or whose features are degenerate, are marked invalid.
    """
    kind = as_cost_kind(kind)
    if fs.data.shape != ft.data.shape:
        raise ArgumentError("source and target volumes differ in shape")
    xs, vs = _prepared(fs, kind)
    xt, vt = _prepared(ft, kind)
    axes = _shift_axes(search_range.ndim)
    data = np.empty(fs.shape + search_range.shape, dtype=np.float64)
    valid = np.empty(fs.shape + search_range.shape, dtype=bool)
    for d in search_range.disparities():
        idx = (Ellipsis,) + tuple(x - lo for x, (lo, _) in zip(d, search_range.bounds))
        ftd, inside = shifted(xt, d, axes)
        vtd, _ = shifted(vt, d, axes, fill=False)
        data[idx] = _score(xs, ftd, kind.family)
        valid[idx] = inside & vs & vtd
    data[~valid] = 0.0
    return CostVolume(data, kind, search_range, valid)


def _prepared(fv, kind):
    if fv.whitening is Whitening.RAW:
        x, ok = whiten_vectors(fv.data, kind.whitening)
        return x, fv.valid & ok
    w = fv.whitening
    if (kind.family == "ncc" and not w.normalized) or (kind.zero_mean and not w.zero_mean):
        raise ArgumentError(
            f"{kind.name} needs {kind.whitening.value} features, got {fv.whitening.value}")
    return fv.data.astype(np.float64), fv.valid


@dataclass(frozen=True)
class DiscreteDisparity:
    disparity: np.ndarray
    score: float
    valid: bool


def discrete_best_field(cv):
    """Extremum of every pixel of a cost volume.

    Returns
    -------
    d_round : numpy.ndarray of int, shape (rows, cols, n)
    best : numpy.ndarray, shape (rows, cols)
        Score at the extremum (NaN where invalid).
    valid : numpy.ndarray of bool, shape (rows, cols)
    """
    n = cv.range.ndim
    rows, cols = cv.image_shape
    flat = cv.costs().reshape(rows, cols, -1)
    # argmin returns the first occurrence: lexicographically smallest disparity
    idx = np.argmin(flat, axis=-1)
    valid = np.isfinite(np.take_along_axis(flat, idx[..., None], -1)[..., 0])
    d = np.stack(np.unravel_index(idx, cv.range.shape), axis=-1) + cv.range.lo
    best = np.take_along_axis(cv.data.reshape(rows, cols, -1), idx[..., None], -1)[..., 0]
    best = np.where(valid, best, np.nan)
    return d.reshape(rows, cols, n), best, valid


def discrete_best(cv, p):
    """Extremum of the cost volume at pixel ``p``.

    Ties go to the lexicographically smallest disparity. A pixel without a
    valid cell yields an invalid result.
    """
    p = tuple(p)
    costs = cv.costs()[p].ravel()
    i = int(np.argmin(costs))
    if not np.isfinite(costs[i]):
        return DiscreteDisparity(np.zeros(cv.range.ndim, dtype=int), float("nan"), False)
    d = np.array(np.unravel_index(i, cv.range.shape)) + cv.range.lo
    return DiscreteDisparity(d, float(cv.data[p].ravel()[i]), True)
