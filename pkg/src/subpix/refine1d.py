"""One-dimensional subpixel refinement.

Two families live here:

* cost-volume refiners (parabola, equiangular lines) that only look at the
  three costs around the discrete optimum, and
* feature-space refiners that linearly interpolate the target feature
  vectors between two integer disparities and minimize the continuous cost
  in closed form (NCC, SSD) or with a weighted median (SAD).

The ``*_delta`` / ``*_interval`` functions are vectorized over leading axes
and return ``(delta, status)`` arrays; the ``*_refine*`` functions wrap them
for a single pixel and return a `SubpixelResult`.
"""

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .cost import as_cost_kind
from .errors import ArgumentError, DegenerateError

EPS = 1e-12


class Status(enum.IntEnum):
    OK = 0
    CLAMPED = 1
    DEGENERATE_FALLBACK = 2
    NOT_CONVERGED = 3
    INVALID = 4


@dataclass(frozen=True)
class SubpixelResult:
    delta: float
    status: Status
    cost_at_delta: float = float("nan")


class CostTriplet(NamedTuple):
    """Costs at ``d - 1``, ``d`` and ``d + 1`` in the minimization convention."""

    c_minus: float
    c_0: float
    c_plus: float


class IntervalFeatures(NamedTuple):
    """Source vector and the target vectors at both ends of a unit interval."""

    fs: np.ndarray
    ft_lo: np.ndarray
    ft_hi: np.ndarray


def _check_finite(*values):
    for v in values:
        if np.isnan(np.asarray(v, dtype=np.float64)).any():
            raise ArgumentError("NaN input")


def _clamp(delta, status, lo, hi):
    out = (delta < lo) | (delta > hi)
    status = np.where(out & (status == Status.OK), Status.CLAMPED, status)
    return np.clip(delta, lo, hi), status


# cost-volume refiners -----------------------------------------------------

def parabola_delta(c_minus, c_0, c_plus, clamp=True):
    """Vertex of the parabola through three equally spaced costs, clamped to
    [-0.5, 0.5] unless ``clamp`` is false."""
    cm, c0, cp = (np.asarray(c, dtype=np.float64) for c in (c_minus, c_0, c_plus))
    den = 2.0 * (cp - 2.0 * c0 + cm)
    degenerate = np.abs(den) < EPS
    delta = np.where(degenerate, 0.0, (cm - cp) / np.where(degenerate, 1.0, den))
    status = np.where(degenerate, Status.DEGENERATE_FALLBACK, Status.OK)
    return _clamp(delta, status, -0.5, 0.5) if clamp else (delta, status)


def equiangular_delta(c_minus, c_0, c_plus, clamp=True):
    """Intersection of two lines of opposite slope through the costs, clamped
    to [-0.5, 0.5] unless ``clamp`` is false. The slope magnitude is the
    steeper of the two sides."""
    cm, c0, cp = (np.asarray(c, dtype=np.float64) for c in (c_minus, c_0, c_plus))
    zeta = np.sign(c0 - cm) * np.maximum(np.abs(c0 - cm), np.abs(cp - c0))
    degenerate = np.abs(zeta) < EPS
    delta = np.where(degenerate, 0.0, (cp - cm) / np.where(degenerate, 1.0, 2.0 * zeta))
    status = np.where(degenerate, Status.DEGENERATE_FALLBACK, Status.OK)
    return _clamp(delta, status, -0.5, 0.5) if clamp else (delta, status)


def _triplet_result(fn, t):
    t = CostTriplet(*t)
    _check_finite(*t)
    delta, status = fn(*t)
    return SubpixelResult(float(delta), Status(int(status)))


def parabola_refine(t):
    return _triplet_result(parabola_delta, t)


def equiangular_refine(t):
    return _triplet_result(equiangular_delta, t)


def shimizu_cancellation_1d(triplet, shifted_triplet, shifted_offset, base=parabola_refine):
    """Average a cost-based estimate with one made on a half-pixel shifted pair.

    Parameters
    ----------
    triplet : CostTriplet
        Costs around the discrete optimum ``d`` of the original pair.
    shifted_triplet : CostTriplet or None
        Costs around the discrete optimum ``d'`` of the pair whose target was
        linearly resampled half a pixel away. None if that match failed.
    shifted_offset : float
        ``d' + s - d``, where ``s`` (+-0.5) undoes the resampling shift, so
        that ``base(shifted_triplet).delta + shifted_offset`` estimates the
        same correction as ``base(triplet).delta``.
    base : callable
        Cost refiner applied to both triplets.
    """
    first = base(triplet)
    if shifted_triplet is None:
        return SubpixelResult(first.delta, Status.DEGENERATE_FALLBACK)
    second = base(shifted_triplet)
    if first.status == Status.DEGENERATE_FALLBACK or second.status == Status.DEGENERATE_FALLBACK:
        return SubpixelResult(first.delta, Status.DEGENERATE_FALLBACK)
    return SubpixelResult(0.5 * (first.delta + second.delta + shifted_offset), Status.OK)


# feature-space refiners ---------------------------------------------------

def _dot(a, b):
    return np.einsum("...k,...k->...", a, b)


def lerp(lo, hi, delta):
    delta = np.asarray(delta, dtype=np.float64)[..., None]
    return (1.0 - delta) * lo + delta * hi


def interval_cost(fs, ft_lo, ft_hi, delta, family):
    """Cost (minimization convention) of ``fs`` against the target features
    interpolated at ``delta``. NCC normalizes after interpolating."""
    fs = np.asarray(fs, dtype=np.float64)
    ft = lerp(np.asarray(ft_lo, dtype=np.float64), np.asarray(ft_hi, dtype=np.float64), delta)
    return vector_cost(fs, ft, family)


def vector_cost(fs, ft, family):
    """Cost between unwhitened vectors; NCC kinds normalize both sides."""
    if family == "ncc":
        den = np.linalg.norm(fs, axis=-1) * np.linalg.norm(ft, axis=-1)
        return -_dot(fs, ft) / np.where(den > 0, den, np.inf)
    diff = fs - ft
    if family == "ssd":
        return _dot(diff, diff)
    return np.sum(np.abs(diff), axis=-1)


def ncc_interval(fs, ft_lo, ft_hi, clamp=True):
    """Maximizer of the normalized correlation between ``fs`` and
    ``lerp(ft_lo, ft_hi, delta)``.

    With ``a[i,j,k] = <fs, t_i> <t_j, t_k>`` (``t_0 = ft_lo``,
    ``t_1 = ft_hi``) the stationary point is
    ``(a010 - a100) / (a010 - a011 - a100 + a110)``. Along the line the
    correlation has a single stationary point; when it is a minimum, or the
    formula is singular, the better endpoint is returned.
    """
    fs, lo, hi = (np.asarray(v, dtype=np.float64) for v in (fs, ft_lo, ft_hi))
    p0, p1 = _dot(fs, lo), _dot(fs, hi)
    t00, t01, t11 = _dot(lo, lo), _dot(lo, hi), _dot(hi, hi)
    a010, a100 = p0 * t01, p1 * t00
    a011, a110 = p0 * t11, p1 * t01
    num = a010 - a100
    den = a010 - a011 - a100 + a110
    scale = np.sqrt(_dot(fs, fs)) * np.maximum(t00, t11) ** 1.5
    singular = ~(np.abs(den) >= EPS * np.maximum(scale, EPS))
    delta = num / np.where(singular, 1.0, den)
    is_max = ((1.0 - delta) * p0 + delta * p1) > 0
    endpoint = np.where(p1 * np.sqrt(t00) > p0 * np.sqrt(t11), 1.0, 0.0)

    status = np.full(np.shape(num), Status.OK)
    status = np.where(singular, Status.DEGENERATE_FALLBACK, status)
    status = np.where(~singular & ~is_max, Status.CLAMPED, status)
    delta = np.where(singular | ~is_max, endpoint, delta)
    bad = (t00 < EPS) | (t11 < EPS) | (_dot(fs, fs) < EPS)
    status = np.where(bad, Status.INVALID, status)
    delta = np.where(bad, 0.0, delta)
    if clamp:
        delta, status = _clamp(delta, status, 0.0, 1.0)
    return delta, status


def ssd_interval(fs, ft_lo, ft_hi, clamp=True):
    """Minimizer of ``||fs - lerp(ft_lo, ft_hi, delta)||^2``: the projection
    of ``fs - ft_lo`` on the interval direction."""
    fs, lo, hi = (np.asarray(v, dtype=np.float64) for v in (fs, ft_lo, ft_hi))
    g = hi - lo
    gg = _dot(g, g)
    degenerate = gg < EPS
    delta = np.where(degenerate, 0.0, _dot(g, fs - lo) / np.where(degenerate, 1.0, gg))
    status = np.where(degenerate, Status.DEGENERATE_FALLBACK, Status.OK)
    if clamp:
        delta, status = _clamp(delta, status, 0.0, 1.0)
    return delta, status


def weighted_median_lower(values, weights):
    """Vectorized lower weighted median along the last axis.

    Zero-weight entries never get selected. Rows with no positive weight
    return NaN.
    """
    values = np.asarray(values, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    values = np.where(weights > 0, values, np.inf)
    order = np.argsort(values, axis=-1, kind="stable")
    v = np.take_along_axis(values, order, -1)
    w = np.take_along_axis(weights, order, -1)
    cum = np.cumsum(w, axis=-1)
    total = cum[..., -1:]
    pick = np.argmax(cum >= 0.5 * total, axis=-1)
    out = np.take_along_axis(v, pick[..., None], -1)[..., 0]
    return np.where(total[..., 0] > 0, out, np.nan)


def weighted_median(values, weights):
    """Minimizer of ``sum_i w_i |x - v_i|``.

    Sorts the values and returns the first one at which the cumulative
    weight reaches half of the total (the lower weighted median).
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    weights = np.asarray(weights, dtype=np.float64).ravel()
    if values.size == 0 or values.shape != weights.shape:
        raise ArgumentError("values and weights must be non-empty and of equal length")
    if np.any(weights < 0) or not np.any(weights > 0):
        raise ArgumentError("weights must be non-negative with a positive total")
    _check_finite(values, weights)
    return float(weighted_median_lower(values, weights))


def sad_interval(fs, ft_lo, ft_hi, clamp=True):
    """Minimizer of ``||fs - lerp(ft_lo, ft_hi, delta)||_1``.

    Every channel with a non-zero slope contributes the candidate
    ``(fs - lo) / (hi - lo)`` weighted by ``|hi - lo|``; the optimum is their
    weighted median.
    """
    fs, lo, hi = (np.asarray(v, dtype=np.float64) for v in (fs, ft_lo, ft_hi))
    slope = hi - lo
    usable = np.abs(slope) >= EPS
    cand = (fs - lo) / np.where(usable, slope, 1.0)
    delta = weighted_median_lower(cand, np.where(usable, np.abs(slope), 0.0))
    degenerate = np.isnan(delta)
    delta = np.where(degenerate, 0.0, delta)
    status = np.where(degenerate, Status.DEGENERATE_FALLBACK, Status.OK)
    if clamp:
        delta, status = _clamp(delta, status, 0.0, 1.0)
    return delta, status


INTERVAL_SOLVERS = {"ncc": ncc_interval, "ssd": ssd_interval, "sad": sad_interval}


def _interval_result(family, f, clamp):
    f = IntervalFeatures(*(np.asarray(v, dtype=np.float64) for v in f))
    if not (f.fs.shape == f.ft_lo.shape == f.ft_hi.shape) or f.fs.ndim != 1 or f.fs.size < 1:
        raise ArgumentError("interval features must be 1D vectors of equal length")
    _check_finite(*f)
    delta, status = INTERVAL_SOLVERS[family](*f, clamp=clamp)
    if status == Status.INVALID:
        raise DegenerateError("zero-norm feature vector")
    delta = float(delta)
    return SubpixelResult(delta, Status(int(status)), float(interval_cost(*f, delta, family)))


def ncc_feature_refine_1d(f, clamp=True):
    return _interval_result("ncc", f, clamp)


def ssd_feature_refine_1d(f, clamp=True):
    return _interval_result("ssd", f, clamp)


def sad_feature_refine_1d(f, clamp=True):
    return _interval_result("sad", f, clamp)


def feature_refine_1d(f, kind, clamp=True):
    """Dispatch to the interval refiner of ``kind``'s cost family."""
    return _interval_result(as_cost_kind(kind).family, f, clamp)


# left/right interval pairs --------------------------------------------------

def split_pair(fs, ft_left, ft_center, ft_right, family, use_left=True, use_right=True):
    """Vectorized two-sided refinement around a discrete optimum.

    Solves ``[center, left]`` and ``[center, right]`` independently and keeps
    the candidate with the lower interpolated cost. ``use_left`` and
    ``use_right`` (broadcastable boolean masks) drop unavailable sides.
    Returns a signed delta in [-1, 1], the status of the kept side and its
    cost (infinite when neither side is usable).
    """
    solver = INTERVAL_SOLVERS[family]
    dl, sl = solver(fs, ft_center, ft_left)
    dr, sr = solver(fs, ft_center, ft_right)
    cl = np.where(use_left, interval_cost(fs, ft_center, ft_left, dl, family), np.inf)
    cr = np.where(use_right, interval_cost(fs, ft_center, ft_right, dr, family), np.inf)
    right = cr < cl
    delta = np.where(right, dr, -dl)
    status = np.where(right, sr, sl)
    bad = (use_left & (sl == Status.INVALID)) | (use_right & (sr == Status.INVALID))
    status = np.where(bad, Status.INVALID, status)
    return delta, status, np.where(right, cr, cl)


def refine_interval_pair(fs, ft_left, ft_center, ft_right, kind, strategy="split_barycentric"):
    """Refine around the discrete optimum using both neighbouring intervals.

    ``split_barycentric`` treats the two intervals separately;
    ``symmetric_predictive`` fits all three target vectors at once and
    returns ``D @ beta`` for ``D = [-1, 0, 1]``, clamped to [-1, 1].
    """
    kind = as_cost_kind(kind)
    vecs = [np.asarray(v, dtype=np.float64) for v in (fs, ft_left, ft_center, ft_right)]
    if len({v.shape for v in vecs}) != 1 or vecs[0].ndim != 1:
        raise ArgumentError("all vectors must be 1D and of equal length")
    _check_finite(*vecs)
    fs, left, center, right = vecs
    if strategy == "split_barycentric":
        delta, status, cost = split_pair(fs, left, center, right, kind.family)
        if status == Status.INVALID:
            raise DegenerateError("zero-norm feature vector")
        return SubpixelResult(float(delta), Status(int(status)), float(cost))
    if strategy == "symmetric_predictive":
        from .refine_nd import TargetSet, barycentric_refine

        ts = TargetSet([left, right, center], [[-1, 1, 0]])
        sol = barycentric_refine(fs, ts, kind)
        delta = float(sol.d_hat[0])
        status = sol.status
        if abs(delta) > 1.0:
            delta = float(np.clip(delta, -1.0, 1.0))
            status = Status.CLAMPED if status == Status.OK else status
        cost = vector_cost(fs, ts.interpolate(sol.beta), kind.family)
        return SubpixelResult(delta, status, float(cost))
    raise ArgumentError(f"unknown strategy {strategy!r}")
