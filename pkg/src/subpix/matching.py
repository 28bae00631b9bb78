"""Dense matching: features, cost volume, discrete match and refinement.

`match` runs the whole chain on an image pair for one refinement method.
Disparities follow ``source[p] ~ target[p + d]``; in 1D ``d`` is a column
offset, in 2D a (row, col) offset.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .cost import SearchRange, as_cost_kind, build_cost_volume, discrete_best_field
from .errors import ArgumentError, EmptyDomainError
from .features import FeatureVolume, Whitening, build_feature_volume, whiten_vectors
from .refine1d import Status, equiangular_delta, parabola_delta, split_pair
from .refine_nd import (CostNeighborhood, anisotropic_refine_2d, feature_refine_nd,
                        paraboloid_refine_2d, separable_refine)
from .synth import resample
from .tensor import CLAMP, make_square_window

# method -> (kind of refiner, argument)
_CONTIGUITY = {
    "rook-split": ("feature", ("rook", "split")),
    "queen-split": ("feature", ("queen", "split")),
    "rook-symmetric": ("feature", ("rook", "symmetric")),
    "queen-symmetric": ("feature", ("queen", "symmetric")),
}
METHODS_1D = {
    "raw": ("raw", None),
    "parabola": ("cost1d", "parabola"),
    "equiangular": ("cost1d", "equiangular"),
    "separable-parabola": ("cost1d", "parabola"),
    "separable-equiangular": ("cost1d", "equiangular"),
    "shimizu2005": ("shimizu", "parabola"),
    "barycentric-split": ("split1d", None),
    "predictive-symmetric": ("feature", ("rook", "symmetric")),
    **_CONTIGUITY,
}
METHODS_2D = {
    "raw": ("raw", None),
    "separable-parabola": ("separable", "parabola"),
    "separable-equiangular": ("separable", "equiangular"),
    "anisotropic-parabola": ("anisotropic", "parabola"),
    "anisotropic-equiangular": ("anisotropic", "equiangular"),
    "paraboloid": ("paraboloid", None),
    **_CONTIGUITY,
}
INTERP_ORDERS = ("before", "after")


def methods_for(ndim):
    return METHODS_1D if ndim == 1 else METHODS_2D


def thread_count(threads=None):
    """Worker count: ``threads`` if given, else ``SUBPIX_THREADS``, else 1."""
    if threads is None:
        env = os.environ.get("SUBPIX_THREADS", "").strip()
        if not env:
            return 1
        try:
            threads = int(env)
        except ValueError:
            raise ArgumentError(f"SUBPIX_THREADS must be an integer, got {env!r}") from None
    if threads < 1:
        raise ArgumentError("thread count must be at least 1")
    return int(threads)


@dataclass
class MatchResult:
    """Per-pixel output of `match`.

    ``d_hat`` is NaN where the discrete match failed; ``status`` holds
    `Status` codes (``INVALID`` for failed discrete matches).
    """

    d_round: np.ndarray
    d_hat: np.ndarray
    status: np.ndarray
    valid: np.ndarray
    method: str
    kind: str

    def status_counts(self):
        values, counts = np.unique(self.status, return_counts=True)
        return {Status(int(v)).name: int(c) for v, c in zip(values, counts)}


def _window(window, image):
    if isinstance(window, int):
        channels = 1 if image.ndim == 2 else image.shape[2]
        return make_square_window(window, channels)
    return window


def _features(image, window, border):
    """Raw feature volume of full image size. Under ``REJECT`` the pixels
    whose window leaves the image are marked invalid instead of cropped."""
    if border.kind != "reject":
        return build_feature_volume(image, window, border)
    fv = build_feature_volume(image, window, CLAMP)
    (top, bottom), (left, right) = window.margins()
    rows, cols = fv.shape
    if rows - top - bottom <= 0 or cols - left - right <= 0:
        raise EmptyDomainError(f"window does not fit in image {fv.shape}")
    inside = np.zeros(fv.shape, dtype=bool)
    inside[top:rows - bottom, left:cols - right] = True
    return replace(fv, valid=fv.valid & inside)


def _within_reach(fv, window, search_range):
    """Pixels whose candidate target patches, widened by one cell for
    refinement, all lie inside the image."""
    (top, bottom), (left, right) = window.margins()
    rows, cols = fv.shape
    axes = (1,) if search_range.ndim == 1 else (0, 1)
    lo_edge = {0: top, 1: left}
    hi_edge = {0: rows - 1 - bottom, 1: cols - 1 - right}
    idx = np.indices(fv.shape)
    ok = np.ones(fv.shape, dtype=bool)
    for axis, (lo, hi) in zip(axes, search_range.bounds):
        ok &= (idx[axis] + lo - 1 >= lo_edge[axis]) & (idx[axis] + hi + 1 <= hi_edge[axis])
    return ok


def match(source, target, search_range, kind="zncc", window=5, method="parabola",
          interp="before", border=CLAMP, threads=None, mask=None):
    """Match ``source`` against ``target`` and refine the discrete disparities.

    Parameters
    ----------
    source, target : numpy.ndarray
        Images of equal shape, rank 2 (gray) or 3 (channels last).
    search_range : SearchRange or sequence of (lo, hi)
        One interval for 1D (column) matching, two for 2D (row, col).
    kind : CostKind or str
    window : int or PatchWindow
        Odd square side, or an explicit window.
    method : str
        One of `METHODS_1D` or `METHODS_2D`, according to the search range.
    interp : {"before", "after"}
        Whether feature-space methods interpolate before or after the
        normalizing part of the whitening.
    border : Border
        ``CLAMP`` replicates edge pixels into border patches. ``REJECT``
        uses no data from outside the image: a pixel is matched only if its
        window and every candidate target window, widened by one cell for
        refinement, fit in the image. Outputs always have the image size.
    mask : numpy.ndarray of bool, optional
        Restrict refinement to these pixels; others keep ``d_hat = d_round``.
    """
    if not isinstance(search_range, SearchRange):
        search_range = SearchRange(tuple(search_range))
    kind = as_cost_kind(kind)
    n = search_range.ndim
    if n not in (1, 2):
        raise ArgumentError("matching supports 1D or 2D search ranges")
    table = methods_for(n)
    if method not in table:
        raise ArgumentError(f"method {method!r} is not available for {n}D matching; "
                            f"choose from {sorted(table)}")
    if interp not in INTERP_ORDERS:
        raise ArgumentError(f"interp must be one of {INTERP_ORDERS}")
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.shape != target.shape:
        raise ArgumentError(f"image shapes differ: {source.shape} vs {target.shape}")
    win = _window(window, source)

    fs = _features(source, win, border)
    ft = _features(target, win, border)
    if border.kind == "reject":
        fs = replace(fs, valid=fs.valid & _within_reach(fs, win, search_range))
    cv = build_cost_volume(fs, ft, search_range, kind)
    d_round, _, valid = discrete_best_field(cv)
    todo = valid if mask is None else valid & np.asarray(mask, dtype=bool)

    family, arg = table[method]
    delta = np.zeros(d_round.shape)
    status = np.full(valid.shape, int(Status.OK), dtype=np.uint8)
    if family == "cost1d":
        delta[..., 0], status[:] = _cost_refine_1d(cv.costs(), d_round[..., 0] - search_range.lo[0],
                                                   arg)
    elif family == "shimizu":
        delta[..., 0], status[:] = _shimizu(fs, target, border, search_range, kind, cv, d_round)
    elif family != "raw":
        mode = kind.refinement_whitening if interp == "before" else kind.whitening
        xs, _ = whiten_vectors(fs.data, mode)
        xt, vt = whiten_vectors(ft.data, mode)
        vt &= ft.valid
        if family == "split1d":
            delta[..., 0], status[:] = _split_1d(xs, xt, vt, d_round[..., 0], kind.family)
        else:
            costs = cv.costs() if family in ("separable", "anisotropic", "paraboloid") else None
            fn = _pixel_refiner(family, arg, kind, xs, xt, vt, costs, search_range)
            _per_pixel(fn, d_round, todo, delta, status, thread_count(threads))

    skip = ~todo
    delta[skip] = 0.0
    status[valid & skip] = int(Status.OK)
    status[~valid] = int(Status.INVALID)
    d_hat = d_round + delta
    d_hat[~valid] = np.nan
    return MatchResult(d_round, d_hat, status, valid, method, kind.value)


def _cost_refine_1d(costs, index, method):
    """Vectorized triplet refinement on a 1D cost volume (min convention)."""
    L = costs.shape[-1]
    i = np.clip(index, 0, L - 1)[..., None]
    c0 = np.take_along_axis(costs, i, -1)[..., 0]
    cm = np.where(index >= 1, np.take_along_axis(costs, np.clip(i - 1, 0, L - 1), -1)[..., 0],
                  np.inf)
    cp = np.where(index <= L - 2, np.take_along_axis(costs, np.clip(i + 1, 0, L - 1), -1)[..., 0],
                  np.inf)
    ok = np.isfinite(cm) & np.isfinite(c0) & np.isfinite(cp)
    fn = parabola_delta if method == "parabola" else equiangular_delta
    delta, status = fn(np.where(ok, cm, 0.0), np.where(ok, c0, 0.0), np.where(ok, cp, 0.0))
    delta = np.where(ok, delta, 0.0)
    status = np.where(ok, status, Status.CLAMPED)
    return delta, status


def _shimizu(fs, target, border, search_range, kind, cv, d_round):
    """Average the parabola estimate with one made against the target
    resampled half a pixel to the right."""
    ft2 = _features(resample(target, 0.5), fs.window, border)
    if border.kind == "reject":
        # the last column of the resampled target repeats the edge
        ft2 = replace(ft2, valid=ft2.valid & (np.arange(ft2.shape[1]) < ft2.shape[1] - 1))
    cv2 = build_cost_volume(fs, ft2, search_range, kind)
    d2, _, valid2 = discrete_best_field(cv2)
    lo = search_range.lo[0]
    first, st1 = _cost_refine_1d(cv.costs(), d_round[..., 0] - lo, "parabola")
    second, st2 = _cost_refine_1d(cv2.costs(), d2[..., 0] - lo, "parabola")
    offset = d2[..., 0] + 0.5 - d_round[..., 0]
    combined = 0.5 * (first + second + offset)
    usable = valid2 & (st1 != Status.DEGENERATE_FALLBACK) & (st2 != Status.DEGENERATE_FALLBACK)
    usable &= (st1 != Status.CLAMPED) | (np.abs(first) == 0.5)
    usable &= np.abs(offset) <= 1.0
    delta = np.where(usable, combined, first)
    status = np.where(usable, Status.OK, Status.DEGENERATE_FALLBACK)
    return delta, status


def _split_1d(xs, xt, vt, d, family):
    rows, cols = d.shape
    x = np.arange(cols)[None, :] + d
    rr = np.broadcast_to(np.arange(rows)[:, None], d.shape)
    gathered, usable = [], []
    for c in (x - 1, x, x + 1):
        cc = np.clip(c, 0, cols - 1)
        gathered.append(xt[rr, cc])
        usable.append((c >= 0) & (c < cols) & vt[rr, cc])
    left, center, right = gathered
    use_left, use_right = usable[1] & usable[0], usable[1] & usable[2]
    delta, status, _ = split_pair(xs, left, center, right, family, use_left, use_right)
    ok = use_left | use_right
    delta = np.where(ok, delta, 0.0)
    status = np.where(ok, status, Status.CLAMPED)
    status = np.where(status == Status.INVALID, Status.DEGENERATE_FALLBACK, status)
    return delta, status


def _pixel_refiner(family, arg, kind, xs, xt, vt, costs, search_range):
    lo = search_range.lo
    Ft = FeatureVolume(xt, Whitening.RAW, None, vt)

    def feature(p, d):
        contiguity, strategy = arg
        return feature_refine_nd(xs[p], Ft, p, d, kind, contiguity, strategy)

    def cost(p, d):
        nbh = CostNeighborhood.from_costs(costs[p], d - lo, 2)
        if family == "separable":
            return separable_refine(nbh, arg)
        if family == "anisotropic":
            return anisotropic_refine_2d(nbh, arg)
        return paraboloid_refine_2d(nbh)

    return feature if family == "feature" else cost


def _per_pixel(fn, d_round, todo, delta, status, threads):
    rows = np.flatnonzero(todo.any(axis=1))

    def run(row):
        for col in np.flatnonzero(todo[row]):
            res = fn((row, col), d_round[row, col])
            delta[row, col] = res.delta
            status[row, col] = int(res.status)

    if threads == 1:
        for r in rows:
            run(r)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, rows))
