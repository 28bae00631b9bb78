"""Multidimensional subpixel refinement.

Cost-volume methods (separable, anisotropic line intersection, paraboloid
fit) work on a small neighbourhood of costs around the discrete optimum.
Feature-space methods express the interpolated target feature as an affine
combination ``A @ beta`` (``sum(beta) == 1``) of target vectors and solve
for the weights: in closed form for NCC and SSD, iteratively for SAD. The
refined disparity is ``D @ beta``.

All solvers use the affine parameterization ``A @ beta = M @ alpha + f_n``
with ``M = [f_1 - f_n, ..., f_{m-1} - f_n]``, so ``beta = (alpha, 1 - sum(alpha))``.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import lsq_linear

from .cost import as_cost_kind
from .errors import ArgumentError, DegenerateError
from .refine1d import (EPS, Status, equiangular_delta, parabola_delta,
                       vector_cost, weighted_median_lower)

RANK_TOL = 1e-10


@dataclass(frozen=True)
class RefinementResult:
    """Fractional correction of one pixel (added to its integer disparity)."""

    delta: np.ndarray
    status: Status
    iterations: int = 0
    cost: float = float("nan")


# cost-volume refiners -----------------------------------------------------

@dataclass(frozen=True)
class CostNeighborhood:
    """Costs (minimization convention) at offsets ``-r..r`` in every dimension
    around a discrete optimum; ``values[r, ..., r]`` is the optimum."""

    values: np.ndarray
    valid: np.ndarray = None
    radius: int = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        side = values.shape[0]
        if side % 2 == 0 or any(s != side for s in values.shape):
            raise ArgumentError("neighbourhood must be a hypercube of odd side")
        valid = np.isfinite(values) if self.valid is None else np.asarray(self.valid, dtype=bool)
        valid = valid & np.isfinite(values)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)
        object.__setattr__(self, "radius", side // 2)

    @property
    def ndim(self):
        return self.values.ndim

    def at(self, offset):
        """Cost at an integer offset, or None if invalid or out of reach."""
        idx = tuple(int(o) + self.radius for o in offset)
        if any(i < 0 or i >= 2 * self.radius + 1 for i in idx) or not self.valid[idx]:
            return None
        return self.values[idx]

    @classmethod
    def from_costs(cls, costs, d_index, radius):
        """Cut a neighbourhood out of one pixel's cost array (minimization
        convention, +inf where invalid) around index ``d_index``."""
        costs = np.asarray(costs, dtype=np.float64)
        n = costs.ndim
        side = 2 * radius + 1
        out = np.full((side,) * n, np.inf)
        for off in itertools.product(range(-radius, radius + 1), repeat=n):
            idx = tuple(int(i) + o for i, o in zip(d_index, off))
            if all(0 <= i < s for i, s in zip(idx, costs.shape)):
                out[tuple(o + radius for o in off)] = costs[idx]
        return cls(out)


_METHODS = {"parabola": parabola_delta, "equiangular": equiangular_delta}


def _method(name):
    try:
        return _METHODS[name]
    except KeyError:
        raise ArgumentError(f"unknown cost refinement method {name!r}") from None


def _axis_triplet(nbh, center, axis):
    vals = []
    for step in (-1, 0, 1):
        off = list(center)
        off[axis] += step
        vals.append(nbh.at(off))
    return None if any(v is None for v in vals) else vals


def separable_refine(nbh, method="parabola"):
    """Refine every dimension independently on the axis-aligned triplet
    through the centre."""
    fn = _method(method)
    n = nbh.ndim
    delta = np.zeros(n)
    status = Status.OK
    for axis in range(n):
        t = _axis_triplet(nbh, [0] * n, axis)
        if t is None:
            status = Status.CLAMPED
            continue
        dx, st = fn(*t)
        delta[axis] = dx
        if st != Status.OK and status == Status.OK:
            status = Status(int(st))
    return RefinementResult(delta, status)


def _line_corrections(nbh, fn, axis):
    """Corrections along ``axis`` at offsets -1, 0, 1 of the other axis.

    On each line the triplet is re-centred on the best of the three central
    cells, which needs the radius-2 cells. The vertex is not clamped, so a
    strongly sheared minimum that lies beyond the triplet is still found;
    non-convex triplets make the line unusable.
    """
    other = 1 - axis
    points = []
    for o in (-1, 0, 1):
        best, best_cost = None, np.inf
        for a in (-1, 0, 1):
            off = [0, 0]
            off[axis], off[other] = a, o
            c = nbh.at(off)
            if c is not None and c < best_cost:
                best, best_cost = a, c
        if best is None:
            return None
        off = [0, 0]
        off[axis], off[other] = best, o
        t = _axis_triplet(nbh, off, axis)
        if t is None:
            return None
        if not t[0] + t[2] > 2.0 * t[1]:
            return None
        dx, st = fn(*t, clamp=False)
        if st == Status.DEGENERATE_FALLBACK:
            return None
        points.append((o, best + float(dx)))
    return np.array(points)


def anisotropic_refine_2d(nbh, method="parabola"):
    """Intersect the lines fitted to the per-row and per-column corrections.

    For each dimension, the 1D correction is computed on the three lines at
    offsets -1, 0, 1 of the other dimension and a line is fitted through the
    three (offset, correction) points by least squares. Falls back to
    `separable_refine` when a line cannot be built, the lines are nearly
    parallel, or they meet outside [-1, 1]^2.
    """
    fn = _method(method)
    if nbh.ndim != 2 or nbh.radius < 2:
        raise ArgumentError("anisotropic refinement needs a 2D radius-2 neighbourhood")
    lines = []
    for axis in (0, 1):
        pts = _line_corrections(nbh, fn, axis)
        if pts is None:
            return _fallback(nbh, method, Status.DEGENERATE_FALLBACK)
        slope, intercept = np.polyfit(pts[:, 0], pts[:, 1], 1)
        lines.append((slope, intercept))
    # x0 = m0 * x1 + c0 and x1 = m1 * x0 + c1
    (m0, c0), (m1, c1) = lines
    det = 1.0 - m0 * m1
    if abs(det) / (1.0 + abs(m0 * m1)) < 1e-9:
        return _fallback(nbh, method, Status.DEGENERATE_FALLBACK)
    x0 = (m0 * c1 + c0) / det
    x1 = m1 * x0 + c1
    delta = np.array([x0, x1])
    if np.any(np.abs(delta) > 1.0):
        return _fallback(nbh, method, Status.DEGENERATE_FALLBACK)
    return RefinementResult(delta, Status.OK)


def _fallback(nbh, method, status):
    res = separable_refine(nbh, method)
    return RefinementResult(res.delta, status)


_QUAD_DESIGN = np.array([[x * x, y * y, x * y, x, y, 1.0]
                         for x in (-1, 0, 1) for y in (-1, 0, 1)])


def paraboloid_refine_2d(nbh):
    """Stationary point of the least-squares quadratic through the 3x3
    neighbourhood, if that quadratic is convex."""
    if nbh.ndim != 2:
        raise ArgumentError("paraboloid refinement is 2D only")
    r = nbh.radius
    block = nbh.values[r - 1:r + 2, r - 1:r + 2]
    if not nbh.valid[r - 1:r + 2, r - 1:r + 2].all():
        return _fallback(nbh, "parabola", Status.DEGENERATE_FALLBACK)
    coef, *_ = np.linalg.lstsq(_QUAD_DESIGN, block.ravel(), rcond=None)
    a, b, c, d, e, _ = coef
    hess = np.array([[2 * a, c], [c, 2 * b]])
    if a <= 0 or np.linalg.det(hess) <= EPS * max(1.0, abs(a * b)):
        return _fallback(nbh, "parabola", Status.DEGENERATE_FALLBACK)
    delta = np.linalg.solve(hess, -np.array([d, e]))
    if np.any(np.abs(delta) > 1.0):
        return RefinementResult(np.clip(delta, -1.0, 1.0), Status.CLAMPED)
    return RefinementResult(delta, Status.OK)


# barycentric feature-space refiners ---------------------------------------

@dataclass
class TargetSet:
    """Target feature vectors and their integer disparity coordinates.

    Attributes
    ----------
    vectors : numpy.ndarray, shape (m, K)
        One target feature vector per row; the last row is the base vector.
    D : numpy.ndarray, shape (n, m)
        Disparity of each vector, one column per vector.
    """

    vectors: np.ndarray
    D: np.ndarray
    _qr: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        self.D = np.atleast_2d(np.asarray(self.D, dtype=np.float64))
        m = self.vectors.shape[0]
        if m < 2:
            raise ArgumentError("a target set needs at least two vectors")
        if self.D.shape[1] != m:
            raise ArgumentError(f"D has {self.D.shape[1]} columns for {m} vectors")
        if len({tuple(c) for c in self.D.T}) != m:
            raise ArgumentError("disparity coordinates must be pairwise distinct")

    @property
    def base(self):
        return self.vectors[-1]

    @property
    def M(self):
        return (self.vectors[:-1] - self.vectors[-1]).T

    def beta(self, alpha):
        alpha = np.asarray(alpha, dtype=np.float64)
        return np.append(alpha, 1.0 - alpha.sum())

    def interpolate(self, beta):
        return np.asarray(beta) @ self.vectors

    def qr(self):
        """Reduced QR of ``M`` after a relative rank check."""
        if self._qr is None:
            q, r = np.linalg.qr(self.M)
            diag = np.abs(np.diag(r))
            if diag.size == 0 or diag.max() < EPS or diag.min() < RANK_TOL * diag.max():
                raise DegenerateError("target difference vectors are linearly dependent")
            self._qr = (q, r)
        return self._qr


@dataclass(frozen=True)
class BarycentricSolution:
    alpha: np.ndarray
    beta: np.ndarray
    d_hat: np.ndarray
    status: Status = Status.OK
    iterations: int = 0


def _solution(ts, alpha, status=Status.OK, iterations=0):
    beta = ts.beta(alpha)
    return BarycentricSolution(np.asarray(alpha), beta, ts.D @ beta, status, iterations)


def _lstsq(ts, rhs):
    q, r = ts.qr()
    return solve_triangular(r, q.T @ rhs)


def ssd_barycentric_refine(fs, ts):
    """Affine weights minimizing ``||fs - A @ beta||^2``."""
    fs = np.asarray(fs, dtype=np.float64)
    return _solution(ts, _lstsq(ts, fs - ts.base))


def ncc_barycentric_refine(fs, ts):
    """Affine weights maximizing the normalized correlation with ``fs``.

    The optimal interpolated vector is the point of the affine span of the
    targets that is co-linear with the projection of ``fs`` onto the span of
    the targets. With ``q`` spanning the directions of ``M``,
    ``ft_perp = f_n - q q^T f_n`` is the point of the affine span closest to
    the origin, and that point is rescaled along ``fs_perp``.
    """
    fs = np.asarray(fs, dtype=np.float64)
    q, _ = ts.qr()
    f_n = ts.base
    ft_perp = f_n - q @ (q.T @ f_n)
    tt = ft_perp @ ft_perp
    if tt <= (RANK_TOL * max(np.linalg.norm(f_n), EPS)) ** 2:
        raise DegenerateError("affine span of the targets passes through the origin")
    ts_dot = ft_perp @ fs
    if ts_dot <= EPS * np.sqrt(tt) * np.linalg.norm(fs):
        raise DegenerateError("source is not positively correlated with the affine span")
    # projection of fs onto span(A) = span(M) + span(ft_perp), orthogonal parts
    fs_perp = q @ (q.T @ fs) + (ts_dot / tt) * ft_perp
    fs_hat = (tt / ts_dot) * fs_perp
    return _solution(ts, _lstsq(ts, fs_hat - f_n))


def _nullspace_projector(rows, k):
    if len(rows) == 0:
        return np.eye(k)
    z = np.atleast_2d(rows)
    # orthonormal basis of the row space via QR of Z^T
    q, r = np.linalg.qr(z.T)
    keep = np.abs(np.diag(r)) > RANK_TOL * max(np.abs(np.diag(r)).max(), EPS)
    q = q[:, keep]
    return np.eye(k) - q @ q.T


def _independent(M, rows, k):
    if len(rows) > k:
        return False
    if not rows:
        return True
    s = np.linalg.svd(M[rows], compute_uv=False)
    return s.min() > RANK_TOL * max(s.max(), EPS)


def sad_barycentric_refine(fs, ts, max_iter=64, trace=None):
    """Affine weights minimizing ``||fs - A @ beta||_1``.

    Exact descent along the edges of the piecewise-linear cost, starting
    from the SSD solution. Each step moves along the gradient projected off
    the currently active hyperplanes (channels with zero residual) and lands
    on the line minimum found with a weighted median; the hyperplane hit
    there becomes active. Once the active set pins the direction, the
    hyperplane whose release gives the steepest descent is dropped. The
    loop stops when no descent direction is left.

    If ``trace`` is a list, the cost of the start point and of every
    accepted iterate is appended to it.
    """
    fs = np.asarray(fs, dtype=np.float64)
    M = ts.M
    K, k = M.shape
    if max_iter < k + 1:
        raise ArgumentError(f"max_iter must be at least {k + 1}")
    ts.qr()
    r = fs - ts.base
    tight_tol = 1e-9 * (1.0 + np.abs(fs).max())
    dd_tol = 1e-10 * (1.0 + np.abs(M).sum(axis=0).max())

    alpha = _lstsq(ts, r)
    cost = np.abs(r - M @ alpha).sum()
    if trace is not None:
        trace.append(float(cost))
    active = []
    iterations = 0
    status = Status.OK

    def dirderiv(res, tight, d):
        a = M @ d
        return np.sum(-np.sign(res[~tight]) * a[~tight]) + np.sum(np.abs(a[tight]))

    while True:
        res = r - M @ alpha
        if cost <= tight_tol:
            break
        tight = np.abs(res) < tight_tol
        active = [c for c in active if tight[c]]
        g = -M[~tight].T @ np.sign(res[~tight])
        direction = None

        if len(active) < k:
            d = -_nullspace_projector(M[active], k) @ g
            nd = np.linalg.norm(d)
            if nd > EPS and dirderiv(res, tight, d) < -dd_tol * nd:
                direction = d

        if direction is None and active:
            best = (-dd_tol, None, None)
            for j in sorted(active):
                rest = [c for c in active if c != j]
                proj = _nullspace_projector(M[rest], k)
                for s in (1.0, -1.0):
                    d = -proj @ (g - s * M[j])
                    nd = np.linalg.norm(d)
                    if nd <= EPS or s * (-(M[j] @ d)) <= 0:
                        continue
                    slope = dirderiv(res, tight, d) / nd
                    if slope < best[0]:
                        best = (slope, j, d)
            if best[1] is not None:
                active.remove(best[1])
                direction = best[2]

        if direction is None:
            v = _min_norm_subgradient(M, res, tight, g)
            if np.linalg.norm(v) <= dd_tol:
                break
            direction = -v
            a = M @ direction
            scale = np.abs(a).max()
            active = []
            for c in np.flatnonzero(tight):
                if abs(a[c]) <= 1e-12 * scale and _independent(M, active + [int(c)], k - 1):
                    active.append(int(c))

        if iterations >= max_iter:
            status = Status.NOT_CONVERGED
            break

        a = M @ direction
        use = np.abs(a) > 1e-14 * np.abs(a).max()
        t_c = np.where(use, res / np.where(use, a, 1.0), np.inf)
        t = weighted_median_lower(t_c, np.where(use, np.abs(a), 0.0))
        if not np.isfinite(t) or t <= 0:
            status = Status.NOT_CONVERGED
            break
        new_alpha = alpha + t * direction
        new_cost = np.abs(r - M @ new_alpha).sum()
        iterations += 1
        if not new_cost < cost:
            # rounding ate the decrease: the current point is as good as it gets
            if new_cost > cost + tight_tol:
                status = Status.NOT_CONVERGED
            break
        alpha, cost = new_alpha, new_cost
        if trace is not None:
            trace.append(float(cost))
        hit = np.flatnonzero(use & (np.abs(t_c - t) <= 1e-12 * max(1.0, abs(t))))
        for c in hit:
            if c not in active and len(active) < k and _independent(M, active + [int(c)], k):
                active.append(int(c))

    return _solution(ts, alpha, status, iterations)


def _min_norm_subgradient(M, res, tight, g):
    """Smallest-norm element of the subdifferential of the L1 cost."""
    if not tight.any():
        return g
    zt = M[tight].T
    sol = lsq_linear(zt, g, bounds=(-1.0, 1.0), method="bvls")
    return g - zt @ sol.x


def sad_directional_derivative(fs, ts, alpha, direction, tol=None):
    """One-sided derivative of the L1 cost at ``alpha`` along ``direction``.

    Channels whose residual is below ``tol`` (default
    ``1e-9 * (1 + max|fs|)``) count as exactly zero and contribute
    ``|M d|`` per channel.
    """
    fs = np.asarray(fs, dtype=np.float64)
    res = fs - ts.base - ts.M @ np.asarray(alpha, dtype=np.float64)
    a = ts.M @ np.asarray(direction, dtype=np.float64)
    tol = 1e-9 * (1.0 + np.abs(fs).max()) if tol is None else tol
    tight = np.abs(res) < tol
    return float(np.sum(-np.sign(res[~tight]) * a[~tight]) + np.sum(np.abs(a[tight])))


def sad_cost_alpha(fs, ts, alpha):
    """L1 cost at affine coordinates ``alpha``."""
    return float(np.abs(fs - ts.base - ts.M @ np.asarray(alpha)).sum())


_BARYCENTRIC = {"ncc": ncc_barycentric_refine, "ssd": ssd_barycentric_refine,
                "sad": sad_barycentric_refine}


def barycentric_refine(fs, ts, kind):
    """Dispatch to the barycentric solver of ``kind``'s cost family."""
    return _BARYCENTRIC[as_cost_kind(kind).family](fs, ts)


# target sets around a discrete optimum --------------------------------------

def corner_sets(d_round, contiguity="rook", strategy="split"):
    """Disparity coordinates of the target sets around ``d_round``.

    Returns a list of integer matrices of shape ``(n, m)``, one column per
    target, with ``d_round`` itself as the last (base) column.

    * split + rook: one simplex per orthant, ``{d + s_i e_i} + {d}``
    * split + queen: one orthant cell per orthant, all its corners
    * symmetric: a single set with the rook (2n) or queen (3^n - 1)
      neighbours and ``d``.
    """
    d = np.asarray(d_round, dtype=int).ravel()
    n = d.size
    eye = np.eye(n, dtype=int)
    if contiguity not in ("rook", "queen"):
        raise ArgumentError(f"unknown contiguity {contiguity!r}")
    if strategy == "split":
        sets = []
        for signs in itertools.product((-1, 1), repeat=n):
            signs = np.array(signs)
            if contiguity == "rook":
                offs = [s * e for s, e in zip(signs, eye)]
            else:
                offs = [signs * np.array(mask)
                        for mask in itertools.product((0, 1), repeat=n) if any(mask)]
                offs.sort(key=lambda o: (np.count_nonzero(o), [-abs(x) for x in o]))
            sets.append(np.stack(offs + [np.zeros(n, dtype=int)], axis=1) + d[:, None])
        return sets
    if strategy == "symmetric":
        if contiguity == "rook":
            offs = [s * e for e in eye for s in (-1, 1)]
        else:
            offs = [np.array(o) for o in itertools.product((-1, 0, 1), repeat=n) if any(o)]
        return [np.stack(offs + [np.zeros(n, dtype=int)], axis=1) + d[:, None]]
    raise ArgumentError(f"unknown strategy {strategy!r}")


def project_simplex(beta):
    """Euclidean projection onto the probability simplex."""
    beta = np.asarray(beta, dtype=np.float64)
    u = np.sort(beta)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, beta.size + 1)
    rho = np.flatnonzero(u - css / idx > 0)[-1]
    return np.maximum(beta - css[rho] / (rho + 1), 0.0)


def multilinear_weights(D, d_round, delta):
    """Weights reproducing ``d_round + delta`` by multilinear interpolation
    over the cell corners listed in ``D`` (one orthant cell)."""
    offs = D - np.asarray(d_round)[:, None]
    u = np.abs(np.asarray(delta, dtype=np.float64))
    w = np.ones(D.shape[1])
    for i in range(D.shape[0]):
        w *= np.where(offs[i] != 0, u[i], 1.0 - u[i])
    return w


def _gather(Ft, p, D):
    """Target vectors ``Ft[p + d]`` for every column of ``D``, or None if one
    falls outside the volume."""
    data = Ft.data if hasattr(Ft, "data") else Ft
    valid = Ft.valid if hasattr(Ft, "valid") else None
    spatial = data.shape[:-1]
    p = np.asarray(p, dtype=int)
    vecs = []
    for col in D.T:
        if col.size == 1:
            q = p + np.array([0, col[0]])
        else:
            q = p + col
        if np.any(q < 0) or np.any(q >= spatial):
            return None
        q = tuple(int(x) for x in q)
        if valid is not None and not valid[q]:
            return None
        vecs.append(data[q])
    return np.asarray(vecs, dtype=np.float64)


def feature_refine_nd(fs, Ft, p, d_round, kind, contiguity="queen", strategy="split"):
    """Feature-space refinement of one pixel around its discrete disparity.

    Parameters
    ----------
    fs : array_like, shape (K,)
        Source feature vector (interpolation-ready, i.e. not normalized when
        interpolating before whitening).
    Ft : FeatureVolume or numpy.ndarray, shape (rows, cols, K)
        Target features in the same whitening as ``fs``.
    p : pixel (row, col)
    d_round : integer disparity, length 1 (columns) or 2 (row, col)
    kind : CostKind or str

    Returns
    -------
    RefinementResult
        ``delta`` is the correction to add to ``d_round``, within the unit
        neighbourhood.
    """
    kind = as_cost_kind(kind)
    fam = kind.family
    fs = np.asarray(fs, dtype=np.float64)
    d_round = np.asarray(d_round, dtype=int).ravel()
    n = d_round.size
    sets = corner_sets(d_round, contiguity, strategy)
    best = None
    missing = False
    for D in sets:
        vecs = _gather(Ft, p, D)
        if vecs is None:
            # split sets are independent; only the unavailable ones are skipped
            missing = True
            if strategy == "split":
                continue
            return RefinementResult(np.zeros(n), Status.CLAMPED)
        ts = TargetSet(vecs, D)
        try:
            sol = barycentric_refine(fs, ts, kind)
        except DegenerateError:
            continue
        beta, status = sol.beta, sol.status
        if strategy == "split":
            beta, clamped = _admissible(D, d_round, beta, contiguity)
            if clamped and status == Status.OK:
                status = Status.CLAMPED
        delta = D @ beta - d_round
        if strategy == "symmetric" and np.any(np.abs(delta) > 1.0):
            delta = np.clip(delta, -1.0, 1.0)
            status = Status.CLAMPED if status == Status.OK else status
        c = float(vector_cost(fs, beta @ vecs, fam))
        if best is None or c < best.cost:
            best = RefinementResult(delta, Status(int(status)), sol.iterations, c)
    if best is None:
        return RefinementResult(np.zeros(n), Status.CLAMPED if missing else
                                Status.DEGENERATE_FALLBACK)
    return best


def _admissible(D, d_round, beta, contiguity, tol=1e-6):
    if contiguity == "rook":
        if np.all(beta >= -tol):
            return beta, False
        return project_simplex(beta), True
    delta = D @ beta - d_round
    signs = np.sign((D - d_round[:, None]).sum(axis=1))
    u = signs * delta
    if np.all((u >= -tol) & (u <= 1 + tol)):
        return beta, False
    u = np.clip(u, 0.0, 1.0)
    return multilinear_weights(D, d_round, signs * u), True
