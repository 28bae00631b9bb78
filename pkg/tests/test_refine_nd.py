import itertools

import numpy as np
import pytest
from helpers import target_set_instance
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy.optimize import linprog

from subpix.errors import ArgumentError, DegenerateError
from subpix.features import build_feature_volume
from subpix.refine1d import (Status, ncc_feature_refine_1d, sad_feature_refine_1d,
                             ssd_feature_refine_1d, vector_cost)
from subpix.refine_nd import (CostNeighborhood, TargetSet, anisotropic_refine_2d, corner_sets,
                              feature_refine_nd, ncc_barycentric_refine, paraboloid_refine_2d,
                              project_simplex, sad_barycentric_refine, sad_cost_alpha,
                              sad_directional_derivative, separable_refine,
                              ssd_barycentric_refine)
from subpix.synth import grid_oracle_nd, make_shifted_pair, make_texture
from subpix.tensor import make_square_window


def sampled(fn, radius=2):
    r = np.arange(-radius, radius + 1)
    x, y = np.meshgrid(r, r, indexing="ij")
    return CostNeighborhood(fn(x.astype(float), y.astype(float)))


def bowl(x, y):
    return x * x + y * y


# cost-volume refiners -------------------------------------------------------

def test_separable_bowl():
    np.testing.assert_allclose(separable_refine(sampled(bowl)).delta, 0.0)


def test_separable_componentwise():
    f = {-1: 3.0, 0: 1.0, 1: 2.0}  # parabola vertex 1/6
    g = {-1: 1.0, 0: 0.0, 1: 3.0}  # parabola vertex -1/4
    vals = np.array([[f[i] + g[j] for j in (-1, 0, 1)] for i in (-1, 0, 1)])
    res = separable_refine(CostNeighborhood(vals))
    np.testing.assert_allclose(res.delta, [1 / 6, -0.25], atol=1e-15)


def test_separable_flat_axis():
    vals = np.array([[2.0, 1.0, 2.0]] * 3)
    res = separable_refine(CostNeighborhood(vals))
    assert res.delta[0] == 0.0 and res.status == Status.DEGENERATE_FALLBACK


def test_separable_missing_neighbour():
    vals = np.array([[np.inf, 1.0, 2.0], [1.0, 0.0, 2.0], [2.0, 1.0, 3.0]])
    vals[0, 1] = np.inf
    res = separable_refine(CostNeighborhood(vals))
    assert res.delta[0] == 0.0 and res.status == Status.CLAMPED


def test_anisotropic_bowl():
    res = anisotropic_refine_2d(sampled(bowl))
    np.testing.assert_allclose(res.delta, 0.0, atol=1e-12)
    np.testing.assert_allclose(res.delta, separable_refine(sampled(bowl)).delta, atol=1e-12)


def test_anisotropic_sheared_quadratic():
    def q(x, y):
        return (x - 0.2) ** 2 + 0.8 * (x - 0.2) * (y + 0.3) + (y + 0.3) ** 2
    res = anisotropic_refine_2d(sampled(q))
    np.testing.assert_allclose(res.delta, [0.2, -0.3], atol=1e-6)
    assert res.status == Status.OK


def test_anisotropic_parallel_lines_fall_back():
    nbh = sampled(lambda x, y: (x - y) ** 2)
    res = anisotropic_refine_2d(nbh)
    assert res.status == Status.DEGENERATE_FALLBACK
    np.testing.assert_allclose(res.delta, separable_refine(nbh).delta)


def test_anisotropic_needs_radius_two():
    with pytest.raises(ArgumentError):
        anisotropic_refine_2d(sampled(bowl, 1))


def test_paraboloid_examples():
    def q(x, y):
        return 1.3 * (x - 0.2) ** 2 - 0.5 * (x - 0.2) * (y + 0.3) + 0.9 * (y + 0.3) ** 2 + 4
    np.testing.assert_allclose(paraboloid_refine_2d(sampled(q, 1)).delta, [0.2, -0.3], atol=1e-9)
    np.testing.assert_allclose(paraboloid_refine_2d(sampled(bowl, 1)).delta, 0.0, atol=1e-12)
    saddle = paraboloid_refine_2d(sampled(lambda x, y: x * x - y * y, 1))
    assert saddle.status == Status.DEGENERATE_FALLBACK


@given(st.floats(0.2, 3), st.floats(0.2, 3), st.floats(-0.99, 0.99),
       st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_quadratic_exactness(a, b, rho, x0, y0):
    c = 2 * rho * np.sqrt(a * b)  # |rho| < 1 keeps the form positive definite

    def q(x, y):
        return a * (x - x0) ** 2 + b * (y - y0) ** 2 + c * (x - x0) * (y - y0)
    nbh = sampled(q)
    np.testing.assert_allclose(paraboloid_refine_2d(nbh).delta, [x0, y0], atol=1e-6)
    res = anisotropic_refine_2d(nbh)
    assert res.status == Status.OK
    np.testing.assert_allclose(res.delta, [x0, y0], atol=1e-6)


# target sets ----------------------------------------------------------------

def test_corner_set_counts():
    d = np.array([3, -1])
    rook = corner_sets(d, "rook", "split")
    assert len(rook) == 4 and all(D.shape == (2, 3) for D in rook)
    queen = corner_sets(d, "queen", "split")
    assert len(queen) == 4 and all(D.shape == (2, 4) for D in queen)
    sym = corner_sets(d, "queen", "symmetric")
    assert len(sym) == 1 and sym[0].shape == (2, 9)
    one = corner_sets(np.array([5]), "rook", "symmetric")
    assert sorted(one[0][0].tolist()) == [4, 5, 6]
    for D in rook + queen + sym:
        assert D[:, -1].tolist() == d.tolist()


def test_target_set_validation():
    with pytest.raises(ArgumentError):
        TargetSet([[1, 2]], [[0]])
    with pytest.raises(ArgumentError):
        TargetSet([[1, 2], [3, 4]], [[0, 0]])
    with pytest.raises(DegenerateError):
        ssd_barycentric_refine([1, 2], TargetSet([[1, 2], [2, 4], [3, 6]], [[1, 0, 0], [0, 1, 0]]))


# barycentric solvers ------------------------------------------------------

def _pair(rng, k=12):
    lo, hi = rng.random((2, k)) + 0.2
    fs = 0.7 * lo + 0.3 * hi + 0.05 * rng.normal(size=k)
    return fs, lo, hi


@pytest.mark.parametrize("nd,one", [(ncc_barycentric_refine, ncc_feature_refine_1d),
                                    (ssd_barycentric_refine, ssd_feature_refine_1d),
                                    (sad_barycentric_refine, sad_feature_refine_1d)])
def test_two_targets_reduce_to_1d(nd, one):
    rng = np.random.default_rng(0)
    for _ in range(50):
        fs, lo, hi = _pair(rng)
        # base (last) vector is lo: d = alpha * 1
        sol = nd(fs, TargetSet([hi, lo], [[1, 0]]))
        ref = one((fs, lo, hi), clamp=False)
        assert sol.d_hat[0] == pytest.approx(ref.delta, abs=1e-9)


@pytest.mark.parametrize("solver", [ncc_barycentric_refine, ssd_barycentric_refine,
                                    sad_barycentric_refine])
def test_exact_member(solver):
    rng = np.random.default_rng(1)
    V = rng.random((3, 10)) + 0.1
    ts = TargetSet(V, [[1, 0, 0], [0, 1, 0]])
    for i in range(3):
        sol = solver(V[i], ts)
        np.testing.assert_allclose(sol.beta, np.eye(3)[i], atol=1e-9)
        np.testing.assert_allclose(sol.d_hat, ts.D[:, i], atol=1e-9)
        if solver is sad_barycentric_refine:
            assert sol.iterations <= 1


def test_ssd_centroid():
    V = np.random.default_rng(2).random((3, 7))
    sol = ssd_barycentric_refine(V.mean(axis=0), TargetSet(V, [[1, 0, 0], [0, 1, 0]]))
    np.testing.assert_allclose(sol.beta, [1 / 3] * 3, atol=1e-12)


def test_ncc_degenerate_cases():
    V = np.array([[1.0, 0.0], [-1.0, 0.0]])
    with pytest.raises(DegenerateError):  # span passes through the origin
        ncc_barycentric_refine([0.0, 1.0], TargetSet(V, [[1, 0]]))
    V = np.array([[1.0, 1.0], [1.0, -1.0]])
    with pytest.raises(DegenerateError):  # anti-correlated source
        ncc_barycentric_refine([-1.0, 0.0], TargetSet(V, [[1, 0]]))


def test_ncc_beats_grid():
    rng = np.random.default_rng(3)
    for _ in range(20):
        V = rng.random((3, 16)) + 0.1
        fs = rng.dirichlet(np.ones(3)) @ V + 0.1 * rng.normal(size=16)
        ts = TargetSet(V, [[1, 0, 0], [0, 1, 0]])
        sol = ncc_barycentric_refine(fs, ts)
        beta, _ = grid_oracle_nd(fs, ts, "ncc")
        best = -vector_cost(fs, sol.beta @ V, "ncc")
        assert best >= -vector_cost(fs, beta @ V, "ncc") - 1e-6


def test_ssd_queen_grid():
    rng = np.random.default_rng(4)
    for _ in range(10):
        V = rng.random((4, 25))
        fs = rng.dirichlet(np.ones(4)) @ V + 0.05 * rng.normal(size=25)
        ts = TargetSet(V, [[1, 0, 1, 0], [0, 1, 1, 0]])
        _, d = grid_oracle_nd(fs, ts, "ssd")
        assert np.abs(ssd_barycentric_refine(fs, ts).d_hat - d).max() < 2e-3


def test_sad_grid_and_derivatives():
    rng = np.random.default_rng(5)
    for _ in range(10):
        fs, ts = target_set_instance(rng, 4)
        fs, V = fs[:9], ts.vectors[:, :9]
        ts = TargetSet(V, ts.D)
        sol = sad_barycentric_refine(fs, ts)
        beta, _ = grid_oracle_nd(fs, ts, "sad")
        assert sad_cost_alpha(fs, ts, sol.alpha) <= sad_cost_alpha(fs, ts, beta[:-1]) + 1e-6
        for e in np.vstack([np.eye(3), -np.eye(3)]):
            assert sad_directional_derivative(fs, ts, sol.alpha, e) >= -1e-9


def test_sad_matches_linear_program():
    rng = np.random.default_rng(6)
    for _ in range(100):
        fs, ts = target_set_instance(rng, int(rng.integers(3, 5)))
        M, r = ts.M, fs - ts.base
        K, k = M.shape
        # min sum(t) s.t. -t <= r - M a <= t
        c = np.concatenate([np.zeros(k), np.ones(K)])
        A = np.block([[-M, -np.eye(K)], [M, -np.eye(K)]])
        lp = linprog(c, A_ub=A, b_ub=np.concatenate([-r, r]), bounds=[(None, None)] * k
                     + [(0, None)] * K, method="highs")
        trace = []
        sol = sad_barycentric_refine(fs, ts, trace=trace)
        assert sol.status == Status.OK
        assert sad_cost_alpha(fs, ts, sol.alpha) <= lp.fun + 1e-8
        assert all(b < a for a, b in zip(trace, trace[1:]))


def test_sad_max_iter_reports_not_converged():
    rng = np.random.default_rng(7)
    fs, ts = target_set_instance(rng, 4, noise=0.5)
    with pytest.raises(ArgumentError):
        sad_barycentric_refine(fs, ts, max_iter=2)
    sol = sad_barycentric_refine(fs, ts, max_iter=4)
    assert sol.status in (Status.OK, Status.NOT_CONVERGED)


@given(st.integers(0, 10_000), st.sampled_from(["ncc", "ssd", "sad"]), st.sampled_from([3, 4]))
def test_affine_invariants(seed, fam, m):
    from subpix.refine_nd import barycentric_refine
    fs, ts = target_set_instance(np.random.default_rng(seed), m)
    try:
        sol = barycentric_refine(fs, ts, fam)
    except DegenerateError:
        assume(False)
    assert abs(sol.beta.sum() - 1) < 1e-9
    np.testing.assert_allclose(sol.d_hat, ts.D @ sol.beta, atol=1e-9)


@given(st.integers(0, 10_000), st.floats(1e-2, 1e2))
def test_ncc_scale_invariance(seed, a):
    fs, ts = target_set_instance(np.random.default_rng(seed), 4)
    try:
        s1 = ncc_barycentric_refine(fs, ts)
    except DegenerateError:
        assume(False)
    s2 = ncc_barycentric_refine(a * fs, ts)
    np.testing.assert_allclose(s1.alpha, s2.alpha, atol=1e-9)


@given(st.integers(0, 10_000))
def test_ssd_residual_orthogonality(seed):
    fs, ts = target_set_instance(np.random.default_rng(seed), 4)
    sol = ssd_barycentric_refine(fs, ts)
    resid = fs - ts.base - ts.M @ sol.alpha
    assert np.abs(ts.M.T @ resid).max() <= 1e-6 * np.linalg.norm(fs)


def test_project_simplex():
    np.testing.assert_allclose(project_simplex([0.2, 0.3, 0.5]), [0.2, 0.3, 0.5])
    np.testing.assert_allclose(project_simplex([1.5, 0.0, -0.5]), [1.0, 0.0, 0.0])


# per-pixel refinement -----------------------------------------------------

def _volumes(src, tgt, side=5):
    w = make_square_window(side)
    return (build_feature_volume(src, w, dtype=np.float64).data,
            build_feature_volume(tgt, w, dtype=np.float64))


def test_integer_shift_gives_zero():
    img = make_texture((20, 20), seed=1)
    fs, Ft = _volumes(img, img)
    for contiguity, strategy in itertools.product(("rook", "queen"), ("split", "symmetric")):
        res = feature_refine_nd(fs[9, 9], Ft, (9, 9), [0, 0], "ssd", contiguity, strategy)
        np.testing.assert_allclose(res.delta, 0.0, atol=1e-9)


def test_queen_split_recovers_bilinear_shift():
    pair = make_shifted_pair(make_texture((40, 40), seed=2), (0.3, -0.2))
    fs, Ft = _volumes(pair.source, pair.target)
    errs = []
    for p in itertools.product(range(6, 30, 4), repeat=2):
        res = feature_refine_nd(fs[p], Ft, p, [0, 0], "ssd", "queen")
        errs.append(np.abs(res.delta - [0.3, -0.2]).max())
    assert max(errs) < 0.02


def test_queen_split_cost_not_above_separable():
    from subpix.cost import SearchRange, build_cost_volume, discrete_best_field
    pair = make_shifted_pair(make_texture((30, 30), seed=3), (0.35, 0.15), noise_sigma=0.01,
                             rng=np.random.default_rng(0))
    fs, Ft = _volumes(pair.source, pair.target)
    w = make_square_window(5)
    cv = build_cost_volume(build_feature_volume(pair.source, w), build_feature_volume(pair.target, w),
                           SearchRange(((-2, 2),) * 2), "ncc")
    d_round, _, _ = discrete_best_field(cv)
    costs = cv.costs()
    worse = 0
    for p in itertools.product(range(5, 22, 3), repeat=2):
        d = d_round[p]
        q = feature_refine_nd(fs[p], Ft, p, d, "ncc", "queen")
        sep = separable_refine(CostNeighborhood.from_costs(costs[p], d + 2, 1))
        target = d + sep.delta
        # bilinear interpolation of the target features at the separable estimate
        y, x = np.array(p) + target
        y0, x0 = int(np.floor(y)), int(np.floor(x))
        fy, fx = y - y0, x - x0
        ft = ((1 - fy) * (1 - fx) * Ft.data[y0, x0] + (1 - fy) * fx * Ft.data[y0, x0 + 1]
              + fy * (1 - fx) * Ft.data[y0 + 1, x0] + fy * fx * Ft.data[y0 + 1, x0 + 1])
        worse += q.cost > vector_cost(fs[p], ft, "ncc") + 1e-9
    assert worse == 0


def test_missing_neighbours():
    img = make_texture((12, 12), seed=4)
    fs, Ft = _volumes(img, img)
    # at the corner only the (+, +) cell of the split strategy is available
    res = feature_refine_nd(fs[0, 0], Ft, (0, 0), [0, 0], "ssd", "queen")
    assert res.status == Status.OK
    np.testing.assert_allclose(res.delta, 0.0, atol=1e-9)
    res = feature_refine_nd(fs[0, 0], Ft, (0, 0), [0, 0], "ssd", "queen", "symmetric")
    assert res.status == Status.CLAMPED and np.all(res.delta == 0)
    res = feature_refine_nd(fs[0, 0], Ft, (0, 0), [-1, -1], "ssd", "queen")
    assert res.status == Status.CLAMPED and np.all(res.delta == 0)


def test_all_sets_degenerate():
    img = np.full((9, 9), 0.5)
    fs, Ft = _volumes(img, img, 3)
    res = feature_refine_nd(fs[4, 4], Ft, (4, 4), [0, 0], "ssd", "rook")
    assert res.status == Status.DEGENERATE_FALLBACK and np.all(res.delta == 0)


def test_anisotropic_strong_shear():
    # the per-row minima lie well beyond +-1.5 on the outer rows
    def q(x, y):
        return 0.2 * (x - 0.1) ** 2 + 3.0 * (y + 0.4) ** 2 + 1.5 * (x - 0.1) * (y + 0.4)
    res = anisotropic_refine_2d(sampled(q))
    assert res.status == Status.OK
    np.testing.assert_allclose(res.delta, [0.1, -0.4], atol=1e-9)
