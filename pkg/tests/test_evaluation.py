import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from subpix.errors import ArgumentError, UndefinedResultError
from subpix.evaluation import (N_BINS, bin_index, evaluate, fractional_part, inlier_mask, mae, md,
                               rmse, snr_pixel_locking)


def field(rng, shape=(20, 30), lo=-5, hi=5):
    gt = rng.uniform(lo, hi, shape)
    return gt, np.rint(gt)


def test_inliers_rounded_truth():
    gt, d_round = field(np.random.default_rng(0))
    assert inlier_mask(d_round, gt).all()


def test_inliers_invalid_truth_excluded():
    gt, d_round = field(np.random.default_rng(1))
    gt[3, 4] = np.inf
    gt[5, 6] = np.nan
    m = inlier_mask(d_round, gt)
    assert not m[3, 4] and not m[5, 6] and m.sum() == gt.size - 2


def test_inliers_known_outliers():
    gt, d_round = field(np.random.default_rng(2))
    for p, off in [((0, 0), 3), ((1, 7), -2), ((9, 9), 1)]:
        d_round[p] = np.rint(gt[p]) + off if abs(np.rint(gt[p]) + off - gt[p]) >= 1 else d_round[p] + 2 * off
    out = ~inlier_mask(d_round, gt, 1.0)
    assert sorted(zip(*np.nonzero(out))) == [(0, 0), (1, 7), (9, 9)]


def test_shape_mismatch():
    with pytest.raises(ArgumentError):
        inlier_mask(np.zeros((3, 3)), np.zeros((3, 4)))


def test_mae_md_examples():
    gt = np.zeros((1, 2))
    mask = np.ones((1, 2), bool)
    assert mae(gt, gt, mask) == 0.0
    assert mae(np.array([[0.1, -0.3]]), gt, mask) == pytest.approx(0.2)
    assert md(np.array([[[0.3, 0.4]]]), np.zeros((1, 1, 2)), np.ones((1, 1), bool)) == pytest.approx(0.5)
    assert rmse(np.array([[0.1, -0.3]]), gt, mask) == pytest.approx(math.sqrt(0.05))


def test_empty_mask():
    with pytest.raises(UndefinedResultError):
        mae(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2), bool))
    with pytest.raises(UndefinedResultError):
        md(np.zeros((2, 2, 2)), np.zeros((2, 2, 2)), np.zeros((2, 2), bool))


def test_loop_oracles():
    rng = np.random.default_rng(3)
    gt = rng.uniform(-3, 3, (15, 17, 2))
    est = gt + 0.1 * rng.normal(size=gt.shape)
    mask = rng.random((15, 17)) < 0.7
    acc_md, acc_mae, n = 0.0, 0.0, 0
    for i in range(15):
        for j in range(17):
            if mask[i, j]:
                dy, dx = est[i, j] - gt[i, j]
                acc_md += math.sqrt(dy * dy + dx * dx)
                acc_mae += abs(dx)
                n += 1
    assert md(est, gt, mask) == pytest.approx(acc_md / n, abs=1e-9)
    assert mae(est[..., 1], gt[..., 1], mask) == pytest.approx(acc_mae / n, abs=1e-9)


@given(st.integers(0, 1000), st.floats(-3, 3))
def test_permutation_and_shift_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(-3, 3, (6, 7))
    est = gt + 0.2 * rng.normal(size=gt.shape)
    mask = np.ones(gt.shape, bool)
    perm = rng.permutation(gt.size)
    p_est = est.ravel()[perm].reshape(gt.shape)
    p_gt = gt.ravel()[perm].reshape(gt.shape)
    assert mae(p_est, p_gt, mask) == pytest.approx(mae(est, gt, mask), abs=1e-12)
    assert mae(est + shift, gt + shift, mask) == pytest.approx(mae(est, gt, mask), abs=1e-9)
    assert md(est + shift, gt + shift, mask) == pytest.approx(md(est, gt, mask), abs=1e-9)


def test_fractional_part_wraps():
    f = fractional_part(np.array([2.3, 2.5, 1.7, -0.5]), np.array([2, 2, 2, 0]))
    np.testing.assert_allclose(f, [0.3, -0.5, -0.3, -0.5])


def _locking(rng, n, amp=0.1, noise=1e-3, bias=0.0):
    gt = rng.uniform(-10, 10, n)
    d_round = np.rint(gt)
    frac = fractional_part(gt, d_round)
    err = amp * np.sin(2 * np.pi * frac) + noise * rng.normal(size=n) + bias
    return (gt + err)[None], d_round[None], gt[None], np.ones((1, n), bool)


def test_snr_constant_error():
    gt = np.random.default_rng(4).uniform(0, 5, (10, 10))
    snr, db, table = snr_pixel_locking(gt + 0.2, np.rint(gt), gt, np.ones(gt.shape, bool))
    assert snr == pytest.approx(0.0, abs=1e-20) and db == -math.inf


def test_snr_all_zero_residuals():
    gt = np.random.default_rng(5).uniform(0, 5, (10, 10))
    snr, db, _ = snr_pixel_locking(gt, np.rint(gt), gt, np.ones(gt.shape, bool))
    assert math.isnan(snr) and db == -math.inf


def test_snr_periodic_signal_dominates():
    rng = np.random.default_rng(6)
    snr, db, table = snr_pixel_locking(*_locking(rng, 4000))
    assert db > 20
    assert len(table) == N_BINS and sum(r["count"] for r in table) == 4000


def _loop_snr(d_hat, d_round, gt, mask):
    e, f = [], []
    for i in range(gt.shape[0]):
        for j in range(gt.shape[1]):
            if mask[i, j]:
                e.append(d_hat[i, j] - gt[i, j])
                fr = gt[i, j] - d_round[i, j]
                while fr >= 0.5:
                    fr -= 1
                while fr < -0.5:
                    fr += 1
                f.append(fr)
    mean = sum(e) / len(e)
    sums, counts = [0.0] * 40, [0] * 40
    bins = [min(39, int(math.floor((fr + 0.5) * 40))) for fr in f]
    for b, x in zip(bins, e):
        sums[b] += x
        counts[b] += 1
    eps = [sums[b] / counts[b] - mean for b in bins]
    num = sum(x * x for x in eps)
    den = sum((x - y) ** 2 for x, y in zip(e, eps))
    return num / den


def test_snr_loop_oracle():
    rng = np.random.default_rng(7)
    args = _locking(rng, 4000, amp=0.03, noise=0.02)
    snr, db, _ = snr_pixel_locking(*args)
    ref = _loop_snr(*args)
    assert snr == pytest.approx(ref, abs=1e-9)
    assert db == pytest.approx(10 * math.log10(ref), abs=1e-9)


def test_bin_table_matches_loop():
    rng = np.random.default_rng(8)
    d_hat, d_round, gt, mask = _locking(rng, 2000, amp=0.05, noise=0.01)
    _, _, table = snr_pixel_locking(d_hat, d_round, gt, mask)
    e = (d_hat - gt)[0]
    f = fractional_part(gt, d_round)[0]
    for row in table:
        sel = (f >= row["lo"] - 1e-12) & (f < row["hi"] - 1e-12)
        assert row["count"] == sel.sum()
        if sel.any():
            assert row["mean_error"] == pytest.approx(e[sel].mean(), abs=1e-12)


def test_empty_bins_marked():
    gt = np.full((1, 10), 3.25)
    d_hat = gt + np.linspace(-0.1, 0.1, 10)
    _, _, table = snr_pixel_locking(d_hat, np.rint(gt), gt, np.ones((1, 10), bool))
    assert sum(r["empty"] for r in table) == 39


@given(st.integers(0, 1000), st.floats(-1, 1))
def test_epsilon_bias_invariance(seed, bias):
    a = snr_pixel_locking(*_locking(np.random.default_rng(seed), 500, 0.05, 0.02))[2]
    b = snr_pixel_locking(*_locking(np.random.default_rng(seed), 500, 0.05, 0.02, bias))[2]
    for ra, rb in zip(a, b):
        assert ra["count"] == rb["count"]
        if not ra["empty"]:
            assert ra["epsilon"] == pytest.approx(rb["epsilon"], abs=1e-9)
            assert rb["mean_error"] - ra["mean_error"] == pytest.approx(bias, abs=1e-9)


def test_snr_signal_invariant_to_bias():
    # the residual keeps the global mean, so only the signal is bias free
    args = _locking(np.random.default_rng(10), 2000, 0.05, 0.02)
    biased = (args[0] + 0.3,) + args[1:]
    s0, _, t0 = snr_pixel_locking(*args)
    s1, _, t1 = snr_pixel_locking(*biased)
    sig = lambda t: sum(r["count"] * r["epsilon"] ** 2 for r in t if not r["empty"])
    assert sig(t0) == pytest.approx(sig(t1), rel=1e-9)
    assert s1 < s0


def test_evaluate_report():
    rng = np.random.default_rng(9)
    d_hat, d_round, gt, _ = _locking(rng, 1000)
    rep = evaluate(d_hat, d_round, gt)
    assert rep.n_inliers == 1000 and rep.mae > 0 and rep.snr_db > 0
    d = rep.to_dict()
    assert set(d) >= {"mae", "md", "snr_linear", "snr_db", "bin_table", "n_inliers"}
    flow = evaluate(np.zeros((4, 4, 2)), np.zeros((4, 4, 2)), np.zeros((4, 4, 2)))
    assert flow.md == 0 and math.isnan(flow.mae)


def test_fraction_on_bin_edge_shares_bin():
    # 0.6 - 0 and 0.6 - 1 are the same fraction reached through different round-off
    gt = np.array([0.6, 0.6, 0.9, 0.9])
    f = fractional_part(gt, np.array([0, 1, 0, 1]))
    assert f[0] == f[1] == -0.4 and f[2] == f[3] == pytest.approx(-0.1)
    assert bin_index(f[0]) == bin_index(f[1]) and bin_index(f[2]) == bin_index(f[3])
