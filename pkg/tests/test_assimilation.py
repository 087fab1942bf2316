import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epitwin.assimilation import (BlueStats, IllConditionedError, TruthExhaustedError, TruthStream,
                                  blue_correct, estimate_stats, fit_blue, rollout_corrected,
                                  window_pairs)


def loop_cov(A, B):
    n = A.shape[0]
    ma = [sum(A[k, i] for k in range(n)) / n for i in range(A.shape[1])]
    mb = [sum(B[k, j] for k in range(n)) / n for j in range(B.shape[1])]
    out = np.empty((A.shape[1], B.shape[1]))
    for i in range(A.shape[1]):
        for j in range(B.shape[1]):
            out[i, j] = sum((A[k, i] - ma[i]) * (B[k, j] - mb[j]) for k in range(n)) / (n - 1)
    return out


def test_estimates_match_textbook_covariance(rng):
    L = rng.normal(size=(5, 5))
    Z = rng.normal(size=(200, 5)) @ L.T
    U, V = Z[:, :3], Z[:, 3:]
    s = estimate_stats(U, V)
    np.testing.assert_allclose(s.C_uv, loop_cov(U, V), rtol=0, atol=1e-12)
    np.testing.assert_allclose(s.C, loop_cov(V, V), rtol=0, atol=1e-12)
    np.testing.assert_allclose(s.u_mean, U.mean(axis=0), rtol=0, atol=1e-12)
    assert s.ridge == pytest.approx(1e-8 * np.trace(s.C) / 2, rel=1e-14)


def test_zero_trace_ridge_floor():
    s = estimate_stats(np.array([[1.0], [2.0]]), np.zeros((2, 2)))
    assert s.ridge == 1e-8


def test_gaussian_conditional_mean():
    # (u, v) jointly Gaussian with known means and covariance
    mu_u, mu_v = 1.5, -0.5
    s_uu, s_uv, s_vv = 2.0, 0.8, 0.5
    stats = BlueStats(np.array([mu_u]), np.array([mu_v]), np.array([[s_uv]]), np.array([[s_vv]]), 0.0)
    for v in (-3.0, 0.0, 0.7, 12.0):
        expected = mu_u + s_uv / s_vv * (v - mu_v)
        assert blue_correct(np.array([0.0]), stats, np.array([v]))[0] == pytest.approx(expected, abs=1e-8)


def test_gaussian_conditional_mean_multivariate(rng):
    A = rng.normal(size=(5, 5))
    S = A @ A.T + 5 * np.eye(5)
    mu = rng.normal(size=5)
    stats = BlueStats(mu[:3], mu[3:], S[:3, 3:], S[3:, 3:], 0.0)
    v = rng.normal(size=2)
    expected = mu[:3] + S[:3, 3:] @ np.linalg.inv(S[3:, 3:]) @ (v - mu[3:])
    np.testing.assert_allclose(blue_correct(np.zeros(3), stats, v), expected, rtol=0, atol=1e-8)


def test_perfect_correlation_recovers_observation(rng):
    v = rng.normal(size=(50, 2))
    U = np.hstack([2 * v + 1, v])
    s = estimate_stats(U, v)
    obs = np.array([0.3, -1.1])
    np.testing.assert_allclose(blue_correct(np.zeros(4), s, obs), [1.6, -1.2, 0.3, -1.1], atol=1e-6)


def test_observation_at_mean_returns_mean(rng):
    s = estimate_stats(rng.normal(size=(30, 4)), rng.normal(size=(30, 3)))
    np.testing.assert_allclose(blue_correct(rng.normal(size=4), s, s.v_mean), s.u_mean, atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5))
def test_correction_is_affine_in_observation(a, b):
    rng = np.random.default_rng(1)
    s = estimate_stats(rng.normal(size=(40, 3)), rng.normal(size=(40, 2)))
    v1, v2 = rng.normal(size=2), rng.normal(size=2)
    mix = blue_correct(np.zeros(3), s, a * v1 + b * v2 + (1 - a - b) * s.v_mean)
    lin = a * blue_correct(np.zeros(3), s, v1) + b * blue_correct(np.zeros(3), s, v2) \
        + (1 - a - b) * s.u_mean
    np.testing.assert_allclose(mix, lin, rtol=1e-9, atol=1e-9)


def test_ridge_shrinks_toward_exact(rng):
    U, V = rng.normal(size=(40, 3)), rng.normal(size=(40, 2))
    exact = estimate_stats(U, V, ridge_factor=0.0)
    v = rng.normal(size=2)
    ref = blue_correct(np.zeros(3), exact, v)
    errs = [np.abs(blue_correct(np.zeros(3), estimate_stats(U, V, f), v) - ref).max()
            for f in (1e-2, 1e-4, 1e-6)]
    assert errs[0] > errs[1] > errs[2]


def test_singular_covariance_raises():
    s = BlueStats(np.zeros(1), np.zeros(2), np.zeros((1, 2)), np.array([[1.0, 1.0], [1.0, 1.0]]), -1.0)
    with pytest.raises(IllConditionedError):
        blue_correct(np.zeros(1), s, np.zeros(2))


def test_shape_errors(rng):
    s = estimate_stats(rng.normal(size=(10, 3)), rng.normal(size=(10, 2)))
    with pytest.raises(ValueError):
        blue_correct(np.zeros(2), s, np.zeros(2))
    with pytest.raises(ValueError):
        estimate_stats(np.zeros((1, 2)), np.zeros((1, 2)))
    with pytest.raises(ValueError):
        estimate_stats(np.zeros((3, 2)), np.zeros((4, 2)))


def test_window_pairs_layout():
    latent = np.arange(20.0).reshape(10, 2)
    U, V = window_pairs(lambda w: w[-1] * 0, latent, window=3, n_train=4)
    assert U.shape == (4, 8) and V.shape == (4, 2)
    np.testing.assert_array_equal(U[1, :6], latent[1:4].ravel())
    np.testing.assert_array_equal(V[1], latent[4])


def test_rollout_reads_one_level_per_step(rng):
    latent = np.cumsum(rng.normal(size=(60, 2)), axis=0)
    pred = lambda w: w[-1]  # noqa: E731
    stats = fit_blue(pred, latent, window=4)
    stream = TruthStream(latent)
    out = rollout_corrected(pred, stream, 10, 20, stats, window=4)
    assert out.shape == (20, 2)
    assert stream.log == list(range(6, 30))


def test_rollout_on_exact_linear_predictor_tracks_truth(rng):
    # predictor is exact, so the corrected state must reproduce the truth
    t = np.arange(80.0)
    latent = np.stack([np.sin(0.3 * t), np.cos(0.3 * t)], axis=1)
    c, s_ = np.cos(0.3), np.sin(0.3)
    pred = lambda w: np.array([w[-1, 0] * c + w[-1, 1] * s_, -w[-1, 0] * s_ + w[-1, 1] * c])  # noqa: E731
    np.testing.assert_allclose(pred(latent[:1]), latent[1], atol=1e-12)
    stats = fit_blue(pred, latent, window=3)
    out = rollout_corrected(pred, latent, 5, 60, stats, window=3)
    np.testing.assert_allclose(out, latent[5:65], atol=1e-6)


def test_truth_exhausted():
    latent = np.zeros((12, 2))
    stats = BlueStats(np.zeros(8), np.zeros(2), np.zeros((8, 2)), np.eye(2), 0.0)
    with pytest.raises(TruthExhaustedError):
        rollout_corrected(lambda w: w[-1], latent, 5, 10, stats, window=3)


# ---------------------------------------------------------------- default dataset

def _block_nrmse(pred, truth, basis, grid):
    from epitwin.evaluation import active_mask, nrmse

    p = basis.reconstruct(pred).reshape(len(pred), 4, 2, -1)
    t = truth.reshape(len(truth), 4, 2, -1)
    mask = active_mask(grid)
    return np.array([np.nanmean([nrmse(p[k, c, g], t[k, c, g], mask[c, g]) for c in range(4) for g in range(2)])
                     for k in range(len(p))])


@pytest.mark.slow
def test_corrected_beats_free_rollout(default_bdlstm, default_latent, default_snapshots, grid):
    from epitwin.evaluation import summarize
    from epitwin.lstm import rollout_free

    basis, z = default_latent
    trained = default_bdlstm(0)
    start, n = 9, z.shape[0] - 9
    stats = fit_blue(trained.predict, z, 8)
    corr = rollout_corrected(trained.predict, z, start, n, stats, 8)
    free = rollout_free(trained.predict, z[start - 8:start], n)[8:]
    truth = default_snapshots.data[start:]
    rep = summarize(corr, truth, grid, basis)
    assert np.nanmean(rep.mean_nrmse[[1, 2]]) < 1.0
    e_corr, e_free = _block_nrmse(corr, truth, basis, grid), _block_nrmse(free, truth, basis, grid)
    assert np.all(e_corr[31:] < e_free[31:])


@pytest.mark.slow
def test_ffn_struggles_on_second_batch(default_bdlstm, default_latent, default_snapshots):
    """Initial-transient error of FFN+BLUE exceeds BDLSTM+BLUE from level 200 (majority of 3 seeds)."""
    from epitwin.nn import FfnHyper, train_ffn

    basis, z = default_latent
    start, n = 200, z.shape[0] - 200
    truth = default_snapshots.data[start:start + 10]
    wins = 0
    for seed in range(3):
        lstm = default_bdlstm(seed)
        ffn = train_ffn(z, FfnHyper(seed=seed))
        err = []
        for predict in (lstm.predict, ffn.predict):
            pred = rollout_corrected(predict, z, start, n, fit_blue(predict, z, 8), 8)[:10]
            err.append(np.sqrt(np.mean((basis.reconstruct(pred) - truth) ** 2)))
        wins += err[1] > err[0]
    assert wins >= 2
