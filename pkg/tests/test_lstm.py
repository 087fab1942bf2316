import numpy as np
import pytest
import torch

from epitwin.lstm import (GATES, BdlstmModel, LstmCellWeights, LstmHyper, bdlstm_forward,
                          lstm_cell_forward, rollout_free, rollout_teacher_forced, train_bdlstm)
from epitwin.nn import OptimConfig, grad_check, init_module


def sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def loop_cell(x, H, c, P):
    """Scalar-loop LSTM step; P maps parameter names to numpy arrays."""
    n = H.size
    gates = {}
    for g in GATES:
        pre = np.empty(n)
        for r in range(n):
            s = P[f"b_{g}"][r]
            for j in range(x.size):
                s += P[f"W_x{g}"][r, j] * x[j]
            for j in range(n):
                s += P[f"W_H{g}"][r, j] * H[j]
            pre[r] = s
        gates[g] = pre
    c_new = np.empty(n)
    H_new = np.empty(n)
    for r in range(n):
        c_new[r] = sig(gates["f"][r]) * c[r] + sig(gates["i"][r]) * np.tanh(gates["c"][r])
        H_new[r] = sig(gates["o"][r]) * np.tanh(c_new[r])
    return H_new, c_new


def cell_params(weights):
    return {k: v.detach().numpy() for k, v in weights.named_parameters()}


def test_zero_weights_half_gates():
    w = LstmCellWeights(3, 4)
    H, c = lstm_cell_forward(np.ones(3), np.zeros(4), np.ones(4), w)
    # f = o = 0.5, candidate tanh(0) = 0 -> c = 0.5, H = 0.5 tanh(0.5)
    np.testing.assert_allclose(c.detach().numpy(), 0.5)
    np.testing.assert_allclose(H.detach().numpy(), 0.5 * np.tanh(0.5))


def test_forget_gate_saturated_keeps_memory():
    w = LstmCellWeights(2, 3)
    with torch.no_grad():
        w.b_f.fill_(50.0)
        w.b_i.fill_(-50.0)
    c0 = np.array([0.3, -1.2, 2.0])
    _, c = lstm_cell_forward(np.array([0.7, -0.1]), np.zeros(3), c0, w)
    np.testing.assert_allclose(c.detach().numpy(), c0, rtol=1e-12)


def test_cell_matches_scalar_loop(rng):
    w = LstmCellWeights(5, 6)
    init_module(w, 3)
    with torch.no_grad():
        for g in GATES:
            getattr(w, f"b_{g}").copy_(torch.from_numpy(rng.normal(size=6)))
    P = cell_params(w)
    x, H, c = rng.normal(size=5), rng.normal(size=6), rng.normal(size=6)
    H1, c1 = lstm_cell_forward(x, H, c, w)
    H2, c2 = loop_cell(x, H, c, P)
    np.testing.assert_allclose(H1.detach().numpy(), H2, rtol=0, atol=1e-12)
    np.testing.assert_allclose(c1.detach().numpy(), c2, rtol=0, atol=1e-12)


def _loop_model(model, window):
    """Full bidirectional forward in scalar loops, eval mode."""
    x = np.asarray(model.scale(window))
    g, b = model.norm.weight.detach().numpy(), model.norm.bias.detach().numpy()
    eps = model.norm.eps
    xn = np.array([(r - r.mean()) / np.sqrt(r.var() + eps) * g + b for r in x])
    n = model.hidden_size
    out = []
    for cell, order in ((model.fwd, range(len(xn))), (model.bwd, reversed(range(len(xn))))):
        P = cell_params(cell)
        H, c = np.zeros(n), np.zeros(n)
        for t in order:
            H, c = loop_cell(xn[t], H, c, P)
        out.append(H)
    h = np.concatenate(out)
    W, bias = model.head.weight.detach().numpy(), model.head.bias.detach().numpy()
    y = sig(W @ h + bias)
    return np.asarray(model.unscale(torch.from_numpy(y)))


def test_bdlstm_matches_loop_oracle(rng):
    model = BdlstmModel(4, hidden_size=5, window=3)
    init_module(model, 11)
    model.fit_scaling(rng.normal(size=(20, 4)))
    win = rng.normal(size=(3, 4))
    np.testing.assert_allclose(bdlstm_forward(win, model), _loop_model(model, win), rtol=0, atol=1e-12)


def test_shared_cells_palindrome_symmetry(rng):
    model = BdlstmModel(3, hidden_size=4, window=5, shared_cells=True)
    init_module(model, 2)
    half = rng.normal(size=(2, 3))
    pal = np.vstack([half, rng.normal(size=(1, 3)), half[::-1]])
    model.eval()
    with torch.no_grad():
        h = model.encode(model.scale(pal)[None])[0].numpy()
    np.testing.assert_allclose(h[:4], h[4:], rtol=0, atol=1e-14)


def test_output_inside_scaling_box(rng):
    model = BdlstmModel(4, hidden_size=6, window=3)
    init_module(model, 0)
    model.fit_scaling(rng.normal(size=(30, 4)))
    lo, hi = model.bounds()
    for _ in range(20):
        y = bdlstm_forward(rng.normal(scale=100, size=(3, 4)), model)
        assert np.all(y >= lo) and np.all(y <= hi)


def test_scaling_maps_training_range():
    model = BdlstmModel(2, hidden_size=2, window=2)
    model.fit_scaling(np.array([[0.0, -4.0], [10.0, 4.0], [5.0, 0.0]]))
    np.testing.assert_allclose(model.scale(np.array([[0.0, -4.0], [10.0, 4.0]])).numpy(),
                               [[0.05, 0.05], [0.95, 0.95]])
    np.testing.assert_allclose(model.unscale(model.scale(np.array([3.0, 1.0]))).numpy(), [3.0, 1.0])


def test_window_shape_error():
    model = BdlstmModel(4, hidden_size=3, window=3)
    with pytest.raises(ValueError, match="window shape"):
        bdlstm_forward(np.zeros((2, 4)), model)


def test_bdlstm_grad_check(rng):
    model = BdlstmModel(3, hidden_size=4, window=3, dropout=0.0)
    init_module(model, 5)
    model.eval()
    x = torch.from_numpy(rng.uniform(0.05, 0.95, size=(4, 3, 3)))
    y = torch.from_numpy(rng.uniform(0.05, 0.95, size=(4, 3)))

    def loss():
        return torch.mean((model(x) - y) ** 2)

    assert grad_check(loss, dict(model.named_parameters())) <= 1e-5


def test_constant_series_learned():
    latent = np.tile([1.0, -2.0, 0.5], (60, 1))
    hyper = LstmHyper(window=4, hidden_size=8, epochs=30, batch_size=16)
    trained = train_bdlstm(latent, hyper)
    pred = np.array([trained.predict(latent[k - 4:k]) for k in range(50, 60)])
    assert np.mean((pred - latent[50:60]) ** 2) < 1e-6


def test_training_deterministic(rng):
    latent = np.cumsum(rng.normal(size=(40, 3)), axis=0)
    hyper = LstmHyper(window=4, hidden_size=6, epochs=3, batch_size=8)
    a, b = train_bdlstm(latent, hyper), train_bdlstm(latent, hyper)
    assert a.train_loss == b.train_loss
    for (k, p), q in zip(a.model.named_parameters(), b.model.parameters()):
        assert torch.equal(p, q), k


def test_training_reduces_loss(rng):
    t = np.arange(80)[:, None]
    latent = np.hstack([np.sin(0.2 * t), np.cos(0.2 * t)])
    hyper = LstmHyper(window=4, hidden_size=8, epochs=40, batch_size=16, dropout=0.0,
                      optim=OptimConfig("nadam", 1e-2))
    trained = train_bdlstm(latent, hyper)
    assert trained.train_loss[-1] < 0.6 * trained.train_loss[0]


def test_rollout_free_zero_levels(rng):
    win = rng.normal(size=(4, 2))
    out = rollout_free(lambda w: w[-1] + 1, win, 0)
    np.testing.assert_array_equal(out, win)


def test_rollout_free_feeds_back_predictions():
    out = rollout_free(lambda w: w[-1] + w[0], np.array([[1.0], [1.0]]), 4)
    np.testing.assert_array_equal(out[:, 0], [1, 1, 2, 3, 5, 8])


def test_teacher_forced_uses_true_windows():
    truth = np.arange(20.0)[:, None]
    out = rollout_teacher_forced(lambda w: w[-1] + 1, truth, 5, 10, window=3)
    np.testing.assert_array_equal(out[:, 0], truth[5:15, 0])
    with pytest.raises(ValueError):
        rollout_teacher_forced(lambda w: w[-1], truth, 2, 3, window=3)


@pytest.mark.slow
def test_default_one_step_error_small(default_latent, default_bdlstm):
    """One-step test-split error well below the target variance."""
    _, z = default_latent
    trained = default_bdlstm(0)
    n_tr = trained.n_train_windows
    X = np.array([z[k - 8:k] for k in range(8 + n_tr, z.shape[0])])
    Y = z[8 + n_tr:]
    pred = np.array([trained.predict(w) for w in X])
    mse = np.mean((pred - Y) ** 2)
    assert mse < 0.1 * np.var(Y)


@pytest.mark.slow
def test_teacher_forcing_below_free_rollout(default_bdlstm, default_latent, default_snapshots, grid):
    from epitwin.evaluation import active_mask, nrmse

    basis, z = default_latent
    trained = default_bdlstm(0)
    start, n = 9, z.shape[0] - 9
    free = rollout_free(trained.predict, z[start - 8:start], n)[8:]
    forced = rollout_teacher_forced(trained.predict, z, start, n)
    truth = default_snapshots.data[start:].reshape(n, 4, 2, -1)
    mask = active_mask(grid)

    def per_level(pred):
        p = basis.reconstruct(pred).reshape(n, 4, 2, -1)
        return np.array([np.nanmean([nrmse(p[k, c, g], truth[k, c, g], mask[c, g])
                                     for c in range(4) for g in range(2)]) for k in range(n)])

    assert np.all(per_level(forced)[31:] < per_level(free)[31:])
