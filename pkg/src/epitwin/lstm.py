"""Bidirectional LSTM surrogate over latent windows."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .nn import (DTYPE, OptimConfig, WeightStore, as_tensor, chronological_split,
                 init_module, minibatch_train, mse_loss, sliding_windows)

GATES = ("i", "f", "o", "c")
SCALE_LO, SCALE_HI = 0.05, 0.95


class LstmCellWeights(nn.Module):
    """W_x*, W_H* and b_* for the four gates, stored as separate parameters."""

    def __init__(self, input_dim: int, hidden_size: int = 64):
        super().__init__()
        self.input_dim, self.hidden_size = input_dim, hidden_size
        for g in GATES:
            wx = nn.Parameter(torch.zeros(hidden_size, input_dim, dtype=DTYPE))
            wh = nn.Parameter(torch.zeros(hidden_size, hidden_size, dtype=DTYPE))
            # Glorot fans for the stacked [x, H] -> 4 gates kernel
            wx.fans = (input_dim, 4 * hidden_size)
            wh.fans = (hidden_size, 4 * hidden_size)
            self.register_parameter(f"W_x{g}", wx)
            self.register_parameter(f"W_H{g}", wh)
            self.register_parameter(f"b_{g}", nn.Parameter(torch.zeros(hidden_size, dtype=DTYPE)))

    def stacked(self):
        """Gate weights stacked in i, f, o, c order for a fused step."""
        Wx = torch.cat([getattr(self, f"W_x{g}") for g in GATES])
        Wh = torch.cat([getattr(self, f"W_H{g}") for g in GATES])
        b = torch.cat([getattr(self, f"b_{g}") for g in GATES])
        return Wx, Wh, b

    def gate(self, name: str, x, H):
        return x @ getattr(self, f"W_x{name}").T + H @ getattr(self, f"W_H{name}").T + getattr(self, f"b_{name}")


def lstm_cell_forward(x, H_prev, c_prev, weights: LstmCellWeights):
    """One LSTM step; works on single vectors or batches of row vectors."""
    x, H_prev, c_prev = (as_tensor(a) if not torch.is_tensor(a) else a for a in (x, H_prev, c_prev))
    i = torch.sigmoid(weights.gate("i", x, H_prev))
    f = torch.sigmoid(weights.gate("f", x, H_prev))
    o = torch.sigmoid(weights.gate("o", x, H_prev))
    c = f * c_prev + i * torch.tanh(weights.gate("c", x, H_prev))
    return o * torch.tanh(c), c


def _run_cell(xs, weights: LstmCellWeights, order):
    """Final (H, c) after feeding xs[:, t] for t in order, gates fused."""
    Wx, Wh, b = weights.stacked()
    n = weights.hidden_size
    pre_x = xs @ Wx.T + b
    H = torch.zeros(xs.shape[0], n, dtype=DTYPE)
    c = torch.zeros_like(H)
    for t in order:
        z = pre_x[:, t] + H @ Wh.T
        i, f, o = torch.sigmoid(z[:, :3 * n]).split(n, dim=1)
        c = f * c + i * torch.tanh(z[:, 3 * n:])
        H = o * torch.tanh(c)
    return H, c


class BdlstmModel(nn.Module):
    """Forward and backward cells over a window, concatenated into a sigmoid head.

    Inputs are layer-normalised per time level, dropout acts on the
    concatenated hidden state during training, and latent vectors are
    mapped affinely to [0.05, 0.95] per component outside the network.
    """

    def __init__(self, m: int, hidden_size: int = 64, window: int = 8, dropout: float = 0.5,
                 shared_cells: bool = False):
        super().__init__()
        self.m, self.hidden_size, self.window = m, hidden_size, window
        self.norm = nn.LayerNorm(m, dtype=DTYPE)
        self.fwd = LstmCellWeights(m, hidden_size)
        self.bwd = self.fwd if shared_cells else LstmCellWeights(m, hidden_size)
        self.drop = nn.Dropout(dropout)
        self.head = nn.Linear(2 * hidden_size, m, dtype=DTYPE)
        self.register_buffer("lo", torch.zeros(m, dtype=DTYPE))
        self.register_buffer("hi", torch.ones(m, dtype=DTYPE))
        self.trained = False

    def encode(self, xb):
        """Concatenated final hidden states for a (batch, N, M) scaled window."""
        xb = self.norm(xb)
        steps = range(xb.shape[1])
        Hf, _ = _run_cell(xb, self.fwd, steps)
        Hb, _ = _run_cell(xb, self.bwd, reversed(steps))
        return torch.cat([Hf, Hb], dim=1)

    def forward(self, xb):
        return torch.sigmoid(self.head(self.drop(self.encode(xb))))

    def scale(self, z):
        span = self.hi - self.lo
        return SCALE_LO + (SCALE_HI - SCALE_LO) * (as_tensor(z) - self.lo) / span

    def unscale(self, y):
        span = self.hi - self.lo
        return self.lo + (y - SCALE_LO) * span / (SCALE_HI - SCALE_LO)

    def fit_scaling(self, latent: np.ndarray):
        lo, hi = latent.min(axis=0), latent.max(axis=0)
        flat = hi - lo <= 0
        lo, hi = np.where(flat, lo - 0.5, lo), np.where(flat, hi + 0.5, hi)
        self.lo.copy_(as_tensor(lo))
        self.hi.copy_(as_tensor(hi))

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Box that the unscaled sigmoid head can reach."""
        return self.unscale(torch.zeros(1)).numpy(), self.unscale(torch.ones(1)).numpy()

    def predict(self, window) -> np.ndarray:
        return bdlstm_forward(window, self)


def bdlstm_forward(window, model: BdlstmModel) -> np.ndarray:
    """Next latent vector from a window of N latent vectors."""
    window = np.asarray(window, dtype=float)
    if window.shape != (model.window, model.m):
        raise ValueError(f"window shape {window.shape}, expected {(model.window, model.m)}")
    model.eval()
    with torch.no_grad():
        y = model(model.scale(window)[None])[0]
    return model.unscale(y).numpy()


@dataclass(frozen=True)
class LstmHyper:
    window: int = 8
    hidden_size: int = 64
    dropout: float = 0.5
    epochs: int = 500
    batch_size: int = 32
    train_fraction: float = 0.9
    optim: OptimConfig = OptimConfig("nadam", 1e-3, 0.9, 0.999, 1e-7)
    seed: int = 0


@dataclass
class TrainedBdlstm:
    model: BdlstmModel
    store: WeightStore
    hyper: LstmHyper
    train_loss: list = field(default_factory=list)
    test_loss: list = field(default_factory=list)
    n_train_windows: int = 0

    def predict(self, window) -> np.ndarray:
        return bdlstm_forward(window, self.model)


def train_bdlstm(latent, hyper: LstmHyper = LstmHyper()) -> TrainedBdlstm:
    latent = np.asarray(latent, dtype=float)
    if latent.ndim != 2 or latent.shape[0] < hyper.window + 2:
        raise ValueError(f"need at least {hyper.window + 2} levels to train")
    X, Y = sliding_windows(latent, hyper.window)
    Xtr, Ytr, Xte, Yte = chronological_split(X, Y, hyper.train_fraction)
    model = BdlstmModel(latent.shape[1], hyper.hidden_size, hyper.window, hyper.dropout)
    init_module(model, hyper.seed)
    model.fit_scaling(latent[:Xtr.shape[0] + hyper.window])
    s = model.scale
    torch.manual_seed(hyper.seed)  # dropout masks
    store, tr, te = minibatch_train(
        model, mse_loss, s(Xtr), s(Ytr), epochs=hyper.epochs, batch_size=hyper.batch_size,
        config=hyper.optim, seed=hyper.seed,
        X_test=s(Xte) if len(Xte) else None, Y_test=s(Yte) if len(Yte) else None)
    model.trained = True
    return TrainedBdlstm(model, store, hyper, tr, te, Xtr.shape[0])


def rollout_free(predictor, initial_window, n_levels: int) -> np.ndarray:
    """Autoregressive rollout; returns the initial window followed by predictions."""
    window = np.asarray(initial_window, dtype=float)
    out = [*window]
    for _ in range(n_levels):
        nxt = predictor(window)
        out.append(nxt)
        window = np.vstack([window[1:], nxt])
    return np.array(out)


def rollout_teacher_forced(predictor, truth, start: int, n_levels: int, window: int = 8) -> np.ndarray:
    """One-step predictions for levels start..start+n_levels-1 from true windows."""
    truth = np.asarray(truth, dtype=float)
    if start < window or start + n_levels > truth.shape[0]:
        raise ValueError("truth stream does not cover the requested levels")
    return np.array([predictor(truth[k - window:k]) for k in range(start, start + n_levels)])
