"""BLUE correction of surrogate predictions against observed latent states."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

RIDGE_FACTOR = 1e-8


class IllConditionedError(RuntimeError):
    """The observation covariance could not be factorised."""


class TruthExhaustedError(IndexError):
    """The truth stream ended before the requested horizon."""


@dataclass(frozen=True)
class BlueStats:
    u_mean: np.ndarray  # (du,)
    v_mean: np.ndarray  # (dv,)
    C_uv: np.ndarray  # (du, dv)
    C: np.ndarray  # (dv, dv)
    ridge: float

    def __post_init__(self):
        du, dv = self.u_mean.shape[0], self.v_mean.shape[0]
        if self.C_uv.shape != (du, dv) or self.C.shape != (dv, dv):
            raise ValueError("inconsistent BLUE statistics shapes")


def estimate_stats(U, V, ridge_factor: float = RIDGE_FACTOR) -> BlueStats:
    """Sample means and covariances of paired (prediction, observation) rows."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    n = U.shape[0]
    if n < 2:
        raise ValueError("need at least two paired samples")
    if V.shape[0] != n:
        raise ValueError(f"{n} predictions but {V.shape[0]} observations")
    u_mean, v_mean = U.mean(axis=0), V.mean(axis=0)
    dU, dV = U - u_mean, V - v_mean
    C_uv = dU.T @ dV / (n - 1)
    C = dV.T @ dV / (n - 1)
    C = 0.5 * (C + C.T)
    dim = C.shape[0]
    trace = float(np.trace(C))
    ridge = ridge_factor * trace / dim if trace > 0 else ridge_factor
    return BlueStats(u_mean, v_mean, C_uv, C, ridge)


def blue_correct(u_p, stats: BlueStats, v) -> np.ndarray:
    """u_bar + C_uv (C + ridge I)^-1 (v - v_bar), via a Cholesky solve."""
    u_p = np.asarray(u_p, dtype=float)
    v = np.asarray(v, dtype=float)
    if u_p.shape != stats.u_mean.shape or v.shape != stats.v_mean.shape:
        raise ValueError(f"u_p {u_p.shape} / v {v.shape} do not match the statistics")
    A = stats.C + stats.ridge * np.eye(stats.C.shape[0])
    try:
        factor = cho_factor(A, lower=True)
    except LinAlgError as exc:
        raise IllConditionedError(f"observation covariance is not positive definite: {exc}") from exc
    return stats.u_mean + stats.C_uv @ cho_solve(factor, v - stats.v_mean)


def window_pairs(predictor, latent, window: int = 8, n_train: int | None = None):
    """Stacked (N+1)-level prediction windows and their observations.

    For each window of true levels k-N+1..k the row is the window followed by
    the one-step prediction for k+1; the observation is the true level k+1.
    """
    latent = np.asarray(latent, dtype=float)
    n = latent.shape[0] - window if n_train is None else n_train
    U, V = [], []
    for k in range(n):
        w = latent[k:k + window]
        U.append(np.concatenate([w.ravel(), predictor(w)]))
        V.append(latent[k + window])
    return np.array(U), np.array(V)


def fit_blue(predictor, latent, window: int = 8, train_fraction: float = 0.9) -> BlueStats:
    """Statistics over the chronological training windows, frozen afterwards."""
    n_windows = np.asarray(latent).shape[0] - window
    U, V = window_pairs(predictor, latent, window, int(round(train_fraction * n_windows)))
    return estimate_stats(U, V)


@dataclass
class TruthStream:
    """Read-only access to a truth series that logs every level it hands out."""

    data: np.ndarray
    log: list = field(default_factory=list)

    def __getitem__(self, level: int) -> np.ndarray:
        if not 0 <= level < self.data.shape[0]:
            raise TruthExhaustedError(f"truth stream has no level {level}")
        self.log.append(int(level))
        return self.data[level]

    def window(self, start: int, stop: int) -> np.ndarray:
        return np.array([self[k] for k in range(start, stop)])


def rollout_corrected(predictor, truth, start: int, n_levels: int, stats: BlueStats,
                      window: int = 8) -> np.ndarray:
    """Prediction-correction cycle for levels start..start+n_levels-1.

    Seeds the window with true levels start-N..start-1, then at every level
    predicts, corrects the (N+1)-level vector against that level's
    observation, drops its oldest block and uses the rest as the next window.
    Returns the corrected newest latent vectors, one row per level.
    """
    stream = truth if isinstance(truth, TruthStream) else TruthStream(np.asarray(truth, float))
    if start < window:
        raise ValueError(f"start level {start} leaves no room for a {window}-level window")
    w = stream.window(start - window, start)
    m = w.shape[1]
    out = np.empty((n_levels, m))
    for j in range(n_levels):
        u_p = np.concatenate([w.ravel(), predictor(w)])
        corrected = blue_correct(u_p, stats, stream[start + j])
        out[j] = corrected[-m:]
        w = corrected[m:].reshape(window, m)
    return out
