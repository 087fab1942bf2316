"""Dense network substrate in float64.

Autograd comes from torch; parameter updates (Adam/Nadam), initialisation,
mini-batch training and gradient checking are done here so every model in
the package shares one deterministic training path.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

DTYPE = torch.float64
LEAKY_SLOPE = 0.3

torch.set_num_threads(max(1, int(os.environ.get("EPITWIN_THREADS", "1"))))


def as_tensor(x) -> torch.Tensor:
    return torch.as_tensor(np.asarray(x, dtype=np.float64) if not torch.is_tensor(x) else x,
                           dtype=DTYPE)


def activation(name: str):
    if name == "sigmoid":
        return torch.sigmoid
    if name == "tanh":
        return torch.tanh
    if name == "leaky_relu":
        return lambda x: torch.nn.functional.leaky_relu(x, LEAKY_SLOPE)
    if name == "linear":
        return lambda x: x
    raise ValueError(f"unknown activation {name!r}")


def dense_forward(x, W, b, act: str = "linear") -> torch.Tensor:
    """act(W x + b) for a vector or a batch of row vectors."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if x.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ValueError(f"shape mismatch: x {tuple(x.shape)}, W {tuple(W.shape)}, b {tuple(b.shape)}")
    return activation(act)(x @ W.T + b)


def glorot_uniform_(t: torch.Tensor, generator: torch.Generator, fan_in=None, fan_out=None):
    fan_out = t.shape[0] if fan_out is None else fan_out
    fan_in = (t[0].numel() if t.dim() > 1 else 1) if fan_in is None else fan_in
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    with torch.no_grad():
        t.copy_((torch.rand(t.shape, generator=generator, dtype=DTYPE) * 2 - 1) * limit)
    return t


def init_module(module: nn.Module, seed: int) -> None:
    """Glorot-uniform weights, zero biases, drawn in parameter-name order.

    Normalisation layers keep unit scale and zero shift.
    """
    gen = torch.Generator().manual_seed(seed)
    norm_params = set()
    for sub in module.modules():
        if isinstance(sub, (nn.LayerNorm, nn.modules.batchnorm._BatchNorm)):
            sub.reset_parameters()
            norm_params.update(id(p) for p in sub.parameters())
    for name, p in module.named_parameters():
        if id(p) in norm_params:
            continue
        if p.dim() == 1:
            nn.init.zeros_(p)
        elif isinstance(getattr(p, "fans", None), tuple):
            glorot_uniform_(p, gen, *p.fans)
        elif p.dim() == 4:  # conv kernels
            rf = p.shape[2] * p.shape[3]
            glorot_uniform_(p, gen, fan_in=p.shape[1] * rf, fan_out=p.shape[0] * rf)
        else:
            glorot_uniform_(p, gen)


# ---------------------------------------------------------------- optimiser

@dataclass(frozen=True)
class OptimConfig:
    algorithm: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7

    def __post_init__(self):
        if self.algorithm not in ("adam", "nadam"):
            raise ValueError(f"unknown optimiser {self.algorithm!r}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class WeightStore:
    """Named float64 parameters plus their Adam moments and step count."""

    params: dict[str, torch.Tensor]
    seed: int = 0
    step: int = 0
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            self.m.setdefault(name, torch.zeros_like(p))
            self.v.setdefault(name, torch.zeros_like(p))

    @classmethod
    def from_module(cls, module: nn.Module, seed: int = 0) -> "WeightStore":
        return cls(dict(module.named_parameters()), seed=seed)

    def grads(self) -> dict[str, torch.Tensor]:
        return {n: (p.grad if p.grad is not None else torch.zeros_like(p))
                for n, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"optim.step": np.array([float(self.step)]), "optim.seed": np.array([float(self.seed)])}
        for n in self.params:
            out[f"optim.m.{n}"] = self.m[n].detach().numpy().copy()
            out[f"optim.v.{n}"] = self.v[n].detach().numpy().copy()
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        self.step = int(arrays["optim.step"][0])
        self.seed = int(arrays["optim.seed"][0])
        for n in self.params:
            self.m[n] = torch.tensor(arrays[f"optim.m.{n}"], dtype=DTYPE)
            self.v[n] = torch.tensor(arrays[f"optim.v.{n}"], dtype=DTYPE)


def optimizer_step(store: WeightStore, grads: dict[str, torch.Tensor], config: OptimConfig) -> WeightStore:
    """One Adam or Nadam update with bias correction, in place."""
    b1, b2, lr, eps = config.beta1, config.beta2, config.learning_rate, config.eps
    store.step += 1
    t = store.step
    with torch.no_grad():
        for name, p in store.params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ValueError(f"gradient for {name} has shape {tuple(g.shape)}, expected {tuple(p.shape)}")
            m = store.m[name].mul_(b1).add_(g, alpha=1 - b1)
            v = store.v[name].mul_(b2).addcmul_(g, g, value=1 - b2)
            v_hat = v / (1 - b2**t)
            if config.algorithm == "adam":
                direction = m / (1 - b1**t)
            else:
                # Nesterov look-ahead: next-step momentum plus the current gradient
                direction = b1 * m / (1 - b1 ** (t + 1)) + (1 - b1) * g / (1 - b1**t)
            p.sub_(lr * direction / (v_hat.sqrt() + eps))
    return store


# ---------------------------------------------------------------- training

def minibatch_train(module: nn.Module, loss_fn, X, Y, *, epochs: int, batch_size: int,
                    config: OptimConfig, seed: int, X_test=None, Y_test=None,
                    store: WeightStore | None = None):
    """Shuffled mini-batch training; returns (store, train_curve, test_curve).

    ``loss_fn(module, xb, yb)`` returns a scalar tensor. Curves hold one
    full-data loss per epoch, evaluated with the module in eval mode.
    """
    store = store or WeightStore.from_module(module, seed)
    gen = torch.Generator().manual_seed(seed + 1)
    X, Y = as_tensor(X), as_tensor(Y)
    n = X.shape[0]
    train_curve, test_curve = [], []
    for _ in range(epochs):
        module.train()
        order = torch.randperm(n, generator=gen)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            store.zero_grad()
            loss = loss_fn(module, X[idx], Y[idx])
            if not torch.isfinite(loss):
                raise FloatingPointError(f"non-finite training loss at step {store.step}")
            loss.backward()
            optimizer_step(store, store.grads(), config)
        module.eval()
        with torch.no_grad():
            train_curve.append(float(loss_fn(module, X, Y)))
            if X_test is not None and len(X_test):
                test_curve.append(float(loss_fn(module, as_tensor(X_test), as_tensor(Y_test))))
    module.eval()
    return store, train_curve, test_curve


def mse_loss(module, xb, yb):
    return torch.mean((module(xb) - yb) ** 2)


def grad_check(loss_fn, params: dict[str, torch.Tensor], h: float = 1e-5) -> float:
    """Largest relative error between autograd and central differences.

    ``loss_fn()`` must rebuild the scalar loss from the live ``params``.
    """
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    analytic = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
    worst = 0.0
    with torch.no_grad():
        for (name, p), a in zip(params.items(), analytic):
            a = torch.zeros_like(p) if a is None else a
            flat = p.view(-1)
            for j in range(flat.numel()):
                keep = flat[j].item()
                flat[j] = keep + h
                up = loss_fn().item()
                flat[j] = keep - h
                down = loss_fn().item()
                flat[j] = keep
                num = (up - down) / (2 * h)
                ana = a.view(-1)[j].item()
                err = abs(ana - num) / max(abs(ana), abs(num), 1e-12)
                worst = max(worst, err)
    return worst


# ---------------------------------------------------------------- FFN baseline

@dataclass(frozen=True)
class FfnHyper:
    window: int = 8
    hidden: tuple[int, ...] = (64, 64)
    epochs: int = 500
    batch_size: int = 32
    train_fraction: float = 0.9
    optim: OptimConfig = OptimConfig("adam", 1e-3, 0.9, 0.999, 1e-7)
    seed: int = 0


class FFN(nn.Module):
    """Flattened window -> next latent vector, LeakyReLU hidden layers."""

    def __init__(self, window: int, m: int, hidden=(64, 64)):
        super().__init__()
        sizes = [window * m, *hidden, m]
        self.layers = nn.ModuleList(nn.Linear(a, b, dtype=DTYPE) for a, b in zip(sizes, sizes[1:]))
        self.window, self.m = window, m
        self.register_buffer("x_mean", torch.zeros(m, dtype=DTYPE))
        self.register_buffer("x_std", torch.ones(m, dtype=DTYPE))

    def forward(self, xb):
        h = xb.reshape(xb.shape[0], -1)
        for k, layer in enumerate(self.layers):
            h = layer(h)
            if k < len(self.layers) - 1:
                h = torch.nn.functional.leaky_relu(h, LEAKY_SLOPE)
        return h


@dataclass
class FfnModel:
    net: FFN
    store: WeightStore | None = None
    train_loss: list = field(default_factory=list)
    test_loss: list = field(default_factory=list)

    @property
    def trained(self) -> bool:
        return self.store is not None and self.store.step > 0

    def _scale(self, x):
        return (as_tensor(x) - self.net.x_mean) / self.net.x_std

    def predict(self, window) -> np.ndarray:
        return ffn_predict(self, window)


def sliding_windows(series: np.ndarray, window: int):
    """Inputs (n, window, M) over levels k-window+1..k and targets x_{k+1}."""
    series = np.asarray(series, dtype=float)
    n = series.shape[0] - window
    if n < 1:
        raise ValueError(f"series of {series.shape[0]} levels is too short for window {window}")
    X = np.stack([series[k:k + window] for k in range(n)])
    return X, series[window:]


def chronological_split(X, Y, fraction):
    n_train = int(round(fraction * X.shape[0]))
    return X[:n_train], Y[:n_train], X[n_train:], Y[n_train:]


def train_ffn(latent, hyper: FfnHyper = FfnHyper()) -> FfnModel:
    latent = np.asarray(latent, dtype=float)
    if latent.shape[0] < hyper.window + 2:
        raise ValueError("series too short")
    X, Y = sliding_windows(latent, hyper.window)
    Xtr, Ytr, Xte, Yte = chronological_split(X, Y, hyper.train_fraction)
    m = latent.shape[1]
    net = FFN(hyper.window, m, hyper.hidden)
    init_module(net, hyper.seed)
    n_train_levels = Xtr.shape[0] + hyper.window
    mean = latent[:n_train_levels].mean(axis=0)
    std = latent[:n_train_levels].std(axis=0)
    net.x_mean.copy_(as_tensor(mean))
    net.x_std.copy_(as_tensor(np.where(std > 0, std, 1.0)))
    model = FfnModel(net)
    scale = model._scale
    store, tr, te = minibatch_train(
        net, mse_loss, scale(Xtr), scale(Ytr), epochs=hyper.epochs,
        batch_size=hyper.batch_size, config=hyper.optim, seed=hyper.seed,
        X_test=scale(Xte) if len(Xte) else None, Y_test=scale(Yte) if len(Yte) else None)
    model.store, model.train_loss, model.test_loss = store, tr, te
    return model


def ffn_predict(model: FfnModel, window) -> np.ndarray:
    if not model.trained:
        raise RuntimeError("FFN has not been trained")
    window = np.asarray(window, dtype=float)
    if window.shape != (model.net.window, model.net.m):
        raise ValueError(f"window shape {window.shape}, expected {(model.net.window, model.net.m)}")
    with torch.no_grad():
        out = model.net(model._scale(window)[None])[0]
    return (out * model.net.x_std + model.net.x_mean).numpy()
