"""DCGAN-style generator/discriminator over windows of latent vectors, and
forecasting by inverting the generator against known levels."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .nn import DTYPE, LEAKY_SLOPE, OptimConfig, WeightStore, as_tensor, init_module, optimizer_step


@dataclass(frozen=True)
class GanHyper:
    window: int = 9
    latent_size: int = 100
    epochs: int = 5000
    batch_size: int = 256
    dropout: float = 0.3
    optim: OptimConfig = OptimConfig("adam", 1e-3, 0.9, 0.999, 1e-7)
    seed: int = 0
    record_every: int = 10


class Generator(nn.Module):
    def __init__(self, latent_size: int = 100, rows: int = 9, cols: int = 15, channels: int = 64):
        super().__init__()
        if rows % 3 or cols % 3:
            raise ValueError("window rows and columns must be multiples of 3")
        self.r0, self.c0, self.ch = rows // 3, cols // 3, channels
        self.latent_size = latent_size
        self.dense = nn.Linear(latent_size, self.r0 * self.c0 * channels, dtype=DTYPE)
        self.bn0 = nn.BatchNorm2d(channels, dtype=DTYPE)
        # rows x3, cols kept
        self.up_rows = nn.ConvTranspose2d(channels, channels // 2, 3, stride=(3, 1), padding=(0, 1), dtype=DTYPE)
        self.bn1 = nn.BatchNorm2d(channels // 2, dtype=DTYPE)
        # rows kept, cols x3
        self.up_cols = nn.ConvTranspose2d(channels // 2, 1, 3, stride=(1, 3), padding=(1, 0), dtype=DTYPE)

    def forward(self, z):
        act = nn.functional.leaky_relu
        h = self.dense(z).view(-1, self.ch, self.r0, self.c0)
        h = act(self.bn0(h), LEAKY_SLOPE)
        h = act(self.bn1(self.up_rows(h)), LEAKY_SLOPE)
        return self.up_cols(h)[:, 0]


class Discriminator(nn.Module):
    def __init__(self, rows: int = 9, cols: int = 15, dropout: float = 0.3, channels: int = 32):
        super().__init__()
        self.rows, self.cols = rows, cols
        self.conv1 = nn.Conv2d(1, channels, 3, stride=2, padding=1, dtype=DTYPE)
        self.conv2 = nn.Conv2d(channels, 2 * channels, 3, stride=2, padding=1, dtype=DTYPE)
        r, c = rows, cols
        for _ in range(2):
            r, c = (r + 1) // 2, (c + 1) // 2
        self.drop = nn.Dropout(dropout)
        self.head = nn.Linear(2 * channels * r * c, 1, dtype=DTYPE)

    def logits(self, y):
        act = nn.functional.leaky_relu
        h = act(self.conv1(y[:, None]), LEAKY_SLOPE)
        h = act(self.conv2(h), LEAKY_SLOPE)
        return self.head(self.drop(h.flatten(1)))[:, 0]

    def forward(self, y):
        return torch.sigmoid(self.logits(y))


@dataclass
class GanModel:
    generator: Generator
    discriminator: Discriminator
    pc_mean: np.ndarray  # per-component scaling between PCs and network units
    pc_std: np.ndarray
    train_lo: np.ndarray  # per-component range of the training latents
    train_hi: np.ndarray
    hyper: GanHyper = GanHyper()
    d_loss: list = field(default_factory=list)
    g_loss: list = field(default_factory=list)
    g_store: WeightStore | None = None
    d_store: WeightStore | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.discriminator.rows, self.discriminator.cols

    def to_net(self, y):
        return (as_tensor(y) - as_tensor(self.pc_mean)) / as_tensor(self.pc_std)

    def from_net(self, y):
        return y * as_tensor(self.pc_std) + as_tensor(self.pc_mean)


def new_gan(latent, hyper: GanHyper = GanHyper(), channels: int = 64) -> GanModel:
    latent = np.asarray(latent, dtype=float)
    m = latent.shape[1]
    gen = Generator(hyper.latent_size, hyper.window, m, channels)
    disc = Discriminator(hyper.window, m, hyper.dropout, channels // 2)
    init_module(gen, hyper.seed)
    init_module(disc, hyper.seed + 1)
    nn.init.zeros_(disc.head.weight)  # untrained discriminator is undecided
    std = latent.std(axis=0)
    gen.eval()
    disc.eval()
    return GanModel(gen, disc, latent.mean(axis=0), np.where(std > 0, std, 1.0),
                    latent.min(axis=0), latent.max(axis=0), hyper)


def generator_forward(z, model: GanModel) -> np.ndarray:
    """N x M window in PC units for one latent vector."""
    z = np.asarray(z, dtype=float)
    if z.shape != (model.generator.latent_size,):
        raise ValueError(f"z has shape {z.shape}, expected ({model.generator.latent_size},)")
    model.generator.eval()
    with torch.no_grad():
        return model.from_net(model.generator(as_tensor(z)[None])[0]).numpy()


def discriminator_forward(y, model: GanModel) -> float:
    y = np.asarray(y, dtype=float)
    if y.shape != model.shape:
        raise ValueError(f"window shape {y.shape}, expected {model.shape}")
    model.discriminator.eval()
    with torch.no_grad():
        return float(model.discriminator(model.to_net(y)[None])[0])


def latent_windows(latent, window: int = 9) -> np.ndarray:
    latent = np.asarray(latent, dtype=float)
    n = latent.shape[0] - window + 1
    if n < 2:
        raise ValueError(f"need at least {window + 1} levels")
    return np.stack([latent[k:k + window] for k in range(n)])


def _log(x):
    return torch.log(torch.clamp(x, min=1e-300))


def train_gan(latent, hyper: GanHyper = GanHyper(), model: GanModel | None = None,
              channels: int = 64) -> GanModel:
    """Alternating discriminator/generator updates on all stride-1 windows.

    One epoch is one pass over the shuffled windows in batches; losses are
    recorded every ``record_every`` epochs.
    """
    latent = np.asarray(latent, dtype=float)
    real = latent_windows(latent, hyper.window)
    model = model or new_gan(latent, hyper, channels)
    G, D = model.generator, model.discriminator
    g_store = model.g_store or WeightStore.from_module(G, hyper.seed)
    d_store = model.d_store or WeightStore.from_module(D, hyper.seed + 1)
    gen = torch.Generator().manual_seed(hyper.seed + 2)
    torch.manual_seed(hyper.seed + 3)  # dropout masks
    real_t = model.to_net(real)
    n = real_t.shape[0]
    for epoch in range(hyper.epochs):
        G.train()
        D.train()
        order = torch.randperm(n, generator=gen)
        for start in range(0, n, hyper.batch_size):
            yb = real_t[order[start:start + hyper.batch_size]]
            b = yb.shape[0]
            z = torch.randn(b, hyper.latent_size, generator=gen, dtype=DTYPE)

            d_store.zero_grad()
            with torch.no_grad():
                fake = G(z)
            d_loss = -torch.mean(_log(D(yb))) - torch.mean(_log(1 - D(fake)))
            d_loss.backward()
            optimizer_step(d_store, d_store.grads(), hyper.optim)

            g_store.zero_grad()
            g_loss = torch.mean(_log(1 - D(G(z))))
            g_loss.backward()
            optimizer_step(g_store, g_store.grads(), hyper.optim)
            if not (torch.isfinite(d_loss) and torch.isfinite(g_loss)):
                raise FloatingPointError(
                    f"non-finite GAN loss at epoch {epoch}: L_D={float(d_loss)}, L_G={float(g_loss)}")
        if epoch % hyper.record_every == 0 or epoch == hyper.epochs - 1:
            model.d_loss.append(float(d_loss.detach()))
            model.g_loss.append(float(g_loss.detach()))
    G.eval()
    D.eval()
    model.g_store, model.d_store = g_store, d_store
    return model


# ---------------------------------------------------------------- inversion

@dataclass(frozen=True)
class LatentOptConfig:
    learning_rate: float = 0.01
    max_steps: int = 2000
    patience: int = 50
    rel_tol: float = 1e-6
    restarts: int = 5


def weighted_mismatch(model: GanModel, z: torch.Tensor, known: torch.Tensor, w: torch.Tensor):
    """Sum over known rows of (x - x~)^T W (x - x~), in PC units."""
    out = model.from_net(model.generator(z[None])[0])
    diff = out[:known.shape[0]] - known
    return torch.sum((diff @ w) * diff)


def optimize_latent(model: GanModel, known, W_alpha, z_init,
                    config: LatentOptConfig = LatentOptConfig()):
    """Adam on z against the first N-1 generator rows; returns (z*, losses).

    The returned z is the best iterate seen, so its loss never exceeds the
    loss at ``z_init``.
    """
    known = as_tensor(known)
    n_rows = model.shape[0] - 1
    if known.shape != (n_rows, model.shape[1]):
        raise ValueError(f"known rows have shape {tuple(known.shape)}, expected {(n_rows, model.shape[1])}")
    w = as_tensor(W_alpha)
    model.generator.eval()
    for p in model.generator.parameters():
        p.requires_grad_(False)
    try:
        z = as_tensor(z_init).clone().requires_grad_(True)
        store = WeightStore({"z": z})
        opt = OptimConfig("adam", config.learning_rate)
        best_z, best = z.detach().clone(), np.inf
        losses = []
        for step in range(config.max_steps + 1):
            z.grad = None
            loss = weighted_mismatch(model, z, known, w)
            value = float(loss.detach())
            if not np.isfinite(value):
                raise FloatingPointError(f"non-finite latent loss at step {step}")
            losses.append(value)
            if value < best:
                best, best_z = value, z.detach().clone()
            if value == 0.0 or step == config.max_steps:
                break
            if step >= config.patience:
                past = losses[-1 - config.patience]
                if abs(past - value) <= config.rel_tol * abs(past):
                    break
            loss.backward()
            optimizer_step(store, {"z": z.grad}, opt)
    finally:
        for p in model.generator.parameters():
            p.requires_grad_(True)
    return best_z.numpy(), np.array(losses)


def rollout_predictive_gan(model: GanModel, truth, start: int, n_levels: int, W_alpha,
                           config: LatentOptConfig = LatentOptConfig(), seed: int = 0):
    """Forecast levels start..start+n_levels-1 from N-1 true seed levels.

    ``truth`` may be a TruthStream so that reads can be audited. Returns the
    predicted latent rows and the final latent losses per level.
    """
    from .assimilation import TruthStream

    stream = truth if isinstance(truth, TruthStream) else TruthStream(np.asarray(truth, float))
    n_known = model.shape[0] - 1
    if start < n_known:
        raise ValueError(f"start level {start} leaves no room for {n_known} seed levels")
    known = stream.window(start - n_known, start)
    rng = np.random.default_rng(seed)
    L = model.generator.latent_size
    z = None
    preds, final_losses = [], []
    for level in range(n_levels):
        try:
            if z is None:
                best = None
                for _ in range(config.restarts):
                    cand, losses = optimize_latent(model, known, W_alpha, rng.standard_normal(L), config)
                    if best is None or losses.min() < best[1].min():
                        best = (cand, losses)
                z, losses = best
            else:
                z, losses = optimize_latent(model, known, W_alpha, z, config)
        except FloatingPointError as exc:
            raise FloatingPointError(f"level {start + level}: {exc}") from exc
        nxt = generator_forward(z, model)[-1]
        preds.append(nxt)
        final_losses.append(losses.min())
        known = np.vstack([known[1:], nxt])
    return np.array(preds).reshape(n_levels, model.shape[1]), np.array(final_losses)
