"""Command-line pipeline: simulate, fit the ROM, train surrogates, predict, evaluate."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .config import ConfigError, dump_config, load_config

METHODS = ("bdlstm", "bdlstm-blue", "ffn-blue", "predictive-gan")

# artifact -> subcommand that produces it
PRODUCERS = {
    "snapshots.csv": "simulate",
    "levels.csv": "rom-fit",
    "basis_lstm.eptw": "rom-fit",
    "basis_gan.eptw": "rom-fit",
    "latent_lstm.csv": "rom-fit",
    "latent_gan.csv": "rom-fit",
    "bdlstm.eptw": "train-lstm",
    "ffn.eptw": "train-ffn",
    "gan.eptw": "train-gan",
}


class Context:
    def __init__(self, cfg, out: Path):
        self.cfg, self.out = cfg, out
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []

    def path(self, name: str) -> Path:
        return self.out / name

    def need(self, name: str) -> Path:
        p = self.path(name)
        if not p.exists():
            producer = PRODUCERS.get(name) or ("predict" if name.startswith("pred_") else "?")
            raise click.ClickException(f"missing {p}; run `epitwin {producer}` first")
        self.inputs[name] = sha256(p)
        return p

    def wrote(self, *names: str):
        self.outputs.extend(names)

    def manifest(self, command: str, extra: dict | None = None):
        data = {
            "command": command,
            "code_version": __version__,
            "seed": self.cfg.seed,
            "profile": self.cfg.profile,
            "config_sha256": sha256(self.path("resolved_config.json")),
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": {n: sha256(self.path(n)) for n in sorted(self.outputs)},
            **(extra or {}),
        }
        self.path(f"{command}.manifest.json").write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_latent(path, coeffs, levels, stride: int, dt: float):
    coeffs = np.atleast_2d(coeffs)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "time", *(f"pc_{j + 1}" for j in range(coeffs.shape[1]))])
        for lvl, row in zip(levels, coeffs):
            w.writerow([int(lvl), repr(float(lvl * stride * dt)), *map(repr, row.tolist())])


def read_latent(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    data = np.array(rows[1:], dtype=float)
    if data.size == 0:
        return np.zeros(0, dtype=int), np.zeros((0, len(rows[0]) - 2))
    return data[:, 0].astype(int), data[:, 2:]


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


# ---------------------------------------------------------------- shared options

def common(f):
    f = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                     help="JSON experiment configuration.")(f)
    f = click.option("--out", "out_dir", type=click.Path(file_okay=False), default="runs/default",
                     show_default=True, help="Artifact directory.")(f)
    f = click.option("--seed", type=click.IntRange(min=0), default=None, help="Overrides the config seed.")(f)
    f = click.option("--profile", type=click.Choice(["paper", "ci"]), default=None,
                     help="'ci' shrinks epochs and horizons.")(f)
    return f


def make_context(config_path, out_dir, seed, profile) -> Context:
    try:
        cfg = load_config(config_path, profile=profile, seed=seed)
    except ConfigError as exc:
        raise click.ClickException(str(exc)) from None
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "resolved_config.json")
    return Context(cfg, out)


@click.group()
@click.version_option(__version__)
def main():
    """Digital-twin pipeline for a two-group spatial SEIRS model."""


# ---------------------------------------------------------------- simulate / eigen

@main.command()
@common
def simulate(config_path, out_dir, seed, profile):
    """Run the transient solver and write every step to snapshots.csv."""
    from .io import save_snapshots
    from .seirs import simulate as run

    ctx = make_context(config_path, out_dir, seed, profile)
    cfg = ctx.cfg
    grid = cfg.grid_spec()
    series = run(cfg.model_params(), grid, settings=cfg.solver_settings())
    save_snapshots(series, ctx.path("snapshots.csv"), grid)
    ctx.wrote("snapshots.csv")
    drift = abs(series[-1].total() - series[0].total()) / max(series[0].total(), 1e-300)
    ctx.manifest("simulate", {"steps": len(series) - 1, "population_drift": drift})
    click.echo(f"wrote {len(series)} states to {ctx.path('snapshots.csv')} (relative drift {drift:.3e})")


@main.command()
@common
def eigen(config_path, out_dir, seed, profile):
    """Solve the R0 eigenvalue problem and print a one-line report."""
    from .seirs import solve_eigen

    ctx = make_context(config_path, out_dir, seed, profile)
    res = solve_eigen(ctx.cfg.model_params(), ctx.cfg.grid_spec(), ctx.cfg.solver_settings())
    report = {"lambda0": res.lambda0, "R0": res.R0, "residual": res.residual_norm, "iterations": res.iterations}
    ctx.path("eigen.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    ctx.wrote("eigen.json")
    ctx.manifest("eigen")
    click.echo(f"lambda0={res.lambda0:.12g} R0={res.R0:.12g} residual={res.residual_norm:.3e}")


# ---------------------------------------------------------------- ROM

@main.command("rom-fit")
@common
def rom_fit(config_path, out_dir, seed, profile):
    """Sample snapshots, fit both PCA bases and write the latent series."""
    from .io import load_snapshots, save_basis
    from .rom import build_snapshots, fit_pca

    ctx = make_context(config_path, out_dir, seed, profile)
    cfg = ctx.cfg
    grid = cfg.grid_spec()
    series = load_snapshots(ctx.need("snapshots.csv"), grid)
    snap = build_snapshots(series, cfg.rom.stride)
    levels = np.arange(snap.n_levels)
    write_rows(ctx.path("levels.csv"), ["level", "time", *range(snap.data.shape[1])],
               ([int(k), float(series[s].t), *map(float, row)] for k, s, row in zip(levels, snap.steps, snap.data)))
    ctx.wrote("levels.csv")
    info = {}
    for tag, mode in (("lstm", cfg.rom.lstm_normalization), ("gan", cfg.rom.gan_normalization)):
        basis = fit_pca(snap, cfg.rom.M, mode)
        save_basis(ctx.path(f"basis_{tag}.eptw"), basis)
        write_latent(ctx.path(f"latent_{tag}.csv"), basis.project(snap.data), levels, cfg.rom.stride, cfg.solver.dt)
        ctx.wrote(f"basis_{tag}.eptw", f"latent_{tag}.csv")
        info[tag] = {"mode": mode, "explained_variance": float(basis.explained_variance_ratio.sum()),
                     "basis_id": basis.basis_id}
    ctx.manifest("rom-fit", {"levels": int(snap.n_levels), "bases": info})
    for tag, d in info.items():
        click.echo(f"{tag}: {snap.n_levels} levels, {cfg.rom.M} PCs explain {d['explained_variance']:.6f}")


def _levels_matrix(ctx):
    with open(ctx.need("levels.csv"), newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([r[2:] for r in rows], dtype=float)


# ---------------------------------------------------------------- training

def _loss_csv(path, train, test):
    n = max(len(train), len(test))
    write_rows(path, ["epoch", "train_loss", "test_loss"],
               ([k, float(train[k]) if k < len(train) else "", float(test[k]) if k < len(test) else ""]
                for k in range(n)))


@main.command("train-lstm")
@common
def train_lstm(config_path, out_dir, seed, profile):
    """Train the bidirectional LSTM on the normalised latent series."""
    from .io import save_bdlstm
    from .lstm import train_bdlstm

    ctx = make_context(config_path, out_dir, seed, profile)
    _, latent = read_latent(ctx.need("latent_lstm.csv"))
    hyper = dataclasses.replace(ctx.cfg.lstm, seed=ctx.cfg.seed)
    trained = train_bdlstm(latent, hyper)
    save_bdlstm(ctx.path("bdlstm.eptw"), trained)
    _loss_csv(ctx.path("lstm_loss.csv"), trained.train_loss, trained.test_loss)
    ctx.wrote("bdlstm.eptw", "lstm_loss.csv")
    ctx.manifest("train-lstm")
    click.echo(f"train loss {trained.train_loss[-1]:.4g}, test loss {trained.test_loss[-1]:.4g}")


@main.command("train-ffn")
@common
def train_ffn_cmd(config_path, out_dir, seed, profile):
    """Train the feed-forward baseline on the normalised latent series."""
    from .io import save_ffn
    from .nn import train_ffn

    ctx = make_context(config_path, out_dir, seed, profile)
    _, latent = read_latent(ctx.need("latent_lstm.csv"))
    hyper = dataclasses.replace(ctx.cfg.ffn, seed=ctx.cfg.seed)
    model = train_ffn(latent, hyper)
    save_ffn(ctx.path("ffn.eptw"), model, hyper)
    _loss_csv(ctx.path("ffn_loss.csv"), model.train_loss, model.test_loss)
    ctx.wrote("ffn.eptw", "ffn_loss.csv")
    ctx.manifest("train-ffn")
    click.echo(f"train loss {model.train_loss[-1]:.4g}, test loss {model.test_loss[-1]:.4g}")


@main.command("train-gan")
@common
def train_gan_cmd(config_path, out_dir, seed, profile):
    """Train the GAN on windows of the unnormalised latent series."""
    from .gan import train_gan
    from .io import save_gan

    ctx = make_context(config_path, out_dir, seed, profile)
    _, latent = read_latent(ctx.need("latent_gan.csv"))
    hyper = dataclasses.replace(ctx.cfg.gan, seed=ctx.cfg.seed)
    model = train_gan(latent, hyper)
    save_gan(ctx.path("gan.eptw"), model)
    write_rows(ctx.path("gan_loss.csv"), ["record", "d_loss", "g_loss"],
               ([k, d, g] for k, (d, g) in enumerate(zip(model.d_loss, model.g_loss))))
    ctx.wrote("gan.eptw", "gan_loss.csv")
    ctx.manifest("train-gan")
    click.echo(f"final L_D {model.d_loss[-1]:.4g}, L_G {model.g_loss[-1]:.4g}")


# ---------------------------------------------------------------- prediction

def _horizon(cfg, start, n_levels, horizon):
    avail = n_levels - start
    h = horizon if horizon is not None else cfg.rollout.horizon
    h = avail if h is None else h
    if h > avail:
        raise click.ClickException(f"horizon {h} exceeds the {avail} levels available after level {start}")
    return h


def run_method(ctx, method: str, start: int, horizon: int):
    """Predicted latent rows, the basis they live in and the truth-access log."""
    from .assimilation import TruthStream, fit_blue, rollout_corrected
    from .io import load_basis, load_bdlstm, load_ffn, load_gan
    from .lstm import rollout_free
    from .rom import pc_weight_matrix

    cfg = ctx.cfg
    if method == "predictive-gan":
        basis = load_basis(ctx.need("basis_gan.eptw"))
        _, latent = read_latent(ctx.need("latent_gan.csv"))
        model = load_gan(ctx.need("gan.eptw"))
        stream = TruthStream(latent)
        pred, _ = rollout_predictive_gan_cfg(model, stream, start, horizon, pc_weight_matrix(basis), cfg)
        return pred, basis, stream.log
    basis = load_basis(ctx.need("basis_lstm.eptw"))
    _, latent = read_latent(ctx.need("latent_lstm.csv"))
    if method == "ffn-blue":
        model, hyper = load_ffn(ctx.need("ffn.eptw"))
        predictor, window, frac = model.predict, hyper.window, hyper.train_fraction
    else:
        trained = load_bdlstm(ctx.need("bdlstm.eptw"))
        predictor, window, frac = trained.predict, trained.hyper.window, trained.hyper.train_fraction
    stream = TruthStream(latent)
    if method == "bdlstm":
        pred = rollout_free(predictor, stream.window(start - window, start), horizon)[window:]
        return pred, basis, stream.log
    stats = fit_blue(predictor, latent, window, frac)
    pred = rollout_corrected(predictor, stream, start, horizon, stats, window)
    return pred, basis, stream.log


def rollout_predictive_gan_cfg(model, stream, start, horizon, W, cfg):
    from .gan import rollout_predictive_gan

    return rollout_predictive_gan(model, stream, start, horizon, W, cfg.latent_opt, seed=cfg.seed)


@main.command()
@common
@click.option("--method", type=click.Choice(METHODS), required=True)
@click.option("--start-level", type=click.IntRange(min=0), default=None)
@click.option("--horizon", type=click.IntRange(min=0), default=None)
def predict(config_path, out_dir, seed, profile, method, start_level, horizon):
    """Roll a surrogate forward from a start level and write its latent predictions."""
    ctx = make_context(config_path, out_dir, seed, profile)
    cfg = ctx.cfg
    levels, _ = read_latent(ctx.need("latent_lstm.csv"))
    start = cfg.rollout.start_level if start_level is None else start_level
    h = _horizon(cfg, start, len(levels), horizon)
    pred, _, log = run_method(ctx, method, start, h)
    name = f"pred_{method}.csv"
    write_latent(ctx.path(name), pred, np.arange(start, start + h), cfg.rom.stride, cfg.solver.dt)
    write_rows(ctx.path(f"pred_{method}.access.csv"), ["truth_level"], ([k] for k in log))
    ctx.wrote(name, f"pred_{method}.access.csv")
    ctx.manifest(f"predict-{method}", {"start_level": start, "horizon": h, "truth_reads": len(log)})
    click.echo(f"{method}: {h} levels from level {start}, {len(log)} truth reads")


# ---------------------------------------------------------------- evaluation

def _check_manifest(ctx, method, force):
    man = ctx.path(f"predict-{method}.manifest.json")
    if not man.exists():
        raise click.ClickException(f"missing {man}; run `epitwin predict --method {method}` first")
    recorded = json.loads(man.read_text())
    for name, digest in recorded["inputs"].items():
        p = ctx.path(name)
        if p.exists() and sha256(p) != digest and not force:
            raise click.ClickException(
                f"{name} changed since the prediction was made (hash mismatch); rerun predict or pass --force")
    return recorded


def evaluate_method(ctx, method, force=False):
    from .evaluation import summarize
    from .io import load_basis

    _check_manifest(ctx, method, force)
    levels, pred = read_latent(ctx.need(f"pred_{method}.csv"))
    truth = _levels_matrix(ctx)[levels]
    basis = load_basis(ctx.need("basis_gan.eptw" if method == "predictive-gan" else "basis_lstm.eptw"))
    return summarize(pred, truth, ctx.cfg.grid_spec(), basis)


@main.command()
@common
@click.option("--method", type=click.Choice(METHODS), required=True)
@click.option("--force", is_flag=True, help="Accept inputs whose hashes differ from the prediction manifest.")
def evaluate(config_path, out_dir, seed, profile, method, force):
    """Error metrics of one prediction against the simulation."""
    from .evaluation import write_map, write_series, write_table1

    ctx = make_context(config_path, out_dir, seed, profile)
    report = evaluate_method(ctx, method, force)
    grid = ctx.cfg.grid_spec()
    write_table1(ctx.path(f"eval_{method}_table1.csv"), {method: report})
    write_series(ctx.path(f"eval_{method}_series.csv"), report)
    write_map(ctx.path(f"eval_{method}_rmse_map.csv"), report.rmse_map, grid, "rmse")
    ctx.wrote(f"eval_{method}_table1.csv", f"eval_{method}_series.csv", f"eval_{method}_rmse_map.csv")
    ctx.manifest(f"evaluate-{method}")
    cols = " ".join(f"{v:.3f}" for v in report.table_row())
    click.echo(f"{method} mean NRMSE (H-S..M-R): {cols}")


def _timings(ctx, reps=5):
    """Wall time per 9-level set for the solver and both surrogates."""
    from .assimilation import fit_blue, rollout_corrected
    from .evaluation import time_harness
    from .gan import rollout_predictive_gan
    from .io import load_basis, load_bdlstm, load_gan
    from .model import StateField
    from .rom import pc_weight_matrix
    from .seirs import TransientSolver

    cfg = ctx.cfg
    grid, params = cfg.grid_spec(), cfg.model_params()
    levels = _levels_matrix(ctx)
    start = cfg.rollout.start_level
    solver = TransientSolver(params, grid, cfg.solver_settings())
    state0 = StateField(levels[start].reshape(4, 2, -1), start * cfg.rom.stride * cfg.solver.dt)

    def nine_steps():
        s = state0
        for _ in range(9):
            s = solver.step(s)

    rows = {"SEIRS": time_harness(nine_steps, reps)}
    _, latent = read_latent(ctx.need("latent_lstm.csv"))
    trained = load_bdlstm(ctx.need("bdlstm.eptw"))
    stats = fit_blue(trained.predict, latent, trained.hyper.window, trained.hyper.train_fraction)
    rows["bdlstm-blue"] = time_harness(
        lambda: rollout_corrected(trained.predict, latent, start, 9, stats, trained.hyper.window),
        reps, rows["SEIRS"])
    rows["bdlstm-blue"]["storage_bytes"] = ctx.path("bdlstm.eptw").stat().st_size
    if ctx.path("gan.eptw").exists():
        basis = load_basis(ctx.need("basis_gan.eptw"))
        _, glat = read_latent(ctx.need("latent_gan.csv"))
        gan = load_gan(ctx.need("gan.eptw"))
        W = pc_weight_matrix(basis)
        rows["predictive-gan"] = time_harness(
            lambda: rollout_predictive_gan(gan, glat, start, 9, W, cfg.latent_opt, seed=cfg.seed), 3, rows["SEIRS"])
        rows["predictive-gan"]["storage_bytes"] = ctx.path("gan.eptw").stat().st_size
    rows["SEIRS"]["speed_up"] = 1.0
    return rows


@main.command()
@common
@click.option("--force", is_flag=True)
@click.option("--reps", type=click.IntRange(min=3), default=5, show_default=True)
def compare(config_path, out_dir, seed, profile, force, reps):
    """Table of mean NRMSE for BDLSTM+BLUE and the predictive GAN, timings and skill map."""
    from .evaluation import skill_map, write_map, write_table1, write_times

    ctx = make_context(config_path, out_dir, seed, profile)
    grid = ctx.cfg.grid_spec()
    reports = {m: evaluate_method(ctx, m, force) for m in ("bdlstm-blue", "predictive-gan")}
    write_table1(ctx.path("table1.csv"), reports)
    ss = skill_map(reports["bdlstm-blue"], reports["predictive-gan"], grid)
    write_map(ctx.path("ss_map.csv"), ss, grid, "skill_score")
    write_times(ctx.path("table_times.csv"), _timings(ctx, reps))
    ctx.wrote("table1.csv", "ss_map.csv")  # timings are excluded from the reproducibility hashes
    ctx.manifest("compare", {"timing_artifacts": ["table_times.csv"]})
    for name, rep in reports.items():
        click.echo(f"{name}: " + " ".join(f"{v:.3f}" for v in rep.table_row()))


@main.command()
@common
@click.option("--reps", type=click.IntRange(min=3), default=5, show_default=True)
def bench(config_path, out_dir, seed, profile, reps):
    """Wall time per 9-level set and speed-up against the solver."""
    from .evaluation import write_times

    ctx = make_context(config_path, out_dir, seed, profile)
    rows = _timings(ctx, reps)
    write_times(ctx.path("bench.csv"), rows)
    ctx.manifest("bench", {"timing_artifacts": ["bench.csv"]})
    for name, r in rows.items():
        click.echo(f"{name}: {r['median']:.4g} s per set, speed-up {r.get('speed_up', float('nan')):.3g}")


if __name__ == "__main__":
    sys.exit(main())
