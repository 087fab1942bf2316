"""Shared setup for the experiment scripts: default run, bases and latent series."""
from __future__ import annotations

import argparse
import csv
from pathlib import Path

import numpy as np

from epitwin.config import load_config
from epitwin.evaluation import active_mask, nrmse
from epitwin.rom import build_snapshots, fit_pca
from epitwin.seirs import simulate


def parser(description: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--config", default=None, help="JSON experiment configuration")
    p.add_argument("--profile", choices=["paper", "ci"], default=None)
    p.add_argument("--out", type=Path, default=Path("runs/experiments"))
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    return p


def setup(args):
    cfg = load_config(args.config, profile=args.profile)
    args.out.mkdir(parents=True, exist_ok=True)
    grid = cfg.grid_spec()
    series = simulate(cfg.model_params(), grid, settings=cfg.solver_settings())
    snap = build_snapshots(series, cfg.rom.stride)
    bases = {mode: fit_pca(snap, cfg.rom.M, mode) for mode in {cfg.rom.lstm_normalization, cfg.rom.gan_normalization}}
    return cfg, grid, snap, bases


def level_nrmse(pred_latent, truth_rows, basis, grid) -> np.ndarray:
    """Per-level NRMSE averaged over the 8 (compartment, group) blocks."""
    p = basis.reconstruct(pred_latent).reshape(len(pred_latent), 4, 2, -1)
    t = np.asarray(truth_rows).reshape(len(truth_rows), 4, 2, -1)
    mask = active_mask(grid)
    return np.array([np.nanmean([nrmse(p[k, c, g], t[k, c, g], mask[c, g])
                                 for c in range(4) for g in range(2)]) for k in range(len(p))])


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    print(f"wrote {path}")
