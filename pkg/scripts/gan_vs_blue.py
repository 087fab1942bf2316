"""Predictive GAN against BDLSTM+BLUE: Table-1 style mean NRMSE per seed.

Also checks that the GAN rollout stays inside three times the training
range of every principal component.
"""
import dataclasses

import numpy as np
from _common import parser, setup, write_csv

from epitwin.assimilation import TruthStream, fit_blue, rollout_corrected
from epitwin.evaluation import TABLE_COLUMNS, summarize
from epitwin.gan import rollout_predictive_gan, train_gan
from epitwin.lstm import train_bdlstm
from epitwin.rom import pc_weight_matrix


def main():
    p = parser(__doc__.splitlines()[0])
    p.add_argument("--horizon", type=int, default=None)
    args = p.parse_args()
    cfg, grid, snap, bases = setup(args)
    start = cfg.rollout.start_level
    n = args.horizon or snap.n_levels - start
    truth = snap.data[start:start + n]
    lb, gb = bases[cfg.rom.lstm_normalization], bases[cfg.rom.gan_normalization]
    zl, zg = lb.project(snap.data), gb.project(snap.data)
    rows, wins = [], 0
    for seed in args.seeds:
        lstm = train_bdlstm(zl, dataclasses.replace(cfg.lstm, seed=seed))
        stats = fit_blue(lstm.predict, zl, cfg.lstm.window, cfg.lstm.train_fraction)
        blue = summarize(rollout_corrected(lstm.predict, zl, start, n, stats, cfg.lstm.window), truth, grid, lb)
        gan = train_gan(zg, dataclasses.replace(cfg.gan, seed=seed))
        stream = TruthStream(zg)
        pred, _ = rollout_predictive_gan(gan, stream, start, n, pc_weight_matrix(gb), cfg.latent_opt, seed)
        span = zg.max(0) - zg.min(0)
        inside = np.all((pred >= zg.min(0) - span) & (pred <= zg.max(0) + span), axis=1)
        rep = summarize(pred, truth, grid, gb)
        wins += rep.mean_nrmse[0, 0] < blue.mean_nrmse[0, 0]
        print(f"seed {seed}: H-S GAN {rep.mean_nrmse[0, 0]:.3f} vs BLUE {blue.mean_nrmse[0, 0]:.3f}; "
              f"inside 3x range {inside.sum()}/{n}; truth reads {len(stream.log)}")
        rows += [[seed, "bdlstm-blue", *blue.table_row()], [seed, "predictive-gan", *rep.table_row()]]
    print(f"GAN better on H-S in {wins}/{len(args.seeds)} seeds")
    write_csv(args.out / "gan_vs_blue.csv", ["seed", "method", *TABLE_COLUMNS], rows)


if __name__ == "__main__":
    main()
