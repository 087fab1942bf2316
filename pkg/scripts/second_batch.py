"""FFN+BLUE against BDLSTM+BLUE from the second start level.

Compares the RMSE of the first few corrected levels, where the FFN
baseline is expected to struggle, over several seeds.
"""
import dataclasses

import numpy as np
from _common import parser, setup, write_csv

from epitwin.assimilation import fit_blue, rollout_corrected
from epitwin.lstm import train_bdlstm
from epitwin.nn import train_ffn

TRANSIENT = 10  # levels counted as the initial transient


def main():
    args = parser(__doc__.splitlines()[0]).parse_args()
    cfg, grid, snap, bases = setup(args)
    basis = bases[cfg.rom.lstm_normalization]
    z = basis.project(snap.data)
    start, N = cfg.rollout.second_start_level, cfg.lstm.window
    n = z.shape[0] - start
    truth = snap.data[start:start + TRANSIENT]
    rows, wins = [], 0
    for seed in args.seeds:
        lstm = train_bdlstm(z, dataclasses.replace(cfg.lstm, seed=seed))
        ffn = train_ffn(z, dataclasses.replace(cfg.ffn, seed=seed))
        errs = {}
        for name, predict in (("bdlstm-blue", lstm.predict), ("ffn-blue", ffn.predict)):
            stats = fit_blue(predict, z, N, cfg.lstm.train_fraction)
            pred = basis.reconstruct(rollout_corrected(predict, z, start, n, stats, N)[:TRANSIENT])
            errs[name] = float(np.sqrt(np.mean((pred - truth) ** 2)))
        wins += errs["ffn-blue"] > errs["bdlstm-blue"]
        print(f"seed {seed}: initial RMSE BDLSTM+BLUE {errs['bdlstm-blue']:.3f}, FFN+BLUE {errs['ffn-blue']:.3f}")
        rows.append([seed, errs["bdlstm-blue"], errs["ffn-blue"]])
    print(f"FFN+BLUE worse in {wins}/{len(args.seeds)} seeds")
    write_csv(args.out / "second_batch.csv", ["seed", "bdlstm_blue_rmse", "ffn_blue_rmse"], rows)


if __name__ == "__main__":
    main()
