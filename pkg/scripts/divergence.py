"""Free, teacher-forced and BLUE-corrected BDLSTM rollouts on the default run.

Writes per-level NRMSE for each seed and reports the first level at which
the free rollout error is at least twice the corrected one.
"""
import dataclasses

import numpy as np
from _common import level_nrmse, parser, setup, write_csv

from epitwin.assimilation import fit_blue, rollout_corrected
from epitwin.lstm import rollout_free, rollout_teacher_forced, train_bdlstm


def main():
    args = parser(__doc__.splitlines()[0]).parse_args()
    cfg, grid, snap, bases = setup(args)
    basis = bases[cfg.rom.lstm_normalization]
    z = basis.project(snap.data)
    start, N = cfg.rollout.start_level, cfg.lstm.window
    n = z.shape[0] - start
    truth = snap.data[start:]
    rows = []
    for seed in args.seeds:
        trained = train_bdlstm(z, dataclasses.replace(cfg.lstm, seed=seed))
        free = rollout_free(trained.predict, z[start - N:start], n)[N:]
        forced = rollout_teacher_forced(trained.predict, z, start, n, N)
        stats = fit_blue(trained.predict, z, N, cfg.lstm.train_fraction)
        corr = rollout_corrected(trained.predict, z, start, n, stats, N)
        e = {k: level_nrmse(v, truth, basis, grid) for k, v in
             (("free", free), ("teacher_forced", forced), ("corrected", corr))}
        ratio = e["free"] / e["corrected"]
        hit = np.flatnonzero(ratio >= 2.0)
        onset = int(hit[0]) + start if hit.size else None
        print(f"seed {seed}: free/corrected >= 2 from level {onset}; "
              f"max ratio up to level 100 {ratio[:101 - start].max():.2f}")
        rows += [[seed, start + k, e["free"][k], e["teacher_forced"][k], e["corrected"][k]] for k in range(n)]
    write_csv(args.out / "divergence.csv", ["seed", "level", "free", "teacher_forced", "corrected"], rows)


if __name__ == "__main__":
    main()
