"""Error metrics over active cells, summary tables and wall-clock timing."""
from __future__ import annotations

import csv
import math
import statistics
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import BLOCKED, COMPARTMENTS, GROUPS, HOME, HOMES, GridSpec

TABLE_COLUMNS = [f"{g}-{c}" for g in GROUPS for c in COMPARTMENTS]
EXCLUDED_LEVELS = 50


def active_mask(grid: GridSpec) -> np.ndarray:
    """(4, 2, n_cells) boolean mask: Home only in region 2, Mobile in 2 and 3."""
    mask = np.zeros((4, 2, grid.n_cells), dtype=bool)
    mask[:, HOME] = grid.region_map == HOMES
    mask[:, 1] = grid.region_map != BLOCKED
    return mask


def _masked(pred, truth, mask):
    pred, truth = np.asarray(pred, dtype=float), np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    if mask is None:
        mask = np.ones(pred.shape, dtype=bool)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), pred.shape)
    if not mask.any():
        raise ValueError("empty mask")
    return pred[mask], truth[mask]


def rmse(pred, truth, mask=None) -> float:
    u, v = _masked(pred, truth, mask)
    return float(np.linalg.norm(u - v) / math.sqrt(u.size))


def nrmse(pred, truth, mask=None) -> float:
    """Relative error norm; NaN marks a level whose truth is identically zero."""
    u, v = _masked(pred, truth, mask)
    norm = np.linalg.norm(v)
    if norm == 0:
        return math.nan
    return float(np.linalg.norm(u - v) / norm)


def skill_score(rmse_a: float, rmse_b: float) -> float:
    """1 - rmse_a / rmse_b; positive favours method a.

    ``rmse_b == 0`` gives ``-inf`` when ``rmse_a > 0`` and 0 when both vanish.
    """
    if rmse_b > 0:
        return 1.0 - rmse_a / rmse_b
    return -math.inf if rmse_a > 0 else 0.0


@dataclass
class EvalReport:
    rmse: np.ndarray  # (levels, 4, 2)
    nrmse: np.ndarray  # (levels, 4, 2), NaN where undefined
    mean_nrmse: np.ndarray  # (4, 2) over levels >= excluded
    undefined: np.ndarray  # (4, 2) count of undefined levels in the average window
    rmse_map: np.ndarray  # (4, 2, n_cells) per-cell RMSE over the averaging window
    excluded_levels: int = EXCLUDED_LEVELS
    timings: dict = field(default_factory=dict)

    def table_row(self) -> list[float]:
        """Mean NRMSE in H-S ... M-R column order."""
        return [float(self.mean_nrmse[c, g]) for g in range(2) for c in range(4)]


def physical(latent, basis) -> np.ndarray:
    """Reconstruct (levels, 4, 2, n_cells) fields from latent rows."""
    rec = basis.reconstruct(np.atleast_2d(latent))
    return rec.reshape(rec.shape[0], 4, 2, -1)


def summarize(pred, truth, grid: GridSpec, basis=None, excluded: int = EXCLUDED_LEVELS,
              timings: dict | None = None) -> EvalReport:
    """Metrics of predicted against true fields.

    ``pred`` and ``truth`` are aligned level by level and are either full
    states (levels x 8*n_cells) or, when ``basis`` is given, latent rows for
    ``pred``.
    """
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if basis is not None and pred.shape[-1] == basis.M:
        pred = basis.reconstruct(pred)
    n = grid.n_cells
    pred = pred.reshape(pred.shape[0], 4, 2, n)
    truth = truth.reshape(truth.shape[0], 4, 2, n)
    if pred.shape != truth.shape:
        raise ValueError(f"misaligned series: {pred.shape[0]} predicted vs {truth.shape[0]} true levels")
    levels = pred.shape[0]
    if levels <= excluded:
        raise ValueError(f"need more than {excluded} levels to average")
    mask = active_mask(grid)
    r = np.empty((levels, 4, 2))
    nr = np.empty((levels, 4, 2))
    for k in range(levels):
        for c in range(4):
            for g in range(2):
                m = mask[c, g]
                r[k, c, g] = rmse(pred[k, c, g], truth[k, c, g], m)
                nr[k, c, g] = nrmse(pred[k, c, g], truth[k, c, g], m)
    window = nr[excluded:]
    undefined = np.isnan(window).sum(axis=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-undefined columns stay NaN
        mean = np.nanmean(window, axis=0)
    err = pred[excluded:] - truth[excluded:]
    rmap = np.sqrt(np.mean(err**2, axis=0))
    rmap[~mask] = 0.0
    return EvalReport(r, nr, mean, undefined, rmap, excluded, dict(timings or {}))


def skill_map(report_a: EvalReport, report_b: EvalReport, grid: GridSpec) -> np.ndarray:
    """Per-cell skill score of a against b; NaN outside the active cells."""
    mask = active_mask(grid)
    out = np.full(mask.shape, np.nan)
    for idx in zip(*np.nonzero(mask)):
        out[idx] = skill_score(report_a.rmse_map[idx], report_b.rmse_map[idx])
    return out


# ---------------------------------------------------------------- CSV output

def write_table1(path, reports: dict[str, EvalReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", *TABLE_COLUMNS])
        for name, rep in reports.items():
            w.writerow([name, *(repr(v) for v in rep.table_row())])


def read_table1(path) -> dict[str, list[float]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["method", *TABLE_COLUMNS]:
        raise ValueError(f"unexpected header {rows[0]}")
    return {r[0]: [float(x) for x in r[1:]] for r in rows[1:]}


def write_times(path, rows: dict[str, dict]) -> None:
    """Rows of seconds per 9-level set, speed-up against the solver, storage bytes."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "seconds_per_set", "min", "max", "speed_up", "storage_bytes"])
        for name, r in rows.items():
            w.writerow([name, repr(r["median"]), repr(r["min"]), repr(r["max"]),
                        repr(r.get("speed_up", math.nan)), r.get("storage_bytes", "")])


def write_map(path, values: np.ndarray, grid: GridSpec, name: str = "value") -> None:
    """Long-form per-cell CSV: x, y, z, compartment, group, value."""
    xyz = grid.cell_xyz()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z", "compartment", "group", name])
        for c in range(4):
            for g in range(2):
                for cell in range(grid.n_cells):
                    x, y, z = xyz[cell]
                    w.writerow([x, y, z, COMPARTMENTS[c], GROUPS[g], repr(float(values[c, g, cell]))])


def write_series(path, report: EvalReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", *(f"rmse_{c}" for c in TABLE_COLUMNS), *(f"nrmse_{c}" for c in TABLE_COLUMNS)])
        for k in range(report.rmse.shape[0]):
            r = [report.rmse[k, c, g] for g in range(2) for c in range(4)]
            nr = [report.nrmse[k, c, g] for g in range(2) for c in range(4)]
            w.writerow([k, *(repr(float(v)) for v in r + nr)])


# ---------------------------------------------------------------- timing

def time_harness(fn, reps: int = 5, baseline: dict | None = None) -> dict:
    """Median/min/max wall time of ``fn()``, plus speed-up against a baseline."""
    if reps < 3:
        raise ValueError("reps must be >= 3")
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    out = {"median": statistics.median(times), "min": min(times), "max": max(times), "reps": reps}
    if baseline is not None:
        out["speed_up"] = baseline["median"] / out["median"]
    return out


def artifact_size(*paths) -> int:
    return sum(Path(p).stat().st_size for p in paths)
