import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epitwin.evaluation import (EXCLUDED_LEVELS, TABLE_COLUMNS, active_mask, nrmse, read_table1, rmse,
                                skill_map, skill_score, summarize, time_harness, write_map, write_table1,
                                write_times)
from epitwin.model import GridSpec


def loop_rmse(u, v, mask):
    s, n = 0.0, 0
    for a, b, m in zip(u, v, mask):
        if m:
            s += (a - b) ** 2
            n += 1
    return math.sqrt(s / n)


def loop_nrmse(u, v, mask):
    s, t = 0.0, 0.0
    for a, b, m in zip(u, v, mask):
        if m:
            s += (a - b) ** 2
            t += b * b
    return math.sqrt(s) / math.sqrt(t)


def test_metrics_match_scalar_loops(rng):
    for _ in range(100):
        n = int(rng.integers(5, 60))
        u, v = rng.normal(size=n), rng.normal(size=n) * rng.uniform(0.1, 100)
        mask = rng.random(n) < 0.6
        mask[0] = True
        assert abs(rmse(u, v, mask) - loop_rmse(u, v, mask)) <= 1e-12 * max(1.0, loop_rmse(u, v, mask))
        assert abs(nrmse(u, v, mask) - loop_nrmse(u, v, mask)) <= 1e-12 * max(1.0, loop_nrmse(u, v, mask))
        a, b = rng.uniform(0.01, 5, size=2)
        assert abs(skill_score(a, b) - (1 - a / b)) <= 1e-12


def test_trivial_identities(rng):
    v = rng.normal(size=30)
    assert rmse(v, v) == 0.0
    assert nrmse(np.zeros(30), v) == 1.0
    assert skill_score(1.0, 2.0) > 0 and skill_score(2.0, 1.0) < 0
    assert skill_score(1.0, 0.0) == -math.inf
    assert skill_score(0.0, 0.0) == 0.0


def test_nrmse_undefined_on_zero_truth():
    assert math.isnan(nrmse(np.ones(4), np.zeros(4)))


def test_empty_mask_and_shape_errors():
    with pytest.raises(ValueError, match="empty mask"):
        rmse(np.ones(3), np.ones(3), np.zeros(3, dtype=bool))
    with pytest.raises(ValueError, match="shape"):
        rmse(np.ones(3), np.ones(4))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=20), st.floats(0.01, 100))
def test_rmse_scales_linearly(values, c):
    u = np.array(values)
    v = np.zeros_like(u)
    assert rmse(c * u, v) == pytest.approx(c * rmse(u, v), rel=1e-12, abs=1e-300)


def test_active_mask_regions():
    grid = GridSpec()
    mask = active_mask(grid)
    assert mask.shape == (4, 2, 100)
    for c in range(4):
        np.testing.assert_array_equal(mask[c, 0], grid.region_map == 2)
        np.testing.assert_array_equal(mask[c, 1], grid.region_map >= 2)
    assert not mask[:, :, grid.region_map == 1].any()
    assert mask[0, 0].sum() < mask[0, 1].sum()


def _series(rng, grid, levels):
    truth = rng.uniform(1, 100, size=(levels, 4, 2, grid.n_cells))
    pred = truth + rng.normal(size=truth.shape)
    return pred.reshape(levels, -1), truth.reshape(levels, -1)


def test_summarize_recomputes_per_level(rng):
    grid = GridSpec()
    pred, truth = _series(rng, grid, 60)
    rep = summarize(pred, truth, grid)
    mask = active_mask(grid)
    p, t = pred.reshape(60, 4, 2, -1), truth.reshape(60, 4, 2, -1)
    for k in (0, 17, 59):
        for c in range(4):
            for g in range(2):
                assert rep.rmse[k, c, g] == pytest.approx(loop_rmse(p[k, c, g], t[k, c, g], mask[c, g]), rel=1e-12)
    np.testing.assert_allclose(rep.mean_nrmse, rep.nrmse[EXCLUDED_LEVELS:].mean(axis=0), rtol=1e-14)
    assert len(rep.table_row()) == len(TABLE_COLUMNS) == 8
    assert rep.table_row()[0] == rep.mean_nrmse[0, 0]  # H-S
    assert rep.table_row()[4] == rep.mean_nrmse[0, 1]  # M-S
    assert np.all(rep.rmse_map[~mask] == 0)
    cell = np.flatnonzero(mask[1, 1])[0]
    err = p[EXCLUDED_LEVELS:, 1, 1, cell] - t[EXCLUDED_LEVELS:, 1, 1, cell]
    assert rep.rmse_map[1, 1, cell] == pytest.approx(np.sqrt(np.mean(err**2)), rel=1e-12)


def test_summarize_drops_and_counts_undefined(rng):
    grid = GridSpec()
    pred, truth = _series(rng, grid, 60)
    t = truth.reshape(60, 4, 2, -1)
    t[55:58, 1, 0] = 0.0  # empty Home-Exposed at three levels
    rep = summarize(pred, t.reshape(60, -1), grid)
    assert rep.undefined[1, 0] == 3 and rep.undefined.sum() == 3
    assert np.isfinite(rep.mean_nrmse).all()


def test_summarize_needs_levels_past_exclusion(rng):
    grid = GridSpec()
    pred, truth = _series(rng, grid, 50)
    with pytest.raises(ValueError):
        summarize(pred, truth, grid)


def test_perfect_prediction_zero_error(rng):
    grid = GridSpec()
    _, truth = _series(rng, grid, 55)
    rep = summarize(truth, truth, grid)
    assert np.all(rep.mean_nrmse == 0) and np.all(rep.rmse_map == 0)


def test_skill_map_signs(rng):
    grid = GridSpec()
    pred, truth = _series(rng, grid, 55)
    good = summarize(pred, truth, grid)
    worse = summarize(truth + 2 * (pred - truth), truth, grid)
    ss = skill_map(good, worse, grid)
    mask = active_mask(grid)
    assert np.all(ss[mask] == pytest.approx(0.5))
    assert np.all(np.isnan(ss[~mask]))


def test_csv_writers(tmp_path, rng):
    grid = GridSpec()
    pred, truth = _series(rng, grid, 55)
    rep = summarize(pred, truth, grid)
    write_table1(tmp_path / "t.csv", {"a": rep, "b": rep})
    table = read_table1(tmp_path / "t.csv")
    assert list(table) == ["a", "b"] and table["a"] == rep.table_row()
    write_map(tmp_path / "m.csv", rep.rmse_map, grid, "rmse")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "x,y,z,compartment,group,rmse" and len(lines) == 1 + 800
    blocks = {tuple(line.split(",")[3:5]) for line in lines[1:]}
    assert len(blocks) == 8
    write_times(tmp_path / "times.csv", {"SEIRS": {"median": 1.0, "min": 0.9, "max": 1.1, "speed_up": 1.0}})
    assert (tmp_path / "times.csv").read_text().startswith("method,seconds_per_set")


def test_time_harness():
    calls = []
    out = time_harness(lambda: calls.append(1), reps=4)
    assert len(calls) == 4 and out["reps"] == 4
    assert out["min"] <= out["median"] <= out["max"]
    base = {"median": out["median"] * 10}
    assert time_harness(lambda: None, 3, base)["speed_up"] > 0
    with pytest.raises(ValueError):
        time_harness(lambda: None, reps=2)
