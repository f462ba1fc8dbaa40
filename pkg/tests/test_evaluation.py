import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import build, query_input
from sidewalk_snow.classify import Measurement, Outcome, classify
from sidewalk_snow.evaluation import (
    LabeledQuery,
    NoBand,
    QueryCategory,
    SweepResult,
    UnknownScene,
    accuracy_from_measurements,
    emit_report,
    optimal_band,
    sweep,
    threshold_grid,
)

GRID = threshold_grid(0.0, 0.95, 0.05)
SNOW, CLEARED, CLEAR = QueryCategory.SNOW_COVERED, QueryCategory.CLEARED, QueryCategory.CLEAR


def measured(cat, coverages):
    return [(cat, Measurement(None, c, 1)) for c in coverages]


def pct_above(coverages, t):
    return 100.0 * len([c for c in coverages if c > t]) / len(coverages)


def test_grid_is_exact():
    assert len(GRID) == 20
    assert GRID[0] == 0.0 and GRID[-1] == 0.95
    assert GRID[12] == 0.6
    assert threshold_grid(0.58, 0.62, 0.01) == (0.58, 0.59, 0.6, 0.61, 0.62)


@given(st.integers(0, 100), st.integers(0, 100), st.integers(1, 50))
def test_grid_endpoints_and_steps(a, b, s):
    lo, hi = sorted((a, b))
    grid = threshold_grid(lo / 100, hi / 100, s / 100)
    assert grid[0] == lo / 100
    assert grid == tuple(round(lo / 100 + i * s / 100, 10) for i in range(len(grid)))
    assert grid[-1] <= hi / 100 < grid[-1] + s / 100 + 1e-12


@pytest.mark.parametrize("args", [(0.5, 0.4, 0.05), (0.0, 1.0, 0.0), (0.0, 1.0, -0.1)])
def test_grid_rejects_bad_arguments(args):
    with pytest.raises(ValueError):
        threshold_grid(*args)


def test_clear_set_is_perfect_everywhere():
    clear = [(CLEAR, Measurement(Outcome.NO_SNOW, None, 0))] * 4
    r = accuracy_from_measurements(clear, GRID)
    assert r.accuracy[CLEAR] == (100.0,) * 20


def test_snow_covered_steps_down():
    cov = [0.75, 0.8, 0.9]
    r = accuracy_from_measurements(measured(SNOW, cov), GRID)
    assert r.accuracy[SNOW] == tuple(pct_above(cov, t) for t in GRID)
    assert all(v == 100.0 for t, v in zip(GRID, r.accuracy[SNOW]) if t < 0.75)
    assert r.accuracy[SNOW][GRID.index(0.75)] == pytest.approx(200 / 3)
    assert r.accuracy[SNOW][GRID.index(0.9)] == 0.0


def test_cleared_steps_up():
    cov = [0.2, 0.36, 0.5]
    r = accuracy_from_measurements(measured(CLEARED, cov), GRID)
    assert r.accuracy[CLEARED] == tuple(100.0 * len([c for c in cov if c <= t]) / len(cov) for t in GRID)
    assert all(v == 100.0 for t, v in zip(GRID, r.accuracy[CLEARED]) if t >= 0.5)


coverages = st.lists(st.floats(0, 1), min_size=1, max_size=12)


@given(coverages, coverages, st.integers(1, 6))
def test_category_monotonicity(snow, cleared, n_clear):
    ms = measured(SNOW, snow) + measured(CLEARED, cleared)
    ms += [(CLEAR, Measurement(Outcome.NO_SNOW, None, 0))] * n_clear
    r = accuracy_from_measurements(ms, GRID)
    assert np.all(np.diff(r.accuracy[SNOW]) <= 0)
    assert np.all(np.diff(r.accuracy[CLEARED]) >= 0)
    assert len(set(r.accuracy[CLEAR])) == 1
    for i, t in enumerate(GRID):
        assert r.accuracy[SNOW][i] == pct_above(snow, t)


def test_out_of_scene_is_never_correct():
    ms = [(CLEAR, Measurement(Outcome.OUT_OF_SCENE, None, 0)), (CLEAR, Measurement(Outcome.NO_SNOW, None, 0))]
    assert set(accuracy_from_measurements(ms, GRID).accuracy[CLEAR]) == {50.0}


def step_result(snow_ok_upto=0.7, cleared_ok_from=0.4):
    return SweepResult(
        GRID,
        {
            SNOW: tuple(100.0 if t < snow_ok_upto else 0.0 for t in GRID),
            CLEARED: tuple(100.0 if t >= cleared_ok_from else 0.0 for t in GRID),
            CLEAR: (100.0,) * len(GRID),
        },
    )


def test_band_examples():
    full = SweepResult(GRID, {c: (100.0,) * 20 for c in QueryCategory})
    assert optimal_band(full) == (0.0, 0.95)
    lo, hi = optimal_band(step_result())
    assert 0.4 <= lo <= hi <= 0.7
    assert (lo, hi) == (0.4, 0.65)
    with pytest.raises(NoBand):
        optimal_band(SweepResult(GRID, {c: (0.0,) * 20 for c in QueryCategory}))


def test_band_ties_go_low():
    ok = [100.0 if i in (2, 3, 7, 8) else 0.0 for i in range(20)]
    assert optimal_band(SweepResult(GRID, {SNOW: tuple(ok)})) == (GRID[2], GRID[3])


@given(st.lists(st.lists(st.sampled_from([0.0, 50.0, 90.0, 100.0]), min_size=20, max_size=20), min_size=1, max_size=3), st.sampled_from([50.0, 90.0, 100.0]))
def test_band_is_maximal_run(rows, floor):
    r = SweepResult(GRID, dict(zip(QueryCategory, map(tuple, rows))))
    ok = [all(row[i] >= floor for row in rows) for i in range(20)]
    runs, i = [], 0
    while i < 20:
        if ok[i]:
            j = i
            while j + 1 < 20 and ok[j + 1]:
                j += 1
            runs.append((i, j))
            i = j + 1
        else:
            i += 1
    if not runs:
        with pytest.raises(NoBand):
            optimal_band(r, floor)
        return
    best = max(runs, key=lambda ij: (ij[1] - ij[0], -ij[0]))
    assert optimal_band(r, floor) == (GRID[best[0]], GRID[best[1]])


def test_sweep_result_validates():
    with pytest.raises(ValueError):
        SweepResult((0.0, 0.5), {SNOW: (100.0,)})
    with pytest.raises(ValueError):
        SweepResult((0.0,), {SNOW: (101.0,)})


def test_report_format(tmp_path):
    r = step_result()
    emit_report(r, tmp_path / "a.csv")
    emit_report(r, tmp_path / "b.csv")
    text = (tmp_path / "a.csv").read_text()
    lines = text.splitlines()
    assert lines[0] == "threshold,clear_pct,snow_covered_pct,cleared_pct"
    assert len(lines) == 21
    assert lines[1] == "0.00,100.00,100.00,0.00"
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_report_blank_for_absent_category(tmp_path):
    r = accuracy_from_measurements(measured(SNOW, [0.9]), (0.5,))
    emit_report(r, tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[1] == "0.50,,100.00,"


def test_sweep_needs_known_scene(small_bundle):
    lq = LabeledQuery(query_input(small_bundle, "q.png"), SNOW, "elsewhere")
    with pytest.raises(UnknownScene):
        sweep({}, [lq])


def test_sweep_equals_per_threshold_classification(small_bundle):
    model = build(small_bundle)
    q = query_input(small_bundle, "q.png")
    r = sweep({model.scene.scene_id: model}, [LabeledQuery(q, SNOW, model.scene.scene_id)])
    expected = tuple(100.0 if classify(model, q, t).outcome is Outcome.SNOW_COVERED else 0.0 for t in GRID)
    assert r.accuracy[SNOW] == expected
