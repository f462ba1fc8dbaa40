"""Threshold sweeps over labeled queries and selection of a safe threshold band."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from decimal import Decimal
from enum import Enum
from pathlib import Path

from .classify import ClassifyParams, Measurement, Outcome, QueryInput, decide, measure
from .sidewalk import SidewalkModel


class QueryCategory(str, Enum):
    CLEAR = "clear"
    SNOW_COVERED = "snow_covered"
    CLEARED = "cleared"

    @property
    def expected(self) -> str:
        return Outcome.SNOW_COVERED.value if self is QueryCategory.SNOW_COVERED else Outcome.CLEAR.value


REPORT_COLUMNS = {QueryCategory.CLEAR: "clear_pct", QueryCategory.SNOW_COVERED: "snow_covered_pct", QueryCategory.CLEARED: "cleared_pct"}


class UnknownScene(KeyError):
    def __init__(self, query: str, scene_id: str):
        super().__init__(f"query {query!r} refers to unknown scene {scene_id!r}")
        self.query = query
        self.scene_id = scene_id


class NoBand(ValueError):
    pass


@dataclass(frozen=True)
class LabeledQuery:
    query: QueryInput
    category: QueryCategory
    scene_id: str

    @property
    def expected(self) -> str:
        return self.category.expected


@dataclass(frozen=True)
class SweepResult:
    thresholds: tuple[float, ...]
    accuracy: dict  # QueryCategory -> tuple of percentages aligned with thresholds

    def __post_init__(self):
        for cat, values in self.accuracy.items():
            if len(values) != len(self.thresholds):
                raise ValueError(f"{cat}: {len(values)} values for {len(self.thresholds)} thresholds")
            if any(not 0.0 <= v <= 100.0 for v in values):
                raise ValueError(f"{cat}: accuracy outside [0, 100]")


def threshold_grid(t_min: float, t_max: float, step: float) -> tuple[float, ...]:
    """Inclusive grid stepped in exact decimal arithmetic."""
    lo, hi, st = Decimal(str(t_min)), Decimal(str(t_max)), Decimal(str(step))
    if st <= 0:
        raise ValueError("step must be positive")
    if lo > hi:
        raise ValueError("t_min must not exceed t_max")
    count = int((hi - lo) / st) + 1
    return tuple(float(lo + i * st) for i in range(count))


def accuracy_from_measurements(
    measurements: list[tuple[QueryCategory, Measurement]], thresholds
) -> SweepResult:
    """Percent correct per category at each threshold; needs only the cached measurements."""
    accuracy = {}
    for cat in QueryCategory:
        group = [m for c, m in measurements if c is cat]
        if not group:
            continue
        accuracy[cat] = tuple(
            100.0 * sum(decide(m, t).label == cat.expected for m in group) / len(group) for t in thresholds
        )
    return SweepResult(tuple(thresholds), accuracy)


def sweep(
    models: dict[str, SidewalkModel],
    queries: list[LabeledQuery],
    t_min: float = 0.0,
    t_max: float = 0.95,
    step: float = 0.05,
    params: ClassifyParams = ClassifyParams(),
) -> SweepResult:
    """Measure every query once, then score it at each grid threshold.

    A query rejected by the GPS gate is never correct.

    Raises:
        UnknownScene: a query names a scene missing from ``models``.
    """
    thresholds = threshold_grid(t_min, t_max, step)
    measurements = []
    for lq in queries:
        if lq.scene_id not in models:
            raise UnknownScene(lq.query.name, lq.scene_id)
        measurements.append((lq.category, measure(models[lq.scene_id], lq.query, params)))
    return accuracy_from_measurements(measurements, thresholds)


def optimal_band(r: SweepResult, floor_pct: float = 100.0) -> tuple[float, float]:
    """Longest contiguous run of thresholds where every category scores >= ``floor_pct``.

    Ties go to the run that starts lowest.

    Raises:
        NoBand: no threshold qualifies.
    """
    if not 0.0 < floor_pct <= 100.0:
        raise ValueError("floor_pct must be in (0, 100]")
    ok = [all(values[i] >= floor_pct for values in r.accuracy.values()) for i in range(len(r.thresholds))]
    best, start = None, None
    for i, good in enumerate(ok + [False]):
        if good and start is None:
            start = i
        elif not good and start is not None:
            if best is None or i - start > best[1] - best[0] + 1:
                best = (start, i - 1)
            start = None
    if best is None:
        raise NoBand(f"no threshold reaches {floor_pct}% in every category")
    return r.thresholds[best[0]], r.thresholds[best[1]]


def emit_report(r: SweepResult, path) -> None:
    """Write ``threshold,clear_pct,snow_covered_pct,cleared_pct`` rows; missing categories are blank."""
    with Path(path).open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["threshold", *REPORT_COLUMNS.values()])
        for i, t in enumerate(r.thresholds):
            row = [f"{t:.2f}"]
            for cat in REPORT_COLUMNS:
                row.append(f"{r.accuracy[cat][i]:.2f}" if cat in r.accuracy else "")
            writer.writerow(row)
