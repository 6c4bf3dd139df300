"""analysis.py

The two study analyses over RunRecords.

Conditional percentile: for each value of a choice, the p-th percentile of the
metric among runs with that value. Error bars come from ``repeats`` halvings:
each repeat draws half of all runs without replacement, restricts to the value
and recomputes the percentile; the reported estimate is the mean of the
repeats and the bars are mean +/- std.

Top-fraction ratio: frequency of a value among the best ``top_fraction`` runs
divided by its frequency among all runs. Runs tied with the cutoff score are
part of the top set.

Percentiles use linear interpolation between order statistics
(``numpy.percentile`` default), so the 95th percentile of 1..100 is 95.05.

By default both analyses run per task (env id, demonstration set) and average
the per-task numbers; ``pooled=True`` treats all runs as one population.
Failed runs and runs without the metric are ignored.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, Hashable, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ail_bench.config import choice_names
from ail_bench.errors import ConfigurationError
from ail_bench.run_log import RunRecord

logger = logging.getLogger(__name__)

Metric = Literal["average_score", "final_score"]
QUANTILES = (90.0, 95.0, 99.0, 100.0)


class AnalysisQuery(BaseModel):
    """One analysis request.

    Attributes:
        choice: Choice whose values are compared.
        by: Second choice for a two-way grid.
        metric: Score to analyse.
        percentile: p in (0, 100).
        top_fraction: q in (0, 1).
        repeats: Halvings for the error bars.
        pooled: Pool all tasks instead of averaging per-task results.
        seed: Seed of the halving stream.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    choice: str
    by: Optional[str] = None
    metric: Metric = "average_score"
    percentile: float = Field(95.0, gt=0.0, lt=100.0)
    top_fraction: float = Field(0.05, gt=0.0, lt=1.0)
    repeats: int = Field(20, ge=1)
    pooled: bool = False
    seed: int = 0

    @property
    def name(self) -> str:
        base = self.choice if self.by is None else f"{self.choice}__by__{self.by}"
        return f"{base}__{self.metric}"


@dataclass(frozen=True)
class PercentileEstimate:
    """Bootstrap estimate for one value (or value pair).

    ``point`` is the percentile over every matching run; ``estimate`` is the
    mean over the halvings and ``err_low``/``err_high`` are estimate -/+ std.
    """
    estimate: float
    err_low: float
    err_high: float
    std: float
    point: float
    count: int


@dataclass(frozen=True)
class Grid:
    """Two-way conditional percentiles; missing cells are NaN."""
    rows: List[Any]
    cols: List[Any]
    values: np.ndarray


def check_choice(name: str) -> None:
    valid = choice_names()
    if name not in valid:
        raise ConfigurationError(f"unknown choice {name!r}; valid choices: {', '.join(valid)}")


def usable_records(records: Sequence[RunRecord], metric: str) -> List[RunRecord]:
    """Successful runs that carry ``metric``, in a canonical order."""
    ok = [r for r in records if r.status == "ok" and r.metric(metric) is not None]
    dropped = len(records) - len(ok)
    if dropped:
        logger.debug("ignoring runs=%d (failed or without %s)", dropped, metric)
    return sorted(ok, key=lambda r: (r.task, r.config_hash, r.seed, r.metric(metric)))


def sort_values(values) -> List[Any]:
    """Numbers (and bools) in numeric order, then strings alphabetically."""
    def key(v):
        if isinstance(v, (bool, int, float)):
            return (0, float(v), "")
        return (1, 0.0, str(v))
    return sorted(values, key=key)


def _groups(records: Sequence[RunRecord], pooled: bool) -> List[List[RunRecord]]:
    if pooled:
        return [list(records)]
    by_task: Dict[Tuple[str, str], List[RunRecord]] = {}
    for r in records:
        by_task.setdefault(r.task, []).append(r)
    return [by_task[t] for t in sorted(by_task)]


def _percentiles_by(records: Sequence[RunRecord], key_fn: Callable[[RunRecord], Optional[Hashable]],
                    query: AnalysisQuery) -> Dict[Hashable, PercentileEstimate]:
    runs = usable_records(records, query.metric)
    groups = _groups(runs, query.pooled)
    keys = {key_fn(r) for r in runs} - {None}
    if not runs:
        return {}

    def percentile_of(sample: Sequence[RunRecord]) -> Dict[Hashable, float]:
        # per group, then averaged over the groups where the key occurs
        acc: Dict[Hashable, List[float]] = {}
        for group in groups:
            members = set(map(id, group))
            scores: Dict[Hashable, List[float]] = {}
            for r in sample:
                if id(r) in members:
                    k = key_fn(r)
                    if k is not None:
                        scores.setdefault(k, []).append(r.metric(query.metric))
            for k, s in scores.items():
                acc.setdefault(k, []).append(float(np.percentile(s, query.percentile)))
        return {k: float(np.mean(v)) for k, v in acc.items()}

    point = percentile_of(runs)
    rng = np.random.default_rng(query.seed)
    draws: Dict[Hashable, List[float]] = {k: [] for k in keys}
    half = max(1, len(runs) // 2)
    for _ in range(query.repeats):
        idx = rng.choice(len(runs), size=half, replace=False)
        for k, v in percentile_of([runs[i] for i in np.sort(idx)]).items():
            draws[k].append(v)

    out: Dict[Hashable, PercentileEstimate] = {}
    for k in keys:
        count = sum(1 for r in runs if key_fn(r) == k)
        if not draws[k]:
            # too rare to land in any half: fall back to the full-sample number
            logger.warning("no halving contained value=%r; reporting the full-sample percentile", k)
            draws[k] = [point[k]]
        mean, std = float(np.mean(draws[k])), float(np.std(draws[k]))
        out[k] = PercentileEstimate(mean, mean - std, mean + std, std, point[k], count)
    return out


def choice_value(record: RunRecord, name: str) -> Optional[Any]:
    return record.config.get(name)


def conditional_percentile(records: Sequence[RunRecord], query: AnalysisQuery) -> Dict[Any, PercentileEstimate]:
    """Per-value conditional percentile of ``query.metric`` with halving error bars.

    Values seen in no successful run are absent; runs where the choice is
    inactive (an unselected sub-choice) do not count.

    Raises:
        ConfigurationError: Unknown choice name.
    """
    check_choice(query.choice)
    out = _percentiles_by(records, lambda r: choice_value(r, query.choice), query)
    if not out:
        logger.warning("no usable runs for choice=%s metric=%s", query.choice, query.metric)
    return {v: out[v] for v in sort_values(out)}


def _top_ratio(runs: Sequence[RunRecord], choice: str, metric: str, q: float) -> Dict[Any, float]:
    scores = np.array([r.metric(metric) for r in runs], dtype=np.float64)
    k = max(1, math.ceil(q * len(runs)))
    cutoff = np.sort(scores)[::-1][k - 1]
    top = [r for r, s in zip(runs, scores) if s >= cutoff]
    all_values = [choice_value(r, choice) for r in runs if choice_value(r, choice) is not None]
    top_values = [choice_value(r, choice) for r in top if choice_value(r, choice) is not None]
    if not all_values:
        return {}
    ratios = {}
    for v in set(all_values):
        freq_all = all_values.count(v) / len(all_values)
        freq_top = top_values.count(v) / len(top_values) if top_values else 0.0
        ratios[v] = freq_top / freq_all
    return ratios


def top_fraction_ratio(records: Sequence[RunRecord], query: AnalysisQuery) -> Dict[Any, float]:
    """Per-value ratio of top-``q`` frequency to overall frequency.

    Pooled, the ratios weighted by the overall frequencies sum to exactly 1.
    Per task, each value's ratio is the mean over the tasks where it occurs.

    Raises:
        ConfigurationError: Unknown choice name.
    """
    check_choice(query.choice)
    runs = usable_records(records, query.metric)
    acc: Dict[Any, List[float]] = {}
    for group in _groups(runs, query.pooled):
        if not group:
            continue
        for v, ratio in _top_ratio(group, query.choice, query.metric, query.top_fraction).items():
            acc.setdefault(v, []).append(ratio)
    return {v: float(np.mean(acc[v])) for v in sort_values(acc)}


def conditional_grid(records: Sequence[RunRecord], choice_a: str, choice_b: str, query: AnalysisQuery) -> Grid:
    """Conditional percentile on every (value of a, value of b) pair.

    Raises:
        ConfigurationError: Unknown choice names.
    """
    check_choice(choice_a)
    check_choice(choice_b)

    def pair(r: RunRecord):
        a, b = choice_value(r, choice_a), choice_value(r, choice_b)
        return None if a is None or b is None else (a, b)

    cells = _percentiles_by(records, pair, query)
    rows = sort_values({a for a, _ in cells})
    cols = sort_values({b for _, b in cells})
    values = np.full((len(rows), len(cols)), np.nan)
    for (a, b), est in cells.items():
        values[rows.index(a), cols.index(b)] = est.estimate
    return Grid(rows, cols, values)


@dataclass(frozen=True)
class QuantileRow:
    env_id: str
    demos: str
    metric: str
    count: int
    quantiles: Tuple[float, ...]


def quantile_table(records: Sequence[RunRecord], metric: Metric = "final_score",
                   quantiles: Sequence[float] = QUANTILES) -> List[QuantileRow]:
    """Per-task quantiles (100 is the maximum) of ``metric`` over successful runs."""
    runs = usable_records(records, metric)
    rows = []
    for group in _groups(runs, pooled=False):
        scores = [r.metric(metric) for r in group]
        env_id, demos = group[0].task
        rows.append(QuantileRow(env_id, demos, metric, len(scores),
                                tuple(float(np.percentile(scores, q)) for q in quantiles)))
    return rows
