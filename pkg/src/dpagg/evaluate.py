"""Error metrics, multi-seed experiment runs and the L sweep."""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from dpagg.errors import ContractViolation, InvalidParameterError
from dpagg.mechanisms import Mechanism
from dpagg.model import Dataset, Key, split_budget
from dpagg.pipelines import PipelineReport, RunOptions, exact_report, run_pipeline

NOT_PRIVATE_NOTE = ("note: the L sweep compares against exact aggregates; "
                    "this approach is not itself differentially private")


class UndefinedMetricError(ContractViolation):
    """A metric was requested over an empty key set."""


def absolute_error(dp: Mapping[Key, float], exact: Mapping[Key, float],
                   over: str = "retained") -> float:
    """Mean absolute difference per key.

    ``over="retained"`` averages over the keys of ``dp``. ``over="all"``
    averages over the keys of ``exact``, and counts a dropped key as 0.
    """
    if over == "retained":
        if not dp:
            raise UndefinedMetricError("no retained keys")
        missing = [k for k in dp if k not in exact]
        if missing:
            raise ContractViolation(f"retained keys missing from the exact result: {missing[:5]}")
        return math.fsum(abs(dp[k] - exact[k]) for k in dp) / len(dp)
    if over == "all":
        if not exact:
            raise UndefinedMetricError("exact result has no keys")
        return math.fsum(abs(dp.get(k, 0.0) - exact[k]) for k in exact) / len(exact)
    raise InvalidParameterError(f"unknown mode {over!r}; use 'retained' or 'all'")


def relative_error(dp: Mapping[Key, float], exact: Mapping[Key, float]) -> float:
    """Mean over retained keys of ``|dp - exact| / exact``."""
    if not dp:
        raise UndefinedMetricError("no retained keys")
    terms = []
    for k, v in dp.items():
        truth = exact.get(k)
        if truth is None:
            raise ContractViolation(f"retained key {k!r} missing from the exact result")
        if not truth > 0:
            raise ContractViolation(f"exact value for {k!r} is {truth}, need > 0")
        terms.append(abs(v - truth) / truth)
    return math.fsum(terms) / len(terms)


@dataclass(frozen=True)
class ErrorReport:
    abs_retained: float
    rel_retained: float
    abs_all_keys: float
    retained: int
    runtime_factor: float


def error_report(report: PipelineReport, exact: PipelineReport) -> ErrorReport:
    """Metrics for one run. Retained-key metrics are NaN when nothing was retained."""
    if report.outputs:
        abs_r = absolute_error(report.outputs, exact.outputs, "retained")
        rel_r = relative_error(report.outputs, exact.outputs)
    else:
        abs_r = rel_r = math.nan
    factor = report.wall_ms / exact.wall_ms if exact.wall_ms > 0 else math.nan
    return ErrorReport(abs_retained=abs_r, rel_retained=rel_r,
                       abs_all_keys=absolute_error(report.outputs, exact.outputs, "all"),
                       retained=report.retained, runtime_factor=factor)


def mean_std_se(values: Sequence[float]) -> tuple[float, float, float]:
    """Mean, sample standard deviation and standard error, ignoring NaNs."""
    vals = [v for v in values if not math.isnan(v)]
    if not vals:
        return math.nan, math.nan, math.nan
    mean = statistics.fmean(vals)
    if len(vals) == 1:
        return mean, 0.0, 0.0
    sd = statistics.stdev(vals)
    return mean, sd, sd / math.sqrt(len(vals))


RUN_COLUMNS = ["pipeline", "dataset", "l_bound", "epsilon", "delta", "seed", "retained",
               "abs_retained", "rel_retained", "abs_all_keys", "runtime_factor",
               "shuffle_stages", "shuffled_records", "wall_ms"]


def run_row(report: PipelineReport, exact: PipelineReport, dataset_id: str,
            epsilon: float, delta: float, l_bound: int, seed: int) -> dict:
    err = error_report(report, exact)
    return {
        "pipeline": report.pipeline, "dataset": dataset_id, "l_bound": l_bound,
        "epsilon": epsilon, "delta": delta, "seed": seed, "retained": err.retained,
        "abs_retained": err.abs_retained, "rel_retained": err.rel_retained,
        "abs_all_keys": err.abs_all_keys, "runtime_factor": err.runtime_factor,
        "shuffle_stages": report.stats.shuffle_stages,
        "shuffled_records": report.stats.shuffled_records, "wall_ms": report.wall_ms,
    }


def sweep_l(dataset: Dataset, l_values: Iterable[int], mechanism: Mechanism,
            epsilon: float, delta: float, seeds: Sequence[int] = (0,),
            pipelines: Sequence[str] = ("naive", "fast", "plume"),
            selection_fraction: float = 0.5, workers: int | None = 1,
            options: RunOptions | None = None, dataset_id: str = "dataset",
            exact: PipelineReport | None = None) -> list[dict]:
    """One row per (L, pipeline, seed). The budget is split again for every L."""
    l_values = list(l_values)
    if not l_values:
        raise InvalidParameterError("l_values must not be empty")
    if exact is None:
        exact = exact_report(dataset, mechanism, workers)
    rows = []
    for l_bound in l_values:
        budget = split_budget(epsilon, delta, l_bound, selection_fraction)
        for name in pipelines:
            for seed in seeds:
                rep = run_pipeline(name, dataset, mechanism, budget, seed=seed,
                                   workers=workers, options=options)
                rows.append(run_row(rep, exact, dataset_id, epsilon, delta, l_bound, seed))
    return rows


SUMMARY_METRICS = ("abs_all_keys", "rel_retained", "abs_retained", "retained")


def summarize(rows: Iterable[dict]) -> list[dict]:
    """Aggregate run rows per (pipeline, dataset, L, epsilon, delta) over seeds."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["pipeline"], r["dataset"], r["l_bound"], r["epsilon"],
                           r["delta"]), []).append(r)
    out = []
    for (pipeline, ds, l_bound, eps, delta), rs in groups.items():
        row = {"pipeline": pipeline, "dataset": ds, "l_bound": l_bound, "epsilon": eps,
               "delta": delta, "seeds": " ".join(str(r["seed"]) for r in rs), "runs": len(rs)}
        for m in SUMMARY_METRICS:
            mean, sd, se = mean_std_se([float(r[m]) for r in rs])
            row[f"{m}_mean"], row[f"{m}_std"], row[f"{m}_se"] = mean, sd, se
        out.append(row)
    return out

