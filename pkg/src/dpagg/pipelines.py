"""End-to-end aggregation flows: exact, Naive, RuntimeOptimized ("fast"), Plume.

All three private flows share these pieces:

* the first bounding round, tagged ``ROUND_SELECT``,
* selection noise keyed by ``(seed, "select", key)``, and
* aggregation noise keyed by ``(seed, "agg", key)``.

So they always select the same key set. Naive and Plume also share the
second bounding round, tagged ``ROUND_AGGREGATE``. They run different
dataflows but compute the same function: the output maps are identical.
RuntimeOptimized has no second round. It aggregates D_L directly, which
wastes contributions on keys that selection dropped.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable

from dpagg.bounding import BoundedKeyHeap
from dpagg.engine import DEFAULT_USER_RECORD_CAP, Engine, ShuffleStats, StageKind, by_user
from dpagg.errors import ContractViolation, InvalidParameterError
from dpagg.mechanisms import Mechanism
from dpagg.model import Dataset, Key, PrivacyBudget, Record
from dpagg.noise import ROUND_AGGREGATE, ROUND_SELECT
from dpagg.selection import (DEFAULT_LOOKUP_CUTOFF, SelectionParams, build_lookup,
                             dp_retain_key, selection_threshold)

log = logging.getLogger(__name__)

EXPECTED_SHUFFLES = {"naive": 5, "fast": 2, "plume": 3, "exact": 1}


@dataclass(frozen=True)
class RunOptions:
    """Knobs that do not affect the privacy accounting.

    ``debug_no_noise`` and ``select_all_keys`` switch privacy off. They exist
    only so that tests can compare against exact answers.
    """

    lookup_cutoff: int = DEFAULT_LOOKUP_CUTOFF
    debug_no_noise: bool = False
    select_all_keys: bool = False
    early_combine: bool = True
    per_user_record_cap: int = DEFAULT_USER_RECORD_CAP


@dataclass
class PipelineReport:
    pipeline: str
    outputs: dict[Key, float]
    selected: frozenset[Key]
    stats: ShuffleStats
    wall_ms: int
    n_records: int
    n_users: int
    max_user_degree: int = 0
    lookup_mode: str = "none"

    @property
    def retained(self) -> int:
        return len(self.selected)


@dataclass
class _Ctx:
    mechanism: Mechanism
    budget: PrivacyBudget
    seed: int
    options: RunOptions
    engine: Engine
    params: SelectionParams | None = None
    noise: bool = field(init=False)

    def __post_init__(self):
        self.noise = not self.options.debug_no_noise

    def retain(self, key: Key, count: int) -> bool:
        if self.options.select_all_keys:
            return count >= 1
        return dp_retain_key(count, self.params, key, self.seed, self.noise)


def _records(d: Dataset | Iterable[Record]) -> tuple[Record, ...]:
    if isinstance(d, Dataset):
        return d.records
    return Dataset.of(d).records


def _context(mechanism, budget, seed, workers, options) -> _Ctx:
    options = options or RunOptions()
    if not isinstance(mechanism, Mechanism):
        raise InvalidParameterError(f"not a mechanism: {mechanism!r}")
    engine = Engine(workers, options.per_user_record_cap)
    return _Ctx(mechanism, budget, seed, options, engine, selection_threshold(budget))


# Reusable stages --------------------------------------------------------------

def _bound_with_combiner(ctx: _Ctx, parts, round_tag: str, with_values: bool, name: str):
    """Contribution bounding as a map-side heap combiner, a user shuffle and a merge.

    Each partition builds one partial heap per user, and the reducer merges a
    user's partial heaps. Ranks are pure, so a key in the user's global top L
    is in the top L of every partition that saw it. The merged heap is
    therefore exact.
    """
    l_bound = ctx.budget.l_bound
    seed = ctx.seed

    def combine(part):
        heaps: dict[str, BoundedKeyHeap] = {}
        for r in part:
            h = heaps.get(r.user)
            if h is None:
                h = heaps[r.user] = BoundedKeyHeap(r.user, l_bound, round_tag, seed)
            h.insert(r.key, r.value if with_values else None)
        return heaps.values()

    partial = ctx.engine.map_partitions(combine, parts, f"{name}: partial heaps")
    grouped = ctx.engine.shuffle_by(partial, lambda h: h.user, StageKind.SHUFFLE_BY_USER,
                                    f"{name}: heaps by user", sort_items=False)

    def merge(user, heaps):
        result = heaps[0].copy()
        for h in heaps[1:]:
            result.update(h)
        if len(result) > l_bound:
            raise ContractViolation(f"heap for {user!r} holds {len(result)} > L keys")
        yield result

    n_users = sum(len(p) for p in grouped)
    return ctx.engine.run_reduce(merge, grouped, f"{name}: merge heaps"), n_users


def _select(ctx: _Ctx, heap_parts, name: str = "select") -> frozenset[Key]:
    """Unique-user count per key, then the noisy threshold."""
    pairs = ctx.engine.run_map(lambda h: ((k, 1) for k in h.keys()), heap_parts,
                               f"{name}: heap_to_key_map")
    grouped = ctx.engine.shuffle_by(pairs, lambda kv: kv[0], StageKind.SHUFFLE_BY_KEY,
                                    f"{name}: keys")

    def reduce(key, items):
        if ctx.retain(key, sum(c for _, c in items)):
            yield key
    return frozenset(ctx.engine.collect(ctx.engine.run_reduce(reduce, grouped,
                                                              f"{name}: retain")))


def _contribution_items(ctx: _Ctx, heap: BoundedKeyHeap):
    """Map a bounded heap to items for the final key shuffle.

    With early combining, each (user, key) leaves as a single preprocessed
    contribution ``(key, 1, "", c)``. Without it, every raw value travels as
    ``(key, 1, user, v)`` and the reducer combines per user.
    """
    mech = ctx.mechanism
    if ctx.options.early_combine:
        for key, values in heap.items():
            yield (key, 1, "", mech.contribution(values))
    else:
        for key, values in heap.items():
            for v in values:
                yield (key, 1, heap.user, v)


def _dummy(key: Key):
    return (key, 0, "", 0.0)


def _aggregate(ctx: _Ctx, key: Key, items: list) -> float:
    """Apply the mechanism to one key's shuffled items (dummies contribute nothing)."""
    mech = ctx.mechanism
    if ctx.options.early_combine:
        contribs = [c for _, flag, _, c in items if flag]
    else:
        per_user: dict[str, list[float]] = {}
        for _, flag, user, v in items:
            if flag:
                per_user.setdefault(user, []).append(v)
        contribs = [mech.contribution(vals) for _, vals in sorted(per_user.items())]
    partial = mech.keyed_combine(contribs)
    return mech.add_noise(partial, ctx.budget, key, ctx.seed, ctx.noise)


def _final_aggregation(ctx: _Ctx, item_parts, selected: frozenset[Key]) -> dict[Key, float]:
    dummies = ctx.engine.parallelize(_dummy(k) for k in sorted(selected))
    union = [a + b for a, b in zip(item_parts, dummies)]
    grouped = ctx.engine.shuffle_by(union, lambda it: it[0], StageKind.SHUFFLE_BY_KEY,
                                    "aggregate: by key")

    def reduce(key, items):
        yield key, _aggregate(ctx, key, items)
    out = ctx.engine.collect(ctx.engine.run_reduce(reduce, grouped, "aggregate: apply M"))
    return dict(sorted(out))


def _max_degree(heap_parts) -> int:
    return max((len(h) for part in heap_parts for h in part), default=0)


def _finish(name: str, ctx: _Ctx, outputs, selected, start, n_records, n_users,
            max_degree, lookup_mode="none") -> PipelineReport:
    report = PipelineReport(
        pipeline=name, outputs=outputs, selected=frozenset(selected), stats=ctx.engine.stats,
        wall_ms=int(round((time.perf_counter() - start) * 1000)), n_records=n_records,
        n_users=n_users, max_user_degree=max_degree, lookup_mode=lookup_mode)
    expected = EXPECTED_SHUFFLES[name]
    if report.stats.shuffle_stages != expected:
        raise ContractViolation(
            f"{name} ran {report.stats.shuffle_stages} shuffles, expected {expected}")
    if set(outputs) != set(selected):
        raise ContractViolation(f"{name}: output keys differ from the selected set")
    if max_degree > ctx.budget.l_bound:
        raise ContractViolation(f"{name}: a user kept {max_degree} > L keys")
    return report


# Pipelines -------------------------------------------------------------------

def run_exact(d: Dataset | Iterable[Record], mechanism: Mechanism,
              workers: int | None = 1) -> dict[Key, float]:
    """True aggregate per key: no bounding, no clamping, no noise."""
    return exact_report(d, mechanism, workers).outputs


def exact_report(d: Dataset | Iterable[Record], mechanism: Mechanism,
                 workers: int | None = 1) -> PipelineReport:
    start = time.perf_counter()
    records = _records(d)
    engine = Engine(workers)
    parts = engine.parallelize(records)
    grouped = engine.shuffle_by(parts, lambda r: r.key, StageKind.SHUFFLE_BY_KEY,
                                "exact: by key", sort_items=lambda r: r.value)

    def reduce(key, recs):
        yield key, mechanism.exact([r.value for r in recs])
    outputs = dict(sorted(engine.collect(engine.run_reduce(reduce, grouped, "exact: A"))))
    n_users = len({r.user for r in records})
    return PipelineReport(
        pipeline="exact", outputs=outputs, selected=frozenset(outputs), stats=engine.stats,
        wall_ms=int(round((time.perf_counter() - start) * 1000)),
        n_records=len(records), n_users=n_users)


def run_naive(d: Dataset | Iterable[Record], mechanism: Mechanism, budget: PrivacyBudget,
              seed: int = 0, workers: int | None = 1,
              options: RunOptions | None = None) -> PipelineReport:
    """Five shuffles: bound, select, reduce-side join, bound again, aggregate."""
    start = time.perf_counter()
    ctx = _context(mechanism, budget, seed, workers, options)
    eng = ctx.engine
    records = _records(d)
    parts = eng.parallelize(records)

    # 1. D -> D_L.
    d_l, n_users = _bound_with_combiner(ctx, parts, ROUND_SELECT, False, "bound-1")
    # 2. D_L -> S.
    selected = _select(ctx, d_l)
    # 3. Reduce-side join of D with S: markers sort before data in each key group.
    tagged = eng.run_map(lambda r: ((r.key, 1, r.user, r.value),), parts, "join: tag D")
    markers = eng.parallelize((k, 0, "", 0.0) for k in sorted(selected))
    joined = eng.shuffle_by([a + b for a, b in zip(tagged, markers)], lambda it: it[0],
                            StageKind.SHUFFLE_BY_KEY, "join: D with S by key")

    def join_result_reduce(key, items):
        if items[0][1] != 0:
            return
        for _, _, user, value in items[1:]:
            yield Record(user, key, value)
    d_s = eng.run_reduce(join_result_reduce, joined, "join: filter")
    # 4. D_S -> D_safe.
    d_safe, _ = _bound_with_combiner(ctx, d_s, ROUND_AGGREGATE, True, "bound-2")
    # 5. D_safe + dummies -> M.
    items = eng.run_map(lambda h: _contribution_items(ctx, h), d_safe, "aggregation_map")
    outputs = _final_aggregation(ctx, items, selected)
    return _finish("naive", ctx, outputs, selected, start, len(records), n_users,
                   _max_degree(d_safe))


def run_fast(d: Dataset | Iterable[Record], mechanism: Mechanism, budget: PrivacyBudget,
             seed: int = 0, workers: int | None = 1,
             options: RunOptions | None = None) -> PipelineReport:
    """Two shuffles: bound once, then select and aggregate in one key shuffle."""
    start = time.perf_counter()
    ctx = _context(mechanism, budget, seed, workers, options)
    eng = ctx.engine
    records = _records(d)
    parts = eng.parallelize(records)

    d_l, n_users = _bound_with_combiner(ctx, parts, ROUND_SELECT, True, "bound-1")
    items = eng.run_map(lambda h: _contribution_items(ctx, h), d_l, "aggregation_map")
    grouped = eng.shuffle_by(items, lambda it: it[0], StageKind.SHUFFLE_BY_KEY,
                             "aggregate: by key")

    def aggregation_reduce(key, key_items):
        # Each user heap contributes to a key at most once when combined early.
        # Without early combining, users are counted from the item tags.
        if ctx.options.early_combine:
            count = sum(flag for _, flag, _, _ in key_items)
        else:
            count = len({user for _, _, user, _ in key_items})
        if ctx.retain(key, count):
            yield key, _aggregate(ctx, key, key_items)
    outputs = dict(sorted(eng.collect(eng.run_reduce(aggregation_reduce, grouped,
                                                      "aggregate: retain + M"))))
    return _finish("fast", ctx, outputs, frozenset(outputs), start, len(records), n_users,
                   _max_degree(d_l))


def run_plume(d: Dataset | Iterable[Record], mechanism: Mechanism, budget: PrivacyBudget,
              seed: int = 0, workers: int | None = 1,
              options: RunOptions | None = None) -> PipelineReport:
    """Three shuffles. It reuses the user-grouped D_0 for the second bounding round."""
    start = time.perf_counter()
    ctx = _context(mechanism, budget, seed, workers, options)
    eng = ctx.engine
    records = _records(d)
    l_bound = budget.l_bound

    # 1. D -> D_0 (kept), then D_L in place.
    d_0 = eng.shuffle_by(eng.parallelize(records), by_user, StageKind.SHUFFLE_BY_USER,
                         "D by user")
    n_users = sum(len(p) for p in d_0)

    def bound_first(user, recs):
        h = BoundedKeyHeap(user, l_bound, ROUND_SELECT, seed)
        for r in recs:
            h.insert(r.key)
        yield h
    d_l = eng.map_groups(bound_first, d_0, "bound-1")
    # 2. D_L -> S.
    selected = _select(ctx, d_l)
    # 3. T = lookup(S); map-side join on D_0; second bounding round; M's early stages.
    table = build_lookup(selected, ctx.options.lookup_cutoff)
    log.info("plume: |S|=%d, lookup mode %s", len(selected), table.mode)
    d_s = eng.map_side_join(d_0, table, "D_0 join T")

    def bound_second(user, recs):
        h = BoundedKeyHeap(user, l_bound, ROUND_AGGREGATE, seed)
        for r in recs:
            h.insert(r.key, r.value)
        yield h
    d_safe = eng.map_groups(bound_second, d_s, "bound-2")
    items = eng.run_map(lambda h: _contribution_items(ctx, h), d_safe, "aggregation_map")
    # 4. D_safe + dummies -> M.
    outputs = _final_aggregation(ctx, items, selected)
    return _finish("plume", ctx, outputs, selected, start, len(records), n_users,
                   _max_degree(d_safe), table.mode)


PIPELINES: dict[str, Callable[..., PipelineReport]] = {
    "naive": run_naive,
    "fast": run_fast,
    "plume": run_plume,
}


def run_pipeline(name: str, d: Dataset | Iterable[Record], mechanism: Mechanism,
                 budget: PrivacyBudget | None = None, seed: int = 0,
                 workers: int | None = 1, options: RunOptions | None = None) -> PipelineReport:
    if name == "exact":
        return exact_report(d, mechanism, workers)
    try:
        fn = PIPELINES[name]
    except KeyError:
        raise InvalidParameterError(f"unknown pipeline {name!r}") from None
    if budget is None:
        raise InvalidParameterError(f"pipeline {name!r} needs a privacy budget")
    return fn(d, mechanism, budget, seed=seed, workers=workers, options=options)
