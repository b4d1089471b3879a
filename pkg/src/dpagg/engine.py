"""In-process map/shuffle/reduce execution with shuffle accounting.

Data lives in ``workers`` partitions, each a plain list. A map runs a
function on every partition, in threads when ``workers > 1``. A shuffle
routes every item to the partition ``crc32(id) % workers`` and groups items
by id. Groups in a partition are sorted by id, and items within a group are
sorted too, so a stage's result does not depend on worker count or thread
scheduling.

Only shuffles are counted as rounds. ``ShuffleStats`` records how many
shuffles ran and how many items crossed them, and the pipelines are compared
on those numbers.
"""

from __future__ import annotations

import enum
import os
import threading
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Container, Hashable, Iterable, Sequence, TypeVar

from dpagg.errors import ContractViolation, InvalidParameterError
from dpagg.model import Record

T = TypeVar("T")
Partitions = list  # list[list[item]]
Grouped = list  # list[list[tuple[id, list[item]]]]

DEFAULT_USER_RECORD_CAP = 10**7


class StageKind(enum.Enum):
    MAP = "map"
    SHUFFLE_BY_USER = "shuffle-by-user"
    SHUFFLE_BY_KEY = "shuffle-by-key"
    REDUCE = "reduce"
    MAP_SIDE_JOIN = "map-side-join"


@dataclass(frozen=True)
class Stage:
    kind: StageKind
    name: str


@dataclass
class ShuffleStats:
    shuffle_stages: int = 0
    shuffled_records: int = 0
    lookup_probes: int = 0
    stages: list[Stage] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def log(self, kind: StageKind, name: str) -> None:
        with self._lock:
            self.stages.append(Stage(kind, name))

    def add_shuffle(self, kind: StageKind, name: str, n_items: int) -> None:
        with self._lock:
            self.stages.append(Stage(kind, name))
            self.shuffle_stages += 1
            self.shuffled_records += n_items

    def add_probes(self, n: int) -> None:
        with self._lock:
            self.lookup_probes += n


def default_workers() -> int:
    return os.cpu_count() or 1


def by_user(r: Record) -> str:
    return r.user


def by_key(r: Record) -> str:
    return r.key


def _route(ident: Hashable, workers: int) -> int:
    if workers == 1:
        return 0
    data = ident.encode("utf-8") if isinstance(ident, str) else repr(ident).encode("utf-8")
    return zlib.crc32(data) % workers


class Engine:
    """Runs stages over ``workers`` partitions while recording shuffle stats.

    Args:
        workers: Number of partitions, and threads, to use.
        per_user_record_cap: A user-keyed shuffle raises if one group gets
            more records than this.
    """

    def __init__(self, workers: int | None = None,
                 per_user_record_cap: int = DEFAULT_USER_RECORD_CAP):
        workers = default_workers() if workers is None else workers
        if workers < 1:
            raise InvalidParameterError(f"workers must be >= 1, got {workers}")
        self.workers = int(workers)
        self.per_user_record_cap = per_user_record_cap
        self.stats = ShuffleStats()

    def _parallel(self, fn: Callable[[Any], T], seq: Sequence) -> list[T]:
        if self.workers == 1 or len(seq) <= 1:
            return [fn(x) for x in seq]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(fn, seq))

    def parallelize(self, items: Iterable) -> Partitions:
        """Split input round-robin, like an arbitrary initial distribution."""
        items = list(items)
        return [items[i::self.workers] for i in range(self.workers)]

    def run_map(self, fn: Callable[[Any], Iterable], parts: Partitions,
                name: str = "map") -> Partitions:
        """Flat-map ``fn`` over every item of every partition."""
        self.stats.log(StageKind.MAP, name)

        def task(part):
            out = []
            for item in part:
                out.extend(fn(item))
            return out
        return self._parallel(task, parts)

    def map_partitions(self, fn: Callable[[list], Iterable], parts: Partitions,
                       name: str = "map-partitions") -> Partitions:
        """Apply ``fn`` to each whole partition, e.g. a map-side combiner."""
        self.stats.log(StageKind.MAP, name)
        return self._parallel(lambda part: list(fn(part)), parts)

    def shuffle_by(self, parts: Partitions, extractor: Callable[[Any], Hashable],
                   kind: StageKind, name: str = "shuffle",
                   sort_items: bool | Callable[[Any], Any] = True) -> Grouped:
        """Regroup items so that all items sharing ``extractor(item)`` are together.

        Args:
            parts: Input partitions.
            extractor: Maps an item to its grouping id (a user or a key).
            kind: ``SHUFFLE_BY_USER`` or ``SHUFFLE_BY_KEY``.
            name: Stage label for the stage log.
            sort_items: ``True`` sorts items inside each group naturally, a
                callable is used as the sort key, and ``False`` keeps arrival
                order. Use ``False`` only when the consumer is order-insensitive.

        Returns:
            Per partition, a list of ``(id, items)`` sorted by id.
        """
        if kind not in (StageKind.SHUFFLE_BY_USER, StageKind.SHUFFLE_BY_KEY):
            raise InvalidParameterError(f"{kind} is not a shuffle")
        w = self.workers

        def scatter(part):
            if w == 1:
                return [[(extractor(item), item) for item in part]]
            buckets = [[] for _ in range(w)]
            for item in part:
                ident = extractor(item)
                buckets[_route(ident, w)].append((ident, item))
            return buckets
        scattered = self._parallel(scatter, parts)
        n_items = sum(len(b) for buckets in scattered for b in buckets)
        self.stats.add_shuffle(kind, name, n_items)

        cap = self.per_user_record_cap if kind is StageKind.SHUFFLE_BY_USER else None

        def gather(dest):
            groups: dict[Hashable, list] = {}
            for buckets in scattered:
                for ident, item in buckets[dest]:
                    g = groups.get(ident)
                    if g is None:
                        groups[ident] = [item]
                    else:
                        g.append(item)
            out = []
            for ident in sorted(groups):
                items = groups[ident]
                if cap is not None and len(items) > cap:
                    raise ContractViolation(
                        f"user {ident!r} has {len(items)} records, above the "
                        f"per-user cap of {cap}")
                if sort_items is True:
                    items.sort()
                elif sort_items:
                    items.sort(key=sort_items)
                out.append((ident, items))
            return out
        return self._parallel(gather, list(range(w)))

    def run_reduce(self, fn: Callable[[Any, list], Iterable], grouped: Grouped,
                   name: str = "reduce") -> Partitions:
        """Apply ``fn(id, items)`` to every group; outputs stay in their partition."""
        self.stats.log(StageKind.REDUCE, name)
        return self._parallel(lambda part: _apply_groups(fn, part, name), grouped)

    def map_groups(self, fn: Callable[[Any, list], Iterable], grouped: Grouped,
                   name: str = "map-groups") -> Partitions:
        """Map over already-grouped data without moving it."""
        self.stats.log(StageKind.MAP, name)
        return self._parallel(lambda part: _apply_groups(fn, part, name), grouped)

    def map_side_join(self, grouped: Grouped, lookup: Container,
                      name: str = "map-side-join",
                      extractor: Callable[[Any], Hashable] = by_key) -> Grouped:
        """Keep, in each group, only items whose key is in ``lookup``.

        No data moves, so no shuffle is counted. Each distinct (group, key)
        pair costs one probe.
        """
        self.stats.log(StageKind.MAP_SIDE_JOIN, name)

        def task(part):
            out = []
            probes = 0
            for ident, items in part:
                verdict: dict = {}
                kept = []
                for item in items:
                    k = extractor(item)
                    ok = verdict.get(k)
                    if ok is None:
                        ok = verdict[k] = k in lookup
                    if ok:
                        kept.append(item)
                probes += len(verdict)
                if kept:
                    out.append((ident, kept))
            self.stats.add_probes(probes)
            return out
        return self._parallel(task, grouped)

    @staticmethod
    def collect(parts: Partitions) -> list:
        return [item for part in parts for item in part]

    @staticmethod
    def collect_groups(grouped: Grouped) -> list:
        """All ``(id, items)`` groups in global id order."""
        return sorted((g for part in grouped for g in part), key=lambda g: g[0])


def _apply_groups(fn, part, stage_name):
    out = []
    for ident, items in part:
        try:
            out.extend(fn(ident, items))
        except ContractViolation as exc:
            raise ContractViolation(f"{exc} [stage {stage_name!r}, group {ident!r}]") from exc
    return out
