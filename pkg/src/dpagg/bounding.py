"""Per-user contribution bounding with a seeded bounded key heap."""

from __future__ import annotations

from bisect import insort
from typing import Container, Iterable, Iterator

from dpagg.errors import ContractViolation, InvalidParameterError
from dpagg.model import Dataset, Key, Provenance, Record, UserId
from dpagg.noise import KeyRanker


class BoundedKeyHeap:
    """Keeps the ``l_bound`` smallest-rank keys one user has contributed.

    A key's rank is a pure function of ``(seed, round_tag, user, key)``, so
    the retained set is the same whatever order keys are inserted in. Once a
    key is evicted, its values are dropped. If the key is inserted again it
    loses to the same retained keys as before and is not readmitted.

    Memory is O(L): ``_order`` holds ``(rank, key)`` sorted ascending and
    ``_values`` holds the value lists of exactly those keys.
    """

    __slots__ = ("user", "l_bound", "round_tag", "seed", "_rank", "_order", "_values")

    def __init__(self, user: UserId, l_bound: int, round_tag: str, seed: int = 0):
        if l_bound < 1:
            raise InvalidParameterError(f"l_bound must be >= 1, got {l_bound}")
        self.user = user
        self.l_bound = l_bound
        self.round_tag = round_tag
        self.seed = seed
        self._rank = KeyRanker(seed, round_tag, user)
        self._order: list[tuple[int, Key]] = []
        self._values: dict[Key, list[float]] = {}

    def __len__(self) -> int:
        return len(self._order)

    def __contains__(self, key: Key) -> bool:
        return key in self._values

    def keys(self) -> list[Key]:
        """Retained keys, best rank first."""
        return [k for _, k in self._order]

    def items(self) -> Iterator[tuple[Key, list[float]]]:
        """``(key, values)`` pairs in key order; values in canonical order."""
        for key in sorted(self._values):
            yield key, sorted(self._values[key])

    def insert(self, key: Key, value: float | None = None) -> None:
        """Add one contribution. ``value=None`` records the key only."""
        vals = self._values.get(key)
        if vals is not None:
            if value is not None:
                vals.append(value)
            return
        self._admit((self._rank(key), key), [] if value is None else [value])

    def _admit(self, entry: tuple[int, Key], values: list[float]) -> None:
        order = self._order
        if len(order) >= self.l_bound:
            if entry >= order[-1]:
                return
            _, evicted = order.pop()
            del self._values[evicted]
        insort(order, entry)
        self._values[entry[1]] = values

    def merge(self, other: "BoundedKeyHeap") -> "BoundedKeyHeap":
        """Return a new heap holding the union of both inputs' surviving data."""
        if (self.user, self.l_bound, self.round_tag, self.seed) != (
                other.user, other.l_bound, other.round_tag, other.seed):
            raise ContractViolation(
                "cannot merge heaps of different user/l_bound/round/seed: "
                f"{(self.user, self.l_bound, self.round_tag)} vs "
                f"{(other.user, other.l_bound, other.round_tag)}")
        out = self.copy()
        out.update(other)
        return out

    def update(self, other: "BoundedKeyHeap") -> None:
        """In-place merge; used by reducers that fold many partial heaps."""
        for entry in other._order:
            key = entry[1]
            vals = self._values.get(key)
            if vals is not None:
                vals.extend(other._values[key])
            else:
                self._admit(entry, list(other._values[key]))

    def copy(self) -> "BoundedKeyHeap":
        out = BoundedKeyHeap.__new__(BoundedKeyHeap)
        out.user, out.l_bound, out.round_tag, out.seed = (
            self.user, self.l_bound, self.round_tag, self.seed)
        out._rank = self._rank
        out._order = list(self._order)
        out._values = {k: list(v) for k, v in self._values.items()}
        return out

    def canonical(self) -> tuple:
        """Hashable, order-free snapshot used for equality."""
        return (self.user, self.l_bound, self.round_tag, self.seed,
                tuple((k, tuple(v)) for k, v in self.items()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, BoundedKeyHeap):
            return NotImplemented
        return self.canonical() == other.canonical()

    def __repr__(self) -> str:
        return (f"BoundedKeyHeap(user={self.user!r}, l_bound={self.l_bound}, "
                f"round={self.round_tag!r}, keys={sorted(self._values)!r})")


def heap_insert(h: BoundedKeyHeap, key: Key, value: float | None = None) -> BoundedKeyHeap:
    h.insert(key, value)
    return h


def heap_merge(a: BoundedKeyHeap, b: BoundedKeyHeap) -> BoundedKeyHeap:
    return a.merge(b)


def bound_user(user: UserId, records: Iterable[Record], l_bound: int, round_tag: str,
               seed: int, lookup: Container[Key] | None = None,
               probes: list[int] | None = None) -> BoundedKeyHeap:
    """Build one user's heap, optionally keeping only keys found in ``lookup``.

    ``lookup`` is probed once per distinct key of the user. If ``probes`` is
    given, ``probes[0]`` is incremented by the number of probes made.
    """
    heap = BoundedKeyHeap(user, l_bound, round_tag, seed)
    if lookup is None:
        for r in records:
            heap.insert(r.key, r.value)
        return heap
    verdict: dict[Key, bool] = {}
    for r in records:
        ok = verdict.get(r.key)
        if ok is None:
            ok = verdict[r.key] = r.key in lookup
        if ok:
            heap.insert(r.key, r.value)
    if probes is not None:
        probes[0] += len(verdict)
    return heap


def heap_records(heap: BoundedKeyHeap) -> Iterator[Record]:
    for key, values in heap.items():
        for v in values:
            yield Record(heap.user, key, v)


def bound_contributions(d: Dataset, l_bound: int, round_tag: str, seed: int = 0,
                        lookup: Container[Key] | None = None) -> Dataset:
    """Limit every user in ``d`` to at most ``l_bound`` distinct keys.

    Without ``lookup`` this produces D_L. With a lookup table, records whose
    keys are not selected are discarded before bounding, which produces
    D_safe. Users appear in sorted order, and their records in canonical order.
    """
    groups = d.by_user()
    out: list[Record] = []
    for user in sorted(groups):
        heap = bound_user(user, groups[user], l_bound, round_tag, seed, lookup)
        out.extend(heap_records(heap))
    return Dataset(tuple(out), Provenance.BOUNDED if lookup is None else Provenance.SAFE)

