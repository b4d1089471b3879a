"""Private key selection by thresholding Laplace-noised unique-user counts."""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Collection, Iterable, Mapping

from dpagg.errors import InvalidParameterError
from dpagg.model import Dataset, Key, PrivacyBudget
from dpagg.noise import noise_for_key

SELECT_STAGE = "select"
DEFAULT_LOOKUP_CUTOFF = 100_000


@dataclass(frozen=True)
class SelectionParams:
    """Laplace scale ``b`` and threshold ``tau`` for key selection.

    A key with a single contributing user is retained with probability
    ``0.5 * exp(-(tau - 1) / b) == delta_s / L``. A user touches at most L
    keys, so the union bound spends at most ``delta_s`` in total.
    """

    scale: float
    threshold: float
    l_bound: int
    delta_s: float

    def retain_probability(self, count: int) -> float:
        """Closed-form P[count + Laplace(scale) >= threshold]."""
        z = (self.threshold - count) / self.scale
        if z >= 0:
            return 0.5 * math.exp(-z)
        return 1.0 - 0.5 * math.exp(z)


def selection_threshold(budget: PrivacyBudget) -> SelectionParams:
    eps_s, delta_s, l_bound = budget.epsilon_s, budget.delta_s, budget.l_bound
    if not eps_s > 0:
        raise InvalidParameterError(f"epsilon_s must be positive, got {eps_s}")
    if not 0 < delta_s < 1:
        raise InvalidParameterError(f"delta_s must be in (0, 1), got {delta_s}")
    # tau <= 1 would admit singleton keys with probability >= 1/2.
    if delta_s >= l_bound / 2:
        raise InvalidParameterError(
            f"delta_s={delta_s} >= L/2 gives a degenerate threshold")
    b = l_bound / eps_s
    tau = 1.0 + b * math.log(l_bound / (2.0 * delta_s))
    params = SelectionParams(scale=b, threshold=tau, l_bound=l_bound, delta_s=delta_s)
    single = 0.5 * math.exp(-(tau - 1.0) / b)
    if single > (delta_s / l_bound) * (1 + 1e-12):
        raise InvalidParameterError(
            f"selection threshold is unsound: {single} > {delta_s / l_bound}")
    return params


def dp_retain_key(count: int, params: SelectionParams, key: Key, seed: int,
                  enabled: bool = True) -> bool:
    """Whether ``key`` with ``count`` unique users survives selection.

    The noise is keyed by ``(seed, key)``. Every pipeline therefore makes the
    same decision for the same count, and retention is monotone in ``count``.
    """
    return count + noise_for_key(seed, SELECT_STAGE, key, params.scale, enabled) >= params.threshold


def unique_user_counts(d_l: Dataset) -> dict[Key, int]:
    """Number of distinct users per key in a bounded dataset."""
    seen: dict[Key, set] = {}
    for r in d_l:
        seen.setdefault(r.key, set()).add(r.user)
    return {k: len(users) for k, users in sorted(seen.items())}


def select_keys(counts: Mapping[Key, int], params: SelectionParams, seed: int,
                enabled: bool = True) -> frozenset[Key]:
    return frozenset(k for k, c in counts.items()
                     if c >= 1 and dp_retain_key(c, params, k, seed, enabled))


class BroadcastLookup:
    """Selected keys copied into each mapper's memory."""

    mode = "broadcast"

    def __init__(self, keys: Iterable[Key]):
        self._keys = frozenset(keys)

    def __contains__(self, key: Key) -> bool:
        return key in self._keys

    def __len__(self) -> int:
        return len(self._keys)

    @property
    def requests(self) -> int:
        return 0


class SharedTableLookup:
    """A single read-only table that all workers query, standing in for a DHT.

    Every probe counts as a remote request. The count is a simple I/O cost
    proxy.
    """

    mode = "shared-table"

    def __init__(self, keys: Iterable[Key]):
        self._table = dict.fromkeys(keys, True)
        self._requests = 0
        self._lock = threading.Lock()

    def __contains__(self, key: Key) -> bool:
        with self._lock:
            self._requests += 1
        return key in self._table

    def __len__(self) -> int:
        return len(self._table)

    @property
    def requests(self) -> int:
        return self._requests


@dataclass(frozen=True)
class SelectedKeySet:
    keys: frozenset[Key]
    lookup: BroadcastLookup | SharedTableLookup

    @property
    def cardinality(self) -> int:
        return len(self.keys)

    def __contains__(self, key: Key) -> bool:
        return key in self.lookup


def build_lookup(keys: Collection[Key], memory_cutoff: int = DEFAULT_LOOKUP_CUTOFF
                 ) -> BroadcastLookup | SharedTableLookup:
    """Choose the join-side representation of the selected keys by size.

    Both representations answer every membership probe identically.
    """
    if memory_cutoff < 0:
        raise InvalidParameterError(f"lookup cutoff must be >= 0, got {memory_cutoff}")
    if len(keys) <= memory_cutoff:
        return BroadcastLookup(keys)
    return SharedTableLookup(keys)
