"""Core record types, privacy-budget accounting and dataset I/O."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, NamedTuple

from dpagg.errors import DataIOError, InvalidParameterError

# Users and keys are plain ``str``. Sorting ``str`` by code point gives the
# same order as sorting their UTF-8 encodings, so "lexicographic by bytes"
# and Python's default string order agree.
UserId = str
Key = str


class Record(NamedTuple):
    """One (user, key, value) contribution."""

    user: UserId
    key: Key
    value: float


class Provenance(enum.Enum):
    RAW = "D"
    BOUNDED = "D_L"
    JOINED = "D_S"
    SAFE = "D_safe"
    GROUPED = "D_0"


@dataclass(frozen=True)
class Dataset:
    """An immutable multiset of records tagged with how it was produced."""

    records: tuple[Record, ...] = ()
    provenance: Provenance = Provenance.RAW

    @classmethod
    def of(cls, records: Iterable[Record | tuple], provenance: Provenance = Provenance.RAW) -> "Dataset":
        recs = []
        for r in records:
            rec = r if isinstance(r, Record) else Record(*r)
            _check_record(rec)
            recs.append(rec)
        return cls(tuple(recs), provenance)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[Record]:
        return iter(self.records)

    def users(self) -> set[UserId]:
        return {r.user for r in self.records}

    def keys(self) -> set[Key]:
        return {r.key for r in self.records}

    def by_user(self) -> dict[UserId, list[Record]]:
        """Group records by user; first-seen user order, records in input order."""
        out: dict[UserId, list[Record]] = {}
        for r in self.records:
            out.setdefault(r.user, []).append(r)
        return out

    def max_user_degree(self) -> int:
        """Largest number of distinct keys any single user contributes."""
        keys: dict[UserId, set[Key]] = {}
        for r in self.records:
            keys.setdefault(r.user, set()).add(r.key)
        return max((len(k) for k in keys.values()), default=0)


def _check_record(rec: Record) -> None:
    if not rec.user or not rec.key:
        raise InvalidParameterError(f"empty user or key in {rec!r}")
    if not math.isfinite(rec.value):
        raise InvalidParameterError(f"non-finite value in {rec!r}")


@dataclass(frozen=True)
class PrivacyBudget:
    """Overall (epsilon, delta) and its split between selection and mechanism.

    Basic composition over at most ``l_bound`` keys per user gives the overall
    guarantee ``(epsilon_s + L * epsilon_m, delta_s + L * delta_m)``; the
    constructor checks that this matches ``(epsilon, delta)``.
    """

    epsilon: float
    delta: float
    l_bound: int
    epsilon_s: float
    delta_s: float
    epsilon_m: float
    delta_m: float = 0.0
    selection_fraction: float = field(default=0.5, compare=False)

    def __post_init__(self):
        eps_total = self.epsilon_s + self.l_bound * self.epsilon_m
        delta_total = self.delta_s + self.l_bound * self.delta_m
        if abs(eps_total - self.epsilon) > 1e-12:
            raise InvalidParameterError(
                f"epsilon split {eps_total!r} does not add up to {self.epsilon!r}")
        if abs(delta_total - self.delta) > 1e-15:
            raise InvalidParameterError(
                f"delta split {delta_total!r} does not add up to {self.delta!r}")


def split_budget(epsilon: float, delta: float, l_bound: int,
                 selection_fraction: float = 0.5) -> PrivacyBudget:
    """Split an overall budget between key selection and the per-key mechanism.

    Selection receives ``selection_fraction * epsilon`` and all of ``delta``;
    the remaining epsilon is divided evenly over the ``l_bound`` keys a user
    may touch. The mechanism consumes no delta.

    Args:
        epsilon: Overall epsilon, > 0.
        delta: Overall delta, in (0, 1).
        l_bound: Maximum number of distinct keys per user, >= 1.
        selection_fraction: Share of epsilon spent on key selection, in (0, 1).

    Returns:
        The validated ``PrivacyBudget``.

    Raises:
        InvalidParameterError: if any argument is out of range.
    """
    if not (isinstance(epsilon, (int, float)) and math.isfinite(epsilon) and epsilon > 0):
        raise InvalidParameterError(f"epsilon must be positive, got {epsilon!r}")
    if not (0 < delta < 1):
        raise InvalidParameterError(f"delta must be in (0, 1), got {delta!r}")
    if isinstance(l_bound, bool) or int(l_bound) != l_bound or l_bound < 1:
        raise InvalidParameterError(f"l_bound must be a positive integer, got {l_bound!r}")
    if not (0 < selection_fraction < 1):
        raise InvalidParameterError(
            f"selection_fraction must be in (0, 1), got {selection_fraction!r}")
    l_bound = int(l_bound)
    epsilon = float(epsilon)
    eps_s = epsilon * selection_fraction
    eps_m = (epsilon - eps_s) / l_bound
    return PrivacyBudget(epsilon=epsilon, delta=float(delta), l_bound=l_bound,
                         epsilon_s=eps_s, delta_s=float(delta),
                         epsilon_m=eps_m, delta_m=0.0,
                         selection_fraction=selection_fraction)


def _parse_value(text: str, path, lineno: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataIOError(f"malformed value {text!r}", path, lineno) from None
    if not math.isfinite(value):
        raise DataIOError(f"non-finite value {text!r}", path, lineno)
    return value


def read_tsv(path: str | Path) -> Dataset:
    """Read ``user<TAB>key<TAB>value`` lines into a raw ``Dataset``.

    Blank lines are skipped. Any other malformed line raises ``DataIOError``
    carrying the 1-based line number.
    """
    records = []
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataIOError(f"cannot open: {exc.strerror}", path) from exc
    with fh:
        try:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n").rstrip("\r")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise DataIOError(
                        f"expected 3 tab-separated fields, got {len(parts)}", path, lineno)
                user, key, raw = parts
                if not user or not key:
                    raise DataIOError("empty user or key", path, lineno)
                records.append(Record(user, key, _parse_value(raw, path, lineno)))
        except UnicodeDecodeError as exc:
            raise DataIOError(f"not valid UTF-8 ({exc.reason})", path, lineno) from exc
    return Dataset(tuple(records), Provenance.RAW)


def format_value(value: float) -> str:
    return format(value, ".17g")


def write_tsv(path: str | Path, records: Iterable[Record]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(f"{r.user}\t{r.key}\t{format_value(r.value)}\n")


def write_result_csv(path: str | Path, results: Mapping[Key, float]) -> None:
    """Write ``key,value`` rows sorted by key, values with 17 significant digits."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for key in sorted(results):
            writer.writerow([key, format_value(results[key])])


def read_result_csv(path: str | Path) -> dict[Key, float]:
    out: dict[Key, float] = {}
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataIOError(f"cannot open: {exc.strerror}", path) from exc
    with fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != 2:
                raise DataIOError(f"expected key,value, got {len(row)} fields", path, lineno)
            key, raw = row
            if key in out:
                raise DataIOError(f"duplicate key {key!r}", path, lineno)
            out[key] = _parse_value(raw, path, lineno)
    return out
