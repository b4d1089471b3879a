"""Synthetic heavy-tailed datasets, the landmark toy dataset, and corpus ingestion."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from dpagg.errors import DataIOError, InvalidParameterError
from dpagg.model import Dataset, Provenance, Record
from dpagg.noise import uniform_block

# Records per user: mean ~10, roughly 30% of users above 10.
RECORDS_PER_USER = dict(s=4.67, q=25.0, n=10**5)
# Key popularity over 10^6 keys.
KEY_POPULARITY = dict(s=1.4, q=1000.0, n=10**6)
KEY_WIDTH = 7


@dataclass(frozen=True)
class ZipfMandelbrot:
    """Zipf-Mandelbrot law on ``1..n`` with ``P(x)`` proportional to ``(x + q) ** -s``."""

    s: float
    q: float
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise InvalidParameterError(f"support size must be >= 1, got {self.n}")
        if not self.s > 0 or not self.q > -1:
            raise InvalidParameterError(f"need s > 0 and q > -1, got s={self.s}, q={self.q}")

    @cached_property
    def pmf(self) -> np.ndarray:
        w = (np.arange(1, self.n + 1, dtype=np.float64) + self.q) ** -self.s
        return w / w.sum()

    @cached_property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.pmf)
        c[-1] = 1.0
        return c

    def mean(self) -> float:
        return float(np.dot(np.arange(1, self.n + 1, dtype=np.float64), self.pmf))

    def tail(self, x: int) -> float:
        """P(X > x)."""
        return float(self.pmf[x:].sum()) if x < self.n else 0.0

    def head_mass(self, m: int) -> float:
        """P(X <= m)."""
        return float(self.pmf[:m].sum())

    def sample(self, u):
        """Inverse-CDF draw(s) for uniform(s) ``u`` in (0, 1); returns ints in ``1..n``."""
        idx = np.searchsorted(self.cdf, u, side="left")
        idx = np.minimum(idx, self.n - 1) + 1
        return int(idx) if np.ndim(idx) == 0 else idx


def zm_sample(dist: ZipfMandelbrot, u):
    return dist.sample(u)


def _user_id(i: int, width: int) -> str:
    return f"u{i:0{width}d}"


def gen_synth(n_users: int, seed: int = 0) -> Dataset:
    """Heavy-tailed count workload: per-user record counts and keys both ZM-distributed.

    User ``i``'s draws come from its own counter stream ``(seed, i)``, so
    output for a user does not depend on how many other users are generated.
    Repeated (user, key) draws are kept as separate records.
    """
    if n_users < 1:
        raise InvalidParameterError(f"n_users must be >= 1, got {n_users}")
    per_user = _dist(**RECORDS_PER_USER)
    keys = _dist(**KEY_POPULARITY)
    width = max(6, len(str(n_users - 1)))
    key_names: dict[int, str] = {}
    records: list[Record] = []
    for i in range(n_users):
        payload = i.to_bytes(8, "little")
        first = uniform_block(seed, "gen:count", payload, 1)
        count = per_user.sample(first[0])
        draws = keys.sample(uniform_block(seed, "gen:keys", payload, count))
        user = _user_id(i, width)
        for k in draws.tolist():
            name = key_names.get(k)
            if name is None:
                name = key_names[k] = f"k{k:0{KEY_WIDTH}d}"
            records.append(Record(user, name, 1.0))
    return Dataset(tuple(records), Provenance.RAW)


_DIST_CACHE: dict[tuple, ZipfMandelbrot] = {}


def _dist(s: float, q: float, n: int) -> ZipfMandelbrot:
    key = (s, q, n)
    if key not in _DIST_CACHE:
        _DIST_CACHE[key] = ZipfMandelbrot(s, q, n)
    return _DIST_CACHE[key]


def gen_landmark(n_users: int, seed: int = 0) -> Dataset:
    """Each user visits their own ``home_<i>`` and the shared ``landmark``.

    ``seed`` only permutes record order. The content is fixed, which lets
    tests check that results do not depend on input order.
    """
    if n_users < 1:
        raise InvalidParameterError(f"n_users must be >= 1, got {n_users}")
    width = max(6, len(str(n_users - 1)))
    records = []
    for i in range(n_users):
        user = _user_id(i, width)
        records.append(Record(user, f"home_{i:0{width}d}", 1.0))
        records.append(Record(user, "landmark", 1.0))
    order = np.random.default_rng(seed).permutation(len(records))
    return Dataset(tuple(records[j] for j in order), Provenance.RAW)


def ingest_corpus(path: str | Path) -> Dataset:
    """Turn ``user<TAB>free text`` lines into per-(user, word) utterance counts.

    Words are the lowercased whitespace-separated tokens. Counts for the same
    (user, word) are summed over all lines. Records come out in first-seen
    order.
    """
    counts: dict[tuple[str, str], int] = {}
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataIOError(f"cannot open: {exc.strerror}", path) from exc
    lineno = 0
    with fh:
        try:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n").rstrip("\r")
                if not line:
                    continue
                user, sep, text = line.partition("\t")
                if not sep or not user:
                    raise DataIOError("expected user<TAB>text", path, lineno)
                for word in text.lower().split():
                    counts[(user, word)] = counts.get((user, word), 0) + 1
        except UnicodeDecodeError as exc:
            raise DataIOError(f"not valid UTF-8 ({exc.reason})", path, lineno + 1) from exc
    return Dataset(tuple(Record(u, w, float(c)) for (u, w), c in counts.items()),
                   Provenance.RAW)
