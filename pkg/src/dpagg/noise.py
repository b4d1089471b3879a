"""Keyed pseudorandom streams and the Laplace sampler.

Every random quantity in dpagg is a pure function of ``(seed, domain tag,
payload)``. Nothing depends on draw order, so results do not change with
worker count or shuffle order, and equal seeds replay runs exactly.

The PRF is keyed BLAKE2b with a 128-bit digest truncated to 64 bits. That is
statistically sound but it is NOT a secure noise source: floating-point
Laplace sampling leaks through its low bits, so do not use this module to
protect real data.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

from dpagg.errors import InvalidParameterError

_MASK64 = (1 << 64) - 1
_TWO52 = float(1 << 52)


def _seed_bytes(seed: int) -> bytes:
    return (int(seed) & _MASK64).to_bytes(8, "little")


def _lp(data: bytes) -> bytes:
    """Length-prefix ``data`` so concatenated fields stay unambiguous."""
    return len(data).to_bytes(4, "little") + data


def _hasher(seed: int, tag: str, digest_size: int = 16) -> "hashlib._Hash":
    h = hashlib.blake2b(digest_size=digest_size, key=_seed_bytes(seed))
    h.update(_lp(tag.encode("utf-8")))
    return h


def prf(seed: int, tag: str, payload: bytes) -> int:
    """64-bit keyed pseudorandom value for ``payload`` in domain ``tag``."""
    h = _hasher(seed, tag)
    h.update(payload)
    return int.from_bytes(h.digest()[:8], "little")


def to_uniform(h: int) -> float:
    """Map a 64-bit integer to a float strictly inside (0, 1).

    Uses the top 52 bits: ``(h >> 12) + 0.5`` is exact in a double, so neither
    endpoint can be produced by rounding.
    """
    return ((h >> 12) + 0.5) / _TWO52


def uniform(seed: int, tag: str, payload: bytes) -> float:
    return to_uniform(prf(seed, tag, payload))


def uniform_block(seed: int, tag: str, payload: bytes, n: int) -> np.ndarray:
    """``n`` uniforms in (0, 1) from a counter-mode stream over ``payload``.

    Each 64-byte BLAKE2b block yields eight values; block ``c`` hashes
    ``payload || c``. The stream for a payload is independent of any other
    payload, which is what makes per-user generation partition invariant.
    """
    if n <= 0:
        return np.empty(0, dtype=np.float64)
    base = _hasher(seed, tag, digest_size=64)
    base.update(_lp(payload))
    chunks = []
    for counter in range((n + 7) // 8):
        h = base.copy()
        h.update(counter.to_bytes(8, "little"))
        chunks.append(h.digest())
    words = np.frombuffer(b"".join(chunks), dtype="<u8")[:n]
    return ((words >> np.uint64(12)).astype(np.float64) + 0.5) / _TWO52


# Round tags for the two contribution-bounding passes.
ROUND_SELECT = "bound-1"
ROUND_AGGREGATE = "bound-2"


class KeyRanker:
    """Per-(seed, round, user) random order over keys.

    Hashing the user prefix once and copying the hasher per key keeps the
    per-key cost to a single BLAKE2b compression.
    """

    __slots__ = ("_base",)

    def __init__(self, seed: int, round_tag: str, user: str):
        base = _hasher(seed, "rank:" + round_tag)
        base.update(_lp(user.encode("utf-8")))
        self._base = base

    def __call__(self, key: str) -> int:
        h = self._base.copy()
        h.update(key.encode("utf-8"))
        return int.from_bytes(h.digest()[:8], "little")


def key_rank(seed: int, round_tag: str, user: str, key: str) -> int:
    """Rank of ``key`` in ``user``'s random key order for one bounding round.

    Smaller ranks win. Equal ranks are broken by the key itself; callers
    order by ``(rank, key)``.
    """
    return KeyRanker(seed, round_tag, user)(key)


def laplace(u: float, b: float) -> float:
    """Inverse-CDF Laplace(0, b) sample for a uniform ``u`` in (0, 1)."""
    if not b > 0:
        raise InvalidParameterError(f"Laplace scale must be positive, got {b!r}")
    if not 0.0 < u < 1.0:
        raise InvalidParameterError(f"uniform must lie in (0, 1), got {u!r}")
    d = u - 0.5
    if d == 0.0:
        return 0.0
    return -b * math.copysign(1.0, d) * math.log1p(-2.0 * abs(d))


def noise_for_key(seed: int, stage_tag: str, key: str, b: float,
                  enabled: bool = True) -> float:
    """Laplace(0, b) noise determined only by ``(seed, stage_tag, key)``.

    With ``enabled=False`` the uniform is pinned to 0.5, so the result is the
    Laplace median, 0.0. This is a debugging switch only.
    """
    if not enabled:
        return laplace(0.5, b)
    return laplace(uniform(seed, "noise:" + stage_tag, key.encode("utf-8")), b)
