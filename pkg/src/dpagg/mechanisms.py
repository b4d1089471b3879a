"""Per-key DP mechanisms, split into four stages.

The engine never treats a mechanism as a black-box reducer. Each mechanism
exposes four stages, and the pipelines call them at fixed points:

1. ``raw_combine`` folds one user's raw values for one key into an
   accumulator, right after the user grouping.
2. ``preprocess`` turns the accumulator into a bounded contribution.
3. ``keyed_combine`` sums contributions for a key. Dummy keys pass ``[]``.
4. ``add_noise`` adds the calibrated Laplace noise.

Other per-key mechanisms, for example quantiles, can be added by
subclassing ``Mechanism``. The engine does not need to change.
"""

from __future__ import annotations

import abc
import math
from typing import Sequence

from dpagg.errors import ContractViolation, InvalidParameterError
from dpagg.model import Key, PrivacyBudget
from dpagg.noise import noise_for_key

AGG_STAGE = "agg"


class Mechanism(abc.ABC):
    kind: str

    @property
    @abc.abstractmethod
    def per_key_cap(self) -> float:
        """Largest change one user can make to one key's pre-noise partial."""

    @abc.abstractmethod
    def raw_combine(self, values: Sequence[float]) -> float:
        """Fold one (user, key)'s raw values into an accumulator."""

    @abc.abstractmethod
    def preprocess(self, acc: float) -> float:
        """Map an accumulator to a contribution with bounded sensitivity."""

    def keyed_combine(self, contribs: Sequence[float]) -> float:
        # fsum is exactly rounded, hence independent of the order and grouping
        # of its inputs.
        return math.fsum(contribs)

    def noise_scale(self, budget: PrivacyBudget) -> float:
        if not budget.epsilon_m > 0:
            raise InvalidParameterError(f"epsilon_m must be positive, got {budget.epsilon_m}")
        return self.per_key_cap / budget.epsilon_m

    def add_noise(self, partial: float, budget: PrivacyBudget, key: Key, seed: int,
                  enabled: bool = True) -> float:
        return partial + noise_for_key(seed, AGG_STAGE, key, self.noise_scale(budget), enabled)

    def contribution(self, values: Sequence[float]) -> float:
        """``preprocess(raw_combine(values))``."""
        return self.preprocess(self.raw_combine(values))

    def exact(self, values: Sequence[float]) -> float:
        """Non-private aggregate over all of a key's raw values."""
        raise NotImplementedError


class CountMechanism(Mechanism):
    """Counts users per key: any number of records from one user counts once."""

    kind = "count"

    @property
    def per_key_cap(self) -> float:
        return 1.0

    def raw_combine(self, values: Sequence[float]) -> float:
        if not values:
            raise ContractViolation("raw_combine needs at least one value")
        return 1.0

    def preprocess(self, acc: float) -> float:
        return 1.0

    def exact(self, values: Sequence[float]) -> float:
        return float(len(values))

    def __repr__(self) -> str:
        return "CountMechanism()"

    def __eq__(self, other) -> bool:
        return isinstance(other, CountMechanism)

    def __hash__(self) -> int:
        return hash(self.kind)


class SumMechanism(Mechanism):
    """Bounded sum: each user's per-key total is clamped to ``[lower, clamp]``.

    The clamp applies to the combined per-(user, key) total, not to each
    record.
    """

    kind = "sum"

    def __init__(self, clamp: float, lower: float = 0.0):
        if not (math.isfinite(clamp) and clamp > 0):
            raise InvalidParameterError(f"clamp must be a positive finite number, got {clamp!r}")
        if not (math.isfinite(lower) and lower < clamp):
            raise InvalidParameterError(f"lower bound {lower!r} must be below clamp {clamp!r}")
        self.clamp = float(clamp)
        self.lower = float(lower)

    @property
    def per_key_cap(self) -> float:
        return max(abs(self.lower), abs(self.clamp))

    def raw_combine(self, values: Sequence[float]) -> float:
        if not values:
            raise ContractViolation("raw_combine needs at least one value")
        return math.fsum(values)

    def preprocess(self, acc: float) -> float:
        return min(max(acc, self.lower), self.clamp)

    def exact(self, values: Sequence[float]) -> float:
        return math.fsum(values)

    def __repr__(self) -> str:
        return f"SumMechanism(clamp={self.clamp!r}, lower={self.lower!r})"

    def __eq__(self, other) -> bool:
        return (isinstance(other, SumMechanism)
                and (self.clamp, self.lower) == (other.clamp, other.lower))

    def __hash__(self) -> int:
        return hash((self.kind, self.clamp, self.lower))


def make_mechanism(kind: str, clamp: float | None = None, lower: float = 0.0) -> Mechanism:
    if kind == "count":
        return CountMechanism()
    if kind == "sum":
        if clamp is None:
            raise InvalidParameterError("the sum mechanism needs a clamp")
        return SumMechanism(clamp, lower)
    raise InvalidParameterError(f"unknown mechanism {kind!r}")
