"""Single-target detection on a vine: ratio ordering, cost evaluation, brute-force oracle."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from hiertest.core.exception import ConfigError, GuardExceededError, PreconditionError
from hiertest.core.logger import setup_logger
from hiertest.model.hierarchy import Hierarchy, vine as vine_hierarchy
from hiertest.model.strategy import Leaf, Node, Strategy, TestEntry, TestModel
from hiertest.utils.params import get_settings

logger = setup_logger(name="Vine", log_file_name=get_settings().log_file("vine"))

Ordering = Tuple[int, ...]


@dataclass(frozen=True)
class VineInstance:
    """Imperfect tests (cost, power) plus a perfect test of cost c_star, indexed len(tests)."""

    tests: Tuple[Tuple[float, float], ...]
    c_star: float = 1.0

    def __post_init__(self) -> None:
        for i, (c, b) in enumerate(self.tests):
            if c < 0:
                raise PreconditionError(f"test {i}: cost must be nonnegative, got {c}")
            if not 0.0 < b <= 1.0:
                raise PreconditionError(f"test {i}: power must lie in (0,1], got {b}")
        if self.c_star < 0:
            raise PreconditionError(f"c_star must be nonnegative, got {self.c_star}")

    @property
    def perfect(self) -> int:
        return len(self.tests)

    def entry(self, k: int) -> Tuple[float, float]:
        return (self.c_star, 1.0) if k == self.perfect else self.tests[k]

    def ratio(self, k: int) -> float:
        c, b = self.entry(k)
        return c / b

    @classmethod
    def parse(cls, tests: str, c_star: float = 1.0) -> "VineInstance":
        """`c1:b1,c2:b2,...`"""
        out: List[Tuple[float, float]] = []
        for i, item in enumerate(p for p in tests.split(",") if p.strip()):
            try:
                c, b = item.split(":")
                out.append((float(c), float(b)))
            except ValueError as exc:
                raise ConfigError(f"malformed vine test {item!r}, expected cost:power", field=f"tests[{i}]") from exc
        return cls(tuple(out), float(c_star))


def vine_cost(v: VineInstance, ordering: Sequence[int]) -> Tuple[float, Tuple[float, ...]]:
    """
    Mean cost of running the tests in `ordering` until one answers 0.

    Also returns, per position, the probability that its test is the one answering 0;
    these weights sum to 1 because the ordering ends with the perfect test.
    """
    ordering = tuple(ordering)
    if not ordering or ordering[-1] != v.perfect:
        raise PreconditionError("malformed ordering: must end with the perfect test")
    if len(set(ordering)) != len(ordering):
        raise PreconditionError("malformed ordering: repeated test")
    if any(not 0 <= k <= v.perfect for k in ordering):
        raise PreconditionError("malformed ordering: unknown test index")

    cost = 0.0
    survive = 1.0
    weights = []
    for k in ordering:
        c, b = v.entry(k)
        cost += c * survive
        weights.append(b * survive)
        survive *= 1.0 - b
    return cost, tuple(weights)


def optimal_order(v: VineInstance) -> Tuple[Ordering, float]:
    """Ascending cost/power ratio, stable in the original index, cut after the perfect test."""
    # ratio ties with c*: imperfect tests go first
    ranked = sorted(range(v.perfect + 1), key=lambda k: (v.ratio(k), 1 if k == v.perfect else 0, k))
    cut = ranked.index(v.perfect)
    ordering = tuple(ranked[: cut + 1])
    cost, _ = vine_cost(v, ordering)
    logger.debug("optimal vine order %s with cost %.17g", ordering, cost)
    return ordering, cost


def brute_force_order(v: VineInstance, limit: Optional[int] = None) -> Tuple[Ordering, float]:
    """Minimum over every subset and permutation of the imperfect tests, followed by the perfect test."""
    limit = get_settings().guards.brute_force_vine if limit is None else limit
    if len(v.tests) > limit:
        raise GuardExceededError("vine brute force", len(v.tests), limit)
    best: Tuple[Ordering, float] = ((v.perfect,), v.c_star)
    for r in range(1, len(v.tests) + 1):
        for subset in itertools.combinations(range(len(v.tests)), r):
            for perm in itertools.permutations(subset):
                ordering = perm + (v.perfect,)
                cost, _ = vine_cost(v, ordering)
                if cost < best[1]:
                    best = (ordering, cost)
    return best


def as_strategy(v: VineInstance, ordering: Sequence[int]) -> Tuple[Hierarchy, TestModel, Strategy]:
    """
    The vine as a hierarchy of len(tests) nested attributes over one pattern, with the
    ordering as a strategy tree; the perfect test becomes the postprocessing charge.
    """
    levels = max(len(v.tests), 1)
    h = vine_hierarchy(levels, unit_post_cost=v.c_star)
    if not v.tests:
        return h, TestModel.uniform(h, 1.0, v.c_star), Strategy.empty(h)
    t = TestModel.fixed(h, {k: TestEntry(b, c) for k, (c, b) in enumerate(v.tests)})
    everything = frozenset(h.patterns)

    node = Leaf(everything)
    for k in reversed([k for k in ordering if k != v.perfect]):
        node = Node(attr=k, beta=v.tests[k][1], on0=Leaf(frozenset()), on1=node)
    return h, t, Strategy(node)
