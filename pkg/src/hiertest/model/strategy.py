"""
Testing strategies: labeled binary trees over a hierarchy's attributes.

Convention: `on0` is the branch taken when the test answers 0 (pattern ruled
out), `on1` when it answers 1. All expectations are under the background law,
with tests for distinct attributes independent.
"""
from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

from hiertest.core.exception import (
    AppException,
    ConfigError,
    GuardExceededError,
    InvalidStrategyError,
    PreconditionError,
)
from hiertest.core.logger import setup_logger
from hiertest.model.costmodel import CostModel, test_cost
from hiertest.model.hierarchy import AttrRef, Covering, Hierarchy
from hiertest.utils.params import get_settings

logger = setup_logger(name="Strategy", log_file_name=get_settings().log_file("strategy"))


# --- test model ------------------------------------------------------------------


@dataclass(frozen=True)
class TestEntry:
    __test__ = False

    beta: float
    cost: float

    @property
    def ratio(self) -> float:
        return self.cost / self.beta if self.beta > 0 else math.inf


@dataclass(frozen=True)
class TestModel:
    """
    Per-attribute power and cost.

    Fixed mode holds one (beta, cost) entry per original attribute, keyed by the
    attribute id of the hierarchy the model was built for (subhierarchies map back
    through `Hierarchy.origin`). Variable mode holds a CostModel and reads the power
    off each strategy node. Perfect-test attributes always have beta 1 and cost c*.
    """

    __test__ = False

    entries: Mapping[int, TestEntry] = field(default_factory=dict)
    cost_model: Optional[CostModel] = None

    @property
    def mode(self) -> str:
        return "variable" if self.cost_model is not None else "fixed"

    @classmethod
    def fixed(cls, h: Hierarchy, values: Mapping[AttrRef, Any]) -> "TestModel":
        entries: Dict[int, TestEntry] = {}
        for ref, value in values.items():
            if not h.has(ref):
                raise ConfigError(f"test entry for unknown attribute {ref!r}", field=f"tests.{ref}")
            a = h.resolve(ref)
            entries[a] = _coerce_entry(value, f"tests.{h.name(a)}")
        for a in h.original_ids():
            if h.origin[a] not in entries and a not in entries:
                raise ConfigError(f"missing beta for attribute {h.name(a)!r}", field=f"tests.{h.name(a)}")
        return cls(entries={h.origin[a]: e for a, e in entries.items()})

    @classmethod
    def uniform(cls, h: Hierarchy, beta: float, cost: float) -> "TestModel":
        return cls.fixed(h, {a: TestEntry(beta, cost) for a in h.original_ids()})

    @classmethod
    def variable(cls, m: CostModel) -> "TestModel":
        return cls(cost_model=m)

    def entry(self, h: Hierarchy, attr: int, beta: Optional[float] = None) -> TestEntry:
        a = h.attributes[attr]
        if a.perfect:
            return TestEntry(1.0, h.unit_post_cost)
        if self.cost_model is not None:
            if beta is None:
                raise PreconditionError(f"variable-power test for {a.name!r} needs a power")
            return TestEntry(beta, test_cost(self.cost_model, a.scope, beta))
        key = h.origin[attr]
        if key not in self.entries:
            raise ConfigError(f"missing beta for attribute {a.name!r}", field=f"tests.{a.name}")
        return self.entries[key]

    def node_entry(self, h: Hierarchy, node: "Node") -> TestEntry:
        return self.entry(h, h.resolve(node.attr), node.beta)

    def power(self, h: Hierarchy, attr: int) -> float:
        return self.entry(h, attr).beta

    def cost(self, h: Hierarchy, attr: int) -> float:
        return self.entry(h, attr).cost

    def ratio(self, h: Hierarchy, attr: int) -> float:
        return self.entry(h, attr).ratio

    def to_config(self, h: Hierarchy) -> dict:
        return {
            h.name(a): {"beta": self.entries[h.origin[a]].beta, "cost": self.entries[h.origin[a]].cost}
            for a in h.original_ids()
            if h.origin[a] in self.entries
        }


def _coerce_entry(value: Any, path: str) -> TestEntry:
    if isinstance(value, TestEntry):
        beta, cost = value.beta, value.cost
    elif isinstance(value, Mapping):
        if "beta" not in value:
            raise ConfigError("missing beta", field=f"{path}.beta")
        if "cost" not in value:
            raise ConfigError("missing cost", field=f"{path}.cost")
        beta, cost = value["beta"], value["cost"]
    elif isinstance(value, (tuple, list)) and len(value) == 2:
        beta, cost = value
    else:
        raise ConfigError("test entry must be {beta, cost}", field=path)
    try:
        beta, cost = float(beta), float(cost)
    except (TypeError, ValueError) as exc:
        raise ConfigError("beta and cost must be numbers", field=path) from exc
    if not 0.0 <= beta <= 1.0:
        raise ConfigError(f"beta must lie in [0,1], got {beta}", field=f"{path}.beta")
    if cost < 0:
        raise ConfigError(f"cost must be nonnegative, got {cost}", field=f"{path}.cost")
    return TestEntry(beta, cost)


# --- strategy trees ----------------------------------------------------------------


@dataclass(frozen=True)
class Leaf:
    filtered: frozenset


@dataclass(frozen=True)
class Node:
    attr: AttrRef
    on0: "StrategyNode"
    on1: "StrategyNode"
    beta: Optional[float] = None


StrategyNode = Union[Node, Leaf]


@dataclass(frozen=True)
class Strategy:
    root: StrategyNode

    def nodes(self) -> Iterator[Node]:
        stack = [self.root]
        while stack:
            n = stack.pop()
            if isinstance(n, Node):
                yield n
                stack.append(n.on1)
                stack.append(n.on0)

    def leaves(self) -> Iterator[Leaf]:
        stack = [self.root]
        while stack:
            n = stack.pop()
            if isinstance(n, Leaf):
                yield n
            else:
                stack.append(n.on1)
                stack.append(n.on0)

    @property
    def size(self) -> int:
        return sum(1 for _ in self.nodes())

    def tested_attributes(self) -> Tuple[AttrRef, ...]:
        seen: Dict[AttrRef, None] = {}
        for n in self.nodes():
            seen.setdefault(n.attr, None)
        return tuple(seen)

    @classmethod
    def empty(cls, h: Hierarchy) -> "Strategy":
        return cls(Leaf(frozenset(h.patterns)))


def strategy_from_dict(doc: Any, h: Hierarchy, path: str = "strategy") -> Strategy:
    """Parse the JSON strategy document; unresolvable attribute references are kept for `validate`."""

    def parse(obj: Any, where: str) -> StrategyNode:
        if not isinstance(obj, dict):
            raise ConfigError("strategy node must be an object", field=where)
        if "filtered" in obj:
            if not isinstance(obj["filtered"], list):
                raise ConfigError("filtered must be an array of pattern ids", field=f"{where}.filtered")
            return Leaf(frozenset(str(p) for p in obj["filtered"]))
        for key in ("attr", "on0", "on1"):
            if key not in obj:
                raise ConfigError(f"strategy node is missing '{key}'", field=f"{where}.{key}")
        ref = obj["attr"]
        attr = h.resolve(ref) if h.has(ref) else ref
        beta = obj.get("beta")
        if beta is not None:
            try:
                beta = float(beta)
            except (TypeError, ValueError) as exc:
                raise ConfigError("beta must be a number", field=f"{where}.beta") from exc
        return Node(attr=attr, beta=beta, on0=parse(obj["on0"], f"{where}.on0"), on1=parse(obj["on1"], f"{where}.on1"))

    return Strategy(parse(doc, path))


def strategy_to_dict(s: Strategy, h: Hierarchy) -> dict:
    def dump(n: StrategyNode) -> dict:
        if isinstance(n, Leaf):
            return {"filtered": [p for p in h.patterns if p in n.filtered]}
        out: dict = {"attr": h.name(h.resolve(n.attr))}
        if n.beta is not None:
            out["beta"] = n.beta
        out["on0"] = dump(n.on0)
        out["on1"] = dump(n.on1)
        return out

    return dump(s.root)


# --- validation ----------------------------------------------------------------------


def validate(s: Strategy, h: Hierarchy, t: Optional[TestModel] = None) -> List[str]:
    """
    Every problem found; an empty list means the strategy is valid. With a fixed
    test model, a power stored on a node must agree with the model's entry.
    """
    errors: List[str] = []
    tol = get_settings().tolerances.cost_equality

    def check(n: StrategyNode, where: str, branch: Tuple[int, ...], zeros: Tuple[int, ...]) -> None:
        if isinstance(n, Leaf):
            expected = h.filtered(zeros)
            if n.filtered != expected:
                errors.append(
                    f"inconsistent leaf at {where}: expected {sorted(expected)}, got {sorted(n.filtered)}"
                )
            return
        if not h.has(n.attr):
            errors.append(f"unknown attribute {n.attr!r} at {where}")
            return
        a = h.resolve(n.attr)
        if a in branch:
            errors.append(f"repeated attribute {h.name(a)!r} at {where}")
            return
        if n.beta is not None:
            if not 0.0 <= n.beta <= 1.0:
                errors.append(f"beta {n.beta} outside [0,1] at {where}")
            elif t is not None and (t.mode == "fixed" or h.attributes[a].perfect):
                expected = t.power(h, a)
                if abs(n.beta - expected) > tol:
                    errors.append(f"node beta {n.beta} contradicts the test model beta {expected} at {where}")
            if n.beta == 0.0:
                logger.warning("zero-power test of %s at %s: answer 0 is unreachable", h.name(a), where)
        check(n.on0, f"{where}.on0", branch + (a,), zeros + (a,))
        check(n.on1, f"{where}.on1", branch + (a,), zeros)

    check(s.root, "root", (), ())
    return errors


def ensure_valid(s: Strategy, h: Hierarchy, t: Optional[TestModel] = None) -> None:
    errors = validate(s, h, t)
    if errors:
        raise InvalidStrategyError(errors)


# --- evaluation ----------------------------------------------------------------------


@dataclass
class CostReport:
    expected_test_cost: float
    expected_post_cost: float
    q: Dict[int, float]
    zero_set_distribution: Optional[Dict[Covering, float]] = None
    covering_total: Optional[float] = None
    lambdas: Optional[Dict[int, float]] = None

    @property
    def total(self) -> float:
        return self.expected_test_cost + self.expected_post_cost

    def to_dict(self, h: Hierarchy) -> dict:
        out: dict = {
            "test_cost": self.expected_test_cost,
            "post_cost": self.expected_post_cost,
            "total": self.total,
            "q": {h.name(a): p for a, p in sorted(self.q.items())},
        }
        if self.zero_set_distribution is not None:
            out["zero_set_distribution"] = [
                {"attributes": z.names(h), "probability": p}
                for z, p in sorted(self.zero_set_distribution.items(), key=lambda kv: sorted(kv[0].attributes))
            ]
            out["covering_total"] = self.covering_total
        if self.lambdas is not None:
            out["lambda"] = {h.name(a): p for a, p in sorted(self.lambdas.items())}
        return out

    def csv_rows(self) -> Tuple[List[str], List[List[float]]]:
        return ["test_cost", "post_cost", "total"], [[self.expected_test_cost, self.expected_post_cost, self.total]]


def expected_cost(s: Strategy, h: Hierarchy, t: TestModel, target: Optional[str] = None) -> CostReport:
    """
    Mean testing plus postprocessing cost.

    Postprocessing charges c* per surviving pattern, or c* when `target` survives
    (single-target mode).
    """
    ensure_valid(s, h, t)
    if target is not None and target not in h.patterns:
        raise PreconditionError(f"unknown target pattern {target!r}")
    c_star = h.unit_post_cost
    q: Dict[int, float] = defaultdict(float)

    def cost(n: StrategyNode, reach: float) -> Tuple[float, float]:
        if isinstance(n, Leaf):
            if target is None:
                return 0.0, c_star * len(n.filtered)
            return 0.0, c_star * (1.0 if target in n.filtered else 0.0)
        e = t.node_entry(h, n)
        a = h.resolve(n.attr)
        q[a] += reach
        t0, p0 = cost(n.on0, reach * e.beta)
        t1, p1 = cost(n.on1, reach * (1.0 - e.beta))
        return e.cost + e.beta * t0 + (1.0 - e.beta) * t1, e.beta * p0 + (1.0 - e.beta) * p1

    test_part, post_part = cost(s.root, 1.0)
    return CostReport(expected_test_cost=test_part, expected_post_cost=post_part, q=dict(q))


def complete_with_perfect_tests(s: Strategy, h: Hierarchy) -> Strategy:
    """Rewrite every leaf with surviving patterns into a chain of perfect tests (no-error form)."""
    if not h.augmented:
        raise PreconditionError("perfect tests need an augmented hierarchy")

    def chain(remaining: Sequence[str], label: frozenset) -> StrategyNode:
        if not remaining:
            return Leaf(label)
        y = remaining[0]
        return Node(
            attr=h.perfect_for(y),
            beta=1.0,
            on0=chain(remaining[1:], label - {y}),
            on1=Leaf(label),
        )

    def rewrite(n: StrategyNode, branch: frozenset) -> StrategyNode:
        if isinstance(n, Leaf):
            todo = [y for y in h.patterns if y in n.filtered]
            if any(h.perfect_for(y) in branch for y in todo):
                # a perfect test answered 1 above: unreachable leaf
                return n
            return chain(todo, n.filtered)
        a = h.resolve(n.attr)
        return Node(attr=a, beta=n.beta, on0=rewrite(n.on0, branch | {a}), on1=rewrite(n.on1, branch | {a}))

    return Strategy(rewrite(s.root, frozenset()))


def covering_decomposition(s: Strategy, h: Hierarchy, t: TestModel) -> CostReport:
    """
    Cost as an expectation over the zero set: sum over coverings Z of
    P(zero set = Z) * sum_{A in Z} c(A)/beta(A), checked against the direct recursion.
    """
    if not h.augmented:
        raise PreconditionError("covering decomposition needs an augmented hierarchy")
    ensure_valid(s, h)
    s = complete_with_perfect_tests(s, h)
    report = expected_cost(s, h, t)

    dist: Dict[Covering, float] = defaultdict(float)
    covering_total = 0.0

    def walk(n: StrategyNode, reach: float, zeros: Tuple[Tuple[int, float], ...]) -> None:
        nonlocal covering_total
        if reach == 0.0:
            return
        if isinstance(n, Leaf):
            covered = set()
            for a, _ in zeros:
                covered |= h.attributes[a].patterns
            if covered != set(h.patterns):
                raise PreconditionError(
                    "strategy is not in no-error form",
                    detail=f"patterns {sorted(set(h.patterns) - covered)} uncovered at a reachable leaf",
                )
            dist[Covering(frozenset(a for a, _ in zeros))] += reach
            covering_total += reach * sum(r for _, r in zeros)
            return
        e = t.node_entry(h, n)
        a = h.resolve(n.attr)
        walk(n.on0, reach * e.beta, zeros + ((a, e.ratio),) if e.beta > 0 else zeros)
        walk(n.on1, reach * (1.0 - e.beta), zeros)

    walk(s.root, 1.0, ())

    tol = get_settings().tolerances.cost_equality
    if abs(covering_total - report.total) > tol * max(1.0, abs(report.total)):
        raise AppException(
            "covering decomposition disagrees with direct evaluation",
            detail=f"{covering_total!r} vs {report.total!r}",
        )

    lambdas: Dict[int, float] = defaultdict(float)
    for z, p in dist.items():
        for a in z.attributes:
            lambdas[a] += p

    report.zero_set_distribution = dict(dist)
    report.covering_total = covering_total
    report.lambdas = dict(lambdas)
    return report


def _possible_outcomes(h: Hierarchy, t: Optional[TestModel], attr: int) -> Tuple[int, ...]:
    if t is None:
        return (0, 1)
    a = h.attributes[attr]
    if a.perfect:
        return (0,)
    if t.mode == "variable":
        return (0, 1)
    beta = t.power(h, attr)
    if beta == 1.0:
        return (0,)
    if beta == 0.0:
        return (1,)
    return (0, 1)


def is_complete(s: Strategy, h: Hierarchy, t: Optional[TestModel] = None, limit: Optional[int] = None) -> bool:
    """
    True iff the leaf reached always carries the filtered set of the full outcome vector.

    With a test model, outcome vectors of probability zero are skipped.
    """
    limit = get_settings().guards.complete if limit is None else limit
    if h.size > limit:
        raise GuardExceededError("completeness check", h.size, limit)
    ensure_valid(s, h, t)

    choices = [_possible_outcomes(h, t, a) for a in range(h.size)]
    for vector in itertools.product(*choices):
        n = s.root
        possible = True
        while isinstance(n, Node):
            a = h.resolve(n.attr)
            x = vector[a]
            if t is not None and n.beta is not None and t.mode == "variable" and not h.attributes[a].perfect:
                if (x == 0 and n.beta == 0.0) or (x == 1 and n.beta == 1.0):
                    possible = False
                    break
            n = n.on0 if x == 0 else n.on1
        if not possible:
            continue
        full = h.filtered(a for a in range(h.size) if vector[a] == 0)
        if n.filtered != full:
            return False
    return True


def usage_cost(s: Strategy, h: Hierarchy, t: TestModel, R: float = 1.0, base: float = math.e) -> float:
    """
    Usage-based cost: -sum q log q + Q log(Q / R), Q = sum q, over the tests' usage
    probabilities q; zero-probability tests contribute nothing.
    """
    if not 0.0 < R <= 1.0:
        raise PreconditionError(f"R must lie in (0, 1], got {R}")
    if base <= 0 or base == 1:
        raise PreconditionError(f"invalid logarithm base {base}")
    if h.size <= get_settings().guards.complete:
        if not is_complete(s, h, t):
            raise PreconditionError("usage cost is defined for complete strategies only")
    else:
        logger.warning("completeness not checked: %d attributes exceeds the enumeration guard", h.size)
    report = expected_cost(s, h, t)
    log = math.log
    qs = [p for p in report.q.values() if p > 0.0]
    total_q = sum(qs)
    if total_q == 0.0:
        return 0.0
    value = -sum(p * log(p) for p in qs) + total_q * log(total_q / R)
    return value / log(base)


def brute_force_cost(s: Strategy, h: Hierarchy, t: TestModel) -> float:
    """Average cost over every outcome vector of the tested attributes (fixed powers only)."""
    if t.mode != "fixed":
        raise PreconditionError("outcome enumeration needs fixed powers")
    ensure_valid(s, h, t)
    tested = sorted({h.resolve(n.attr) for n in s.nodes()})
    if len(tested) > 24:
        raise GuardExceededError("outcome enumeration", len(tested), 24)
    entries = {a: t.entry(h, a) for a in tested}
    total = 0.0
    for vector in itertools.product((0, 1), repeat=len(tested)):
        outcome = dict(zip(tested, vector))
        weight = 1.0
        for a, x in outcome.items():
            weight *= entries[a].beta if x == 0 else 1.0 - entries[a].beta
        if weight == 0.0:
            continue
        cost = 0.0
        n = s.root
        while isinstance(n, Node):
            a = h.resolve(n.attr)
            cost += entries[a].cost
            n = n.on0 if outcome[a] == 0 else n.on1
        cost += h.unit_post_cost * len(n.filtered)
        total += weight * cost
    return total
