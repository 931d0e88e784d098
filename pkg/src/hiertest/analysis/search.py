"""
Ground-truth optimizers: exact optimal strategies by dynamic programming over
outcome states, optimal powers on a fixed tree shape, and random strategy sampling.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Tuple, Union

import numpy as np

from hiertest.analysis.ctf import ctf_strategy
from hiertest.core.exception import GuardExceededError, PreconditionError
from hiertest.core.logger import setup_logger
from hiertest.model.costmodel import CostModel, optimal_power
from hiertest.model.hierarchy import Hierarchy, subhierarchy
from hiertest.model.strategy import (
    Leaf,
    Node,
    Strategy,
    StrategyNode,
    TestEntry,
    TestModel,
    ensure_valid,
    expected_cost,
)
from hiertest.utils.params import get_settings
from hiertest.utils.parallel import parallel_map

logger = setup_logger(name="Search", log_file_name=get_settings().log_file("search"))

Model = Union[TestModel, CostModel]
StateKey = Tuple[FrozenSet[str], FrozenSet[int]]


def _as_test_model(model: Model) -> TestModel:
    return TestModel.variable(model) if isinstance(model, CostModel) else model


# --- exact optimum ---------------------------------------------------------------


@dataclass
class DpResult:
    cost: float
    strategy: Strategy
    states: int


class _Solver:
    """
    best(state) = min(c*|Y|, min over admissible A of the cost of testing A next).

    A state is the filtered set plus the tested attributes that still meet it;
    under independence the order of past answers is irrelevant.
    """

    def __init__(self, h: Hierarchy, t: TestModel):
        self.h = h
        self.t = t
        self.variable = t.mode == "variable"
        self.c_star = h.unit_post_cost
        self.patterns = [a.patterns for a in h.attributes]
        self.memo: Dict[StateKey, Tuple[float, Optional[Tuple[int, float]]]] = {}
        self.entries: Dict[int, TestEntry] = {}
        self.scales: Dict[int, float] = {}
        for a in h.attributes:
            if a.perfect or not self.variable:
                self.entries[a.id] = t.entry(h, a.id)
            else:
                self.scales[a.id] = t.cost_model.complexity(a.scope)

    def _key(self, yhat: FrozenSet[str], tested: FrozenSet[int]) -> StateKey:
        return yhat, frozenset(a for a in tested if self.patterns[a] & yhat)

    def admissible(self, yhat: FrozenSet[str], tested: FrozenSet[int]) -> List[int]:
        return [a for a in range(self.h.size) if a not in tested and self.patterns[a] & yhat]

    def option(self, a: int, yhat: FrozenSet[str], tested: FrozenSet[int]) -> Tuple[float, float]:
        """Cost of testing a next and continuing optimally, with the power used."""
        after = tested | {a}
        zero = yhat - self.patterns[a]
        if a in self.entries:
            e = self.entries[a]
            x = self.best(zero, after) if e.beta > 0.0 else 0.0
            y = self.best(yhat, after) if e.beta < 1.0 else 0.0
            return e.cost + e.beta * x + (1.0 - e.beta) * y, e.beta
        x = self.best(zero, after)
        y = self.best(yhat, after)
        if y <= x:
            return y, 0.0
        beta, value = optimal_power(self.t.cost_model.psi, self.scales[a], x, y)
        return value, beta

    def best(self, yhat: FrozenSet[str], tested: FrozenSet[int]) -> float:
        key = self._key(yhat, tested)
        hit = self.memo.get(key)
        if hit is not None:
            return hit[0]
        value = self.c_star * len(yhat)
        choice: Optional[Tuple[int, float]] = None
        for a in self.admissible(yhat, tested):
            v, beta = self.option(a, yhat, tested)
            # strict: stop wins exact ties, then the lowest id
            if v < value:
                value, choice = v, (a, beta)
        self.memo[key] = (value, choice)
        return value

    def extract(self, yhat: FrozenSet[str], tested: FrozenSet[int]) -> StrategyNode:
        self.best(yhat, tested)
        _, choice = self.memo[self._key(yhat, tested)]
        if choice is None:
            return Leaf(yhat)
        a, beta = choice
        after = tested | {a}
        zero = yhat - self.patterns[a]
        on0 = self.extract(zero, after) if beta > 0.0 else Leaf(zero)
        on1 = self.extract(yhat, after) if beta < 1.0 else Leaf(yhat)
        return Node(attr=a, beta=beta, on0=on0, on1=on1)


def _guard(h: Hierarchy, limit: Optional[int]) -> None:
    limit = get_settings().guards.dp_patterns if limit is None else limit
    if len(h.patterns) > limit:
        raise GuardExceededError("exact DP", len(h.patterns), limit)


def exact_optimum_dp(h: Hierarchy, model: Model, limit: Optional[int] = None) -> DpResult:
    """Minimum expected cost over all strategies, and one optimal tree."""
    _guard(h, limit)
    solver = _Solver(h, _as_test_model(model))
    everything = frozenset(h.patterns)
    cost = solver.best(everything, frozenset())
    strategy = Strategy(solver.extract(everything, frozenset()))
    logger.debug("exact DP: cost %.17g over %d states", cost, len(solver.memo))
    return DpResult(cost=cost, strategy=strategy, states=len(solver.memo))


@dataclass
class CfCheck:
    holds: bool
    optimum: float
    root_first: float


def has_cf_property(h: Hierarchy, model: Model, limit: Optional[int] = None) -> CfCheck:
    """Whether some optimal strategy starts by testing the coarsest attribute."""
    if len(h.roots) != 1:
        raise PreconditionError("the coarse-first property needs a single coarsest attribute")
    _guard(h, limit)
    solver = _Solver(h, _as_test_model(model))
    everything = frozenset(h.patterns)
    optimum = solver.best(everything, frozenset())
    root_first, _ = solver.option(h.roots[0], everything, frozenset())
    tol = get_settings().tolerances.cost_equality
    return CfCheck(holds=root_first <= optimum + tol * max(1.0, abs(optimum)), optimum=optimum, root_first=root_first)


def cf_everywhere(h: Hierarchy, model: Model, limit: Optional[int] = None) -> Dict[str, CfCheck]:
    """The coarse-first check on every subhierarchy rooted at an imperfect internal attribute."""
    out: Dict[str, CfCheck] = {}
    for a in h.attributes:
        if a.perfect or not a.children:
            continue
        out[a.name] = has_cf_property(subhierarchy(h, a.id), model, limit)
    return out


# --- per-skeleton powers ------------------------------------------------------------


def optimize_powers(skeleton: Strategy, h: Hierarchy, m: CostModel) -> Tuple[Strategy, float]:
    """
    Optimal power at every node of a fixed tree shape, bottom-up: a node with
    continuation costs x (answer 0) and y (answer 1) gets the minimizer of
    a*Psi(beta) + beta*x + (1 - beta)*y.
    """
    ensure_valid(skeleton, h)
    c_star = h.unit_post_cost

    def walk(n: StrategyNode) -> Tuple[StrategyNode, float]:
        if isinstance(n, Leaf):
            return n, c_star * len(n.filtered)
        a = h.resolve(n.attr)
        attr = h.attributes[a]
        n0, x = walk(n.on0)
        n1, y = walk(n.on1)
        if attr.perfect:
            return Node(attr=a, beta=1.0, on0=n0, on1=n1), c_star + x
        if y <= x:
            return Node(attr=a, beta=0.0, on0=n0, on1=n1), y
        beta, value = optimal_power(m.psi, m.complexity(attr.scope), x, y)
        return Node(attr=a, beta=beta, on0=n0, on1=n1), value

    root, cost = walk(skeleton.root)
    return Strategy(root), cost


# --- random strategies --------------------------------------------------------------


def sample_skeleton(
    h: Hierarchy,
    rng: np.random.Generator,
    stop_probability: float = 0.0,
    t: Optional[TestModel] = None,
) -> Strategy:
    """
    Random attribute-based tree: at each node an attribute is drawn uniformly among
    those untested on the branch that still meet the filtered set. A branch ends when
    none remain, or with probability `stop_probability` at each node. Branches a
    known power of 0 or 1 makes unreachable are closed with a leaf.
    """
    patterns = [a.patterns for a in h.attributes]

    def known(a: int) -> Optional[float]:
        if h.attributes[a].perfect:
            return 1.0
        if t is not None and t.mode == "fixed":
            return t.power(h, a)
        return None

    def grow(yhat: FrozenSet[str], tested: FrozenSet[int]) -> StrategyNode:
        admissible = [a for a in range(h.size) if a not in tested and patterns[a] & yhat]
        if not admissible:
            return Leaf(yhat)
        if stop_probability > 0.0 and rng.random() < stop_probability:
            return Leaf(yhat)
        a = admissible[int(rng.integers(len(admissible)))]
        beta = known(a)
        zero = yhat - patterns[a]
        on0 = Leaf(zero) if beta == 0.0 else grow(zero, tested | {a})
        on1 = Leaf(yhat) if beta == 1.0 else grow(yhat, tested | {a})
        return Node(attr=a, beta=beta, on0=on0, on1=on1)

    return Strategy(grow(frozenset(h.patterns), frozenset()))


@dataclass
class SampleReport:
    seed: int
    costs: np.ndarray
    best_index: int
    best_strategy: Strategy
    ctf_cost: float
    stop_probability: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return int(self.costs.size)

    @property
    def min_cost(self) -> float:
        return float(self.costs[self.best_index])

    @property
    def mean_cost(self) -> float:
        return float(self.costs.mean())

    @property
    def ctf_beaten(self) -> bool:
        tol = get_settings().tolerances.cost_equality
        return self.min_cost < self.ctf_cost - tol * max(1.0, abs(self.ctf_cost))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "seed": self.seed,
            "stop_probability": self.stop_probability,
            "min_cost": self.min_cost,
            "mean_cost": self.mean_cost,
            "best_index": self.best_index,
            "ctf_cost": self.ctf_cost,
            "ctf_beaten": self.ctf_beaten,
        }

    def csv_rows(self) -> Tuple[List[str], List[list]]:
        order = np.argsort(self.costs, kind="stable")
        rank = np.empty_like(order)
        rank[order] = np.arange(1, order.size + 1)
        return ["strategy_id", "cost", "rank"], [[i, float(c), int(r)] for i, (c, r) in enumerate(zip(self.costs, rank))]


def random_sample(
    h: Hierarchy,
    model: Model,
    n: int,
    seed: int,
    stop_probability: Optional[float] = None,
    workers: Optional[int] = None,
) -> SampleReport:
    """
    n random strategies, each drawn from its own substream default_rng([seed, i]).

    Variable powers are optimized per tree; fixed powers are evaluated as drawn.
    Results depend on the seed only, never on the worker count.
    """
    if n < 1:
        raise PreconditionError(f"sample count must be at least 1, got {n}")
    if seed < 0:
        raise PreconditionError(f"seed must be nonnegative, got {seed}")
    t = _as_test_model(model)
    if stop_probability is None:
        stop_probability = 0.0 if t.mode == "variable" else float(get_settings().module("search")["stop_probability"])
    if not 0.0 <= stop_probability < 1.0:
        raise PreconditionError(f"stop probability must lie in [0,1), got {stop_probability}")

    def draw(i: int) -> Tuple[Strategy, float]:
        rng = np.random.default_rng([seed, i])
        skeleton = sample_skeleton(h, rng, stop_probability, t)
        if t.mode == "variable":
            return optimize_powers(skeleton, h, t.cost_model)
        return skeleton, expected_cost(skeleton, h, t).total

    costs = np.array(parallel_map(lambda i: draw(i)[1], range(n), workers), dtype=float)
    best_index = int(np.argmin(costs))
    best_strategy, _ = draw(best_index)

    if t.mode == "variable":
        _, ctf_cost = optimize_powers(ctf_strategy(h), h, t.cost_model)
    else:
        ctf_cost = expected_cost(ctf_strategy(h, t), h, t).total
    logger.info("sampled %d strategies: min %.6g, CTF %.6g", n, float(costs[best_index]), ctf_cost)
    return SampleReport(
        seed=seed,
        costs=costs,
        best_index=best_index,
        best_strategy=best_strategy,
        ctf_cost=ctf_cost,
        stop_probability=stop_probability,
    )
