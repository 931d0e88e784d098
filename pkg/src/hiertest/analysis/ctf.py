"""
Coarse-to-fine (CTF) strategies: construction, closed-form cost, optimal powers.

A CTF strategy tests an attribute iff every ancestor has been tested and
answered 1. With variable powers the optimal CTF cost is computed bottom-up:
f(perfect) = c*, f(B) = Phi_{a(B)}(sum of f over B's children).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

from hiertest.core.exception import PreconditionError
from hiertest.core.logger import setup_logger
from hiertest.model.costmodel import ComplexityFunction, CostModel, PowerFunction, optimal_power, phi
from hiertest.model.hierarchy import Hierarchy, augment, dyadic
from hiertest.model.strategy import Leaf, Node, Strategy, StrategyNode, TestModel
from hiertest.utils.params import get_settings

logger = setup_logger(name="Ctf", log_file_name=get_settings().log_file("ctf"))

Order = Union[str, Sequence[int]]


def _resolve_order(h: Hierarchy, order: Order) -> Tuple[int, ...]:
    if order == "breadth":
        return h.breadth_first()
    if order == "depth":
        return h.depth_first()
    if isinstance(order, str):
        raise PreconditionError(f"unknown CTF order {order!r}")
    ids = tuple(h.resolve(a) for a in order)
    if sorted(ids) != list(range(h.size)):
        raise PreconditionError("CTF order must list every attribute exactly once")
    return ids


def ctf_strategy(
    h: Hierarchy,
    t: Optional[TestModel] = None,
    order: Order = "breadth",
    powers: Optional[Mapping[int, float]] = None,
) -> Strategy:
    """
    CTF tree: at every node the first attribute in `order` whose ancestors all answered 1.

    Node powers come from `powers`, else from a fixed test model, else are left open
    (perfect tests always carry 1). A branch of probability zero (answer 0 at power 0,
    answer 1 at power 1) is closed with a leaf.
    """
    sequence = _resolve_order(h, order)
    ancestors = {a: set(h.ancestors(a)) for a in sequence}

    def power(a: int) -> Optional[float]:
        if h.attributes[a].perfect:
            return 1.0
        if powers is not None:
            return float(powers[a])
        if t is not None and t.mode == "fixed":
            return t.power(h, a)
        return None

    def build(tested: frozenset, ones: frozenset, zeros: Tuple[int, ...]) -> StrategyNode:
        for a in sequence:
            if a in tested or not ancestors[a] <= ones:
                continue
            beta = power(a)
            if beta == 0.0:
                on0: StrategyNode = Leaf(h.filtered(zeros + (a,)))
            else:
                on0 = build(tested | {a}, ones, zeros + (a,))
            if beta == 1.0:
                on1: StrategyNode = Leaf(h.filtered(zeros))
            else:
                on1 = build(tested | {a}, ones | {a}, zeros)
            return Node(attr=a, beta=beta, on0=on0, on1=on1)
        return Leaf(h.filtered(zeros))

    return Strategy(build(frozenset(), frozenset(), ()))


def _survival(h: Hierarchy, t: TestModel, a: int) -> float:
    """Probability every strict ancestor of a answers 1."""
    p = 1.0
    for b in h.ancestors(a):
        p *= 1.0 - t.power(h, b)
    return p


def ctf_cost_fixed(h: Hierarchy, t: TestModel) -> float:
    """sum_A c(A) prod_{B above A}(1 - beta(B)) + c* sum_y prod_{A containing y}(1 - beta(A))."""
    if t.mode != "fixed":
        raise PreconditionError("closed-form CTF cost needs fixed powers")
    test_part = sum(t.cost(h, a.id) * _survival(h, t, a.id) for a in h.attributes)
    post_part = 0.0
    for leaf in h.leaves():
        post_part += _survival(h, t, leaf) * (1.0 - t.power(h, leaf))
    return test_part + h.unit_post_cost * post_part


def false_alarm_prob(h: Hierarchy, t: TestModel) -> float:
    """
    Probability under the background law that some root-to-leaf chain answers 1
    everywhere, i.e. that the filtered set is nonempty after all tests.
    """
    if h.augmented:
        raise PreconditionError("false-alarm probability is defined on the unaugmented hierarchy")
    if t.mode != "fixed":
        raise PreconditionError("false-alarm probability needs fixed powers")

    def g(a: int) -> float:
        kids = h.attributes[a].children
        own = 1.0 - t.power(h, a)
        if not kids:
            return own
        extinct = 1.0
        for c in kids:
            extinct *= 1.0 - g(c)
        return own * (1.0 - extinct)

    extinct = 1.0
    for r in h.roots:
        extinct *= 1.0 - g(r)
    return 1.0 - extinct


@dataclass
class LevelRow:
    level: int
    attributes: int
    scope: float
    beta_star: float
    level_cost: float
    cumulative_cost: float


@dataclass
class CtfResult:
    hierarchy: Hierarchy
    per_attribute_power: Dict[int, float]
    per_attribute_cost: Dict[int, float]
    total_cost: float
    levels: List[LevelRow] = field(default_factory=list)

    @cached_property
    def strategy(self) -> Strategy:
        return ctf_strategy(self.hierarchy, powers=self.per_attribute_power)

    @property
    def level_costs_nondecreasing(self) -> bool:
        tol = get_settings().tolerances.cost_equality
        costs = [row.level_cost for row in self.levels]
        return all(b >= a - tol for a, b in zip(costs, costs[1:]))

    def to_dict(self) -> dict:
        h = self.hierarchy
        return {
            "total_cost": self.total_cost,
            "attributes": [
                {
                    "attr": h.name(a),
                    "level": h.attributes[a].level,
                    "scope": h.attributes[a].scope,
                    "beta_star": self.per_attribute_power[a],
                    "subtree_cost": self.per_attribute_cost[a],
                }
                for a in h.breadth_first()
            ],
            "level_costs_nondecreasing": self.level_costs_nondecreasing,
        }

    def csv_rows(self) -> Tuple[List[str], List[list]]:
        header = ["level", "attributes", "scope", "beta_star", "level_cost", "cumulative_cost"]
        rows = [[r.level, r.attributes, r.scope, r.beta_star, r.level_cost, r.cumulative_cost] for r in self.levels]
        return header, rows


def level_table(h: Hierarchy, powers: Mapping[int, float], costs: Mapping[int, float]) -> List[LevelRow]:
    """Expected CTF test cost per level, given each attribute's power and unit test cost."""
    reach: Dict[int, float] = {}
    for a in h.breadth_first():
        parent = h.attributes[a].parent
        reach[a] = 1.0 if parent is None else reach[parent] * (1.0 - powers[parent])
    rows: List[LevelRow] = []
    running = 0.0
    for level in range(1, h.depth + 1):
        members = [a for a in h.breadth_first() if h.attributes[a].level == level]
        if not members:
            continue
        level_cost = sum(reach[a] * costs[a] for a in members)
        running += level_cost
        rows.append(LevelRow(
            level=level,
            attributes=len(members),
            scope=sum(h.attributes[a].scope for a in members) / len(members),
            beta_star=sum(powers[a] for a in members) / len(members),
            level_cost=level_cost,
            cumulative_cost=running,
        ))
    return rows


def assign_optimal_powers(h: Hierarchy, m: CostModel) -> CtfResult:
    """Optimal CTF powers by one bottom-up pass over the augmented attribute tree."""
    if not h.augmented:
        raise PreconditionError("optimal power assignment needs an augmented hierarchy")
    f: Dict[int, float] = {}
    powers: Dict[int, float] = {}
    unit_costs: Dict[int, float] = {}

    def solve(a: int) -> float:
        attr = h.attributes[a]
        if attr.perfect:
            powers[a] = 1.0
            unit_costs[a] = h.unit_post_cost
            f[a] = h.unit_post_cost
            return f[a]
        below = sum(solve(c) for c in attr.children)
        scale = m.complexity(attr.scope)
        beta, value = optimal_power(m.psi, scale, 0.0, below)
        powers[a] = beta
        unit_costs[a] = scale * float(m.psi(beta))
        f[a] = value
        return value

    total = sum(solve(r) for r in h.roots)
    logger.debug("optimal CTF cost %.17g over %d attributes (%s)", total, h.size, m.psi.name)
    return CtfResult(
        hierarchy=h,
        per_attribute_power=powers,
        per_attribute_cost=f,
        total_cost=total,
        levels=level_table(h, powers, unit_costs),
    )


def is_ctf_in_power(h: Hierarchy, powers: Mapping[int, float], tol: float = 1e-12) -> bool:
    """Powers never decrease from an attribute to its children (perfect tests excluded)."""
    for a in h.attributes:
        if a.perfect or a.parent is None:
            continue
        if powers[a.id] < powers[a.parent] - tol:
            return False
    return True


@dataclass
class DyadicRow:
    level: int
    cost: float
    unit_cost: float
    root_power: float
    perfect_only_cost: float


def dyadic_recursion(psi: PowerFunction, levels: int, c_star: Optional[float] = None) -> List[DyadicRow]:
    """
    Optimal CTF cost of regular dyadic hierarchies with Gamma(k) = k, for 1..levels levels.

    C_l = Phi_{2^(l-1)}(2 C_{l-1}) from the seed C_0 = c*/2 (c* defaults to Psi(1)); the
    iteration runs on U_l = C_l / 2^(l-1), which satisfies U_l = Phi_1(U_{l-1}). The root
    power of the l-level hierarchy is (Psi')^{-1}(U_{l-1}).
    """
    if levels < 1:
        raise PreconditionError(f"dyadic recursion needs levels >= 1, got {levels}")
    c_star = float(psi(1.0)) if c_star is None else float(c_star)
    u_prev = c_star  # U_0 = C_0 / 2^(-1)
    rows: List[DyadicRow] = []
    for level in range(1, levels + 1):
        root_power = float(psi.inverse_derivative(u_prev))
        u = float(phi(psi, 1.0, u_prev))
        try:
            scale = math.ldexp(1.0, level - 1)
        except OverflowError:
            scale = math.inf
        rows.append(DyadicRow(
            level=level,
            cost=u * scale,
            unit_cost=u,
            root_power=root_power,
            perfect_only_cost=c_star * scale,
        ))
        u_prev = u
    return rows


def dyadic_ctf(psi: PowerFunction, levels: int, c_star: Optional[float] = None) -> CtfResult:
    """assign_optimal_powers on the explicitly built dyadic hierarchy, same seed convention."""
    c_star = float(psi(1.0)) if c_star is None else float(c_star)
    h = augment(dyadic(levels), c_star=c_star)
    return assign_optimal_powers(h, CostModel(psi=psi, c_star=c_star))


def resistor_oracle(h: Hierarchy, gamma: Optional[ComplexityFunction] = None) -> float:
    """
    Conductance of the tree-shaped resistor network: each attribute is a resistor
    1/Gamma(|A|) in series with its children in parallel; the bottom row are the
    perfect-test resistors of conductance c*.
    """
    if not h.augmented:
        raise PreconditionError("resistor network needs an augmented hierarchy")
    gamma = gamma or ComplexityFunction()

    def conductance(a: int) -> float:
        attr = h.attributes[a]
        if attr.perfect:
            return h.unit_post_cost
        below = sum(conductance(c) for c in attr.children)
        own = gamma(attr.scope)
        if below == 0.0 or own == 0.0:
            return 0.0
        return 1.0 / (1.0 / own + 1.0 / below)

    return sum(conductance(r) for r in h.roots)


def harmonic_vine_cost(gammas: Sequence[float], c_star: float = 1.0) -> float:
    """Optimized cost of a right vine under the harmonic power function: the harmonic sum of its complexities and c*."""
    values = list(gammas) + [c_star]
    if any(v <= 0 for v in values):
        return 0.0
    return 1.0 / sum(1.0 / v for v in values)
