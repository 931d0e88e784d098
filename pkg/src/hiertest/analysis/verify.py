"""
Checkers for the sufficient (and, at depth two, necessary) conditions under which
coarse-to-fine testing is optimal, and the switching-inequality scanner.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from hiertest.analysis.ctf import is_ctf_in_power
from hiertest.core.exception import PreconditionError
from hiertest.core.logger import setup_logger
from hiertest.model.costmodel import ArrayLike, CostModel, PowerFunction
from hiertest.model.hierarchy import AttrRef, Hierarchy, augment, dyadic, min_covering_ratio, subhierarchy
from hiertest.model.strategy import TestEntry, TestModel
from hiertest.utils.params import get_settings

logger = setup_logger(name="Verify", log_file_name=get_settings().log_file("verify"))


@dataclass
class ConditionReport:
    condition: str
    holds: bool
    witness: Any = None
    margin: float = math.inf
    details: Dict[str, Any] = field(default_factory=dict)
    applicable: bool = True
    surface: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if not self.holds and self.witness is None:
            raise ValueError(f"{self.condition}: a failing report needs a witness")

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "applicable": self.applicable,
            "holds": self.holds,
            "witness": self.witness,
            "margin": self.margin,
            "details": self.details,
        }

    def csv_rows(self) -> Tuple[List[str], List[list]]:
        if self.surface is not None:
            return ["a", "b", "x", "y", "delta"], self.surface.tolist()
        return ["attribute", "margin"], [[k, v] for k, v in self.details.get("margins", {}).items()]


def _holds_tol() -> float:
    return get_settings().tolerances.holds


def _fixed_ratios(h: Hierarchy, t: TestModel) -> Dict[int, float]:
    if t.mode != "fixed":
        raise PreconditionError("condition checks need fixed powers")
    out = {}
    for a in h.attributes:
        if t.power(h, a.id) <= 0.0:
            raise PreconditionError(f"beta(A) = 0 for attribute {a.name!r}: ratio undefined")
        out[a.id] = t.ratio(h, a.id)
    return out


def _summarize(condition: str, h: Hierarchy, margins: Dict[int, float], **details: Any) -> ConditionReport:
    if not margins:
        return ConditionReport(condition, holds=True, details=dict(details, margins={}))
    worst = min(margins, key=lambda a: (margins[a], a))
    margin = margins[worst]
    return ConditionReport(
        condition=condition,
        holds=margin >= -_holds_tol(),
        witness=h.name(worst),
        margin=margin,
        details=dict(details, margins={h.name(a): v for a, v in margins.items()}),
    )


def check_prop1(h: Hierarchy, t: TestModel) -> ConditionReport:
    """Every attribute's cost/power ratio is at most c*."""
    ratios = _fixed_ratios(h, t)
    c_star = h.unit_post_cost
    margins = {a: c_star - ratios[a] for a in h.original_ids()}
    return _summarize("prop1", h, margins)


def check_corollary1(h: Hierarchy, t: TestModel) -> ConditionReport:
    """c(A)/beta(A) <= sum over the direct children B of c(B)/beta(B), at every attribute."""
    if not h.augmented:
        raise PreconditionError("this check needs an augmented hierarchy")
    ratios = _fixed_ratios(h, t)
    margins = {}
    for a in h.original_ids():
        kids = h.attributes[a].children
        margins[a] = sum(ratios[c] for c in kids) - ratios[a]
    return _summarize("corollary1", h, margins)


def check_theorem3(h: Hierarchy, t: TestModel) -> ConditionReport:
    """
    At every attribute B: c(B)/beta(B) is at most the cheapest covering ratio of the
    hierarchy below it (the sum, over B's children, of their minimal covering ratios).
    """
    if not h.augmented:
        raise PreconditionError("this check needs an augmented hierarchy")
    ratios = _fixed_ratios(h, t)
    margins = {}
    coverings: Dict[str, List[str]] = {}
    for a in h.original_ids():
        below = 0.0
        names: List[str] = []
        for c in h.attributes[a].children:
            sub = subhierarchy(h, c)
            value, covering = min_covering_ratio(sub, t)
            below += value
            names.extend(covering.names(sub))
        margins[a] = below - ratios[a]
        coverings[h.name(a)] = sorted(names)
    return _summarize("theorem3", h, margins, coverings=coverings)


def check_corollary2(
    h: Hierarchy,
    m: CostModel,
    powers: Mapping[AttrRef, float],
    points: int = 201,
) -> ConditionReport:
    """
    Multiplicative costs: Gamma subadditive on the scopes present, Psi(x)/x
    nondecreasing, and powers nondecreasing from coarse to fine attributes.
    """
    by_id = {h.resolve(k): float(v) for k, v in powers.items()}
    for a in h.attributes:
        if a.perfect:
            by_id[a.id] = 1.0
        elif a.id not in by_id:
            raise PreconditionError(f"missing power for attribute {a.name!r}")

    scopes = sorted({a.scope for a in h.attributes})
    subadditive = m.gamma.is_subadditive(scopes)

    grid = np.linspace(1.0 / (points - 1), 1.0, points - 1)
    slope = np.asarray(m.psi(grid), dtype=float) / grid
    steps = np.diff(slope)
    slope_margin = float(steps.min()) if steps.size else 0.0
    slope_ok = slope_margin >= -_holds_tol()

    monotone = is_ctf_in_power(h, by_id)

    failing = [name for name, ok in (("gamma_subadditive", subadditive), ("psi_ratio_nondecreasing", slope_ok),
                                     ("powers_coarse_to_fine", monotone)) if not ok]
    return ConditionReport(
        condition="corollary2",
        holds=not failing,
        witness=failing[0] if failing else None,
        margin=slope_margin,
        details={
            "gamma_subadditive": subadditive,
            "psi_ratio_nondecreasing": slope_ok,
            "powers_coarse_to_fine": monotone,
        },
    )


# --- depth two -------------------------------------------------------------------


def depth2_instance(
    c1: float, b1: float, cB1: float, bB1: float, cB2: float, bB2: float, c_star: float = 1.0
) -> Tuple[Hierarchy, TestModel]:
    """Augmented two-pattern hierarchy: root A over leaves y1, y2."""
    h = augment(dyadic(2), c_star=c_star)
    t = TestModel.fixed(h, {"A": TestEntry(b1, c1), "y1": TestEntry(bB1, cB1), "y2": TestEntry(bB2, cB2)})
    return h, t


def check_depth2_iff(
    c1: float, b1: float, cB1: float, bB1: float, cB2: float, bB2: float, c_star: float = 1.0
) -> ConditionReport:
    """
    CTF is optimal at depth two iff
    c1/b1 <= min(cB1/(bB1 bB2) + cB2/bB2, cB1/bB1 + cB2/(bB1 bB2)),
    provided every ratio is at most c*.
    """
    if min(b1, bB1, bB2) <= 0.0:
        raise PreconditionError("depth-two condition needs positive powers")
    r1, rB1, rB2 = c1 / b1, cB1 / bB1, cB2 / bB2
    if max(r1, rB1, rB2) > c_star:
        worst = max((r1, "A"), (rB1, "y1"), (rB2, "y2"))
        return ConditionReport(
            condition="depth2_iff",
            holds=False,
            applicable=False,
            witness=f"proviso fails at {worst[1]}",
            margin=c_star - worst[0],
        )
    both = bB1 * bB2
    rhs = min(cB1 / both + rB2, rB1 + cB2 / both)
    margin = rhs - r1
    return ConditionReport(
        condition="depth2_iff",
        holds=margin >= -_holds_tol(),
        witness="A",
        margin=margin,
        details={"root_ratio": r1, "bound": rhs},
    )


# --- switching ---------------------------------------------------------------------


def _phi(psi: PowerFunction, a: ArrayLike, x: ArrayLike) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    x = np.maximum(np.asarray(x, dtype=float), 0.0)
    return x - a * np.asarray(psi.star(x / a), dtype=float)


def switching_deltas(psi: PowerFunction, a: ArrayLike, b: ArrayLike, x: ArrayLike, y: ArrayLike) -> np.ndarray:
    """Elementwise Phi_a(x + Phi_b(y - x)) - (Phi_a(x) + Phi_b(Phi_a(y) - Phi_a(x)))."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lhs = _phi(psi, a, x + _phi(psi, b, y - x))
    pa_x = _phi(psi, a, x)
    pa_y = _phi(psi, a, y)
    return lhs - (pa_x + _phi(psi, b, pa_y - pa_x))


def switching_delta(psi: PowerFunction, a: float, b: float, x: float, y: float) -> float:
    """Left minus right side of the switching inequality; <= 0 means moving the coarse test first never hurts."""
    if a <= 0 or b <= 0:
        raise PreconditionError(f"switching needs a, b > 0, got a={a}, b={b}")
    if x < 0 or y < x:
        raise PreconditionError(f"switching needs y >= x >= 0, got x={x}, y={y}")
    return float(switching_deltas(psi, a, b, x, y))


def switching_scan(
    psi: PowerFunction,
    a: Optional[float] = None,
    bs: Optional[Sequence[float]] = None,
    x_max: Optional[float] = None,
    y_max: Optional[float] = None,
    points: Optional[int] = None,
) -> ConditionReport:
    """
    Delta over {a} x bs x the (x, y) grid with y >= x. By homogeneity a = 1 loses
    nothing. The surface is kept on the report for CSV output.
    """
    scan = get_settings().scan
    a = scan.a if a is None else float(a)
    bs = list(scan.b if bs is None else bs)
    x_max = scan.x_max if x_max is None else float(x_max)
    y_max = scan.y_max if y_max is None else float(y_max)
    points = scan.points if points is None else int(points)

    xs = np.linspace(0.0, x_max, points)
    ys = np.linspace(0.0, y_max, points)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    keep = gy >= gx
    gx, gy = gx[keep], gy[keep]

    chunks = []
    per_b: Dict[str, float] = {}
    regimes: Dict[str, str] = {}
    for b in bs:
        d = switching_deltas(psi, a, b, gx, gy)
        per_b[f"{b:g}"] = float(d.max())
        regimes[f"{b:g}"] = "a>=b" if a >= b else "b>a"
        chunks.append(np.column_stack([np.full(d.size, a), np.full(d.size, b), gx, gy, d]))
    surface = np.concatenate(chunks)

    i = int(np.argmax(surface[:, 4]))
    max_delta = float(surface[i, 4])
    violating = surface[surface[:, 4] > _holds_tol()]
    violations = int(violating.shape[0])
    holds = max_delta <= _holds_tol()
    logger.info("switching scan for %s: max delta %.3g, %d violations", psi.name, max_delta, violations)
    return ConditionReport(
        condition="switching",
        holds=holds,
        witness=dict(zip(("a", "b", "x", "y"), (float(v) for v in surface[i, :4]))),
        margin=-max_delta,
        details={
            "psi": psi.name,
            "max_delta": max_delta,
            "violations": violations,
            "violating": violating.tolist(),
            "points": int(surface.shape[0]),
            "max_delta_by_b": per_b,
            "regime_by_b": regimes,
            "psi_prime_0": psi.d0,
            "psi_prime_1": psi.d1,
        },
        surface=surface,
    )
