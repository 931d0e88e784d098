"""
Cost model for variable-power tests.

A test for attribute A at power beta costs c * Gamma(|A|) * Psi(beta). The
Legendre transform Psi*(x) = sup_{beta in [0,1]} (x*beta - Psi(beta)) and the
functions Phi_a(x) = x - a*Psi*(x/a) drive every optimal-power computation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Any, Callable, Dict, Iterable, Optional, Tuple, Union

import numpy as np
from scipy import optimize

from hiertest.core.exception import ConfigError, PreconditionError
from hiertest.core.logger import setup_logger
from hiertest.utils.params import get_settings

logger = setup_logger(name="CostModel", log_file_name=get_settings().log_file("costmodel"))

ArrayLike = Union[float, np.ndarray]

CATALOG = ("psi1", "psi2", "psi3", "psi4", "psi5", "psi6", "psi7")
ALIASES = {"harmonic": "psi5"}


def _as_array(x: ArrayLike) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    return arr, arr.ndim == 0


def _out(arr: np.ndarray, scalar: bool) -> ArrayLike:
    return float(arr) if scalar else arr


class GammaKind(str, Enum):
    IDENTITY = "identity"
    ONE = "one"
    TABLE = "table"


@dataclass(frozen=True)
class ComplexityFunction:
    """Gamma: scope -> complexity, with Gamma(1) = 1."""

    kind: GammaKind = GammaKind.IDENTITY
    table: Tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.kind == GammaKind.TABLE:
            if not self.table:
                raise ConfigError("complexity table is empty", field="gamma.table")
            if abs(self.table[0] - 1.0) > 1e-12:
                raise ConfigError("complexity table must start with Gamma(1) = 1", field="gamma.table")
            if any(v < 0 for v in self.table):
                raise ConfigError("complexity values must be nonnegative", field="gamma.table")

    def __call__(self, scope: int) -> float:
        if scope < 1:
            raise PreconditionError(f"scope must be >= 1, got {scope}")
        if self.kind == GammaKind.IDENTITY:
            return float(scope)
        if self.kind == GammaKind.ONE:
            return 1.0
        if scope > len(self.table):
            raise PreconditionError(f"complexity table has no value for scope {scope}")
        return float(self.table[scope - 1])

    def is_subadditive(self, scopes: Iterable[int]) -> bool:
        """Gamma(m+n) <= Gamma(m) + Gamma(n) over pairs whose sum is also a present scope."""
        present = sorted(set(scopes))
        lookup = set(present)
        for i, m in enumerate(present):
            for n in present[i:]:
                if m + n in lookup and self(m + n) > self(m) + self(n) + 1e-12:
                    return False
        return True

    @classmethod
    def from_config(cls, obj: Any) -> "ComplexityFunction":
        if obj is None or obj == "identity":
            return cls(GammaKind.IDENTITY)
        if obj == "one":
            return cls(GammaKind.ONE)
        if isinstance(obj, dict) and "table" in obj:
            try:
                return cls(GammaKind.TABLE, tuple(float(v) for v in obj["table"]))
            except (TypeError, ValueError) as exc:
                raise ConfigError("complexity table must be a list of numbers", field="gamma.table") from exc
        raise ConfigError(f"unknown complexity function {obj!r}", field="gamma")

    def to_config(self) -> Any:
        if self.kind == GammaKind.TABLE:
            return {"table": list(self.table)}
        return self.kind.value


# --- catalog formulas -------------------------------------------------------
# Every formula takes numpy arrays and returns arrays. Arguments are clipped
# into each piece's domain before evaluation so np.where never sees NaNs.


def _psi1_s(x: np.ndarray) -> np.ndarray:
    # sqrt(1 - beta) at the stationary point of x*beta - Psi1(beta)
    return ((1.0 - x) + np.sqrt((1.0 - x) ** 2 + 3.0)) / 3.0


def _psi1_star_stationary(x: np.ndarray, pf: "PowerFunction") -> np.ndarray:
    s = _psi1_s(x)
    beta = 1.0 - s * s
    return beta * (x - 1.0 + s)


def _psi1_star_table(x: np.ndarray, pf: "PowerFunction") -> np.ndarray:
    # printed catalog expression for Phi_1, turned into Psi* = x - Phi_1
    r = np.sqrt((1.0 - x) ** 2 + 3.0)
    phi1 = x - (1.0 - (1.0 - x + r / 9.0) ** 2) * (2.0 * (x - 1.0) / 3.0 + r / 3.0)
    return x - phi1


def _psi2_star(x, pf):
    return np.where(x < 1.0, 0.5 * x * x, x - 0.5)


def _psi3_star(x, pf):
    return np.sqrt(1.0 + x * x) - 1.0


def _psi4_star(x, pf):
    lam = pf.lam
    upper = lam * math.exp(lam)
    xm = np.clip(x, lam, upper)
    mid = (xm / lam) * (np.log(xm / lam) - 1.0) + 1.0
    return np.where(x < lam, 0.0, np.where(x > upper, x - (math.exp(lam) - 1.0), mid))


def _psi5_star(x, pf):
    return x * x / (1.0 + x)


def _psi6_star(x, pf):
    xm = np.maximum(x, 0.5)
    return np.where(x < 0.5, 0.0, xm - 1.0 + 1.0 / (4.0 * xm))


def _psi7_star(x, pf):
    mu = pf.mu
    upper = mu * math.expm1(mu)
    xm = np.minimum(x, upper)
    t = xm / mu
    mid = (1.0 + t) * np.log1p(t) - t
    return np.where(x < upper, mid, x - (math.expm1(mu) - mu))


_STAR_CANDIDATES: Dict[str, Tuple[Callable, ...]] = {
    "psi1": (_psi1_star_table, _psi1_star_stationary),
    "psi2": (_psi2_star,),
    "psi3": (_psi3_star,),
    "psi4": (_psi4_star,),
    "psi5": (_psi5_star,),
    "psi6": (_psi6_star,),
    "psi7": (_psi7_star,),
}


def _value(kind: str, b: np.ndarray, pf: "PowerFunction") -> np.ndarray:
    if kind == "psi1":
        return b * (1.0 - np.sqrt(1.0 - b))
    if kind == "psi2":
        return 0.5 * b * b
    if kind == "psi3":
        return 1.0 - np.sqrt(1.0 - b * b)
    if kind == "psi4":
        return np.expm1(pf.lam * b)
    if kind == "psi5":
        return 2.0 - b - 2.0 * np.sqrt(1.0 - b)
    if kind == "psi6":
        return 1.0 - np.sqrt(1.0 - b)
    if kind == "psi7":
        return np.expm1(pf.mu * b) - pf.mu * b
    raise PreconditionError(f"unknown power function {kind!r}")


def _derivative(kind: str, b: np.ndarray, pf: "PowerFunction") -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        if kind == "psi1":
            s = np.sqrt(1.0 - b)
            return np.where(s > 0, 1.0 - s + b / (2.0 * np.where(s > 0, s, 1.0)), np.inf)
        if kind == "psi2":
            return b.copy()
        if kind == "psi3":
            r = np.sqrt(1.0 - b * b)
            return np.where(r > 0, b / np.where(r > 0, r, 1.0), np.inf)
        if kind == "psi4":
            return pf.lam * np.exp(pf.lam * b)
        if kind == "psi5":
            s = np.sqrt(1.0 - b)
            return np.where(s > 0, 1.0 / np.where(s > 0, s, 1.0) - 1.0, np.inf)
        if kind == "psi6":
            s = np.sqrt(1.0 - b)
            return np.where(s > 0, 0.5 / np.where(s > 0, s, 1.0), np.inf)
        if kind == "psi7":
            return pf.mu * np.expm1(pf.mu * b)
    raise PreconditionError(f"unknown power function {kind!r}")


def _inverse_derivative(kind: str, u: np.ndarray, pf: "PowerFunction") -> np.ndarray:
    u = np.maximum(u, 0.0)
    if kind == "psi1":
        s = _psi1_s(u)
        return np.clip(1.0 - s * s, 0.0, 1.0)
    if kind == "psi2":
        return np.minimum(u, 1.0)
    if kind == "psi3":
        return u / np.sqrt(1.0 + u * u)
    if kind == "psi4":
        lam = pf.lam
        um = np.clip(u, lam, lam * math.exp(lam))
        return np.clip(np.log(um / lam) / lam, 0.0, 1.0)
    if kind == "psi5":
        return 1.0 - 1.0 / (1.0 + u) ** 2
    if kind == "psi6":
        um = np.maximum(u, 0.5)
        return np.where(u <= 0.5, 0.0, 1.0 - 1.0 / (4.0 * um * um))
    if kind == "psi7":
        return np.clip(np.log1p(u / pf.mu) / pf.mu, 0.0, 1.0)
    raise PreconditionError(f"unknown power function {kind!r}")


@dataclass(frozen=True)
class PowerFunction:
    """
    Convex, strictly increasing Psi on [0,1] with Psi(0) = 0.

    Catalog kinds psi1..psi7 (psi5 is the harmonic function) evaluate their
    transforms in closed form once the closed form has been checked against the
    numeric transform; `custom` takes a value and a derivative callable and is
    always evaluated numerically.
    """

    kind: str = "psi5"
    lam: float = 1.0
    mu: float = 8.0
    value_fn: Optional[Callable[[float], float]] = field(default=None, compare=False)
    derivative_fn: Optional[Callable[[float], float]] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        kind = ALIASES.get(self.kind, self.kind)
        object.__setattr__(self, "kind", kind)
        if kind == "custom":
            if self.value_fn is None or self.derivative_fn is None:
                raise ConfigError("custom power function needs value and derivative callables", field="psi")
        elif kind not in CATALOG:
            raise ConfigError(f"unknown power function {self.kind!r}", field="psi.kind")
        if kind == "psi4" and self.lam <= 0:
            raise ConfigError("lambda must be positive", field="psi.lambda")
        if kind == "psi7" and self.mu <= 0:
            raise ConfigError("mu must be positive", field="psi.mu")
        if kind in ("psi4", "psi7"):
            _warn_non_normalized(kind, self.lam, self.mu)

    # -- pointwise ------------------------------------------------------------
    @property
    def name(self) -> str:
        if self.kind == "psi4":
            return f"psi4(lambda={self.lam:g})"
        if self.kind == "psi7":
            return f"psi7(mu={self.mu:g})"
        return self.kind

    @property
    def is_catalog(self) -> bool:
        return self.kind in CATALOG

    def __call__(self, beta: ArrayLike) -> ArrayLike:
        b, scalar = _as_array(beta)
        if self.kind == "custom":
            return _out(np.vectorize(self.value_fn, otypes=[float])(b), scalar)
        return _out(_value(self.kind, b, self), scalar)

    def derivative(self, beta: ArrayLike) -> ArrayLike:
        b, scalar = _as_array(beta)
        if self.kind == "custom":
            return _out(np.vectorize(self.derivative_fn, otypes=[float])(b), scalar)
        return _out(_derivative(self.kind, b, self), scalar)

    @property
    def d0(self) -> float:
        return float(self.derivative(0.0))

    @property
    def d1(self) -> float:
        return float(self.derivative(1.0))

    @property
    def normalized(self) -> bool:
        return abs(float(self(1.0)) - 1.0) <= 1e-12

    # -- transforms -----------------------------------------------------------
    def star(self, x: ArrayLike) -> ArrayLike:
        """Legendre transform over [0,1]."""
        arr, scalar = _as_array(x)
        closed = _trusted_closed_form(self) if self.is_catalog else None
        if closed is not None:
            return _out(np.asarray(closed(arr, self), dtype=float), scalar)
        return _out(np.vectorize(self.numeric_star, otypes=[float])(arr), scalar)

    def numeric_star(self, x: float) -> float:
        """Maximize the concave map beta -> x*beta - Psi(beta) on [0,1]."""
        tol = get_settings().tolerances
        x = float(x)
        if x <= 0.0:
            return 0.0
        res = optimize.minimize_scalar(
            lambda b: float(self(b)) - x * b,
            bounds=(0.0, 1.0),
            method="bounded",
            options={"xatol": tol.legendre * 1e-2, "maxiter": 500},
        )
        candidates = (0.0, x - float(self(1.0)), x * res.x - float(self(res.x)))
        return max(candidates)

    def inverse_derivative(self, u: ArrayLike) -> ArrayLike:
        """(Psi')^{-1} clipped to [0,1]: 0 below Psi'(0), 1 above Psi'(1)."""
        arr, scalar = _as_array(u)
        if self.is_catalog:
            return _out(_inverse_derivative(self.kind, arr, self), scalar)
        return _out(np.vectorize(self._bisect_inverse, otypes=[float])(arr), scalar)

    def _bisect_inverse(self, u: float) -> float:
        tol = get_settings().tolerances
        if u <= self.d0:
            return 0.0
        d1 = self.d1
        if math.isfinite(d1) and u >= d1:
            return 1.0
        hi = 1.0 if math.isfinite(d1) else math.nextafter(1.0, 0.0)
        if float(self.derivative(hi)) <= u:
            return hi
        return float(optimize.bisect(
            lambda b: float(self.derivative(b)) - u, 0.0, hi,
            xtol=tol.inverse, maxiter=tol.inverse_max_iter, disp=False,
        ))

    def to_config(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "psi4":
            out["lambda"] = self.lam
        if self.kind == "psi7":
            out["mu"] = self.mu
        return out

    @classmethod
    def from_config(cls, obj: Any) -> "PowerFunction":
        defaults = get_settings().psi_defaults
        if isinstance(obj, str):
            return cls(obj, lam=defaults.lambda_, mu=defaults.mu)
        if not isinstance(obj, dict) or "kind" not in obj:
            raise ConfigError("power function needs a 'kind'", field="psi")
        try:
            return cls(
                str(obj["kind"]),
                lam=float(obj.get("lambda", defaults.lambda_)),
                mu=float(obj.get("mu", defaults.mu)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid power function parameters: {exc}", field="psi") from exc


@lru_cache(maxsize=None)
def _warn_non_normalized(kind: str, lam: float, mu: float) -> None:
    logger.warning("%s has Psi(1) != 1 at lambda=%g, mu=%g; normalization waived", kind, lam, mu)


@lru_cache(maxsize=None)
def _trusted_closed_form(pf: PowerFunction) -> Optional[Callable]:
    """First catalog closed form that matches the numeric transform on a grid, else None."""
    tol = get_settings().tolerances.closed_form_check
    top = max(20.0, 2.0 * pf.d1) if math.isfinite(pf.d1) else 20.0
    grid = np.linspace(0.0, top, 161)
    reference = np.array([pf.numeric_star(x) for x in grid])
    for candidate in _STAR_CANDIDATES[pf.kind]:
        with np.errstate(all="ignore"):
            values = np.asarray(candidate(grid, pf), dtype=float)
        err = float(np.max(np.abs(values - reference)))
        if np.all(np.isfinite(values)) and err <= tol:
            logger.debug("closed form %s accepted for %s (max err %.3g)", candidate.__name__, pf.name, err)
            return candidate
        logger.warning("closed form %s rejected for %s (max err %.3g)", candidate.__name__, pf.name, err)
    logger.warning("no closed form accepted for %s; using numeric transform", pf.name)
    return None


def catalog(lam: Optional[float] = None, mu: Optional[float] = None) -> Dict[str, PowerFunction]:
    defaults = get_settings().psi_defaults
    lam = defaults.lambda_ if lam is None else lam
    mu = defaults.mu if mu is None else mu
    return {kind: PowerFunction(kind, lam=lam, mu=mu) for kind in CATALOG}


@dataclass(frozen=True)
class CostModel:
    gamma: ComplexityFunction = field(default_factory=ComplexityFunction)
    psi: PowerFunction = field(default_factory=PowerFunction)
    c: float = 1.0
    c_star: float = 1.0

    def __post_init__(self) -> None:
        if self.c < 0 or self.c_star < 0:
            raise ConfigError("cost scales must be nonnegative", field="c")

    def complexity(self, scope: int) -> float:
        """Scale a of Phi_a for an attribute of this scope."""
        return self.c * self.gamma(scope)

    @classmethod
    def from_config(cls, obj: Optional[dict]) -> "CostModel":
        obj = obj or {}
        try:
            return cls(
                gamma=ComplexityFunction.from_config(obj.get("gamma", "identity")),
                psi=PowerFunction.from_config(obj.get("psi", "psi5")),
                c=float(obj.get("c", 1.0)),
                c_star=float(obj.get("c_star", 1.0)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid cost model: {exc}", field="cost_model") from exc

    def to_config(self) -> dict:
        return {"gamma": self.gamma.to_config(), "psi": self.psi.to_config(), "c": self.c, "c_star": self.c_star}


# --- operations --------------------------------------------------------------


def psi_star(psi: PowerFunction, x: ArrayLike) -> ArrayLike:
    arr, _ = _as_array(x)
    if np.any(arr < 0):
        raise PreconditionError("psi_star needs x >= 0")
    return psi.star(x)


def phi(psi: PowerFunction, a: float, x: ArrayLike) -> ArrayLike:
    """Phi_a(x) = x - a * Psi*(x / a)."""
    if a <= 0:
        raise PreconditionError(f"phi needs a > 0, got {a}")
    arr, scalar = _as_array(x)
    if np.any(arr < 0):
        raise PreconditionError("phi needs x >= 0")
    return _out(arr - a * np.asarray(psi.star(arr / a), dtype=float), scalar)


def optimal_power(psi: PowerFunction, a: float, x: float, y: float) -> Tuple[float, float]:
    """
    Minimize a*Psi(beta) + beta*x + (1 - beta)*y over beta in [0,1].

    Returns (beta*, minimal cost); the cost is x + Phi_a(y - x).
    """
    if a <= 0:
        raise PreconditionError(f"optimal_power needs a > 0, got {a}")
    if x < 0 or y < x:
        raise PreconditionError(f"optimal_power needs y >= x >= 0, got x={x}, y={y}")
    gap = y - x
    if gap == 0.0:
        return 0.0, float(x)
    beta = float(psi.inverse_derivative(gap / a))
    return beta, float(x + phi(psi, a, gap))


def test_cost(m: CostModel, scope: int, beta: float) -> float:
    if not 0.0 <= beta <= 1.0:
        raise PreconditionError(f"beta must lie in [0,1], got {beta}")
    return m.c * m.gamma(scope) * float(m.psi(beta))


test_cost.__test__ = False


def product_inequality_margin(psi: PowerFunction, points: int = 101) -> float:
    """max over a grid of Psi(b1*b2) - b1*Psi(b2); <= 0 means the inequality holds."""
    b = np.linspace(0.0, 1.0, points)
    b1, b2 = np.meshgrid(b, b, indexing="ij")
    lhs = np.asarray(psi(b1 * b2), dtype=float)
    rhs = b1 * np.asarray(psi(b2), dtype=float)
    return float(np.max(lhs - rhs))
