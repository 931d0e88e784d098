"""
Dependent tests: a first-order Markov field down the attribute tree, and a
Monte Carlo estimate of strategy costs under it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from hiertest.core.exception import PreconditionError
from hiertest.core.logger import setup_logger
from hiertest.model.costmodel import CostModel, test_cost
from hiertest.model.hierarchy import Hierarchy
from hiertest.model.strategy import Leaf, Strategy, StrategyNode, ensure_valid
from hiertest.utils.params import get_settings
from hiertest.utils.parallel import parallel_map

logger = setup_logger(name="Markov", log_file_name=get_settings().log_file("markov"))

BLOCK = 10_000


@dataclass(frozen=True)
class MarkovTestField:
    """
    Root answers 0 with probability beta1; a child answers 0 with probability gamma
    when its parent answered 0 and lambda_ when it answered 1.
    """

    beta1: float
    gamma: float
    lambda_: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.beta1 <= 1.0:
            raise PreconditionError(f"beta1 must lie in [0,1], got {self.beta1}")
        if not 0.0 <= self.lambda_ <= self.gamma <= 1.0:
            raise PreconditionError(
                f"need 0 <= lambda <= gamma <= 1, got lambda={self.lambda_}, gamma={self.gamma}"
            )

    @property
    def stationary(self) -> float:
        """Fixed point of the marginal recursion; beta1 itself when every value is fixed."""
        denom = 1.0 + self.lambda_ - self.gamma
        if denom == 0.0:
            return self.beta1
        return self.lambda_ / denom

    def step(self, parent: float) -> float:
        return self.gamma * parent + self.lambda_ * (1.0 - parent)


def markov_marginals(h: Hierarchy, f: MarkovTestField) -> Dict[int, float]:
    """P(test answers 0) per attribute; perfect tests always answer 0."""
    out: Dict[int, float] = {}
    for a in h.breadth_first():
        attr = h.attributes[a]
        if attr.perfect:
            out[a] = 1.0
        elif attr.parent is None:
            out[a] = f.beta1
        else:
            out[a] = f.step(out[attr.parent])
    return out


def sample_field(h: Hierarchy, f: MarkovTestField, rng: np.random.Generator, n: int) -> np.ndarray:
    """Boolean (n, |A|) array, True where the test answers 0; drawn top-down."""
    u = rng.random((n, h.size))
    zeros = np.zeros((n, h.size), dtype=bool)
    for a in h.breadth_first():
        attr = h.attributes[a]
        if attr.perfect:
            zeros[:, a] = True
        elif attr.parent is None:
            zeros[:, a] = u[:, a] < f.beta1
        else:
            p = np.where(zeros[:, attr.parent], f.gamma, f.lambda_)
            zeros[:, a] = u[:, a] < p
    return zeros


def _walk_costs(s: Strategy, h: Hierarchy, unit: Dict[int, float], zeros: np.ndarray) -> np.ndarray:
    out = np.zeros(zeros.shape[0])
    c_star = h.unit_post_cost

    def walk(n: StrategyNode, idx: np.ndarray) -> None:
        if idx.size == 0:
            return
        if isinstance(n, Leaf):
            out[idx] += c_star * len(n.filtered)
            return
        a = h.resolve(n.attr)
        out[idx] += unit[a]
        answered0 = zeros[idx, a]
        walk(n.on0, idx[answered0])
        walk(n.on1, idx[~answered0])

    walk(s.root, np.arange(zeros.shape[0]))
    return out


@dataclass
class MarkovEstimate:
    mean: float
    stderr: float


@dataclass
class MarkovReport:
    seed: int
    n_samples: int
    marginals: Dict[int, float]
    estimates: List[MarkovEstimate]

    def ranks(self) -> List[int]:
        order = sorted(range(len(self.estimates)), key=lambda i: (self.estimates[i].mean, i))
        rank = [0] * len(order)
        for r, i in enumerate(order, start=1):
            rank[i] = r
        return rank

    def beats(self, i: int, j: int, k: float = 3.0) -> bool:
        """Strategy i is cheaper than strategy j by more than k standard errors."""
        a, b = self.estimates[i], self.estimates[j]
        return a.mean < b.mean - k * float(np.hypot(a.stderr, b.stderr))

    def to_dict(self, h: Hierarchy) -> dict:
        return {
            "seed": self.seed,
            "n_samples": self.n_samples,
            "marginals": {h.name(a): p for a, p in sorted(self.marginals.items())},
            "strategies": [
                {"strategy_id": i, "mean_cost": e.mean, "stderr": e.stderr, "rank": r}
                for i, (e, r) in enumerate(zip(self.estimates, self.ranks()))
            ],
        }

    def csv_rows(self) -> Tuple[List[str], List[list]]:
        return ["strategy_id", "mean_cost", "stderr", "rank"], [
            [i, e.mean, e.stderr, r] for i, (e, r) in enumerate(zip(self.estimates, self.ranks()))
        ]


def markov_simulate(
    h: Hierarchy,
    f: MarkovTestField,
    m: CostModel,
    strategies: Sequence[Strategy],
    n_samples: int,
    seed: int,
    workers: Optional[int] = None,
) -> MarkovReport:
    """
    Mean cost and standard error of each strategy under the Markov field.

    A test of A costs Gamma(|A|) Psi(marginal power of A) (perfect tests cost c*);
    all strategies see the same draws. Draws come in blocks of fixed size, block k
    from default_rng([seed, k]), so results do not depend on the worker count.
    """
    if n_samples < 1:
        raise PreconditionError(f"sample count must be at least 1, got {n_samples}")
    if seed < 0:
        raise PreconditionError(f"seed must be nonnegative, got {seed}")
    if not strategies:
        raise PreconditionError("no strategies to simulate")
    for s in strategies:
        ensure_valid(s, h)
    marginals = markov_marginals(h, f)
    unit = {
        a.id: h.unit_post_cost if a.perfect else test_cost(m, a.scope, marginals[a.id])
        for a in h.attributes
    }

    blocks = [(k, min(BLOCK, n_samples - k * BLOCK)) for k in range((n_samples + BLOCK - 1) // BLOCK)]

    def run(block: Tuple[int, int]) -> Tuple[int, np.ndarray, np.ndarray]:
        k, size = block
        zeros = sample_field(h, f, np.random.default_rng([seed, k]), size)
        means = np.empty(len(strategies))
        m2 = np.empty(len(strategies))
        for i, s in enumerate(strategies):
            costs = _walk_costs(s, h, unit, zeros)
            means[i] = costs.mean()
            m2[i] = np.square(costs - means[i]).sum()
        return size, means, m2

    # pairwise merge of block moments, in block order
    count, mean, m2 = 0, np.zeros(len(strategies)), np.zeros(len(strategies))
    for size, b_mean, b_m2 in parallel_map(run, blocks, workers):
        total = count + size
        delta = b_mean - mean
        mean = mean + delta * (size / total)
        m2 = m2 + b_m2 + np.square(delta) * (count * size / total)
        count = total

    estimates = []
    for mu, sq in zip(mean, m2):
        se = float(np.sqrt(sq / (count - 1)) / np.sqrt(count)) if count > 1 else 0.0
        estimates.append(MarkovEstimate(mean=float(mu), stderr=se))
    logger.info("simulated %d strategies over %d draws", len(strategies), n_samples)
    return MarkovReport(seed=seed, n_samples=n_samples, marginals=marginals, estimates=estimates)
