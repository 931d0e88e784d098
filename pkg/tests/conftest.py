import itertools

import numpy as np
import pytest

import hiertest.model.hierarchy as hierarchy_module


def _random_tree(rng: np.random.Generator, n_patterns: int) -> dict:
    counter = itertools.count()
    patterns = [f"y{k + 1}" for k in range(n_patterns)]

    def grow(members, depth):
        if len(members) == 1:
            if depth < 4 and rng.random() < 0.3:
                return {"id": f"v{next(counter)}", "children": [grow(members, depth + 1)]}
            return {"id": members[0]}
        k = int(rng.integers(2, min(3, len(members)) + 1))
        cuts = sorted(rng.choice(np.arange(1, len(members)), size=k - 1, replace=False))
        parts = [members[i:j] for i, j in zip([0, *cuts], [*cuts, len(members)])]
        return {"id": f"n{next(counter)}", "children": [grow(p, depth + 1) for p in parts]}

    return grow(patterns, 1)


@pytest.fixture
def random_hierarchy():
    """Factory: random nested hierarchy over 1..max_patterns patterns."""

    def make(rng: np.random.Generator, max_patterns: int = 6, augmented: bool = False, c_star: float = 1.0):
        n = int(rng.integers(1, max_patterns + 1))
        h = hierarchy_module.build_hierarchy(_random_tree(rng, n), unit_post_cost=c_star)
        return hierarchy_module.augment(h) if augmented else h

    return make
