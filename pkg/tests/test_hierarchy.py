import itertools

import numpy as np
import pytest

import hiertest.analysis.ctf as ctf
import hiertest.model.hierarchy as hierarchy_module
from hiertest.core.exception import ConfigError, GuardExceededError, PreconditionError
from hiertest.model import costmodel
from hiertest.model.strategy import TestModel


def test_single_pattern_hierarchy():
    h = hierarchy_module.build_hierarchy({"id": "y1"})
    assert h.size == 1
    assert h.attributes[0].scope == 1
    assert h.patterns == ("y1",)


def test_dyadic_depth3_scopes_in_preorder():
    h = hierarchy_module.dyadic(3)
    assert h.size == 7
    assert [a.scope for a in h.attributes] == [4, 2, 1, 1, 2, 1, 1]
    assert sorted(a.scope for a in h.attributes) == [1, 1, 1, 1, 2, 2, 4]
    assert h.patterns == ("y1", "y2", "y3", "y4")
    assert h.depth == 3
    assert h.is_nested()
    assert h.breadth_first()[:3] == (0, 1, 4)


def test_nonregular_tree_counts_every_node():
    spec = {
        "patterns": ["y1", "y2", "y3", "y4", "y5"],
        "tree": {"id": "root", "children": [
            {"id": "left", "children": [{"id": "y1"}, {"id": "y2"}, {"id": "y3"}]},
            {"id": "mid", "children": [{"id": "y4"}]},
            {"id": "y5"},
        ]},
    }
    h = hierarchy_module.build_hierarchy(spec)
    assert h.size == 8
    assert h.attribute("mid").scope == 1
    assert h.attribute("root").scope == 5


def test_duplicate_id_names_the_field():
    spec = {"id": "A", "children": [{"id": "y1"}, {"id": "y1"}]}
    with pytest.raises(ConfigError) as err:
        hierarchy_module.build_hierarchy(spec)
    assert "tree.children[1].id" in str(err.value)


def test_undeclared_pattern_is_rejected():
    spec = {"patterns": ["y1"], "tree": {"id": "A", "children": [{"id": "y1"}, {"id": "y2"}]}}
    with pytest.raises(ConfigError):
        hierarchy_module.build_hierarchy(spec)


def test_forest_roots_partition_patterns():
    h = hierarchy_module.build_hierarchy([{"id": "y1"}, {"id": "B", "children": [{"id": "y2"}, {"id": "y3"}]}])
    assert len(h.roots) == 2
    assert h.patterns == ("y1", "y2", "y3")


def test_augment_counts_and_costs():
    assert hierarchy_module.augment(hierarchy_module.build_hierarchy({"id": "y1"})).size == 2
    h = hierarchy_module.augment(hierarchy_module.dyadic(3))
    assert h.size == 11
    assert h.perfect_ids() == (7, 8, 9, 10)
    assert h.name(7) == "y1*"
    h2 = hierarchy_module.augment(hierarchy_module.dyadic(2), c_star=2.0)
    assert h2.unit_post_cost == 2.0
    t = TestModel.uniform(h2, 0.5, 1.0)
    assert t.entry(h2, h2.perfect_for("y1")).cost == 2.0


def test_augment_twice_fails():
    h = hierarchy_module.augment(hierarchy_module.dyadic(2))
    with pytest.raises(PreconditionError):
        hierarchy_module.augment(h)


def test_subhierarchy_cases():
    h = hierarchy_module.dyadic(3)
    assert hierarchy_module.subhierarchy(h, "A").size == h.size
    leaf = hierarchy_module.subhierarchy(h, "y3")
    assert leaf.size == 1 and leaf.patterns == ("y3",)
    sub = hierarchy_module.subhierarchy(h, "A.1")
    assert sub.size == 3
    assert sub.patterns == ("y3", "y4")
    assert [h.name(o) for o in sub.origin] == ["A.1", "y3", "y4"]
    assert sub.attributes[0].level == 1


def test_forest_levels_start_at_each_root():
    h = hierarchy_module.augment(hierarchy_module.dyadic(4))
    roots = ["A.1", "A.0.0", "y3"]
    f = hierarchy_module.forest(h, roots)
    assert [f.attributes[r].level for r in f.roots] == [1, 1, 1]
    assert f.depth == 4
    for r in roots:
        sub = hierarchy_module.subhierarchy(h, r)
        by_origin = {o: a.level for o, a in zip(f.origin, f.attributes)}
        assert [by_origin[o] for o in sub.origin] == [a.level for a in sub.attributes]

    m = costmodel.CostModel(psi=costmodel.PowerFunction("harmonic"))
    result = ctf.assign_optimal_powers(f, m)
    assert result.levels[-1].cumulative_cost == pytest.approx(result.total_cost, abs=1e-12)
    parts = [ctf.assign_optimal_powers(hierarchy_module.subhierarchy(h, r), m).total_cost for r in roots]
    assert result.total_cost == pytest.approx(sum(parts), abs=1e-12)


def test_filtered_set():
    h = hierarchy_module.dyadic(3)
    assert h.filtered([h.resolve("A.0")]) == frozenset({"y3", "y4"})
    assert h.filtered([]) == frozenset(h.patterns)


def test_enumerate_coverings_counts():
    vine = hierarchy_module.augment(hierarchy_module.vine(1))
    assert {frozenset(c.names(vine)) for c in hierarchy_module.enumerate_coverings(vine)} == {
        frozenset({"y1"}), frozenset({"y1*"})
    }
    h = hierarchy_module.augment(hierarchy_module.dyadic(2))
    coverings = hierarchy_module.enumerate_coverings(h)
    assert len(coverings) == 5
    for c in coverings:
        hierarchy_module.Covering.of(h, c.attributes)


def test_covering_of_rejects_gaps():
    h = hierarchy_module.dyadic(2)
    with pytest.raises(PreconditionError):
        hierarchy_module.Covering.of(h, ["y1"])


def test_coverings_guard():
    h = hierarchy_module.augment(hierarchy_module.dyadic(4))
    with pytest.raises(GuardExceededError):
        hierarchy_module.enumerate_coverings(h, limit=10)


def test_min_covering_ratio_examples():
    vine = hierarchy_module.augment(hierarchy_module.vine(1))
    t = TestModel.fixed(vine, {"y1": (0.9, 0.3)})
    value, covering = hierarchy_module.min_covering_ratio(vine, t)
    assert value == pytest.approx(1 / 3)
    assert covering.names(vine) == ["y1"]

    h = hierarchy_module.augment(hierarchy_module.dyadic(2))
    t = TestModel.fixed(h, {"A": (0.7, 1.0), "y1": (0.6, 0.5), "y2": (0.6, 0.5)})
    value, covering = hierarchy_module.min_covering_ratio(h, t)
    assert value == pytest.approx(1 / 0.7)
    assert covering.names(h) == ["A"]
    brute = min(c.ratio_sum(h, t) for c in hierarchy_module.enumerate_coverings(h))
    assert value == pytest.approx(brute)


def test_min_covering_ratio_ties_go_coarse():
    h = hierarchy_module.vine(3)
    t = TestModel.uniform(h, 0.5, 0.5)
    _, covering = hierarchy_module.min_covering_ratio(h, t)
    assert covering.names(h) == ["A1"]


def test_to_config_round_trip():
    h = hierarchy_module.dyadic(3)
    again = hierarchy_module.build_hierarchy(hierarchy_module.augment(h).to_config())
    assert again.patterns == h.patterns
    assert [a.name for a in again.attributes] == [a.name for a in h.attributes]


def _exact_covers(h):
    everything = set(h.patterns)
    out = set()
    for r in range(1, h.size + 1):
        for subset in itertools.combinations(range(h.size), r):
            sets = [h.attributes[a].patterns for a in subset]
            if sum(len(s) for s in sets) == len(everything) and set().union(*sets) == everything:
                out.add(frozenset(subset))
    return out


def test_enumerate_coverings_matches_exhaustive_antichains(random_hierarchy):
    rng = np.random.default_rng(21)
    checked = 0
    while checked < 40:
        h = random_hierarchy(rng, max_patterns=5, augmented=bool(rng.integers(0, 2)))
        if h.size > 8:
            continue
        found = [c.attributes for c in hierarchy_module.enumerate_coverings(h)]
        assert len(found) == len(set(found))
        assert set(found) == _exact_covers(h)
        checked += 1


def test_min_covering_ratio_matches_enumeration(random_hierarchy):
    rng = np.random.default_rng(22)
    for _ in range(60):
        h = random_hierarchy(rng, max_patterns=5, augmented=bool(rng.integers(0, 2)))
        t = TestModel.fixed(
            h, {a: (float(rng.uniform(0.05, 1.0)), float(rng.uniform(0.0, 2.0))) for a in h.original_ids()}
        )
        value, covering = hierarchy_module.min_covering_ratio(h, t)
        exhaustive = min(c.ratio_sum(h, t) for c in hierarchy_module.enumerate_coverings(h))
        assert value == pytest.approx(exhaustive, abs=1e-12)
        assert covering.ratio_sum(h, t) == pytest.approx(value, abs=1e-12)
        hierarchy_module.Covering.of(h, covering.attributes)
