import tracemalloc

import numpy as np
import pytest

import hiertest.analysis.markov as markov
import hiertest.model.hierarchy as hierarchy_module
from hiertest.analysis.ctf import ctf_strategy
from hiertest.analysis.search import sample_skeleton
from hiertest.core.exception import PreconditionError
from hiertest.model import costmodel
from hiertest.model.strategy import TestEntry, TestModel, expected_cost, strategy_from_dict

HARMONIC_MODEL = costmodel.CostModel(psi=costmodel.PowerFunction("harmonic"))

CHILDREN_FIRST = {
    "attr": "y1",
    "on0": {"attr": "y2", "on0": {"filtered": []}, "on1": {"filtered": ["y2"]}},
    "on1": {"attr": "y2", "on0": {"filtered": ["y1"]}, "on1": {"filtered": ["y1", "y2"]}},
}


def test_field_validation():
    with pytest.raises(PreconditionError):
        markov.MarkovTestField(beta1=0.5, gamma=0.2, lambda_=0.3)
    with pytest.raises(PreconditionError):
        markov.MarkovTestField(beta1=1.5, gamma=0.9, lambda_=0.1)


def test_stationary_marginal():
    f = markov.MarkovTestField(beta1=0.95, gamma=0.9, lambda_=0.1)
    assert f.stationary == pytest.approx(0.5)
    assert markov.MarkovTestField(beta1=0.3, gamma=1.0, lambda_=0.0).stationary == 0.3


def test_marginals_follow_the_tree():
    f = markov.MarkovTestField(beta1=0.95, gamma=0.9, lambda_=0.1)
    h = hierarchy_module.augment(hierarchy_module.dyadic(3))
    marginals = markov.markov_marginals(h, f)
    assert marginals[0] == 0.95
    assert marginals[h.resolve("A.0")] == pytest.approx(0.86)
    assert marginals[h.resolve("y1")] == pytest.approx(0.9 * 0.86 + 0.1 * 0.14)
    assert all(marginals[a] == 1.0 for a in h.perfect_ids())
    deep = markov.markov_marginals(hierarchy_module.vine(200), f)
    assert deep[199] == pytest.approx(f.stationary, abs=1e-9)


def test_sampled_field_matches_marginals():
    f = markov.MarkovTestField(beta1=0.7, gamma=0.8, lambda_=0.2)
    h = hierarchy_module.dyadic(3)
    zeros = markov.sample_field(h, f, np.random.default_rng(5), 50_000)
    marginals = markov.markov_marginals(h, f)
    for a in range(h.size):
        assert zeros[:, a].mean() == pytest.approx(marginals[a], abs=0.01)


def test_independent_field_matches_exact_cost():
    f = markov.MarkovTestField(beta1=0.6, gamma=0.6, lambda_=0.6)
    h = hierarchy_module.dyadic(3)
    s = ctf_strategy(h)
    report = markov.markov_simulate(h, f, HARMONIC_MODEL, [s], n_samples=40_000, seed=11)
    t = TestModel.fixed(h, {a.id: TestEntry(0.6, costmodel.test_cost(HARMONIC_MODEL, a.scope, 0.6)) for a in h.attributes})
    exact = expected_cost(ctf_strategy(h, t), h, t).total
    estimate = report.estimates[0]
    assert abs(estimate.mean - exact) <= 4 * estimate.stderr


def test_children_first_beats_ctf_under_strong_dependence():
    f = markov.MarkovTestField(beta1=0.95, gamma=0.9, lambda_=0.1)
    h = hierarchy_module.dyadic(2)
    strategies = [ctf_strategy(h), strategy_from_dict(CHILDREN_FIRST, h)]
    report = markov.markov_simulate(h, f, HARMONIC_MODEL, strategies, n_samples=20_000, seed=3)
    psi = HARMONIC_MODEL.psi
    ctf_exact = 2 * psi(0.95) + 0.05 * (2 * psi(0.86) + 1.8)
    children_exact = 2 * psi(0.86) + 0.28
    assert abs(report.estimates[0].mean - ctf_exact) <= 5 * report.estimates[0].stderr
    assert abs(report.estimates[1].mean - children_exact) <= 5 * report.estimates[1].stderr
    assert report.beats(1, 0)
    assert not report.beats(0, 1)
    assert report.ranks() == [2, 1]


def test_simulation_is_deterministic():
    f = markov.MarkovTestField(beta1=0.8, gamma=0.7, lambda_=0.3)
    h = hierarchy_module.dyadic(2)
    strategies = [ctf_strategy(h), strategy_from_dict(CHILDREN_FIRST, h)]
    one = markov.markov_simulate(h, f, HARMONIC_MODEL, strategies, n_samples=25_000, seed=9, workers=1)
    three = markov.markov_simulate(h, f, HARMONIC_MODEL, strategies, n_samples=25_000, seed=9, workers=3)
    assert one.estimates == three.estimates
    header, rows = one.csv_rows()
    assert header == ["strategy_id", "mean_cost", "stderr", "rank"]
    assert len(rows) == 2


def test_simulation_arguments():
    f = markov.MarkovTestField(beta1=0.8, gamma=0.7, lambda_=0.3)
    h = hierarchy_module.dyadic(2)
    with pytest.raises(PreconditionError):
        markov.markov_simulate(h, f, HARMONIC_MODEL, [], n_samples=10, seed=1)
    with pytest.raises(PreconditionError):
        markov.markov_simulate(h, f, HARMONIC_MODEL, [ctf_strategy(h)], n_samples=0, seed=1)


def test_block_moments_match_pooled_draws():
    f = markov.MarkovTestField(beta1=0.8, gamma=0.7, lambda_=0.3)
    h = hierarchy_module.dyadic(2)
    strategies = [ctf_strategy(h), strategy_from_dict(CHILDREN_FIRST, h)]
    n = 2 * markov.BLOCK + 1234
    report = markov.markov_simulate(h, f, HARMONIC_MODEL, strategies, n_samples=n, seed=4, workers=2)

    marginals = markov.markov_marginals(h, f)
    unit = {a.id: costmodel.test_cost(HARMONIC_MODEL, a.scope, marginals[a.id]) for a in h.attributes}
    sizes = [markov.BLOCK, markov.BLOCK, 1234]
    draws = [markov.sample_field(h, f, np.random.default_rng([4, k]), size) for k, size in enumerate(sizes)]
    for i, s in enumerate(strategies):
        pooled = np.concatenate([markov._walk_costs(s, h, unit, zeros) for zeros in draws])
        assert report.estimates[i].mean == pytest.approx(pooled.mean(), rel=1e-12)
        assert report.estimates[i].stderr == pytest.approx(pooled.std(ddof=1) / np.sqrt(n), rel=1e-9)


def test_single_draw_has_zero_stderr():
    f = markov.MarkovTestField(beta1=0.8, gamma=0.7, lambda_=0.3)
    h = hierarchy_module.dyadic(2)
    report = markov.markov_simulate(h, f, HARMONIC_MODEL, [ctf_strategy(h)], n_samples=1, seed=2)
    assert report.estimates[0].stderr == 0.0


def test_memory_stays_within_one_block():
    f = markov.MarkovTestField(beta1=0.8, gamma=0.7, lambda_=0.3)
    h = hierarchy_module.dyadic(3)
    strategies = [ctf_strategy(h)] * 60
    # the full cost matrix would take 60 * 40000 * 8 bytes
    tracemalloc.start()
    try:
        markov.markov_simulate(h, f, HARMONIC_MODEL, strategies, n_samples=40_000, seed=6, workers=1)
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    assert peak < 60 * 40_000 * 8 / 4


@pytest.mark.parametrize("field", [(0.3, 0.8, 0.5), (0.5, 0.5, 0.5)])
def test_sampled_skeletons_do_not_beat_ctf_when_root_is_weak(field):
    f = markov.MarkovTestField(*field)
    h = hierarchy_module.dyadic(3)
    strategies = [ctf_strategy(h)]
    strategies += [sample_skeleton(h, np.random.default_rng([7, 1, i]), 0.5) for i in range(60)]
    report = markov.markov_simulate(h, f, HARMONIC_MODEL, strategies, n_samples=20_000, seed=7)
    assert not any(report.beats(i, 0) for i in range(1, len(strategies)))
