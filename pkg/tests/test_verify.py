import numpy as np
import pytest

import hiertest.analysis.verify as verify
import hiertest.model.hierarchy as hierarchy_module
from hiertest.analysis.ctf import ctf_cost_fixed, dyadic_ctf
from hiertest.analysis.search import exact_optimum_dp
from hiertest.core.exception import PreconditionError
from hiertest.model import costmodel
from hiertest.model.strategy import TestEntry, TestModel

HARMONIC = costmodel.PowerFunction("harmonic")
PSI2 = costmodel.PowerFunction("psi2")


def _depth2_model(root, leaf, c_star=1.0):
    h = hierarchy_module.augment(hierarchy_module.dyadic(2), c_star=c_star)
    return h, TestModel.fixed(h, {"A": root, "y1": leaf, "y2": leaf})


def _ratio_instance(rng, h, slack=(0.2, 1.0)):
    """Fixed powers whose ratios satisfy c/beta <= sum of the children's ratios everywhere."""
    ratios = {}

    def assign(a):
        attr = h.attributes[a]
        if attr.perfect:
            ratios[a] = h.unit_post_cost
            return ratios[a]
        below = sum(assign(c) for c in attr.children)
        ratios[a] = float(rng.uniform(*slack)) * below
        return ratios[a]

    for r in h.roots:
        assign(r)
    entries = {}
    for a in h.original_ids():
        beta = float(rng.uniform(0.2, 1.0))
        entries[a] = TestEntry(beta, ratios[a] * beta)
    return TestModel.fixed(h, entries)


def test_failing_report_needs_a_witness():
    with pytest.raises(ValueError):
        verify.ConditionReport("prop1", holds=False)


def test_prop1():
    h, t = _depth2_model((0.6, 0.5), (0.6, 0.5))
    assert verify.check_prop1(h, t).holds
    t = TestModel.fixed(h, {"A": (0.6, 0.5), "y1": (0.8, 1.0), "y2": (0.6, 0.5)})
    report = verify.check_prop1(h, t)
    assert not report.holds
    assert report.witness == "y1"
    assert report.margin == pytest.approx(-0.25)


def test_prop1_rejects_zero_power():
    h, t = _depth2_model((0.0, 0.5), (0.6, 0.5))
    with pytest.raises(PreconditionError):
        verify.check_prop1(h, t)


def test_corollary1():
    h, t = _depth2_model((0.7, 1.0), (0.6, 0.5))
    report = verify.check_corollary1(h, t)
    assert report.holds
    assert report.details["margins"]["A"] == pytest.approx(2 * 0.5 / 0.6 - 1 / 0.7)
    assert report.details["margins"]["y1"] == pytest.approx(1.0 - 0.5 / 0.6)

    h, t = _depth2_model((0.5, 2.0), (0.6, 0.5))
    report = verify.check_corollary1(h, t)
    assert not report.holds
    assert report.witness == "A"
    assert report.margin == pytest.approx(2 * 0.5 / 0.6 - 4.0)


def test_corollary1_on_a_vine_is_ratio_ordering():
    h = hierarchy_module.augment(hierarchy_module.vine(3))
    increasing = TestModel.fixed(h, {"A1": (0.5, 0.1), "A2": (0.5, 0.2), "y1": (0.5, 0.4)})
    assert verify.check_corollary1(h, increasing).holds
    decreasing = TestModel.fixed(h, {"A1": (0.5, 0.4), "A2": (0.5, 0.2), "y1": (0.5, 0.1)})
    assert verify.check_corollary1(h, decreasing).witness in ("A1", "A2")


def test_checks_need_augmentation():
    h = hierarchy_module.dyadic(2)
    t = TestModel.uniform(h, 0.5, 0.5)
    with pytest.raises(PreconditionError):
        verify.check_corollary1(h, t)
    with pytest.raises(PreconditionError):
        verify.check_theorem3(h, t)


def test_theorem3_records_the_coverings():
    h, t = _depth2_model((0.7, 1.0), (0.6, 0.5))
    report = verify.check_theorem3(h, t)
    assert report.holds
    assert report.details["coverings"]["A"] == ["y1", "y2"]


def test_theorem3_is_only_sufficient():
    h, t = _depth2_model((0.5, 1.5), (0.1, 0.1), c_star=4.0)
    report = verify.check_theorem3(h, t)
    assert not report.holds and report.witness == "A"
    assert verify.check_depth2_iff(1.5, 0.5, 0.1, 0.1, 0.1, 0.1, c_star=4.0).holds
    assert exact_optimum_dp(h, t).cost == pytest.approx(ctf_cost_fixed(h, t), abs=1e-9)


def test_ratio_chain_implies_ctf_optimal(random_hierarchy):
    rng = np.random.default_rng(21)
    for _ in range(40):
        h = random_hierarchy(rng, max_patterns=5, augmented=True, c_star=float(rng.uniform(0.5, 2.0)))
        t = _ratio_instance(rng, h)
        assert verify.check_corollary1(h, t).holds
        assert verify.check_theorem3(h, t).holds
        assert exact_optimum_dp(h, t).cost == pytest.approx(ctf_cost_fixed(h, t), abs=1e-9)


def test_depth2_symmetric_leaves():
    report = verify.check_depth2_iff(0.6, 0.8, 0.3, 0.5, 0.3, 0.5)
    assert report.details["bound"] == pytest.approx(0.6 * (1 + 1 / 0.5))
    assert report.holds


def test_depth2_proviso():
    report = verify.check_depth2_iff(2.0, 0.5, 0.3, 0.5, 0.3, 0.5, c_star=1.0)
    assert not report.applicable
    assert report.witness == "proviso fails at A"
    with pytest.raises(PreconditionError):
        verify.check_depth2_iff(1.0, 0.0, 0.3, 0.5, 0.3, 0.5)


def test_depth2_violation_is_beaten_by_search():
    report = verify.check_depth2_iff(0.9, 0.95, 0.05, 0.5, 0.05, 0.5)
    assert report.applicable and not report.holds
    h, t = verify.depth2_instance(0.9, 0.95, 0.05, 0.5, 0.05, 0.5)
    assert ctf_cost_fixed(h, t) == pytest.approx(0.955)
    assert exact_optimum_dp(h, t).cost < 0.955 - 1e-9


def test_depth2_verdict_matches_search():
    rng = np.random.default_rng(22)
    checked = 0
    for _ in range(300):
        c_star = float(rng.uniform(0.5, 2.0))
        betas = rng.uniform(0.05, 1.0, size=3)
        costs = rng.uniform(0.0, 1.0, size=3) * c_star * betas
        args = (costs[0], betas[0], costs[1], betas[1], costs[2], betas[2])
        report = verify.check_depth2_iff(*map(float, args), c_star=c_star)
        if abs(report.margin) < 1e-3:
            continue
        h, t = verify.depth2_instance(*map(float, args), c_star=c_star)
        optimum = exact_optimum_dp(h, t).cost
        ctf = ctf_cost_fixed(h, t)
        if report.holds:
            assert optimum == pytest.approx(ctf, abs=1e-9)
        else:
            assert optimum < ctf - 1e-12
        checked += 1
    assert checked > 100


def test_corollary2():
    result = dyadic_ctf(HARMONIC, 3)
    m = costmodel.CostModel(psi=HARMONIC)
    report = verify.check_corollary2(result.hierarchy, m, result.per_attribute_power)
    assert report.holds

    h = hierarchy_module.augment(hierarchy_module.dyadic(2))
    report = verify.check_corollary2(h, m, {"A": 0.9, "y1": 0.1, "y2": 0.1})
    assert not report.holds
    assert report.witness == "powers_coarse_to_fine"

    table = costmodel.CostModel(gamma=costmodel.ComplexityFunction.from_config({"table": [1.0, 3.0]}), psi=HARMONIC)
    report = verify.check_corollary2(h, table, {"A": 0.1, "y1": 0.5, "y2": 0.5})
    assert report.witness == "gamma_subadditive"
    with pytest.raises(PreconditionError):
        verify.check_corollary2(h, m, {"A": 0.1})


def test_switching_examples():
    assert verify.switching_delta(HARMONIC, 2.0, 1.0, 0.5, 1.0) == pytest.approx(10 / 17 - (0.4 + 4 / 19))
    assert verify.switching_delta(PSI2, 1.0, 2.0, 0.0, 2.0) == pytest.approx(0.0625)
    for psi in costmodel.catalog().values():
        assert verify.switching_delta(psi, 1.5, 0.7, 0.8, 0.8) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(PreconditionError):
        verify.switching_delta(HARMONIC, 1.0, 1.0, 2.0, 1.0)


def test_switching_is_homogeneous():
    rng = np.random.default_rng(23)
    for psi in (HARMONIC, PSI2, costmodel.PowerFunction("psi3")):
        for a, b, x, gap, k in rng.uniform(0.1, 5.0, size=(50, 5)):
            base = verify.switching_delta(psi, a, b, x, x + gap)
            scaled = verify.switching_delta(psi, k * a, k * b, k * x, k * (x + gap))
            assert scaled == pytest.approx(k * base, abs=1e-9)


def test_harmonic_switching_holds():
    report = verify.switching_scan(HARMONIC)
    assert report.holds
    assert report.details["max_delta"] <= 1e-12
    assert report.details["violating"] == []
    assert report.details["regime_by_b"]["10"] == "b>a"
    rng = np.random.default_rng(24)
    a = rng.uniform(0.01, 10.0, size=100_000)
    b = a * rng.uniform(0.0, 1.0, size=a.size) + 1e-6
    x = rng.uniform(0.0, 10.0, size=a.size)
    y = x + rng.uniform(0.0, 10.0, size=a.size)
    assert np.max(verify.switching_deltas(HARMONIC, a, b, x, y)) <= 1e-12


def test_psi2_switching_fails():
    report = verify.switching_scan(PSI2)
    assert not report.holds
    assert report.details["violations"] > 0
    violating = report.details["violating"]
    assert len(violating) == report.details["violations"]
    assert all(row[4] > 1e-12 and row[3] >= row[2] for row in violating)
    assert max(row[4] for row in violating) == report.details["max_delta"]
    assert report.details["max_delta"] > 1e-9
    header, rows = report.csv_rows()
    assert header == ["a", "b", "x", "y", "delta"]
    assert len(rows) == report.details["points"]


def test_psi7_switching_fails_for_large_b():
    psi7 = costmodel.PowerFunction("psi7", mu=8.0)
    report = verify.switching_scan(psi7, a=1.0, bs=[1000.0], x_max=5e4, y_max=5e4, points=41)
    assert not report.holds
    assert report.details["max_delta"] > 1e-9
    assert report.details["psi_prime_0"] == 0.0
