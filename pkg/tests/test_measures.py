"""Pricing-set polytopes, slack maximization, and membership."""

import random
from fractions import Fraction

import pytest

from semistatic import (
    Measure,
    PricingSetSpec,
    TerminalClaim,
    closure_polytope,
    martingale_system,
    max_slack,
    membership,
    vertices,
)
from semistatic.fixtures import p2_measure, p2_params_of
from semistatic.lp import LpProblem, solve
from semistatic.measures import MeasureError, polytope_vertices_as_measures
from conftest import random_market

F = Fraction


def test_measure_validation(b1):
    with pytest.raises(MeasureError, match="sum"):
        Measure(b1.tree, {"u": F(1, 2), "d": F(1, 3)})
    with pytest.raises(MeasureError, match="negative"):
        Measure(b1.tree, {"u": F(3, 2), "d": F(-1, 2)})
    with pytest.raises(MeasureError, match="non-leaf"):
        Measure(b1.tree, {"r": 1})


def test_b1_martingale_system(b1):
    frag = martingale_system(b1)
    names = [c.name for c in frag.constraints]
    assert "mass" in names
    sol = solve(LpProblem("max", {}, frag.constraints, frag.variables))
    assert sol.values["w[u]"] == F(1, 2)


def test_t2_martingale_system_unique(t2):
    frag = martingale_system(t2)
    # 3 node equations + mass
    assert len(frag.constraints) == 4
    sol = solve(LpProblem("max", {}, frag.constraints, frag.variables))
    assert [sol.values[f"w[{l}]"] for l in t2.tree.leaves] == \
        [F(1, 9), F(2, 9), F(2, 9), F(4, 9)]


def test_p2_martingale_family_two_parameters(p2):
    poly = closure_polytope(PricingSetSpec(p2, h_cap=(None,)))
    vs = vertices(poly)
    # pure martingale polytope over (p, q) in [0, 1/2]^2: a 2-dim family
    params = sorted(p2_params_of(Q) for Q in polytope_vertices_as_measures(poly, p2.tree))
    assert params == [(F(0), F(0)), (F(0), F(1, 2)), (F(1, 2), F(0)), (F(1, 2), F(1, 2))]
    assert len(vs) == 4


def test_t2_closure_no_options_single_point(t2):
    poly = closure_polytope(PricingSetSpec(t2))
    ms = polytope_vertices_as_measures(poly, t2.tree)
    assert len(ms) == 1
    assert ms[0].at("dd") == F(4, 9)


def test_p2_closure_with_zero_cap_is_region_a(p2):
    poly = closure_polytope(PricingSetSpec(p2))
    params = sorted(p2_params_of(Q) for Q in polytope_vertices_as_measures(poly, p2.tree))
    assert params == [
        (F(0), F(0)), (F(0), F(1, 5)), (F(1, 3), F(1, 5)),
        (F(1, 2), F(0)), (F(1, 2), F(3, 20)),
    ]


def test_infeasible_caps_empty_polytope(t2):
    put = t2.claims["put5_am"]
    market = t2.with_options(h=[put], h_prices=[F(20, 9)])
    # the unique pricing measure values the claim at 20/9; capping below kills it
    poly = closure_polytope(PricingSetSpec(market, h_cap=(F(2),)))
    assert vertices(poly) == []


def test_max_slack_b1_call(b1):
    call = TerminalClaim(b1.tree, {"u": 1, "d": 0})
    market = b1.with_options(g=[call], g_prices=[F(3, 4)])
    res = max_slack(PricingSetSpec.strict_emm(market))
    assert res.optimum == F(1, 4)
    assert res.option_slack == F(1, 4)
    assert res.floor_slack == F(1, 2)
    assert res.witness.at("u") == F(1, 2)


def test_max_slack_p2_interior_witness(p2):
    res = max_slack(PricingSetSpec.strict_emm(p2))
    assert res.strictly_positive
    ok = membership(res.witness, PricingSetSpec.strict_emm(p2), strict=True)
    assert ok, ok.violations
    p_, q_ = p2_params_of(res.witness)
    assert 0 < p_ < F(1, 2) and 0 < q_ < F(1, 2)
    # strictly inside the region: the exercise envelope is strictly negative
    from semistatic.stopping import snell_value
    assert snell_value(res.witness, p2.h[0]) < 0


def test_max_slack_infeasible_when_two_sided_leg_mispriced(b1):
    f = TerminalClaim(b1.tree, {"u": 3, "d": 1})
    market = b1.with_options(f=[f], f_prices=[F(3)])  # forces E[S1] = 3 != 2
    res = max_slack(PricingSetSpec.strict_emm(market))
    assert res.status == "infeasible"
    assert res.witness is None


def test_max_slack_cap_below_minimum_nonpositive(t2):
    put_eu = t2.claims["put5_eu"]
    market = t2.with_options(g=[put_eu], g_prices=[F(1)])
    # unique pricing measure values the claim at 11/9 > 1: no slack possible
    res = max_slack(PricingSetSpec.strict_emm(market))
    assert res.status == "optimal"
    assert res.optimum <= 0


def test_max_slack_min_identity(b1, t2, p2):
    """At the optimum, min(option slack, floor slack, 1) equals the LP value."""
    rng = random.Random(31)
    markets = [b1, t2, p2] + [random_market(rng) for _ in range(15)]
    for market in markets:
        res = max_slack(PricingSetSpec.strict_emm(market))
        if res.status != "optimal":
            continue
        candidates = [F(1)]
        if res.option_slack is not None:
            candidates.append(res.option_slack)
        if res.floor_slack is not None:
            candidates.append(res.floor_slack)
        assert min(candidates) == res.optimum


def test_membership_t2_generous_caps(t2):
    put_eu = t2.claims["put5_eu"]
    market = t2.with_options(g=[put_eu], g_prices=[F(5)])
    Q = Measure(t2.tree, {"uu": F(1, 9), "ud": F(2, 9), "du": F(2, 9), "dd": F(4, 9)})
    assert membership(Q, PricingSetSpec.strict_emm(market), strict=True)


def test_membership_p2_printed_point(p2):
    Q = p2_measure(p2, F(1, 3), F(1, 5))
    spec = PricingSetSpec(p2)
    report = membership(Q, spec, strict=False)
    assert report, report.violations
    # the same point fails strictly (it sits on the boundary of the region)
    strict = membership(Q, spec, strict=True)
    assert not strict


def test_membership_violation_names_the_cap(p2):
    Q = p2_measure(p2, F(9, 20), F(9, 20))
    report = membership(Q, PricingSetSpec(p2), strict=False)
    assert not report
    assert any("h[0]" in v and "envelope" in v for v in report.violations)


def test_membership_martingale_violation_named(b1):
    Q = Measure(b1.tree, {"u": F(3, 4), "d": F(1, 4)})
    report = membership(Q, PricingSetSpec(b1), strict=False)
    assert not report
    assert any("martingale" in v and "r" in v for v in report.violations)


def test_closure_vertices_respect_caps(p2, t2):
    from semistatic.stopping import snell_value

    for market in (p2,):
        spec = PricingSetSpec(market)
        for Q in polytope_vertices_as_measures(closure_polytope(spec), market.tree):
            for k, cap in enumerate(spec.h_cap):
                assert snell_value(Q, market.h[k]) <= cap


def test_mixture_density_property(p2):
    """Mixing the strict witness into any closure vertex stays strictly
    feasible: the strict set is dense in its closure."""
    spec_strict = PricingSetSpec.strict_emm(p2)
    res = max_slack(spec_strict)
    Q0 = res.witness
    poly = closure_polytope(PricingSetSpec(p2))
    for Qv in polytope_vertices_as_measures(poly, p2.tree):
        for lam in (F(1), F(1, 2), F(1, 7), F(1, 64)):
            mix = Q0.mixture(Qv, lam)
            assert membership(mix, spec_strict, strict=True), lam


def test_lazy_oracle_equals_enumeration(p2):
    rng = random.Random(77)
    markets = [p2] + [m for m in (random_market(rng) for _ in range(12)) if m.h]
    for market in markets:
        spec = PricingSetSpec(market)
        enum_poly = closure_polytope(spec, lazy=False)
        lazy_poly = closure_polytope(spec, lazy=True)
        assert sorted(map(tuple, (sorted(v.items()) for v in vertices(enum_poly)))) == \
            sorted(map(tuple, (sorted(v.items()) for v in vertices(lazy_poly))))


def test_max_slack_lazy_equals_enumerated(p2):
    rng = random.Random(78)
    markets = [p2] + [random_market(rng) for _ in range(12)]
    for market in markets:
        spec = PricingSetSpec.strict_emm(market)
        a = max_slack(spec, lazy=False)
        b = max_slack(spec, lazy=True)
        assert a.status == b.status
        if a.status == "optimal":
            assert a.optimum == b.optimum
