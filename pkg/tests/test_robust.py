"""Multi-prior markets: quasi-sure hedging, robust strict no-arbitrage,
dominating measures, and the minimax identity."""

import random
from fractions import Fraction
from itertools import combinations

import pytest

from semistatic import (
    ARBITRAGE,
    NO_ARBITRAGE,
    Measure,
    PricingSetSpec,
    PriorSet,
    RobustDualityGapError,
    RobustSpec,
    TerminalClaim,
    check_sna,
    check_sna_robust,
    closure_polytope,
    dominating_measure,
    membership,
    minimax_check,
    robust_pricing_set,
    sub_hedge_american,
    sub_hedge_european,
    sub_hedge_robust,
    union_support,
    vertices,
)
from semistatic.market import MarketSpec, portfolio_value
from semistatic.robust import HypothesisFailure
from semistatic.stopping import enumerate_stopping_times, snell_value
from semistatic.tree import AdaptedProcess, EventTree, constant_claim

from conftest import random_claim, random_market, random_measure, random_process

F = Fraction


def _uniform(tree):
    n = len(tree.leaves)
    return Measure(tree, {l: F(1, n) for l in tree.leaves})


def _emm_t2(tree):
    return Measure(tree, {"uu": F(1, 9), "ud": F(2, 9), "du": F(2, 9), "dd": F(4, 9)})


def _partial_t2(tree):
    return Measure(tree, {"uu": F(1, 3), "ud": F(1, 3), "du": F(1, 3)})


def test_union_support(t2):
    full = _uniform(t2.tree)
    part = _partial_t2(t2.tree)
    assert union_support(PriorSet((full,))) == frozenset(t2.tree.leaves)
    assert union_support(PriorSet((full, part))) == frozenset(t2.tree.leaves)
    a = Measure(t2.tree, {"uu": 1})
    b = Measure(t2.tree, {"dd": 1})
    assert union_support(PriorSet((a, b))) == frozenset({"uu", "dd"})


def test_robust_pricing_set_single_full_prior_reduces(t2):
    spec = RobustSpec(t2, PriorSet((_uniform(t2.tree),)))
    [poly] = robust_pricing_set(spec)
    single = closure_polytope(PricingSetSpec(t2))
    assert {tuple(sorted(v.items())) for v in vertices(poly)} == \
        {tuple(sorted(v.items())) for v in vertices(single)}


def test_robust_pricing_set_partial_component_empty(t2):
    """Martingality at the down node forces mass on dd, so no martingale
    measure lives inside a prior that omits it."""
    spec = RobustSpec(t2, PriorSet((_uniform(t2.tree), _partial_t2(t2.tree))))
    full_poly, partial_poly = robust_pricing_set(spec)
    assert vertices(full_poly)
    assert vertices(partial_poly) == []


def test_robust_pricing_set_infinite_caps(p2):
    spec = RobustSpec(p2, PriorSet((_uniform(p2.tree),)))
    [poly] = robust_pricing_set(spec, h_cap=[None])
    # pure martingale polytope: the full (p, q) square, 4 corners
    assert len(vertices(poly)) == 4


def test_sub_hedge_robust_singleton_reduces_to_single_prior(t2):
    rng = random.Random(14)
    psi = random_claim(rng, t2.tree)
    spec = RobustSpec(t2, PriorSet((_uniform(t2.tree),)))
    robust = sub_hedge_robust(spec, psi)
    single = sub_hedge_european(t2, psi)
    assert robust.price == single.price

    phi = random_process(rng, t2.tree)
    assert sub_hedge_robust(spec, phi).price == sub_hedge_american(t2, phi).price


def test_sub_hedge_robust_t2_two_priors_put(t2):
    put = t2.claims["put5_am"]
    spec = RobustSpec(t2, PriorSet((_uniform(t2.tree), _partial_t2(t2.tree))))
    result = sub_hedge_robust(spec, put)
    assert result.price == F(20, 9)
    assert snell_value(result.dual, put) == F(20, 9)


def test_sub_hedge_robust_constant_claim(t2):
    spec = RobustSpec(t2, PriorSet((_uniform(t2.tree), _partial_t2(t2.tree))))
    assert sub_hedge_robust(spec, constant_claim(t2.tree, F(9, 4))).price == F(9, 4)


def test_sub_hedge_robust_checks_hypothesis(b1):
    f = TerminalClaim(b1.tree, {"u": 3, "d": 1})
    bad = b1.with_options(f=[f], f_prices=[3])
    spec = RobustSpec(bad, PriorSet((_uniform(b1.tree),)))
    with pytest.raises(HypothesisFailure):
        sub_hedge_robust(spec, b1.claims["up_digital"])


def test_check_sna_robust_singleton_agrees_with_single_prior():
    rng = random.Random(606)
    for _ in range(12):
        market = random_market(rng, max_depth=2)
        spec = RobustSpec(market, PriorSet((_uniform(market.tree),)))
        robust = check_sna_robust(spec)
        single = check_sna(market)
        assert (robust.verdict == NO_ARBITRAGE) == (single.verdict == NO_ARBITRAGE)


def test_check_sna_robust_quasi_sure_arbitrage(t2):
    f = TerminalClaim(t2.tree, {l: t2.S.scalar_at(l) for l in t2.tree.leaves})
    bad = t2.with_options(f=[f], f_prices=[6])  # terminal stock sold at 6 != 4
    spec = RobustSpec(bad, PriorSet((_uniform(t2.tree), _partial_t2(t2.tree))))
    verdict = check_sna_robust(spec)
    assert verdict.verdict == ARBITRAGE
    union = sorted(union_support(spec.priors))
    values = [portfolio_value(bad, verdict.portfolio, l) for l in union]
    assert all(v >= 0 for v in values) and any(v > 0 for v in values)


def test_check_sna_robust_two_prior_stock_only(t2):
    spec = RobustSpec(t2, PriorSet((_uniform(t2.tree), _partial_t2(t2.tree))))
    assert check_sna_robust(spec).verdict == NO_ARBITRAGE


def test_dominating_measure_base_case(b1):
    spec = RobustSpec(b1, PriorSet((_uniform(b1.tree),)))
    result = dominating_measure(spec, _uniform(b1.tree))
    assert result.Q.weights == {"u": F(1, 2), "d": F(1, 2)}
    assert result.h_tilde == ()


def test_dominating_measure_one_option(t2):
    put = t2.claims["put5_am"]
    market = t2.with_options(h=[put], h_prices=[F(3)])  # cheap cap: 20/9 < 3
    priors = PriorSet((_uniform(t2.tree), _partial_t2(t2.tree)))
    spec = RobustSpec(market, priors)
    for P in priors:
        result = dominating_measure(spec, P)
        assert P.support() <= result.Q.support()
        assert result.h_tilde[0] < F(3)
        assert snell_value(result.Q, put) <= result.h_tilde[0]
        pset = PricingSetSpec(market, g_cap=result.g_tilde, h_cap=result.h_tilde)
        assert membership(result.Q, pset, strict=False)


def test_dominating_measure_two_options_recursion(t2):
    """Two American options exercise the full induction: the last option is
    sub-hedged in the reduced market, the recursion handles the first."""
    put = t2.claims["put5_am"]
    call_vals = {n: max(t2.S.scalar_at(n) - 4, F(0)) for n in t2.tree.nodes}
    call = AdaptedProcess(t2.tree, call_vals)
    # envelope values under the unique pricing measure: put 20/9, call 4/3
    market = t2.with_options(h=[put, call], h_prices=[F(3), F(2)])
    priors = PriorSet((_uniform(t2.tree), _partial_t2(t2.tree)))
    spec = RobustSpec(market, priors)
    for P in priors:
        result = dominating_measure(spec, P)
        assert result.lam is not None
        assert result.h_tilde[0] < 3 and result.h_tilde[1] < 2
        assert snell_value(result.Q, put) <= result.h_tilde[0]
        assert snell_value(result.Q, call) <= result.h_tilde[1]
        assert P.support() <= result.Q.support()


def test_dominating_measure_small_support_prior(t2):
    put = t2.claims["put5_am"]
    market = t2.with_options(h=[put], h_prices=[F(3)])
    tiny = Measure(t2.tree, {"dd": 1})
    priors = PriorSet((_uniform(t2.tree), tiny))
    result = dominating_measure(RobustSpec(market, priors), tiny)
    # supports only grow under mixing
    assert tiny.support() <= result.Q.support()


def test_dominating_measure_refuses_without_sna(b1):
    h = AdaptedProcess(b1.tree, {"r": 1, "u": 0, "d": 3})
    market = b1.with_options(h=[h], h_prices=[F(1)])  # exercise value 3/2 > 1
    spec = RobustSpec(market, PriorSet((_uniform(b1.tree),)))
    from semistatic.robust import RobustError

    with pytest.raises(RobustError):
        dominating_measure(spec, _uniform(b1.tree))


def _two_nested_priors(rng, tree):
    full = _uniform(tree)
    leaves = list(tree.leaves)
    k = rng.randint(1, len(leaves))
    sub = rng.sample(leaves, k)
    weights = {l: F(rng.randint(1, 5)) for l in sub}
    total = sum(weights.values())
    partial = Measure(tree, {l: w / total for l, w in weights.items()})
    return PriorSet((full, partial))


@pytest.mark.parametrize("seed", range(6))
def test_domination_criterion_agreement_random(seed):
    """Robust strict no-arbitrage holds exactly when a dominating measure is
    constructible for every prior; the caps of the constructions are strictly
    inside the quotes."""
    rng = random.Random(12_000 + seed)
    for _ in range(4):
        market = random_market(rng, max_depth=2)
        if len(market.h) > 1:
            market = market.without_american(1)
        priors = _two_nested_priors(rng, market.tree)
        spec = RobustSpec(market, priors)
        verdict = check_sna_robust(spec)
        try:
            results = [dominating_measure(spec, P) for P in priors]
            constructed = True
        except Exception:
            constructed = False
        assert (verdict.verdict == NO_ARBITRAGE) == constructed
        if constructed:
            g_tilde = tuple(min(r.g_tilde[j] for r in results)
                            for j in range(len(market.g)))
            h_tilde = tuple(min(r.h_tilde[k] for r in results)
                            for k in range(len(market.h)))
            for g_t, g_p in zip(g_tilde, market.g_prices):
                assert g_t < g_p
            for h_t, h_p in zip(h_tilde, market.h_prices):
                assert h_t < h_p
            for r, P in zip(results, priors):
                pset = PricingSetSpec(market, g_cap=g_tilde or (), h_cap=h_tilde or ())
                # the common caps may be tighter than this prior's own; its
                # measure still satisfies its own caps strictly under quotes
                own = PricingSetSpec(market, g_cap=r.g_tilde, h_cap=r.h_tilde)
                assert membership(r.Q, own, strict=False)


@pytest.mark.parametrize("seed", range(5))
def test_robust_duality_random_nested(seed):
    rng = random.Random(13_000 + seed)
    done = 0
    while done < 3:
        market = random_market(rng, max_depth=2)
        priors = _two_nested_priors(rng, market.tree)
        spec = RobustSpec(market, priors)
        try:
            psi = random_claim(rng, market.tree)
            result = sub_hedge_robust(spec, psi)
        except HypothesisFailure:
            continue
        done += 1
        assert result.gap == 0


def test_empty_pricing_set_prices_at_infinity(t2):
    """A cap below every attainable exercise value empties the pricing set
    while the stock-and-European hypothesis still holds: the price is the
    tagged infinity, never a rational."""
    from semistatic import INFINITE_PRICE

    put = t2.claims["put5_am"]
    market = t2.with_options(h=[put], h_prices=[F(1)])  # envelope value is 20/9
    spec = RobustSpec(market, PriorSet((_uniform(t2.tree),)))
    result = sub_hedge_robust(spec, t2.claims["put5_eu"])
    assert result.price == INFINITE_PRICE
    assert result.details["pricing_set_empty"]


def test_priors_round_trip_in_market_file(t2):
    import json

    from semistatic.market import build_market, market_priors, market_to_json

    text = market_to_json(t2, priors=[{"uu": F(1, 2), "dd": F(1, 2)}])
    again = build_market(text)
    assert market_priors(again) == ({"uu": F(1, 2), "dd": F(1, 2)},)
    assert market_to_json(again) == text


def test_recombination_gap_detected():
    """Non-nested priors: a martingale measure straddling both supports prices
    the claim strictly below every component, so the operation refuses."""
    tree = EventTree([
        ("r", None, 0),
        ("a", "r", 1), ("b", "r", 1), ("c", "r", 1), ("d", "r", 1),
    ])
    S = AdaptedProcess(tree, {"r": F(5, 2), "a": 1, "b": 2, "c": 3, "d": 4})
    market = MarketSpec(tree=tree, S=S)
    p_odd = Measure(tree, {"a": F(1, 2), "d": F(1, 2)})
    p_even = Measure(tree, {"b": F(1, 2), "c": F(1, 2)})
    spec = RobustSpec(market, PriorSet((p_odd, p_even)))
    psi = TerminalClaim(tree, {"a": 0, "b": 1, "c": 0, "d": 1})
    with pytest.raises(RobustDualityGapError):
        sub_hedge_robust(spec, psi)


def test_minimax_singleton_is_sum_of_envelopes(t2):
    put = t2.claims["put5_am"]
    emm = _emm_t2(t2.tree)
    result = minimax_check([emm], [put])
    assert result.lhs == result.mid == result.rhs == F(20, 9)
    double = minimax_check([emm], [put, put])
    assert double.rhs == 2 * result.rhs


def test_minimax_t2_segment_with_oracle(t2):
    """Two-vertex hull: the lower envelope of the per-stop affine values over
    the segment is scanned exactly (endpoints plus pairwise crossings)."""
    put = t2.claims["put5_am"]
    emm, uni = _emm_t2(t2.tree), _uniform(t2.tree)
    result = minimax_check([emm, uni], [put])
    assert result.lhs == result.mid == result.rhs

    taus = enumerate_stopping_times(t2.tree)
    lines = []
    for tau in taus:
        v0 = uni.expect_at_stop(put, tau)
        v1 = emm.expect_at_stop(put, tau)
        lines.append((v0, v1 - v0))  # value at lam: v0 + lam * slope
    candidates = {F(0), F(1)}
    for (b1_, s1), (b2_, s2) in combinations(lines, 2):
        if s1 != s2:
            lam = (b2_ - b1_) / (s1 - s2)
            if 0 <= lam <= 1:
                candidates.add(lam)
    oracle = min(max(b + lam * s for b, s in lines) for lam in candidates)
    assert result.rhs == oracle
    assert snell_value(result.attaining, put) == oracle


def test_minimax_two_options_additivity(t2):
    put = t2.claims["put5_am"]
    call_vals = {n: max(t2.S.scalar_at(n) - 4, 0) for n in t2.tree.nodes}
    call = AdaptedProcess(t2.tree, call_vals)
    emm, uni = _emm_t2(t2.tree), _uniform(t2.tree)
    both = minimax_check([emm, uni], [put, call])
    assert both.lhs == both.mid == both.rhs


@pytest.mark.parametrize("seed", range(6))
def test_minimax_random(seed):
    rng = random.Random(14_000 + seed)
    market = random_market(rng, max_depth=2)
    tree = market.tree
    n_vert = rng.randint(1, 3)
    verts = [random_measure(rng, tree, full_support=rng.random() < 0.7)
             for _ in range(n_vert)]
    hs = [random_process(rng, tree) for _ in range(rng.randint(1, 2))]
    result = minimax_check(verts, hs)
    assert result.lhs == result.mid == result.rhs
    total = sum((snell_value(result.attaining, h) for h in hs), F(0))
    assert total == result.rhs
