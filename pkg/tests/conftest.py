"""Shared fixtures and the randomized market generator used by the
cross-check suites."""

from __future__ import annotations

import random
from fractions import Fraction

import pytest

from semistatic import EventTree, MarketSpec, TerminalClaim, load_fixture
from semistatic.tree import AdaptedProcess


@pytest.fixture(scope="session")
def b1():
    return load_fixture("B1")


@pytest.fixture(scope="session")
def t2():
    return load_fixture("T2")


@pytest.fixture(scope="session")
def p2():
    return load_fixture("P2")


def rand_rational(rng: random.Random, lo=-4, hi=8, max_den=4) -> Fraction:
    den = rng.randint(1, max_den)
    return Fraction(rng.randint(lo * den, hi * den), den)


def random_tree(rng: random.Random, max_depth=3, max_branch=3) -> EventTree:
    depth = rng.choice([1, 2, 2, 2, 3])
    depth = min(depth, max_depth)
    rows = [("n0", None, 0)]
    frontier = ["n0"]
    counter = 1
    for t in range(1, depth + 1):
        nxt = []
        for parent in frontier:
            for _ in range(rng.randint(1, max_branch)):
                name = f"n{counter}"
                counter += 1
                rows.append((name, parent, t))
                nxt.append(name)
        frontier = nxt
    return EventTree(rows)


def random_stock(rng: random.Random, tree: EventTree, feasible: bool) -> AdaptedProcess:
    """Positive stock values; `feasible` builds parents as strict convex
    combinations of their children, guaranteeing a full-support martingale
    measure exists."""
    values: dict[str, Fraction] = {}
    if feasible:
        for node in reversed(tree.nodes):
            if tree.is_leaf(node):
                values[node] = rand_rational(rng, 1, 8)
            else:
                kids = tree.children(node)
                weights = [Fraction(rng.randint(1, 4)) for _ in kids]
                total = sum(weights)
                values[node] = sum(
                    (w / total * values[c] for w, c in zip(weights, kids)), Fraction(0)
                )
    else:
        for node in tree.nodes:
            values[node] = rand_rational(rng, 1, 8)
    return AdaptedProcess(tree, values)


def random_market(rng: random.Random, max_depth=3, max_branch=3,
                  max_options=2, priced_fair=0.6) -> MarketSpec:
    tree = random_tree(rng, max_depth=max_depth, max_branch=max_branch)
    S = random_stock(rng, tree, feasible=rng.random() < 0.7)
    market = MarketSpec(tree=tree, S=S)

    # a reference pricing measure for quoting options near-consistently,
    # when one exists
    from semistatic.measures import PricingSetSpec, max_slack
    base = max_slack(PricingSetSpec.strict_emm(market))
    Q = base.witness if base.strictly_positive else None

    from semistatic.stopping import snell_value

    f, f_prices, g, g_prices, h, h_prices = [], [], [], [], [], []
    for _ in range(rng.choice([0, 0, 0, 1])):
        payoff = TerminalClaim(tree, {l: rand_rational(rng) for l in tree.leaves})
        if Q is not None and rng.random() < priced_fair:
            price = Q.expect_claim(payoff)
        else:
            price = rand_rational(rng)
        f.append(payoff)
        f_prices.append(price)
    for _ in range(rng.choice([0, 0, 1, 1, 2])):
        payoff = TerminalClaim(tree, {l: rand_rational(rng) for l in tree.leaves})
        if Q is not None and rng.random() < priced_fair:
            price = Q.expect_claim(payoff) + rng.choice(
                [Fraction(0), Fraction(1, 4), Fraction(1, 2), Fraction(-1, 4)]
            )
        else:
            price = rand_rational(rng)
        g.append(payoff)
        g_prices.append(price)
    for _ in range(rng.choice([0, 0, 1, 1, 2])):
        payoff = AdaptedProcess(tree, {n: rand_rational(rng) for n in tree.nodes})
        if Q is not None and rng.random() < priced_fair:
            price = snell_value(Q, payoff) + rng.choice(
                [Fraction(0), Fraction(1, 4), Fraction(1, 2), Fraction(-1, 4)]
            )
        else:
            price = rand_rational(rng)
        h.append(payoff)
        h_prices.append(price)
    return market.with_options(f=f, f_prices=f_prices, g=g, g_prices=g_prices,
                               h=h, h_prices=h_prices)


def random_claim(rng: random.Random, tree: EventTree) -> TerminalClaim:
    return TerminalClaim(tree, {l: rand_rational(rng) for l in tree.leaves})


def random_process(rng: random.Random, tree: EventTree) -> AdaptedProcess:
    return AdaptedProcess(tree, {n: rand_rational(rng) for n in tree.nodes})


def random_measure(rng: random.Random, tree: EventTree, full_support=True):
    from semistatic import Measure

    leaves = list(tree.leaves)
    if not full_support and len(leaves) > 1:
        keep = rng.sample(leaves, rng.randint(1, len(leaves)))
    else:
        keep = leaves
    weights = {l: Fraction(rng.randint(1, 8)) for l in keep}
    total = sum(weights.values())
    return Measure(tree, {l: w / total for l, w in weights.items()})
