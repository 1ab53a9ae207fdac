"""Market specifications, portfolio evaluation, and the market file format.

A market is a stock process on an event tree plus three static option books
with side semantics fixed by position: `f` two-sided European, `g` buy-only
European, `h` buy-only infinitely divisible American.  The market file is a
single JSON document with rationals encoded as "p/q" strings; parse ->
serialize -> parse is the identity, bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

from .rational import rat, rat_str
from .stopping import LiquidatingStrategy, liquidate_payoff
from .tree import AdaptedProcess, EventTree, TerminalClaim, TreeError


class MarketError(ValueError):
    pass


@dataclass(frozen=True)
class MarketSpec:
    """The tradable universe: (tree, S, f/f_prices, g/g_prices, h/h_prices).

    `support` is the reference-measure support: the leaves on which "almost
    surely" is evaluated.  It defaults to all leaves; a market file may
    designate a smaller set (the complement is the null set).
    `claims` carries optional named claims bundled with the market file
    (fixtures use this to ship their target payoff).
    """

    tree: EventTree
    S: AdaptedProcess
    f: tuple[TerminalClaim, ...] = ()
    f_prices: tuple[Fraction, ...] = ()
    g: tuple[TerminalClaim, ...] = ()
    g_prices: tuple[Fraction, ...] = ()
    h: tuple[AdaptedProcess, ...] = ()
    h_prices: tuple[Fraction, ...] = ()
    support: frozenset[str] = field(default=frozenset())
    claims: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.f) != len(self.f_prices):
            raise MarketError("two-sided European payoff/price count mismatch")
        if len(self.g) != len(self.g_prices):
            raise MarketError("buy-only European payoff/price count mismatch")
        if len(self.h) != len(self.h_prices):
            raise MarketError("American payoff/price count mismatch")
        for hk in self.h:
            if hk.dim != 1:
                raise MarketError("American payoff processes must be scalar")
        if not self.support:
            object.__setattr__(self, "support", frozenset(self.tree.leaves))
        bad = self.support - set(self.tree.leaves)
        if bad:
            raise MarketError(f"support contains non-leaf nodes {sorted(bad)!r}")

    @property
    def dim(self) -> int:
        return self.S.dim

    def support_leaves(self) -> tuple[str, ...]:
        return tuple(l for l in self.tree.leaves if l in self.support)

    def without_american(self, keep: int = 0) -> "MarketSpec":
        """The same market with only the first `keep` American options."""
        return MarketSpec(
            tree=self.tree, S=self.S,
            f=self.f, f_prices=self.f_prices,
            g=self.g, g_prices=self.g_prices,
            h=self.h[:keep], h_prices=self.h_prices[:keep],
            support=self.support, claims=self.claims,
        )

    def with_options(self, f=None, f_prices=None, g=None, g_prices=None,
                     h=None, h_prices=None) -> "MarketSpec":
        return MarketSpec(
            tree=self.tree, S=self.S,
            f=tuple(f) if f is not None else self.f,
            f_prices=tuple(rat(p) for p in f_prices) if f_prices is not None else self.f_prices,
            g=tuple(g) if g is not None else self.g,
            g_prices=tuple(rat(p) for p in g_prices) if g_prices is not None else self.g_prices,
            h=tuple(h) if h is not None else self.h,
            h_prices=tuple(rat(p) for p in h_prices) if h_prices is not None else self.h_prices,
            support=self.support, claims=self.claims,
        )


@dataclass(frozen=True)
class HedgePortfolio:
    """A semi-static strategy (H, a, b, c, mu).

    H is the dynamic stock position (d-dim, read on non-leaf nodes), `a` the
    two-sided European positions (signed), `b >= 0` the buy-only European
    positions, and each American option k is held in quantity `c[k] >= 0` and
    exercised by the liquidating strategy `mu[k]`.
    """

    H: AdaptedProcess | None = None
    a: tuple[Fraction, ...] = ()
    b: tuple[Fraction, ...] = ()
    c: tuple[Fraction, ...] = ()
    mu: tuple[LiquidatingStrategy, ...] = ()

    def __post_init__(self):
        if any(x < 0 for x in self.b):
            raise MarketError("buy-only European positions must be nonnegative")
        if any(x < 0 for x in self.c):
            raise MarketError("American positions must be nonnegative")
        if len(self.c) != len(self.mu):
            raise MarketError("American position/exercise count mismatch")


def zero_portfolio(market: MarketSpec) -> HedgePortfolio:
    from .stopping import stop_everywhere_at

    mus = tuple(
        LiquidatingStrategy.from_stopping_time(stop_everywhere_at(market.tree, 0))
        for _ in market.h
    )
    return HedgePortfolio(
        H=None,
        a=tuple(Fraction(0) for _ in market.f),
        b=tuple(Fraction(0) for _ in market.g),
        c=tuple(Fraction(0) for _ in market.h),
        mu=mus,
    )


def gains_to(H: AdaptedProcess, market: MarketSpec, node: str) -> Fraction:
    """Trading gains along the root-to-node path: sum over steps s < t of
    H_s . (S_{s+1} - S_s).  H is read on non-leaf nodes only."""
    tree = market.tree
    if H.dim != market.S.dim:
        raise MarketError(f"H dimension {H.dim} != stock dimension {market.S.dim}")
    path = tree.path(node)
    total = Fraction(0)
    for here, there in zip(path, path[1:]):
        hvec = H.at(here)
        s_here = market.S.at(here)
        s_there = market.S.at(there)
        total += sum(hl * (b - a) for hl, a, b in zip(hvec, s_here, s_there))
    return total


def portfolio_value(market: MarketSpec, p: HedgePortfolio, leaf: str) -> Fraction:
    """Terminal value on the path to `leaf`:
    H.S + a(f - fbar) + b(g - gbar) + c(mu(h) - hbar)."""
    if leaf not in market.tree.leaves:
        raise MarketError(f"{leaf!r} is not a leaf")
    total = Fraction(0)
    if p.H is not None:
        total += gains_to(p.H, market, leaf)
    for coef, claim, price in zip(p.a, market.f, market.f_prices):
        total += coef * (claim.at(leaf) - price)
    for coef, claim, price in zip(p.b, market.g, market.g_prices):
        total += coef * (claim.at(leaf) - price)
    for coef, eta, payoff, price in zip(p.c, p.mu, market.h, market.h_prices):
        total += coef * (liquidate_payoff(eta, payoff, leaf) - price)
    return total


# ---------------------------------------------------------------------------
# Market file (JSON) round trip
# ---------------------------------------------------------------------------

def _claim_from_json(tree: EventTree, data: Mapping) -> TerminalClaim:
    return TerminalClaim(tree, {k: rat(v) for k, v in data.items()})


def _process_from_json(tree: EventTree, data: Mapping) -> AdaptedProcess:
    return AdaptedProcess(tree, {k: rat(v) for k, v in data.items()})


def build_market(description: str | Mapping) -> MarketSpec:
    """Parse and validate a market file (JSON text or an already-parsed dict)."""
    if isinstance(description, str):
        try:
            doc = json.loads(description)
        except json.JSONDecodeError as exc:
            raise MarketError(f"market file is not valid JSON: {exc}") from exc
    else:
        doc = description
    if not isinstance(doc, Mapping):
        raise MarketError("market file must be a JSON object")
    try:
        horizon = doc["horizon"]
        node_rows = doc["nodes"]
    except KeyError as exc:
        raise MarketError(f"market file missing field {exc}") from exc
    tree = EventTree([(row["id"], row.get("parent"), row["time"]) for row in node_rows])
    if tree.horizon != horizon:
        raise MarketError(f"declared horizon {horizon} != tree horizon {tree.horizon}")
    s_values = {}
    for row in node_rows:
        if "S" not in row:
            raise TreeError(f"node {row['id']!r}: missing S value")
        s_values[row["id"]] = [rat(v) for v in row["S"]]
    S = AdaptedProcess(tree, s_values)

    def read_book(key, american):
        payoffs, prices = [], []
        for entry in doc.get(key, []):
            if american:
                payoffs.append(_process_from_json(tree, entry["payoff"]))
            else:
                payoffs.append(_claim_from_json(tree, entry["payoff"]))
            prices.append(rat(entry["price"]))
        return tuple(payoffs), tuple(prices)

    f, f_prices = read_book("european_two_sided", american=False)
    g, g_prices = read_book("european_buy_only", american=False)
    h, h_prices = read_book("american_buy_only", american=True)

    support = frozenset(doc.get("support") or tree.leaves)
    claims: dict[str, object] = {}
    for name, spec in (doc.get("claims") or {}).items():
        if spec["type"] == "european":
            claims[name] = _claim_from_json(tree, spec["values"])
        elif spec["type"] == "american":
            claims[name] = _process_from_json(tree, spec["values"])
        else:
            raise MarketError(f"claim {name!r}: unknown type {spec['type']!r}")
    priors = tuple(
        {k: rat(v) for k, v in entry.items()} for entry in doc.get("priors", [])
    )
    market = MarketSpec(
        tree=tree, S=S, f=f, f_prices=f_prices, g=g, g_prices=g_prices,
        h=h, h_prices=h_prices, support=support, claims=claims,
    )
    object.__setattr__(market, "_priors_raw", priors)
    return market


def market_priors(market: MarketSpec) -> tuple[dict[str, Fraction], ...]:
    """Raw leaf-weight maps from the market file's optional `priors` array."""
    return getattr(market, "_priors_raw", ())


def market_to_json(market: MarketSpec, priors: Sequence[Mapping[str, Fraction]] = ()) -> str:
    """Canonical serialization; `build_market(market_to_json(m))` reproduces m."""
    tree = market.tree
    nodes = []
    for n in tree.nodes:
        row = {
            "id": n,
            "parent": None if n == tree.root else tree.parent(n),
            "time": tree.time(n),
            "S": [rat_str(v) for v in market.S.at(n)],
        }
        nodes.append(row)

    def claim_json(claim: TerminalClaim):
        return {leaf: rat_str(claim.at(leaf)) for leaf in tree.leaves}

    def process_json(proc: AdaptedProcess):
        return {n: rat_str(proc.scalar_at(n)) for n in tree.nodes}

    doc = {
        "horizon": tree.horizon,
        "nodes": nodes,
        "european_two_sided": [
            {"payoff": claim_json(cl), "price": rat_str(p)}
            for cl, p in zip(market.f, market.f_prices)
        ],
        "european_buy_only": [
            {"payoff": claim_json(cl), "price": rat_str(p)}
            for cl, p in zip(market.g, market.g_prices)
        ],
        "american_buy_only": [
            {"payoff": process_json(hk), "price": rat_str(p)}
            for hk, p in zip(market.h, market.h_prices)
        ],
    }
    if market.support != frozenset(tree.leaves):
        doc["support"] = sorted(market.support)
    if market.claims:
        claims = {}
        for name, obj in market.claims.items():
            if isinstance(obj, TerminalClaim):
                claims[name] = {"type": "european", "values": claim_json(obj)}
            else:
                claims[name] = {"type": "american", "values": process_json(obj)}
        doc["claims"] = claims
    prior_rows = list(priors) or list(market_priors(market))
    if prior_rows:
        doc["priors"] = [
            {leaf: rat_str(rat(w)) for leaf, w in row.items()} for row in prior_rows
        ]
    return json.dumps(doc, indent=2, sort_keys=False)
