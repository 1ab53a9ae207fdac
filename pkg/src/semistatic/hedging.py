"""Sub- and super-hedging prices with primal strategies and dual certificates.

The bilinear American term c * mu(h) is re-parametrized as a single
nonnegative exercise flow nu := c * mu whose path sums agree across all paths
(their common value is the holding c).  That re-parametrization is exact and
turns every divisible hedging problem into one LP; it is precisely what
infinite divisibility buys.  The indivisible super-hedge keeps a whole-unit
exercise (one stopping time for the entire holding) and is solved by scanning
stopping times, which is where the divisible/indivisible price gap shows up.

Every operation solves the primal strategy LP and an independent dual LP over
the closure of the pricing set, requires exact equality, and returns both
sides; `duality_gap_report` re-verifies a result from scratch through plain
portfolio evaluation, trusting nothing from the solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

from .lp import EQ, GE, LE, Constraint, LpProblem, LpSolution, con, solve
from .market import HedgePortfolio, MarketSpec, portfolio_value
from .measures import (
    Measure,
    PricingSetSpec,
    SlackResult,
    _measure_of,
    _stop_row,
    _use_enumeration,
    _weight_var,
    closure_polytope,
    martingale_system,
    max_slack,
    membership,
    polytope_vertices_as_measures,
    pricing_rows,
)
from .rational import rat, rat_str
from .stopping import (
    LiquidatingStrategy,
    StoppingTime,
    enumerate_stopping_times,
    liquidate_payoff,
    snell_optimal_stop,
    snell_value,
    stop_everywhere_at,
)
from .tree import AdaptedProcess, TerminalClaim

ZERO = Fraction(0)


class HedgingError(RuntimeError):
    pass


class ArbitrageRefusal(HedgingError):
    """Hedging was refused because strict no-arbitrage fails; carries the
    slack certificate."""

    def __init__(self, slack: SlackResult):
        self.slack = slack
        super().__init__(
            "strict no-arbitrage fails "
            f"(slack status {slack.status}, optimum {slack.optimum})"
        )


class VerificationFailure(HedgingError):
    """A certificate failed its independent re-check; names the culprit."""


class PriceInfinity:
    """Tagged +infinity sentinel for prices over an empty pricing set."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "+inf"

    def __eq__(self, other):
        return isinstance(other, PriceInfinity)

    def __hash__(self):
        return hash("PriceInfinity")


INFINITE_PRICE = PriceInfinity()


# ---------------------------------------------------------------------------
# Strategy variable space (the nu re-parametrization)
# ---------------------------------------------------------------------------

class StrategySpace:
    """Column layout for semi-static strategies on a market.

    Columns: H[node][l] (free), a[i] (free), b[j] >= 0, nu[k][node] >= 0 and
    c[k] >= 0 tied by per-leaf path-sum rows nu-along-path == c[k].
    Optionally an exercise flow eta[node] >= 0 with unit path sums (for
    sub-hedging American claims).
    """

    def __init__(self, market: MarketSpec, include_eta: bool = False):
        self.market = market
        tree = market.tree
        self.variables: list[str] = []
        self.free: set[str] = set()
        for n in tree.nonleaf_nodes():
            for l in range(market.dim):
                v = f"H[{n}][{l}]"
                self.variables.append(v)
                self.free.add(v)
        for i in range(len(market.f)):
            v = f"a[{i}]"
            self.variables.append(v)
            self.free.add(v)
        for j in range(len(market.g)):
            self.variables.append(f"b[{j}]")
        for k in range(len(market.h)):
            self.variables.append(f"c[{k}]")
            for n in tree.nodes:
                self.variables.append(f"nu[{k}][{n}]")
        self.include_eta = include_eta
        if include_eta:
            for n in tree.nodes:
                self.variables.append(f"eta[{n}]")

    def structure_rows(self) -> list[Constraint]:
        tree = self.market.tree
        rows: list[Constraint] = []
        for k in range(len(self.market.h)):
            for leaf in tree.leaves:
                coeffs = {f"nu[{k}][{n}]": Fraction(1) for n in tree.path(leaf)}
                coeffs[f"c[{k}]"] = Fraction(-1)
                rows.append(con(coeffs, EQ, 0, f"liq[{k}][{leaf}]"))
        if self.include_eta:
            for leaf in tree.leaves:
                coeffs = {f"eta[{n}]": Fraction(1) for n in tree.path(leaf)}
                rows.append(con(coeffs, EQ, 1, f"flow[{leaf}]"))
        return rows

    def phi_coeffs(self, leaf: str, g_prices=None, h_prices=None) -> dict[str, Fraction]:
        """Column coefficients of the terminal portfolio value at `leaf`."""
        m = self.market
        tree = m.tree
        g_prices = m.g_prices if g_prices is None else tuple(rat(p) for p in g_prices)
        h_prices = m.h_prices if h_prices is None else tuple(rat(p) for p in h_prices)
        coeffs: dict[str, Fraction] = {}
        path = tree.path(leaf)
        for here, there in zip(path, path[1:]):
            s_here, s_there = m.S.at(here), m.S.at(there)
            for l in range(m.dim):
                step = s_there[l] - s_here[l]
                if step:
                    v = f"H[{here}][{l}]"
                    coeffs[v] = coeffs.get(v, ZERO) + step
        for i, (claim, price) in enumerate(zip(m.f, m.f_prices)):
            val = claim.at(leaf) - price
            if val:
                coeffs[f"a[{i}]"] = val
        for j, (claim, price) in enumerate(zip(m.g, g_prices)):
            val = claim.at(leaf) - price
            if val:
                coeffs[f"b[{j}]"] = val
        for k, (h, price) in enumerate(zip(m.h, h_prices)):
            for n in path:
                val = h.scalar_at(n)
                if val:
                    coeffs[f"nu[{k}][{n}]"] = val
            if price:
                coeffs[f"c[{k}]"] = -price
        return coeffs

    def extract_portfolio(self, values: Mapping[str, Fraction]) -> HedgePortfolio:
        m = self.market
        tree = m.tree
        H = None
        if tree.nonleaf_nodes():
            hvals = {}
            for n in tree.nodes:
                if tree.is_leaf(n):
                    hvals[n] = tuple(ZERO for _ in range(m.dim))
                else:
                    hvals[n] = tuple(
                        values.get(f"H[{n}][{l}]", ZERO) for l in range(m.dim)
                    )
            H = AdaptedProcess(tree, hvals)
        a = tuple(values.get(f"a[{i}]", ZERO) for i in range(len(m.f)))
        b = tuple(values.get(f"b[{j}]", ZERO) for j in range(len(m.g)))
        c, mus = [], []
        for k in range(len(m.h)):
            ck = values.get(f"c[{k}]", ZERO)
            c.append(ck)
            if ck > 0:
                eta_vals = {n: values.get(f"nu[{k}][{n}]", ZERO) / ck for n in tree.nodes}
                mus.append(LiquidatingStrategy.from_map(tree, eta_vals))
            else:
                mus.append(LiquidatingStrategy.from_stopping_time(stop_everywhere_at(tree, 0)))
        return HedgePortfolio(H=H, a=a, b=b, c=tuple(c), mu=tuple(mus))

    def extract_eta(self, values: Mapping[str, Fraction]) -> LiquidatingStrategy:
        tree = self.market.tree
        return LiquidatingStrategy.from_map(
            tree, {n: values.get(f"eta[{n}]", ZERO) for n in tree.nodes}
        )


# ---------------------------------------------------------------------------
# Primal hedging LPs
# ---------------------------------------------------------------------------

def hedge_primal(
    market: MarketSpec,
    claim,
    kind: str,
    pointwise_leaves: Sequence[str] | None = None,
) -> tuple[LpSolution, StrategySpace]:
    """The strategy-side LP.

    kind "sub_eu":    max x s.t. Phi + psi >= x pointwise,
    kind "sub_am":    max x s.t. Phi + eta(phi) >= x pointwise, eta a flow,
    kind "super_div": min x s.t. x + Phi >= psi pointwise.
    """
    leaves = tuple(pointwise_leaves) if pointwise_leaves is not None \
        else market.support_leaves()
    space = StrategySpace(market, include_eta=(kind == "sub_am"))
    rows = space.structure_rows()
    for leaf in leaves:
        coeffs = space.phi_coeffs(leaf)
        if kind == "sub_eu":
            coeffs["x"] = Fraction(-1)
            rows.append(con(coeffs, GE, -claim.at(leaf), f"leaf[{leaf}]"))
        elif kind == "super_div":
            coeffs["x"] = Fraction(1)
            rows.append(con(coeffs, GE, claim.at(leaf), f"leaf[{leaf}]"))
        elif kind == "sub_am":
            for n in market.tree.path(leaf):
                val = claim.scalar_at(n)
                if val:
                    coeffs[f"eta[{n}]"] = coeffs.get(f"eta[{n}]", ZERO) + val
            coeffs["x"] = Fraction(-1)
            rows.append(con(coeffs, GE, 0, f"leaf[{leaf}]"))
        else:
            raise ValueError(f"unknown hedge kind {kind!r}")
    variables = ["x"] + space.variables
    sense = "min" if kind == "super_div" else "max"
    problem = LpProblem(sense, {"x": 1}, rows, variables,
                        free=frozenset({"x"}) | space.free)
    return solve(problem), space


# ---------------------------------------------------------------------------
# Dual LPs over the closure of the pricing set
# ---------------------------------------------------------------------------

def dual_optimum(
    spec: PricingSetSpec,
    claim,
    kind: str,
    carrier: Sequence[str] | None = None,
    lazy: bool | None = None,
) -> tuple[LpSolution, Measure | None]:
    """Optimize over the closure polytope: min E psi ("sub_eu"), max E psi
    ("super_div"), or min of the exercise value sup_tau E phi_tau ("sub_am",
    epigraph form).  American cap rows and epigraph rows are enumerated on
    small trees and generated lazily from the exercise envelope elsewhere."""
    m = spec.market
    leaves = tuple(carrier) if carrier is not None else m.support_leaves()
    base = martingale_system(m, carrier=leaves)
    use_lazy = (not _use_enumeration(m.tree)) if lazy is None else lazy
    taus = None if use_lazy else enumerate_stopping_times(m.tree)

    def claim_coeffs():
        return {_weight_var(l): claim.at(l) for l in leaves if claim.at(l)}

    def build(cap_cuts: list[tuple[int, StoppingTime]],
              epi_cuts: list[StoppingTime]) -> LpProblem:
        rows = list(base.constraints)
        rows += pricing_rows(spec, leaves, taus=taus)
        for k, tau in cap_cuts:
            rows.append(con(_stop_row(m.h[k], tau, leaves), LE, spec.h_cap[k],
                            f"h[{k}]cut"))
        variables = list(base.variables)
        objective: dict[str, Fraction]
        free: frozenset[str] = frozenset()
        if kind == "sub_eu":
            objective = claim_coeffs()
            sense = "min"
        elif kind == "super_div":
            objective = claim_coeffs()
            sense = "max"
        elif kind == "sub_am":
            variables.append("z")
            free = frozenset({"z"})
            objective = {"z": 1}
            sense = "min"
            use_taus = taus if taus is not None else epi_cuts
            for t_idx, tau in enumerate(use_taus):
                coeffs = dict(_stop_row(claim, tau, leaves))
                coeffs["z"] = Fraction(-1)
                rows.append(con(coeffs, LE, 0, f"epi[{t_idx}]"))
        else:
            raise ValueError(f"unknown dual kind {kind!r}")
        return LpProblem(sense, objective, rows, variables, free=free)

    cap_cuts: list[tuple[int, StoppingTime]] = []
    epi_cuts: list[StoppingTime] = [stop_everywhere_at(m.tree, 0)] if kind == "sub_am" else []
    seen_caps: set[tuple[int, frozenset]] = set()
    seen_epi: set[frozenset] = set()
    while True:
        sol = solve(build(cap_cuts if use_lazy else [], epi_cuts))
        if sol.status != "optimal":
            return sol, None
        Q = _measure_of(leaves, sol.values, m.tree)
        if not use_lazy:
            return sol, Q
        progressed = False
        for k, cap in enumerate(spec.h_cap):
            if cap is None:
                continue
            if snell_value(Q, m.h[k]) > cap:
                tau = snell_optimal_stop(Q, m.h[k])
                key = (k, tau.stop_nodes)
                if key not in seen_caps:
                    seen_caps.add(key)
                    cap_cuts.append((k, tau))
                    progressed = True
        if kind == "sub_am":
            z = sol.values.get("z", ZERO)
            if snell_value(Q, claim) > z:
                tau = snell_optimal_stop(Q, claim)
                if tau.stop_nodes not in seen_epi:
                    seen_epi.add(tau.stop_nodes)
                    epi_cuts.append(tau)
                    progressed = True
        if not progressed:
            return sol, Q


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------

@dataclass
class HedgeResult:
    kind: str
    market: MarketSpec
    claim: object
    price: Fraction | PriceInfinity
    portfolio: HedgePortfolio | None = None
    eta: LiquidatingStrategy | None = None
    dual: Measure | None = None
    gap: Fraction = ZERO
    details: dict = field(default_factory=dict)

    def __repr__(self):
        p = repr(self.price) if isinstance(self.price, PriceInfinity) else rat_str(self.price)
        return f"HedgeResult({self.kind}, price={p})"


def _require_sna(market: MarketSpec) -> SlackResult:
    slack = max_slack(PricingSetSpec.strict_emm(market))
    if not slack.strictly_positive:
        raise ArbitrageRefusal(slack)
    return slack


def sub_hedge_european(market: MarketSpec, psi: TerminalClaim) -> HedgeResult:
    """Largest x guaranteed by a strategy plus the claim; equals the minimum
    of E_Q psi over the closed pricing set, exactly."""
    _require_sna(market)
    primal, space = hedge_primal(market, psi, "sub_eu")
    if primal.status != "optimal":
        raise HedgingError(f"hedging LP is {primal.status}")
    dual_sol, Q = dual_optimum(PricingSetSpec(market), psi, "sub_eu")
    if dual_sol.status != "optimal":
        raise HedgingError(f"dual LP is {dual_sol.status} under SNA")
    gap = primal.objective - dual_sol.objective
    result = HedgeResult(
        kind="sub_eu", market=market, claim=psi, price=dual_sol.objective,
        portfolio=space.extract_portfolio(primal.values), dual=Q, gap=gap,
    )
    duality_gap_report(result)
    return result


def sub_hedge_american(market: MarketSpec, phi: AdaptedProcess) -> HedgeResult:
    """Sub-hedging price of an American claim liquidated by an exercise flow;
    equals min over the closed pricing set of the claim's exercise value."""
    _require_sna(market)
    primal, space = hedge_primal(market, phi, "sub_am")
    if primal.status != "optimal":
        raise HedgingError(f"hedging LP is {primal.status}")
    dual_sol, Q = dual_optimum(PricingSetSpec(market), phi, "sub_am")
    if dual_sol.status != "optimal":
        raise HedgingError(f"dual LP is {dual_sol.status} under SNA")
    gap = primal.objective - dual_sol.objective
    result = HedgeResult(
        kind="sub_am", market=market, claim=phi, price=dual_sol.objective,
        portfolio=space.extract_portfolio(primal.values),
        eta=space.extract_eta(primal.values), dual=Q, gap=gap,
    )
    duality_gap_report(result)
    return result


def super_hedge_divisible(market: MarketSpec, psi: TerminalClaim) -> HedgeResult:
    """Smallest initial capital whose semi-static portfolio dominates the
    claim pointwise; equals max of E_Q psi over the closed pricing set."""
    _require_sna(market)
    primal, space = hedge_primal(market, psi, "super_div")
    if primal.status != "optimal":
        raise HedgingError(f"hedging LP is {primal.status}")
    dual_sol, Q = dual_optimum(PricingSetSpec(market), psi, "super_div")
    if dual_sol.status != "optimal":
        raise HedgingError(f"dual LP is {dual_sol.status} under SNA")
    gap = primal.objective - dual_sol.objective
    result = HedgeResult(
        kind="super_div", market=market, claim=psi, price=dual_sol.objective,
        portfolio=space.extract_portfolio(primal.values), dual=Q, gap=gap,
    )
    duality_gap_report(result)
    return result


def super_hedge_indivisible(
    market: MarketSpec, psi: TerminalClaim, whole_units: bool = True
) -> HedgeResult:
    """Super-hedge with stock plus a whole-unit American position exercised at
    a single stopping time (no divisibility, no European books): scan the
    stopping times, solve the per-stop LP, keep the cheapest.

    `whole_units=False` allows the holding to be liquidated as a flow instead
    (still stock + the American option only), the divisible comparison point.
    """
    _require_sna(market)
    m = market
    if len(m.h) > 1:
        raise HedgingError(
            "indivisible super-hedging is limited to at most one American option"
        )
    leaves = m.support_leaves()
    tree = m.tree
    stripped = m.with_options(f=[], f_prices=[], g=[], g_prices=[])

    if not whole_units:
        primal, space = hedge_primal(stripped, psi, "super_div")
        if primal.status != "optimal":
            raise HedgingError(f"hedging LP is {primal.status}")
        dual_sol, Q = dual_optimum(PricingSetSpec(stripped), psi, "super_div")
        result = HedgeResult(
            kind="super_indiv", market=market, claim=psi, price=dual_sol.objective,
            portfolio=space.extract_portfolio(primal.values), dual=Q,
            gap=primal.objective - dual_sol.objective,
            details={"whole_units": False},
        )
        duality_gap_report(result)
        return result

    taus = enumerate_stopping_times(tree) if m.h else [stop_everywhere_at(tree, 0)]
    table: list[dict] = []
    best = None
    for tau in taus:
        space = StrategySpace(stripped.without_american(0))
        rows = []
        for leaf in leaves:
            coeffs = dict(space.phi_coeffs(leaf))
            coeffs["x"] = Fraction(1)
            if m.h:
                val = tau.value_at(m.h[0], leaf) - m.h_prices[0]
                if val:
                    coeffs["c"] = val
            rows.append(con(coeffs, GE, psi.at(leaf), f"leaf[{leaf}]"))
        variables = ["x"] + space.variables + (["c"] if m.h else [])
        primal = solve(LpProblem("min", {"x": 1}, rows, variables,
                                 free=frozenset({"x"}) | space.free))
        if primal.status != "optimal":
            raise HedgingError(f"per-stop hedging LP is {primal.status}")
        entry = {
            "tau": tau,
            "value": primal.objective,
            "c": primal.values.get("c", ZERO),
            "solution": primal,
            "space": space,
        }
        table.append(entry)
        if best is None or entry["value"] < best["value"]:
            best = entry
        if not m.h:
            break

    # dual certificate for the winning stop: martingale measures with
    # E[h at tau] <= quote, maximizing E psi
    base = martingale_system(stripped.without_american(0), carrier=leaves)
    rows = list(base.constraints)
    if m.h:
        coeffs = _stop_row(m.h[0], best["tau"], leaves)
        rows.append(con(coeffs, LE, m.h_prices[0], "h_at_stop"))
    dual_sol = solve(LpProblem(
        "max", {_weight_var(l): psi.at(l) for l in leaves if psi.at(l)},
        rows, base.variables,
    ))
    if dual_sol.status != "optimal":
        raise HedgingError(f"per-stop dual LP is {dual_sol.status}")
    Q = _measure_of(leaves, dual_sol.values, tree)
    stock = best["space"].extract_portfolio(best["solution"].values)
    c_star = best["c"]
    mu = LiquidatingStrategy.from_stopping_time(best["tau"]) if m.h else None
    portfolio = HedgePortfolio(
        H=stock.H, a=(), b=(),
        c=(c_star,) if m.h else (), mu=(mu,) if m.h else (),
    )
    result = HedgeResult(
        kind="super_indiv", market=market, claim=psi, price=best["value"],
        portfolio=portfolio, dual=Q,
        gap=best["value"] - dual_sol.objective,
        details={
            "whole_units": True,
            "stop": best["tau"],
            "quantity": c_star,
            "per_stop_values": {tuple(sorted(e["tau"].stop_nodes)): e["value"]
                                for e in table},
        },
    )
    duality_gap_report(result)
    return result


# ---------------------------------------------------------------------------
# Independent re-verification
# ---------------------------------------------------------------------------

def duality_gap_report(result: HedgeResult) -> dict:
    """Re-verify a hedge result from first principles and emit a
    machine-readable certificate.

    Primal feasibility is recomputed through `portfolio_value` (never the LP),
    the dual measure is pushed through exact membership, and the two sides
    must agree to the rational digit.  Raises VerificationFailure naming the
    offending leaf or constraint."""
    m = result.market
    if isinstance(result.price, PriceInfinity):
        return {"kind": result.kind, "price": "+inf", "verified": True}
    if result.gap != 0:
        raise VerificationFailure(f"nonzero duality gap {rat_str(result.gap)}")
    leaves = result.details.get("pointwise_leaves") or m.support_leaves()
    port = result.portfolio
    for leaf in leaves:
        value = portfolio_value(m, port, leaf) if port is not None else ZERO
        if result.kind == "sub_eu":
            value += result.claim.at(leaf)
            ok = value >= result.price
        elif result.kind == "sub_am":
            value += liquidate_payoff(result.eta, result.claim, leaf)
            ok = value >= result.price
        elif result.kind == "super_div":
            ok = result.price + value >= result.claim.at(leaf)
        elif result.kind == "super_indiv":
            stock_gain = portfolio_value(
                m.with_options(f=[], f_prices=[], g=[], g_prices=[]), port, leaf
            )
            ok = result.price + stock_gain >= result.claim.at(leaf)
        else:
            raise VerificationFailure(f"unknown result kind {result.kind!r}")
        if not ok:
            raise VerificationFailure(
                f"primal strategy fails pointwise at leaf {leaf}"
            )
    Q = result.dual
    if Q is not None:
        if result.kind == "super_indiv":
            stripped = m.with_options(f=[], f_prices=[], g=[], g_prices=[])
            if result.details.get("whole_units", True):
                spec = PricingSetSpec(stripped, h_cap=(None,) * len(m.h))
            else:
                spec = PricingSetSpec(stripped)
            report = membership(Q, spec, strict=False)
            if not report:
                raise VerificationFailure(
                    "dual certificate violates: " + "; ".join(report.violations)
                )
            if m.h and result.details.get("whole_units", True):
                tau = result.details["stop"]
                got = Q.expect_at_stop(m.h[0], tau)
                if got > m.h_prices[0]:
                    raise VerificationFailure(
                        f"dual certificate prices the stop at {rat_str(got)} "
                        f"above the quote {rat_str(m.h_prices[0])}"
                    )
            achieved = Q.expect_claim(result.claim)
        else:
            spec = result.details.get("dual_spec") or PricingSetSpec(m)
            report = membership(Q, spec, strict=False)
            if not report:
                raise VerificationFailure(
                    "dual certificate violates: " + "; ".join(report.violations)
                )
            if result.kind == "sub_am":
                achieved = snell_value(Q, result.claim)
            else:
                achieved = Q.expect_claim(result.claim)
        if achieved != result.price:
            raise VerificationFailure(
                f"dual certificate achieves {rat_str(achieved)}, "
                f"price is {rat_str(result.price)}"
            )
    return {
        "kind": result.kind,
        "price": rat_str(result.price),
        "gap": rat_str(result.gap),
        "leaves_checked": len(tuple(leaves)),
        "dual_verified": Q is not None,
        "verified": True,
    }


# ---------------------------------------------------------------------------
# The sup/inf exchange identities for American claims
# ---------------------------------------------------------------------------

def american_exchange_values(market: MarketSpec, phi: AdaptedProcess) -> dict:
    """The pure-option value computed four ways over the closed pricing set:

      sup_flow inf_Q  E_Q[flow(phi)]      (strategy LP over vertex cuts)
      inf_Q sup_flow  E_Q[flow(phi)]      (epigraph LP, lazy envelope cuts)
      inf_Q sup_stop  E_Q[phi_at_stop]    (epigraph LP, enumerated stops)
      sup_stop inf_Q  E_Q[phi_at_stop]    (per-stop LPs, then max)

    The first three agree exactly; the fourth is only <= (the exchange in that
    order genuinely fails in general)."""
    m = market
    tree = m.tree
    leaves = m.support_leaves()
    spec = PricingSetSpec(m)
    poly = closure_polytope(spec)
    verts = polytope_vertices_as_measures(poly, tree)
    if not verts:
        raise HedgingError("empty pricing set; the exchange values are +inf")

    # sup over flows of the worst-case expectation: vertex cuts
    masses = []
    for Q in verts:
        mass = {leaf: Q.at(leaf) for leaf in tree.leaves}
        for node in reversed(tree.nodes):
            if not tree.is_leaf(node):
                mass[node] = sum((mass[c] for c in tree.children(node)), ZERO)
        masses.append(mass)
    rows = []
    for leaf in tree.leaves:
        rows.append(con({f"eta[{n}]": Fraction(1) for n in tree.path(leaf)},
                        EQ, 1, f"flow[{leaf}]"))
    for v_idx, mass in enumerate(masses):
        coeffs = {}
        for n in tree.nodes:
            val = mass[n] * phi.scalar_at(n)
            if val:
                coeffs[f"eta[{n}]"] = val
        coeffs["t"] = Fraction(-1)
        rows.append(con(coeffs, GE, 0, f"vertex[{v_idx}]"))
    variables = ["t"] + [f"eta[{n}]" for n in tree.nodes]
    sol = solve(LpProblem("max", {"t": 1}, rows, variables, free=frozenset({"t"})))
    sup_flow_inf = sol.objective

    dual_lazy, _ = dual_optimum(spec, phi, "sub_am", lazy=True)
    inf_sup_flow = dual_lazy.objective
    dual_enum, _ = dual_optimum(spec, phi, "sub_am", lazy=False)
    inf_sup_stop = dual_enum.objective

    best = None
    for tau in enumerate_stopping_times(tree):
        base = martingale_system(m, carrier=leaves)
        rows = list(base.constraints) + pricing_rows(spec, leaves,
                                                     taus=enumerate_stopping_times(tree))
        obj = _stop_row(phi, tau, leaves)
        sol = solve(LpProblem("min", obj, rows, base.variables))
        if sol.status == "optimal" and (best is None or sol.objective > best):
            best = sol.objective
    return {
        "sup_flow_inf": sup_flow_inf,
        "inf_sup_flow": inf_sup_flow,
        "inf_sup_stop": inf_sup_stop,
        "sup_stop_inf": best,
    }
