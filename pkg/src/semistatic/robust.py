"""Multi-prior (quasi-sure) markets: robust hedging, robust strict
no-arbitrage, dominating pricing measures, and the finite-scale minimax
identity.

A prior set is a finite list of measures.  "Quasi-sure" constraints hold
pointwise on the union of the prior supports; a measure is dominated by the
prior set when its support fits inside the support of a single prior, so the
robust pricing set is a union of per-prior polytopes (not convex).  Duals are
therefore minima across per-prior components.

Raw finite lists are not closed under mixing priors node by node.  When no
prior dominates the whole list, a martingale measure can straddle two prior
supports without belonging to any component, and the quasi-sure hedging LP can
then be strictly cheaper than every component dual.  Such instances raise
RobustDualityGapError rather than returning an inconsistent certificate; prior
lists in which the first prior dominates the rest (the usual
reference-plus-stress shape) never hit this."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import product
from typing import Sequence

from .hedging import (
    HedgeResult,
    INFINITE_PRICE,
    VerificationFailure,
    dual_optimum,
    duality_gap_report,
    hedge_primal,
)
from .ftap import ARBITRAGE, NO_ARBITRAGE, STRICT_NO_ARBITRAGE_FAILS, ArbitrageVerdict, check_na
from .lp import EQ, GE, LE, LpProblem, con, solve
from .market import MarketSpec
from .measures import (
    Measure,
    PricingSetSpec,
    SlackResult,
    closure_polytope,
    max_slack,
    membership,
)
from .polytope import Polytope
from .rational import rat_str
from .stopping import (
    StoppingTime,
    enumerate_stopping_times,
    snell_optimal_stop,
    snell_value,
    stop_everywhere_at,
)
from .tree import AdaptedProcess

ZERO = Fraction(0)


class RobustError(RuntimeError):
    pass


class HypothesisFailure(RobustError):
    """The standing no-arbitrage hypothesis failed; carries the verdict."""

    def __init__(self, verdict: ArbitrageVerdict):
        self.verdict = verdict
        super().__init__(f"robust strict no-arbitrage hypothesis fails: {verdict.verdict}")


class RobustDualityGapError(RobustError):
    """The quasi-sure hedge LP and the per-prior component duals disagree.

    Possible only when no single prior dominates the list: a measure mixing
    prior supports prices the claim below every component.  The prior list is
    then not closed under node-wise recombination and the component reading of
    "dominated by the prior set" genuinely differs from the hedging LP."""

    def __init__(self, primal, dual, witness=None):
        self.primal = primal
        self.dual = dual
        self.witness = witness
        super().__init__(
            f"quasi-sure hedge value {primal} < component dual {dual}; "
            "the prior list is not recombination-closed"
        )


@dataclass(frozen=True)
class PriorSet:
    priors: tuple[Measure, ...]

    def __post_init__(self):
        if not self.priors:
            raise RobustError("prior set must be nonempty")
        tree = self.priors[0].tree
        for P in self.priors:
            if P.tree is not tree:
                raise RobustError("priors must share one tree")

    def __iter__(self):
        return iter(self.priors)

    def __len__(self):
        return len(self.priors)


@dataclass(frozen=True)
class RobustSpec:
    market: MarketSpec
    priors: PriorSet

    def __post_init__(self):
        leaves = set(self.market.tree.leaves)
        for P in self.priors:
            if not P.support() <= leaves:
                raise RobustError("prior supported outside the market's leaves")

    def reduced(self, keep_american: int) -> "RobustSpec":
        return RobustSpec(self.market.without_american(keep_american), self.priors)


def union_support(priors: PriorSet) -> frozenset[str]:
    """Quasi-sure pointwise constraints range over exactly this leaf set."""
    out: frozenset[str] = frozenset()
    for P in priors:
        out |= P.support()
    return out


def _ordered(tree, leaf_set) -> tuple[str, ...]:
    return tuple(l for l in tree.leaves if l in leaf_set)


def robust_pricing_set(
    spec: RobustSpec,
    g_cap: Sequence[Fraction | None] | None = None,
    h_cap: Sequence[Fraction | None] | None = None,
) -> list[Polytope]:
    """One polytope per prior: martingale measures supported inside that
    prior's support, pricing f exactly and capped on the buy-only books.
    No equivalence constraint (martingale measures, not equivalent ones);
    empty components are allowed."""
    m = spec.market
    pset = PricingSetSpec(
        m,
        g_cap=tuple(g_cap) if g_cap is not None else (),
        h_cap=tuple(h_cap) if h_cap is not None else (),
    )
    return [
        closure_polytope(pset, carrier=_ordered(m.tree, P.support()))
        for P in spec.priors
    ]


def _component_slack(
    market: MarketSpec,
    carrier: Sequence[str],
    floor: frozenset[str],
    g_cap=None,
    h_cap=None,
) -> SlackResult:
    """Uniform slack over one component: caps shifted by t, weight >= t on the
    floor leaves (so the witness dominates the floor's prior)."""
    spec = PricingSetSpec(
        market,
        g_cap=tuple(g_cap) if g_cap is not None else (),
        h_cap=tuple(h_cap) if h_cap is not None else (),
        support_floor=floor,
    )
    return max_slack(spec, carrier=carrier)


def check_sna_robust(spec: RobustSpec) -> ArbitrageVerdict:
    """Robust strict no-arbitrage: for a common strict shift of the buy-only
    quotes, every prior must be dominated by a measure from some component.

    Decided by per-prior slack LPs (maximized over the components whose
    support contains the prior's); the verdict's slacks give the common
    shifted quotes."""
    m = spec.market
    worst: Fraction | None = None
    witnesses: list[Measure] = []
    all_dominated = True
    for P in spec.priors:
        best: SlackResult | None = None
        for Pj in spec.priors:
            if not P.support() <= Pj.support():
                continue
            res = _component_slack(m, _ordered(m.tree, Pj.support()), P.support())
            if res.status != "optimal":
                continue
            if best is None or res.optimum > best.optimum:
                best = res
        if best is None or not best.strictly_positive:
            all_dominated = False
            break
        witnesses.append(best.witness)
        worst = best.optimum if worst is None else min(worst, best.optimum)
    if all_dominated:
        t = worst
        return ArbitrageVerdict(
            verdict=NO_ARBITRAGE,
            pricing=witnesses[0],
            g_slacks=tuple(t for _ in m.g),
            h_slacks=tuple(t for _ in m.h),
            notes=f"robust strict no-arbitrage holds with uniform slack {rat_str(t)}; "
                  f"{len(witnesses)} dominating witnesses",
        )
    union = _ordered(m.tree, union_support(spec.priors))
    plain = check_na(m, support=union)
    if plain.verdict == ARBITRAGE:
        return plain
    if m.g or m.h:
        eps = Fraction(1, 2)
        shifted = check_na(
            m,
            g_prices=[p - eps for p in m.g_prices],
            h_prices=[p - eps for p in m.h_prices],
            support=union,
        )
        if shifted.verdict == ARBITRAGE:
            return ArbitrageVerdict(
                verdict=STRICT_NO_ARBITRAGE_FAILS,
                portfolio=shifted.portfolio,
                shifted_g=shifted.shifted_g, shifted_h=shifted.shifted_h,
                notes="no dominating measures under any uniform strict shift",
            )
    return ArbitrageVerdict(
        verdict=STRICT_NO_ARBITRAGE_FAILS,
        notes="no dominating measures under any uniform strict shift",
    )


def _check_hypothesis(spec: RobustSpec) -> None:
    verdict = check_sna_robust(spec.reduced(0))
    if verdict.verdict != NO_ARBITRAGE:
        raise HypothesisFailure(verdict)


def sub_hedge_robust(spec: RobustSpec, claim) -> HedgeResult:
    """Robust sub-hedging: pointwise on the union support, priced by the
    cheapest per-prior component.  Requires robust strict no-arbitrage of the
    stock-plus-European part; returns the attaining component measure."""
    _check_hypothesis(spec)
    m = spec.market
    american = isinstance(claim, AdaptedProcess)
    kind = "sub_am" if american else "sub_eu"
    union = _ordered(m.tree, union_support(spec.priors))
    primal, space = hedge_primal(m, claim, kind, pointwise_leaves=union)

    pset = PricingSetSpec(m)
    best = None
    for P in spec.priors:
        carrier = _ordered(m.tree, P.support())
        sol, Q = dual_optimum(pset, claim, kind, carrier=carrier)
        if sol.status != "optimal":
            continue  # empty component
        if best is None or sol.objective < best[0]:
            best = (sol.objective, Q)
    if best is None:
        if primal.status == "optimal":
            raise RobustDualityGapError(primal.objective, INFINITE_PRICE)
        return HedgeResult(
            kind=kind, market=m, claim=claim, price=INFINITE_PRICE,
            details={"pricing_set_empty": True, "pointwise_leaves": union},
        )
    if primal.status != "optimal":
        raise RobustError(f"quasi-sure hedge LP is {primal.status}")
    dual_value, Q = best
    if primal.objective != dual_value:
        raise RobustDualityGapError(primal.objective, dual_value)
    result = HedgeResult(
        kind=kind, market=m, claim=claim, price=dual_value,
        portfolio=space.extract_portfolio(primal.values),
        eta=space.extract_eta(primal.values) if american else None,
        dual=Q, gap=primal.objective - dual_value,
        details={"pointwise_leaves": union, "dual_spec": pset,
                 "components": len(spec.priors)},
    )
    duality_gap_report(result)
    return result


@dataclass
class DominationResult:
    g_tilde: tuple[Fraction, ...]
    h_tilde: tuple[Fraction, ...]
    Q: Measure
    lam: Fraction | None = None

    def caps(self):
        return self.g_tilde, self.h_tilde


def dominating_measure(spec: RobustSpec, P: Measure) -> DominationResult:
    """A pricing measure dominating the prior P with strictly improved caps.

    Constructive induction on the number of American options: the base case is
    the per-component slack LP; the step sub-hedges the last option in the
    reduced market, takes the attaining measure, and mixes it with the
    recursively obtained dominating measure, the mixture weight chosen so the
    last option's exercise value stays strictly under its quote.  Every
    claimed property of the output is re-verified exactly."""
    m = spec.market
    n = len(m.h)
    if n == 0:
        best: SlackResult | None = None
        for Pj in spec.priors:
            if not P.support() <= Pj.support():
                continue
            res = _component_slack(m, _ordered(m.tree, Pj.support()), P.support())
            if res.status != "optimal":
                continue
            if best is None or res.optimum > best.optimum:
                best = res
        if best is None or not best.strictly_positive:
            raise RobustError(
                "no dominating pricing measure: robust strict no-arbitrage fails"
            )
        t = best.optimum
        result = DominationResult(
            g_tilde=tuple(p - t for p in m.g_prices), h_tilde=(), Q=best.witness,
        )
        _verify_domination(spec, P, result)
        return result

    reduced = spec.reduced(n - 1)
    h_last, quote = m.h[n - 1], m.h_prices[n - 1]
    sub = sub_hedge_robust(reduced, h_last)
    if isinstance(sub.price, type(INFINITE_PRICE)):
        raise RobustError("reduced pricing set is empty; cannot dominate")
    v = sub.price
    if v >= quote:
        raise RobustError(
            f"sub-hedge value {rat_str(v)} of the last American option is not "
            f"below its quote {rat_str(quote)}: robust strict no-arbitrage fails"
        )
    Q_hat = sub.dual
    mid = (v + quote) / 2
    bound = max(abs(h_last.scalar_at(node)) for node in m.tree.nodes) + 1
    bound = max(bound, mid + 1)
    prev = dominating_measure(reduced, P)
    lam = min(Fraction(1, 2), (quote - mid) / (2 * (bound - mid)))
    Q = prev.Q.mixture(Q_hat, lam)
    g_tilde = tuple(lam * gs + (1 - lam) * gp
                    for gs, gp in zip(prev.g_tilde, m.g_prices))
    h_tilde = tuple(lam * hs + (1 - lam) * hp
                    for hs, hp in zip(prev.h_tilde, m.h_prices[: n - 1]))
    h_tilde += (lam * bound + (1 - lam) * mid,)
    result = DominationResult(g_tilde=g_tilde, h_tilde=h_tilde, Q=Q, lam=lam)
    _verify_domination(spec, P, result)
    return result


def _verify_domination(spec: RobustSpec, P: Measure, result: DominationResult) -> None:
    m = spec.market
    Q = result.Q
    if not P.support() <= Q.support():
        raise VerificationFailure("dominating measure misses part of the prior's support")
    if not any(Q.support() <= Pj.support() for Pj in spec.priors):
        raise VerificationFailure(
            "dominating measure is not dominated by any prior (recombination gap)"
        )
    for g_t, g_p in zip(result.g_tilde, m.g_prices):
        if not g_t < g_p:
            raise VerificationFailure("European caps are not strictly improved")
    for h_t, h_p in zip(result.h_tilde, m.h_prices):
        if not h_t < h_p:
            raise VerificationFailure("American caps are not strictly improved")
    pset = PricingSetSpec(m, g_cap=result.g_tilde, h_cap=result.h_tilde)
    report = membership(Q, pset, strict=False)
    if not report:
        raise VerificationFailure(
            "dominating measure violates: " + "; ".join(report.violations)
        )


# ---------------------------------------------------------------------------
# Finite-scale minimax identity
# ---------------------------------------------------------------------------

@dataclass
class MinimaxResult:
    lhs: Fraction  # sup over flows of the worst-case expectation
    mid: Fraction  # worst case of the flow-optimized value
    rhs: Fraction  # worst case of the stop-optimized value
    attaining: Measure

    def values(self):
        return self.lhs, self.mid, self.rhs


TUPLE_ENUM_CAP = 50_000


def minimax_check(
    R_vertices: Sequence[Measure],
    h_list: Sequence[AdaptedProcess],
    tuple_cap: int = TUPLE_ENUM_CAP,
) -> MinimaxResult:
    """Compute, by three different LPs over the convex hull of the given
    vertices, the value of liquidating the options against the worst measure:

      lhs: max t s.t. every vertex gives the flow at least t (flows free),
      mid: min over hull mixtures of the summed exercise envelopes,
           with envelope cuts generated lazily,
      rhs: the same worst case via enumerated stop combinations.

    Raises if the three are not exactly equal; returns the attaining measure
    of the rhs problem."""
    if not R_vertices:
        raise RobustError("empty vertex list")
    tree = R_vertices[0].tree
    for R in R_vertices:
        if R.tree is not tree:
            raise RobustError("vertices must share one tree")
    for h in h_list:
        if h.tree is not tree:
            raise RobustError("options must live on the vertex tree")
    N = len(h_list)
    if N == 0:
        raise RobustError("empty option list")

    masses = []
    for R in R_vertices:
        mass = {leaf: R.at(leaf) for leaf in tree.leaves}
        for node in reversed(tree.nodes):
            if not tree.is_leaf(node):
                mass[node] = sum((mass[c] for c in tree.children(node)), ZERO)
        masses.append(mass)

    # lhs: flows against vertex cuts
    rows = []
    variables = ["t"]
    for k in range(N):
        for nd in tree.nodes:
            variables.append(f"mu[{k}][{nd}]")
        for leaf in tree.leaves:
            rows.append(con({f"mu[{k}][{nd}]": Fraction(1) for nd in tree.path(leaf)},
                            EQ, 1, f"flow[{k}][{leaf}]"))
    for v_idx, mass in enumerate(masses):
        coeffs = {}
        for k, h in enumerate(h_list):
            for nd in tree.nodes:
                val = mass[nd] * h.scalar_at(nd)
                if val:
                    coeffs[f"mu[{k}][{nd}]"] = coeffs.get(f"mu[{k}][{nd}]", ZERO) + val
        coeffs["t"] = Fraction(-1)
        rows.append(con(coeffs, GE, 0, f"vertex[{v_idx}]"))
    sol = solve(LpProblem("max", {"t": 1}, rows, variables, free=frozenset({"t"})))
    if sol.status != "optimal":
        raise RobustError(f"flow-side LP is {sol.status}")
    lhs = sol.objective

    # helper: E_{R_v}[h at tau] per vertex
    def stop_value(R: Measure, h: AdaptedProcess, tau: StoppingTime) -> Fraction:
        return R.expect_at_stop(h, tau)

    lam_vars = [f"lam[{i}]" for i in range(len(R_vertices))]
    simplex_row = con({v: 1 for v in lam_vars}, EQ, 1, "hull")

    # mid: epigraph with lazy envelope cuts per option
    cuts: list[list[StoppingTime]] = [[stop_everywhere_at(tree, 0)] for _ in range(N)]
    seen = [set() for _ in range(N)]
    while True:
        rows = [simplex_row]
        variables = lam_vars + [f"z[{k}]" for k in range(N)]
        for k in range(N):
            for c_idx, tau in enumerate(cuts[k]):
                coeffs = {lam_vars[i]: stop_value(R, h_list[k], tau)
                          for i, R in enumerate(R_vertices)}
                coeffs = {key: val for key, val in coeffs.items() if val}
                coeffs[f"z[{k}]"] = Fraction(-1)
                rows.append(con(coeffs, LE, 0, f"cut[{k}][{c_idx}]"))
        sol = solve(LpProblem(
            "min", {f"z[{k}]": 1 for k in range(N)}, rows, variables,
            free=frozenset(f"z[{k}]" for k in range(N)),
        ))
        if sol.status != "optimal":
            raise RobustError(f"mixture LP is {sol.status}")
        lam = [sol.values.get(v, ZERO) for v in lam_vars]
        mixture_w = {}
        for weight, R in zip(lam, R_vertices):
            for leaf, wl in R.weights.items():
                mixture_w[leaf] = mixture_w.get(leaf, ZERO) + weight * wl
        R_mix = Measure(tree, mixture_w)
        progressed = False
        for k, h in enumerate(h_list):
            if snell_value(R_mix, h) > sol.values.get(f"z[{k}]", ZERO):
                tau = snell_optimal_stop(R_mix, h)
                if tau.stop_nodes not in seen[k]:
                    seen[k].add(tau.stop_nodes)
                    cuts[k].append(tau)
                    progressed = True
        if not progressed:
            mid = sol.objective
            break

    # rhs: enumerated stop combinations (decoupled per option above the cap)
    taus = enumerate_stopping_times(tree)
    rows = [simplex_row]
    if len(taus) ** N <= tuple_cap:
        variables = lam_vars + ["w"]
        for t_idx, combo in enumerate(product(taus, repeat=N)):
            coeffs = {}
            for i, R in enumerate(R_vertices):
                val = sum((stop_value(R, h_list[k], combo[k]) for k in range(N)), ZERO)
                if val:
                    coeffs[lam_vars[i]] = val
            coeffs["w"] = Fraction(-1)
            rows.append(con(coeffs, LE, 0, f"combo[{t_idx}]"))
        sol = solve(LpProblem("min", {"w": 1}, rows, variables, free=frozenset({"w"})))
    else:
        variables = lam_vars + [f"w[{k}]" for k in range(N)]
        for k in range(N):
            for t_idx, tau in enumerate(taus):
                coeffs = {lam_vars[i]: stop_value(R, h_list[k], tau)
                          for i, R in enumerate(R_vertices)}
                coeffs = {key: val for key, val in coeffs.items() if val}
                coeffs[f"w[{k}]"] = Fraction(-1)
                rows.append(con(coeffs, LE, 0, f"stop[{k}][{t_idx}]"))
        sol = solve(LpProblem(
            "min", {f"w[{k}]": 1 for k in range(N)}, rows, variables,
            free=frozenset(f"w[{k}]" for k in range(N)),
        ))
    if sol.status != "optimal":
        raise RobustError(f"stop-side LP is {sol.status}")
    rhs = sol.objective
    lam = [sol.values.get(v, ZERO) for v in lam_vars]
    mixture_w = {}
    for weight, R in zip(lam, R_vertices):
        for leaf, wl in R.weights.items():
            mixture_w[leaf] = mixture_w.get(leaf, ZERO) + weight * wl
    attaining = Measure(tree, mixture_w)

    if not (lhs == mid == rhs):
        raise VerificationFailure(
            f"minimax identity broken: {rat_str(lhs)}, {rat_str(mid)}, {rat_str(rhs)}"
        )
    check = sum((snell_value(attaining, h) for h in h_list), ZERO)
    if check != rhs:
        raise VerificationFailure(
            f"attaining measure gives {rat_str(check)}, expected {rat_str(rhs)}"
        )
    return MinimaxResult(lhs=lhs, mid=mid, rhs=rhs, attaining=attaining)
