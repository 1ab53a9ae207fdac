"""Pricing measures and the polytopes they form.

The strict pricing set (equivalent martingale measures pricing f exactly and
the buy-only books strictly below their quotes) is an open set, which no LP
can represent directly.  It is handled through two computable objects:

  * its closure, an H-polytope over leaf weights, and
  * a slack-maximization LP whose optimum is positive exactly when the strict
    set is nonempty (with the witness measure as certificate).

American caps quantify over all stopping times.  They are materialized either
by explicit enumeration or lazily, using the greedy optimal stop of the
exercise envelope as a separation oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .lp import EQ, GE, LE, Constraint, LpProblem, LpSolution, con, solve
from .market import MarketSpec
from .polytope import Polytope, vertices
from .rational import rat, rat_str
from .stopping import (
    StoppingTime,
    enumerate_stopping_times,
    snell_optimal_stop,
    snell_value,
)
from .tree import AdaptedProcess, EventTree, TerminalClaim

ZERO = Fraction(0)

# Explicit stopping-time enumeration is used while the stopping-time count
# stays this small; beyond it, "for all stops" constraint families are
# generated lazily from the exercise envelope (same answers, tiny LPs).
ENUM_STOP_LIMIT = 32

# process-wide overrides, set by the CLI flags --enum-cap / --oracle-cuts
_FORCE_LAZY = False
_ENUM_STOP_LIMIT_OVERRIDE: int | None = None


def configure_cuts(force_lazy: bool = False, enum_limit: int | None = None) -> None:
    """Override the enumeration/lazy-cut switch (CLI plumbing); called once
    per command, resetting to defaults when flags are absent."""
    global _FORCE_LAZY, _ENUM_STOP_LIMIT_OVERRIDE
    _FORCE_LAZY = force_lazy
    _ENUM_STOP_LIMIT_OVERRIDE = enum_limit


class MeasureError(ValueError):
    pass


class Measure:
    """Leaf-indexed nonnegative rational weights summing to one."""

    def __init__(self, tree: EventTree, weights: Mapping[str, object]):
        self.tree = tree
        w: dict[str, Fraction] = {}
        total = ZERO
        for leaf, val in weights.items():
            if leaf not in tree.leaves:
                raise MeasureError(f"weight on non-leaf node {leaf!r}")
            x = rat(val)
            if x < 0:
                raise MeasureError(f"negative weight at {leaf!r}")
            if x:
                w[leaf] = x
            total += x
        if total != 1:
            raise MeasureError(f"weights sum to {total}, not 1")
        self.weights = w

    def support(self) -> frozenset[str]:
        return frozenset(self.weights)

    def at(self, leaf: str) -> Fraction:
        return self.weights.get(leaf, ZERO)

    def expect_claim(self, claim: TerminalClaim) -> Fraction:
        return sum((w * claim.at(l) for l, w in self.weights.items()), ZERO)

    def expect_at_stop(self, h: AdaptedProcess, tau: StoppingTime) -> Fraction:
        return sum((w * tau.value_at(h, l) for l, w in self.weights.items()), ZERO)

    def mixture(self, other: "Measure", lam) -> "Measure":
        lam = rat(lam)
        w = {l: lam * self.at(l) + (1 - lam) * other.at(l)
             for l in set(self.weights) | set(other.weights)}
        return Measure(self.tree, w)

    def __eq__(self, other) -> bool:
        return isinstance(other, Measure) and self.weights == other.weights

    def __hash__(self):
        return hash(frozenset(self.weights.items()))

    def __repr__(self) -> str:
        inner = ", ".join(f"{l}: {rat_str(w)}" for l, w in sorted(self.weights.items()))
        return f"Measure({{{inner}}})"


@dataclass(frozen=True)
class PricingSetSpec:
    """Constraint recipe for a pricing set over a market's leaf weights.

    g_cap / h_cap default to the market's quotes; entries of None mean
    "no cap" (a +infinity sentinel).  `support_floor` lists leaves whose
    weight must be strictly positive in the strict reading (the equivalence
    part of an EMM); the closure drops strictness.
    """

    market: MarketSpec
    g_cap: tuple[Fraction | None, ...] = ()
    h_cap: tuple[Fraction | None, ...] = ()
    support_floor: frozenset[str] = frozenset()
    strict_options: bool = True

    def __post_init__(self):
        m = self.market
        if not self.g_cap:
            object.__setattr__(self, "g_cap", tuple(m.g_prices))
        if not self.h_cap:
            object.__setattr__(self, "h_cap", tuple(m.h_prices))
        if len(self.g_cap) != len(m.g) or len(self.h_cap) != len(m.h):
            raise MeasureError("cap lengths do not match the option books")

    @classmethod
    def strict_emm(cls, market: MarketSpec) -> "PricingSetSpec":
        """The strict pricing set with equivalence to the reference support."""
        return cls(market, support_floor=frozenset(market.support))


def _weight_var(leaf: str) -> str:
    return f"w[{leaf}]"


def martingale_system(market: MarketSpec, carrier: Iterable[str] | None = None) -> LpProblem:
    """Martingale + total-mass equalities over leaf weights, as an LP fragment
    (zero objective, ready to be extended).

    `carrier` restricts the weights to a subset of leaves (weights outside it
    are fixed to zero by omission); defaults to the market's support.
    """
    tree = market.tree
    leaves = tuple(carrier) if carrier is not None else market.support_leaves()
    leaf_set = set(leaves)
    variables = [_weight_var(l) for l in leaves]
    rows: list[Constraint] = [
        con({_weight_var(l): 1 for l in leaves}, EQ, 1, "mass")
    ]
    for node in tree.nonleaf_nodes():
        for l_idx in range(market.dim):
            coeffs: dict[str, Fraction] = {}
            for child in tree.children(node):
                step = market.S.at(child)[l_idx] - market.S.at(node)[l_idx]
                if step == 0:
                    continue
                for leaf in tree.leaves_under(child):
                    if leaf in leaf_set:
                        coeffs[_weight_var(leaf)] = coeffs.get(_weight_var(leaf), ZERO) + step
            if coeffs:
                rows.append(con(coeffs, EQ, 0, f"mart[{node}][{l_idx}]"))
    return LpProblem("max", {}, rows, variables)


def _claim_row(claim: TerminalClaim, leaves: Sequence[str]) -> dict[str, Fraction]:
    return {_weight_var(l): claim.at(l) for l in leaves if claim.at(l)}


def _stop_row(h: AdaptedProcess, tau: StoppingTime, leaves: Sequence[str]) -> dict[str, Fraction]:
    out = {}
    for l in leaves:
        v = tau.value_at(h, l)
        if v:
            out[_weight_var(l)] = v
    return out


def _use_enumeration(tree: EventTree) -> bool:
    from .stopping import count_stopping_times

    if _FORCE_LAZY:
        return False
    limit = _ENUM_STOP_LIMIT_OVERRIDE or ENUM_STOP_LIMIT
    return count_stopping_times(tree) <= limit


def _measure_of(spec_leaves: Sequence[str], sol_values: Mapping[str, Fraction],
                tree: EventTree) -> Measure:
    w = {l: sol_values.get(_weight_var(l), ZERO) for l in spec_leaves}
    return Measure(tree, {l: v for l, v in w.items() if v})


def pricing_rows(
    spec: PricingSetSpec,
    leaves: Sequence[str],
    taus: Sequence[StoppingTime] | None,
    slack_var: str | None = None,
) -> list[Constraint]:
    """f-pricing equalities plus capped g rows and per-stopping-time h rows.

    With `slack_var` set, buy-only caps become `E[.] + t <= cap`, the slack
    maximization form.  `taus=None` emits no American rows (lazy mode)."""
    m = spec.market
    rows: list[Constraint] = []
    for i, (claim, price) in enumerate(zip(m.f, m.f_prices)):
        rows.append(con(_claim_row(claim, leaves), EQ, price, f"f[{i}]"))
    for j, (claim, cap) in enumerate(zip(m.g, spec.g_cap)):
        if cap is None:
            continue
        coeffs = _claim_row(claim, leaves)
        if slack_var is not None:
            coeffs = dict(coeffs)
            coeffs[slack_var] = Fraction(1)
        rows.append(con(coeffs, LE, cap, f"g[{j}]"))
    if taus is not None:
        for k, (h, cap) in enumerate(zip(m.h, spec.h_cap)):
            if cap is None:
                continue
            for t_idx, tau in enumerate(taus):
                coeffs = _stop_row(h, tau, leaves)
                if slack_var is not None:
                    coeffs = dict(coeffs)
                    coeffs[slack_var] = Fraction(1)
                rows.append(con(coeffs, LE, cap, f"h[{k}]tau[{t_idx}]"))
    return rows


def _lazy_option_indices(spec: PricingSetSpec) -> list[int]:
    return [k for k, cap in enumerate(spec.h_cap) if cap is not None]


def solve_with_stop_cuts(
    problem_builder, spec: PricingSetSpec, leaves: Sequence[str],
    slack_of_solution=None,
) -> tuple[LpSolution, list[tuple[int, StoppingTime]]]:
    """Solve an LP whose American cap rows are generated lazily.

    `problem_builder(cuts)` must return the LpProblem with the given list of
    (option index, stopping time) cut rows included.  After each solve the
    greedy envelope stop under the solution measure is checked for violation;
    the loop is exact and terminates because the stopping-time set is finite.
    """
    m = spec.market
    cuts: list[tuple[int, StoppingTime]] = []
    seen: set[tuple[int, frozenset]] = set()
    while True:
        problem = problem_builder(cuts)
        sol = solve(problem)
        if sol.status != "optimal":
            return sol, cuts
        w = {l: sol.values.get(_weight_var(l), ZERO) for l in leaves}
        total = sum(w.values(), ZERO)
        if total <= 0:
            return sol, cuts
        Q = Measure(m.tree, {l: v / total for l, v in w.items() if v})
        slack = slack_of_solution(sol) if slack_of_solution else ZERO
        violated = False
        for k in _lazy_option_indices(spec):
            cap = spec.h_cap[k]
            value = total * snell_value(Q, m.h[k])
            if value > cap - slack:
                tau = snell_optimal_stop(Q, m.h[k])
                key = (k, tau.stop_nodes)
                if key in seen:
                    raise MeasureError("lazy cut loop failed to progress")
                seen.add(key)
                cuts.append((k, tau))
                violated = True
        if not violated:
            return sol, cuts


def closure_polytope(spec: PricingSetSpec, enum_cap: int | None = None,
                     lazy: bool | None = None,
                     carrier: Sequence[str] | None = None) -> Polytope:
    """H-representation of the closure of the pricing set.

    American caps are expanded via full enumeration, or (lazy mode) cut rows
    are added only as vertex violations demand; both yield the same polytope.
    `carrier` restricts the weights to a leaf subset (defaults to the market
    support)."""
    m = spec.market
    leaves = tuple(carrier) if carrier is not None else m.support_leaves()
    base = martingale_system(m, carrier=leaves)
    rows = list(base.constraints)
    rows += [con({_weight_var(l): 1}, GE, 0, f"nonneg[{l}]") for l in leaves]
    rows += pricing_rows(spec, leaves, taus=None)
    use_lazy = (not _use_enumeration(m.tree)) if lazy is None else lazy
    if not use_lazy:
        taus = enumerate_stopping_times(m.tree, cap=enum_cap or 10**6)
        for k, (h, cap) in enumerate(zip(m.h, spec.h_cap)):
            if cap is None:
                continue
            for t_idx, tau in enumerate(taus):
                rows.append(con(_stop_row(h, tau, leaves), LE, cap, f"h[{k}]tau[{t_idx}]"))
        return Polytope(base.variables, rows)
    # lazy: refine against vertex violations until the envelope is satisfied
    cut_rows: list[Constraint] = []
    seen: set[tuple[int, frozenset]] = set()
    while True:
        poly = Polytope(base.variables, rows + cut_rows)
        violated = False
        for vert in vertices(poly):
            w = {l: vert.get(_weight_var(l), ZERO) for l in leaves}
            Q = Measure(m.tree, {l: v for l, v in w.items() if v})
            for k in _lazy_option_indices(spec):
                if snell_value(Q, m.h[k]) > spec.h_cap[k]:
                    tau = snell_optimal_stop(Q, m.h[k])
                    key = (k, tau.stop_nodes)
                    if key not in seen:
                        seen.add(key)
                        cut_rows.append(
                            con(_stop_row(m.h[k], tau, leaves), LE, spec.h_cap[k],
                                f"h[{k}]cut[{len(cut_rows)}]")
                        )
                        violated = True
        if not violated:
            return Polytope(base.variables, rows + cut_rows)


@dataclass
class SlackResult:
    """Outcome of the strictness LP: optimum > 0 iff the strict set is
    nonempty.  `option_slack` and `floor_slack` are re-measured from the
    witness (so min(option_slack, floor_slack, 1) == optimum)."""

    status: str
    optimum: Fraction | None = None
    option_slack: Fraction | None = None  # +inf encoded as None
    floor_slack: Fraction | None = None
    witness: Measure | None = None

    @property
    def strictly_positive(self) -> bool:
        return self.status == "optimal" and self.optimum > 0


SLACK_VAR = "t[slack]"


def max_slack(spec: PricingSetSpec, enum_cap: int | None = None,
              lazy: bool | None = None,
              carrier: Sequence[str] | None = None) -> SlackResult:
    """Maximize a uniform slack t with E g <= cap - t, stop values <= cap - t,
    and weight >= t on the support floor.  The slack is capped at 1 so the LP
    stays bounded when no constraint involves t."""
    m = spec.market
    leaves = tuple(carrier) if carrier is not None else m.support_leaves()
    floor = [l for l in leaves if l in spec.support_floor]
    base = martingale_system(m, carrier=leaves)
    use_lazy = (not _use_enumeration(m.tree)) if lazy is None else lazy

    def build(cuts: list[tuple[int, StoppingTime]]) -> LpProblem:
        rows = list(base.constraints)
        rows += pricing_rows(
            spec, leaves,
            taus=None if use_lazy else enumerate_stopping_times(m.tree, cap=enum_cap or 10**6),
            slack_var=SLACK_VAR,
        )
        for k, tau in cuts:
            coeffs = dict(_stop_row(m.h[k], tau, leaves))
            coeffs[SLACK_VAR] = Fraction(1)
            rows.append(con(coeffs, LE, spec.h_cap[k], f"h[{k}]cut"))
        for l in floor:
            rows.append(con({_weight_var(l): 1, SLACK_VAR: -1}, GE, 0, f"floor[{l}]"))
        rows.append(con({SLACK_VAR: 1}, LE, 1, "slack_cap"))
        variables = base.variables + [SLACK_VAR]
        return LpProblem("max", {SLACK_VAR: 1}, rows, variables, free=frozenset({SLACK_VAR}))

    if use_lazy:
        sol, _ = solve_with_stop_cuts(
            build, spec, leaves, slack_of_solution=lambda s: s.values.get(SLACK_VAR, ZERO)
        )
    else:
        sol = solve(build([]))
    if sol.status != "optimal":
        return SlackResult(status="infeasible")
    witness = _measure_of(leaves, sol.values, m.tree)
    option_slack: Fraction | None = None
    for j, (claim, cap) in enumerate(zip(m.g, spec.g_cap)):
        if cap is None:
            continue
        s = cap - witness.expect_claim(claim)
        option_slack = s if option_slack is None else min(option_slack, s)
    for k, (h, cap) in enumerate(zip(m.h, spec.h_cap)):
        if cap is None:
            continue
        s = cap - snell_value(witness, h)
        option_slack = s if option_slack is None else min(option_slack, s)
    floor_slack: Fraction | None = None
    for l in floor:
        s = witness.at(l)
        floor_slack = s if floor_slack is None else min(floor_slack, s)
    return SlackResult(
        status="optimal", optimum=sol.objective,
        option_slack=option_slack, floor_slack=floor_slack, witness=witness,
    )


@dataclass
class MembershipReport:
    ok: bool
    violations: list[str]

    def __bool__(self) -> bool:
        return self.ok


def membership(Q: Measure, spec: PricingSetSpec, strict: bool | None = None) -> MembershipReport:
    """Exact membership of a measure in the pricing set, naming violations.

    American caps are checked through the exercise envelope (all stopping
    times at once).  `strict` toggles strict option caps and a strictly
    positive floor; None defers to the pricing set's own flag."""
    m = spec.market
    strict = spec.strict_options if strict is None else strict
    bad: list[str] = []
    off_support = Q.support() - frozenset(m.support_leaves())
    if off_support:
        bad.append(f"support outside the market support: {sorted(off_support)}")
    tree = m.tree
    for node in tree.nonleaf_nodes():
        for l_idx in range(m.dim):
            drift = ZERO
            for child in tree.children(node):
                step = m.S.at(child)[l_idx] - m.S.at(node)[l_idx]
                if step:
                    drift += step * sum(
                        (Q.at(leaf) for leaf in tree.leaves_under(child)), ZERO
                    )
            if drift != 0:
                bad.append(f"martingale drift {rat_str(drift)} at node {node} "
                           f"component {l_idx}")
    for i, (claim, price) in enumerate(zip(m.f, m.f_prices)):
        got = Q.expect_claim(claim)
        if got != price:
            bad.append(f"f[{i}] prices at {rat_str(got)} != {rat_str(price)}")
    for j, (claim, cap) in enumerate(zip(m.g, spec.g_cap)):
        if cap is None:
            continue
        got = Q.expect_claim(claim)
        if got > cap or (strict and got == cap):
            rel = "<" if strict else "<="
            bad.append(f"g[{j}] expectation {rat_str(got)} !{rel} {rat_str(cap)}")
    for k, (h, cap) in enumerate(zip(m.h, spec.h_cap)):
        if cap is None:
            continue
        got = snell_value(Q, h)
        if got > cap or (strict and got == cap):
            rel = "<" if strict else "<="
            bad.append(f"h[{k}] exercise envelope {rat_str(got)} !{rel} {rat_str(cap)}")
    for l in sorted(spec.support_floor):
        w = Q.at(l)
        if strict and w <= 0:
            bad.append(f"floor leaf {l} has zero weight")
        elif w < 0:
            bad.append(f"negative weight at {l}")
    return MembershipReport(ok=not bad, violations=bad)


def polytope_vertices_as_measures(poly: Polytope, tree: EventTree) -> list[Measure]:
    out = []
    for vert in vertices(poly):
        w = {}
        for name, val in vert.items():
            if name.startswith("w[") and val:
                w[name[2:-1]] = val
        out.append(Measure(tree, w))
    return out
