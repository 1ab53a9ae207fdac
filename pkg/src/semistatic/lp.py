"""Exact rational linear programming with verified certificates.

Two-phase primal simplex on a dense Fraction tableau.  Bland's smallest-index
rule is used for both the entering and leaving choices, so the solver
terminates on degenerate problems (the hedging LPs have many ties).  Every
result carries a certificate and is re-verified before it is returned:

  optimal    -> duals with exact complementary slackness and
                primal objective == dual objective (rational equality),
  infeasible -> a Farkas multiplier vector, checked by multiplication,
  unbounded  -> a feasible point plus an improving ray, checked directly.

Variables are nonnegative unless listed in `free`; anything else (upper
bounds, lower bounds) is written as an explicit constraint row.  Solves share
no state and can run concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import gcd
from typing import Mapping, Sequence

from .rational import rat, rat_str

LE, EQ, GE = "<=", "=", ">="
_RELS = (LE, EQ, GE)

ZERO = Fraction(0)
ONE = Fraction(1)


class LpError(ValueError):
    pass


class LpVerificationError(RuntimeError):
    """A solver certificate failed its independent re-check."""


@dataclass(frozen=True)
class Constraint:
    coeffs: Mapping[str, Fraction]
    rel: str
    rhs: Fraction
    name: str = ""

    def __post_init__(self):
        if self.rel not in _RELS:
            raise LpError(f"bad relation {self.rel!r}")


def con(coeffs: Mapping[str, object], rel: str, rhs, name: str = "") -> Constraint:
    return Constraint({k: rat(v) for k, v in coeffs.items()}, rel, rat(rhs), name)


@dataclass
class LpProblem:
    sense: str
    objective: Mapping[str, Fraction]
    constraints: list[Constraint]
    variables: list[str]
    free: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.sense not in ("max", "min"):
            raise LpError(f"bad sense {self.sense!r}")
        self.objective = {k: rat(v) for k, v in self.objective.items()}
        order = set(self.variables)
        if len(order) != len(self.variables):
            raise LpError("duplicate variable names")
        for name in self.objective:
            if name not in order:
                raise LpError(f"objective references unknown variable {name!r}")
        for row in self.constraints:
            for name in row.coeffs:
                if name not in order:
                    raise LpError(f"constraint {row.name!r} references unknown "
                                  f"variable {name!r}")
        unknown_free = self.free - order
        if unknown_free:
            raise LpError(f"free-variable names not declared: {sorted(unknown_free)}")


@dataclass
class LpSolution:
    status: str
    objective: Fraction | None = None
    values: dict[str, Fraction] = field(default_factory=dict)
    duals: list[Fraction] = field(default_factory=list)
    reduced_costs: dict[str, Fraction] = field(default_factory=dict)
    dual_objective: Fraction | None = None
    farkas: list[Fraction] | None = None
    ray: dict[str, Fraction] | None = None
    feasible_point: dict[str, Fraction] | None = None

    def value(self, name: str) -> Fraction:
        return self.values.get(name, ZERO)


def eval_row(coeffs: Mapping[str, Fraction], values: Mapping[str, Fraction]) -> Fraction:
    return sum((c * values.get(v, ZERO) for v, c in coeffs.items()), ZERO)


# ---------------------------------------------------------------------------
# Simplex core
# ---------------------------------------------------------------------------

class _Tableau:
    """Equality-form tableau max c.x, Ax = b, x >= 0, with b >= 0.

    Stored fraction-free: every entry is an integer and the true tableau is
    entry / d for a single shared positive integer d (integer pivoting).  The
    pivot update (piv * entry - col * pivot_row) / d_prev divides exactly, so
    entries stay minors of the integer input and never grow out of hand, and
    all inner-loop arithmetic is plain int."""

    def __init__(self, ncols: int):
        self.ncols = ncols
        self.rows: list[list[int]] = []
        self.b: list[int] = []
        self.basis: list[int] = []
        self.obj: list[int] = []  # d * (c_j - z_j), in integerized cost units
        self.costs: list[int] = []
        self.d: int = 1
        self.banned: set[int] = set()
        self.use_bland = False
        self._stall = 0

    def pivot(self, i: int, j: int) -> None:
        prow = self.rows[i]
        piv = prow[j]
        if piv < 0:  # only reachable on degenerate drive-out pivots (b_i = 0)
            self.rows[i] = prow = [-v for v in prow]
            self.b[i] = -self.b[i]
            piv = -piv
        d = self.d
        cols = range(self.ncols)
        bi = self.b[i]
        for k, row in enumerate(self.rows):
            if k == i:
                continue
            f = row[j]
            if f:
                self.rows[k] = [(piv * row[l] - f * prow[l]) // d for l in cols]
                self.b[k] = (piv * self.b[k] - f * bi) // d
            elif piv != d:
                self.rows[k] = [(piv * row[l]) // d for l in cols]
                self.b[k] = (piv * self.b[k]) // d
        obj = self.obj
        f = obj[j]
        if f:
            self.obj = [(piv * obj[l] - f * prow[l]) // d for l in cols]
        elif piv != d:
            self.obj = [(piv * obj[l]) // d for l in cols]
        self.d = piv
        self.basis[i] = j

    def bland_step(self) -> str:
        """One pivot.  Pricing is largest-coefficient until a degenerate
        stall, then the smallest-index rule takes over permanently for this
        solve; termination is guaranteed because only degenerate pivots can
        cycle and those trip the switch."""
        obj = self.obj
        banned = self.banned
        enter = -1
        if self.use_bland:
            for j in range(self.ncols):
                if obj[j] > 0 and j not in banned:
                    enter = j
                    break
        else:
            best = 0
            for j in range(self.ncols):
                v = obj[j]
                if v > best and j not in banned:
                    best, enter = v, j
        if enter < 0:
            return "optimal"
        leave, bnum, bden, best_var = -1, 0, 0, -1
        for i, row in enumerate(self.rows):
            a = row[enter]
            if a > 0:
                bi = self.b[i]
                # compare bi/a against bnum/bden by cross multiplication
                if leave < 0 or bi * bden < bnum * a or (
                    bi * bden == bnum * a and self.basis[i] < best_var
                ):
                    leave, bnum, bden, best_var = i, bi, a, self.basis[i]
        if leave < 0:
            self._ray_col = enter
            return "unbounded"
        if not self.use_bland:
            if bnum == 0:
                self._stall += 1
                if self._stall > 30:
                    self.use_bland = True
            else:
                self._stall = 0
        self.pivot(leave, enter)
        return "continue"

    def run(self) -> str:
        while True:
            state = self.bland_step()
            if state != "continue":
                return state

    def set_costs(self, costs: list[int]) -> None:
        """Recompute the reduced-cost row for a new integer cost vector."""
        self.costs = list(costs)
        d = self.d
        obj = [d * c for c in costs]
        for i, var in enumerate(self.basis):
            cb = costs[var]
            if cb:
                row = self.rows[i]
                for l in range(self.ncols):
                    if row[l]:
                        obj[l] -= cb * row[l]
        self.obj = obj

    def true_value(self, col_index: int, row_i: int) -> Fraction:
        return Fraction(self.rows[row_i][col_index], self.d)

    def basic_values(self) -> dict[int, Fraction]:
        return {var: Fraction(self.b[i], self.d) for i, var in enumerate(self.basis)}

    def reduced_cost(self, j: int) -> Fraction:
        """True reduced cost in integerized cost units."""
        return Fraction(self.obj[j], self.d)


def _lcm(a: int, b: int) -> int:
    return a * b // gcd(a, b)


def solve(problem: LpProblem) -> LpSolution:
    """Solve exactly; the returned certificate is re-verified before return."""
    sense_sign = 1 if problem.sense == "max" else -1

    # column layout: one column per nonneg variable, two per free variable
    col_of: dict[str, int] = {}
    neg_col_of: dict[str, int] = {}
    ncols = 0
    for v in problem.variables:
        col_of[v] = ncols
        ncols += 1
        if v in problem.free:
            neg_col_of[v] = ncols
            ncols += 1
    nstruct = ncols

    # rows are integerized (each scaled by its own positive factor) so the
    # tableau can pivot in pure int arithmetic; duals unscale at extraction
    m = len(problem.constraints)
    dense_rows: list[list[int]] = []
    rhs: list[int] = []
    rels: list[str] = []
    row_scale: list[Fraction] = []
    for row in problem.constraints:
        dense = [ZERO] * nstruct
        for v, c in row.coeffs.items():
            dense[col_of[v]] += c
            if v in neg_col_of:
                dense[neg_col_of[v]] -= c
        b = row.rhs
        rel = row.rel
        flip = b < 0  # normalize to b >= 0, flipping the relation
        if flip:
            dense = [-c for c in dense]
            b = -b
            rel = {LE: GE, GE: LE, EQ: EQ}[rel]
        scale = 1
        for c in dense:
            scale = _lcm(scale, c.denominator)
        scale = _lcm(scale, b.denominator)
        ints = [int(c * scale) for c in dense]
        bi = int(b * scale)
        g = abs(bi)
        for c in ints:
            g = gcd(g, abs(c))
        if g > 1:  # keep the integer tableau's seeds small
            ints = [c // g for c in ints]
            bi //= g
            scale_frac = Fraction(scale, g)
        else:
            scale_frac = Fraction(scale)
        dense_rows.append(ints)
        rhs.append(bi)
        rels.append(rel)
        row_scale.append(-scale_frac if flip else scale_frac)

    # slack / surplus / artificial columns; remember each row's identity column
    slack_col: list[int | None] = [None] * m
    art_col: list[int | None] = [None] * m
    extra: list[tuple[int, int]] = []  # (row, coefficient) per added column
    for i, rel in enumerate(rels):
        if rel == LE:
            slack_col[i] = nstruct + len(extra)
            extra.append((i, 1))
        elif rel == GE:
            extra.append((i, -1))
    art_start = nstruct + len(extra)
    for i, rel in enumerate(rels):
        if rel != LE:
            art_col[i] = nstruct + len(extra)
            extra.append((i, 1))
    total_cols = nstruct + len(extra)

    tab = _Tableau(total_cols)
    for i in range(m):
        tab.rows.append(dense_rows[i] + [0] * len(extra))
        tab.b.append(rhs[i])
    for idx, (i, coef) in enumerate(extra):
        tab.rows[i][nstruct + idx] = coef
    for i in range(m):
        tab.basis.append(art_col[i] if art_col[i] is not None else slack_col[i])

    objective_frac = [ZERO] * total_cols
    for v, c in problem.objective.items():
        c = sense_sign * c
        objective_frac[col_of[v]] += c
        if v in neg_col_of:
            objective_frac[neg_col_of[v]] -= c
    obj_scale = 1
    for c in objective_frac:
        obj_scale = _lcm(obj_scale, c.denominator)
    objective_int = [int(c * obj_scale) for c in objective_frac]

    # ---- phase 1 ----
    has_art = any(c is not None for c in art_col)
    if has_art:
        phase1 = [0] * total_cols
        for c in art_col:
            if c is not None:
                phase1[c] = -1
        tab.set_costs(phase1)
        state = tab.run()
        assert state == "optimal"  # phase-1 objective is bounded above by 0
        infeas = any(tab.basis[i] >= art_start and tab.b[i] > 0 for i in range(m))
        if infeas:
            # y_i = z at the row's identity column; z_j = c_j - obj_j
            farkas = []
            for i in range(m):
                idc = art_col[i] if art_col[i] is not None else slack_col[i]
                y = Fraction(phase1[idc]) - tab.reduced_cost(idc)
                # internal row i is row_scale[i] times the original row
                farkas.append(y * row_scale[i])
            sol = LpSolution(status="infeasible", farkas=farkas)
            verify_farkas(problem, farkas)
            return sol
        # drive remaining artificials out of the basis
        for i in range(m):
            if tab.basis[i] >= art_start:
                for j in range(art_start):
                    if j not in tab.banned and tab.rows[i][j]:
                        tab.pivot(i, j)
                        break
                # else: redundant all-zero row; its artificial stays basic at 0
        tab.banned.update(range(art_start, total_cols))

    # ---- phase 2 ----
    tab.set_costs(objective_int)
    state = tab.run()

    def merge_values(col_values: Mapping[int, Fraction]) -> dict[str, Fraction]:
        out = {}
        for v in problem.variables:
            val = col_values.get(col_of[v], ZERO)
            if v in neg_col_of:
                val -= col_values.get(neg_col_of[v], ZERO)
            out[v] = val
        return out

    if state == "unbounded":
        j = tab._ray_col
        ray_cols: dict[int, Fraction] = {j: ONE}
        for i in range(m):
            if tab.rows[i][j]:
                ray_cols[tab.basis[i]] = (
                    ray_cols.get(tab.basis[i], ZERO) - Fraction(tab.rows[i][j], tab.d)
                )
        point = merge_values(tab.basic_values())
        ray = merge_values(ray_cols)
        sol = LpSolution(status="unbounded", feasible_point=point, ray=ray)
        verify_ray(problem, point, ray)
        return sol

    values = merge_values(tab.basic_values())
    duals: list[Fraction] = []
    for i in range(m):
        idc = slack_col[i] if slack_col[i] is not None else art_col[i]
        # z at the identity column is the internal multiplier; the original
        # row is internal row / row_scale and costs were scaled by obj_scale
        y = (Fraction(objective_int[idc]) - tab.reduced_cost(idc)) / obj_scale
        duals.append(sense_sign * y * row_scale[i])

    objective = sense_sign * Fraction(
        sum(objective_int[var] * tab.b[i] for i, var in enumerate(tab.basis)),
        tab.d * obj_scale,
    )
    reduced = {}
    for v in problem.variables:
        rc = problem.objective.get(v, ZERO)
        for yi, row in zip(duals, problem.constraints):
            cv = row.coeffs.get(v)
            if cv:
                rc -= yi * cv
        reduced[v] = rc
    dual_objective = sum((yi * row.rhs for yi, row in zip(duals, problem.constraints)), ZERO)
    sol = LpSolution(
        status="optimal", objective=objective, values=values, duals=duals,
        reduced_costs=reduced, dual_objective=dual_objective,
    )
    verify_solution(problem, sol)
    return sol


# ---------------------------------------------------------------------------
# Certificate verification (independent of solver internals)
# ---------------------------------------------------------------------------

def _check(ok: bool, msg: str) -> None:
    if not ok:
        raise LpVerificationError(msg)


def verify_solution(problem: LpProblem, sol: LpSolution) -> None:
    """Exact primal feasibility, dual sign consistency, complementary
    slackness, and primal objective == dual objective."""
    sense_sign = 1 if problem.sense == "max" else -1
    for v in problem.variables:
        if v not in problem.free:
            _check(sol.values.get(v, ZERO) >= 0, f"variable {v} negative")
    for i, row in enumerate(problem.constraints):
        lhs = eval_row(row.coeffs, sol.values)
        y = sol.duals[i]
        label = row.name or f"#{i}"
        if row.rel == LE:
            _check(lhs <= row.rhs, f"constraint {label} violated")
            _check(sense_sign * y >= 0, f"dual sign at {label}")
        elif row.rel == GE:
            _check(lhs >= row.rhs, f"constraint {label} violated")
            _check(sense_sign * y <= 0, f"dual sign at {label}")
        else:
            _check(lhs == row.rhs, f"constraint {label} violated")
        _check(y * (row.rhs - lhs) == 0, f"complementary slackness at {label}")
    for v in problem.variables:
        rc = sol.reduced_costs[v]
        if v in problem.free:
            _check(rc == 0, f"nonzero reduced cost on free variable {v}")
        else:
            _check(sense_sign * rc <= 0, f"dual infeasibility at variable {v}")
            _check(rc * sol.values.get(v, ZERO) == 0, f"variable slackness at {v}")
    primal = sum(
        (c * sol.values.get(v, ZERO) for v, c in problem.objective.items()), ZERO
    )
    _check(primal == sol.objective, "objective value mismatch")
    _check(sol.dual_objective == sol.objective, "strong duality gap is nonzero")


def verify_farkas(problem: LpProblem, farkas: Sequence[Fraction]) -> None:
    """Multiply out an infeasibility certificate and check it."""
    combo: dict[str, Fraction] = {v: ZERO for v in problem.variables}
    total = ZERO
    for y, row in zip(farkas, problem.constraints):
        label = row.name or "?"
        if row.rel == LE:
            _check(y >= 0, f"farkas sign at {label}")
        elif row.rel == GE:
            _check(y <= 0, f"farkas sign at {label}")
        for v, c in row.coeffs.items():
            combo[v] += y * c
        total += y * row.rhs
    for v in problem.variables:
        if v in problem.free:
            _check(combo[v] == 0, f"farkas combination not zero on free {v}")
        else:
            _check(combo[v] >= 0, f"farkas combination negative on {v}")
    _check(total < 0, "farkas certificate does not separate")


def verify_ray(problem: LpProblem, point: Mapping[str, Fraction],
               ray: Mapping[str, Fraction]) -> None:
    """Check feasible point + improving recession direction."""
    for v in problem.variables:
        if v not in problem.free:
            _check(point.get(v, ZERO) >= 0, f"point negative at {v}")
            _check(ray.get(v, ZERO) >= 0, f"ray negative at {v}")
    for row in problem.constraints:
        lhs = eval_row(row.coeffs, point)
        step = eval_row(row.coeffs, ray)
        label = row.name or "?"
        if row.rel == LE:
            _check(lhs <= row.rhs and step <= 0, f"ray violates {label}")
        elif row.rel == GE:
            _check(lhs >= row.rhs and step >= 0, f"ray violates {label}")
        else:
            _check(lhs == row.rhs and step == 0, f"ray violates {label}")
    gain = eval_row(problem.objective, ray)
    if problem.sense == "max":
        _check(gain > 0, "ray does not improve the objective")
    else:
        _check(gain < 0, "ray does not improve the objective")


# ---------------------------------------------------------------------------
# Debug dump
# ---------------------------------------------------------------------------

def dump_lp(problem: LpProblem) -> str:
    """Text rendering in LP-file style for cross-checks with outside solvers.

    Coefficients are printed as decimals, which is lossy; the exact "p/q"
    values ride along in comments.
    """
    def term(c: Fraction, v: str) -> str:
        return f"{'+' if c >= 0 else '-'} {abs(float(c))} {v} "

    lines = ["\\ decimal rendering is LOSSY; exact values in comments"]
    lines.append("Maximize" if problem.sense == "max" else "Minimize")
    expr = " ".join(term(c, v).strip() for v, c in problem.objective.items()) or "0"
    exact = " ".join(f"{v}={rat_str(c)}" for v, c in problem.objective.items())
    lines.append(f" obj: {expr}")
    lines.append(f"\\ exact: {exact}")
    lines.append("Subject To")
    for i, row in enumerate(problem.constraints):
        name = row.name or f"c{i}"
        expr = " ".join(term(c, v).strip() for v, c in row.coeffs.items()) or "0"
        rel = {LE: "<=", GE: ">=", EQ: "="}[row.rel]
        lines.append(f" {name}: {expr} {rel} {float(row.rhs)}")
        exact = " ".join(f"{v}={rat_str(c)}" for v, c in row.coeffs.items())
        lines.append(f"\\ exact: {exact} {rel} {rat_str(row.rhs)}")
    if problem.free:
        lines.append("Free")
        lines.append(" " + " ".join(sorted(problem.free)))
    lines.append("End")
    return "\n".join(lines)
