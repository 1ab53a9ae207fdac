"""Stopping times, liquidating strategies, and Snell envelopes.

A liquidating strategy is a nonnegative adapted exercise flow whose values sum
to exactly one along every root-to-leaf path; it is the divisible-American
exercise primitive.  Stopping times embed as the {0,1}-valued flows.  The
liquidation mass is normalized over times 0..T, so that exercise at time 0 is
available and the stopping-time embedding is total.

All functions here are pure over immutable inputs and parallel-safe.
"""

from __future__ import annotations

from fractions import Fraction
from itertools import product
from typing import TYPE_CHECKING, Iterable, Sequence

from .rational import rat
from .tree import AdaptedProcess, EventTree, TreeError

if TYPE_CHECKING:  # pragma: no cover
    from .measures import Measure

DEFAULT_ENUM_CAP = 10**6


class EnumerationCapError(RuntimeError):
    """Too many stopping times to enumerate; use the cut-generating path
    (lazy Snell separation) instead of explicit enumeration."""


class StoppingTime:
    """A stopping time stored as its minimal antichain of stop nodes."""

    def __init__(self, tree: EventTree, stop_nodes: Iterable[str]):
        self.tree = tree
        nodes = frozenset(stop_nodes)
        unknown = nodes - set(tree.nodes)
        if unknown:
            raise TreeError(f"unknown stop nodes {sorted(unknown)!r}")
        stop_map: dict[str, str] = {}
        for leaf in tree.leaves:
            hits = [n for n in tree.path(leaf) if n in nodes]
            if len(hits) != 1:
                raise TreeError(
                    f"leaf {leaf!r}: path stops {len(hits)} times, expected exactly once"
                )
            stop_map[leaf] = hits[0]
        self.stop_nodes = nodes
        self._stop_at = stop_map

    def stop_node(self, leaf: str) -> str:
        """The node at which this stopping time stops on the path to `leaf`."""
        return self._stop_at[leaf]

    def stops_at(self, node: str) -> bool:
        return node in self.stop_nodes

    def time_at(self, leaf: str) -> int:
        return self.tree.time(self._stop_at[leaf])

    def value_at(self, h: AdaptedProcess, leaf: str) -> Fraction:
        """h evaluated at the stop: the exercise payoff on the path to `leaf`."""
        return h.scalar_at(self._stop_at[leaf])

    def __eq__(self, other) -> bool:
        return isinstance(other, StoppingTime) and self.stop_nodes == other.stop_nodes

    def __hash__(self) -> int:
        return hash(self.stop_nodes)

    def __repr__(self) -> str:
        return f"StoppingTime({sorted(self.stop_nodes)})"


def stop_everywhere_at(tree: EventTree, t: int) -> StoppingTime:
    """The deterministic stopping time tau = t."""
    return StoppingTime(tree, [n for n in tree.nodes if tree.time(n) == t])


class LiquidatingStrategy:
    """Nonnegative exercise flow with unit mass on every path."""

    def __init__(self, eta: AdaptedProcess):
        if eta.dim != 1:
            raise TreeError("liquidating strategy must be scalar")
        tree = eta.tree
        for node in tree.nodes:
            if eta.scalar_at(node) < 0:
                raise TreeError(f"node {node!r}: negative exercise mass")
        for leaf in tree.leaves:
            total = sum(eta.scalar_at(n) for n in tree.path(leaf))
            if total != 1:
                raise TreeError(f"leaf {leaf!r}: path mass {total} != 1")
        self.tree = tree
        self.eta = eta

    @classmethod
    def from_map(cls, tree: EventTree, values) -> "LiquidatingStrategy":
        return cls(AdaptedProcess(tree, values))

    @classmethod
    def from_stopping_time(cls, tau: StoppingTime) -> "LiquidatingStrategy":
        values = {n: Fraction(1) if tau.stops_at(n) else Fraction(0) for n in tau.tree.nodes}
        return cls(AdaptedProcess(tau.tree, values))

    def at(self, node: str) -> Fraction:
        return self.eta.scalar_at(node)

    def __repr__(self) -> str:
        nz = {n: str(v) for n, v in self.eta.as_scalar_map().items() if v}
        return f"LiquidatingStrategy({nz})"


def liquidate_payoff(eta: LiquidatingStrategy, h: AdaptedProcess, leaf: str) -> Fraction:
    """Path-wise exercise payoff: sum of h * flow along the path to `leaf`."""
    return sum((eta.at(n) * h.scalar_at(n) for n in h.tree.path(leaf)), Fraction(0))


def strategy_to_json(eta: LiquidatingStrategy) -> dict[str, str]:
    """Node -> "p/q" map in the market-file rational convention."""
    from .rational import rat_str

    return {n: rat_str(v) for n, v in eta.eta.as_scalar_map().items() if v}


def count_stopping_times(tree: EventTree, node: str | None = None) -> int:
    """Independent recursive count: 1 + product over children (leaves count 1)."""
    node = tree.root if node is None else node
    if tree.is_leaf(node):
        return 1
    total = 1
    for child in tree.children(node):
        total *= count_stopping_times(tree, child)
    return 1 + total


def enumerate_stopping_times(
    tree: EventTree, cap: int = DEFAULT_ENUM_CAP
) -> list[StoppingTime]:
    """All stopping times of the tree, duplicate-free.

    Refuses with `EnumerationCapError` when the count exceeds `cap`; callers
    with "for all tau" constraints should then switch to lazy Snell cuts.
    """
    n = count_stopping_times(tree)
    if n > cap:
        raise EnumerationCapError(
            f"{n} stopping times exceeds cap {cap}; "
            "use the Snell separation oracle (lazy cuts) instead"
        )

    def antichains(node: str) -> list[frozenset[str]]:
        if tree.is_leaf(node):
            return [frozenset([node])]
        below = [antichains(c) for c in tree.children(node)]
        out = [frozenset([node])]
        for combo in product(*below):
            out.append(frozenset().union(*combo))
        return out

    taus = [StoppingTime(tree, s) for s in antichains(tree.root)]
    assert len(taus) == n
    return taus


def strategy_from_mixture(
    weights: Sequence, taus: Sequence[StoppingTime]
) -> LiquidatingStrategy:
    """Exercise flow of a convex mixture of stopping times."""
    ws = [rat(w) for w in weights]
    if len(ws) != len(taus):
        raise ValueError(f"{len(ws)} weights for {len(taus)} stopping times")
    if any(w < 0 for w in ws):
        raise ValueError("mixture weights must be nonnegative")
    if sum(ws, Fraction(0)) != 1:
        raise ValueError(f"mixture weights sum to {sum(ws, Fraction(0))}, not 1")
    if not taus:
        raise ValueError("empty mixture")
    tree = taus[0].tree
    values = {n: Fraction(0) for n in tree.nodes}
    for w, tau in zip(ws, taus):
        for n in tau.stop_nodes:
            values[n] += w
    return LiquidatingStrategy.from_map(tree, values)


def _subtree_masses(Q: "Measure") -> dict[str, Fraction]:
    tree = Q.tree
    mass = {leaf: Q.weights.get(leaf, Fraction(0)) for leaf in tree.leaves}
    for node in reversed(tree.nodes):
        if not tree.is_leaf(node):
            mass[node] = sum((mass[c] for c in tree.children(node)), Fraction(0))
    return mass


def _unnormalized_snell(Q: "Measure", h: AdaptedProcess) -> dict[str, Fraction]:
    """V(n) = max over stopping times of E_Q[h_tau restricted to paths through n].

    Works verbatim on zero-mass subtrees (they contribute 0), which is what
    makes the root value equal max over all stopping times of E_Q[h_tau].
    """
    tree = h.tree
    mass = _subtree_masses(Q)
    V: dict[str, Fraction] = {}
    for node in reversed(tree.nodes):
        stop_here = mass[node] * h.scalar_at(node)
        if tree.is_leaf(node):
            V[node] = stop_here
        else:
            cont = sum((V[c] for c in tree.children(node)), Fraction(0))
            V[node] = max(stop_here, cont)
    return V


def snell_envelope(Q: "Measure", h: AdaptedProcess) -> tuple[AdaptedProcess, Fraction]:
    """Backward-induction envelope of h under Q and its root value.

    U_T = h_T and U_t = max(h_t, E_Q[U_{t+1} | node]).  On zero-mass nodes the
    conditional expectation is taken under the uniform child distribution (an
    arbitrary convention; zero-mass subtrees cannot affect the root value).
    The root value equals max over all stopping times of E_Q[h_tau].
    """
    tree = h.tree
    mass = _subtree_masses(Q)
    U: dict[str, Fraction] = {}
    for node in reversed(tree.nodes):
        if tree.is_leaf(node):
            U[node] = h.scalar_at(node)
            continue
        kids = tree.children(node)
        if mass[node] > 0:
            cont = sum((mass[c] * U[c] for c in kids), Fraction(0)) / mass[node]
        else:
            cont = sum((U[c] for c in kids), Fraction(0)) / len(kids)
        U[node] = max(h.scalar_at(node), cont)
    envelope = AdaptedProcess(tree, U)
    root_value = _unnormalized_snell(Q, h)[tree.root]
    assert U[tree.root] == root_value or mass[tree.root] != 1
    return envelope, root_value


def snell_value(Q: "Measure", h: AdaptedProcess) -> Fraction:
    """max over stopping times of E_Q[h_tau], by backward induction."""
    return _unnormalized_snell(Q, h)[h.tree.root]


def snell_optimal_stop(Q: "Measure", h: AdaptedProcess) -> StoppingTime:
    """A stopping time attaining the Snell value: the greedy early-exercise
    rule of the envelope (stop as soon as stopping is no worse than continuing).

    This is the separation oracle behind lazily generated "for all tau" cuts.
    """
    tree = h.tree
    mass = _subtree_masses(Q)
    V = _unnormalized_snell(Q, h)
    stops: list[str] = []
    frontier = [tree.root]
    while frontier:
        node = frontier.pop()
        stop_here = mass[node] * h.scalar_at(node)
        if tree.is_leaf(node):
            stops.append(node)
        else:
            cont = sum((V[c] for c in tree.children(node)), Fraction(0))
            if stop_here >= cont:
                stops.append(node)
            else:
                frontier.extend(tree.children(node))
    tau = StoppingTime(tree, stops)
    value = sum(
        (Q.weights.get(leaf, Fraction(0)) * tau.value_at(h, leaf) for leaf in tree.leaves),
        Fraction(0),
    )
    assert value == V[tree.root]
    return tau
