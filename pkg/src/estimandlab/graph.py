"""Causal DAGs, d-separation and single-world intervention graphs.

Graphs are small (a handful of named nodes) and immutable. d-separation uses
the reachability ("Bayes-ball") formulation so that a d-connecting trail can
be reported alongside a negative verdict.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping

from .errors import CycleError, GraphError

Edge = tuple[str, str]


@dataclass(frozen=True)
class Dag:
    """Directed acyclic graph over named nodes.

    ``nodes`` keeps the construction order, which is the canonical order used
    everywhere else (CPT parent axes, joint table axes).
    """

    nodes: tuple[str, ...]
    edges: frozenset[Edge] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", frozenset((str(p), str(c)) for p, c in self.edges))
        if len(set(self.nodes)) != len(self.nodes):
            seen, dup = set(), []
            for v in self.nodes:
                if v in seen:
                    dup.append(v)
                seen.add(v)
            raise GraphError(f"duplicate node name(s): {sorted(set(dup))}")
        known = set(self.nodes)
        for p, c in self.edges:
            if p not in known or c not in known:
                raise GraphError(f"edge {p} -> {c} has an unknown endpoint")
            if p == c:
                raise GraphError(f"self-loop on {p}")
        self.topological_order  # raises CycleError

    @cached_property
    def parents(self) -> dict[str, tuple[str, ...]]:
        """Parents of each node, in canonical node order."""
        rank = {v: i for i, v in enumerate(self.nodes)}
        out: dict[str, list[str]] = {v: [] for v in self.nodes}
        for p, c in self.edges:
            out[c].append(p)
        return {v: tuple(sorted(ps, key=rank.__getitem__)) for v, ps in out.items()}

    @cached_property
    def children(self) -> dict[str, tuple[str, ...]]:
        rank = {v: i for i, v in enumerate(self.nodes)}
        out: dict[str, list[str]] = {v: [] for v in self.nodes}
        for p, c in self.edges:
            out[p].append(c)
        return {v: tuple(sorted(cs, key=rank.__getitem__)) for v, cs in out.items()}

    @cached_property
    def topological_order(self) -> tuple[str, ...]:
        # Kahn's algorithm; ties broken by canonical order so the result is stable.
        indeg = {v: 0 for v in self.nodes}
        for _, c in self.edges:
            indeg[c] += 1
        order: list[str] = []
        remaining = list(self.nodes)
        while remaining:
            ready = next((v for v in remaining if indeg[v] == 0), None)
            if ready is None:
                raise CycleError(_find_cycle(self.nodes, self.edges))
            remaining.remove(ready)
            order.append(ready)
            for p, c in self.edges:
                if p == ready:
                    indeg[c] -= 1
        return tuple(order)

    def has_edge(self, parent: str, child: str) -> bool:
        return (parent, child) in self.edges

    def sorted_edges(self) -> list[Edge]:
        rank = {v: i for i, v in enumerate(self.nodes)}
        return sorted(self.edges, key=lambda e: (rank[e[0]], rank[e[1]]))

    def __str__(self):
        parts = []
        for v in self.nodes:
            ps = self.parents[v]
            parts.append(f"[{v}|{','.join(ps)}]" if ps else f"[{v}]")
        return "".join(parts)


def _find_cycle(nodes, edges) -> list[str]:
    children: dict[str, list[str]] = {v: [] for v in nodes}
    for p, c in edges:
        children.setdefault(p, []).append(c)
    color: dict[str, int] = {}
    stack: list[str] = []

    def visit(v):
        color[v] = 1
        stack.append(v)
        for c in children.get(v, ()):
            if color.get(c) == 1:
                return stack[stack.index(c):] + [c]
            if c not in color:
                found = visit(c)
                if found:
                    return found
        color[v] = 2
        stack.pop()
        return None

    for v in nodes:
        if v not in color:
            found = visit(v)
            if found:
                return found
    return []


def build_dag(nodes: Iterable[str], edges: Iterable[Edge] = ()) -> Dag:
    """Build a validated :class:`Dag`.

    Raises :class:`GraphError` on duplicate names or unknown edge endpoints,
    :class:`CycleError` if the edges contain a directed cycle.
    """
    edges = list(edges)
    if len(set(edges)) != len(edges):
        raise GraphError("duplicate edge")
    return Dag(tuple(nodes), frozenset(edges))


def remove_edges(g: Dag, drop: Iterable[Edge]) -> Dag:
    drop = set(drop)
    missing = drop - g.edges
    if missing:
        raise GraphError(f"edge(s) not present: {sorted(missing)}")
    return Dag(g.nodes, g.edges - drop)


def _check_nodes(g: Dag, names: Iterable[str]):
    unknown = set(names) - set(g.nodes)
    if unknown:
        raise GraphError(f"unknown node(s): {sorted(unknown)}")


def ancestors(g: Dag, node: str) -> set[str]:
    _check_nodes(g, [node])
    seen: set[str] = set()
    todo = list(g.parents[node])
    while todo:
        v = todo.pop()
        if v not in seen:
            seen.add(v)
            todo.extend(g.parents[v])
    return seen


def descendants(g: Dag, node: str) -> set[str]:
    _check_nodes(g, [node])
    seen: set[str] = set()
    todo = list(g.children[node])
    while todo:
        v = todo.pop()
        if v not in seen:
            seen.add(v)
            todo.extend(g.children[v])
    return seen


# --- d-separation -----------------------------------------------------------

_UP, _DOWN = "up", "down"  # arrived from a child / from a parent


def _as_set(x) -> set[str]:
    if isinstance(x, str):
        return {x}
    return set(x)


def _reach(g: Dag, sources: set[str], given: set[str]):
    """Bayes-ball reachability from ``sources`` given ``given``.

    Returns the set of d-connected nodes and a predecessor map over
    (node, direction) states for trail reconstruction.
    """
    anc_given = set(given)
    for v in given:
        anc_given |= ancestors(g, v)

    pred: dict[tuple[str, str], tuple[str, str] | None] = {}
    queue: deque[tuple[str, str]] = deque()
    for s in sorted(sources):
        state = (s, _UP)
        pred[state] = None
        queue.append(state)
    reached: set[str] = set()
    while queue:
        v, d = state = queue.popleft()
        if v not in given:
            reached.add(v)
        nxt: list[tuple[str, str]] = []
        if d == _UP and v not in given:
            nxt += [(p, _UP) for p in g.parents[v]]
            nxt += [(c, _DOWN) for c in g.children[v]]
        elif d == _DOWN:
            if v not in given:
                nxt += [(c, _DOWN) for c in g.children[v]]
            if v in anc_given:
                # collider (or its ancestor) is observed: the ball bounces back up
                nxt += [(p, _UP) for p in g.parents[v]]
        for s in nxt:
            if s not in pred:
                pred[s] = state
                queue.append(s)
    return reached, pred


def _validate_query(g: Dag, a: set[str], b: set[str], c: set[str]):
    _check_nodes(g, a | b | c)
    if a & b or a & c or b & c:
        raise GraphError("query sets must be disjoint")


def d_separated(g: Dag, set_a, set_b, given=()) -> bool:
    """True iff every path between ``set_a`` and ``set_b`` is blocked by ``given``."""
    a, b, c = _as_set(set_a), _as_set(set_b), _as_set(given)
    _validate_query(g, a, b, c)
    if not a or not b:
        return True
    reached, _ = _reach(g, a, c)
    return not (reached & b)


def d_connecting_trail(g: Dag, set_a, set_b, given=()) -> list[str] | None:
    """A witness trail such as ``['A', '<-', 'Z', '->', 'X', '<-', 'U']``.

    Returns None when the sets are d-separated. The trail is the shortest
    active trail found by breadth-first search over ball states.
    """
    a, b, c = _as_set(set_a), _as_set(set_b), _as_set(given)
    _validate_query(g, a, b, c)
    if not a or not b:
        return None
    reached, pred = _reach(g, a, c)
    hits = reached & b
    if not hits:
        return None
    end = None
    # pick the earliest-discovered target state
    for state in pred:
        if state[0] in hits:
            end = state
            break
    states = []
    while end is not None:
        states.append(end)
        end = pred[end]
    states.reverse()
    trail = [states[0][0]]
    for _, (v, d) in zip(states, states[1:]):
        trail += ["->" if d == _DOWN else "<-", v]
    return trail


def format_trail(trail: list[str] | None) -> str:
    return "" if trail is None else " ".join(trail)


# --- single-world intervention graphs ---------------------------------------

_LABEL_RE = re.compile(r"^\s*([^\s^{}]+)\s*(?:\^\s*(?:\{([^}]*)\}|([^\s{},]+)))?\s*$")


def render_label(base: str, superscripts: Iterable[str]) -> str:
    sup = sorted(superscripts)
    if not sup:
        return base
    if len(sup) == 1:
        return f"{base}^{sup[0]}"
    return f"{base}^{{{','.join(sup)}}}"


def parse_label(text: str) -> tuple[str, frozenset[str] | None]:
    """Split ``"Y^{z,a}"`` into ``("Y", {"a", "z"})``; a bare name gives None."""
    m = _LABEL_RE.match(text)
    if not m:
        raise GraphError(f"cannot parse node label {text!r}")
    base, braced, single = m.groups()
    if braced is None and single is None:
        return base, None
    raw = braced if braced is not None else single
    parts = [s.strip() for s in raw.split(",")]
    if any(not s for s in parts):
        raise GraphError(f"empty superscript in {text!r}")
    return base, frozenset(parts)


@dataclass(frozen=True)
class SwigGraph:
    """Node-split graph for a single-world intervention.

    ``dag`` is an ordinary :class:`Dag` over rendered labels: random halves
    (``"X^z"``, ``"Y^{a,z}"``) and fixed halves (``"z"``, ``"a"``).
    """

    dag: Dag
    source: Dag
    random_nodes: Mapping[str, tuple[str, frozenset[str]]]
    fixed_nodes: Mapping[str, str]

    def label_of(self, base: str) -> str:
        for name, (b, _) in self.random_nodes.items():
            if b == base:
                return name
        raise GraphError(f"unknown node {base!r}")

    def resolve(self, text: str) -> str:
        """Map user text (``"Y^{z,a}"``, ``"Y"``, ``"z"``) to a node of ``dag``."""
        text = text.strip()
        if text in self.dag.nodes:
            return text
        base, sup = parse_label(text)
        if sup is None:
            if base in self.fixed_nodes:
                return base
            if base in self.source.nodes:
                return self.label_of(base)
            raise GraphError(f"unknown labeled node {text!r}")
        name = render_label(base, sup)
        if name in self.random_nodes:
            return name
        if base in self.source.nodes and sup <= set(self.fixed_nodes):
            # extra superscripts for interventions that cannot reach the node
            # name the same variable: Y^{z,a} is Y^a when z is not an ancestor
            node = self.label_of(base)
            if self.random_nodes[node][1] <= sup:
                return node
        raise GraphError(f"unknown labeled node {text!r}")

    def collapse(self) -> Dag:
        """Erase splits and labels, recovering the source graph."""
        to_base = {n: b for n, (b, _) in self.random_nodes.items()}
        to_base.update(self.fixed_nodes)
        edges = {(to_base[p], to_base[c]) for p, c in self.dag.edges}
        return Dag(self.source.nodes, frozenset(edges))


def swig(g: Dag, interventions: Mapping[str, str] | Iterable[str]) -> SwigGraph:
    """Split each intervened node into a random and a fixed half.

    ``interventions`` maps a node to its constant label; an iterable of node
    names uses the lower-cased name as label (``Z -> z``).
    """
    if not isinstance(interventions, Mapping):
        interventions = {v: v.lower() for v in interventions}
    interventions = dict(interventions)
    _check_nodes(g, interventions)
    labels = list(interventions.values())
    if len(set(labels)) != len(labels):
        raise GraphError("intervention labels must be distinct")
    clash = set(labels) & set(g.nodes)
    if clash:
        raise GraphError(f"intervention label(s) collide with node names: {sorted(clash)}")

    sup: dict[str, frozenset[str]] = {}
    for v in g.topological_order:
        acc: set[str] = set()
        for p in g.parents[v]:
            if p in interventions:
                acc.add(interventions[p])
            else:
                acc |= sup[p]
        sup[v] = frozenset(acc)
    name = {v: render_label(v, sup[v]) for v in g.nodes}

    nodes: list[str] = []
    for v in g.nodes:
        nodes.append(name[v])
        if v in interventions:
            nodes.append(interventions[v])
    edges = {(interventions.get(p, name[p]), name[c]) for p, c in g.edges}
    return SwigGraph(
        dag=Dag(tuple(nodes), frozenset(edges)),
        source=g,
        random_nodes={name[v]: (v, sup[v]) for v in g.nodes},
        fixed_nodes={lab: v for v, lab in interventions.items()},
    )


def swig_independent(sw: SwigGraph, counterfactual: str, other, given=()) -> bool:
    """d-separation on a SWIG; fixed nodes act as always-blocking constants."""
    cf = sw.resolve(counterfactual)
    oth = {sw.resolve(o) for o in _as_set(other)}
    giv = {sw.resolve(c) for c in _as_set(given)}
    fixed = set(sw.fixed_nodes) - oth - giv - {cf}
    return d_separated(sw.dag, {cf}, oth, giv | fixed)


# --- text format ------------------------------------------------------------

_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def parse_graph(text: str) -> Dag:
    """Parse the graph description format.

    Grammar (``#`` starts a comment, blank lines ignored)::

        nodes: Z, X, A, U, Y      # exactly once, first
        Z -> X                    # one edge per line

    Node names are identifiers; node separators are commas and/or spaces.
    Anything else is rejected.
    """
    nodes: list[str] | None = None
    edges: list[Edge] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if nodes is None:
            head, sep, rest = line.partition(":")
            if not sep or head.strip() != "nodes":
                raise GraphError(f"line {lineno}: expected 'nodes: ...' first")
            nodes = [t for t in re.split(r"[,\s]+", rest.strip()) if t]
            bad = [t for t in nodes if not _NAME_RE.match(t)]
            if bad:
                raise GraphError(f"line {lineno}: invalid node name(s) {bad}")
            continue
        parts = line.split("->")
        if len(parts) != 2:
            raise GraphError(f"line {lineno}: expected 'parent -> child', got {line!r}")
        p, c = parts[0].strip(), parts[1].strip()
        if not _NAME_RE.match(p) or not _NAME_RE.match(c):
            raise GraphError(f"line {lineno}: invalid token in {line!r}")
        edges.append((p, c))
    if nodes is None:
        raise GraphError("missing 'nodes:' line")
    return build_dag(nodes, edges)


def format_graph(g: Dag) -> str:
    lines = ["nodes: " + ", ".join(g.nodes)]
    lines += [f"{p} -> {c}" for p, c in g.sorted_edges()]
    return "\n".join(lines) + "\n"
