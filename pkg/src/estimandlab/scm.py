"""Finite-valued structural causal models and exact joint tables.

A :class:`DiscreteScm` attaches a conditional probability table to every node
of a :class:`~estimandlab.graph.Dag`. Each CPT is an array whose leading axes
index the node's parents (canonical order) and whose last axis indexes the
node's own value. Exogenous errors are independent across nodes, so the joint
law is the product of the tables.
"""

from __future__ import annotations

import itertools
import json
import string
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import ModelError, ZeroProbabilityError
from .graph import Dag, build_dag

ROW_TOL = 1e-12
SCM_FORMAT = "estimandlab.scm/1"


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class JointTable:
    """Probability mass over the cross product of ``variables``."""

    variables: tuple[str, ...]
    cardinalities: tuple[int, ...]
    mass: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "cardinalities", tuple(int(k) for k in self.cardinalities))
        object.__setattr__(self, "mass", _frozen(self.mass))
        if len(set(self.variables)) != len(self.variables):
            raise ModelError("duplicate variable in joint table")
        if self.mass.shape != self.cardinalities:
            raise ModelError(f"mass shape {self.mass.shape} != cardinalities {self.cardinalities}")
        if np.any(self.mass < 0):
            raise ModelError("negative probability mass")
        total = self.mass.sum()
        if abs(total - 1.0) > ROW_TOL * max(1, self.mass.size):
            raise ModelError(f"joint mass sums to {total!r}, not 1")

    def axis(self, name: str) -> int:
        try:
            return self.variables.index(name)
        except ValueError:
            raise ModelError(f"unknown variable {name!r}") from None

    def card(self, name: str) -> int:
        return self.cardinalities[self.axis(name)]

    def marginal(self, keep: Sequence[str]) -> "JointTable":
        """Marginal table over ``keep``, axes in the order given."""
        keep = tuple(keep)
        axes = [self.axis(v) for v in keep]
        if len(set(axes)) != len(axes):
            raise ModelError("duplicate variable in marginal")
        drop = tuple(i for i in range(len(self.variables)) if i not in axes)
        m = self.mass.sum(axis=drop) if drop else self.mass
        # remaining axes are in original order; permute to requested order
        remaining = [i for i in range(len(self.variables)) if i not in drop]
        m = np.transpose(m, [remaining.index(i) for i in axes])
        return JointTable(keep, tuple(self.cardinalities[i] for i in axes), m)

    def hide(self, names: Iterable[str]) -> "JointTable":
        names = set(names)
        for v in names:
            self.axis(v)
        return self.marginal([v for v in self.variables if v not in names])

    def prob(self, assignment: Mapping[str, int]) -> float:
        """P(assignment) for a partial assignment."""
        idx: list = [slice(None)] * len(self.variables)
        for k, v in assignment.items():
            ax = self.axis(k)
            if not 0 <= int(v) < self.cardinalities[ax]:
                raise ModelError(f"value {v} out of range for {k}")
            idx[ax] = int(v)
        return float(self.mass[tuple(idx)].sum())

    def cells(self):
        """Iterate ``(assignment tuple, probability)`` over every cell."""
        for idx in itertools.product(*(range(k) for k in self.cardinalities)):
            yield idx, float(self.mass[idx])


def _check_cpt(node: str, cpt: np.ndarray, shape: tuple[int, ...]):
    if cpt.shape != shape:
        raise ModelError(f"CPT for {node} has shape {cpt.shape}, expected {shape}")
    if np.any(cpt < 0) or not np.all(np.isfinite(cpt)):
        raise ModelError(f"CPT for {node} has negative or non-finite entries")
    bad = np.abs(cpt.sum(axis=-1) - 1.0) > ROW_TOL
    if np.any(bad):
        raise ModelError(f"CPT rows for {node} do not sum to 1")


@dataclass(frozen=True)
class DiscreteScm:
    """Structural model with independent errors over a finite-valued DAG.

    ``cpt[v][parent values..., value] = P(v = value | parents)``.
    ``intervened`` records nodes whose tables were replaced by ``intervene``.
    """

    dag: Dag
    cardinality: Mapping[str, int]
    cpt: Mapping[str, np.ndarray] = field(repr=False)
    intervened: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        card = {v: int(self.cardinality.get(v, 2)) for v in self.dag.nodes}
        extra = set(self.cardinality) - set(self.dag.nodes)
        if extra:
            raise ModelError(f"cardinality for unknown node(s) {sorted(extra)}")
        for v, k in card.items():
            if k < 2:
                raise ModelError(f"cardinality of {v} must be >= 2")
        missing = set(self.dag.nodes) - set(self.cpt)
        if missing:
            raise ModelError(f"missing CPT for {sorted(missing)}")
        extra = set(self.cpt) - set(self.dag.nodes)
        if extra:
            raise ModelError(f"CPT for unknown node(s) {sorted(extra)}")
        tables = {}
        for v in self.dag.nodes:
            t = _frozen(self.cpt[v])
            shape = tuple(card[p] for p in self.dag.parents[v]) + (card[v],)
            _check_cpt(v, t, shape)
            tables[v] = t
        object.__setattr__(self, "cardinality", card)
        object.__setattr__(self, "cpt", tables)
        object.__setattr__(self, "intervened", dict(self.intervened))

    @property
    def nodes(self) -> tuple[str, ...]:
        return self.dag.nodes

    def parents(self, v: str) -> tuple[str, ...]:
        return self.dag.parents[v]

    def prob(self, node: str, value: int, parent_values: Mapping[str, int] | None = None) -> float:
        parent_values = parent_values or {}
        idx = tuple(int(parent_values[p]) for p in self.parents(node)) + (int(value),)
        return float(self.cpt[node][idx])


def exact_joint(m: DiscreteScm) -> JointTable:
    """Product of the CPTs over the full cross product, axes in node order."""
    letters = {v: string.ascii_letters[i] for i, v in enumerate(m.nodes)}
    if len(m.nodes) > len(string.ascii_letters):
        raise ModelError("too many nodes for exact enumeration")
    operands, subs = [], []
    for v in m.nodes:
        operands.append(m.cpt[v])
        subs.append("".join(letters[p] for p in m.parents(v)) + letters[v])
    out = "".join(letters[v] for v in m.nodes)
    mass = np.einsum(",".join(subs) + "->" + out, *operands)
    return JointTable(m.nodes, tuple(m.cardinality[v] for v in m.nodes), mass)


def intervene(m: DiscreteScm, set_to: Mapping[str, int]) -> DiscreteScm:
    """Truncated factorization: each set node gets a point-mass table.

    The graph is left untouched; the new table has the same parent axes but
    every row is identical, so the node no longer depends on its parents.
    """
    tables = dict(m.cpt)
    done = dict(m.intervened)
    for v, val in set_to.items():
        if v not in m.cardinality:
            raise ModelError(f"unknown node {v!r}")
        val = int(val)
        if not 0 <= val < m.cardinality[v]:
            raise ModelError(f"value {val} out of range for {v}")
        t = np.zeros_like(m.cpt[v])
        t[..., val] = 1.0
        tables[v] = t
        done[v] = val
    return DiscreteScm(m.dag, m.cardinality, tables, done)


def _value_vector(card: int, values: Sequence[float] | None) -> np.ndarray:
    if values is None:
        return np.arange(card, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.shape != (card,):
        raise ModelError(f"value map needs {card} entries")
    return values


def counterfactual_mean(m: DiscreteScm, set_to: Mapping[str, int], target: str,
                        values: Sequence[float] | None = None) -> float:
    """E[target] under ``do(set_to)``; values default to 0..k-1."""
    if target not in m.cardinality:
        raise ModelError(f"unknown node {target!r}")
    if target in set_to or target in m.intervened:
        raise ModelError(f"target {target} is intervened on")
    j = exact_joint(intervene(m, set_to))
    p = j.marginal([target]).mass
    return float(p @ _value_vector(m.cardinality[target], values))


def observed_joint(m: DiscreteScm, hide: Iterable[str] = ("U",), outcome: str = "Y") -> JointTable:
    """Exact joint with latent variables summed out."""
    hide = set(hide)
    unknown = hide - set(m.nodes)
    if unknown:
        raise ModelError(f"unknown node(s) {sorted(unknown)}")
    if outcome in hide:
        raise ModelError("cannot hide the outcome")
    if hide >= set(m.nodes):
        raise ModelError("cannot hide every node")
    return exact_joint(m).hide(hide)


class Positivity(NamedTuple):
    ok: bool
    offending: list[dict[str, int]]


def check_positivity(j: JointTable, over: Iterable[str]) -> Positivity:
    """Strict positivity of the marginal over ``over``; lists zero cells."""
    over = set(over)
    for v in over:
        j.axis(v)
    if not over:
        return Positivity(True, [])
    names = [v for v in j.variables if v in over]
    marg = j.marginal(names)
    bad = [dict(zip(names, idx)) for idx, p in marg.cells() if not p > 0]
    return Positivity(not bad, bad)


def cond_mean(j: JointTable, target: str, given: Mapping[str, int],
              values: Sequence[float] | None = None) -> float:
    """E[target | given] from exact mass; raises on a zero-mass event."""
    if target in given:
        raise ModelError("target appears in the conditioning set")
    names = [target] + list(given)
    marg = j.marginal(names)
    idx = (slice(None),) + tuple(int(given[v]) for v in given)
    for v in given:
        if not 0 <= int(given[v]) < j.card(v):
            raise ModelError(f"value {given[v]} out of range for {v}")
    p = marg.mass[idx]
    total = p.sum()
    if not total > 0:
        raise ZeroProbabilityError(f"P({_fmt(given)}) = 0", [dict(given)])
    return float(p @ _value_vector(j.card(target), values) / total)


def _fmt(assignment: Mapping[str, int]) -> str:
    return ", ".join(f"{k}={v}" for k, v in assignment.items())


# --- construction helpers ---------------------------------------------------

def binary_cpt(p_one: Sequence[float] | float) -> np.ndarray:
    """Binary table from P(node=1) per parent row (lexicographic parent order)."""
    p1 = np.atleast_1d(np.asarray(p_one, dtype=float))
    k = len(p1)
    n_par = int(round(np.log2(k))) if k > 1 else 0
    if 2 ** n_par != k:
        raise ModelError("binary_cpt needs 2**n_parents entries")
    t = np.stack([1.0 - p1, p1], axis=-1)
    return t.reshape((2,) * n_par + (2,))


def random_scm(dag: Dag, rng: np.random.Generator, cardinality: Mapping[str, int] | None = None,
               floor: float = 0.05) -> DiscreteScm:
    """Random CPTs whose entries are bounded below by ``floor / k``.

    Rows are Dirichlet(1) draws mixed with the uniform row, which keeps every
    cell strictly positive and well conditioned.
    """
    card = {v: int((cardinality or {}).get(v, 2)) for v in dag.nodes}
    tables = {}
    for v in dag.nodes:
        shape = tuple(card[p] for p in dag.parents[v]) + (card[v],)
        rows = rng.dirichlet(np.ones(card[v]), size=shape[:-1]) if shape[:-1] else rng.dirichlet(np.ones(card[v]))
        rows = (1 - floor) * rows + floor / card[v]
        rows = rows / rows.sum(axis=-1, keepdims=True)
        tables[v] = rows.reshape(shape)
    return DiscreteScm(dag, card, tables)


# --- serialization ----------------------------------------------------------

def scm_to_dict(m: DiscreteScm) -> dict:
    cpt = {}
    for v in m.nodes:
        pars = m.parents(v)
        rows = {}
        t = m.cpt[v]
        for idx in itertools.product(*(range(m.cardinality[p]) for p in pars)):
            key = ",".join(str(i) for i in idx)
            rows[key] = [float(x) for x in t[idx]]
        cpt[v] = {"parents": list(pars), "rows": rows}
    return {
        "format": SCM_FORMAT,
        "nodes": list(m.nodes),
        "edges": [list(e) for e in m.dag.sorted_edges()],
        "cardinality": dict(m.cardinality),
        "cpt": cpt,
    }


def scm_from_dict(doc: Mapping) -> DiscreteScm:
    if doc.get("format") != SCM_FORMAT:
        raise ModelError(f"unsupported SCM format {doc.get('format')!r}")
    allowed = {"format", "nodes", "edges", "cardinality", "cpt"}
    extra = set(doc) - allowed
    if extra:
        raise ModelError(f"unknown key(s) {sorted(extra)}")
    dag = build_dag(doc["nodes"], [tuple(e) for e in doc["edges"]])
    card = {v: int(k) for v, k in doc["cardinality"].items()}
    tables = {}
    for v in dag.nodes:
        entry = doc["cpt"][v]
        if tuple(entry["parents"]) != dag.parents[v]:
            raise ModelError(f"CPT parents for {v} do not match the graph")
        shape = tuple(card.get(p, 2) for p in dag.parents[v]) + (card.get(v, 2),)
        t = np.empty(shape)
        keys = set()
        for idx in itertools.product(*(range(k) for k in shape[:-1])):
            key = ",".join(str(i) for i in idx)
            keys.add(key)
            t[idx] = entry["rows"][key]
        if set(entry["rows"]) - keys:
            raise ModelError(f"unexpected CPT row key(s) for {v}")
        tables[v] = t
    return DiscreteScm(dag, card, tables)


def dumps_scm(m: DiscreteScm) -> str:
    # json writes floats with repr(), which round-trips doubles exactly
    return json.dumps(scm_to_dict(m), indent=2) + "\n"


def loads_scm(text: str) -> DiscreteScm:
    return scm_from_dict(json.loads(text))
