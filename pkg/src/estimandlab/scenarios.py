"""Trial structures with non-adherence and what each one implies.

Every scenario is a sub-graph of the base trial graph

    Z -> X, Z -> A, X -> A, X -> Y, A -> Y, U -> X, U -> Y

obtained by deleting some of the six removable arrows (``A -> Y`` always
stays). Canonical tables are fixed constants; when an arrow is deleted the
child's table is averaged over the dropped parent using that parent's
marginal law under the full canonical model, so members stay comparable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from . import estimands as est
from .errors import GraphError, ModelError
from .graph import Dag, build_dag, descendants, remove_edges, swig, swig_independent
from .scm import DiscreteScm, binary_cpt, exact_joint, loads_scm

Z, X, A, U, Y = "Z", "X", "A", "U", "Y"
NODES = (Z, X, A, U, Y)
BASE_EDGES = ((Z, X), (Z, A), (X, A), (X, Y), (A, Y), (U, X), (U, Y))
REMOVABLE = ((Z, X), (Z, A), (X, A), (X, Y), (U, X), (U, Y))

NAMED = {
    "structure1": frozenset(),
    "structure2": frozenset({(Z, X), (X, Y)}),
    "structure7": frozenset({(X, A)}),
    "structure8": frozenset({(X, A), (X, Y)}),
}

MATERIAL = 1e-3          # violated assumptions must move a functional by more than this
IDENTITY_TOL = est.IDENTITY_TOL

ESTIMANDS = ("itt", "ppe", "ate")
CANDIDATES = {
    "itt": ("gamma",),
    "ppe": ("phi", "za_mean", "chi", "std_z", "psi", "crude"),
    "ate": ("chi", "std_z", "psi", "crude", "phi", "za_mean"),
}
# functionals that never condition on assignment
ASSIGNMENT_FREE = ("psi", "crude")
TRUTH_KEY = {"itt": "ey_z", "ppe": "ey_za", "ate": "ey_a"}

# SWIG independences used to license the adjustment formulas in the full graph:
# (interventions, counterfactual, other, given)
STRUCTURE1_INDEPENDENCES = (
    ((Z,), "Y^z", (Z,), ()),
    ((Z, A), "Y^{a,z}", (Z,), ()),
    ((Z, A), "Y^{a,z}", ("A^z",), ("X^z", Z)),
    ((A,), "Y^a", (A,), (Z, X)),
)


def base_dag() -> Dag:
    return build_dag(NODES, BASE_EDGES)


def _canonical_tables() -> dict[str, np.ndarray]:
    return {
        Z: binary_cpt(0.5),
        U: binary_cpt(0.5),
        # rows (z, u) = 00, 01, 10, 11
        X: binary_cpt([0.2, 0.6, 0.5, 0.9]),
        # rows (z, x)
        A: binary_cpt([0.1, 0.3, 0.7, 0.9]),
        # rows (x, a, u) in lexicographic order
        Y: binary_cpt([0.1, 0.3, 0.5, 0.7, 0.2, 0.5, 0.6, 0.9]),
    }


def _structure2_tables() -> dict[str, np.ndarray]:
    t = _canonical_tables()
    t[X] = binary_cpt([0.3, 0.7])                  # rows u
    t[Y] = binary_cpt([0.2, 0.4, 0.6, 0.8])        # rows (a, u)
    return t


@lru_cache(maxsize=None)
def _base_model() -> DiscreteScm:
    return DiscreteScm(base_dag(), {v: 2 for v in NODES}, _canonical_tables())


@lru_cache(maxsize=None)
def _parent_marginals() -> dict[str, np.ndarray]:
    j = exact_joint(_base_model())
    return {v: j.marginal([v]).mass for v in (Z, X, U)}


def _drop_parent(table: np.ndarray, parents: tuple[str, ...], drop: str, weights: np.ndarray):
    ax = parents.index(drop)
    moved = np.moveaxis(table, ax, -1)                     # (..., child, dropped)
    mixed = moved @ weights
    return mixed, tuple(p for p in parents if p != drop)


def marginalized_model(removed: Iterable[tuple[str, str]]) -> DiscreteScm:
    """Canonical model on the base graph minus ``removed``."""
    removed = frozenset(removed)
    dag = remove_edges(base_dag(), removed)
    full = _base_model()
    weights = _parent_marginals()
    tables = {}
    for v in NODES:
        t, pars = full.cpt[v], full.parents(v)
        for p in list(pars):
            if (p, v) in removed:
                t, pars = _drop_parent(t, pars, p, weights[p])
        tables[v] = t
    return DiscreteScm(dag, {v: 2 for v in NODES}, tables)


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    removed_edges: frozenset
    model: DiscreteScm = field(repr=False)
    cpt_preset: str = "canonical"

    def __post_init__(self):
        bad = set(self.removed_edges) - set(REMOVABLE)
        if bad:
            raise GraphError(f"not removable base edge(s): {sorted(bad)}")
        if (Z, Y) in self.model.dag.edges:
            raise GraphError("scenario graphs never carry a direct Z -> Y arrow")
        if self.model.dag != self.dag:
            raise ModelError("model graph does not match the scenario graph")

    @property
    def base(self) -> Dag:
        return base_dag()

    @property
    def dag(self) -> Dag:
        return remove_edges(base_dag(), self.removed_edges)

    @property
    def canonical(self) -> bool:
        return self.cpt_preset == "canonical"


def edge_code(e: tuple[str, str]) -> str:
    return e[0] + e[1]


def parse_edge(token: str) -> tuple[str, str]:
    t = token.strip().replace("->", "").replace(" ", "")
    for e in REMOVABLE:
        if t == edge_code(e):
            return e
    raise GraphError(f"unknown removable edge {token!r} (expected one of "
                     f"{', '.join(edge_code(e) for e in REMOVABLE)})")


def lattice(removed: Iterable[tuple[str, str]] = (), cpt_preset: str = "canonical",
            name: str | None = None) -> ScenarioSpec:
    """Sub-structure of the base graph with ``removed`` arrows deleted.

    ``cpt_preset`` is ``"canonical"`` or a path to a serialized SCM whose
    graph must match. The structure-2 edge set maps to its own explicit
    canonical tables.
    """
    removed = frozenset(tuple(e) for e in removed)
    bad = removed - set(REMOVABLE)
    if bad:
        raise GraphError(f"unknown edge(s) {sorted(bad)}")
    if name is None:
        name = next((k for k, v in NAMED.items() if v == removed), None)
        if name is None:
            name = "lattice:" + ",".join(edge_code(e) for e in REMOVABLE if e in removed)
    if cpt_preset == "canonical":
        if removed == NAMED["structure2"]:
            model = DiscreteScm(remove_edges(base_dag(), removed), {v: 2 for v in NODES},
                                _structure2_tables())
        else:
            model = marginalized_model(removed)
    else:
        model = loads_scm(Path(cpt_preset).read_text())
        if model.dag != remove_edges(base_dag(), removed):
            raise ModelError(f"SCM in {cpt_preset} does not have the {name} graph")
    return ScenarioSpec(name, removed, model, cpt_preset)


def structure1(cpt_preset: str = "canonical") -> ScenarioSpec:
    return lattice(NAMED["structure1"], cpt_preset)


def structure2(cpt_preset: str = "canonical") -> ScenarioSpec:
    return lattice(NAMED["structure2"], cpt_preset)


def structure7(cpt_preset: str = "canonical") -> ScenarioSpec:
    return lattice(NAMED["structure7"], cpt_preset)


def structure8(cpt_preset: str = "canonical") -> ScenarioSpec:
    return lattice(NAMED["structure8"], cpt_preset)


def all_lattice_members() -> list[frozenset]:
    out = []
    for mask in range(2 ** len(REMOVABLE)):
        out.append(frozenset(e for i, e in enumerate(REMOVABLE) if mask >> i & 1))
    return out


def resolve_scenario(selector: str, cpt_preset: str = "canonical") -> ScenarioSpec:
    """``structure1|2|7|8`` or ``lattice:ZX,XY`` (empty list allowed)."""
    selector = selector.strip()
    if selector in NAMED:
        return lattice(NAMED[selector], cpt_preset)
    if selector.startswith("lattice:"):
        body = selector[len("lattice:"):]
        edges = [parse_edge(t) for t in body.split(",") if t.strip()]
        return lattice(edges, cpt_preset)
    raise GraphError(f"unknown scenario {selector!r}")


# --- expected relations -------------------------------------------------------------

@dataclass(frozen=True)
class RelationExpectation:
    """What the graph alone says about a scenario.

    ``licensed[e]`` lists functionals that identify the counterfactual means of
    estimand ``e``; ``unlicensed[e]`` the remaining candidates. ``must_hold`` and
    ``must_fail`` are pairs of flat report keys that have to agree (within
    1e-10) or, on canonical tables, differ (by more than 1e-3).
    """

    scenario: str
    exclusion_restriction: bool
    licensed: Mapping[str, tuple[str, ...]]
    unlicensed: Mapping[str, tuple[str, ...]]
    assignment_required: Mapping[str, bool]
    must_hold: tuple[tuple[str, str], ...]
    must_fail: tuple[tuple[str, str], ...]

    def __post_init__(self):
        for e in self.licensed:
            both = set(self.licensed[e]) & set(self.unlicensed.get(e, ()))
            if both:
                raise ModelError(f"{e}: {sorted(both)} both licensed and unlicensed")


def exclusion_restriction(g: Dag) -> bool:
    """True iff every directed path from Z to Y passes through A."""
    no_a = Dag(g.nodes, frozenset(e for e in g.edges if A not in e))
    return Y not in descendants(no_a, Z)


def swig_licenses(g: Dag) -> dict[str, bool]:
    """Which adjustment formulas the SWIG independences justify on ``g``."""
    sw_z = swig(g, {Z: "z"})
    sw_za = swig(g, {Z: "z", A: "a"})
    sw_a = swig(g, {A: "a"})
    y_za_indep_z = swig_independent(sw_za, Y, {Z})
    return {
        "gamma": swig_independent(sw_z, Y, {Z}),
        "phi": y_za_indep_z and swig_independent(sw_za, Y, {A}, {X, Z}),
        "za_mean": y_za_indep_z and swig_independent(sw_za, Y, {A}, {Z}),
        "chi": swig_independent(sw_a, Y, {A}, {Z, X}),
        "std_z": swig_independent(sw_a, Y, {A}, {Z}),
        "psi": swig_independent(sw_a, Y, {A}, {X}),
        "crude": swig_independent(sw_a, Y, {A}),
    }


def expected_relations(s: ScenarioSpec) -> RelationExpectation:
    g = s.dag
    excl = exclusion_restriction(g)
    ok = swig_licenses(g)
    own = {"itt": {"gamma"}, "ppe": {"phi", "za_mean"}, "ate": {"chi", "std_z", "psi", "crude"}}

    licensed, unlicensed = {}, {}
    for e in ESTIMANDS:
        lic = []
        for f in CANDIDATES[e]:
            if f in own[e]:
                good = ok[f]
            else:
                # a formula for the other joint/single intervention transfers
                # only when Y^{z,a} = Y^a
                good = excl and ok[f]
            if good:
                lic.append(f)
        licensed[e] = tuple(lic)
        unlicensed[e] = tuple(f for f in CANDIDATES[e] if f not in lic)

    required = {
        "itt": True,
        "ppe": not any(f in licensed["ppe"] for f in ASSIGNMENT_FREE),
        "ate": not any(f in licensed["ate"] for f in ASSIGNMENT_FREE),
    }

    must_hold: list[tuple[str, str]] = []
    must_fail: list[tuple[str, str]] = []
    for e in ESTIMANDS:
        for f in licensed[e]:
            if est.FUNCTIONALS[f] == _kind_of_estimand(e):
                must_hold.append((f"delta_{f}", f"truth.{e}"))
    if excl:
        must_hold.append(("truth.ppe", "truth.ate"))
        if "phi" in licensed["ppe"]:
            must_hold += [(f"phi.z0a{a}", f"phi.z1a{a}") for a in (0, 1)]
        for f in licensed["ate"]:
            must_hold.append((f"delta_{f}", "truth.ppe"))
    else:
        must_fail.append(("truth.ppe", "truth.ate"))
    return RelationExpectation(
        scenario=s.name,
        exclusion_restriction=excl,
        licensed=licensed,
        unlicensed=unlicensed,
        assignment_required=required,
        must_hold=tuple(dict.fromkeys(must_hold)),
        must_fail=tuple(must_fail),
    )


def _kind_of_estimand(e: str) -> str:
    return {"itt": "z", "ppe": "za", "ate": "a"}[e]


def discrepancy(flat: Mapping[str, float], functional: str, estimand: str) -> float:
    """max |functional - counterfactual mean| over every index of the estimand."""
    kind = est.FUNCTIONALS[functional]
    worst = 0.0
    for key, truth in flat.items():
        prefix = f"truth.{TRUTH_KEY[estimand]}."
        if not key.startswith(prefix):
            continue
        suffix = key[len(prefix):]
        z = int(suffix[1]) if suffix.startswith("z") else None
        a = int(suffix[-1]) if "a" in suffix else None
        if kind == "z":
            fkey = f"{functional}.z{z}"
        elif kind == "a":
            fkey = f"{functional}.a{a}"
        elif z is None:
            # za-indexed formula against E[Y^a]: must hold for every z
            vals = [flat[k] for k in flat if k.startswith(f"{functional}.z") and k.endswith(f"a{a}")]
            worst = max(worst, max(abs(v - truth) for v in vals))
            continue
        else:
            fkey = f"{functional}.z{z}a{a}"
        v = flat[fkey]
        if math.isnan(v):
            return math.inf
        worst = max(worst, abs(v - truth))
    return worst


@dataclass(frozen=True)
class RelationCheck:
    name: str
    passed: bool
    discrepancy: float
    tolerance: float
    kind: str  # "identifies" | "biased" | "equal" | "differ"


def verify_relations(s: ScenarioSpec, report: est.EstimandReport | None = None,
                     expect: RelationExpectation | None = None) -> list[RelationCheck]:
    """Check every declared relation against the exact model.

    Bias and inequality claims are only checked on canonical tables; arbitrary
    tables may satisfy an equality by coincidence.
    """
    report = report or est.full_report(s.model)
    expect = expect or expected_relations(s)
    flat = report.to_flat()
    out: list[RelationCheck] = []
    for e in ESTIMANDS:
        for f in expect.licensed[e]:
            d = discrepancy(flat, f, e)
            out.append(RelationCheck(f"{f}~{e}", d <= IDENTITY_TOL, d, IDENTITY_TOL, "identifies"))
        if s.canonical:
            for f in expect.unlicensed[e]:
                d = discrepancy(flat, f, e)
                out.append(RelationCheck(f"{f}!~{e}", d > MATERIAL, d, MATERIAL, "biased"))
    for lhs, rhs in expect.must_hold:
        d = abs(flat[lhs] - flat[rhs])
        out.append(RelationCheck(f"{lhs}=={rhs}", d <= IDENTITY_TOL, d, IDENTITY_TOL, "equal"))
    if s.canonical:
        for lhs, rhs in expect.must_fail:
            d = abs(flat[lhs] - flat[rhs])
            out.append(RelationCheck(f"{lhs}!={rhs}", d > MATERIAL, d, MATERIAL, "differ"))
    return out
