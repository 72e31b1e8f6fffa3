"""Slow, independent reference computations used only as test oracles.

Nothing here imports the code paths it checks: d-separation is decided by
enumerating every simple path, joints and interventional means are summed
cell by cell with plain Python loops, and functionals are computed from a
dict of cell probabilities.
"""

import itertools
import math


def _desc(edges, v):
    out, frontier = set(), {v}
    while frontier:
        nxt = {c for p, c in edges if p in frontier} - out
        out |= nxt
        frontier = nxt
    return out


def descendants_closure(edges, v):
    return _desc(set(edges), v)


def simple_paths(nodes, edges, a, b):
    """All simple paths a ... b in the skeleton, as node lists."""
    nbrs = {v: set() for v in nodes}
    for p, c in edges:
        nbrs[p].add(c)
        nbrs[c].add(p)
    out = []

    def walk(path):
        v = path[-1]
        if v == b:
            out.append(list(path))
            return
        for w in nbrs[v]:
            if w not in path:
                path.append(w)
                walk(path)
                path.pop()

    walk([a])
    return out


def path_open(path, edges, given):
    edges = set(edges)
    for i in range(1, len(path) - 1):
        prev, v, nxt = path[i - 1], path[i], path[i + 1]
        collider = (prev, v) in edges and (nxt, v) in edges
        if collider:
            if v not in given and not (_desc(edges, v) & set(given)):
                return False
        elif v in given:
            return False
    return True


def dsep_bruteforce(nodes, edges, set_a, set_b, given):
    for a in set_a:
        for b in set_b:
            for path in simple_paths(nodes, edges, a, b):
                if path_open(path, edges, given):
                    return False
    return True


def assignments(scm):
    return itertools.product(*(range(scm.cardinality[v]) for v in scm.nodes))


def joint_by_loops(scm, set_to=None):
    """{assignment tuple: probability} by multiplying table entries one by one."""
    set_to = set_to or {}
    out = {}
    for vals in assignments(scm):
        row = dict(zip(scm.nodes, vals))
        p = 1.0
        for v in scm.nodes:
            if v in set_to:
                p *= 1.0 if row[v] == set_to[v] else 0.0
            else:
                idx = tuple(row[q] for q in scm.parents(v)) + (row[v],)
                p *= float(scm.cpt[v][idx])
        out[vals] = p
    return out


def do_mean(scm, set_to, target="Y"):
    pos = scm.nodes.index(target)
    return sum(p * vals[pos] for vals, p in joint_by_loops(scm, set_to).items())


def observed_dict(scm, hide=("U",)):
    """{(z, x, a, y): prob} with hidden nodes summed out."""
    keep = [scm.nodes.index(v) for v in ("Z", "X", "A", "Y")]
    out = {}
    for vals, p in joint_by_loops(scm).items():
        k = tuple(vals[i] for i in keep)
        out[k] = out.get(k, 0.0) + p
    return out


def _P(d, **fix):
    idx = {"z": 0, "x": 1, "a": 2, "y": 3}
    return sum(p for k, p in d.items() if all(k[idx[n]] == v for n, v in fix.items()))


def _EY(d, **fix):
    return _P(d, y=1, **fix) / _P(d, **fix)


def phi_loops(d, z, a):
    return sum(_P(d, z=z, x=x) / _P(d, z=z) * _EY(d, z=z, x=x, a=a) for x in (0, 1))


def chi_loops(d, a):
    return sum(_P(d, z=z, x=x) * _EY(d, z=z, x=x, a=a) for z in (0, 1) for x in (0, 1))


def psi_loops(d, a):
    return sum(_P(d, x=x) * _EY(d, x=x, a=a) for x in (0, 1))


def gamma_loops(d, z):
    return _EY(d, z=z)


def cmi(table, a_axes, b_axes, c_axes):
    """Conditional mutual information I(A; B | C) in nats from a full joint array."""
    import numpy as np

    n = table.ndim
    keep = sorted(set(a_axes) | set(b_axes) | set(c_axes))
    drop = tuple(i for i in range(n) if i not in keep)
    p = table.sum(axis=drop, keepdims=True) if drop else table

    def marg(axes):
        gone = tuple(i for i in keep if i not in axes)
        return p.sum(axis=gone, keepdims=True) if gone else p

    p_ac, p_bc, p_c = marg(set(a_axes) | set(c_axes)), marg(set(b_axes) | set(c_axes)), marg(set(c_axes))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = p * p_c / (p_ac * p_bc)
        terms = np.where(p > 0, p * np.log(np.where(p > 0, ratio, 1.0)), 0.0)
    return float(max(terms.sum(), 0.0)) if math.isfinite(terms.sum()) else math.inf
