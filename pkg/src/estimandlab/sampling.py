"""Finite-sample layer: simulate trials, estimate, bootstrap, falsify.

Randomness comes from numpy's counter-based Philox generator keyed by a
``SeedSequence``. Every consumer draws from its own spawn key (data
generation uses ``(0,)``, bootstrap replicate ``i`` uses ``(1, i)``), so
results do not depend on evaluation order or on parallel scheduling.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import estimands as est
from .errors import EmptyStrataError, ModelError, PositivityError
from .scm import DiscreteScm, JointTable

GENERATOR_ID = "numpy-philox4x64-10/seedsequence"
COLUMNS = ("z", "x", "a", "y")
OBSERVED = est.OBSERVED
MIN_REPLICATES = 100
ROUNDING = 1e-12


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``seed`` and spawn key ``key``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=key)))


@dataclass(frozen=True)
class TrialDataset:
    """Observed trial records; the latent U is never stored."""

    z: np.ndarray
    x: np.ndarray
    a: np.ndarray
    y: np.ndarray
    cardinalities: tuple[int, int, int, int] = (2, 2, 2, 2)
    seed: int | None = None
    provenance: str = "custom"
    generator: str = GENERATOR_ID

    def __post_init__(self):
        cols = []
        for name, col, k in zip(COLUMNS, (self.z, self.x, self.a, self.y), self.cardinalities):
            col = np.asarray(col, dtype=np.int64)
            col.setflags(write=False)
            if col.ndim != 1:
                raise ModelError(f"column {name} must be one-dimensional")
            if col.size and (col.min() < 0 or col.max() >= k):
                raise ModelError(f"column {name} has values outside 0..{k - 1}")
            cols.append(col)
        if len({c.size for c in cols}) != 1:
            raise ModelError("columns differ in length")
        for name, col in zip(COLUMNS, cols):
            object.__setattr__(self, name, col)
        object.__setattr__(self, "cardinalities", tuple(int(k) for k in self.cardinalities))

    @property
    def n(self) -> int:
        return int(self.z.size)

    def cell_counts(self) -> np.ndarray:
        """Counts over (Z, X, A, Y) cells, shape = cardinalities."""
        flat = np.ravel_multi_index((self.z, self.x, self.a, self.y), self.cardinalities)
        return np.bincount(flat, minlength=int(np.prod(self.cardinalities))).reshape(self.cardinalities)

    def provenance_dict(self) -> dict:
        return {"scenario": self.provenance, "seed": self.seed, "n": self.n,
                "generator": self.generator, "cardinalities": list(self.cardinalities)}


def simulate(m: DiscreteScm, n: int, seed: int, scenario: str = "custom") -> TrialDataset:
    """Draw ``n`` participants by ancestral sampling; unobserved nodes are dropped."""
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ModelError(f"n must be a positive integer, got {n!r}")
    missing = set(OBSERVED) - set(m.nodes)
    if missing:
        raise ModelError(f"model lacks observed node(s) {sorted(missing)}")
    rng = stream(seed, 0)
    draws: dict[str, np.ndarray] = {}
    for v in m.dag.topological_order:
        table = m.cpt[v]
        pars = m.parents(v)
        rows = table[tuple(draws[p] for p in pars)] if pars else np.broadcast_to(table, (n, table.shape[-1]))
        cum = np.cumsum(rows, axis=-1)
        u = rng.random(n)
        # inverse CDF; clamp guards against rows summing to 1 - eps
        draws[v] = np.minimum((u[:, None] >= cum).sum(axis=-1), table.shape[-1] - 1)
    card = tuple(m.cardinality[v] for v in OBSERVED)
    return TrialDataset(draws["Z"], draws["X"], draws["A"], draws["Y"], card, int(seed), scenario)


def empirical_joint(d: TrialDataset) -> JointTable:
    """Relative frequencies over (Z, X, A, Y); empty cells stay zero."""
    if d.n < 1:
        raise ModelError("empty dataset")
    return JointTable(OBSERVED, d.cardinalities, d.cell_counts() / d.n)


# --- bootstrap ------------------------------------------------------------------------

@dataclass(frozen=True)
class EstimateWithCi:
    point: float
    ci_low: float
    ci_high: float
    se: float
    replicates: int
    failed: int = 0


def replicate_tables(d: TrialDataset, replicates: int, seed: int) -> np.ndarray:
    """Bootstrap joints, shape ``(B, |Z|, |X|, |A|, |Y|)``.

    Resampling n rows with replacement is the same as a multinomial draw of
    cell counts with the observed frequencies, which is what each replicate
    stream does.
    """
    counts = d.cell_counts().ravel()
    freq = counts / d.n
    out = np.empty((replicates, counts.size))
    for i in range(replicates):
        out[i] = stream(seed, 1, i).multinomial(d.n, freq)
    return (out / d.n).reshape((replicates,) + d.cardinalities)


def _percentile_ci(point: float, reps: np.ndarray, alpha: float) -> tuple[float, float]:
    lo, hi = np.quantile(reps, [alpha / 2, 1 - alpha / 2])
    # percentile limits can straddle the point only by Monte Carlo error; widen
    return float(min(lo, point)), float(max(hi, point))


def bootstrap(d: TrialDataset, functional: str | Sequence[str], replicates: int = 500,
              seed: int = 0, alpha: float = 0.05, values=None):
    """Nonparametric bootstrap with percentile intervals.

    ``functional`` is a flat key (``"delta_psi"``, ``"phi.z1a1"``) or a list
    of keys, in which case a dict of results is returned. Replicates on which
    a functional is undefined are dropped and counted in ``failed``.
    """
    if replicates < MIN_REPLICATES:
        raise ModelError(f"need at least {MIN_REPLICATES} bootstrap replicates")
    keys = [functional] if isinstance(functional, str) else list(functional)
    p_hat = empirical_joint(d).mass
    yv = np.arange(d.cardinalities[3], dtype=float) if values is None else np.asarray(values, float)
    points = est.flat_values(p_hat, yv)
    reps = est.flat_values(replicate_tables(d, replicates, seed), yv)
    results = {}
    for k in keys:
        if k not in points:
            raise ModelError(f"unknown functional key {k!r}")
        point = float(points[k])
        if math.isnan(point):
            raise PositivityError(f"{k} undefined on the observed data")
        r = reps[k]
        ok = r[~np.isnan(r)]
        if ok.size == 0:
            raise PositivityError(f"{k}: every bootstrap replicate is degenerate")
        if np.ptp(ok) <= ROUNDING * max(1.0, abs(point)):
            # every replicate agrees up to floating-point noise: a constant functional
            lo = hi = point
            se = 0.0
        else:
            lo, hi = _percentile_ci(point, ok, alpha)
            se = float(ok.std(ddof=1)) if ok.size > 1 else 0.0
        results[k] = EstimateWithCi(point, lo, hi, se, int(ok.size), int(r.size - ok.size))
    return results[keys[0]] if isinstance(functional, str) else results


# --- falsification --------------------------------------------------------------------

def implication_gaps(p: np.ndarray, yv: np.ndarray) -> dict[str, np.ndarray]:
    """Discrepancy vectors whose zero-ness the exclusion structure implies.

    ``phi_psi``: phi(z,a) - psi(a) for all (z,a) (the headline statistic);
    ``z_constancy``: phi(z,a) - phi(0,a) for z > 0;
    ``psi_chi``: psi(a) - chi(a).
    """
    k = est.plugin_kernels(p, yv)
    phi, psi, chi = k["phi"], k["psi"], k["chi"]
    lead = phi.shape[:-2]
    out = {"phi_psi": (phi - psi[..., None, :]).reshape(lead + (-1,))}
    if phi.shape[-2] > 1:
        out["z_constancy"] = (phi[..., 1:, :] - phi[..., :1, :]).reshape(lead + (-1,))
    out["psi_chi"] = psi - chi
    return out


def falsification_statistic(j: JointTable, values=None) -> dict[str, float]:
    """Max-abs gap per implication on a table (exact or empirical)."""
    p, yv = est.observed_arrays(j, values)
    return {k: float(np.max(np.abs(v))) for k, v in implication_gaps(p, yv).items()}


@dataclass(frozen=True)
class FalsificationResult:
    statistic: float
    p_value: float
    reject: bool
    alpha: float
    components: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    replicates: int = 0
    failed: int = 0

    def to_flat(self) -> dict:
        out = {"statistic": self.statistic, "p_value": self.p_value,
               "reject": self.reject, "alpha": self.alpha,
               "replicates": self.replicates, "failed_replicates": self.failed}
        for name, (stat, pv) in self.components.items():
            out[f"component.{name}.statistic"] = stat
            out[f"component.{name}.p_value"] = pv
        return out


def _empty_zxa(d: TrialDataset) -> list[dict[str, int]]:
    c = d.cell_counts().sum(-1)
    return [dict(zip("ZXA", idx)) for idx in zip(*np.nonzero(c == 0))]


def falsification_test(d: TrialDataset, replicates: int = 500, seed: int = 0,
                       alpha: float = 0.05, values=None) -> FalsificationResult:
    """Bootstrap max-gap test of phi(z,a) = psi(a).

    T = max |phi(z,a) - psi(a)|. Under the null the recentred bootstrap
    gaps ``gap* - gap_hat`` mimic the sampling law of ``gap``, so the p-value
    is the share of ``max|gap* - gap_hat|`` at least as large as T (with the
    usual +1 correction). The two component implications are tested the
    same way and reported alongside.
    """
    if replicates < MIN_REPLICATES:
        raise ModelError(f"need at least {MIN_REPLICATES} bootstrap replicates")
    empty = [{k: int(v) for k, v in c.items()} for c in _empty_zxa(d)]
    if empty:
        raise EmptyStrataError(f"empty (z, x, a) strata: {empty}", empty)
    yv = np.arange(d.cardinalities[3], dtype=float) if values is None else np.asarray(values, float)
    hat = implication_gaps(empirical_joint(d).mass, yv)
    boot = implication_gaps(replicate_tables(d, replicates, seed), yv)

    comps, failed = {}, 0
    for name in hat:
        g = boot[name]
        good = ~np.isnan(g).any(axis=-1)
        if name == "phi_psi":
            failed = int((~good).sum())
        if not good.any():
            raise PositivityError("every bootstrap replicate is degenerate")
        t = float(np.max(np.abs(hat[name])))
        t_star = np.max(np.abs(g[good] - hat[name]), axis=-1)
        pv = float((1 + np.sum(t_star >= t)) / (1 + t_star.size))
        comps[name] = (t, pv)
    t, pv = comps.pop("phi_psi")
    return FalsificationResult(t, pv, pv < alpha, alpha, comps, replicates - failed, failed)


# --- files ------------------------------------------------------------------------------

def write_dataset(d: TrialDataset, path: str | Path) -> Path:
    """Write ``z,x,a,y`` rows plus a ``<path>.provenance.json`` side file."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        w.writerows(np.column_stack([d.z, d.x, d.a, d.y]).tolist())
    side = provenance_path(path)
    side.write_text(json.dumps(d.provenance_dict(), indent=2, sort_keys=True) + "\n")
    return side


def provenance_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".provenance.json")


def read_dataset(path: str | Path) -> TrialDataset:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != COLUMNS:
            raise ModelError(f"{path}: header must be {','.join(COLUMNS)}")
        rows = [[int(v) for v in r] for r in reader if r]
    arr = np.array(rows, dtype=np.int64).reshape(-1, 4)
    side = provenance_path(path)
    meta: Mapping = json.loads(side.read_text()) if side.exists() else {}
    if "cardinalities" in meta:
        card = tuple(int(k) for k in meta["cardinalities"])
    else:
        card = tuple(max(2, int(arr[:, i].max()) + 1) if len(arr) else 2 for i in range(4))
    return TrialDataset(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], card,
                        meta.get("seed"), meta.get("scenario", path.stem),
                        meta.get("generator", GENERATOR_ID))
