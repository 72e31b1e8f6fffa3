"""Observed-data functionals over the law of (Z, X, A, Y).

Plug-in (standardization) forms are canonical; the inverse-probability
weighted forms are computed along a separate route and serve as a check.

All kernels operate on an array ``p`` of shape ``(..., |Z|, |X|, |A|, |Y|)``
so a stack of bootstrap tables is evaluated in one call. A stratum with zero
mass that a sum never needs is skipped; a conditional mean that is needed but
undefined yields NaN, which the scalar wrappers turn into
:class:`~estimandlab.errors.PositivityError`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ModelError, PositivityError
from .scm import DiscreteScm, JointTable, check_positivity, counterfactual_mean, observed_joint

log = logging.getLogger(__name__)

Z, X, A, Y = "Z", "X", "A", "Y"
OBSERVED = (Z, X, A, Y)
IDENTITY_TOL = 1e-10

# functional name -> index kind; "z" = indexed by assignment, "za" by
# (assignment, treatment), "a" by treatment
FUNCTIONALS = {
    "gamma": "z",
    "phi": "za",
    "chi": "a",
    "psi": "a",
    "crude": "a",
    "za_mean": "za",
    "std_z": "a",
    "ipw_gamma": "z",
    "ipw_phi": "za",
    "ipw_chi": "a",
    "ipw_psi": "a",
}
PLUGIN = ("gamma", "phi", "chi", "psi", "crude", "za_mean", "std_z")
IPW_TWIN = {"ipw_gamma": "gamma", "ipw_phi": "phi", "ipw_chi": "chi", "ipw_psi": "psi"}
# which counterfactual mean each index kind targets
TRUTH_OF_KIND = {"z": "ey_z", "za": "ey_za", "a": "ey_a"}


def observed_arrays(j: JointTable, values: Sequence[float] | None = None):
    missing = [v for v in OBSERVED if v not in j.variables]
    if missing:
        raise ModelError(f"joint table lacks variable(s) {missing}")
    p = j.marginal(OBSERVED).mass
    ny = j.card(Y)
    yv = np.arange(ny, dtype=float) if values is None else np.asarray(values, dtype=float)
    if yv.shape != (ny,):
        raise ModelError(f"value map needs {ny} entries")
    return p, yv


def _div(num, den):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)


def _weighted(w, v):
    # w * v where w > 0, else 0 even if v is NaN (stratum never visited)
    return np.where(w > 0, w * v, 0.0)


def plugin_kernels(p: np.ndarray, yv: np.ndarray) -> dict[str, np.ndarray]:
    """All plug-in functionals. Output arrays have the batch shape plus
    ``(|Z|,)``, ``(|Z|, |A|)`` or ``(|A|,)`` per :data:`FUNCTIONALS`."""
    sy = (p * yv).sum(-1)                 # (..., Z, X, A)   E[Y 1{z,x,a}]
    pzxa = p.sum(-1)
    pzx = pzxa.sum(-1)                    # (..., Z, X)
    pz = pzx.sum(-1)                      # (..., Z)
    ey_zxa = _div(sy, pzxa)

    gamma = _div(sy.sum((-2, -1)), pz)
    inner = _weighted(pzx[..., None], ey_zxa)           # (..., Z, X, A)
    phi = _div(inner.sum(-2), pz[..., None])
    chi = inner.sum((-3, -2))

    px = pzx.sum(-2)                      # (..., X)
    pxa = pzxa.sum(-3)                    # (..., X, A)
    sxa = sy.sum(-3)
    psi = _weighted(px[..., None], _div(sxa, pxa)).sum(-2)

    crude = _div(sxa.sum(-2), pxa.sum(-2))
    za_mean = _div(sy.sum(-2), pzxa.sum(-2))            # (..., Z, A)
    std_z = _weighted(pz[..., None], za_mean).sum(-2)
    return {"gamma": gamma, "phi": phi, "chi": chi, "psi": psi,
            "crude": crude, "za_mean": za_mean, "std_z": std_z}


def ipw_kernels(p: np.ndarray, yv: np.ndarray) -> dict[str, np.ndarray]:
    """Weighted re-expressions: means of ``1{...} Y / propensity`` under ``p``."""
    pzxa = p.sum(-1)
    pzx = pzxa.sum(-1)
    pz = pzx.sum(-1)
    pxa = pzxa.sum(-3)
    px = pxa.sum(-1)

    # inverse weights per (z, x, a) cell; strata with no mass carry weight 0,
    # a zero propensity inside a populated stratum is undefined (NaN)
    def inverse(prop, stratum):
        with np.errstate(divide="ignore"):
            inv = np.where(prop > 0, 1.0 / np.where(prop > 0, prop, 1.0), np.nan)
        return np.where(stratum > 0, inv, 0.0)

    w_zx = inverse(_div(pzxa, pzx[..., None]), pzx[..., None])          # 1/P(A=a|Z,X)
    w_x = inverse(_div(pxa, px[..., None]), px[..., None])              # 1/P(A=a|X)
    w_z = inverse(pz, np.ones_like(pz))                                 # 1/P(Z=z)

    ywt = p * yv                                                        # Y-weighted cells
    with np.errstate(invalid="ignore"):
        ipw_chi = (ywt * w_zx[..., None]).sum((-4, -3, -1))
        ipw_psi = (ywt * w_x[..., None, :, :, None]).sum((-4, -3, -1))
        ipw_phi = (ywt * w_zx[..., None] * w_z[..., :, None, None, None]).sum((-3, -1))
        ipw_gamma = (ywt * w_z[..., :, None, None, None]).sum((-3, -2, -1))
    return {"ipw_gamma": ipw_gamma, "ipw_phi": ipw_phi, "ipw_chi": ipw_chi, "ipw_psi": ipw_psi}


def _keys_for(name: str, nz: int, na: int) -> list[tuple[str, tuple]]:
    kind = FUNCTIONALS[name]
    if kind == "z":
        return [(f"{name}.z{z}", (z,)) for z in range(nz)]
    if kind == "a":
        return [(f"{name}.a{a}", (a,)) for a in range(na)]
    return [(f"{name}.z{z}a{a}", (z, a)) for z in range(nz) for a in range(na)]


def contrast_index(kind: str) -> tuple[tuple, tuple]:
    """(treated index, control index) used by ``delta_<name>``."""
    if kind == "za":
        return (1, 1), (0, 0)
    return (1,), (0,)


def flat_values(p: np.ndarray, yv: np.ndarray) -> dict[str, np.ndarray]:
    """Every functional, its IPW twin and its contrast under flat key names."""
    nz, na = p.shape[-4], p.shape[-2]
    arrays = plugin_kernels(p, yv)
    arrays.update(ipw_kernels(p, yv))
    out: dict[str, np.ndarray] = {}
    for name in FUNCTIONALS:
        arr = arrays[name]
        kind = FUNCTIONALS[name]
        for key, idx in _keys_for(name, nz, na):
            out[key] = arr[(Ellipsis,) + idx]
        hi, lo = contrast_index(kind)
        out[f"delta_{name}"] = arr[(Ellipsis,) + hi] - arr[(Ellipsis,) + lo]
    return out


# --- scalar API ---------------------------------------------------------------

def _relevant_zero_cells(j: JointTable, over, fixed: Mapping[str, int]):
    res = check_positivity(j, over)
    return [c for c in res.offending if all(c.get(k) == v for k, v in fixed.items())]


def _scalar(name: str, j: JointTable, idx: tuple, fixed: Mapping[str, int], over,
            values=None) -> float:
    p, yv = observed_arrays(j, values)
    nz, na = p.shape[0], p.shape[2]
    for k, v in fixed.items():
        lim = nz if k == Z else na
        if not 0 <= v < lim:
            raise ModelError(f"{k}={v} out of range")
    kern = ipw_kernels if name.startswith("ipw_") else plugin_kernels
    val = float(kern(p, yv)[name][idx])
    if math.isnan(val):
        cells = _relevant_zero_cells(j, over, fixed)
        raise PositivityError(f"{name} undefined: zero-mass cell(s) {cells}", cells)
    skipped = _relevant_zero_cells(j, [v for v in over if v != A], {k: v for k, v in fixed.items() if k != A})
    if skipped:
        log.info("%s%s: skipped zero-mass strata %s", name, idx, skipped)
    return val


def gamma(j: JointTable, z: int, values=None) -> float:
    """E[Y | Z=z]."""
    return _scalar("gamma", j, (z,), {Z: z}, [Z], values)


def phi(j: JointTable, z: int, a: int, values=None) -> float:
    """E[ E[Y | Z, X, A=a] | Z=z ] = sum_x P(x|z) E[Y|z,x,a]."""
    return _scalar("phi", j, (z, a), {Z: z, A: a}, [Z, X, A], values)


def chi(j: JointTable, a: int, values=None) -> float:
    """E[ E[Y | Z, X, A=a] ], standardizing over the joint law of (Z, X)."""
    return _scalar("chi", j, (a,), {A: a}, [Z, X, A], values)


def psi(j: JointTable, a: int, values=None) -> float:
    """E[ E[Y | X, A=a] ], which never looks at assignment."""
    return _scalar("psi", j, (a,), {A: a}, [X, A], values)


def crude(j: JointTable, a: int, values=None) -> float:
    """Unadjusted E[Y | A=a]."""
    return _scalar("crude", j, (a,), {A: a}, [A], values)


def za_mean(j: JointTable, z: int, a: int, values=None) -> float:
    """E[Y | Z=z, A=a]."""
    return _scalar("za_mean", j, (z, a), {Z: z, A: a}, [Z, A], values)


def std_z(j: JointTable, a: int, values=None) -> float:
    """E[ E[Y | Z, A=a] ], standardizing over assignment only."""
    return _scalar("std_z", j, (a,), {A: a}, [Z, A], values)


def ipw_gamma(j: JointTable, z: int, values=None) -> float:
    return _scalar("ipw_gamma", j, (z,), {Z: z}, [Z], values)


def ipw_phi(j: JointTable, z: int, a: int, values=None) -> float:
    return _scalar("ipw_phi", j, (z, a), {Z: z, A: a}, [Z, X, A], values)


def ipw_chi(j: JointTable, a: int, values=None) -> float:
    return _scalar("ipw_chi", j, (a,), {A: a}, [Z, X, A], values)


def ipw_psi(j: JointTable, a: int, values=None) -> float:
    return _scalar("ipw_psi", j, (a,), {A: a}, [X, A], values)


def evaluate(j: JointTable, key: str, values=None) -> float:
    """Evaluate a flat key such as ``"phi.z1a0"`` or ``"delta_psi"``; NaN if undefined."""
    p, yv = observed_arrays(j, values)
    out = flat_values(p, yv)
    if key not in out:
        raise ModelError(f"unknown functional key {key!r}")
    return float(out[key])


# --- counterfactual truths ------------------------------------------------------

def truths(m: DiscreteScm, values=None) -> dict[str, float]:
    """Exact E[Y^z], E[Y^{z,a}], E[Y^a] and the three contrasts."""
    nz, na = m.cardinality[Z], m.cardinality[A]
    out: dict[str, float] = {}
    for z in range(nz):
        out[f"truth.ey_z.z{z}"] = counterfactual_mean(m, {Z: z}, Y, values)
    for z in range(nz):
        for a in range(na):
            out[f"truth.ey_za.z{z}a{a}"] = counterfactual_mean(m, {Z: z, A: a}, Y, values)
    for a in range(na):
        out[f"truth.ey_a.a{a}"] = counterfactual_mean(m, {A: a}, Y, values)
    out["truth.itt"] = out["truth.ey_z.z1"] - out["truth.ey_z.z0"]
    out["truth.ppe"] = out["truth.ey_za.z1a1"] - out["truth.ey_za.z0a0"]
    out["truth.ate"] = out["truth.ey_a.a1"] - out["truth.ey_a.a0"]
    return out


def truth_for(name: str, truth: Mapping[str, float], idx: tuple) -> float:
    """Counterfactual mean that functional ``name`` at ``idx`` targets."""
    kind = FUNCTIONALS[name]
    suffix = {"z": "z{}", "a": "a{}", "za": "z{}a{}"}[kind].format(*idx)
    return truth[f"truth.{TRUTH_OF_KIND[kind]}.{suffix}"]


# --- report -----------------------------------------------------------------------

@dataclass
class EstimandReport:
    """Every functional, contrast and IPW twin; truths and verdicts when the
    generating model is known."""

    gamma: dict
    delta_gamma: float
    phi: dict
    delta_phi: float
    chi: dict
    delta_chi: float
    psi: dict
    delta_psi: float
    crude: dict
    delta_crude: float
    za_mean: dict
    delta_za_mean: float
    std_z: dict
    delta_std_z: float
    ipw_gamma: dict
    ipw_phi: dict
    ipw_chi: dict
    ipw_psi: dict
    truth: dict = field(default_factory=dict)
    verdict: dict = field(default_factory=dict)
    ipw_agrees: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    @property
    def positivity_ok(self) -> bool:
        return not self.flags

    @property
    def implication_holds(self) -> bool:
        """Testable restriction of the exclusion structure: phi(z, a) constant
        in z and psi(a) = chi(a), each within ``IDENTITY_TOL``."""
        z_const = all(_close(v, self.phi[(0,) + idx[1:]], IDENTITY_TOL) for idx, v in self.phi.items())
        return z_const and all(_close(v, self.chi[idx], IDENTITY_TOL) for idx, v in self.psi.items())

    def to_flat(self) -> dict[str, float | bool]:
        out: dict[str, float | bool] = {}
        for name in FUNCTIONALS:
            table = getattr(self, name)
            for idx, v in table.items():
                out[_key(name, idx)] = v
            if not name.startswith("ipw_"):
                out[f"delta_{name}"] = getattr(self, f"delta_{name}")
        out.update(self.truth)
        for k, v in self.verdict.items():
            out[f"verdict.{k}"] = v
        for k, v in self.ipw_agrees.items():
            out[f"ipw_agrees.{k}"] = v
        out["implication_holds"] = self.implication_holds
        return out


def _key(name: str, idx: tuple) -> str:
    kind = FUNCTIONALS[name]
    return f"{name}." + {"z": "z{}", "a": "a{}", "za": "z{}a{}"}[kind].format(*idx)


def _close(a: float, b: float, tol: float) -> bool:
    return not (math.isnan(a) or math.isnan(b)) and abs(a - b) <= tol


def full_report(source: DiscreteScm | JointTable, values=None) -> EstimandReport:
    """Bundle all functionals; with an SCM also truths and identification verdicts.

    Positivity failures never raise here: affected entries are NaN and the
    offending (z, x, a) cells are listed in ``flags``.
    """
    model = source if isinstance(source, DiscreteScm) else None
    if model is not None:
        hidden = [v for v in model.nodes if v not in OBSERVED]
        j = observed_joint(model, hidden)
    else:
        j = source
    p, yv = observed_arrays(j, values)
    nz, na = p.shape[0], p.shape[2]
    plug = plugin_kernels(p, yv)
    ipw = ipw_kernels(p, yv)

    tables = {}
    for name in FUNCTIONALS:
        arr = plug[name] if name in plug else ipw[name]
        tables[name] = {idx: float(arr[idx]) for _, idx in _keys_for(name, nz, na)}
    deltas = {}
    for name in PLUGIN:
        hi, lo = contrast_index(FUNCTIONALS[name])
        deltas[f"delta_{name}"] = tables[name][hi] - tables[name][lo]

    flags = [f"zero-mass cell {c}" for c in check_positivity(j, [Z, X, A]).offending]
    rep = EstimandReport(**tables, **deltas, flags=flags)

    for twin, base in IPW_TWIN.items():
        rep.ipw_agrees[base] = all(_close(tables[twin][i], tables[base][i], IDENTITY_TOL)
                                   for i in tables[base])
    if model is not None:
        rep.truth = truths(model, values)
        for name in PLUGIN:
            rep.verdict[name] = all(_close(v, truth_for(name, rep.truth, idx), IDENTITY_TOL)
                                    for idx, v in tables[name].items())
    return rep


def format_number(v, digits: int) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    v = float(v)
    if math.isnan(v):
        return "nan"
    s = f"{v:.{digits}g}"
    return "0" if s in ("-0", "0") else s


def render_text(flat: Mapping[str, object], digits: int = 4) -> str:
    """Aligned two-column table for humans."""
    width = max((len(k) for k in flat), default=0)
    return "".join(f"{k:<{width}}  {format_number(v, digits) if not isinstance(v, str) else v}\n"
                   for k, v in flat.items())
