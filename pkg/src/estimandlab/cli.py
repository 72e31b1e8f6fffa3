"""Command-line front end.

Exit codes: 0 pass, 1 statistical rejection or failed expected relation,
2 usage error, 3 degenerate data (positivity / empty strata).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from . import estimands as est
from . import sampling, scenarios
from .errors import EstimandLabError, GraphError, ModelError, PositivityError
from .graph import Dag, d_connecting_trail, d_separated, format_trail, parse_graph, swig, swig_independent

EXIT_OK, EXIT_REJECT, EXIT_USAGE, EXIT_DEGENERATE = 0, 1, 2, 3
SEED_ENV = "ESTIMANDLAB_SEED"
STRUCTURED_DIGITS = 12
TEXT_DIGITS = 4


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    scenario: str | None = None
    preset: str = "canonical"
    n: int | None = None
    seed: int = 0
    bootstrap: int = 500
    alpha: float = 0.05
    format: str = "text"
    out: str | None = None
    query: str | None = None
    data: str | None = None
    graph: str | None = None
    exact: bool = False

    def __post_init__(self):
        for name in ("n", "seed", "bootstrap"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ModelError(f"--{name} must be nonnegative")
        if not 0 < self.alpha < 1:
            raise ModelError("--alpha must lie in (0, 1)")
        if self.format not in ("text", "csv", "structured"):
            raise ModelError(f"unknown format {self.format!r}")


# --- rendering ------------------------------------------------------------------------

def _structured_value(v):
    if isinstance(v, bool):
        return v
    if isinstance(v, int):
        return v
    if isinstance(v, float):
        return None if math.isnan(v) else float(f"{v:.{STRUCTURED_DIGITS}g}")
    return v


def render(flat: Mapping[str, object], fmt: str) -> str:
    if fmt == "structured":
        return json.dumps({k: _structured_value(v) for k, v in flat.items()}, indent=1) + "\n"
    if fmt == "csv":
        lines = ["key,value"]
        for k, v in flat.items():
            lines.append(f"{k},{_cell(v, STRUCTURED_DIGITS)}")
        return "\n".join(lines) + "\n"
    return est.render_text({k: _cell(v, TEXT_DIGITS) for k, v in flat.items()}, TEXT_DIGITS)


def _cell(v, digits: int) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, int) and not isinstance(v, bool):
        return str(v)
    return est.format_number(v, digits)


def _emit(text: str, cfg: RunConfig, out_path: str | None = None):
    path = out_path if out_path is not None else cfg.out
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


# --- subcommands ------------------------------------------------------------------------

def _scenario(cfg: RunConfig) -> scenarios.ScenarioSpec:
    if not cfg.scenario:
        raise ModelError("--scenario is required")
    return scenarios.resolve_scenario(cfg.scenario, cfg.preset)


def analyze_flat(cfg: RunConfig) -> tuple[dict, bool]:
    s = _scenario(cfg)
    report = est.full_report(s.model)
    if not report.positivity_ok:
        raise PositivityError("positivity fails over (Z, X, A): " + "; ".join(report.flags))
    expect = scenarios.expected_relations(s)
    checks = scenarios.verify_relations(s, report, expect)
    flat: dict[str, object] = {"scenario": s.name, "preset": s.cpt_preset}
    flat.update(report.to_flat())
    flat["expect.exclusion_restriction"] = expect.exclusion_restriction
    for e in scenarios.ESTIMANDS:
        flat[f"expect.licensed.{e}"] = ",".join(expect.licensed[e]) or "-"
        flat[f"expect.assignment_required.{e}"] = expect.assignment_required[e]
    for c in checks:
        flat[f"relation.{c.name}"] = c.passed
    all_pass = all(c.passed for c in checks)
    flat["relations_pass"] = all_pass
    return flat, all_pass


def cmd_analyze(cfg: RunConfig) -> int:
    flat, ok = analyze_flat(cfg)
    _emit(render(flat, cfg.format), cfg)
    return EXIT_OK if ok else EXIT_REJECT


def simulate_flat(cfg: RunConfig) -> tuple[dict, sampling.TrialDataset]:
    if cfg.n is None or cfg.n < 1:
        raise ModelError("--n must be at least 1")
    s = _scenario(cfg)
    d = sampling.simulate(s.model, cfg.n, cfg.seed, s.name)
    exact = est.flat_values(*est.observed_arrays(est.observed_joint(s.model, ["U"])))
    emp = est.flat_values(*est.observed_arrays(sampling.empirical_joint(d)))
    keys = [k for k in exact if not k.startswith(("ipw_", "delta_ipw"))]
    flat: dict[str, object] = {"scenario": s.name, "n": d.n, "seed": cfg.seed,
                               "generator": d.generator, "bootstrap": cfg.bootstrap}
    defined = [k for k in keys if not math.isnan(float(emp[k]))]
    estimates = sampling.bootstrap(d, defined, cfg.bootstrap, cfg.seed, cfg.alpha)
    for k in keys:
        e = estimates.get(k)
        if e is None:
            print(f"warning: {k} undefined on simulated data (empty strata)", file=sys.stderr)
            continue
        flat[f"{k}.point"] = e.point
        flat[f"{k}.ci_low"] = e.ci_low
        flat[f"{k}.ci_high"] = e.ci_high
        flat[f"{k}.se"] = e.se
        flat[f"{k}.exact"] = float(exact[k])
    return flat, d


def cmd_simulate(cfg: RunConfig) -> int:
    flat, d = simulate_flat(cfg)
    text = render(flat, cfg.format)
    if cfg.out:
        sampling.write_dataset(d, cfg.out)
        ext = {"structured": "json", "csv": "csv", "text": "txt"}[cfg.format]
        Path(f"{cfg.out}.estimates.{ext}").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


_QUERY_RE = re.compile(
    r"^\s*(?P<lhs>.+?)\s*_\|\|_\s*(?P<rhs>.+?)"
    r"(?:\s*\|\s*(?P<given>.+?))?"
    r"(?:\s+in\s+(?P<scenario>[^\s]+))?"
    r"(?:\s+do\((?P<do>[^)]*)\))?\s*$"
)


def _names(text: str | None) -> list[str]:
    if not text:
        return []
    # split on commas outside braces so Y^{z,a} stays whole
    parts, depth, cur = [], 0, ""
    for ch in text:
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append(cur)
            cur = ""
        else:
            cur += ch
    parts.append(cur)
    return [p.strip().strip("()") for p in parts if p.strip()]


def parse_query(query: str) -> dict:
    """Parse ``"A _||_ B | C in structure1 do(Z, A)"``."""
    m = _QUERY_RE.match(query)
    if not m:
        raise GraphError(f"cannot parse query {query!r}")
    return {
        "lhs": _names(m["lhs"]),
        "rhs": _names(m["rhs"]),
        "given": _names(m["given"]),
        "scenario": m["scenario"],
        "do": _names(m["do"]) if m["do"] is not None else None,
    }


def dsep_flat(cfg: RunConfig) -> dict:
    if not cfg.query:
        raise ModelError("dsep needs a query")
    q = parse_query(cfg.query)
    if cfg.graph:
        g: Dag = parse_graph(Path(cfg.graph).read_text())
    else:
        sel = q["scenario"] or cfg.scenario
        if not sel:
            raise ModelError("query names no graph: add 'in <scenario>' or --scenario/--graph")
        g = scenarios.resolve_scenario(sel).dag
    flat: dict[str, object] = {"query": cfg.query.strip()}
    if q["do"]:
        sw = swig(g, q["do"])
        if len(q["lhs"]) != 1:
            raise GraphError("SWIG queries take a single counterfactual on the left")
        sep = swig_independent(sw, q["lhs"][0], q["rhs"], q["given"])
        lhs = {sw.resolve(q["lhs"][0])}
        rhs = {sw.resolve(v) for v in q["rhs"]}
        given = {sw.resolve(v) for v in q["given"]} | (set(sw.fixed_nodes) - rhs - lhs)
        trail = None if sep else d_connecting_trail(sw.dag, lhs, rhs, given)
    else:
        sep = d_separated(g, q["lhs"], q["rhs"], q["given"])
        trail = None if sep else d_connecting_trail(g, q["lhs"], q["rhs"], q["given"])
    flat["separated"] = sep
    if trail is not None:
        flat["witness"] = format_trail(trail)
    return flat


def cmd_dsep(cfg: RunConfig) -> int:
    flat = dsep_flat(cfg)
    if cfg.format == "text":
        text = ("true" if flat["separated"] else "false") + "\n"
        if "witness" in flat:
            text += f"witness: {flat['witness']}\n"
        _emit(text, cfg)
    else:
        _emit(render(flat, cfg.format), cfg)
    return EXIT_OK


def falsify_flat(cfg: RunConfig) -> tuple[dict, bool]:
    if cfg.exact:
        s = _scenario(cfg)
        stats = sampling.falsification_statistic(est.observed_joint(s.model, ["U"]))
        flat: dict[str, object] = {"source": f"exact:{s.name}", "statistic": stats.pop("phi_psi")}
        for k, v in stats.items():
            flat[f"component.{k}.statistic"] = v
        return flat, False
    if cfg.data:
        d = sampling.read_dataset(cfg.data)
        source = f"data:{cfg.data}"
    else:
        if cfg.n is None or cfg.n < 1:
            raise ModelError("--n must be at least 1 (or pass --data)")
        s = _scenario(cfg)
        d = sampling.simulate(s.model, cfg.n, cfg.seed, s.name)
        source = f"simulated:{s.name}"
    res = sampling.falsification_test(d, cfg.bootstrap, cfg.seed, cfg.alpha)
    flat = {"source": source, "n": d.n, "seed": cfg.seed}
    flat.update(res.to_flat())
    return flat, res.reject


def cmd_falsify(cfg: RunConfig) -> int:
    flat, reject = falsify_flat(cfg)
    _emit(render(flat, cfg.format), cfg)
    return EXIT_REJECT if reject else EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "simulate": cmd_simulate, "dsep": cmd_dsep, "falsify": cmd_falsify}


# --- argument parsing ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="structure1|structure2|structure7|structure8|lattice:<edges>")
    common.add_argument("--preset", default="canonical", help="'canonical' or a path to an SCM file")
    common.add_argument("--n", type=int, help="sample size")
    common.add_argument("--seed", type=int, help=f"master seed (fallback: ${SEED_ENV}, then 0)")
    common.add_argument("--bootstrap", type=int, default=500, help="bootstrap replicates")
    common.add_argument("--alpha", type=float, default=0.05)
    common.add_argument("--format", choices=("text", "csv", "structured"), default="text")
    common.add_argument("--out", help="output path")

    parser = argparse.ArgumentParser(prog="estimandlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)
    sub.add_parser("analyze", parents=[common], help="exact functionals, truths and expected relations")
    sub.add_parser("simulate", parents=[common], help="simulate a trial and bootstrap every estimator")
    p = sub.add_parser("dsep", parents=[common], help="d-separation / SWIG independence query")
    p.add_argument("query", help='e.g. "A _||_ U | X in structure1" or "Y^z _||_ Z in structure1 do(Z)"')
    p.add_argument("--graph", help="graph description file instead of a scenario")
    p = sub.add_parser("falsify", parents=[common], help="bootstrap test of the exclusion-structure equalities")
    p.add_argument("--data", help="dataset CSV (z,x,a,y) instead of simulating")
    p.add_argument("--exact", action="store_true", help="statistic on the exact population law")
    return parser


def config_from_args(ns: argparse.Namespace, env: Mapping[str, str] | None = None) -> RunConfig:
    env = os.environ if env is None else env
    seed = ns.seed
    if seed is None:
        raw = env.get(SEED_ENV)
        try:
            seed = int(raw) if raw not in (None, "") else 0
        except ValueError:
            raise ModelError(f"${SEED_ENV} must be an integer") from None
    return RunConfig(
        subcommand=ns.subcommand, scenario=ns.scenario, preset=ns.preset, n=ns.n, seed=seed,
        bootstrap=ns.bootstrap, alpha=ns.alpha, format=ns.format, out=ns.out,
        query=getattr(ns, "query", None), data=getattr(ns, "data", None),
        graph=getattr(ns, "graph", None), exact=getattr(ns, "exact", False),
    )


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        cfg = config_from_args(ns)
        return COMMANDS[cfg.subcommand](cfg)
    except PositivityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (GraphError, ModelError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EstimandLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
