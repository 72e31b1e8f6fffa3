"""Exact and finite-sample tools for comparing intention-to-treat,
per-protocol and treatment effects in randomized trials with non-adherence."""

from .errors import (CycleError, EmptyStrataError, EstimandLabError, GraphError, ModelError,
                     PositivityError, ZeroProbabilityError)
from .estimands import EstimandReport, full_report
from .graph import (Dag, SwigGraph, ancestors, build_dag, d_separated, descendants, remove_edges, swig,
                    swig_independent)
from .sampling import TrialDataset, bootstrap, empirical_joint, falsification_test, simulate
from .scenarios import ScenarioSpec, expected_relations, lattice, structure1, structure2, structure7, structure8
from .scm import (DiscreteScm, JointTable, check_positivity, cond_mean, counterfactual_mean, exact_joint,
                  intervene, observed_joint)

__version__ = "0.1.0"
