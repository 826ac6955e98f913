"""Batched contextual-bandit experiments.

Thin Python layer over the C++ core: logs, the probability floor, exact
policy-tree search, assignment propensities, policy learning, evaluation and
simulation studies. JSON-valued results come back as dicts.
"""

import json as _json

from . import _core
from ._core import (
    ObservationLog,
    ValidationError,
    apply_probability_floor,
    evaluation_mixture_propensity,
    floor_schedule,
    generate_corpus,
    ingest_survey_csv,
    propose_propensities,
    read_log,
    solve_tree,
    write_log,
)

__all__ = [
    "ObservationLog",
    "ValidationError",
    "apply_probability_floor",
    "evaluate",
    "evaluation_mixture_propensity",
    "floor_schedule",
    "generate_corpus",
    "ingest_survey_csv",
    "learn_policy",
    "propose_propensities",
    "read_log",
    "run_study",
    "solve_tree",
    "write_log",
]


def _dump(config):
    if config is None:
        return ""
    return config if isinstance(config, str) else _json.dumps(config)


def learn_policy(log, config=None):
    """Run the policy-learning pipeline on the learning rows of `log`; returns the report dict."""
    return _json.loads(_core.learn_policy(log, _dump(config)))


def evaluate(log, report):
    """Value estimates and the contextual-vs-fixed test on the evaluation rows."""
    return _json.loads(_core.evaluate(log, _dump(report)))


def run_study(config=None, replicates=2, corpus_rows=3000):
    """Simulation study on a synthetic corpus; returns the summary CSV text."""
    return _core.run_study(_dump(config), replicates, corpus_rows)
