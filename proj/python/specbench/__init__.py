"""Specificity benchmark: graph distances, prompts, scoring and reports."""

import json
from fractions import Fraction

from . import _specbench
from ._specbench import (
    ConfigError,
    Error,
    MetricError,
    StageError,
    __version__,
    enumerate_paths,
    pairwise_pearson,
    render_prompt,
    report_text,
    specificity_pr,
)

__all__ = [
    "ConfigError",
    "Error",
    "MetricError",
    "StageError",
    "__version__",
    "average_distances",
    "enumerate_paths",
    "pairwise_pearson",
    "render_prompt",
    "report_text",
    "run_pipeline",
    "specificity_pr",
]


def average_distances(triples, head, tail, subject, max_len=5):
    """Mean path length from `subject` to every reachable object, as Fractions."""
    raw = _specbench.average_distances(triples, head, tail, subject, max_len)
    return {obj: Fraction(num, den) for obj, (num, den) in raw.items()}


def run_pipeline(config, out=None, force=False):
    """Runs every stage for `config` and returns the report as a dict."""
    return json.loads(_specbench.run_pipeline(str(config), None if out is None else str(out), force))
