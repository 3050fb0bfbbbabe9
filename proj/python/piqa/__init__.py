"""Portrait quality assessment: pairwise ranking model, metrics and CLI."""

import json

from . import _piqa
from ._piqa import (
    PiqaError,
    batch_loss,
    binary_label,
    exact_sum,
    fidelity_loss,
    fit_logistic,
    krcc,
    mae,
    normal_cdf,
    pair_count,
    pair_loss,
    pair_probability,
    pearson,
    plcc,
    prompts,
    render_prompt,
    srcc,
)


def evaluate_grouped(records, min_scene_size=2):
    """records: iterable of (scene_id, prediction, ground_truth)."""
    return json.loads(_piqa.evaluate_grouped(list(records), min_scene_size))


def score(checkpoint, image, face=None, allow_fallback=False, verbose=False, detector_command=""):
    return json.loads(
        _piqa.score(str(checkpoint), str(image), face, allow_fallback, verbose, detector_command)
    )


def run(*args):
    """Same as the piqa executable. Returns (exit_code, stdout, stderr)."""
    return _piqa.run([str(a) for a in args])


__all__ = [
    "PiqaError",
    "batch_loss",
    "binary_label",
    "evaluate_grouped",
    "exact_sum",
    "fidelity_loss",
    "fit_logistic",
    "krcc",
    "mae",
    "normal_cdf",
    "pair_count",
    "pair_loss",
    "pair_probability",
    "pearson",
    "plcc",
    "prompts",
    "render_prompt",
    "run",
    "score",
    "srcc",
]
