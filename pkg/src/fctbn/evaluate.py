"""ROC/AUC scoring and the hold-out onset-prediction protocol.

For every subject the baseline state is read at time 0, the model scores
each condition's marginal ON probability at each horizon, and the label is
whether the condition appeared in the trajectory by that horizon.  Subjects
who already have a condition at baseline are excluded from that condition's
cells: the protocol evaluates onset, not persistence.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .inference import predict_onset
from .model import ModelSpec
from .simulate import Cohort


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC: (concordant + 0.5 * tied) / (positives * negatives).

    Computed from average ranks, which is exactly the pair-counting form.
    Requires both classes to be present.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos + n_neg != labels.size:
        raise ValueError("labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative label")
    ranks = rankdata(scores)
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass(frozen=True)
class AucCell:
    """One (condition, horizon) evaluation cell; ``auc`` is NaN when a class
    is missing (degenerate cell, reported rather than raised)."""

    node: int
    horizon: float
    auc: float
    n_pos: int
    n_neg: int


def _labels(cohort: Cohort, horizons):
    """Per subject: baseline indicator and onset-by-horizon labels."""
    n, d = cohort.n_subjects, cohort.trajectories[0].d
    base = np.zeros((n, d), dtype=bool)
    onset = np.zeros((n, d, len(horizons)), dtype=bool)
    for p, tr in enumerate(cohort.trajectories):
        base[p] = tr.initial_state == 1
        first = tr.onset_times()
        for j, h in enumerate(horizons):
            onset[p, :, j] = first <= h
    return base, onset


def _auc_table(scores, base, onset, horizons) -> list:
    d = base.shape[1]
    cells = []
    for i in range(d):
        include = ~base[:, i]
        for j, h in enumerate(horizons):
            s = scores[include, i, j]
            y = onset[include, i, j].astype(int)
            n_pos, n_neg = int(y.sum()), int((1 - y).sum())
            if n_pos == 0 or n_neg == 0:
                cells.append(AucCell(i, float(h), float("nan"), n_pos, n_neg))
            else:
                cells.append(AucCell(i, float(h), roc_auc(s, y), n_pos, n_neg))
    return cells


def holdout_evaluate(spec: ModelSpec, test: Cohort, horizons) -> list:
    """AUC per (condition, horizon) of the model's onset predictions on a
    held-out cohort.  Deterministic; one cell per condition and horizon."""
    horizons = [float(h) for h in horizons]
    if test.n_subjects == 0:
        raise ValueError("empty test cohort")
    n, d = test.n_subjects, spec.d
    scores = np.empty((n, d, len(horizons)))
    cache = {}
    for p, tr in enumerate(test.trajectories):
        z = test.covariates[p]
        key = (z.tobytes(), tr.initial_state.tobytes())
        if key not in cache:
            cache[key] = predict_onset(spec, z, tr.initial_state, horizons)
        scores[p] = cache[key]
    base, onset = _labels(test, horizons)
    return _auc_table(scores, base, onset, horizons)


def evaluate_score_table(score_of, test: Cohort, horizons) -> list:
    """Evaluate an external predictor's scores with the same protocol.

    ``score_of`` maps ``(subject_id, node, horizon)`` to a real score; every
    included (subject, node, horizon) cell must be covered.
    """
    horizons = [float(h) for h in horizons]
    n, d = test.n_subjects, test.trajectories[0].d
    base, onset = _labels(test, horizons)
    scores = np.zeros((n, d, len(horizons)))
    for p, tr in enumerate(test.trajectories):
        for i in range(d):
            if base[p, i]:
                continue
            for j, h in enumerate(horizons):
                key = (tr.subject_id, i, h)
                if key not in score_of:
                    raise KeyError(
                        f"score file missing subject {tr.subject_id}, node {i}, horizon {h}")
                scores[p, i, j] = score_of[key]
    return _auc_table(scores, base, onset, horizons)
