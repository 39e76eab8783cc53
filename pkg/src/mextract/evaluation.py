"""Fidelity and membership-inference metrics.

Covers task accuracy, prediction agreement, KL fidelity against the
target's prediction distributions, the loss-threshold membership attack,
and agreement between membership attacks run through two models. All
metrics are pure functions of (models, datasets, seeds).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import CapabilityError
from .mathcore import kl_divergence_rows
from .models import Model, forward_batch, per_example_losses, predict_labels
from .oracle import TargetHandle


def target_probs(source, X) -> np.ndarray:
    """Prediction distributions for evaluation purposes.

    ``source`` may be a Model (direct forward), an in-process TargetHandle
    with its white-box channel enabled, or a remote TargetHandle whose
    service exposes a probs endpoint. Raises CapabilityError when no
    probability channel is available.
    """
    if isinstance(source, Model):
        return forward_batch(source, X)
    if isinstance(source, TargetHandle):
        if source.is_remote:
            return source.remote_probs(X)
        return source.white_box_probs(X)
    raise TypeError(f"cannot read probabilities from {type(source).__name__}")


def target_labels(source, X) -> np.ndarray:
    """Argmax labels through the evaluation channel (never the ledger)."""
    return np.argmax(target_probs(source, X), axis=1)


def accuracy(model: Model, test: Dataset) -> float:
    """Fraction of argmax predictions matching the labels."""
    if test.labels is None:
        raise ValueError("accuracy needs a labeled dataset")
    return float((predict_labels(model, test.features) == test.labels).mean())


def agreement(a: Model, b, dataset: Dataset) -> float:
    """Percentage of points where two models emit the same label.

    ``b`` may be a Model or a TargetHandle (evaluation channel).
    """
    la = predict_labels(a, dataset.features)
    lb = target_labels(b, dataset.features)
    return float((la == lb).mean() * 100.0)


def kl_fidelity(target_source, extracted: Model, dataset: Dataset) -> float:
    """Mean KL(target distribution || extracted distribution) over the set."""
    tp = target_probs(target_source, dataset.features)
    ep = forward_batch(extracted, dataset.features)
    return float(kl_divergence_rows(tp, ep).mean())


# -- membership inference ------------------------------------------------


@dataclass
class MiResult:
    """Outcome of the loss-threshold membership attack."""

    member_scores: np.ndarray
    nonmember_scores: np.ndarray
    threshold: float
    membership_accuracy: float
    nonmembership_accuracy: float
    overall_accuracy: float
    roc_points: np.ndarray  # (m, 2) rows of (fpr, tpr)
    auc: float


@dataclass
class MiDecisions:
    """Per-example membership scores and the calibrated decision threshold
    for one model over a fixed example sequence."""

    scores: np.ndarray
    threshold: float

    @property
    def decisions(self) -> np.ndarray:
        return self.scores >= self.threshold


def membership_scores(model: Model, dataset: Dataset) -> np.ndarray:
    """Membership score per example: the negated per-example loss (members
    tend to be fit better, so they score higher)."""
    if dataset.labels is None:
        raise ValueError("membership scoring needs labels")
    return -per_example_losses(model, dataset.features, dataset.labels)


def roc_curve(member_scores, nonmember_scores):
    """ROC of the score-threshold family, members as the positive class.

    Thresholds sweep the distinct scores in descending order, so the curve
    is stepwise monotone from (0, 0) to (1, 1); AUC is the trapezoid area
    (ties between member and non-member scores count half).
    """
    ms = np.asarray(member_scores, dtype=np.float64)
    ns = np.asarray(nonmember_scores, dtype=np.float64)
    thresholds = np.unique(np.concatenate([ms, ns]))[::-1]
    points = [(0.0, 0.0)]
    for t in thresholds:
        tpr = float((ms >= t).mean())
        fpr = float((ns >= t).mean())
        points.append((fpr, tpr))
    points.append((1.0, 1.0))
    pts = np.asarray(points)
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]
    auc = float(np.trapezoid(pts[:, 1], pts[:, 0]))
    return pts, auc


def _best_balanced_threshold(cal_members: np.ndarray, cal_nonmembers: np.ndarray) -> float:
    """Threshold maximizing balanced accuracy on the calibration scores.

    Candidates are midpoints between adjacent distinct scores plus guards
    below and above everything; ties take the lowest candidate.
    """
    combined = np.unique(np.concatenate([cal_members, cal_nonmembers]))
    candidates = [combined[0] - 1.0]
    candidates.extend((combined[:-1] + combined[1:]) / 2.0)
    candidates.append(combined[-1] + 1.0)
    best_t, best_score = candidates[0], -1.0
    for t in candidates:
        bal = 0.5 * ((cal_members >= t).mean() + (cal_nonmembers < t).mean())
        if bal > best_score + 1e-12:
            best_score, best_t = bal, t
    return float(best_t)


def mi_threshold_attack(
    model: Model,
    members: Dataset,
    nonmembers: Dataset,
    calibration_fraction: float,
    seed: int = 0,
) -> MiResult:
    """Loss-threshold membership inference.

    Scores are negated per-example losses. The threshold is chosen on a
    calibration split (fraction of each set, shuffled by ``seed``) to
    maximize balanced accuracy, and all reported numbers come from the
    held-out remainder.
    """
    if not 0.0 < calibration_fraction < 1.0:
        raise ValueError("calibration_fraction must be in (0, 1)")
    if members.n < 2 or nonmembers.n < 2:
        raise ValueError("member and non-member sets each need >= 2 examples")

    scores_m = membership_scores(model, members)
    scores_n = membership_scores(model, nonmembers)
    rng = np.random.default_rng(seed)

    def _split(scores: np.ndarray):
        n = scores.size
        n_cal = min(n - 1, max(1, int(round(calibration_fraction * n))))
        perm = rng.permutation(n)
        return scores[perm[:n_cal]], scores[perm[n_cal:]]

    cal_m, held_m = _split(scores_m)
    cal_n, held_n = _split(scores_n)
    threshold = _best_balanced_threshold(cal_m, cal_n)

    member_acc = float((held_m >= threshold).mean())
    nonmember_acc = float((held_n < threshold).mean())
    overall = float(
        ((held_m >= threshold).sum() + (held_n < threshold).sum())
        / (held_m.size + held_n.size)
    )
    pts, auc = roc_curve(held_m, held_n)
    return MiResult(
        member_scores=held_m,
        nonmember_scores=held_n,
        threshold=threshold,
        membership_accuracy=member_acc,
        nonmembership_accuracy=nonmember_acc,
        overall_accuracy=overall,
        roc_points=pts,
        auc=auc,
    )


def mi_decisions_for(model: Model, sequence: Dataset, threshold: float) -> MiDecisions:
    """Membership decisions of one model over a fixed example sequence."""
    return MiDecisions(scores=membership_scores(model, sequence), threshold=threshold)


def mi_agreement(a: MiDecisions, b: MiDecisions, grid_size: int = 101):
    """Agreement between two membership attacks over one example sequence.

    Returns (percentage, auc). The percentage compares the two attacks'
    decisions at their own calibrated thresholds. The AUC integrates the
    overall-agreement curve while both attacks sweep a shared grid of
    score quantiles (so differently scaled scores stay comparable).
    """
    if a.scores.shape != b.scores.shape:
        raise ValueError("decision sequences must cover the same examples")
    pct = float((a.decisions == b.decisions).mean() * 100.0)

    qs = np.linspace(0.0, 1.0, grid_size)
    ta = np.quantile(a.scores, qs)
    tb = np.quantile(b.scores, qs)
    agree = np.asarray(
        [((a.scores >= ta[i]) == (b.scores >= tb[i])).mean() for i in range(grid_size)]
    )
    auc = float(np.trapezoid(agree, qs))
    return pct, auc
