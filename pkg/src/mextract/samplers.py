"""Query-selection strategies over the unspent pool.

The cascade used by the main attack is entropy selection, then
gradient-embedding diversity selection, then mismatch (loss) selection.
The five stand-alone baselines (random, entropy, least-confidence, margin,
k-center) share the same ``Selection`` surface so attack loops can swap
them in at equal per-round budget.

Every strategy is deterministic given (model, pool snapshot, seed), and
all ties break toward the lower pool index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import kmeans
from .data import PoolView
from .mathcore import entropy_rows
from .models import (
    Model,
    _activate,
    forward_batch,
    input_entropy_gradients,
    per_example_losses,
)

LOSS_SCORING_MODES = ("min-distance", "summed")


@dataclass
class Selection:
    """An ordered batch of chosen pool indices with their strategy scores."""

    indices: np.ndarray
    scores: np.ndarray
    strategy: str

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.indices.shape != self.scores.shape:
            raise ValueError("indices and scores must align")
        if len(np.unique(self.indices)) != self.indices.size:
            raise ValueError("selection contains duplicate indices")

    def __len__(self) -> int:
        return int(self.indices.size)


def _take_best(
    indices: np.ndarray, scores: np.ndarray, budget: int, descending: bool
) -> np.ndarray:
    """Positions of the ``budget`` best entries; ties to the lower index."""
    key = -scores if descending else scores
    order = np.lexsort((indices, key))
    return order[:budget]


def entropy_sampling(model: Model, view: PoolView, budget: int) -> Selection:
    """The unspent points where the model's prediction entropy is largest."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if len(view) == 0:
        return Selection(np.empty(0, dtype=np.int64), np.empty(0), "entropy")
    ent = entropy_rows(forward_batch(model, view.features))
    pos = _take_best(view.indices, ent, min(budget, len(view)), descending=True)
    return Selection(view.indices[pos], ent[pos], "entropy")


def _gradient_scores(grads: np.ndarray, k_classes: int, seed: int):
    """Summed squared distance of each gradient to all k-means centers."""
    k_eff = min(k_classes, grads.shape[0])
    result = kmeans(grads, k_eff, seed=seed)
    diff = grads[:, np.newaxis, :] - result.centers[np.newaxis, :, :]
    scores = (diff * diff).sum(axis=2).sum(axis=1)
    return scores, result


def entropy_gradient_sampling(
    model: Model,
    candidates: Selection,
    candidate_features: np.ndarray,
    budget: int,
    k_classes: int,
    seed: int,
    stratified: bool = False,
) -> Selection:
    """Diversity refinement over entropy-input-gradient embeddings.

    Each candidate is embedded as the gradient of its prediction entropy
    with respect to the input; k-means (k = class count) clusters those
    embeddings, and each candidate is scored by its summed squared distance
    to all centers. The objective is separable per point, so taking the
    ``budget`` lowest scores is the exact subset minimizer.

    ``stratified=True`` switches to a per-cluster quota draw (largest
    remainder over cluster sizes, round-robin for leftovers), keeping the
    per-cluster picks in ascending score order.
    """
    if len(candidates) == 0:
        return Selection(np.empty(0, dtype=np.int64), np.empty(0), "entropy-gradient")
    budget = min(budget, len(candidates))
    grads = input_entropy_gradients(model, candidate_features)
    scores, result = _gradient_scores(grads, k_classes, seed)

    if not stratified:
        pos = _take_best(candidates.indices, scores, budget, descending=False)
        return Selection(candidates.indices[pos], scores[pos], "entropy-gradient")

    assign = result.assignments
    n_clusters = result.centers.shape[0]
    sizes = np.bincount(assign, minlength=n_clusters)
    quotas = np.floor(budget * sizes / len(candidates)).astype(int)
    quotas = np.minimum(quotas, sizes)
    # round-robin the remainder over clusters with spare capacity
    j = 0
    while quotas.sum() < budget:
        if quotas[j] < sizes[j]:
            quotas[j] += 1
        j = (j + 1) % n_clusters
    chosen_pos: list[int] = []
    for c in range(n_clusters):
        members = np.flatnonzero(assign == c)
        order = _take_best(candidates.indices[members], scores[members], int(quotas[c]), descending=False)
        chosen_pos.extend(members[order])
    chosen_pos = sorted(chosen_pos, key=lambda i: (scores[i], candidates.indices[i]))
    chosen = np.asarray(chosen_pos, dtype=np.int64)
    return Selection(candidates.indices[chosen], scores[chosen], "entropy-gradient")


def loss_sampling(
    model: Model,
    candidates: Selection,
    candidate_features: np.ndarray,
    q_train: np.ndarray,
    y_train: np.ndarray,
    budget: int,
    k_classes: int,
    scoring: str = "min-distance",
) -> Selection:
    """Pull candidates toward the answered queries the model gets most wrong.

    The ``k_classes`` highest-loss answered queries become anchors; each
    candidate is scored by its squared input-space distance to them
    (minimum over anchors by default, or the summed form), and the
    ``budget`` lowest-scoring candidates win.

    With no answered queries yet there is nothing to anchor on, so the
    first ``budget`` candidates pass through unchanged (degenerate case).
    """
    if scoring not in LOSS_SCORING_MODES:
        raise ValueError(f"unknown loss scoring mode {scoring!r}")
    if len(candidates) == 0:
        return Selection(np.empty(0, dtype=np.int64), np.empty(0), "loss")
    budget = min(budget, len(candidates))
    q_train = np.asarray(q_train, dtype=np.float64)
    if q_train.size == 0:
        return Selection(
            candidates.indices[:budget], np.zeros(budget), "loss"
        )
    losses = per_example_losses(model, q_train, y_train)
    n_anchor = min(k_classes, losses.size)
    anchor_pos = _take_best(np.arange(losses.size), losses, n_anchor, descending=True)
    anchors = q_train[anchor_pos]

    diff = candidate_features[:, np.newaxis, :] - anchors[np.newaxis, :, :]
    d2 = (diff * diff).sum(axis=2)
    scores = d2.min(axis=1) if scoring == "min-distance" else d2.sum(axis=1)
    pos = _take_best(candidates.indices, scores, budget, descending=False)
    return Selection(candidates.indices[pos], scores[pos], "loss")


def random_sampling(view: PoolView, budget: int, seed: int) -> Selection:
    """Uniform draw without replacement; scores record the draw order."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    m = min(budget, len(view))
    if m == 0:
        return Selection(np.empty(0, dtype=np.int64), np.empty(0), "random")
    rng = np.random.default_rng(seed)
    pos = rng.choice(len(view), size=m, replace=False)
    return Selection(view.indices[pos], np.arange(m, dtype=np.float64), "random")


def least_confidence_sampling(model: Model, view: PoolView, budget: int) -> Selection:
    """Top points by 1 - max predicted probability."""
    if len(view) == 0:
        return Selection(np.empty(0, dtype=np.int64), np.empty(0), "least-confidence")
    probs = forward_batch(model, view.features)
    uncertainty = 1.0 - probs.max(axis=1)
    pos = _take_best(view.indices, uncertainty, min(budget, len(view)), descending=True)
    return Selection(view.indices[pos], uncertainty[pos], "least-confidence")


def margin_sampling(model: Model, view: PoolView, budget: int) -> Selection:
    """Points with the smallest gap between the top two class probabilities."""
    if len(view) == 0:
        return Selection(np.empty(0, dtype=np.int64), np.empty(0), "margin")
    probs = forward_batch(model, view.features)
    part = np.partition(probs, probs.shape[1] - 2, axis=1)
    margins = part[:, -1] - part[:, -2]
    pos = _take_best(view.indices, margins, min(budget, len(view)), descending=False)
    return Selection(view.indices[pos], margins[pos], "margin")


def embed(model: Model, X: np.ndarray) -> np.ndarray:
    """Representation used by k-center: penultimate-layer activations for
    an MLP, the raw inputs for softmax regression."""
    X = np.asarray(X, dtype=np.float64)
    if model.spec.kind == "softmax-regression":
        return X
    a = X
    for l in range(len(model.weights) - 1):
        a = _activate(a @ model.weights[l] + model.biases[l], model.spec.activation)
    return a


def kcenter_sampling(
    model: Model,
    view: PoolView,
    already_selected: np.ndarray | None,
    budget: int,
) -> Selection:
    """Greedy k-center (farthest-first) batch in embedding space.

    ``already_selected`` holds the raw feature rows of previously chosen
    queries (the existing centers). With no centers yet, the lowest pool
    index seeds the batch. Scores record each pick's distance to the
    center set at the moment it was chosen.
    """
    if len(view) == 0:
        return Selection(np.empty(0, dtype=np.int64), np.empty(0), "k-center")
    budget = min(budget, len(view))
    pool_emb = embed(model, view.features)
    if already_selected is not None and np.asarray(already_selected).size:
        centers = embed(model, np.asarray(already_selected, dtype=np.float64))
        diff = pool_emb[:, np.newaxis, :] - centers[np.newaxis, :, :]
        min_d = np.sqrt((diff * diff).sum(axis=2)).min(axis=1)
    else:
        min_d = None

    chosen: list[int] = []
    scores: list[float] = []
    for _ in range(budget):
        if min_d is None:
            pick = 0
            scores.append(np.inf)
        else:
            masked = min_d.copy()
            masked[chosen] = -np.inf
            pick = int(masked.argmax())
            scores.append(float(masked[pick]))
        chosen.append(pick)
        d = np.sqrt(((pool_emb - pool_emb[pick]) ** 2).sum(axis=1))
        min_d = d if min_d is None else np.minimum(min_d, d)
    chosen_arr = np.asarray(chosen, dtype=np.int64)
    return Selection(view.indices[chosen_arr], np.asarray(scores), "k-center")
