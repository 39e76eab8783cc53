"""Information-theoretic scalars on the probability simplex.

All entropies and divergences are in nats. Conventions used throughout:

* ``0 * ln 0 = 0`` exactly; a distribution in the first argument of a
  divergence is never clamped.
* The second argument of KL / cross-entropy has its entries clamped below
  at ``Q_CLAMP`` so zero-mass coordinates stay finite.

Everything here is a pure function of its inputs and safe to call
concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Sum-to-one tolerance for a valid probability vector.
PROB_ATOL = 1e-9
# Floor applied to the second argument of KL / cross-entropy.
Q_CLAMP = 1e-12


def as_prob_vector(p) -> np.ndarray:
    """Validate and return ``p`` as a float64 point on the simplex.

    Raises ValueError when ``p`` has fewer than 2 entries, contains
    non-finite or out-of-range values, or does not sum to 1 within
    ``PROB_ATOL``.
    """
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 2:
        raise ValueError(f"probability vector needs >= 2 entries, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("probability vector contains non-finite entries")
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError("probability entries must lie in [0, 1]")
    total = float(arr.sum())
    if abs(total - 1.0) > PROB_ATOL:
        raise ValueError(f"probability entries sum to {total}, not 1")
    return arr


def softmax(logits) -> np.ndarray:
    """Exp-normalize a logit vector, stabilized by subtracting the max."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size < 2:
        raise ValueError(f"need a logit vector of length >= 2, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits contain non-finite entries")
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax for an (n, k) logit matrix."""
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def entropy(p) -> float:
    """Shannon entropy -sum(p ln p) in nats, in [0, ln k]."""
    arr = as_prob_vector(p)
    return float(_entropy_raw(arr))


def entropy_rows(probs: np.ndarray) -> np.ndarray:
    """Row-wise entropy of an (n, k) probability matrix (unvalidated)."""
    p = np.asarray(probs, dtype=np.float64)
    terms = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    return -terms.sum(axis=1)


def _entropy_raw(p: np.ndarray) -> float:
    mask = p > 0.0
    return float(-(p[mask] * np.log(p[mask])).sum())


def cross_entropy(p, q) -> float:
    """Cross-entropy -sum(p ln q), with q clamped below at ``Q_CLAMP``.

    Satisfies ``cross_entropy(p, q) == entropy(p) + kl_divergence(p, q)``
    exactly up to floating-point roundoff, because both sides use the same
    clamped q.
    """
    pa = as_prob_vector(p)
    qa = as_prob_vector(q)
    if pa.size != qa.size:
        raise ValueError(f"dimension mismatch: {pa.size} vs {qa.size}")
    qc = np.maximum(qa, Q_CLAMP)
    return float(-(pa * np.log(qc)).sum())


def kl_divergence(p, q) -> float:
    """KL(p || q) = sum(p ln(p/q)) >= 0, with q clamped below at ``Q_CLAMP``."""
    pa = as_prob_vector(p)
    qa = as_prob_vector(q)
    if pa.size != qa.size:
        raise ValueError(f"dimension mismatch: {pa.size} vs {qa.size}")
    qc = np.maximum(qa, Q_CLAMP)
    mask = pa > 0.0
    return float((pa[mask] * np.log(pa[mask] / qc[mask])).sum())


def kl_divergence_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise KL(p_i || q_i) for matched (n, k) matrices (unvalidated)."""
    pa = np.asarray(p, dtype=np.float64)
    qc = np.maximum(np.asarray(q, dtype=np.float64), Q_CLAMP)
    terms = np.where(pa > 0.0, pa * np.log(np.where(pa > 0.0, pa, 1.0) / qc), 0.0)
    return terms.sum(axis=1)


def argmax_label(p) -> int:
    """Index of the largest entry; ties break toward the lowest index."""
    return int(np.argmax(as_prob_vector(p)))


@dataclass(frozen=True)
class ConditionalEntropyCheck:
    """Result of comparing H(X|Y) against the cross-entropy of the marginals."""

    conditional_entropy: float
    marginal_cross_entropy: float
    bound_holds: bool


def conditional_entropy_vs_cross_entropy_check(joint) -> ConditionalEntropyCheck:
    """Check H(X|Y) <= CE(marginal_X, marginal_Y) on a joint table.

    ``joint`` is a k x m table of non-negative entries summing to 1.
    H(X|Y) is computed by exact enumeration with the 0 ln 0 = 0 convention
    (an all-zero column contributes nothing). The marginal cross-entropy
    pads the shorter marginal with zeros when k != m, then applies the
    usual clamped form. ``bound_holds`` allows 1e-9 slack.
    """
    j = np.asarray(joint, dtype=np.float64)
    if j.ndim != 2:
        raise ValueError(f"joint table must be 2-D, got shape {j.shape}")
    if np.any(j < 0.0) or not np.all(np.isfinite(j)):
        raise ValueError("joint entries must be finite and non-negative")
    total = float(j.sum())
    if abs(total - 1.0) > PROB_ATOL:
        raise ValueError(f"joint entries sum to {total}, not 1")

    p_y = j.sum(axis=0)
    # H(X|Y) = -sum_{x,y} p(x,y) ln(p(x,y) / p(y))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = j / p_y[np.newaxis, :]
        terms = np.where(j > 0.0, j * np.log(np.where(j > 0.0, ratio, 1.0)), 0.0)
    h_cond = float(-terms.sum())

    p_x = j.sum(axis=1)
    n = max(p_x.size, p_y.size)
    px_pad = np.zeros(n)
    px_pad[: p_x.size] = p_x
    py_pad = np.zeros(n)
    py_pad[: p_y.size] = p_y
    qc = np.maximum(py_pad, Q_CLAMP)
    ce = float(-(px_pad * np.log(qc)).sum())

    return ConditionalEntropyCheck(h_cond, ce, h_cond <= ce + 1e-9)
