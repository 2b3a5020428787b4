"""Supervised contrastive objectives and class-weighted cross-entropy.

Every loss returns ``(value, grad)`` where ``grad`` is the gradient of the
scalar with respect to the loss input (embedding rows, or logits for
cross-entropy).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

KINDS = ("max-margin", "triplet-margin", "npairs", "ntxent", "cross-entropy")
CONTRASTIVE = KINDS[:4]


class DegenerateBatchError(ValueError):
    """Batch has no usable pairs/triplets/anchors for the requested loss."""


@dataclass(frozen=True)
class LossSpec:
    kind: str = "max-margin"
    margin: float | None = None
    temperature: float = 0.1
    class_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown loss {self.kind!r}; expected one of {KINDS}")
        if self.margin is not None and self.margin <= 0:
            raise ValueError("margin must be > 0")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.class_weights is not None and min(self.class_weights) <= 0:
            raise ValueError("class weights must all be > 0")

    @property
    def effective_margin(self) -> float:
        if self.margin is not None:
            return self.margin
        return 0.5 if self.kind == "triplet-margin" else 1.0

    def __call__(self, z: np.ndarray, labels: np.ndarray):
        labels = np.asarray(labels)
        if self.kind == "max-margin":
            return max_margin_loss(z, labels, self.effective_margin)
        if self.kind == "triplet-margin":
            return triplet_margin_loss(z, labels, self.effective_margin)
        if self.kind == "npairs":
            return npairs_loss(z, labels)
        if self.kind == "ntxent":
            return ntxent_supervised_loss(z, labels, self.temperature)
        raise ValueError("cross-entropy takes probabilities; call weighted_cross_entropy")


def pairwise_distances(z: np.ndarray) -> np.ndarray:
    diff = z[:, None, :] - z[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def _masks(labels):
    same = labels[:, None] == labels[None, :]
    eye = np.eye(len(labels), dtype=bool)
    return same & ~eye, ~same


def max_margin_loss(z, labels, margin=1.0):
    """Mean squared distance over positive pairs plus mean squared hinge
    ``max(0, margin - d)**2`` over negative pairs (unordered pairs)."""
    z = np.asarray(z, dtype=np.float64)
    pos, neg = _masks(np.asarray(labels))
    upper = np.triu(np.ones(pos.shape, dtype=bool), k=1)
    pos, neg = pos & upper, neg & upper
    diff = z[:, None, :] - z[None, :, :]
    sq = (diff * diff).sum(axis=-1)
    d = np.sqrt(sq)
    loss = 0.0
    coef = np.zeros_like(sq)  # dL/d(diff_ij) = coef_ij * diff_ij
    n_pos, n_neg = int(pos.sum()), int(neg.sum())
    if n_pos:
        loss += sq[pos].sum() / n_pos
        coef[pos] = 2.0 / n_pos
    else:
        warnings.warn("max-margin: batch has no positive pairs; positive term is 0")
    if n_neg:
        hinge = np.where(neg, np.maximum(0.0, margin - d), 0.0)
        loss += (hinge[neg] ** 2).sum() / n_neg
        safe_d = np.where(d > 0, d, 1.0)
        coef = np.where(neg & (d > 0), -2.0 * hinge / safe_d / n_neg, coef)
    else:
        warnings.warn("max-margin: batch has no negative pairs; negative term is 0")
    g = coef[:, :, None] * diff
    grad = g.sum(axis=1) - g.sum(axis=0)
    return float(loss), grad


def triplet_margin_loss(z, labels, margin=0.5):
    """Mean of ``max(0, d(a,p) - d(a,n) + margin)`` over every valid triplet."""
    z = np.asarray(z, dtype=np.float64)
    pos, neg = _masks(np.asarray(labels))
    valid = pos[:, :, None] & neg[:, None, :]
    count = int(valid.sum())
    if count == 0:
        raise DegenerateBatchError("degenerate batch: no (anchor, positive, negative) triplet")
    diff = z[:, None, :] - z[None, :, :]
    d = pairwise_distances(z)
    h = d[:, :, None] - d[:, None, :] + margin
    active = valid & (h > 0)
    loss = np.where(active, h, 0.0).sum() / count
    # dL/dd_ij accumulated over triplets where (i,j) appears as (a,p) or (a,n)
    dd = (active.sum(axis=2) - active.sum(axis=1)) / count
    safe_d = np.where(d > 0, d, 1.0)
    coef = np.where(d > 0, dd / safe_d, 0.0)
    g = coef[:, :, None] * diff
    grad = g.sum(axis=1) - g.sum(axis=0)
    return float(loss), grad


def _first_positive(labels):
    out = np.full(len(labels), -1)
    for i, y in enumerate(labels):
        for j, yj in enumerate(labels):
            if j != i and yj == y:
                out[i] = j
                break
    return out


def npairs_loss(z, labels):
    """Per anchor, cross-entropy of its lowest-index positive among all other
    rows scored by dot product; mean over anchors that have a positive."""
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels)
    b = len(labels)
    p = _first_positive(labels)
    anchors = np.flatnonzero(p >= 0)
    if anchors.size == 0:
        raise DegenerateBatchError("degenerate batch: no anchor has an in-batch positive")
    s = z @ z.T
    s = np.where(np.eye(b, dtype=bool), -np.inf, s)
    s = s - s.max(axis=1, keepdims=True)
    log_prob = s - np.log(np.exp(s).sum(axis=1, keepdims=True))
    loss = -log_prob[anchors, p[anchors]].mean()
    # dL/ds_ij = (softmax_ij - [j == p_i]) / n_anchors for anchor rows
    ds = np.zeros((b, b))
    ds[anchors] = np.exp(log_prob[anchors])
    ds[anchors, p[anchors]] -= 1.0
    ds /= anchors.size
    grad = ds @ z + ds.T @ z
    return float(loss), grad


def ntxent_supervised_loss(z, labels, temperature=0.1):
    """Supervised temperature-scaled cross-entropy over all in-batch positives.

    For each anchor with at least one positive, the average over its positives
    of ``-log softmax`` of ``z_i . z_p / temperature`` against every other row;
    averaged over those anchors.
    """
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels)
    b = len(labels)
    pos, _ = _masks(labels)
    n_pos = pos.sum(axis=1)
    anchors = n_pos > 0
    n_anchor = int(anchors.sum())
    if n_anchor == 0:
        raise DegenerateBatchError("degenerate batch: no anchor has an in-batch positive")
    eye = np.eye(b, dtype=bool)
    s = (z @ z.T) / temperature
    s = np.where(eye, -np.inf, s)
    s = s - s.max(axis=1, keepdims=True)
    log_prob = s - np.log(np.exp(s).sum(axis=1, keepdims=True))
    log_prob = np.where(eye, 0.0, log_prob)
    safe_n = np.where(anchors, n_pos, 1)
    per_anchor = -(np.where(pos, log_prob, 0.0).sum(axis=1)) / safe_n
    loss = per_anchor[anchors].sum() / n_anchor
    soft = np.where(eye, 0.0, np.exp(log_prob))
    ds = soft - pos / safe_n[:, None]
    ds[~anchors] = 0.0
    ds /= n_anchor * temperature
    grad = ds @ z + ds.T @ z
    return float(loss), grad


def weighted_cross_entropy(probs, labels, weights=None):
    """``mean_i weights[y_i] * -log probs[i, y_i]``, normalized by batch size.

    The returned gradient is with respect to the pre-softmax logits that
    produced ``probs``.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    b, k = probs.shape
    w = np.ones(k) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (k,):
        raise ValueError(f"need {k} class weights, got {w.shape}")
    p_true = probs[np.arange(b), labels]
    if np.any(p_true <= 0):
        warnings.warn("true-class probability of 0 clamped to 1e-12")
        p_true = np.maximum(p_true, 1e-12)
    wy = w[labels]
    loss = float((wy * -np.log(p_true)).sum() / b)
    grad = probs.copy()
    grad[np.arange(b), labels] -= 1.0
    grad *= wy[:, None] / b
    return loss, grad
