"""Ranking score, BPR loss, cross-view contrast, and the weighted total.

The prediction for a (user, bundle) pair is the sum of the two view-wise
dot products. Training combines a pairwise ranking loss over sampled
triples with a cross-view alignment contrast and the two prototype
losses, weighted and averaged over the per-step Gaussian draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass
class ViewEmbeddings:
    """The four propagated matrices: users/bundles in each of the two views."""

    user_bundle_view: object   # M x D
    bundle_bundle_view: object  # O x D
    user_item_view: object     # M x D
    bundle_item_view: object   # O x D


@dataclass(frozen=True)
class LossWeights:
    gamma_cl: float = 0.04
    gamma_pcl: float = 0.1
    gamma_ot: float = 0.1
    temperature: float = 0.25
    num_samples: int = 1

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        for name in ("gamma_cl", "gamma_pcl", "gamma_ot"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass
class LossBreakdown:
    """Per-step loss components; ``total`` is their weighted sum."""

    l_bpr: object
    l_cl: object
    l_proto: object
    l_ot: object
    total: object = None

    def as_floats(self) -> "LossBreakdown":
        def f(x):
            return float(x.value) if ad.is_tensor(x) else float(x)
        return LossBreakdown(f(self.l_bpr), f(self.l_cl), f(self.l_proto),
                             f(self.l_ot), f(self.total))


def predict_scores(views: ViewEmbeddings, users, bundles) -> np.ndarray:
    """Score matrix y[i][j] for every requested user i and bundle j."""
    users = np.asarray(users, dtype=np.int64)
    bundles = np.asarray(bundles, dtype=np.int64)
    ub, bb = np.asarray(views.user_bundle_view), np.asarray(views.bundle_bundle_view)
    ui, bi = np.asarray(views.user_item_view), np.asarray(views.bundle_item_view)
    if users.size and (users.min() < 0 or users.max() >= ub.shape[0]):
        raise IndexError("user id out of range")
    if bundles.size and (bundles.min() < 0 or bundles.max() >= bb.shape[0]):
        raise IndexError("bundle id out of range")
    return ub[users] @ bb[bundles].T + ui[users] @ bi[bundles].T


def pairwise_scores(views: ViewEmbeddings, users, bundles):
    """Per-pair scores y[i] for aligned id vectors (graph-aware)."""
    u_b = ad.gather_rows(views.user_bundle_view, users)
    b_b = ad.gather_rows(views.bundle_bundle_view, bundles)
    u_i = ad.gather_rows(views.user_item_view, users)
    b_i = ad.gather_rows(views.bundle_item_view, bundles)
    return ad.asum(u_b * b_b, axis=1) + ad.asum(u_i * b_i, axis=1)


def bpr_loss(pos_scores, neg_scores):
    """Sum over triples of -log sigmoid(pos - neg), in the stable softplus form."""
    if pos_scores.shape != neg_scores.shape:
        raise ValueError("positive and negative score vectors must match in length")
    return ad.asum(ad.softplus(neg_scores - pos_scores))


def _info_nce(anchors, candidates, pos_index, temperature: float):
    """Mean over anchors of -log softmax over candidate similarities."""
    logits = ad.matmul(anchors, ad.transpose(candidates)) \
        if ad.is_tensor(anchors) or ad.is_tensor(candidates) \
        else np.asarray(anchors) @ np.asarray(candidates).T
    logits = logits * (1.0 / temperature)
    n_anchor = logits.shape[0]
    one_hot = np.zeros(logits.shape)
    one_hot[np.arange(n_anchor), pos_index] = 1.0
    pos = ad.asum(logits * one_hot, axis=1)
    return ad.amean(ad.logsumexp(logits, axis=1) - pos)


def cross_view_infonce(batch_users, batch_bundles, views: ViewEmbeddings,
                       temperature: float, negatives: str = "batch"):
    """Align each entity's two views against in-batch (or all) alternatives.

    Embeddings are row-normalized before the dot products; the anchor's own
    positive sits in the denominator alongside the negatives.
    """
    batch_users = np.asarray(batch_users, dtype=np.int64)
    batch_bundles = np.asarray(batch_bundles, dtype=np.int64)
    if batch_users.size == 0 or batch_bundles.size == 0:
        raise ValueError("cross-view contrast needs a non-empty batch")
    if negatives not in ("batch", "full"):
        raise ValueError(f"unknown negative scheme {negatives!r}")

    def family_loss(view_a, view_b, ids):
        a = ad.l2_normalize(ad.gather_rows(view_a, ids))
        if negatives == "batch":
            b = ad.l2_normalize(ad.gather_rows(view_b, ids))
            return _info_nce(a, b, np.arange(len(ids)), temperature)
        b = ad.l2_normalize(view_b)
        return _info_nce(a, b, ids, temperature)

    user_term = family_loss(views.user_bundle_view, views.user_item_view, batch_users)
    bundle_term = family_loss(views.bundle_bundle_view, views.bundle_item_view, batch_bundles)
    return user_term + bundle_term


def weighted_total(parts: LossBreakdown, w: LossWeights):
    return parts.l_bpr + w.gamma_cl * parts.l_cl \
        + w.gamma_pcl * parts.l_proto + w.gamma_ot * parts.l_ot


def total_loss(per_sample: list[LossBreakdown], w: LossWeights):
    """Average of the weighted per-sample losses over the draw count."""
    if not per_sample:
        raise ValueError("need at least one per-sample loss")
    acc = None
    for parts in per_sample:
        term = weighted_total(parts, w)
        acc = term if acc is None else acc + term
    return acc * (1.0 / len(per_sample))
