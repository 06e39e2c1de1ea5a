"""Prototype banks, balanced assignment via Sinkhorn, prototype losses.

Nodes are softly assigned to trainable prototype vectors by solving the
entropy-regularized transport problem

    max_Q  <S, Q> + reg * H(Q)
    s.t.   Q 1 = (1/M) 1   and   Q^T 1 = (1/K) 1,

whose solution is a doubly-rescaled exponential of S/reg, found by
alternating row/column renormalization (computed in the log domain, which
subsumes the usual subtract-the-row-max overflow guard). The assignment
is a constant to every loss built from it: gradients flow through the
similarity scores only.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp as _lse

from . import autodiff as ad


@dataclass
class PrototypeBank:
    """Trainable prototype matrices for the user and bundle families."""

    user: ad.Tensor    # K_u x D
    bundle: ad.Tensor  # K_b x D

    def __post_init__(self):
        for name in ("user", "bundle"):
            protos = getattr(self, name)
            if protos.shape[0] < 1:
                raise ValueError(f"{name} prototype count must be >= 1")

    def parameters(self) -> list[ad.Tensor]:
        return [self.user, self.bundle]


@dataclass(frozen=True)
class SinkhornConfig:
    entropy_reg: float = 0.05
    max_iters: int = 100
    tol: float = 1e-6

    def __post_init__(self):
        if self.entropy_reg <= 0:
            raise ValueError("entropy_reg must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass(frozen=True)
class AssignmentResult:
    """Balanced soft assignment: rows sum to 1/M, columns to 1/K.

    ``q = Diag(beta) * exp(S/reg) * Diag(alpha)`` with row scaling ``beta``
    (length M) and column scaling ``alpha`` (length K).
    """

    q: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    iterations_used: int
    converged: bool

    @property
    def hard(self) -> np.ndarray:
        """Per-row argmax prototype index; ties resolve to the lowest index."""
        return np.argmax(self.q, axis=1)


def similarity(emb, protos):
    """Dot-product scores between rows and prototypes: S = E P^T."""
    if emb.shape[1] != protos.shape[1]:
        raise ValueError(
            f"dimension mismatch: embeddings {emb.shape} vs prototypes {protos.shape}")
    return ad.matmul(emb, ad.transpose(protos)) if ad.is_tensor(emb) or ad.is_tensor(protos) \
        else np.asarray(emb) @ np.asarray(protos).T


def sinkhorn_assign(scores: np.ndarray, cfg: SinkhornConfig) -> AssignmentResult:
    """Solve the balanced entropic assignment for a score matrix."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2 or s.size == 0:
        raise ValueError("scores must be a non-empty 2-d matrix")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    m, k = s.shape
    if m < k:
        warnings.warn(f"fewer rows ({m}) than prototypes ({k}); "
                      "the equal-partition constraint is still enforced",
                      stacklevel=2)
    base = s / cfg.entropy_reg
    log_row_target = -np.log(m)
    log_col_target = -np.log(k)
    f = np.zeros(m)
    g = np.zeros(k)
    row_target = np.full(m, 1.0 / m)
    col_target = np.full(k, 1.0 / k)

    iterations = 0
    converged = False
    for iterations in range(1, cfg.max_iters + 1):
        f = log_row_target - _lse(base + g[None, :], axis=1)
        g = log_col_target - _lse(base + f[:, None], axis=0)
        q = np.exp(base + f[:, None] + g[None, :])
        row_err = np.max(np.abs(q.sum(axis=1) - row_target))
        col_err = np.max(np.abs(q.sum(axis=0) - col_target))
        if max(row_err, col_err) < cfg.tol:
            converged = True
            break
    return AssignmentResult(q, np.exp(g), np.exp(f), iterations, converged)


def proto_infonce(emb, protos, assigned, temperature: float):
    """Softmax contrast of each row against its assigned prototype.

    Sum over rows of -log softmax(E P^T / tau)[row, assigned[row]];
    gradients reach both the embeddings and the prototypes.
    """
    assigned = np.asarray(assigned)
    k = protos.shape[0]
    logits = similarity(emb, protos)
    logits = logits * (1.0 / temperature)
    one_hot = np.zeros((len(assigned), k))
    one_hot[np.arange(len(assigned)), assigned] = 1.0
    pulled = ad.asum(logits * one_hot, axis=1)
    return ad.asum(ad.logsumexp(logits, axis=1) - pulled)


def ot_loss(assignment: AssignmentResult, scores, temperature: float):
    """Cross-entropy <Q, -log softmax(S/tau)> with the assignment held fixed.

    Raw scores can be nonpositive, so the inner term is normalized row-wise
    before the log; the assignment matrix enters as a constant.
    """
    log_p = ad.log_softmax(scores * (1.0 / temperature), axis=1)
    return -ad.asum(assignment.q * log_p)


def prototype_step(user_emb, bundle_emb, bank: PrototypeBank, cfg: SinkhornConfig,
                   temperature: float,
                   assignments: tuple[AssignmentResult, AssignmentResult] | None = None):
    """Both prototype losses over the given user and bundle embedding rows.

    Callers choose the scope by what they pass: all rows for whole-node-set
    clustering, batch rows for in-batch clustering. Precomputed assignments
    may be supplied to reuse a stale clustering between refreshes.

    Returns ``(contrast_loss, transport_loss, (user_assign, bundle_assign))``.
    """
    s_user = similarity(user_emb, bank.user)
    s_bundle = similarity(bundle_emb, bank.bundle)
    if assignments is None:
        a_user = sinkhorn_assign(s_user.value if ad.is_tensor(s_user) else s_user, cfg)
        a_bundle = sinkhorn_assign(s_bundle.value if ad.is_tensor(s_bundle) else s_bundle, cfg)
    else:
        a_user, a_bundle = assignments
    contrast = proto_infonce(user_emb, bank.user, a_user.hard, temperature) \
        + proto_infonce(bundle_emb, bank.bundle, a_bundle.hard, temperature)
    transport = ot_loss(a_user, s_user, temperature) \
        + ot_loss(a_bundle, s_bundle, temperature)
    return contrast, transport, (a_user, a_bundle)
