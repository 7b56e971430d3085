"""Bag-level relation classifier over positive/unlabeled splits.

Three score vectors per bag and query relation: the positive head
(W, b) on the mean embedding of B+ (shared storage with the selector
reward), the unlabeled head (W^u, b^u) on the mean of Bu, and their
convex combination. Three losses: cross-entropy on the positive bag,
-log(1 - P(label | Bu)) on the unlabeled bag, and a ranking term on the
combined scores that pushes the distant label above the best runner-up.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkernel as nk
from .errors import ConfigError
from .numkernel import Parameter, Tensor

PROB_CLAMP = 1e-7


@dataclass
class ExtractorParams:
    """Positive head (W, b) and optional unlabeled head (W^u, b^u).

    When the unlabeled head is not allocated (Baseline-AVE), unlabeled
    scores fall back to the positive head's storage.
    """

    W: Parameter
    b: Parameter
    W_unl: Parameter | None = None
    b_unl: Parameter | None = None

    @property
    def n_relations(self) -> int:
        return self.W.value.shape[0]

    @property
    def enc_dim(self) -> int:
        return self.W.value.shape[1]

    def unl_head(self):
        if self.W_unl is None:
            return self.W, self.b
        return self.W_unl, self.b_unl


@dataclass
class BagScores:
    """Score vectors o+, ou, o for one bag under one query relation."""

    o_plus: Tensor
    o_unl: Tensor
    o_comb: Tensor
    alpha: float
    bu_empty: bool = False


@dataclass
class LossTerms:
    l_pos: float
    l_unl: float
    l_bag: float
    total: float
    beta: float


def bag_embedding(member_embeddings, dim: int, dtype=np.float64) -> Tensor:
    """Mean of member sentence embeddings; empty set gives the zero vector."""
    return nk.mean_vectors(member_embeddings, dim=dim, dtype=dtype)


def pos_scores(bplus_embeddings, params: ExtractorParams) -> Tensor:
    emb = bag_embedding(bplus_embeddings, params.enc_dim, params.W.value.dtype)
    return nk.linear(emb, params.W, params.b)


def unl_scores(bunl_embeddings, params: ExtractorParams) -> Tensor:
    W_u, b_u = params.unl_head()
    emb = bag_embedding(bunl_embeddings, params.enc_dim, W_u.value.dtype)
    return nk.linear(emb, W_u, b_u)


def combine(o_plus: Tensor, o_unl: Tensor, alpha: float) -> Tensor:
    if not (0.0 < alpha < 1.0):
        raise ConfigError(f"combination weight alpha must be in (0, 1), got {alpha}")
    return nk.add(nk.scale(o_plus, alpha), nk.scale(o_unl, 1.0 - alpha))


def score_bag(member_embeddings, split, params: ExtractorParams,
              alpha: float) -> BagScores:
    """All three score vectors for one bag given a fixed (B+, Bu) split."""
    pos = [member_embeddings[i] for i in split.positive]
    unl = [member_embeddings[i] for i in split.unlabeled]
    o_plus = pos_scores(pos, params)
    o_unl = unl_scores(unl, params)
    return BagScores(o_plus=o_plus, o_unl=o_unl,
                     o_comb=combine(o_plus, o_unl, alpha),
                     alpha=alpha, bu_empty=not unl)


def loss_pos(scored, labels) -> Tensor:
    """Sum over bags of -log P(label | B+)."""
    terms = [nk.scale(nk.pick(nk.log_softmax(bs.o_plus), r), -1.0)
             for bs, r in zip(scored, labels)]
    return nk.sum_tensors(terms)


def loss_unl(scored, labels) -> Tensor | None:
    """Sum over bags of -log(1 - P(label | Bu)); empty-Bu bags are skipped.

    Returns None when every bag in the batch has an empty unlabeled split.
    """
    terms = []
    for bs, r in zip(scored, labels):
        if bs.bu_empty:
            continue
        lp = nk.pick(nk.log_softmax(bs.o_unl), r)
        terms.append(nk.scale(nk.log1m_exp(lp, PROB_CLAMP), -1.0))
    if not terms:
        return None
    return nk.sum_tensors(terms)


def runner_up(log_probs: np.ndarray, label: int, exclude_na: bool = False) -> int:
    """Highest-probability relation other than the label (ties -> lowest id)."""
    masked = np.array(log_probs, dtype=np.float64)
    masked[label] = -np.inf
    if exclude_na:
        masked[0] = -np.inf
    return int(np.argmax(masked))


def loss_bag(scored, labels, exclude_na_runner_up: bool = False) -> Tensor:
    """Ranking loss on the combined scores: -log P(label|B) - log(1 - P(r*|B))."""
    terms = []
    for bs, r in zip(scored, labels):
        lp = nk.log_softmax(bs.o_comb)
        r_star = runner_up(lp.data, r, exclude_na_runner_up)
        terms.append(nk.scale(nk.pick(lp, r), -1.0))
        terms.append(nk.scale(nk.log1m_exp(nk.pick(lp, r_star), PROB_CLAMP), -1.0))
    return nk.sum_tensors(terms)


def total_loss(scored, labels, beta: float, use_unl: bool = True,
               use_bag: bool = True, exclude_na_runner_up: bool = False):
    """Combined objective; ablation flags drop the unlabeled/ranking terms.

    Returns (LossTerms, scalar tape node).
    """
    parts = []
    l_pos_t = loss_pos(scored, labels)
    parts.append(l_pos_t)
    l_unl_val = 0.0
    if use_unl:
        l_unl_t = loss_unl(scored, labels)
        if l_unl_t is not None:
            parts.append(l_unl_t)
            l_unl_val = l_unl_t.item()
    l_bag_val = 0.0
    if use_bag:
        l_bag_t = loss_bag(scored, labels, exclude_na_runner_up)
        parts.append(nk.scale(l_bag_t, beta))
        l_bag_val = l_bag_t.item()
    total = parts[0] if len(parts) == 1 else nk.sum_tensors(parts)
    terms = LossTerms(l_pos=l_pos_t.item(), l_unl=l_unl_val, l_bag=l_bag_val,
                      total=total.item(), beta=beta)
    return terms, total


def predict(bag_embeddings, select_fn, params: ExtractorParams, alpha: float):
    """Per-relation scores for one bag and the argmax relation.

    For each candidate relation r the selector splits the bag under
    query r, and the score is softmax(o_comb)[r] for that split. The
    scores are one-vs-rest probabilities, not a distribution over
    relations. All math is detached (inference only).
    """
    n_rel = params.n_relations
    W_u, b_u = params.unl_head()
    embs = [np.asarray(e) for e in bag_embeddings]
    scores = np.zeros(n_rel, dtype=np.float64)
    for r in range(n_rel):
        positive, unlabeled = select_fn(r)
        e_pos = (np.mean([embs[i] for i in positive], axis=0) if positive
                 else np.zeros(params.enc_dim, dtype=params.W.value.dtype))
        e_unl = (np.mean([embs[i] for i in unlabeled], axis=0) if unlabeled
                 else np.zeros(params.enc_dim, dtype=params.W.value.dtype))
        o_plus = params.W.value @ e_pos + params.b.value
        o_unl = W_u.value @ e_unl + b_u.value
        o_comb = alpha * o_plus + (1.0 - alpha) * o_unl
        scores[r] = np.exp(nk.log_softmax_np(o_comb))[r]
    return scores, int(np.argmax(scores))
