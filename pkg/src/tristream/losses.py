"""The three training losses and their weighted total.

Identity classification sums cross-entropy over every logit head;
the pair loss applies the multi-similarity formulation to every pre-BN
feature head with raw dot-product similarity and no pair mining; the part
segmentation loss is pixel-summed cross entropy between predicted part
probabilities and the pseudo-label map.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError
from .tensor import Tensor

log = logging.getLogger(__name__)

# canonical head order; also the descriptor concatenation order
HEAD_ORDER = ("g_gmp", "g_ae", "g_gap", "part", "h_gmp", "h_ae", "h_gap")

PROB_FLOOR = 1e-12


@dataclass
class PairLossParams:
    """Scales for positive/negative terms and the similarity offset."""

    alpha_pos: float = 2.0
    alpha_neg: float = 40.0
    margin: float = 0.5

    def __post_init__(self):
        if self.alpha_pos <= 0 or self.alpha_neg <= 0:
            raise ContractError("pair loss scales must be positive")


@dataclass
class FeatureBundle:
    """All per-image head outputs: pre-BN vectors, post-BN vectors, logits.

    Keys follow HEAD_ORDER; a reduced-stream model simply has fewer heads.
    """

    pair_feats: dict[str, Tensor]  # pre-BN vectors, length Cb (or part dim)
    post_bn: dict[str, Tensor]
    logits: dict[str, Tensor]  # length C
    label_one_hot: np.ndarray | None = None

    @property
    def heads(self) -> tuple[str, ...]:
        return tuple(h for h in HEAD_ORDER if h in self.logits)


def _validate_one_hot(y: np.ndarray) -> int:
    y = np.asarray(y)
    if y.ndim != 1 or not np.all((y == 0) | (y == 1)) or y.sum() != 1:
        raise ContractError("identity label must be exactly one-hot")
    return int(y.argmax())


def _ce_from_logits(logits: Tensor, one_hot: np.ndarray) -> Tensor:
    # -ln softmax(logits)[true] computed stably as logsumexp(logits) - logits[true]
    true_logit = T.tsum(T.mul(logits, one_hot))
    return T.sub(T.logsumexp(logits, axis=-1), true_logit)


def identity_loss(bundle: FeatureBundle) -> Tensor:
    """Cross-entropy against the image identity, summed over every logit head."""
    if bundle.label_one_hot is None:
        raise ContractError("bundle carries no identity label")
    _validate_one_hot(bundle.label_one_hot)
    total = None
    for h in bundle.heads:
        ce = _ce_from_logits(bundle.logits[h], bundle.label_one_hot)
        total = ce if total is None else T.add(total, ce)
    return total


def _ms_side(anchor_vec: Tensor, others: list[Tensor], scale: float, margin: float, sign: float) -> Tensor | None:
    if not others:
        return None
    dots = [T.tsum(T.mul(anchor_vec, o)) for o in others]
    vec = T.concat([T.reshape(d, (1,)) for d in dots], axis=0)
    z = T.mul(T.sub(vec, margin), sign * scale)
    return T.mul(T.log1p_sum_exp(z, axis=-1), 1.0 / scale)


def ms_loss(
    anchor: FeatureBundle,
    positives: list[FeatureBundle],
    negatives: list[FeatureBundle],
    params: PairLossParams,
) -> Tensor:
    """Multi-similarity loss for one anchor, summed over the feature heads.

    Similarity is the raw dot product of pre-BN vectors. All given
    positives/negatives participate; empty sets contribute exactly zero.
    """
    total = Tensor(0.0)
    for h in anchor.heads:
        f = anchor.pair_feats[h]
        pos = _ms_side(f, [b.pair_feats[h] for b in positives], params.alpha_pos, params.margin, -1.0)
        neg = _ms_side(f, [b.pair_feats[h] for b in negatives], params.alpha_neg, params.margin, +1.0)
        if pos is not None:
            total = T.add(total, pos)
        if neg is not None:
            total = T.add(total, neg)
    return total


def psd_loss(part_probs, target_one_hot) -> Tensor:
    """Cross entropy summed over the spatial dims (and batch, if present).

    Probabilities below 1e-12 at labeled positions are clamped before the
    log and flagged with a warning.
    """
    probs = T.as_tensor(part_probs)
    target = np.asarray(target_one_hot, dtype=np.float64)
    if probs.shape != target.shape:
        raise ContractError(f"probability/label shapes differ: {probs.shape} vs {target.shape}")
    if np.any((probs.data < PROB_FLOOR) & (target > 0)):
        log.warning("part probability underflow at labeled pixels; clamped to %.0e", PROB_FLOOR)
    logp = T.log(T.clamp_min(probs, PROB_FLOOR))
    return T.neg(T.tsum(T.mul(logp, target)))


def total_loss(l_id, l_pair, l_psd, lambda_pair: float, lambda_psd: float) -> Tensor:
    if lambda_pair < 0 or lambda_psd < 0:
        raise ContractError("loss weights must be >= 0")
    out = T.add(l_id, T.mul(l_pair, lambda_pair))
    return T.add(out, T.mul(l_psd, lambda_psd))


# ---------------------------------------------------------------------------
# batched forms used by the training loop (means over the batch dimension)


def batch_identity_loss(logits_by_head: dict[str, Tensor], labels: np.ndarray) -> Tensor:
    """Mean over images of the per-image identity loss."""
    idx = np.asarray(labels, dtype=np.int64)
    total = None
    for h in HEAD_ORDER:
        if h not in logits_by_head:
            continue
        logits = logits_by_head[h]
        ce = T.sub(T.logsumexp(logits, axis=-1), T.gather_last(logits, idx))
        term = T.tmean(ce)
        total = term if total is None else T.add(total, term)
    return total


def batch_ms_loss(feats_by_head: dict[str, Tensor], labels: np.ndarray, params: PairLossParams) -> Tensor:
    """Mean over anchors of the multi-similarity loss, all heads.

    For each anchor the positives are the other same-identity images in the
    batch and the negatives all different-identity images.
    """
    idx = np.asarray(labels)
    same = idx[:, None] == idx[None, :]
    pos_mask = same & ~np.eye(len(idx), dtype=bool)
    neg_mask = ~same
    total = None
    for h in HEAD_ORDER:
        if h not in feats_by_head:
            continue
        x = feats_by_head[h]
        sims = T.matmul(x, T.transpose(x))
        z_pos = T.mul(T.sub(sims, params.margin), -params.alpha_pos)
        z_neg = T.mul(T.sub(sims, params.margin), params.alpha_neg)
        row_pos = T.mul(T.log1p_sum_exp(z_pos, mask=pos_mask, axis=-1), 1.0 / params.alpha_pos)
        row_neg = T.mul(T.log1p_sum_exp(z_neg, mask=neg_mask, axis=-1), 1.0 / params.alpha_neg)
        term = T.add(T.tmean(row_pos), T.tmean(row_neg))
        total = term if total is None else T.add(total, term)
    return total


def batch_psd_loss(part_probs: Tensor, target_one_hot: np.ndarray) -> Tensor:
    """Mean over images of the pixel-summed segmentation loss."""
    n = part_probs.shape[0]
    return T.div(psd_loss(part_probs, target_one_hot), float(n))
