"""Local body part stream: per-pixel part probabilities and part-pooled features.

A 1x1 classifier turns the dense map into per-pixel probabilities over
``K`` channels (channel 0 is background by convention). Each non-background
channel weights the dense map, the weighted map is averaged over all pixels,
and the per-part vectors are concatenated in ascending part order.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .layers import BatchNorm1d, LinearLayer
from .tensor import Tensor


def part_probabilities(dense_map, part_weights) -> Tensor:
    """Softmax over ``K`` part channels of a 1x1 projection.

    ``dense_map``: [h,w,Cd] or [N,h,w,Cd]; ``part_weights``: [K,Cd].
    Output has the same leading dims with a trailing K axis; each pixel's
    probabilities sum to 1.
    """
    fm = T.as_tensor(dense_map)
    wp = T.as_tensor(part_weights)
    if wp.ndim != 2:
        raise ShapeError(f"part weights must be [K, Cd], got {wp.shape}")
    if fm.shape[-1] != wp.shape[1]:
        raise ShapeError(f"channel mismatch: map {fm.shape} vs weights {wp.shape}")
    lead = fm.shape[:-1]
    flat = T.reshape(fm, (-1, fm.shape[-1]))
    logits = T.matmul(flat, T.transpose(wp))
    return T.softmax(T.reshape(logits, lead + (wp.shape[0],)), axis=-1)


def part_aggregate(dense_map, part_probs) -> tuple[Tensor, Tensor]:
    """Probability-weighted average pooling per non-background part.

    Returns ``(f_parts, f_l)``: ``f_parts`` is [N, K-1, Cd] (or [K-1, Cd]
    for a single map) and ``f_l`` its flattening in ascending part order.
    The normalizer is the full pixel count h*w; background (channel 0)
    contributes nothing.
    """
    fm = T.as_tensor(dense_map)
    pp = T.as_tensor(part_probs)
    single = fm.ndim == 3
    if single:
        fm = T.reshape(fm, (1,) + fm.shape)
        pp = T.reshape(pp, (1,) + pp.shape)
    if fm.shape[:3] != pp.shape[:3]:
        raise ShapeError(f"spatial dims differ: {fm.shape} vs {pp.shape}")
    k = pp.shape[-1]
    fg = T.narrow(pp, axis=-1, start=1, length=k - 1)
    f_parts = T.weighted_pool(fg, fm)  # [N, K-1, Cd]
    n = f_parts.shape[0]
    f_l = T.reshape(f_parts, (n, (k - 1) * fm.shape[-1]))
    if single:
        f_parts = T.reshape(f_parts, f_parts.shape[1:])
        f_l = T.reshape(f_l, (f_l.shape[1],))
    return f_parts, f_l


class PartHead:
    """BN + classifier over the concatenated part vector."""

    def __init__(
        self,
        num_parts: int,
        dense_channels: int,
        num_classes: int,
        rng: np.random.Generator,
        bn_eps: float = 1e-5,
        bn_momentum: float = 0.1,
    ):
        dim = (num_parts - 1) * dense_channels
        fan_in = dense_channels
        self.part_weights = Tensor(
            T.kaiming_uniform(rng, (num_parts, dense_channels), fan_in), requires_grad=True
        )
        self.bn = BatchNorm1d(dim, eps=bn_eps, momentum=bn_momentum)
        self.fc = LinearLayer(dim, num_classes, rng)

    def __call__(self, dense_map, training: bool):
        """Run probabilities, aggregation, BN, and classifier; returns (P, f_l, t_l, p_l)."""
        probs = part_probabilities(dense_map, self.part_weights)
        _, f_l = part_aggregate(dense_map, probs)
        batched = f_l if f_l.ndim == 2 else T.reshape(f_l, (1, -1))
        t_l = self.bn(batched, training)
        p_l = self.fc(t_l)
        return probs, batched, t_l, p_l

    def named_params(self, prefix: str):
        yield f"{prefix}.part_weights", self.part_weights
        yield from self.bn.named_params(f"{prefix}.bn")
        yield from self.fc.named_params(f"{prefix}.fc")

    def named_stats(self, prefix: str):
        yield from self.bn.named_stats(f"{prefix}.bn")
