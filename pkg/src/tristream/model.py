"""The three-stream network: global, local body part, and head streams.

Streams never share parameters. The final descriptor is the concatenation
of the post-BN vectors of every enabled head in canonical order
(g_gmp, g_ae, g_gap, part, h_gmp, h_ae, h_gap).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .backbones import DenseBackbone, StreamBackbone
from .config import ModelConfig
from .errors import ContractError
from .heads import StreamHead
from .losses import HEAD_ORDER
from .parts import PartHead
from .tensor import Tensor


class ThreeStreamNet:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | None = None):
        cfg.validate()
        self.cfg = cfg
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self.global_backbone = self.global_head = None
        self.head_backbone = self.head_head = None
        self.dense_backbone = self.part_head = None
        if "global" in cfg.streams:
            self.global_backbone = StreamBackbone(cfg, rng)
            self.global_head = StreamHead(
                cfg.branch_channels,
                cfg.num_classes,
                rng,
                use_erasing=cfg.use_erasing,
                erase_fraction=cfg.erase_fraction,
                bn_eps=cfg.bn_eps,
                bn_momentum=cfg.bn_momentum,
            )
        if "part" in cfg.streams:
            self.dense_backbone = DenseBackbone(cfg, rng)
            self.part_head = PartHead(
                cfg.num_parts,
                cfg.dense_channels,
                cfg.num_classes,
                rng,
                bn_eps=cfg.bn_eps,
                bn_momentum=cfg.bn_momentum,
            )
        if "head" in cfg.streams:
            self.head_backbone = StreamBackbone(cfg, rng)
            self.head_head = StreamHead(
                cfg.branch_channels,
                cfg.num_classes,
                rng,
                use_erasing=cfg.use_erasing,
                erase_fraction=cfg.erase_fraction,
                bn_eps=cfg.bn_eps,
                bn_momentum=cfg.bn_momentum,
            )

    # ------------------------------------------------------------------
    def forward(self, images: np.ndarray, head_images: np.ndarray | None, training: bool) -> dict:
        """Run every enabled stream on a batch.

        Returns ``pair`` / ``post`` / ``logits`` dicts keyed by head name,
        plus ``part_probs`` (the [N,h,w,K] probability map) when the part
        stream is enabled.
        """
        x = Tensor(np.asarray(images, dtype=np.float64))
        pair: dict[str, Tensor] = {}
        post: dict[str, Tensor] = {}
        logits: dict[str, Tensor] = {}
        part_probs = None

        if self.global_backbone is not None:
            f21, f22 = self.global_backbone(x)
            out = self.global_head(f21, f22, training)
            _collect(pair, post, logits, "g", out)
        if self.dense_backbone is not None:
            dense = self.dense_backbone(x)
            probs, f_l, t_l, p_l = self.part_head(dense, training)
            part_probs = probs
            pair["part"], post["part"], logits["part"] = f_l, t_l, p_l
        if self.head_backbone is not None:
            if head_images is None:
                raise ContractError("head stream enabled but no head images given")
            hx = Tensor(np.asarray(head_images, dtype=np.float64))
            f21, f22 = self.head_backbone(hx)
            out = self.head_head(f21, f22, training)
            _collect(pair, post, logits, "h", out)
        return {"pair": pair, "post": post, "logits": logits, "part_probs": part_probs}

    def dense_features(self, images: np.ndarray) -> np.ndarray:
        """Dense maps only, for pseudo-label generation (no gradients)."""
        if self.dense_backbone is None:
            raise ContractError("part stream is not enabled")
        return self.dense_backbone(Tensor(np.asarray(images, dtype=np.float64))).data

    def extract_descriptors(self, images: np.ndarray, head_images: np.ndarray | None) -> np.ndarray:
        """Eval-mode descriptors: post-BN vectors concatenated in canonical order."""
        out = self.forward(images, head_images, training=False)
        chunks = [out["post"][h].data for h in HEAD_ORDER if h in out["post"]]
        return np.concatenate(chunks, axis=1)

    # ------------------------------------------------------------------
    def named_params(self):
        if self.global_backbone is not None:
            yield from self.global_backbone.named_params("global.backbone")
            yield from self.global_head.named_params("global.head")
        if self.dense_backbone is not None:
            yield from self.dense_backbone.named_params("part.backbone")
            yield from self.part_head.named_params("part.head")
        if self.head_backbone is not None:
            yield from self.head_backbone.named_params("head.backbone")
            yield from self.head_head.named_params("head.head")

    def named_stats(self):
        if self.global_head is not None:
            yield from self.global_head.named_stats("global.head")
        if self.part_head is not None:
            yield from self.part_head.named_stats("part.head")
        if self.head_head is not None:
            yield from self.head_head.named_stats("head.head")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_params()]


def _collect(pair, post, logits, prefix: str, out) -> None:
    pair[f"{prefix}_gmp"], post[f"{prefix}_gmp"], logits[f"{prefix}_gmp"] = out.f_gmp, out.t_gmp, out.p_gmp
    if out.f_ae is not None:
        pair[f"{prefix}_ae"], post[f"{prefix}_ae"], logits[f"{prefix}_ae"] = out.f_ae, out.t_ae, out.p_ae
    pair[f"{prefix}_gap"], post[f"{prefix}_gap"], logits[f"{prefix}_gap"] = out.f_gap, out.t_gap, out.p_gap
