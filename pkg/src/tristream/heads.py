"""Feature heads for the global and head streams.

Each stream turns its two branch maps into three channel vectors — the
strongest activation (global max pooling), the average (global average
pooling), and the strongest activation after the most energetic horizontal
band has been zeroed out (adversarial erasing) — then batch-normalizes each
vector and projects it to identity logits. Erasing always happens on the
feature map, never on pixels, and it is applied identically during training
and descriptor extraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DegenerateInputError, InvalidBoxError, ShapeError
from .layers import BatchNorm1d, LinearLayer
from .tensor import Tensor


@dataclass(frozen=True)
class HeadBox:
    """Pixel coordinates of a head region: rows [y0, y1), columns [x0, x1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if self.x0 >= self.x1 or self.y0 >= self.y1:
            raise InvalidBoxError(f"empty box {self}")
        if self.x0 < 0 or self.y0 < 0:
            raise InvalidBoxError(f"negative box corner {self}")


def gmp(feature_map) -> Tensor:
    """Per-channel max over the spatial dims of [h,w,C] or [N,h,w,C]."""
    fm = T.as_tensor(feature_map)
    if fm.ndim not in (3, 4) or fm.shape[-3] < 1 or fm.shape[-2] < 1:
        raise ShapeError(f"expected a non-empty spatial map, got shape {fm.shape}")
    return T.reduce_max(fm, axes=(-3, -2))


def gap(feature_map) -> Tensor:
    """Per-channel mean over the spatial dims of [h,w,C] or [N,h,w,C]."""
    fm = T.as_tensor(feature_map)
    if fm.ndim not in (3, 4) or fm.shape[-3] < 1 or fm.shape[-2] < 1:
        raise ShapeError(f"expected a non-empty spatial map, got shape {fm.shape}")
    return T.tmean(fm, axes=(-3, -2))


def erase_band(row_energy: np.ndarray, h: int, fraction: float) -> np.ndarray:
    """Zero-row mask from per-row energies.

    The band has ceil(h * fraction) contiguous rows, centered on the argmax
    row (first index on ties) and shifted to stay inside [0, h).
    Returns a {0,1} mask of shape [..., h].
    """
    band = math.ceil(h * fraction)
    r0 = row_energy.argmax(axis=-1)
    start = np.clip(r0 - band // 2, 0, h - band)
    rows = np.arange(h)
    inside = (rows >= start[..., None]) & (rows < (start + band)[..., None])
    return np.where(inside, 0.0, 1.0)


def adversarial_erase(feature_map, fraction: float = 1.0 / 3.0) -> tuple[np.ndarray, Tensor]:
    """Mask out the highest-energy horizontal band, then max-pool.

    Row energy is the sum of squared activations over width and channels.
    Returns ``(mask, pooled)`` where ``mask`` is the {0,1} row mask
    (per sample for batched input) and ``pooled`` the per-channel max of
    the masked map. The mask is derived from forward values only and is
    treated as a constant by the gradient.
    """
    fm = T.as_tensor(feature_map)
    single = fm.ndim == 3
    if fm.ndim not in (3, 4):
        raise ShapeError(f"expected [h,w,C] or [N,h,w,C], got {fm.shape}")
    h = fm.shape[-3]
    if h < 2:
        raise DegenerateInputError(f"cannot erase a map with {h} row(s)")
    data = fm.data[None] if single else fm.data
    energy = (data**2).sum(axis=(-2, -1))  # [N, h]
    mask = erase_band(energy, h, fraction)  # [N, h]
    mask_full = mask[:, :, None, None]
    if single:
        mask = mask[0]
        mask_full = mask_full[0]
    pooled = gmp(T.mul(fm, mask_full))
    return mask, pooled


@dataclass
class StreamHeadOutput:
    """The three pooled vectors of one stream with their BN'd forms and logits."""

    f_gmp: Tensor
    f_ae: Tensor | None
    f_gap: Tensor
    t_gmp: Tensor
    t_ae: Tensor | None
    t_gap: Tensor
    p_gmp: Tensor
    p_ae: Tensor | None
    p_gap: Tensor
    erase_mask: np.ndarray | None


class StreamHead:
    """BN + classifier for the GMP/AE/GAP vectors; parameters are per-vector."""

    def __init__(
        self,
        channels: int,
        num_classes: int,
        rng: np.random.Generator,
        use_erasing: bool = True,
        erase_fraction: float = 1.0 / 3.0,
        bn_eps: float = 1e-5,
        bn_momentum: float = 0.1,
    ):
        self.use_erasing = use_erasing
        self.erase_fraction = erase_fraction
        names = ["gmp", "ae", "gap"] if use_erasing else ["gmp", "gap"]
        self.bn = {n: BatchNorm1d(channels, eps=bn_eps, momentum=bn_momentum) for n in names}
        self.fc = {n: LinearLayer(channels, num_classes, rng) for n in names}

    def __call__(self, branch_max_map, branch_avg_map, training: bool) -> StreamHeadOutput:
        """Pool the two branch maps; AE and GAP share the second branch."""
        squeeze = branch_max_map.ndim == 3

        def as_batch(v):
            return T.reshape(v, (1, -1)) if squeeze else v

        f_gmp = as_batch(gmp(branch_max_map))
        f_gap = as_batch(gap(branch_avg_map))
        if self.use_erasing:
            mask, f_ae = adversarial_erase(branch_avg_map, self.erase_fraction)
            f_ae = as_batch(f_ae)
        else:
            mask, f_ae = None, None

        t_gmp = self.bn["gmp"](f_gmp, training)
        t_gap = self.bn["gap"](f_gap, training)
        p_gmp = self.fc["gmp"](t_gmp)
        p_gap = self.fc["gap"](t_gap)
        t_ae = p_ae = None
        if self.use_erasing:
            t_ae = self.bn["ae"](f_ae, training)
            p_ae = self.fc["ae"](t_ae)
        return StreamHeadOutput(f_gmp, f_ae, f_gap, t_gmp, t_ae, t_gap, p_gmp, p_ae, p_gap, mask)

    def named_params(self, prefix: str):
        for n, bn in self.bn.items():
            yield from bn.named_params(f"{prefix}.bn_{n}")
        for n, fc in self.fc.items():
            yield from fc.named_params(f"{prefix}.fc_{n}")

    def named_stats(self, prefix: str):
        for n, bn in self.bn.items():
            yield from bn.named_stats(f"{prefix}.bn_{n}")


def crop_head(image: np.ndarray, box: HeadBox | None) -> np.ndarray:
    """Crop the head region and bilinearly resize it back to the image size.

    Interpolation is corner-anchored: output corners sample the corner
    pixels of the crop exactly, so a box covering the whole image is the
    identity. Without a box the top 20% of rows (full width) is used.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3:
        raise ShapeError(f"expected [H,W,3] pixels, got {img.shape}")
    h, w = img.shape[:2]
    if box is None:
        box = HeadBox(0, 0, w, max(1, round(0.2 * h)))
    if box.x1 > w or box.y1 > h:
        raise InvalidBoxError(f"box {box} outside {h}x{w} image")
    crop = img[box.y0 : box.y1, box.x0 : box.x1]
    ch, cw = crop.shape[:2]

    ys = np.linspace(0.0, ch - 1.0, h) if h > 1 else np.zeros(1)
    xs = np.linspace(0.0, cw - 1.0, w) if w > 1 else np.zeros(1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, ch - 1)
    x1 = np.minimum(x0 + 1, cw - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    top = crop[y0][:, x0] * (1 - fx) + crop[y0][:, x1] * fx
    bot = crop[y1][:, x0] * (1 - fx) + crop[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy
