"""Desk-scale three-stream person re-identification.

Training with identity, multi-similarity, and pseudo part-segmentation
losses; two-stage k-means pseudo-labeling; cosine retrieval scored with
CMC and mAP.
"""

from .config import ModelConfig, RunConfig
from .data import Dataset, ImageSample, augment, generate_synthetic, load_dataset, pk_sampler
from .evaluation import (
    Descriptor,
    EvalReport,
    cmc_rank_k,
    cosine_similarity,
    evaluate,
    evaluate_descriptors,
    mean_average_precision,
    rank_gallery,
)
from .heads import HeadBox, adversarial_erase, crop_head, gap, gmp
from .losses import (
    FeatureBundle,
    PairLossParams,
    identity_loss,
    ms_loss,
    psd_loss,
    total_loss,
)
from .model import ThreeStreamNet
from .parts import part_aggregate, part_probabilities
from .pseudo import (
    KMeansResult,
    PseudoLabelMap,
    foreground_split,
    generate_pseudo_labels,
    kmeans,
    refresh_policy,
)
from .tensor import Tape, Tensor, backward
from .train import SGDMomentum, lr_schedule, train

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "Descriptor",
    "EvalReport",
    "FeatureBundle",
    "HeadBox",
    "ImageSample",
    "KMeansResult",
    "ModelConfig",
    "PairLossParams",
    "PseudoLabelMap",
    "RunConfig",
    "SGDMomentum",
    "Tape",
    "Tensor",
    "ThreeStreamNet",
    "adversarial_erase",
    "augment",
    "backward",
    "cmc_rank_k",
    "cosine_similarity",
    "crop_head",
    "evaluate",
    "evaluate_descriptors",
    "foreground_split",
    "gap",
    "generate_pseudo_labels",
    "generate_synthetic",
    "gmp",
    "identity_loss",
    "kmeans",
    "load_dataset",
    "lr_schedule",
    "mean_average_precision",
    "ms_loss",
    "part_aggregate",
    "part_probabilities",
    "pk_sampler",
    "psd_loss",
    "rank_gallery",
    "refresh_policy",
    "total_loss",
    "train",
]
