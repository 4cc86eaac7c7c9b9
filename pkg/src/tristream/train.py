"""Training loop: warmup + cosine schedule, SGD with momentum, checkpointing.

One epoch = refresh the pseudo-label store from the current model, then one
pass of identity-balanced PK batches through all enabled streams, stepping
on the weighted sum of the identity, pair, and part-segmentation losses.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import losses as L
from . import tensor as T
from .checkpoint import save_checkpoint
from .config import RunConfig
from .data import Dataset, augment, load_dataset, pk_sampler, prepare_inputs
from .errors import NonFiniteError, TrainingDivergedError
from .evaluation import EvalReport, evaluate
from .model import ThreeStreamNet
from .pseudo import generate_pseudo_labels, refresh_policy
from .tensor import Tape

log = logging.getLogger(__name__)

METRICS_HEADER = "epoch,loss_id,loss_pair,loss_psd,loss_total,lr"


def lr_schedule(epoch: float, cfg: RunConfig) -> float:
    """Linear warmup to the peak rate, then cosine annealing to the final rate.

    Out-of-range epochs are clamped to the schedule ends with a warning.
    """
    total = cfg.epochs_warmup + cfg.epochs_main
    if epoch < 0 or epoch > total:
        log.warning("epoch %.2f outside schedule [0, %d]; clamping", epoch, total)
        epoch = min(max(epoch, 0.0), float(total))
    if epoch <= cfg.epochs_warmup and cfg.epochs_warmup > 0:
        frac = epoch / cfg.epochs_warmup
        return cfg.lr_init * (1.0 - frac) + cfg.lr_peak * frac
    t = (epoch - cfg.epochs_warmup) / cfg.epochs_main
    w = (1.0 + math.cos(math.pi * t)) / 2.0
    return cfg.lr_final * (1.0 - w) + cfg.lr_peak * w


class SGDMomentum:
    """SGD with momentum and L2 weight decay added to the raw gradient."""

    def __init__(self, named_params, momentum: float = 0.9, weight_decay: float = 5e-4):
        self.named = list(named_params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(p.data) for name, p in self.named}

    def step(self, lr: float) -> None:
        for name, p in self.named:
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data
            v = self.velocity[name]
            v *= self.momentum
            v += g
            p.data = p.data - lr * v

    def zero_grad(self) -> None:
        for _, p in self.named:
            p.grad = None

    def named_buffers(self):
        for name, _ in self.named:
            yield f"momentum/{name}", self.velocity[name]

    def load_buffers(self, buffers: dict[str, np.ndarray]) -> None:
        for name, _ in self.named:
            key = f"momentum/{name}"
            if key in buffers:
                self.velocity[name] = buffers[key].copy()


@dataclass
class TrainResult:
    model: ThreeStreamNet
    metrics_path: Path
    checkpoint_path: Path
    final_report: EvalReport | None
    metrics: list[dict]


def _refresh_pseudo_labels(model: ThreeStreamNet, dataset: Dataset, cfg: RunConfig, epoch: int) -> dict[int, np.ndarray]:
    """One-hot pseudo-label maps for every training image, keyed by record index."""
    store: dict[int, np.ndarray] = {}
    idxs = dataset.split_indices("train")
    for lo in range(0, len(idxs), 64):
        chunk = idxs[lo : lo + 64]
        images = np.stack([dataset.load_sample(i).pixels for i in chunk])
        dense = model.dense_features(images)
        for i, fmap in zip(chunk, dense):
            seed = np.random.SeedSequence([cfg.seed, epoch, dataset.records[i].sample_id])
            store[i] = generate_pseudo_labels(fmap, cfg.num_parts, seed, epoch=epoch).one_hot
    return store


def _dump_divergence(out_dir: Path, epoch: int, batch: list[int], parts: dict) -> Path:
    dump = out_dir / "diverged_batch.json"
    payload = {
        "epoch": epoch,
        "batch_record_indices": batch,
        "loss_components": {k: (v if math.isfinite(v) else repr(v)) for k, v in parts.items()},
    }
    dump.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return dump


def train(cfg: RunConfig, dataset: Dataset | None = None) -> TrainResult:
    cfg.validate()
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if dataset is None:
        dataset = load_dataset(cfg.dataset_root, allow_shared_identities=cfg.allow_shared_test_identities)
    if dataset.num_classes != cfg.num_classes:
        cfg.num_classes = dataset.num_classes
        cfg.validate()

    seq = np.random.SeedSequence(cfg.seed)
    init_seq, sampler_seq, augment_seq = seq.spawn(3)
    model = ThreeStreamNet(cfg, rng=np.random.default_rng(init_seq))
    optimizer = SGDMomentum(model.named_params(), cfg.sgd_momentum, cfg.weight_decay)
    sampler_rng = np.random.default_rng(sampler_seq)
    augment_rng = np.random.default_rng(augment_seq)
    params = L.PairLossParams(cfg.alpha_pos, cfg.alpha_neg, cfg.pair_margin)

    metrics_path = out_dir / "metrics.csv"
    ckpt_path = out_dir / "checkpoint.bin"
    metrics: list[dict] = []
    report = None
    use_part = "part" in cfg.streams
    need_head = "head" in cfg.streams

    for epoch in range(cfg.total_epochs):
        try:
            label_store = (
                _refresh_pseudo_labels(model, dataset, cfg, epoch) if use_part and refresh_policy(epoch) else {}
            )
        except NonFiniteError as e:
            dump = _dump_divergence(out_dir, epoch, [], {})
            raise TrainingDivergedError(
                f"non-finite features during pseudo-label refresh: {e}; diagnostics at {dump}"
            ) from e
        lr = lr_schedule(epoch, cfg)
        sums = {"loss_id": 0.0, "loss_pair": 0.0, "loss_psd": 0.0, "loss_total": 0.0}
        batches = pk_sampler(dataset, cfg.batch_identities, cfg.batch_instances, sampler_rng)
        for batch in batches:
            samples = [augment(dataset.load_sample(i), augment_rng) for i in batch]
            images, head_images = prepare_inputs(samples, need_head)
            labels = np.array([s.identity for s in samples], dtype=np.int64)
            optimizer.zero_grad()
            parts_log: dict[str, float] = {}
            try:
                with Tape() as tape:
                    out = model.forward(images, head_images, training=True)
                    l_id = L.batch_identity_loss(out["logits"], labels)
                    l_pair = L.batch_ms_loss(out["pair"], labels, params)
                    if use_part:
                        targets = np.stack([label_store[i] for i in batch])
                        l_psd = L.batch_psd_loss(out["part_probs"], targets)
                    else:
                        l_psd = T.Tensor(0.0)
                    loss = L.total_loss(l_id, l_pair, l_psd, cfg.lambda_pair, cfg.lambda_psd)
                    parts_log = {
                        "loss_id": l_id.item(),
                        "loss_pair": l_pair.item(),
                        "loss_psd": l_psd.item(),
                        "loss_total": loss.item(),
                    }
                    if not math.isfinite(parts_log["loss_total"]):
                        raise NonFiniteError("non-finite total loss")
                    T.backward(loss, tape)
            except NonFiniteError as e:
                dump = _dump_divergence(out_dir, epoch, batch, parts_log)
                raise TrainingDivergedError(f"{e}; diagnostics at {dump}") from e
            optimizer.step(lr)
            for k in sums:
                sums[k] += parts_log[k]

        row = {"epoch": epoch, "lr": lr}
        row.update({k: v / len(batches) for k, v in sums.items()})
        metrics.append(row)
        _write_metrics(metrics_path, metrics)
        save_checkpoint(ckpt_path, model, cfg, epoch, optimizer, rng_states=_rng_states(sampler_rng, augment_rng))
        if cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
            report = _guarded_eval(model, dataset, cfg, out_dir, epoch)
            log.info("epoch %d eval:\n%s", epoch, report.table())

    report = _guarded_eval(model, dataset, cfg, out_dir, cfg.total_epochs - 1)
    return TrainResult(model, metrics_path, ckpt_path, report, metrics)


def _guarded_eval(model, dataset, cfg: RunConfig, out_dir: Path, epoch: int) -> EvalReport:
    try:
        return evaluate(model, dataset, exclude_same_sample=cfg.exclude_same_sample)
    except NonFiniteError as e:
        dump = _dump_divergence(out_dir, epoch, [], {})
        raise TrainingDivergedError(
            f"non-finite features during evaluation: {e}; diagnostics at {dump}"
        ) from e


def _write_metrics(path: Path, metrics: list[dict]) -> None:
    lines = [METRICS_HEADER]
    for row in metrics:
        lines.append(
            f"{row['epoch']},{row['loss_id']!r},{row['loss_pair']!r},"
            f"{row['loss_psd']!r},{row['loss_total']!r},{row['lr']!r}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _rng_states(sampler_rng, augment_rng) -> dict:
    return {
        "sampler": sampler_rng.bit_generator.state,
        "augment": augment_rng.bit_generator.state,
    }
