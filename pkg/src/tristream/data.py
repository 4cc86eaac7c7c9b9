"""Synthetic clothes-change dataset, manifest I/O, PK sampling, augmentation.

The generator draws stick-figure-like persons: head color/pattern, body
proportions, and shoe color are persistent per identity, while torso and
leg colors switch with the clothes id. That makes the head region the
clothes-invariant cue and the torso the misleading one — the structure the
three streams are meant to exploit.

Manifest format (one header line, comma separated)::

    path,identity,clothes_id,camera_id,x0,y0,x1,y1,split

An absent head box is encoded as four ``-1`` values; paths are relative to
the dataset root.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, ManifestError
from .heads import HeadBox, crop_head

MANIFEST_NAME = "manifest.csv"
MANIFEST_HEADER = "path,identity,clothes_id,camera_id,x0,y0,x1,y1,split"
SPLITS = ("train", "query", "gallery")


@dataclass
class ImageSample:
    pixels: np.ndarray  # [H, W, 3] in [0, 1]
    identity: int
    clothes_id: int
    camera_id: int
    head_box: HeadBox | None
    sample_id: int


@dataclass
class ManifestRecord:
    path: str
    identity: int
    clothes_id: int
    camera_id: int
    box: HeadBox | None
    split: str
    sample_id: int = -1


# ---------------------------------------------------------------------------
# synthetic generation


def _vivid(rng: np.random.Generator) -> np.ndarray:
    h, s, v = rng.uniform(0, 1), rng.uniform(0.65, 1.0), rng.uniform(0.55, 0.95)
    return np.array(colorsys.hsv_to_rgb(h, s, v))


def _distinct_outfits(count: int, rng: np.random.Generator, min_dist: float = 0.45) -> list[dict]:
    """Torso/leg colors per clothes id, kept apart so outfits are distinguishable."""
    torsos: list[np.ndarray] = []
    while len(torsos) < count:
        c = _vivid(rng)
        if all(np.linalg.norm(c - t) >= min_dist for t in torsos):
            torsos.append(c)
    return [{"torso": t, "legs": _vivid(rng)} for t in torsos]


def _identity_traits(identity: int, rng: np.random.Generator, hair_palette: int = 0) -> dict:
    """Persistent appearance of one identity.

    With ``hair_palette > 0`` hair hues come from a small fixed palette
    (identities collide by pigeonhole), so the head region alone cannot
    separate every identity; shoes and proportions stay unique per identity.
    """
    golden = 0.6180339887498949
    if hair_palette > 0:
        # shared hues, one skin tone, one head size: identities in the same
        # hue bucket are indistinguishable from the head region alone
        hair_hue = (identity % hair_palette) / hair_palette
        skin = np.array([0.85, 0.65, 0.45])
        hair_sv = (0.9, 0.8)
        head_half = 0.13
    else:
        hair_hue = (identity * golden + rng.uniform(-0.03, 0.03)) % 1.0
        skin = np.array([rng.uniform(0.55, 0.95), rng.uniform(0.45, 0.8), rng.uniform(0.35, 0.7)])
        hair_sv = (rng.uniform(0.75, 1.0), rng.uniform(0.6, 0.95))
        head_half = rng.uniform(0.11, 0.16)
    return {
        "hair": np.array(colorsys.hsv_to_rgb(hair_hue, *hair_sv)),
        "skin": skin,
        "shoes": _vivid(rng),
        "shoulder": rng.uniform(0.22, 0.34),  # halfwidth as fraction of W
        "head_half": head_half,
        "leg_gap": rng.uniform(0.04, 0.09),
    }


def _render(
    traits: dict,
    clothes: dict,
    size: tuple[int, int],
    rng: np.random.Generator,
) -> tuple[np.ndarray, HeadBox]:
    h, w = size
    img = np.empty((h, w, 3))
    img[:] = rng.uniform(0.05, 0.30, size=3)

    cx = w / 2 + rng.integers(-2, 3)
    head_y0, head_y1 = round(0.06 * h), round(0.22 * h)
    torso_y1 = round(0.58 * h)
    legs_y1 = round(0.84 * h)
    shoes_y1 = round(0.97 * h)

    def span(halfwidth_frac: float) -> tuple[int, int]:
        half = halfwidth_frac * w
        return max(0, round(cx - half)), min(w, round(cx + half))

    hx0, hx1 = span(traits["head_half"])
    hair_split = head_y0 + max(1, round(0.4 * (head_y1 - head_y0)))
    img[head_y0:hair_split, hx0:hx1] = traits["hair"]
    img[hair_split:head_y1, hx0:hx1] = traits["skin"]

    tx0, tx1 = span(traits["shoulder"])
    img[head_y1:torso_y1, tx0:tx1] = clothes["torso"]

    gap = max(1, round(traits["leg_gap"] * w))
    lx0, lx1 = span(traits["shoulder"] * 0.85)
    mid = round(cx)
    img[torso_y1:legs_y1, lx0 : mid - gap // 2] = clothes["legs"]
    img[torso_y1:legs_y1, mid + gap // 2 : lx1] = clothes["legs"]
    img[legs_y1:shoes_y1, lx0 : mid - gap // 2] = traits["shoes"]
    img[legs_y1:shoes_y1, mid + gap // 2 : lx1] = traits["shoes"]

    img += rng.normal(0.0, 0.02, img.shape)
    np.clip(img, 0.0, 1.0, out=img)

    box = HeadBox(
        x0=max(0, hx0 - 1),
        y0=max(0, head_y0 - 1),
        x1=min(w, hx1 + 1),
        y1=min(h, head_y1 + 1),
    )
    return img, box


def generate_synthetic(
    out_dir,
    num_ids: int,
    imgs_per_id: int,
    clothes_per_id: int = 2,
    size: tuple[int, int] = (64, 32),
    seed: int = 0,
    query_per_id: int = 2,
    gallery_per_id: int = 2,
    num_test_ids: int = 0,
    hair_palette: int = 0,
) -> list[ManifestRecord]:
    """Write a synthetic dataset (PNGs + manifest) and return its records.

    With ``num_test_ids == 0`` the query/gallery splits hold out unseen
    images of the *training* identities (overfit protocol); otherwise they
    are built from ``num_test_ids`` extra identities disjoint from training.
    ``hair_palette`` limits head colors to that many hues (0 = unique hues).
    """
    if num_ids < 2:
        raise ConfigError(f"need at least 2 identities, got {num_ids}")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    root_seq = np.random.SeedSequence(seed)
    records: list[ManifestRecord] = []
    counter = 0

    total_ids = num_ids + num_test_ids
    id_seqs = root_seq.spawn(total_ids)
    traits_list, clothes_list = [], []
    for ident in range(total_ids):
        rng = np.random.default_rng(id_seqs[ident])
        traits_list.append(_identity_traits(ident, rng, hair_palette=hair_palette))
        clothes_list.append(_distinct_outfits(clothes_per_id, rng))

    def emit(identity: int, clothes_id: int, camera_id: int, split: str):
        nonlocal counter
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=root_seq.entropy, spawn_key=(1000 + counter,))
        )
        img, box = _render(traits_list[identity], clothes_list[identity][clothes_id], size, rng)
        rel = f"images/{counter:06d}.png"
        Image.fromarray(np.round(img * 255).astype(np.uint8)).save(out / rel)
        records.append(ManifestRecord(rel, identity, clothes_id, camera_id, box, split, counter))
        counter += 1

    for ident in range(num_ids):
        for j in range(imgs_per_id):
            emit(ident, j % clothes_per_id, j % 3, "train")
    eval_ids = range(num_ids, total_ids) if num_test_ids else range(num_ids)
    for ident in eval_ids:
        for j in range(query_per_id):
            emit(ident, j % clothes_per_id, j % 3, "query")
        for j in range(gallery_per_id):
            emit(ident, j % clothes_per_id, (j + 1) % 3, "gallery")

    lines = [MANIFEST_HEADER]
    for r in records:
        coords = (r.box.x0, r.box.y0, r.box.x1, r.box.y1) if r.box is not None else (-1, -1, -1, -1)
        lines.append(
            f"{r.path},{r.identity},{r.clothes_id},{r.camera_id},"
            f"{coords[0]},{coords[1]},{coords[2]},{coords[3]},{r.split}"
        )
    (out / MANIFEST_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return records


# ---------------------------------------------------------------------------
# loading


class Dataset:
    """Validated manifest plus lazily decoded samples."""

    def __init__(self, root: Path, records: list[ManifestRecord], num_classes: int):
        self.root = root
        self.records = records
        self.num_classes = num_classes
        self._cache: dict[int, np.ndarray] = {}

    def split_indices(self, split: str) -> list[int]:
        return [i for i, r in enumerate(self.records) if r.split == split]

    def identities(self, split: str) -> list[int]:
        return sorted({r.identity for r in self.records if r.split == split})

    def load_sample(self, index: int) -> ImageSample:
        r = self.records[index]
        if index not in self._cache:
            with Image.open(self.root / r.path) as im:
                self._cache[index] = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        return ImageSample(
            pixels=self._cache[index].copy(),
            identity=r.identity,
            clothes_id=r.clothes_id,
            camera_id=r.camera_id,
            head_box=r.box,
            sample_id=r.sample_id,
        )

    def __len__(self) -> int:
        return len(self.records)


def load_dataset(root, allow_shared_identities: bool = False) -> Dataset:
    """Parse and validate a manifest; identity labels are remapped to 0..C-1.

    Training identities take the contiguous ids 0..C-1 (sorted); identities
    appearing only in eval splits continue from C. Train/eval identity
    overlap is an error unless ``allow_shared_identities`` (the overfit
    protocol) is set.
    """
    root = Path(root)
    mpath = root / MANIFEST_NAME
    if not mpath.exists():
        raise ManifestError(f"no manifest at {mpath}")
    raw: list[tuple[int, list[str]]] = []
    lines = mpath.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != MANIFEST_HEADER:
        raise ManifestError(f"manifest header must be {MANIFEST_HEADER!r}")
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 9:
            raise ManifestError(f"line {lineno}: expected 9 fields, got {len(parts)}")
        raw.append((lineno, parts))
    if not raw:
        raise ManifestError(f"{mpath}: manifest has no data rows")

    records: list[ManifestRecord] = []
    for sample_id, (lineno, parts) in enumerate(raw):
        path, split = parts[0], parts[8]
        if split not in SPLITS:
            raise ManifestError(f"line {lineno}: unknown split {split!r}")
        try:
            identity, clothes_id, camera_id = int(parts[1]), int(parts[2]), int(parts[3])
            x0, y0, x1, y1 = (int(v) for v in parts[4:8])
        except ValueError as e:
            raise ManifestError(f"line {lineno}: {e}") from e
        fpath = root / path
        if not fpath.exists():
            raise ManifestError(f"line {lineno}: missing image file {path}")
        if identity < 0:
            raise ManifestError(f"line {lineno}: identity must be >= 0")
        box = None
        if (x0, y0, x1, y1) != (-1, -1, -1, -1):
            with Image.open(fpath) as im:
                w, h = im.size
            if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
                raise ManifestError(
                    f"line {lineno}: head box ({x0},{y0},{x1},{y1}) outside {w}x{h} image"
                )
            box = HeadBox(x0, y0, x1, y1)
        records.append(ManifestRecord(path, identity, clothes_id, camera_id, box, split, sample_id))

    train_ids = sorted({r.identity for r in records if r.split == "train"})
    eval_ids = {r.identity for r in records if r.split != "train"}
    shared = eval_ids & set(train_ids)
    if shared and not allow_shared_identities:
        raise ManifestError(
            f"identities {sorted(shared)} appear in both train and eval splits; "
            "pass allow_shared_identities=True for the overfit protocol"
        )
    remap = {ident: i for i, ident in enumerate(train_ids)}
    next_id = len(train_ids)
    for ident in sorted(eval_ids - set(train_ids)):
        remap[ident] = next_id
        next_id += 1
    for r in records:
        r.identity = remap[r.identity]
    return Dataset(root, records, num_classes=len(train_ids))


# ---------------------------------------------------------------------------
# sampling and augmentation


def pk_sampler(
    dataset: Dataset, num_identities: int, num_instances: int, rng: np.random.Generator
) -> list[list[int]]:
    """One epoch of identity-balanced batches.

    Every batch holds ``num_identities`` distinct identities with
    ``num_instances`` images each (with replacement if an identity has too
    few images); every training identity appears in some batch.
    """
    by_identity: dict[int, list[int]] = {}
    for i in dataset.split_indices("train"):
        by_identity.setdefault(dataset.records[i].identity, []).append(i)
    ids = sorted(by_identity)
    if len(ids) < num_identities:
        raise ConfigError(
            f"PK sampler needs >= {num_identities} identities, dataset has {len(ids)}"
        )
    perm = [ids[i] for i in rng.permutation(len(ids))]
    batches = []
    for lo in range(0, len(perm), num_identities):
        chunk = perm[lo : lo + num_identities]
        if len(chunk) < num_identities:
            pool = [i for i in ids if i not in chunk]
            extra = rng.choice(len(pool), size=num_identities - len(chunk), replace=False)
            chunk = chunk + [pool[i] for i in extra]
        batch = []
        for ident in chunk:
            pool = by_identity[ident]
            if len(pool) >= num_instances:
                picks = rng.choice(len(pool), size=num_instances, replace=False)
            else:
                picks = rng.choice(len(pool), size=num_instances, replace=True)
            batch.extend(pool[p] for p in picks)
        batches.append(batch)
    return batches


def flip_horizontal(sample: ImageSample) -> ImageSample:
    """Mirror pixels and the head box around the vertical axis."""
    w = sample.pixels.shape[1]
    box = sample.head_box
    if box is not None:
        box = HeadBox(x0=w - box.x1, y0=box.y0, x1=w - box.x0, y1=box.y1)
    return replace(sample, pixels=sample.pixels[:, ::-1].copy(), head_box=box)


def random_erase(sample: ImageSample, rng: np.random.Generator) -> ImageSample:
    """Blank a random rectangle (2-40% area, aspect in [0.3, 3.33]) with noise.

    This is pixel-level data augmentation, unrelated to the feature-level
    adversarial erasing in the stream heads.
    """
    h, w = sample.pixels.shape[:2]
    pixels = sample.pixels.copy()
    for _ in range(100):
        area = rng.uniform(0.02, 0.40) * h * w
        aspect = float(np.exp(rng.uniform(np.log(0.3), np.log(1.0 / 0.3))))
        eh = int(round(np.sqrt(area * aspect)))
        ew = int(round(np.sqrt(area / aspect)))
        if 0 < eh < h and 0 < ew < w:
            y = int(rng.integers(0, h - eh + 1))
            x = int(rng.integers(0, w - ew + 1))
            pixels[y : y + eh, x : x + ew] = rng.uniform(0.0, 1.0, size=(eh, ew, 3))
            break
    return replace(sample, pixels=pixels)


def augment(sample: ImageSample, rng: np.random.Generator) -> ImageSample:
    """Training-time augmentation: flip and random erasing, each at p=0.5."""
    out = sample
    if rng.random() < 0.5:
        out = flip_horizontal(out)
    if rng.random() < 0.5:
        out = random_erase(out, rng)
    return out


def prepare_inputs(samples: list[ImageSample], need_head: bool):
    """Stack pixels (and head crops) into the batched model input arrays."""
    images = np.stack([s.pixels for s in samples])
    head_images = None
    if need_head:
        head_images = np.stack([crop_head(s.pixels, s.head_box) for s in samples])
    return images, head_images
