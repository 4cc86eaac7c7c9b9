"""Command-line entry points: gen-data, train, eval, retrieve, inspect-labels."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import report as R
from .checkpoint import load_checkpoint
from .config import RunConfig, load_config, save_config
from .data import generate_synthetic, load_dataset, prepare_inputs
from .errors import TristreamError
from .evaluation import evaluate, extract_descriptors, rank_gallery
from .pseudo import generate_pseudo_labels
from .train import train


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="flat key=value run config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dataset", type=Path, default=None)
    p.add_argument("--out", type=Path, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tristream", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic clothes-change dataset")
    _add_common(g)
    g.add_argument("--num-ids", type=int, default=8)
    g.add_argument("--imgs-per-id", type=int, default=12)
    g.add_argument("--clothes-per-id", type=int, default=2)
    g.add_argument("--query-per-id", type=int, default=2)
    g.add_argument("--gallery-per-id", type=int, default=2)
    g.add_argument(
        "--num-test-ids",
        type=int,
        default=4,
        help="extra identities for the eval splits; 0 holds out images of the training identities instead",
    )
    g.add_argument("--size", type=str, default="64x32", help="HxW")

    t = sub.add_parser("train", help="train a model and write checkpoint + metrics")
    _add_common(t)

    e = sub.add_parser("eval", help="evaluate a checkpoint; writes report CSV + CMC figure")
    _add_common(e)
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--scenario", choices=["general", "same", "cross"], default=None)
    e.add_argument("--query-split", default="query")
    e.add_argument("--gallery-split", default="gallery")
    e.add_argument("--exclude-self", action="store_true", help="drop gallery items with the query's sample id")

    r = sub.add_parser("retrieve", help="rank the gallery for one query image")
    _add_common(r)
    r.add_argument("--checkpoint", type=Path, required=True)
    r.add_argument("--query-index", type=int, default=0, help="index into the query split")
    r.add_argument("--top-k", type=int, default=5)

    i = sub.add_parser("inspect-labels", help="dump pseudo-label maps as indexed PNGs")
    _add_common(i)
    i.add_argument("--checkpoint", type=Path, required=True)
    i.add_argument("--limit", type=int, default=16)
    return parser


def _resolve_config(args, need_dataset: bool = True) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig.desk_default()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.dataset is not None:
        cfg.dataset_root = str(args.dataset)
    if args.out is not None:
        cfg.output_dir = str(args.out)
    if need_dataset and not cfg.dataset_root:
        raise TristreamError("no dataset given: pass --dataset or set dataset_root in the config")
    return cfg


def _load_model_and_data(args):
    state = load_checkpoint(args.checkpoint)
    cfg: RunConfig = state["config"]
    if args.seed is not None:
        cfg.seed = args.seed
    root = args.dataset if args.dataset is not None else cfg.dataset_root
    if not root:
        raise TristreamError("no dataset given: pass --dataset")
    dataset = load_dataset(root, allow_shared_identities=True)
    return state["model"], cfg, dataset


def cmd_gen_data(args) -> int:
    if args.out is None:
        raise TristreamError("gen-data needs --out")
    h, sep, w = args.size.partition("x")
    if not sep or not h.isdigit() or not w.isdigit():
        raise TristreamError(f"--size must look like 64x32, got {args.size!r}")
    records = generate_synthetic(
        args.out,
        num_ids=args.num_ids,
        imgs_per_id=args.imgs_per_id,
        clothes_per_id=args.clothes_per_id,
        size=(int(h), int(w)),
        seed=args.seed if args.seed is not None else 0,
        query_per_id=args.query_per_id,
        gallery_per_id=args.gallery_per_id,
        num_test_ids=args.num_test_ids,
    )
    print(f"wrote {len(records)} images to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = train(cfg)
    save_config(cfg, out / "run_config.txt")
    R.plot_training_curves(result.metrics, out / "training_curves.png")
    if result.final_report is not None:
        result.final_report.to_csv(out / "report.csv")
        R.plot_cmc(result.final_report, out / "cmc_curve.png")
        print(result.final_report.table())
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"metrics:    {result.metrics_path}")
    return 0


def cmd_eval(args) -> int:
    model, cfg, dataset = _load_model_and_data(args)
    scenarios = (args.scenario,) if args.scenario else ("general", "same", "cross")
    report = evaluate(
        model,
        dataset,
        scenarios=scenarios,
        exclude_same_sample=args.exclude_self or cfg.exclude_same_sample,
        query_split=args.query_split,
        gallery_split=args.gallery_split,
    )
    out = Path(args.out) if args.out else Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / "report.csv")
    R.plot_cmc(report, out / "cmc_curve.png")
    print(report.table())
    print(f"report: {out / 'report.csv'}")
    return 0


def cmd_retrieve(args) -> int:
    model, cfg, dataset = _load_model_and_data(args)
    queries = dataset.split_indices("query")
    if not 0 <= args.query_index < len(queries):
        raise TristreamError(f"query index {args.query_index} out of range (0..{len(queries) - 1})")
    query = extract_descriptors(model, dataset, [queries[args.query_index]])[0]
    gallery = extract_descriptors(model, dataset, dataset.split_indices("gallery"))
    ranked = rank_gallery(query, gallery)[: args.top_k]
    print(f"query sample {query.sample_id} (identity {query.identity})")
    print(f"{'rank':>4} {'sample':>7} {'identity':>9} {'similarity':>11}")
    for rank, (gi, sim) in enumerate(ranked, start=1):
        g = gallery[gi]
        print(f"{rank:>4} {g.sample_id:>7} {g.identity:>9} {sim:>11.6f}")
    return 0


def cmd_inspect_labels(args) -> int:
    model, cfg, dataset = _load_model_and_data(args)
    out = Path(args.out) if args.out else Path(cfg.output_dir) / "labels"
    out.mkdir(parents=True, exist_ok=True)
    idxs = dataset.split_indices("train")[: args.limit]
    entries = []
    for i in idxs:
        sample = dataset.load_sample(i)
        images, _ = prepare_inputs([sample], need_head=False)
        dense = model.dense_features(images)[0]
        seed = np.random.SeedSequence([cfg.seed, 0, sample.sample_id])
        lmap = generate_pseudo_labels(dense, cfg.num_parts, seed)
        R.save_label_map_png(lmap.labels, out / f"labels_{sample.sample_id:06d}.png")
        entries.append((sample.pixels, lmap.labels))
    R.plot_label_montage(entries, out / "labels_overview.png")
    print(f"wrote {len(entries)} label maps to {out}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "retrieve": cmd_retrieve,
    "inspect-labels": cmd_inspect_labels,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except TristreamError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
