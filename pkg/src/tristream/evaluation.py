"""Cosine-similarity retrieval and CMC/mAP evaluation with scenario splits.

Ranking is by descending cosine similarity with ties broken by ascending
gallery index. For the synthetic clothes-change harness the scenarios are
defined through gallery filtering:

* ``general``     — full gallery.
* ``same``        — same-identity gallery items with a *different*
                    clothes id are removed, so matches must come from the
                    same clothes.
* ``cross``       — same-identity gallery items with the *same* clothes id
                    are removed, so matches must cross a clothes change.

Queries whose relevant set becomes empty under a filter are excluded from
the metrics and counted in the report.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, MetricError

SCENARIOS = ("general", "same", "cross")


@dataclass
class Descriptor:
    """Final retrieval vector of one image plus its matching metadata."""

    features: np.ndarray
    sample_id: int
    identity: int
    clothes_id: int = 0
    camera_id: int = 0


def cosine_similarity(q: np.ndarray, g: np.ndarray) -> float:
    q = np.asarray(q, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    nq = np.sqrt((q * q).sum())
    ng = np.sqrt((g * g).sum())
    if nq == 0.0 or ng == 0.0:
        raise DegenerateInputError("zero-norm descriptor")
    return float(q @ g / (nq * ng))


def rank_gallery(query: Descriptor, gallery: list[Descriptor]) -> list[tuple[int, float]]:
    """Gallery indices sorted by similarity descending, ties by ascending index."""
    if not gallery:
        raise MetricError("empty gallery")
    sims = np.array([cosine_similarity(query.features, g.features) for g in gallery])
    order = np.argsort(-sims, kind="stable")
    return [(int(i), float(sims[i])) for i in order]


def cmc_rank_k(rankings: list[list[int]], query_identities: list[int], k: int) -> float:
    """Fraction of queries with a same-identity item in the top k."""
    if k < 1:
        raise MetricError(f"k must be >= 1, got {k}")
    hits = 0
    for ranked_ids, qid in zip(rankings, query_identities):
        kk = min(k, len(ranked_ids))
        if any(g == qid for g in ranked_ids[:kk]):
            hits += 1
    return hits / len(rankings)


def average_precision(ranked_ids: list[int], query_identity: int) -> float | None:
    """Mean of precision-at-r over the relevant positions; None if no relevant item."""
    num_rel = sum(1 for g in ranked_ids if g == query_identity)
    if num_rel == 0:
        return None
    total = 0.0
    seen = 0
    for r, g in enumerate(ranked_ids, start=1):
        if g == query_identity:
            seen += 1
            total += seen / r
    return total / num_rel


def mean_average_precision(
    rankings: list[list[int]], query_identities: list[int], gallery_identities: list[int]
) -> float:
    """Mean AP over queries that have at least one relevant gallery item."""
    del gallery_identities  # relevance is recovered from the full rankings
    total = 0.0
    valid = 0
    for ranked_ids, qid in zip(rankings, query_identities):
        ap = average_precision(ranked_ids, qid)
        if ap is None:
            continue
        total += ap
        valid += 1
    if valid == 0:
        raise MetricError("mAP undefined: no query has a relevant gallery item")
    return total / valid


@dataclass
class ScenarioReport:
    cmc: np.ndarray  # rank-k accuracy for k = 1..len(cmc)
    map: float
    num_queries: int
    num_gallery: int
    num_excluded_queries: int = 0

    def rank(self, k: int) -> float:
        return float(self.cmc[min(k, len(self.cmc)) - 1])


@dataclass
class EvalReport:
    scenarios: dict[str, ScenarioReport] = field(default_factory=dict)
    num_queries: int = 0
    num_gallery: int = 0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["split", "metric", "value"])
            for name, rep in self.scenarios.items():
                writer.writerow([name, "num_queries", rep.num_queries])
                writer.writerow([name, "num_gallery", rep.num_gallery])
                writer.writerow([name, "num_excluded_queries", rep.num_excluded_queries])
                writer.writerow([name, "mAP", repr(rep.map)])
                for k in range(1, len(rep.cmc) + 1):
                    writer.writerow([name, f"rank{k}", repr(float(rep.cmc[k - 1]))])

    def table(self) -> str:
        lines = [f"{'split':<10}{'queries':>9}{'gallery':>9}{'Rank-1':>9}{'Rank-5':>9}{'mAP':>9}"]
        for name, rep in self.scenarios.items():
            lines.append(
                f"{name:<10}{rep.num_queries:>9}{rep.num_gallery:>9}"
                f"{rep.rank(1):>9.4f}{rep.rank(5):>9.4f}{rep.map:>9.4f}"
            )
        return "\n".join(lines)


def _scenario_gallery(query: Descriptor, gallery: list[Descriptor], scenario: str, exclude_same_sample: bool):
    keep = []
    for gi, g in enumerate(gallery):
        if exclude_same_sample and g.sample_id == query.sample_id:
            continue
        if scenario == "same" and g.identity == query.identity and g.clothes_id != query.clothes_id:
            continue
        if scenario == "cross" and g.identity == query.identity and g.clothes_id == query.clothes_id:
            continue
        keep.append(gi)
    return keep


def evaluate_descriptors(
    queries: list[Descriptor],
    gallery: list[Descriptor],
    scenarios=SCENARIOS,
    max_rank: int = 10,
    exclude_same_sample: bool = False,
) -> EvalReport:
    """CMC/mAP per scenario from precomputed descriptors."""
    if not queries or not gallery:
        raise MetricError("need non-empty query and gallery sets")
    qmat = np.stack([q.features for q in queries])
    gmat = np.stack([g.features for g in gallery])
    qn = np.sqrt((qmat**2).sum(axis=1, keepdims=True))
    gn = np.sqrt((gmat**2).sum(axis=1, keepdims=True))
    if np.any(qn == 0) or np.any(gn == 0):
        raise DegenerateInputError("zero-norm descriptor in query or gallery set")
    sims = (qmat / qn) @ (gmat / gn).T

    report = EvalReport(num_queries=len(queries), num_gallery=len(gallery))
    for scenario in scenarios:
        rankings: list[list[int]] = []
        kept_queries: list[int] = []
        excluded = 0
        for qi, q in enumerate(queries):
            keep = _scenario_gallery(q, gallery, scenario, exclude_same_sample)
            if not any(gallery[gi].identity == q.identity for gi in keep):
                excluded += 1
                continue
            row = sims[qi, keep]
            order = np.argsort(-row, kind="stable")
            rankings.append([gallery[keep[i]].identity for i in order])
            kept_queries.append(q.identity)
        if not rankings:
            raise MetricError(f"scenario {scenario!r}: every query lost its relevant items")
        k_max = max(1, min(max_rank, max(len(r) for r in rankings)))
        cmc = np.array([cmc_rank_k(rankings, kept_queries, k) for k in range(1, k_max + 1)])
        mp = mean_average_precision(rankings, kept_queries, [g.identity for g in gallery])
        report.scenarios[scenario] = ScenarioReport(
            cmc=cmc,
            map=mp,
            num_queries=len(rankings),
            num_gallery=len(gallery),
            num_excluded_queries=excluded,
        )
    return report


def extract_descriptors(model, dataset, indices, batch_size: int = 64) -> list[Descriptor]:
    """Eval-mode descriptor extraction for the given dataset records."""
    from .data import prepare_inputs  # local import: data layer sits above the model

    descs: list[Descriptor] = []
    for lo in range(0, len(indices), batch_size):
        chunk = indices[lo : lo + batch_size]
        samples = [dataset.load_sample(i) for i in chunk]
        images, head_images = prepare_inputs(samples, need_head="head" in model.cfg.streams)
        feats = model.extract_descriptors(images, head_images)
        for s, f in zip(samples, feats):
            descs.append(
                Descriptor(
                    features=f,
                    sample_id=s.sample_id,
                    identity=s.identity,
                    clothes_id=s.clothes_id,
                    camera_id=s.camera_id,
                )
            )
    return descs


def evaluate(
    model,
    dataset,
    scenarios=SCENARIOS,
    max_rank: int = 10,
    exclude_same_sample: bool = False,
    query_split: str = "query",
    gallery_split: str = "gallery",
) -> EvalReport:
    """Extract descriptors for the dataset's query/gallery splits and score them."""
    queries = extract_descriptors(model, dataset, dataset.split_indices(query_split))
    gallery = extract_descriptors(model, dataset, dataset.split_indices(gallery_split))
    return evaluate_descriptors(
        queries, gallery, scenarios=scenarios, max_rank=max_rank, exclude_same_sample=exclude_same_sample
    )
