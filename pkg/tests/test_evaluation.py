"""Cosine ranking, CMC, mAP, and scenario-filtered evaluation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import cmc_map_bruteforce
from tristream.errors import DegenerateInputError, MetricError
from tristream.evaluation import (
    Descriptor,
    average_precision,
    cmc_rank_k,
    cosine_similarity,
    evaluate_descriptors,
    mean_average_precision,
    rank_gallery,
)


def rng(seed=0):
    return np.random.default_rng(seed)


def descriptor(features, sample_id=0, identity=0, clothes_id=0):
    return Descriptor(np.asarray(features, dtype=np.float64), sample_id, identity, clothes_id)


class TestCosine:
    def test_identical_vectors(self):
        v = rng(1).normal(size=8)
        assert cosine_similarity(v, v) == pytest.approx(1.0)

    def test_orthogonal_vectors(self):
        assert cosine_similarity([1, 0, 0], [0, 2, 0]) == pytest.approx(0.0)

    def test_matches_direct_formula(self):
        a, b = rng(2).normal(size=6), rng(3).normal(size=6)
        want = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
        assert cosine_similarity(a, b) == pytest.approx(want, abs=1e-12)

    def test_zero_norm_rejected(self):
        with pytest.raises(DegenerateInputError):
            cosine_similarity(np.zeros(3), np.ones(3))


class TestRankGallery:
    def test_exact_copy_ranks_first(self):
        q = descriptor(rng(4).normal(size=5))
        gallery = [descriptor(rng(5).normal(size=5)), descriptor(q.features.copy()), descriptor(rng(6).normal(size=5))]
        ranked = rank_gallery(q, gallery)
        assert ranked[0][0] == 1

    def test_single_element(self):
        q = descriptor([1.0, 2.0])
        assert rank_gallery(q, [descriptor([2.0, 1.0])])[0][0] == 0

    def test_matches_full_sort_oracle(self):
        q = descriptor(rng(7).normal(size=4))
        gallery = [descriptor(rng(10 + i).normal(size=4)) for i in range(10)]
        ranked = [gi for gi, _ in rank_gallery(q, gallery)]
        sims = [cosine_similarity(q.features, g.features) for g in gallery]
        want = sorted(range(10), key=lambda i: (-sims[i], i))
        assert ranked == want

    def test_ties_break_by_index(self):
        q = descriptor([1.0, 0.0])
        same = descriptor([2.0, 0.0])
        gallery = [descriptor([0.0, 1.0]), same, descriptor([4.0, 0.0])]
        ranked = [gi for gi, _ in rank_gallery(q, gallery)]
        assert ranked == [1, 2, 0]  # two perfect matches keep index order

    def test_empty_gallery_rejected(self):
        with pytest.raises(MetricError):
            rank_gallery(descriptor([1.0]), [])


class TestCmc:
    def test_all_rank1_correct(self):
        rankings = [[7, 1, 2], [3, 9, 9]]
        assert cmc_rank_k(rankings, [7, 3], 1) == 1.0

    def test_first_match_at_three(self):
        rankings = [[5, 6, 7, 8]]
        assert cmc_rank_k(rankings, [7], 1) == 0.0
        assert cmc_rank_k(rankings, [7], 2) == 0.0
        assert cmc_rank_k(rankings, [7], 3) == 1.0

    def test_k_clamped_to_gallery(self):
        rankings = [[1, 2]]
        assert cmc_rank_k(rankings, [2], 50) == 1.0

    def test_matches_scan_oracle(self):
        r = rng(8)
        nq, ng = 20, 15
        sims = r.normal(size=(nq, ng))
        g_ids = r.integers(0, 5, size=ng).tolist()
        q_ids = r.integers(0, 5, size=nq).tolist()
        rankings = []
        for qi in range(nq):
            order = np.argsort(-sims[qi], kind="stable")
            rankings.append([g_ids[i] for i in order])
        oracle_cmc, _ = cmc_map_bruteforce(sims, q_ids, g_ids, max_rank=ng)
        for k in range(1, ng + 1):
            assert cmc_rank_k(rankings, q_ids, k) == oracle_cmc[k - 1]

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10**6), st.integers(2, 12), st.integers(2, 8))
    def test_monotone_in_k(self, seed, ng, nq):
        r = rng(seed)
        rankings = [list(r.integers(0, 4, size=ng)) for _ in range(nq)]
        q_ids = list(r.integers(0, 4, size=nq))
        values = [cmc_rank_k(rankings, q_ids, k) for k in range(1, ng + 1)]
        assert all(b >= a for a, b in zip(values, values[1:]))


class TestMap:
    def test_single_relevant_at_rank_one(self):
        assert average_precision([3, 1, 2], 3) == pytest.approx(1.0)

    def test_two_relevant_ranks_one_and_three(self):
        ap = average_precision([5, 0, 5, 1], 5)
        assert ap == pytest.approx((1.0 + 2.0 / 3.0) / 2.0)

    def test_no_relevant_is_none(self):
        assert average_precision([1, 2], 9) is None

    def test_matches_exhaustive_oracle(self):
        r = rng(9)
        nq, ng = 15, 30
        sims = r.normal(size=(nq, ng))
        g_ids = r.integers(0, 6, size=ng).tolist()
        q_ids = r.integers(0, 6, size=nq).tolist()
        rankings = [[g_ids[i] for i in np.argsort(-sims[qi], kind="stable")] for qi in range(nq)]
        _, oracle_map = cmc_map_bruteforce(sims, q_ids, g_ids, max_rank=1)
        got = mean_average_precision(rankings, q_ids, g_ids)
        assert got == pytest.approx(oracle_map, abs=1e-12)

    def test_all_queries_invalid_rejected(self):
        with pytest.raises(MetricError):
            mean_average_precision([[1], [2]], [5, 6], [1, 2])


class TestScaleInvariance:
    def test_descriptor_scaling_preserves_metrics(self):
        r = rng(10)
        queries = [descriptor(r.normal(size=6), sample_id=i, identity=i % 3) for i in range(6)]
        gallery = [descriptor(r.normal(size=6), sample_id=100 + i, identity=i % 3) for i in range(9)]
        base = evaluate_descriptors(queries, gallery, scenarios=("general",))
        scaled_queries = [
            descriptor(q.features * (1.0 + i), sample_id=q.sample_id, identity=q.identity)
            for i, q in enumerate(queries)
        ]
        scaled = evaluate_descriptors(scaled_queries, gallery, scenarios=("general",))
        np.testing.assert_array_equal(base.scenarios["general"].cmc, scaled.scenarios["general"].cmc)
        assert base.scenarios["general"].map == scaled.scenarios["general"].map


class TestScenarios:
    def make_sets(self):
        r = rng(11)
        # identity 0 and 1, two clothes each; queries wear clothes 0
        queries = [
            descriptor(r.normal(size=5), sample_id=i, identity=i % 2, clothes_id=0) for i in range(4)
        ]
        gallery = []
        sid = 100
        for ident in (0, 1):
            for clothes in (0, 1):
                for _ in range(2):
                    gallery.append(descriptor(r.normal(size=5), sample_id=sid, identity=ident, clothes_id=clothes))
                    sid += 1
        return queries, gallery

    def test_scenario_reports_present(self):
        queries, gallery = self.make_sets()
        rep = evaluate_descriptors(queries, gallery)
        assert set(rep.scenarios) == {"general", "same", "cross"}
        for sub in rep.scenarios.values():
            assert 0.0 <= sub.map <= 1.0
            assert np.all(np.diff(sub.cmc) >= -1e-15)

    def test_self_gallery_rank1_perfect(self):
        r = rng(12)
        descs = [descriptor(r.normal(size=4), sample_id=i, identity=i) for i in range(5)]
        rep = evaluate_descriptors(descs, descs, scenarios=("general",))
        assert rep.scenarios["general"].rank(1) == 1.0

    def test_exclude_same_sample(self):
        r = rng(13)
        descs = [descriptor(r.normal(size=4), sample_id=i, identity=i % 2) for i in range(6)]
        rep = evaluate_descriptors(descs, descs, scenarios=("general",), exclude_same_sample=True)
        # self-match removed, so rank-1 depends on the other same-identity items
        assert rep.scenarios["general"].num_gallery == 6

    def test_csv_roundtrip(self, tmp_path):
        queries, gallery = self.make_sets()
        rep = evaluate_descriptors(queries, gallery)
        path = tmp_path / "report.csv"
        rep.to_csv(path)
        text = path.read_text()
        assert text.splitlines()[0] == "split,metric,value"
        assert "general,mAP," in text and "cross,rank1," in text
        assert "Rank-1" in rep.table() or "Rank" in rep.table() or "rank" in rep.table().lower()
