import json
import math

import numpy as np
import pytest

from mvadapt.retrieval import (
    RankedList,
    anmrr,
    average_precision,
    evaluate_retrieval,
    ndcg,
    rank_targets,
    recall_at_k,
    render_report,
)

from oracles import (
    oracle_anmrr,
    oracle_average_precision,
    oracle_ndcg,
    oracle_nmrr,
)


def ranked(flags, qid="q"):
    flags = np.asarray(flags, dtype=bool)
    return RankedList(query_id=qid, target_ids=[str(i) for i in range(len(flags))],
                      relevance=flags, ng=int(flags.sum()))


class TestRankTargets:
    def test_identical_target_ranks_first(self, rng):
        q = rng.standard_normal(4)
        targets = rng.standard_normal((5, 4))
        targets[3] = q * 2.0  # same direction
        out = rank_targets(q, targets, 0, [1, 1, 1, 0, 1])
        assert out.target_ids[0] == "3"

    def test_pure_tie_break_by_index(self):
        q = np.array([1.0, 0.0])
        targets = np.tile(q, (4, 1))
        out = rank_targets(q, targets, 0, [0, 0, 0, 0])
        assert out.target_ids == ["0", "1", "2", "3"]

    def test_matches_naive_sort(self, rng):
        q = rng.standard_normal(6)
        targets = rng.standard_normal((10, 6))
        sims = [float(np.dot(q, t) / (np.linalg.norm(q) * np.linalg.norm(t)))
                for t in targets]
        expected = [str(i) for i in sorted(range(10), key=lambda i: (-sims[i], i))]
        out = rank_targets(q, targets, 0, [0] * 10)
        assert out.target_ids == expected

    def test_zero_vector_target_ranks_last(self, rng):
        q = np.array([1.0, 0.0])
        targets = np.array([[-1.0, 0.0], [0.0, 0.0], [0.5, 0.5]])
        out = rank_targets(q, targets, 0, [0, 0, 0])
        assert out.target_ids[-1] == "1"

    def test_zero_query_flagged(self):
        out = rank_targets(np.zeros(3), np.eye(3), 0, [0, 1, 2])
        assert out.zero_query


class TestAveragePrecision:
    def test_all_relevant_at_top(self):
        assert average_precision(ranked([1, 1, 0, 0])) == 1.0

    def test_hand_fixture(self):
        ap = average_precision(ranked([1, 0, 1, 0]))
        assert abs(ap - 5.0 / 6.0) < 1e-12

    def test_single_relevant_closed_form(self):
        for n in (3, 7, 20):
            for r in (1, n // 2 + 1, n):
                flags = [0] * n
                flags[r - 1] = 1
                assert abs(average_precision(ranked(flags)) - 1.0 / r) < 1e-12

    def test_empty_relevance_is_nan(self):
        assert math.isnan(average_precision(ranked([0, 0, 0])))


class TestNdcg:
    def test_perfect(self):
        assert abs(ndcg(ranked([1, 1, 1, 0])) - 1.0) < 1e-12

    def test_hand_fixture(self):
        value = ndcg(ranked([1, 0, 1, 0]))
        expected = (1.0 + 1.0 / 2.0) / (1.0 + 1.0 / math.log2(3))
        assert abs(value - expected) < 1e-12
        assert abs(value - 0.91972) < 1e-5

    def test_last_position_monotone_in_length(self):
        prev = 1.0
        for n in range(2, 12):
            flags = [0] * n
            flags[-1] = 1
            val = ndcg(ranked(flags))
            assert val < prev
            prev = val


class TestAnmrr:
    def test_perfect_is_zero(self):
        for ng in (1, 3, 5):
            flags = [1] * ng + [0] * 7
            overall, _ = anmrr([ranked(flags)])
            assert abs(overall) < 1e-12

    def test_hand_fixture(self):
        overall, per = anmrr([ranked([1, 0, 1, 0])])
        assert abs(overall - 1.0 / 7.0) < 1e-12

    def test_all_beyond_window_is_one(self):
        # NG=1, GTM=1 -> K=2; relevant at rank 10 > K
        flags = [0] * 9 + [1]
        overall, _ = anmrr([ranked(flags)])
        assert abs(overall - 1.0) < 1e-12

    def test_2ng_variant(self):
        flags = [0, 1, 0, 0, 1, 0]
        gtm_val, _ = anmrr([ranked(flags)], variant="gtm")
        two_ng, _ = anmrr([ranked(flags)], variant="2ng")
        assert abs(gtm_val - oracle_anmrr([flags], "gtm")) < 1e-12
        assert abs(two_ng - oracle_anmrr([flags], "2ng")) < 1e-12

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            anmrr([ranked([1])], variant="bogus")


class TestOracleEquivalence:
    def test_200_random_rankings(self, rng):
        lists = []
        for _ in range(200):
            n = int(rng.integers(1, 51))
            ng = int(rng.integers(0, min(n, 10) + 1))
            flags = np.zeros(n, dtype=bool)
            flags[rng.choice(n, size=ng, replace=False)] = True
            lists.append(ranked(flags))
        kept = [r for r in lists if r.ng > 0]
        gtm = max(r.ng for r in kept)
        for r in kept:
            assert abs(average_precision(r)
                       - oracle_average_precision(r.relevance)) < 1e-12
            assert abs(ndcg(r) - oracle_ndcg(r.relevance)) < 1e-12
            assert abs(anmrr([r], variant="2ng")[0]
                       - oracle_nmrr(r.relevance, 0, "2ng")) < 1e-12
        overall, _ = anmrr(kept)
        assert abs(overall
                   - oracle_anmrr([r.relevance for r in kept])) < 1e-12

    def test_monotone_under_upward_swap(self, rng):
        for _ in range(50):
            n = int(rng.integers(3, 20))
            flags = rng.random(n) < 0.3
            if not flags.any() or flags.all():
                continue
            pos = np.flatnonzero(flags)
            movable = [p for p in pos if p > 0 and not flags[p - 1]]
            if not movable:
                continue
            p = movable[0]
            swapped = flags.copy()
            swapped[p - 1], swapped[p] = True, False
            a, b = ranked(flags), ranked(swapped)
            assert average_precision(b) >= average_precision(a) - 1e-12
            assert ndcg(b) >= ndcg(a) - 1e-12
            assert anmrr([b])[0] <= anmrr([a])[0] + 1e-12


class TestEvaluate:
    def test_perfect_copies(self, rng):
        protos = rng.standard_normal((3, 4))
        protos /= np.linalg.norm(protos, axis=1, keepdims=True)
        labels = np.array([0, 0, 1, 1, 2, 2])
        q = protos[labels]  # each class collapses to one prototype
        report = evaluate_retrieval(q, labels, q.copy(), labels)
        assert abs(report.map - 1.0) < 1e-12
        assert abs(report.ndcg - 1.0) < 1e-12
        assert abs(report.anmrr) < 1e-12

    def test_random_descriptors_near_class_prior(self, rng):
        # 2 balanced classes, random directions: mAP concentrates near 0.5
        nq, nt, d = 60, 200, 16
        q = rng.standard_normal((nq, d))
        t = rng.standard_normal((nt, d))
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        t /= np.linalg.norm(t, axis=1, keepdims=True)
        ql = rng.integers(0, 2, nq)
        tl = np.repeat([0, 1], nt // 2)
        report = evaluate_retrieval(q, ql, t, tl)
        assert 0.42 < report.map < 0.58

    def test_scale_invariance(self, rng):
        q = rng.standard_normal((5, 4))
        t = rng.standard_normal((12, 4))
        ql = rng.integers(0, 3, 5)
        tl = np.concatenate([np.arange(3), rng.integers(0, 3, 9)])
        a = evaluate_retrieval(q, ql, t, tl)
        b = evaluate_retrieval(q * 7.3, ql, t * 0.002, tl)
        assert a.map == b.map and a.ndcg == b.ndcg and a.anmrr == b.anmrr

    def test_aggregates_are_means(self, rng):
        q = rng.standard_normal((7, 4))
        t = rng.standard_normal((15, 4))
        ql = rng.integers(0, 2, 7)
        tl = np.concatenate([[0, 1], rng.integers(0, 2, 13)])
        rep = evaluate_retrieval(q, ql, t, tl)
        assert abs(rep.map - np.mean([p.ap for p in rep.per_query])) < 1e-12
        assert abs(rep.ndcg - np.mean([p.ndcg for p in rep.per_query])) < 1e-12
        assert abs(rep.anmrr - np.mean([p.nmrr for p in rep.per_query])) < 1e-12

    def test_workers_do_not_change_bytes(self, rng):
        q = rng.standard_normal((9, 4))
        t = rng.standard_normal((20, 4))
        ql = rng.integers(0, 3, 9)
        tl = np.concatenate([np.arange(3), rng.integers(0, 3, 17)])
        a = evaluate_retrieval(q, ql, t, tl, workers=1)
        b = evaluate_retrieval(q, ql, t, tl, workers=4)
        assert render_report(a) == render_report(b)

    def test_empty_split_rejected(self, rng):
        with pytest.raises(ValueError):
            evaluate_retrieval(np.empty((0, 3)), [], rng.standard_normal((2, 3)),
                               [0, 1])

    def test_recall_at_k(self):
        r = ranked([1, 0, 1, 0, 1])
        assert recall_at_k(r, 1) == pytest.approx(1 / 3)
        assert recall_at_k(r, 5) == 1.0


class TestReportRendering:
    def test_stable_bytes_and_six_decimals(self, rng):
        q = rng.standard_normal((4, 3))
        t = rng.standard_normal((9, 3))
        ql = rng.integers(0, 2, 4)
        tl = np.concatenate([[0, 1], rng.integers(0, 2, 7)])
        rep = evaluate_retrieval(q, ql, t, tl, config_hash=123, seed=7)
        text = render_report(rep)
        assert text == render_report(evaluate_retrieval(q, ql, t, tl,
                                                        config_hash=123, seed=7))
        doc = json.loads(text)
        assert list(doc) == ["map", "ndcg", "anmrr", "num_queries",
                             "config_hash", "seed", "per_query"]
        assert doc["config_hash"] == "123"
        assert "." in text.splitlines()[1] and len(
            text.splitlines()[1].split(".")[1].rstrip(",")) == 6
