"""Metric definitions, aggregation, group scheduling, neighbor probes."""

import math
from types import SimpleNamespace

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, strategies as st

from nesa import evaluate as ev
from nesa import ics


def mk_instance(answer=0, user="alice", title="sync"):
    return ics.SchedulingInstance(
        context=(), target_title=title, target_duration_scaled=0.01,
        target_user=user, answer=answer, iso_year=2018, iso_week=14)


def oracle_rank(p, answer):
    order = sorted(range(len(p)), key=lambda i: (-p[i], i))
    return order.index(answer) + 1


class TestRankOf:
    def test_unique_max_is_rank_one(self):
        p = np.full(168, 0.001)
        p[42] = 0.5
        assert ev.rank_of(p, 42) == 1

    def test_uniform_tie_break_by_index(self):
        p = np.full(168, 1 / 168)
        assert ev.rank_of(p, 0) == 1
        assert ev.rank_of(p, 10) == 11
        assert ev.rank_of(p, 167) == 168

    def test_matches_sort_oracle_with_ties(self):
        rng = np.random.default_rng(4)
        for _ in range(2000):
            p = np.round(rng.random(168), 2)
            answer = int(rng.integers(168))
            assert ev.rank_of(p, answer) == oracle_rank(p, answer)

    @given(st.integers(0, 167), st.integers(0, 10_000))
    def test_rank_in_range(self, answer, seed):
        p = np.random.default_rng(seed).random(168)
        assert 1 <= ev.rank_of(p, answer) <= 168


class TestAggregates:
    def test_recall_examples(self):
        assert ev.recall_at_n([1, 6], 5) == 0.5
        assert ev.recall_at_n(list(range(1, 169)), 168) == 1.0

    def test_recall_empty_raises(self):
        with pytest.raises(ev.EmptyEvaluation):
            ev.recall_at_n([], 5)

    def test_mrr_examples(self):
        assert ev.mrr([1]) == 1.0
        assert ev.mrr([2, 4]) == pytest.approx(0.375)

    def test_mrr_empty_raises(self):
        with pytest.raises(ev.EmptyEvaluation):
            ev.mrr([])

    @given(st.lists(st.integers(1, 168), min_size=1, max_size=300))
    def test_metric_relationships(self, ranks):
        r1 = ev.recall_at_n(ranks, 1)
        r5 = ev.recall_at_n(ranks, 5)
        m = ev.mrr(ranks)
        assert 0.0 <= r1 <= r5 <= 1.0
        assert r1 <= m <= 1.0


class TestIeuc:
    def test_exact_hit(self):
        assert ev.ieuc(37, 37) == 1.0

    def test_three_four_five(self):
        assert ev.ieuc(0, 3 * 24 + 4) == pytest.approx(1 / 6)

    def test_far_corner(self):
        expect = 1.0 / (math.sqrt(36 + 529) + 1.0)
        assert ev.ieuc(0, 167) == pytest.approx(expect, abs=1e-12)
        assert expect == pytest.approx(0.0404, abs=5e-4)

    @given(st.integers(0, 167), st.integers(0, 167))
    def test_bounds_and_identity(self, a, b):
        v = ev.ieuc(a, b)
        assert 0.0 < v <= 1.0
        assert (v == 1.0) == (a == b)


class TestEvaluate:
    def test_perfect_oracle(self):
        def perfect(inst):
            p = np.zeros(168)
            p[inst.answer] = 1.0
            return p

        data = [mk_instance(answer=a) for a in (0, 5, 99, 167)]
        rep = ev.evaluate(perfect, data)
        assert rep == ev.MetricsReport(1.0, 1.0, 1.0, 1.0, 4)

    def test_uniform_scorer_recall1_counts_slot_zero(self):
        uniform = lambda inst: np.full(168, 1 / 168)
        data = [mk_instance(answer=a) for a in (0, 0, 3, 9)]
        rep = ev.evaluate(uniform, data)
        assert rep.recall_at_1 == pytest.approx(0.5)
        assert rep.mrr == pytest.approx((1 + 1 + 1 / 4 + 1 / 10) / 4)

    def test_order_invariance(self):
        rng = np.random.default_rng(1)
        tables = {a: rng.random(168) for a in range(30)}
        scorer = lambda inst: tables[inst.answer]
        data = [mk_instance(answer=a) for a in range(30)]
        fwd = ev.evaluate(scorer, data)
        rev = ev.evaluate(scorer, list(reversed(data)))
        assert fwd == rev

    def test_batch_path_identical(self):
        rng = np.random.default_rng(2)
        tables = {a: rng.random(168) for a in range(25)}
        scorer = lambda inst: tables[inst.answer]
        batch = lambda chunk: np.stack([tables[i.answer] for i in chunk])
        data = [mk_instance(answer=a) for a in range(25)]
        assert ev.evaluate(scorer, data) == \
            ev.evaluate(scorer, data, scorer_batch=batch, batch_size=7)

    def test_empty_dataset(self):
        with pytest.raises(ev.EmptyEvaluation):
            ev.evaluate(lambda i: np.zeros(168), [])


class TestMultiAttendee:
    @staticmethod
    def per_user_scorer(seed_map):
        def scorer(inst):
            rng = np.random.default_rng(seed_map[inst.target_user])
            p = rng.random(168)
            return p / p.sum()

        return scorer

    def request(self, attendees):
        return ev.MultiAttendeeRequest(
            title="planning", duration_scaled=0.01, attendees=tuple(attendees),
            contexts={}, iso_year=2018, iso_week=14)

    def test_identical_attendees_match_single_ordering(self):
        scorer = self.per_user_scorer({"u": 3})
        single = np.argsort(-scorer(mk_instance(user="u")), kind="stable")
        got = ev.multi_attendee_suggest(self.request(["u"] * 4), scorer, 168)
        assert [s for s, _ in got] == list(single)

    def test_one_attendee_degenerates(self):
        scorer = self.per_user_scorer({"u": 9})
        got = ev.multi_attendee_suggest(self.request(["u"]), scorer, 10)
        single = np.argsort(-scorer(mk_instance(user="u")), kind="stable")[:10]
        assert [s for s, _ in got] == list(single)

    def test_disjoint_deltas_stronger_peak_wins(self):
        def scorer(inst):
            p = np.full(168, 1e-9)
            if inst.target_user == "a":
                p[10] = 0.6
            else:
                p[20] = 0.9
            return p

        got = ev.multi_attendee_suggest(self.request(["a", "b"]), scorer, 2)
        assert got[0][0] == 20
        assert got[1][0] == 10
        assert got[0][1] == pytest.approx(0.9 + 1e-9, rel=1e-9)

    def test_matches_brute_force_sum(self):
        scorer = self.per_user_scorer({"a": 1, "b": 2, "c": 3})
        request = self.request(["a", "b", "c"])
        got = ev.multi_attendee_suggest(request, scorer, 168)
        total = sum(np.asarray(scorer(mk_instance(user=u)), dtype=np.float64)
                    for u in "abc")
        order = sorted(range(168), key=lambda s: (-total[s], s))
        assert [s for s, _ in got] == order
        npt.assert_allclose([v for _, v in got], total[order], rtol=1e-12)

    def test_scaling_invariance_of_ordering(self):
        base = self.per_user_scorer({"a": 5, "b": 6})
        scaled = lambda inst: 7.5 * base(inst)
        request = self.request(["a", "b"])
        a = [s for s, _ in ev.multi_attendee_suggest(request, base, 168)]
        b = [s for s, _ in ev.multi_attendee_suggest(request, scaled, 168)]
        assert a == b

    def test_no_attendees(self):
        with pytest.raises(ev.NoAttendees):
            ev.multi_attendee_suggest(self.request([]), lambda i: None, 5)


class TestNearestTitles:
    def test_query_finds_itself(self):
        rng = np.random.default_rng(0)
        corpus = [(f"t{i}", rng.standard_normal(8)) for i in range(20)]
        name, vec = corpus[7]
        got = ev.nearest_titles(vec, corpus, 3)
        assert got[0][0] == name
        assert got[0][1] == pytest.approx(1.0)

    def test_orthogonal_is_zero(self):
        corpus = [("x", np.array([1.0, 0.0]))]
        (pair,) = ev.nearest_titles(np.array([0.0, 2.0]), corpus, 1)
        assert pair[1] == pytest.approx(0.0, abs=1e-12)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(8)
        corpus = [(f"t{i}", rng.standard_normal(5)) for i in range(50)]
        q = rng.standard_normal(5)
        got = ev.nearest_titles(q, corpus, 50)
        sims = [float(q @ v / (np.linalg.norm(q) * np.linalg.norm(v)))
                for _, v in corpus]
        order = sorted(range(50), key=lambda i: (-sims[i], i))
        assert [t for t, _ in got] == [corpus[i][0] for i in order]

    def test_zero_vectors_rejected(self):
        corpus = [("x", np.ones(3))]
        with pytest.raises(ev.ZeroVector):
            ev.nearest_titles(np.zeros(3), corpus, 1)
        with pytest.raises(ev.ZeroVector):
            ev.nearest_titles(np.ones(3), [("z", np.zeros(3))], 1)


class TestAblationRun:
    def test_row_structure(self):
        from nesa import model as md

        def train_fn(config, splits):
            def scorer(inst):
                p = np.full(168, 1e-6)
                p[inst.answer] = 1.0  # keeps every full-model metric nonzero
                return p

            return scorer

        splits = SimpleNamespace(test=[mk_instance(answer=a)
                                       for a in range(10)])
        rows = ev.ablation_run(md.NesaConfig(), splits, train_fn)
        assert len(rows) == 7
        assert rows[0].label == "full model"
        assert rows[0].pct_diff is None
        assert {r.label for r in rows[1:]} == set(ev.ABLATION_LABELS.values())
        for row in rows[1:]:
            assert set(row.pct_diff) == {"recall_at_1", "recall_at_5",
                                         "mrr", "ieuc"}

    def test_full_row_equals_direct_evaluation(self):
        from nesa import model as md

        fixed = np.linspace(1, 2, 168)
        train_fn = lambda config, splits: (lambda inst: fixed)
        splits = SimpleNamespace(test=[mk_instance(answer=3)])
        rows = ev.ablation_run(md.NesaConfig(), splits, train_fn, flags=())
        assert len(rows) == 1
        assert rows[0].report == ev.evaluate(lambda i: fixed, splits.test)


class TestReports:
    def test_table_alignment_and_content(self):
        rep = ev.MetricsReport(0.1, 0.3, 0.2, 0.4, 100)
        text = ev.format_report_table([("full model", rep), ("- Context", rep)])
        lines = text.splitlines()
        assert lines[0].startswith("model")
        assert "recall@1" in lines[0] and "ieuc" in lines[0]
        assert len(lines) == 4
        assert "0.1000" in lines[2] and "100" in lines[2]

    def test_records(self):
        rep = ev.MetricsReport(0.1, 0.3, 0.2, 0.4, 7)
        (rec,) = ev.report_records([("full model", rep)])
        assert rec == {"model": "full model", "n_instances": 7,
                       "recall_at_1": 0.1, "recall_at_5": 0.3,
                       "mrr": 0.2, "ieuc": 0.4}
