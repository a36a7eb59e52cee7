import math
import random
from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from conftest import qa
from psl.context_engine import (
    ELLIPSIS,
    PREAMBLE,
    BM25Index,
    ContextBudgetError,
    Indices,
    Mode,
    Query,
    RetrievalConfig,
    Scored,
    answer,
    assemble_context,
    build_context,
    build_indices,
    center_truncate,
    fuse,
    rrf_scores,
    select_exemplars,
    seq_candidates,
    text_candidates,
)
from psl.llm_gateway import GatewayError, MockGateway
from psl.text import estimate_tokens, tokenize

AA = "ACDEFGHIKLMNPQRSTVWY"


def rand_seq(rng, n):
    return "".join(rng.choice(AA) for _ in range(n))


def mutate(rng, s, rate):
    return "".join(rng.choice(AA) if rng.random() < rate else c for c in s)


class TestBM25:
    def test_two_doc_hand_value(self):
        idx = BM25Index()
        idx.add("d1", "zinc finger protein")
        idx.add("d2", "membrane channel")
        # N=2, df=1 -> idf = ln(1.5/1.5 + 1) = ln 2 ; tf=1, |d1|=3, avgdl=2.5
        expected = math.log(2) * 2.2 / (1 + 1.2 * (0.25 + 0.75 * 3 / 2.5))
        scores = idx.scores("zinc")
        assert set(scores) == {"d1"}
        assert scores["d1"] == pytest.approx(expected, abs=1e-12)
        assert idx.idf("zinc") == pytest.approx(math.log(2), abs=1e-12)

    @given(
        st.lists(st.lists(st.sampled_from("abcdef"), min_size=1, max_size=8), min_size=1, max_size=6),
        st.lists(st.sampled_from("abcdefg"), min_size=1, max_size=4),
    )
    def test_matches_formula(self, docs, query):
        idx = BM25Index()
        for i, d in enumerate(docs):
            idx.add(str(i), " ".join(d))
        got = idx.scores(" ".join(query))
        for i, d in enumerate(docs):
            want = oracles.bm25_score(query, d, docs)
            assert got.get(str(i), 0.0) == pytest.approx(want, abs=1e-9)


class TestRRF:
    def test_dual_rank_one(self):
        assert rrf_scores([["x"], ["x"]], 60)["x"] == pytest.approx(2 / 61, abs=1e-12)

    @given(
        st.lists(st.sampled_from("abcdefgh"), unique=True, max_size=8),
        st.lists(st.sampled_from("abcdefgh"), unique=True, max_size=8),
        st.integers(1, 100),
    )
    def test_brute_force(self, a, b, k):
        got = rrf_scores([a, b], k)
        want = oracles.rrf_brute([a, b], k)
        assert got.keys() == want.keys()
        for key in want:
            assert got[key] == pytest.approx(want[key], abs=1e-15)

    def test_fuse_modes(self):
        seq = [("s1", 0.9), ("both", 0.8)]
        text = [("both", 3.0), ("t1", 2.0)]
        dual = fuse(seq, text, Mode.DUAL, k=3)
        assert dual[0].item_id == "both"
        assert dual[0].fused_score == pytest.approx(1 / 62 + 1 / 61)
        assert {s.item_id for s in fuse(seq, text, Mode.SEQ_ONLY, k=5)} == {"s1", "both"}
        assert {s.item_id for s in fuse(seq, text, Mode.QA_ONLY, k=5)} == {"both", "t1"}
        assert fuse(seq, text, Mode.ZERO_SHOT) == []
        assert fuse([], [], Mode.DUAL) == []

    def test_tie_break_by_id(self):
        out = fuse([("b", 1.0)], [("a", 1.0)], Mode.DUAL, k=2)
        assert [s.item_id for s in out] == ["a", "b"]


def small_corpus():
    rng = random.Random(1)
    base = rand_seq(rng, 120)
    return [
        qa("HOM1", mutate(rng, base, 0.05), "Where is it located?", "In the nucleus."),
        qa("HOM2", mutate(rng, base, 0.1), "What does it bind?", "It binds DNA."),
        qa("FAR1", rand_seq(rng, 120), "Which zinc finger motif is present?", "A C2H2 zinc finger."),
        qa("FAR2", rand_seq(rng, 100), "What is the catalytic activity?", "It hydrolyzes ATP."),
    ], base


class TestCandidates:
    def test_seq_ranking_and_exclusion(self):
        corpus, base = small_corpus()
        idx = build_indices(corpus)
        ranked = seq_candidates(base, idx.seq_index, 10)
        assert [a for a, _ in ranked[:2]] == ["HOM1", "HOM2"]
        assert ranked[0][1] >= ranked[1][1]
        assert "HOM1" not in [a for a, _ in seq_candidates(base, idx.seq_index, 10, exclude=["HOM1"])]
        assert all(s < 0.9 for _, s in seq_candidates(base, idx.seq_index, 10, max_identity=0.9))

    def test_short_query(self):
        corpus, _ = small_corpus()
        assert seq_candidates("MK", build_indices(corpus).seq_index, 5) == []

    def test_text_ranking(self):
        corpus, _ = small_corpus()
        idx = build_indices(corpus)
        ranked = text_candidates("zinc finger", idx.text_index, 5)
        assert ranked[0][0] == "FAR1/know/0"
        assert text_candidates("", idx.text_index, 5) == []
        assert text_candidates("???", idx.text_index, 5) == []


def engineered():
    """FAR1 shares the question vocabulary but no 3-mer with the query."""
    query_seq = "ACDEFGHIKLMNPQRSTVWY" * 3
    corpus = [
        qa("HOMO", query_seq[:50] + "W" * 10, "Where is it located?", "In the nucleus."),
        qa("FAR1", "M" * 40, "Which zinc finger motif does the protein carry?", "A C2H2 zinc finger."),
    ]
    return corpus, query_seq, "Which zinc finger motif does this protein carry?"


class TestModes:
    def test_dual_finds_text_only_exemplar(self):
        corpus, seq, question = engineered()
        idx = build_indices(corpus)
        cfg = RetrievalConfig(k=2, candidate_m=5)
        dual = build_context(Query(seq, question), idx, replace(cfg, mode=Mode.DUAL))
        seq_only = build_context(Query(seq, question), idx, replace(cfg, mode=Mode.SEQ_ONLY))
        qa_only = build_context(Query(seq, question), idx, replace(cfg, mode=Mode.QA_ONLY))
        ids = lambda b: {e.instance.accession for e in b.exemplars}  # noqa: E731
        assert "FAR1" in ids(dual)
        assert "FAR1" not in ids(seq_only)
        assert ids(seq_only) == {"HOMO"}
        assert "FAR1" in ids(qa_only)

    def test_zero_shot_prompt(self):
        corpus, seq, question = engineered()
        b = build_context(Query(seq, question), build_indices(corpus), RetrievalConfig(mode=Mode.ZERO_SHOT))
        assert b.exemplars == []
        assert b.prompt == f"{PREAMBLE}\n\nProtein sequence: {seq}\nQ: {question}\nA:"


class TestAssembly:
    def test_ascending_order_puts_best_last(self):
        corpus, base = small_corpus()
        idx = build_indices(corpus)
        ranked = select_exemplars(Query(base, "Where is it located?"), idx, RetrievalConfig(k=3, candidate_m=5))
        bundle = assemble_context(ranked, idx, base, "Where is it located?", RetrievalConfig(k=3, candidate_m=5))
        fused = [e.fused_score for e in bundle.exemplars]
        assert fused == sorted(fused)
        best = idx.instances[ranked[0].item_id]
        body = bundle.prompt.rsplit("\n\nProtein sequence: " + base, 1)[0]
        assert body.endswith(f"A: {best.answer_text()}")

    def test_descending_option(self):
        corpus, base = small_corpus()
        idx = build_indices(corpus)
        cfg = RetrievalConfig(k=3, candidate_m=5, ascending=False)
        bundle = build_context(Query(base, "Where is it located?"), idx, cfg)
        fused = [e.fused_score for e in bundle.exemplars]
        assert fused == sorted(fused, reverse=True)

    def test_center_truncate(self):
        s = "A" * 100 + "C" * 50 + "D" * 100
        t = center_truncate(s, 100)
        assert t == "A" * 100 + ELLIPSIS + "D" * 100
        assert center_truncate("MKV", 100) == "MKV"

    def test_budget_truncates_then_drops(self):
        rng = random.Random(5)
        long_seqs = [rand_seq(rng, 2000) for _ in range(3)]
        corpus = [qa(f"L{i}", s, f"Question {i} about zinc?", f"Answer {i}.") for i, s in enumerate(long_seqs)]
        idx = build_indices(corpus)
        ranked = [Scored(f"L{i}/know/0", None, 1.0, 1.0 - i / 10) for i in range(3)]
        q = "Which zinc?"
        full = assemble_context(ranked, idx, "MKV", q, RetrievalConfig(k=3, token_budget=10**6))
        assert full.dropped == [] and all(e.shown_sequence == e.instance.sequence for e in full.exemplars)

        def tokens_with(n_ex, truncated):
            shown = center_truncate(long_seqs[0], 100) if truncated else long_seqs[0]
            block = estimate_tokens(f"Protein sequence: {shown}\nQ: Question 0 about zinc?\nA: Answer 0.")
            return block * n_ex

        # room for two truncated exemplars but not three
        budget = estimate_tokens(full.prompt) - 3 * tokens_with(1, False) + int(2.5 * tokens_with(1, True))
        cfg = RetrievalConfig(k=3, token_budget=budget)
        b = assemble_context(ranked, idx, "MKV", q, cfg)
        assert b.prompt_tokens <= budget
        assert b.dropped == ["L2/know/0"]  # least relevant goes first
        assert all(ELLIPSIS in e.shown_sequence for e in b.exemplars)
        assert len(b.exemplars) == 2

    def test_query_alone_over_budget(self):
        corpus, base = small_corpus()
        with pytest.raises(ContextBudgetError):
            build_context(Query(base * 20, "q"), build_indices(corpus), RetrievalConfig(token_budget=50))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            RetrievalConfig(k=0)
        with pytest.raises(ValueError):
            RetrievalConfig(k=10, candidate_m=5)
        with pytest.raises(ValueError):
            RetrievalConfig(token_budget=0)


class TestAnswer:
    def test_records_bundle_and_calls_once(self):
        corpus, base = small_corpus()
        idx = build_indices(corpus)
        gw = MockGateway({}, echo=True)
        res = answer(Query(base, "Where is it?", "HOM1"), idx, RetrievalConfig(k=2, candidate_m=4), gw)
        assert gw.calls == 1 and res.text
        assert "HOM1" not in {e.instance.accession for e in res.bundle.exemplars}
        d = res.bundle.to_dict()
        assert d["query_accession"] == "HOM1" and len(d["exemplars"]) == 2

    def test_gateway_error_keeps_bundle(self):
        corpus, base = small_corpus()

        class Down:
            model = "x"

            def complete(self, messages):
                raise GatewayError("down", status=503)

        with pytest.raises(GatewayError) as exc:
            answer(Query(base, "q"), build_indices(corpus), RetrievalConfig(k=2, candidate_m=4), Down())
        assert exc.value.bundle.query_sequence == base


class TestIndices:
    def test_serialization_round_trip(self):
        corpus, base = small_corpus()
        idx = build_indices(corpus)
        again = Indices.from_dict(idx.to_dict())
        q = Query(base, "zinc finger?")
        assert build_context(q, idx, RetrievalConfig()).prompt == build_context(q, again, RetrievalConfig()).prompt

    def test_empty_and_duplicate(self):
        with pytest.raises(ValueError):
            build_indices([])
        x = qa("A", "MKV", "q", "a")
        with pytest.raises(ValueError):
            build_indices([x, x])

    def test_tokenize(self):
        assert tokenize("Zinc-finger, C2H2!") == ["zinc", "finger", "c2h2"]
