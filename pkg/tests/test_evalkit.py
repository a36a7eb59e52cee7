import io
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from conftest import protein, qa
from psl._io import DataError
from psl.benchmarks import import_benchmark, load_mapping, presets
from psl.context_engine import Mode, RetrievalConfig, build_indices
from psl.evalkit import (
    DatasetItem,
    EvalReport,
    RatingSet,
    ablate,
    corpus_stats,
    default_k,
    evaluate,
    evaluate_predictions,
    human_summary,
    k_sweep,
    krippendorff_alpha,
    load_ratings,
    pairwise_winloss,
    rating_set,
    rouge_l,
    winloss_pairs,
)
from psl.llm_gateway import MockGateway
from psl.qa_forge import QAType

tokens = st.lists(st.sampled_from("abcde"), max_size=8)


class TestRouge:
    @given(tokens, tokens)
    def test_matches_exhaustive_oracle(self, a, b):
        lcs = oracles.lcs_exhaustive(a, b)
        want = 0.0 if lcs == 0 else 2 * lcs / (len(a) + len(b))
        assert rouge_l(a, b).f1 == pytest.approx(want, abs=0)

    def test_hand_values(self):
        s = rouge_l("the cat sat on the mat", "the cat is on the mat")
        assert s.precision == pytest.approx(5 / 6) and s.recall == pytest.approx(5 / 6)
        assert rouge_l("", "x") == (0.0, 0.0, 0.0)
        assert rouge_l("Binds DNA.", "binds dna").f1 == 1.0

    def test_precision_recall_asymmetry(self):
        s = rouge_l("a b", "a b c d")
        assert (s.precision, s.recall) == (1.0, 0.5)


class TestKrippendorff:
    def test_perfect_agreement(self):
        assert krippendorff_alpha([[3, 3, 3], [1, 1, 1], [5, 5, 5]]).alpha == 1.0

    def test_anti_agreement_fixture(self):
        got = krippendorff_alpha([[0, 5], [5, 0]])
        want = oracles.alpha_pairwise([[0, 5], [5, 0]], list(range(6)))
        assert got.alpha == pytest.approx(want, abs=1e-9)
        assert got.alpha == pytest.approx(-0.5, abs=1e-9)

    def test_missing_ratings(self):
        m = [[1, 2, None], [3, 3, 4], [None, 0, 1], [5, None, None]]
        units = [[v for v in r if v is not None] for r in m]
        got = krippendorff_alpha(m).alpha
        assert got == pytest.approx(oracles.alpha_pairwise(units, list(range(6))), abs=1e-9)

    @given(st.lists(st.lists(st.integers(0, 5), min_size=2, max_size=4), min_size=2, max_size=6))
    def test_matches_pairwise_oracle(self, units):
        pooled = {v for u in units for v in u}
        if len(pooled) < 2:
            assert krippendorff_alpha(units).degenerate
            return
        got = krippendorff_alpha(units).alpha
        assert got == pytest.approx(oracles.alpha_pairwise(units, list(range(6))), abs=1e-9)

    def test_degenerate_and_errors(self):
        assert krippendorff_alpha([[2, 2], [2, 2]]) == (1.0, True)
        with pytest.raises(ValueError):
            krippendorff_alpha([[1, 2]])
        with pytest.raises(ValueError):
            RatingSet(["a"], ["r"], [[6]])
        with pytest.raises(ValueError):
            krippendorff_alpha([[1, 2], [2, 3]], metric="nominalish")

    def test_interval_metric(self):
        assert krippendorff_alpha([[1, 1], [4, 4]], metric="interval").alpha == 1.0


class TestRatings:
    def test_winloss(self):
        wl = pairwise_winloss([("a", 4, 2), ("b", 1, 3), ("c", 2, 2), ("d", 5, 0)])
        assert (wl.win, wl.lose, wl.tie, wl.n) == (0.5, 0.25, 0.25, 4)
        with pytest.raises(ValueError):
            pairwise_winloss([])

    def test_csv_round(self, fixtures_dir):
        recs = load_ratings(fixtures_dir / "toy_ratings.csv")
        assert len(recs) == 36
        pairs = winloss_pairs(recs)
        assert len(pairs) == 6
        summary = human_summary(recs)
        assert set(summary["mean_rating"]) == {"with", "without"}
        assert -1.0 <= summary["alpha"] <= 1.0
        assert summary["win"] + summary["lose"] + summary["tie"] == pytest.approx(1.0)
        rs = rating_set(recs, "with")
        assert len(rs.items) == 6 and len(rs.raters) == 3

    @pytest.mark.parametrize(
        "text",
        ["item_id,rater_id,score\nI,R,1\n", "item_id,rater_id,condition,score\nI,R,with,7\n", "item_id,rater_id,condition,score\nI,R,with,x\n"],
    )
    def test_bad_csv(self, text):
        with pytest.raises(DataError):
            load_ratings(io.StringIO(text))


class TestDefaults:
    @pytest.mark.parametrize(
        "task,k",
        [("protdescribe", 11), ("protein2text-qa", 4), ("mol-instructions", 4), ("mol-instructions/function", 4), ("my-describe", 11), ("other", 4)],
    )
    def test_default_k(self, task, k):
        assert default_k(task) == k


def toy_eval():
    rng = random.Random(3)
    aa = "ACDEFGHIKLMNPQRSTVWY"
    corpus = []
    for i in range(6):
        s = "".join(rng.choice(aa) for _ in range(80))
        corpus.append(qa(f"C{i}", s, f"What does protein {i} do?", f"It binds ligand {i}."))
    dataset = [
        DatasetItem("d1", corpus[0].sequence, "What does it do?", "It binds ligand 0.", "protdescribe", "C0"),
        DatasetItem("d2", corpus[1].sequence, "What does it do?", "It binds ligand 1.", "protdescribe", "C1"),
        DatasetItem("d3", corpus[2].sequence, "What does it do?", "It binds ligand 2.", "protdescribe", "C2"),
        DatasetItem("q1", corpus[3].sequence, "What does it bind?", "Ligand 3.", "protein2text-qa", "C3"),
    ]
    return build_indices(corpus), dataset


class TestRunners:
    def test_k_sweep_rows(self):
        idx, data = toy_eval()
        rep = k_sweep(data, [1, 2], idx, RetrievalConfig(k=1, candidate_m=4), MockGateway(), name="toy")
        assert [(r.task, r.k, r.n_items) for r in rep.rows] == [
            ("protdescribe", 1, 3),
            ("protdescribe", 2, 3),
            ("protein2text-qa", 1, 1),
            ("protein2text-qa", 2, 1),
        ]
        assert all(len(a["bundle"]["exemplars"]) == a["k"] for a in rep.audits)

    def test_ablate_modes_and_defaults(self):
        idx, data = toy_eval()
        gw = MockGateway()
        modes = [Mode.ZERO_SHOT, Mode.DUAL, Mode.SEQ_ONLY, Mode.QA_ONLY]
        rep = ablate(data, modes, idx, RetrievalConfig(candidate_m=4), gw, name="toy")
        assert [(r.task, r.mode, r.k) for r in rep.rows] == [
            ("protdescribe", "ZeroShot", 0),
            ("protdescribe", "Dual", 11),
            ("protdescribe", "SeqOnly", 11),
            ("protdescribe", "QAOnly", 11),
            ("protein2text-qa", "ZeroShot", 0),
            ("protein2text-qa", "Dual", 4),
            ("protein2text-qa", "SeqOnly", 4),
            ("protein2text-qa", "QAOnly", 4),
        ]
        assert gw.calls == 4 * len(data)
        for a in rep.audits:
            n = len(a["bundle"]["exemplars"])
            assert n == 0 if a["mode"] == "ZeroShot" else n >= 1
            leaked = {e["accession"] for e in a["bundle"]["exemplars"]}
            assert a["bundle"]["query_accession"] not in leaked

    def test_evaluate_pairs_zero_with_mode(self):
        idx, data = toy_eval()
        rep = evaluate(data, idx, RetrievalConfig(candidate_m=4), MockGateway(), k=2)
        assert [r.mode for r in rep.rows] == ["ZeroShot", "Dual"] * 2

    def test_report_formats(self):
        idx, data = toy_eval()
        preds = {"d1": "It binds ligand 0.", "d2": "nothing", "q1": "Ligand 3."}
        rep = evaluate_predictions(data, preds, name="toy")
        desc = rep.rows[0]
        assert desc.rouge_l_f1 == pytest.approx((1.0 + 0.0 + 0.0) / 3)
        tsv = rep.to_tsv('{"h": 1}').splitlines()
        assert tsv[0] == '# {"h": 1}'
        assert tsv[1].split("\t") == list(EvalReport.COLUMNS)
        assert len(tsv) == 4
        assert '"rows"' in rep.to_json({"tool": "psl"})


class TestBenchmarks:
    def test_presets(self):
        assert set(presets()) == {"protdescribe", "protein2text-qa", "mol-instructions"}
        with pytest.raises(DataError):
            load_mapping("nope")

    def test_protdescribe(self, fixtures_dir):
        items = import_benchmark(fixtures_dir / "toy_protdescribe.csv", load_mapping("protdescribe"))
        assert items and all(x.task == "protdescribe" and x.sequence.isalpha() for x in items)
        assert all(x.reference for x in items)

    def test_protein2text(self, fixtures_dir):
        items = import_benchmark(fixtures_dir / "toy_protein2text.jsonl", load_mapping("protein2text-qa"))
        assert items and all(x.question for x in items)

    def test_missing_sequence(self, tmp_path):
        p = tmp_path / "b.jsonl"
        p.write_text('{"id": "x", "sequence": "", "question": "q", "answer": "a"}\n')
        with pytest.raises(DataError):
            import_benchmark(p, load_mapping("protein2text-qa"))


class TestCorpusStats:
    def test_counts(self):
        corpus = [
            qa("A", "M" * 60, "q", "a b", QAType.KNOWLEDGE),
            qa("A", "M" * 60, "q", "yes", QAType.TRUEFALSE),
            qa("B", "M" * 250, "q", "c", QAType.KNOWLEDGE),
        ]
        s = corpus_stats(corpus, [protein("A", "M" * 60), protein("B", "M" * 250, kingdom="Bacteria")])
        assert s["n_instances"] == 3 and s["n_proteins"] == 2
        assert s["type_counts"]["Knowledge"] == 2 and s["type_counts"]["TrueFalse"] == 1
        assert s["length_histogram"]["50-99"] == 1 and s["length_histogram"]["200-299"] == 1
        assert s["species_counts"] == {"Bacteria": 1, "Eukaryota": 1}
        assert s["sequence_tokens"] == 370
        with pytest.raises(ValueError):
            corpus_stats([])
