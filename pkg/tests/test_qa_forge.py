import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import FIXTURES, protein
from psl.llm_gateway import GatewayError, MockGateway, prompt_key
from psl.qa_forge import (
    ATTRIBUTE_LABELS,
    DESCRIPTIVE_OPENERS,
    SLOT,
    GenerationInterrupted,
    QAInstance,
    QAParseError,
    QAType,
    generate_corpus,
    load_template,
    parse_attribute,
    parse_descriptive,
    parse_knowledge,
    parse_response,
    parse_truefalse,
    parse_types,
    render_annotations,
    render_prompt,
    render_response,
    reviewable_sample,
)

META = dict(accession="Q1", sequence="MKV", source_model="m")
ATTR_OK = "\n".join(f"{lab}: value {i}" for i, lab in enumerate(ATTRIBUTE_LABELS)) + "\n\nExtended Information: more."
KNOW_OK = "<Questions>\n1. Where is it?\n2. What does it bind?\n3. Is it conserved?\n<\\Questions>\n<Answers>\n1. Nucleus.\n2. DNA.\n3. Yes.\n<\\Answers>"


class TestTemplates:
    @pytest.mark.parametrize("t", list(QAType))
    def test_one_slot(self, t):
        assert load_template(t).count(SLOT) == 1

    def test_render_substitutes_annotations(self):
        p = protein("Q1", "MKVL", go=["GO:1", "GO:2"], name="Thing", function="Binds X.")
        text = render_prompt(p, QAType.TRUEFALSE)
        assert SLOT not in text
        assert render_annotations(p) in text
        assert "Stem: <statement>; Answer: <True or False>; Explanation: <justification>" in text
        assert "Motif: N/A" in render_annotations(p)

    def test_unknown_type(self):
        with pytest.raises(ValueError):
            render_prompt(protein("Q1"), "Essay")

    def test_custom_prompts_dir(self, tmp_path):
        (tmp_path / "truefalse.txt").write_text(f"Custom {SLOT} end", encoding="utf-8")
        assert render_prompt(protein("Q1"), QAType.TRUEFALSE, str(tmp_path)).startswith("Custom UniProt entry")


class TestParsers:
    def test_truefalse(self):
        raw = "Stem: X binds zinc via a CXXC motif in the nucleus; Answer: True; Explanation: The entry lists zinc."
        x = parse_truefalse(raw, **META)
        assert x.verdict is True and x.answer == "True"
        assert x.question.startswith("X binds zinc")
        assert x.explanation == "The entry lists zinc."
        assert x.valid

    @pytest.mark.parametrize("token, verdict", [("false", False), ("F", False), ("T.", True), ("TRUE", True)])
    def test_truefalse_tokens(self, token, verdict):
        x = parse_truefalse(f"Stem: s; Answer: {token}; Explanation: e", **META)
        assert x.verdict is verdict

    def test_truefalse_bad_verdict(self):
        with pytest.raises(QAParseError) as exc:
            parse_truefalse("Stem: s; Answer: Maybe; Explanation: e")
        assert exc.value.raw.startswith("Stem")

    def test_truefalse_missing_field(self):
        with pytest.raises(QAParseError, match="Explanation"):
            parse_truefalse("Stem: s; Answer: True")

    def test_truefalse_stem_leak_flagged(self):
        x = parse_truefalse("Stem: It is True that X binds; Answer: True; Explanation: e")
        assert not x.valid and "stem_mentions_verdict" in x.flags

    def test_knowledge_pairs(self):
        xs = parse_knowledge(KNOW_OK, **META)
        assert [x.question for x in xs] == ["Where is it?", "What does it bind?", "Is it conserved?"]
        assert [x.answer for x in xs] == ["Nucleus.", "DNA.", "Yes."]
        assert [x.index for x in xs] == [0, 1, 2]
        assert len({x.instance_id for x in xs}) == 3

    def test_knowledge_forward_slash_closers(self):
        raw = KNOW_OK.replace("<\\", "</")
        assert len(parse_knowledge(raw)) == 3

    def test_knowledge_count_mismatch(self):
        raw = "<Questions>\n1. a?\n2. b?\n<\\Questions>\n<Answers>\n1. x\n<\\Answers>"
        with pytest.raises(QAParseError, match="2 questions but 1 answers"):
            parse_knowledge(raw)

    def test_knowledge_too_many(self):
        qs = "\n".join(f"{i}. q{i}?" for i in range(1, 11))
        ans = "\n".join(f"{i}. a{i}" for i in range(1, 11))
        with pytest.raises(QAParseError, match="1-9"):
            parse_knowledge(f"<Questions>\n{qs}\n</Questions>\n<Answers>\n{ans}\n</Answers>")

    def test_knowledge_missing_section(self):
        with pytest.raises(QAParseError, match="Answers"):
            parse_knowledge("<Questions>\n1. a?\n</Questions>")

    def test_attribute(self):
        x = parse_attribute(ATTR_OK, **META)
        assert x.qa_type is QAType.ATTRIBUTE and x.answer == ATTR_OK.strip()

    def test_attribute_missing_label(self):
        with pytest.raises(QAParseError, match="KEY SEQUENCE MOTIF"):
            parse_attribute(ATTR_OK.replace("KEY SEQUENCE MOTIF", "MOTIF"))

    @pytest.mark.parametrize("opener", DESCRIPTIVE_OPENERS)
    def test_descriptive_openers(self, opener):
        assert parse_descriptive(f"{opener} it binds DNA.").qa_type is QAType.DESCRIPTIVE

    def test_descriptive_synonym_opener(self):
        parse_descriptive("A compact summary of this protein with the supplied amino acid sequence follows: it binds.")

    def test_descriptive_rejects_other_openings(self):
        with pytest.raises(QAParseError):
            parse_descriptive("This protein binds DNA.")

    @pytest.mark.parametrize("t", list(QAType))
    def test_empty_rejected(self, t):
        with pytest.raises(QAParseError):
            parse_response(t, "   ")


words = st.text(alphabet="abcdefghij ", min_size=1, max_size=30).map(lambda s: s.strip() or "x")
sentence = st.lists(st.sampled_from(["binds", "zinc", "in", "the", "nucleus", "via", "motif", "X"]), min_size=1, max_size=8).map(" ".join)


class TestRoundTrip:
    @given(st.lists(st.tuples(sentence, sentence), min_size=1, max_size=9))
    def test_knowledge(self, pairs):
        xs = [QAInstance("Q1", QAType.KNOWLEDGE, q + "?", a + ".", index=i) for i, (q, a) in enumerate(pairs)]
        back = parse_knowledge(render_response(xs), accession="Q1")
        assert [(x.question, x.answer) for x in back] == [(x.question, x.answer) for x in xs]

    @given(sentence, st.booleans(), sentence)
    def test_truefalse(self, stem, verdict, expl):
        x = parse_truefalse(f"Stem: {stem}; Answer: {verdict}; Explanation: {expl}")
        again = parse_truefalse(render_response([x]))
        assert (again.question, again.verdict, again.explanation) == (x.question, x.verdict, x.explanation)

    def test_attribute_and_descriptive(self):
        for t, raw in [(QAType.ATTRIBUTE, ATTR_OK), (QAType.DESCRIPTIVE, DESCRIPTIVE_OPENERS[2] + " it binds.")]:
            xs = parse_response(t, raw)
            assert parse_response(t, render_response(xs))[0].answer == xs[0].answer

    def test_instance_dict_round_trip(self):
        x = parse_truefalse("Stem: s; Answer: False; Explanation: e", **META)
        assert QAInstance.from_dict(json.loads(json.dumps(x.to_dict()))) == x


def good_script(proteins, types=QAType, knowledge_pairs=2):
    script = {}
    for p in proteins:
        for t in types:
            if t is QAType.KNOWLEDGE:
                qs = "\n".join(f"{i}. Q{i} about {p.accession}?" for i in range(1, knowledge_pairs + 1))
                ans = "\n".join(f"{i}. A{i}." for i in range(1, knowledge_pairs + 1))
                raw = f"<Questions>\n{qs}\n</Questions>\n<Answers>\n{ans}\n</Answers>"
            else:
                raw = {
                    QAType.ATTRIBUTE: ATTR_OK,
                    QAType.DESCRIPTIVE: f"{DESCRIPTIVE_OPENERS[0]} {p.accession} binds.",
                    QAType.TRUEFALSE: f"Stem: {p.accession} binds zinc; Answer: False; Explanation: no.",
                }[t]
            script[prompt_key(render_prompt(p, t))] = raw
    return script


PROTEINS = [protein(f"P{i}", "MKVLA" * (i + 1), name=f"prot {i}") for i in range(5)]


class TestGenerateCorpus:
    def test_four_types_per_protein(self):
        gw = MockGateway(good_script(PROTEINS, knowledge_pairs=1), echo=False)
        res = generate_corpus(PROTEINS, list(QAType), gw)
        assert len(res.instances) == 4 * len(PROTEINS)
        assert res.type_counts() == {t.value: len(PROTEINS) for t in QAType}
        assert not res.rejects
        assert gw.calls == 20

    def test_retry_then_success(self):
        script = good_script(PROTEINS[:1], [QAType.TRUEFALSE])
        key = next(iter(script))
        script[key] = ["Stem: s; Answer: Perhaps; Explanation: e", script[key]]
        gw = MockGateway(script, echo=False)
        res = generate_corpus(PROTEINS[:1], [QAType.TRUEFALSE], gw, retries=2)
        assert len(res.instances) == 1 and res.retries_used == 1 and gw.calls == 2

    def test_rejects_after_retries(self):
        script = {prompt_key(render_prompt(PROTEINS[0], QAType.ATTRIBUTE)): "FUNCTION: only"}
        gw = MockGateway(script, echo=False)
        res = generate_corpus(PROTEINS[:1], [QAType.ATTRIBUTE], gw, retries=2)
        assert res.instances == []
        (rej,) = res.rejects
        assert rej.attempts == 3 and "PROTEIN NAME" in rej.last_error and rej.raw == "FUNCTION: only"
        assert gw.calls == 3

    def test_flagged_instance_counts_as_failure(self):
        script = {prompt_key(render_prompt(PROTEINS[0], QAType.TRUEFALSE)): "Stem: True story; Answer: True; Explanation: e"}
        res = generate_corpus(PROTEINS[:1], [QAType.TRUEFALSE], MockGateway(script, echo=False), retries=1)
        assert res.instances == [] and len(res.rejects) == 1

    def test_order_independent_of_concurrency(self):
        script = good_script(PROTEINS)
        a = generate_corpus(reversed(PROTEINS), list(QAType), MockGateway(script, echo=False, max_inflight=1))
        b = generate_corpus(PROTEINS, list(QAType), MockGateway(script, echo=False, max_inflight=4, delay=0.002))
        assert a.instances == b.instances

    def test_resume_skips_finished(self, tmp_path):
        ck = tmp_path / "ck.jsonl"
        script = good_script(PROTEINS)
        first = MockGateway({k: v for i, (k, v) in enumerate(script.items()) if i < 12}, echo=False)
        with pytest.raises(GenerationInterrupted) as exc:
            generate_corpus(PROTEINS, list(QAType), first, checkpoint=ck, retries=0)
        assert 0 < len(exc.value.partial.instances)
        done_before = len(ck.read_text().splitlines())
        second = MockGateway(script, echo=False)
        res = generate_corpus(PROTEINS, list(QAType), second, checkpoint=ck)
        assert second.calls == 20 - done_before
        full = generate_corpus(PROTEINS, list(QAType), MockGateway(script, echo=False))
        assert res.instances == full.instances

    def test_gateway_error_interrupts(self):
        class Down:
            model = "down"
            max_inflight = 2

            def complete(self, messages):
                raise GatewayError("503", status=503)

        with pytest.raises(GenerationInterrupted) as exc:
            generate_corpus(PROTEINS[:2], [QAType.ATTRIBUTE], Down())
        assert exc.value.partial.instances == []

    def test_fixture_script_covers_fixture(self):
        from psl.records import load_proteins

        proteins = load_proteins(FIXTURES / "toy_proteins.jsonl")[:10]
        gw = MockGateway.from_file(FIXTURES / "mock_script.json")
        gw.echo = False
        res = generate_corpus(proteins, list(QAType), gw)
        done = {(x.accession, x.qa_type) for x in res.instances} | {(r.accession, r.qa_type) for r in res.rejects}
        assert len(done) == 40
        assert all(x.valid for x in res.instances)


def test_parse_types():
    assert parse_types("attr,tf") == [QAType.ATTRIBUTE, QAType.TRUEFALSE]
    assert parse_types("Knowledge,desc") == [QAType.KNOWLEDGE, QAType.DESCRIPTIVE]
    with pytest.raises(ValueError):
        parse_types("attr,poem")


def test_reviewable_sample_deterministic():
    xs = [QAInstance(f"P{i}", QAType.ATTRIBUTE, "q", "a") for i in range(20)]
    assert reviewable_sample(xs, 5, seed=3) == reviewable_sample(xs, 5, seed=3)
    assert len(reviewable_sample(xs, 50)) == 20
