"""Bilingual QA generation: prompt rendering, response parsing, corpus loop."""

from __future__ import annotations

import enum
import logging
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from ._io import DataError, dumps, iter_jsonl
from .llm_gateway import GatewayError
from .records import ProteinRecord

log = logging.getLogger(__name__)

SLOT = "{{ANNOTATIONS}}"


class QAType(str, enum.Enum):
    ATTRIBUTE = "Attribute"
    KNOWLEDGE = "Knowledge"
    DESCRIPTIVE = "Descriptive"
    TRUEFALSE = "TrueFalse"

    @property
    def code(self) -> str:
        return _CODES[self]

    @classmethod
    def parse(cls, text: str) -> "QAType":
        t = text.strip()
        for member in cls:
            if t in (member.value, member.code) or t.lower() == member.value.lower():
                return member
        raise ValueError(f"unknown QA type {text!r}")


_CODES = {
    QAType.ATTRIBUTE: "attr",
    QAType.KNOWLEDGE: "know",
    QAType.DESCRIPTIVE: "desc",
    QAType.TRUEFALSE: "tf",
}
_TEMPLATE_FILES = {
    QAType.ATTRIBUTE: "attribute.txt",
    QAType.KNOWLEDGE: "knowledge.txt",
    QAType.DESCRIPTIVE: "descriptive.txt",
    QAType.TRUEFALSE: "truefalse.txt",
}
TYPE_ORDER = list(QAType)

ATTRIBUTE_QUESTION = "Summarize the key attributes of this protein."
DESCRIPTIVE_QUESTION = "Describe the protein encoded by this amino acid sequence."
ATTRIBUTE_LABELS = ("PROTEIN NAME", "FUNCTION", "SUBCELLULAR LOCATION", "FAMILY", "KEY SEQUENCE MOTIF")
# Example lead-ins; any "A/An ... protein ... amino acid sequence ...:" opener is accepted.
DESCRIPTIVE_OPENERS = (
    "An overview of the protein encoded by this amino acid sequence reads:",
    "A compact profile of the protein with this amino acid sequence follows:",
    "A brief account of the protein carrying this amino acid sequence is given here:",
)
_OPENER = re.compile(
    r"^(?:A|An)\s[^:\n]{0,160}?\bprotein\b[^:\n]{0,160}?\bamino[- ]acid sequence\b[^:\n]{0,80}:"
)
MAX_KNOWLEDGE_PAIRS = 9


class QAParseError(ValueError):
    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


@dataclass(frozen=True)
class QAInstance:
    accession: str
    qa_type: QAType
    question: str
    answer: str
    explanation: str | None = None
    verdict: bool | None = None
    source_model: str = ""
    sequence: str = ""
    index: int = 0
    batch_id: str = ""
    flags: tuple[str, ...] = ()

    @property
    def instance_id(self) -> str:
        return f"{self.accession}/{self.qa_type.code}/{self.index}"

    @property
    def valid(self) -> bool:
        return not self.flags

    def answer_text(self) -> str:
        """Answer as shown to the answering model."""
        if self.qa_type is QAType.TRUEFALSE and self.explanation:
            return f"{self.answer}. {self.explanation}"
        return self.answer

    def to_dict(self) -> dict:
        d = asdict(self)
        d["qa_type"] = self.qa_type.value
        d["flags"] = list(self.flags)
        d["instance_id"] = self.instance_id
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "QAInstance":
        try:
            return cls(
                accession=d["accession"],
                qa_type=QAType.parse(d["qa_type"]),
                question=d["question"],
                answer=d["answer"],
                explanation=d.get("explanation"),
                verdict=d.get("verdict"),
                source_model=d.get("source_model", ""),
                sequence=d.get("sequence", ""),
                index=int(d.get("index", 0)),
                batch_id=d.get("batch_id", ""),
                flags=tuple(d.get("flags") or ()),
            )
        except (KeyError, ValueError) as exc:
            raise DataError(f"bad QA record: {exc}") from None


def load_corpus(path: str | Path) -> list[QAInstance]:
    return [QAInstance.from_dict(d) for d in iter_jsonl(path)]


# Prompts ------------------------------------------------------------------


@lru_cache(maxsize=None)
def load_template(qa_type: QAType, prompts_dir: str | None = None) -> str:
    name = _TEMPLATE_FILES[qa_type]
    if prompts_dir:
        text = Path(prompts_dir, name).read_text(encoding="utf-8")
    else:
        text = resources.files("psl").joinpath("prompts", name).read_text(encoding="utf-8")
    if text.count(SLOT) != 1:
        raise DataError(f"template {name} must contain {SLOT} exactly once")
    return text


def render_annotations(p: ProteinRecord) -> str:
    a = p.annotation

    def v(x: str) -> str:
        return x.strip() or "N/A"

    lines = [
        "UniProt entry",
        f"Accession: {p.accession}",
        f"Protein name: {v(a.name)}",
        f"Function: {v(a.function)}",
        f"Subcellular location: {v(a.location)}",
        f"Family: {v(a.family)}",
        f"Sequence similarities: {v(a.similarity)}",
        f"Motif: {v(a.motif)}",
        f"Superkingdom: {p.superkingdom}",
        f"GO terms: {', '.join(sorted(p.go_terms)) or 'N/A'}",
        f"Sequence length: {len(p.sequence)}",
        f"Sequence: {p.sequence}",
    ]
    return "\n".join(lines)


def render_prompt(p: ProteinRecord, qa_type: QAType | str, prompts_dir: str | None = None) -> str:
    if not isinstance(qa_type, QAType):
        try:
            qa_type = QAType.parse(qa_type)
        except ValueError:
            raise ValueError(f"unknown qa_type {qa_type!r}") from None
    return load_template(qa_type, prompts_dir).replace(SLOT, render_annotations(p))


# Parsers ------------------------------------------------------------------

_TF = re.compile(
    r"Stem\s*:\s*(?P<stem>.*?)[\s;]*\bAnswer\s*:\s*(?P<answer>.*?)[\s;]*\bExplanation\s*:\s*(?P<explanation>.*)",
    re.S | re.I,
)
_VERDICTS = {"true": True, "t": True, "false": False, "f": False}
_VERDICT_WORD = re.compile(r"\b(True|False)\b")


def parse_truefalse(raw: str, **meta) -> QAInstance:
    if not raw or not raw.strip():
        raise QAParseError("empty response", raw or "")
    for label in ("Stem", "Answer", "Explanation"):
        if not re.search(rf"\b{label}\s*:", raw, re.I):
            raise QAParseError(f"missing '{label}:' field", raw)
    m = _TF.search(raw)
    if not m:
        raise QAParseError("fields out of order; expected Stem, Answer, Explanation", raw)
    stem = m["stem"].strip()
    explanation = m["explanation"].strip()
    token = m["answer"].strip().strip(".;:,!*").strip()
    if token.lower() not in _VERDICTS:
        raise QAParseError(f"unparseable verdict {m['answer'].strip()!r}", raw)
    if not stem or not explanation:
        raise QAParseError("empty stem or explanation", raw)
    flags = ("stem_mentions_verdict",) if _VERDICT_WORD.search(stem) else ()
    verdict = _VERDICTS[token.lower()]
    return QAInstance(
        qa_type=QAType.TRUEFALSE,
        question=stem,
        answer="True" if verdict else "False",
        explanation=explanation,
        verdict=verdict,
        flags=flags,
        batch_id=_batch(meta, QAType.TRUEFALSE),
        **_meta(meta),
    )


def _section(raw: str, tag: str, stop: str | None) -> str:
    m = re.search(rf"<\s*{tag}\s*>", raw, re.I)
    if not m:
        raise QAParseError(f"missing <{tag}> section", raw)
    rest = raw[m.end() :]
    end = re.search(rf"<\s*[\\/]{{1,2}}\s*{tag}\s*>", rest, re.I)
    if end:
        return rest[: end.start()]
    if stop:
        nxt = re.search(rf"<\s*{stop}\s*>", rest, re.I)
        if nxt:
            return rest[: nxt.start()]
    return rest


_NUMBERED = re.compile(r"^\s*(?:Q|A|Question|Answer)?\s*(\d+)\s*[.):\-]\s*(.*)$", re.I)


def _numbered_items(block: str) -> list[str]:
    items: list[str] = []
    numbered = False
    for line in block.splitlines():
        if not line.strip():
            continue
        m = _NUMBERED.match(line)
        if m:
            numbered = True
            items.append(m.group(2).strip())
        elif numbered and items:
            items[-1] = f"{items[-1]} {line.strip()}"
        else:
            items.append(line.strip())
    return [i for i in items if i]


def parse_knowledge(raw: str, **meta) -> list[QAInstance]:
    if not raw or not raw.strip():
        raise QAParseError("empty response", raw or "")
    questions = _numbered_items(_section(raw, "Questions", "Answers"))
    answers = _numbered_items(_section(raw, "Answers", None))
    if len(questions) != len(answers):
        raise QAParseError(f"{len(questions)} questions but {len(answers)} answers", raw)
    if not 1 <= len(questions) <= MAX_KNOWLEDGE_PAIRS:
        raise QAParseError(f"expected 1-{MAX_KNOWLEDGE_PAIRS} question-answer pairs, got {len(questions)}", raw)
    batch = _batch(meta, QAType.KNOWLEDGE)
    return [
        QAInstance(qa_type=QAType.KNOWLEDGE, question=q, answer=a, index=i, batch_id=batch, **_meta(meta))
        for i, (q, a) in enumerate(zip(questions, answers))
    ]


def parse_attribute(raw: str, **meta) -> QAInstance:
    text = (raw or "").strip()
    if not text:
        raise QAParseError("empty response", raw or "")
    missing = [lab for lab in ATTRIBUTE_LABELS if not re.search(rf"^\s*\**{lab}\**\s*:", text, re.M)]
    if missing:
        raise QAParseError("missing field labels: " + ", ".join(missing), raw)
    return QAInstance(
        qa_type=QAType.ATTRIBUTE,
        question=ATTRIBUTE_QUESTION,
        answer=text,
        batch_id=_batch(meta, QAType.ATTRIBUTE),
        **_meta(meta),
    )


def parse_descriptive(raw: str, **meta) -> QAInstance:
    text = (raw or "").strip()
    if not text:
        raise QAParseError("empty response", raw or "")
    if not (text.startswith(DESCRIPTIVE_OPENERS) or _OPENER.match(text)):
        raise QAParseError("description does not open with a report sentence pattern", raw)
    return QAInstance(
        qa_type=QAType.DESCRIPTIVE,
        question=DESCRIPTIVE_QUESTION,
        answer=text,
        batch_id=_batch(meta, QAType.DESCRIPTIVE),
        **_meta(meta),
    )


def _meta(meta: dict) -> dict:
    return {
        "accession": meta.get("accession", ""),
        "source_model": meta.get("source_model", ""),
        "sequence": meta.get("sequence", ""),
    }


def _batch(meta: dict, qa_type: QAType) -> str:
    return f"{meta.get('accession', '')}/{qa_type.code}"


def parse_response(qa_type: QAType, raw: str, **meta) -> list[QAInstance]:
    if qa_type is QAType.KNOWLEDGE:
        return parse_knowledge(raw, **meta)
    parser = {
        QAType.ATTRIBUTE: parse_attribute,
        QAType.DESCRIPTIVE: parse_descriptive,
        QAType.TRUEFALSE: parse_truefalse,
    }[qa_type]
    return [parser(raw, **meta)]


def render_response(instances: Sequence[QAInstance]) -> str:
    """Inverse of ``parse_response`` for one generation batch."""
    first = instances[0]
    if first.qa_type is QAType.KNOWLEDGE:
        qs = "\n".join(f"{i + 1}. {x.question}" for i, x in enumerate(instances))
        ans = "\n".join(f"{i + 1}. {x.answer}" for i, x in enumerate(instances))
        return f"<Questions>\n{qs}\n</Questions>\n<Answers>\n{ans}\n</Answers>"
    if first.qa_type is QAType.TRUEFALSE:
        return f"Stem: {first.question}; Answer: {first.answer}; Explanation: {first.explanation}"
    return first.answer


# Generation loop ----------------------------------------------------------


@dataclass
class Reject:
    accession: str
    qa_type: QAType
    attempts: int
    last_error: str
    raw: str

    def to_dict(self) -> dict:
        return {
            "accession": self.accession,
            "qa_type": self.qa_type.value,
            "attempts": self.attempts,
            "last_error": self.last_error,
            "raw": self.raw,
        }


@dataclass
class GenerationResult:
    instances: list[QAInstance] = field(default_factory=list)
    rejects: list[Reject] = field(default_factory=list)
    retries_used: int = 0

    def type_counts(self) -> dict[str, int]:
        counts = {t.value: 0 for t in TYPE_ORDER}
        for x in self.instances:
            counts[x.qa_type.value] += 1
        return counts


class GenerationInterrupted(RuntimeError):
    """The gateway gave up mid-run; ``partial`` holds everything finished."""

    def __init__(self, partial: GenerationResult, cause: Exception):
        super().__init__(f"generation interrupted: {cause}")
        self.partial = partial
        self.cause = cause


@dataclass
class _TaskOutcome:
    accession: str
    qa_type: QAType
    instances: list[QAInstance]
    reject: Reject | None
    retries: int

    def to_checkpoint(self) -> dict:
        return {
            "accession": self.accession,
            "qa_type": self.qa_type.value,
            "instances": [x.to_dict() for x in self.instances],
            "reject": self.reject.to_dict() if self.reject else None,
            "retries": self.retries,
        }

    @classmethod
    def from_checkpoint(cls, d: dict) -> "_TaskOutcome":
        rej = d.get("reject")
        return cls(
            accession=d["accession"],
            qa_type=QAType.parse(d["qa_type"]),
            instances=[QAInstance.from_dict(x) for x in d["instances"]],
            reject=Reject(
                rej["accession"], QAType.parse(rej["qa_type"]), rej["attempts"], rej["last_error"], rej["raw"]
            )
            if rej
            else None,
            retries=d.get("retries", 0),
        )


def _feedback(error: str) -> str:
    return (
        f"Your previous response could not be used: {error}. "
        "Please answer again, following the required output format exactly."
    )


def _generate_one(p: ProteinRecord, qa_type: QAType, gateway, retries: int, prompts_dir) -> _TaskOutcome:
    messages = [{"role": "user", "content": render_prompt(p, qa_type, prompts_dir)}]
    meta = {"accession": p.accession, "sequence": p.sequence, "source_model": gateway.model}
    raw = ""
    error = ""
    for attempt in range(retries + 1):
        raw = gateway.complete(messages).text
        try:
            instances = parse_response(qa_type, raw, **meta)
        except QAParseError as exc:
            error = str(exc)
        else:
            bad = [f for x in instances for f in x.flags]
            if not bad:
                return _TaskOutcome(p.accession, qa_type, instances, None, attempt)
            error = "invalid instance: " + ", ".join(sorted(set(bad)))
        log.debug("%s %s attempt %d failed: %s", p.accession, qa_type.value, attempt + 1, error)
        messages = messages + [
            {"role": "assistant", "content": raw},
            {"role": "user", "content": _feedback(error)},
        ]
    reject = Reject(p.accession, qa_type, retries + 1, error, raw)
    return _TaskOutcome(p.accession, qa_type, [], reject, retries)


def generate_corpus(
    proteins: Iterable[ProteinRecord],
    types: Iterable[QAType],
    gateway,
    retries: int = 2,
    checkpoint: str | Path | None = None,
    max_inflight: int | None = None,
    prompts_dir: str | None = None,
) -> GenerationResult:
    """Render, call and parse every protein x QA type.

    Finished tasks are appended to ``checkpoint`` (if given) and skipped
    when the same checkpoint is passed again, so an interrupted run can be
    resumed. Output order is (accession, QA type) regardless of completion
    order.
    """
    types = sorted(set(types), key=TYPE_ORDER.index)
    proteins = sorted(proteins, key=lambda p: p.accession)
    done: dict[tuple[str, QAType], _TaskOutcome] = {}
    if checkpoint and Path(checkpoint).exists():
        for d in iter_jsonl(checkpoint):
            o = _TaskOutcome.from_checkpoint(d)
            done[(o.accession, o.qa_type)] = o
        log.info("resuming: %d tasks already in %s", len(done), checkpoint)
    todo = [(p, t) for p in proteins for t in types if (p.accession, t) not in done]
    workers = max_inflight or getattr(gateway, "max_inflight", 1) or 1

    failure: Exception | None = None
    ck = open(checkpoint, "a", encoding="utf-8") if checkpoint else None
    try:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [(p, t, pool.submit(_generate_one, p, t, gateway, retries, prompts_dir)) for p, t in todo]
            for p, t, fut in futures:
                try:
                    outcome = fut.result()
                except GatewayError as exc:
                    failure = failure or exc
                    continue
                done[(p.accession, t)] = outcome
                if ck:
                    ck.write(dumps(outcome.to_checkpoint()) + "\n")
                    ck.flush()
    finally:
        if ck:
            ck.close()

    result = GenerationResult()
    for p in proteins:
        for t in types:
            o = done.get((p.accession, t))
            if o is None:
                continue
            result.instances.extend(o.instances)
            result.retries_used += o.retries
            if o.reject:
                result.rejects.append(o.reject)
    if failure is not None:
        raise GenerationInterrupted(result, failure)
    return result


def parse_types(spec: str) -> list[QAType]:
    return [QAType.parse(s) for s in spec.split(",") if s.strip()]


def corpus_rows(instances: Iterable[QAInstance]) -> Iterable[dict]:
    return (x.to_dict() for x in instances)


def reviewable_sample(instances: Sequence[QAInstance], n: int, seed: int = 0) -> list[QAInstance]:
    """Deterministic random sample for manual quality review."""
    rng = random.Random(seed)
    pool = list(instances)
    return sorted(rng.sample(pool, min(n, len(pool))), key=lambda x: x.instance_id)

