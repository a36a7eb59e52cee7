"""Query-adaptive exemplar selection and prompt assembly.

Candidates come from two rankings: sequence homology against the query
protein (k-mer shortlist, alignment rerank) and BM25 similarity between the
query question and stored QA text. The rankings are merged with reciprocal
rank fusion and the winners are laid out as few-shot blocks ahead of the
query.
"""

from __future__ import annotations

import enum
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .corpus_dedup import pairwise_identity
from .llm_gateway import GatewayError
from .qa_forge import QAInstance
from .text import estimate_tokens, tokenize

log = logging.getLogger(__name__)

PREAMBLE = "You will learn to interpret protein sequences from the following examples."
ELLIPSIS = "…"


class Mode(str, enum.Enum):
    DUAL = "Dual"
    SEQ_ONLY = "SeqOnly"
    QA_ONLY = "QAOnly"
    ZERO_SHOT = "ZeroShot"

    @classmethod
    def parse(cls, text: str) -> "Mode":
        aliases = {"dual": cls.DUAL, "seq": cls.SEQ_ONLY, "qa": cls.QA_ONLY, "zero": cls.ZERO_SHOT, "none": cls.ZERO_SHOT}
        t = text.strip()
        if t.lower() in aliases:
            return aliases[t.lower()]
        for m in cls:
            if t.lower() == m.value.lower():
                return m
        raise ValueError(f"unknown retrieval mode {text!r}")


@dataclass(frozen=True)
class RetrievalConfig:
    mode: Mode = Mode.DUAL
    k: int = 4
    candidate_m: int = 50
    rrf_k: int = 60
    token_budget: int = 8192
    seq_kmer_k: int = 3
    ascending: bool = True
    exclude_identity: float | None = None
    token_multiplier: float = 1.0
    truncate_keep: int = 100

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.k > self.candidate_m:
            raise ValueError("k must not exceed candidate_m")
        if self.token_budget <= 0:
            raise ValueError("token_budget must be > 0")
        if self.seq_kmer_k < 1:
            raise ValueError("seq_kmer_k must be >= 1")


# Indices ------------------------------------------------------------------


class KmerIndex:
    """Inverted index from amino-acid k-mers to accessions."""

    def __init__(self, k: int = 3):
        self.k = k
        self.postings: dict[str, set[str]] = defaultdict(set)
        self.sequences: dict[str, str] = {}

    def kmers(self, seq: str) -> set[str]:
        return {seq[i : i + self.k] for i in range(len(seq) - self.k + 1)}

    def add(self, accession: str, sequence: str) -> None:
        if accession in self.sequences:
            return
        self.sequences[accession] = sequence
        for km in self.kmers(sequence):
            self.postings[km].add(accession)


class BM25Index:
    """Okapi BM25 over tokenized documents keyed by id."""

    def __init__(self, k1: float = 1.2, b: float = 0.75):
        self.k1 = k1
        self.b = b
        self.tf: dict[str, Counter] = {}
        self.length: dict[str, int] = {}
        self.postings: dict[str, set[str]] = defaultdict(set)

    def add(self, doc_id: str, text: str) -> None:
        toks = tokenize(text)
        self.tf[doc_id] = Counter(toks)
        self.length[doc_id] = len(toks)
        for t in set(toks):
            self.postings[t].add(doc_id)

    @property
    def n_docs(self) -> int:
        return len(self.tf)

    @property
    def avgdl(self) -> float:
        return sum(self.length.values()) / self.n_docs if self.n_docs else 0.0

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        return math.log((self.n_docs - df + 0.5) / (df + 0.5) + 1)

    def scores(self, query: str) -> dict[str, float]:
        avgdl = self.avgdl or 1.0
        parts: dict[str, list[float]] = defaultdict(list)
        for term in sorted(set(tokenize(query))):
            docs = self.postings.get(term)
            if not docs:
                continue
            idf = self.idf(term)
            for d in docs:
                f = self.tf[d][term]
                norm = self.k1 * (1 - self.b + self.b * self.length[d] / avgdl)
                parts[d].append(idf * f * (self.k1 + 1) / (f + norm))
        # fsum keeps scores independent of summation order across runs
        return {d: math.fsum(v) for d, v in parts.items()}


@dataclass
class Indices:
    instances: dict[str, QAInstance]
    seq_index: KmerIndex
    text_index: BM25Index
    by_accession: dict[str, list[str]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kmer_k": self.seq_index.k,
            "bm25": {"k1": self.text_index.k1, "b": self.text_index.b},
            "instances": [x.to_dict() for _, x in sorted(self.instances.items())],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Indices":
        corpus = [QAInstance.from_dict(x) for x in d["instances"]]
        return build_indices(corpus, kmer_k=d.get("kmer_k", 3), **d.get("bm25", {}))


def build_indices(corpus: Iterable[QAInstance], kmer_k: int = 3, k1: float = 1.2, b: float = 0.75) -> Indices:
    corpus = list(corpus)
    if not corpus:
        raise ValueError("cannot index an empty corpus")
    seq_index = KmerIndex(kmer_k)
    text_index = BM25Index(k1, b)
    instances: dict[str, QAInstance] = {}
    by_acc: dict[str, list[str]] = defaultdict(list)
    for x in sorted(corpus, key=lambda x: x.instance_id):
        if x.instance_id in instances:
            raise ValueError(f"duplicate instance id {x.instance_id}")
        instances[x.instance_id] = x
        by_acc[x.accession].append(x.instance_id)
        if x.sequence:
            seq_index.add(x.accession, x.sequence)
        text_index.add(x.instance_id, f"{x.question} {x.answer_text()}")
    return Indices(instances, seq_index, text_index, dict(by_acc))


# Candidate generation -----------------------------------------------------


def seq_candidates(
    query_seq: str,
    index: KmerIndex,
    m: int,
    exclude: Iterable[str] = (),
    min_identity: float | None = None,
    max_identity: float | None = None,
) -> list[tuple[str, float]]:
    """Accessions ranked by identity to the query, best first.

    Stage 1 shortlists ``4m`` accessions by the share of query k-mers they
    contain; stage 2 reranks the shortlist by alignment identity.
    """
    qk = index.kmers(query_seq)
    if not qk:
        log.warning("query sequence shorter than k-mer size %d; no sequence candidates", index.k)
        return []
    skip = set(exclude)
    shared: Counter = Counter()
    for km in qk:
        for acc in index.postings.get(km, ()):
            if acc not in skip:
                shared[acc] += 1
    containment = {acc: n / len(qk) for acc, n in shared.items()}
    shortlist = sorted(containment, key=lambda a: (-containment[a], a))[: 4 * m]
    scored = []
    for acc in shortlist:
        ident = pairwise_identity(query_seq, index.sequences[acc])
        if max_identity is not None and ident >= max_identity:
            continue
        if min_identity is not None and ident < min_identity:
            continue
        scored.append((acc, ident, containment[acc]))
    scored.sort(key=lambda t: (-t[1], -t[2], t[0]))
    return [(acc, ident) for acc, ident, _ in scored[:m]]


def text_candidates(
    query_question: str, index: BM25Index, m: int, exclude: Iterable[str] = ()
) -> list[tuple[str, float]]:
    """Instance ids ranked by BM25 score, best first; zero scores dropped."""
    if not tokenize(query_question):
        log.warning("query question has no tokens; no text candidates")
        return []
    skip = set(exclude)
    scores = {d: s for d, s in index.scores(query_question).items() if s > 0 and d not in skip}
    ranked = sorted(scores, key=lambda d: (-scores[d], d))[:m]
    return [(d, scores[d]) for d in ranked]


def expand_accessions(
    seq_list: Sequence[tuple[str, float]], indices: Indices, text_scores: Mapping[str, float]
) -> list[tuple[str, float]]:
    """Turn an accession ranking into an instance ranking.

    An accession's instances stay together at its rank, ordered by their
    own BM25 score against the query, then by id.
    """
    out = []
    for acc, score in seq_list:
        ids = sorted(indices.by_accession.get(acc, ()), key=lambda i: (-text_scores.get(i, 0.0), i))
        out.extend((i, score) for i in ids)
    return out


# Fusion -------------------------------------------------------------------


@dataclass(frozen=True)
class Scored:
    item_id: str
    seq_score: float | None
    text_score: float | None
    fused_score: float


def rrf_scores(lists: Sequence[Sequence[str]], rrf_k: int = 60) -> dict[str, float]:
    scores: dict[str, float] = defaultdict(float)
    for ranked in lists:
        for rank, item in enumerate(ranked, 1):
            scores[item] += 1.0 / (rrf_k + rank)
    return dict(scores)


def fuse(
    seq_list: Sequence[tuple[str, float]],
    text_list: Sequence[tuple[str, float]],
    mode: Mode,
    rrf_k: int = 60,
    k: int = 4,
) -> list[Scored]:
    """Merge candidate rankings; most relevant first, at most ``k`` items."""
    seq_list = _dedupe(seq_list)
    text_list = _dedupe(text_list)
    if mode is Mode.ZERO_SHOT:
        return []
    if mode is Mode.SEQ_ONLY:
        lists = [seq_list]
    elif mode is Mode.QA_ONLY:
        lists = [text_list]
    else:
        lists = [seq_list, text_list]
    fused = rrf_scores([[i for i, _ in lst] for lst in lists], rrf_k)
    if not fused:
        log.warning("no exemplar candidates; answering zero-shot")
        return []
    seq_s = dict(seq_list)
    text_s = dict(text_list)
    ranked = sorted(fused, key=lambda i: (-fused[i], i))[:k]
    return [Scored(i, seq_s.get(i), text_s.get(i), fused[i]) for i in ranked]


def _dedupe(ranked: Sequence[tuple[str, float]]) -> list[tuple[str, float]]:
    seen = set()
    out = []
    for item, score in ranked:
        if item not in seen:
            seen.add(item)
            out.append((item, score))
    return out


# Assembly -----------------------------------------------------------------


@dataclass
class Exemplar:
    instance: QAInstance
    seq_score: float | None
    text_score: float | None
    fused_score: float
    shown_sequence: str = ""

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance.instance_id,
            "accession": self.instance.accession,
            "qa_type": self.instance.qa_type.value,
            "seq_score": self.seq_score,
            "text_score": self.text_score,
            "fused_score": self.fused_score,
            "truncated": self.shown_sequence != self.instance.sequence,
        }


@dataclass
class ContextBundle:
    query_sequence: str
    query_question: str
    exemplars: list[Exemplar]
    prompt: str
    mode: Mode = Mode.DUAL
    k: int = 0
    prompt_tokens: int = 0
    dropped: list[str] = field(default_factory=list)
    query_accession: str | None = None

    def to_dict(self) -> dict:
        return {
            "query_accession": self.query_accession,
            "query_sequence": self.query_sequence,
            "query_question": self.query_question,
            "mode": self.mode.value,
            "k": self.k,
            "exemplars": [e.to_dict() for e in self.exemplars],
            "dropped": list(self.dropped),
            "prompt_tokens": self.prompt_tokens,
            "prompt": self.prompt,
        }


class ContextBudgetError(ValueError):
    pass


def center_truncate(seq: str, keep: int) -> str:
    if len(seq) <= 2 * keep + 1:
        return seq
    return f"{seq[:keep]}{ELLIPSIS}{seq[-keep:]}"


def _block(seq: str, question: str, answer: str | None) -> str:
    tail = f"A: {answer}" if answer is not None else "A:"
    return f"Protein sequence: {seq}\nQ: {question}\n{tail}"


def render_prompt(exemplars: Sequence[Exemplar], query_seq: str, query_question: str, ascending: bool = True) -> str:
    """``exemplars`` arrive most relevant first; ascending puts the best next to the query."""
    ordered = list(reversed(exemplars)) if ascending else list(exemplars)
    parts = [PREAMBLE]
    parts += [_block(e.shown_sequence, e.instance.question, e.instance.answer_text()) for e in ordered]
    parts.append(_block(query_seq, query_question, None))
    return "\n\n".join(parts)


def assemble_context(
    ranked: Sequence[Scored],
    indices: Indices,
    query_seq: str,
    query_question: str,
    config: RetrievalConfig,
    query_accession: str | None = None,
) -> ContextBundle:
    """Lay out exemplars and the query, fitting the prompt into the token budget.

    Over budget, exemplar sequences are first center-truncated, then the
    least relevant exemplars are dropped one at a time.
    """

    def count(text: str) -> int:
        return estimate_tokens(text, config.token_multiplier)

    if count(render_prompt([], query_seq, query_question)) > config.token_budget:
        raise ContextBudgetError("query alone exceeds the token budget")
    exemplars = [
        Exemplar(indices.instances[s.item_id], s.seq_score, s.text_score, s.fused_score)
        for s in ranked
        if indices.instances[s.item_id].accession != query_accession
    ]
    for e in exemplars:
        e.shown_sequence = e.instance.sequence
    prompt = render_prompt(exemplars, query_seq, query_question, config.ascending)
    dropped: list[str] = []
    if count(prompt) > config.token_budget:
        for e in exemplars:
            e.shown_sequence = center_truncate(e.instance.sequence, config.truncate_keep)
        prompt = render_prompt(exemplars, query_seq, query_question, config.ascending)
        while exemplars and count(prompt) > config.token_budget:
            dropped.append(exemplars.pop().instance.instance_id)
            prompt = render_prompt(exemplars, query_seq, query_question, config.ascending)
    ordered = list(reversed(exemplars)) if config.ascending else exemplars
    return ContextBundle(
        query_sequence=query_seq,
        query_question=query_question,
        exemplars=ordered,
        prompt=prompt,
        mode=config.mode,
        k=config.k,
        prompt_tokens=count(prompt),
        dropped=dropped,
        query_accession=query_accession,
    )


# Pipeline -----------------------------------------------------------------


@dataclass
class Query:
    sequence: str
    question: str
    accession: str | None = None


@dataclass
class Answer:
    text: str
    bundle: ContextBundle


class AnswerError(GatewayError):
    def __init__(self, cause: GatewayError, bundle: ContextBundle):
        super().__init__(str(cause), status=cause.status, retryable=cause.retryable)
        self.bundle = bundle


def select_exemplars(query: Query, indices: Indices, config: RetrievalConfig) -> list[Scored]:
    exclude_acc = {query.accession} if query.accession else set()
    exclude_ids = {i for a in exclude_acc for i in indices.by_accession.get(a, ())}
    if config.mode is Mode.ZERO_SHOT:
        return []
    text_list: list[tuple[str, float]] = []
    if config.mode in (Mode.DUAL, Mode.QA_ONLY):
        text_list = text_candidates(query.question, indices.text_index, config.candidate_m, exclude_ids)
    seq_list: list[tuple[str, float]] = []
    if config.mode in (Mode.DUAL, Mode.SEQ_ONLY):
        accs = seq_candidates(
            query.sequence,
            indices.seq_index,
            config.candidate_m,
            exclude=exclude_acc,
            max_identity=config.exclude_identity,
        )
        text_all = indices.text_index.scores(query.question) if accs else {}
        seq_list = expand_accessions(accs, indices, text_all)
    return fuse(seq_list, text_list, config.mode, config.rrf_k, config.k)


def build_context(query: Query, indices: Indices, config: RetrievalConfig) -> ContextBundle:
    ranked = select_exemplars(query, indices, config)
    return assemble_context(ranked, indices, query.sequence, query.question, config, query.accession)


def answer(query: Query, indices: Indices, config: RetrievalConfig, gateway) -> Answer:
    bundle = build_context(query, indices, config)
    try:
        completion = gateway.complete([{"role": "user", "content": bundle.prompt}])
    except GatewayError as exc:
        raise AnswerError(exc, bundle) from exc
    return Answer(completion.text.strip(), bundle)
