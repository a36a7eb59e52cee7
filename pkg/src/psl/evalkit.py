"""Evaluation: ROUGE-L, Krippendorff's alpha, win/lose tallies, k sweeps,
retrieval-mode ablations and corpus statistics."""

from __future__ import annotations

import csv
import io
import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

from ._io import DataError, dumps, iter_jsonl
from .context_engine import Indices, Mode, Query, RetrievalConfig, answer
from .qa_forge import QAInstance, TYPE_ORDER
from .records import ProteinRecord
from .text import tokenize

# k that worked best per benchmark family: description-style tasks want many
# exemplars, open QA few.
DEFAULT_K = {
    "protdescribe": 11,
    "protein2text-qa": 4,
    "mol-instructions": 4,
}
DESCRIPTION_K = 11
QA_K = 4
SWEEP_KS = tuple(range(1, 13))

RATING_SCALE = {
    0: "Garbled",
    1: "Inaccurate",
    2: "Partially informative",
    3: "Moderately accurate",
    4: "Mostly accurate",
    5: "Completely correct",
}

# Corpus composition reported for the full-scale build, for display next
# to desk-scale statistics.
REFERENCE_SCALE = {"Attribute": 11693, "TrueFalse": 32444, "sequence_token_share": 0.70, "total": 79926}


def default_k(task: str) -> int:
    t = task.lower()
    if t in DEFAULT_K:
        return DEFAULT_K[t]
    if t.startswith("mol-instructions"):
        return DEFAULT_K["mol-instructions"]
    if "describe" in t or "desc" in t:
        return DESCRIPTION_K
    return QA_K


# ROUGE-L ------------------------------------------------------------------


class RougeScore(NamedTuple):
    precision: float
    recall: float
    f1: float


def lcs_tokens(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def f_measure(lcs: int, n_cand: int, n_ref: int) -> RougeScore:
    if n_cand == 0 or n_ref == 0:
        return RougeScore(0.0, 0.0, 0.0)
    # 2PR/(P+R) reduces to 2*lcs/(m+n); the closed form avoids rounding drift.
    return RougeScore(lcs / n_cand, lcs / n_ref, 2 * lcs / (n_cand + n_ref))


def rouge_l(candidate: str | Sequence[str], reference: str | Sequence[str]) -> RougeScore:
    """Sentence-level ROUGE-L over lowercase alphanumeric tokens."""
    c = tokenize(candidate) if isinstance(candidate, str) else list(candidate)
    r = tokenize(reference) if isinstance(reference, str) else list(reference)
    return f_measure(lcs_tokens(c, r), len(c), len(r))


# Krippendorff's alpha -----------------------------------------------------


class AlphaResult(NamedTuple):
    alpha: float
    degenerate: bool


@dataclass
class RatingSet:
    """items x raters ordinal scores (0-5); None marks a missing rating."""

    items: list[str]
    raters: list[str]
    scores: list[list[int | None]]

    def __post_init__(self):
        for row in self.scores:
            if len(row) != len(self.raters):
                raise ValueError("ratings matrix row length differs from rater count")
            for v in row:
                if v is not None and (not isinstance(v, int) or not 0 <= v <= 5):
                    raise ValueError(f"rating {v!r} outside the 0-5 scale")

    @classmethod
    def from_matrix(cls, matrix: Sequence[Sequence[int | None]]) -> "RatingSet":
        n_raters = max((len(r) for r in matrix), default=0)
        return cls(
            items=[str(i) for i in range(len(matrix))],
            raters=[str(j) for j in range(n_raters)],
            scores=[list(r) + [None] * (n_raters - len(r)) for r in matrix],
        )


def _ordinal_delta(counts: Mapping[int, float]) -> dict[tuple[int, int], float]:
    cats = sorted(counts)
    delta = {}
    for i, c in enumerate(cats):
        for k in cats[i:]:
            between = sum(counts[g] for g in cats if c <= g <= k)
            d = (between - (counts[c] + counts[k]) / 2) ** 2
            delta[(c, k)] = delta[(k, c)] = d
    return delta


def krippendorff_alpha(ratings: RatingSet | Sequence[Sequence[int | None]], metric: str = "ordinal") -> AlphaResult:
    """Krippendorff's alpha from the coincidence matrix (ordinal or interval)."""
    if not isinstance(ratings, RatingSet):
        ratings = RatingSet.from_matrix(ratings)
    units = [[v for v in row if v is not None] for row in ratings.scores]
    units = [u for u in units if len(u) >= 2]
    if len(units) < 2:
        raise ValueError("alpha needs at least 2 items with 2 or more ratings")
    coinc: dict[tuple[int, int], float] = defaultdict(float)
    for u in units:
        w = 1.0 / (len(u) - 1)
        for i, a in enumerate(u):
            for j, b in enumerate(u):
                if i != j:
                    coinc[(a, b)] += w
    n_c: dict[int, float] = defaultdict(float)
    for (a, _), v in coinc.items():
        n_c[a] += v
    n = sum(n_c.values())
    if metric == "ordinal":
        delta = _ordinal_delta(n_c)
    elif metric == "interval":
        delta = {(a, b): float((a - b) ** 2) for a in n_c for b in n_c}
    else:
        raise ValueError(f"unsupported metric {metric!r}")
    observed = sum(v * delta[ab] for ab, v in coinc.items())
    expected = sum(n_c[a] * n_c[b] * delta[(a, b)] for a in n_c for b in n_c) / (n - 1)
    if expected == 0:
        return AlphaResult(1.0, True)
    return AlphaResult(1.0 - observed / expected, False)


# Ratings and win/lose -----------------------------------------------------


@dataclass
class WinLoss:
    win: float
    lose: float
    tie: float
    n: int


def pairwise_winloss(pairs: Iterable[Mapping | tuple]) -> WinLoss:
    """Share of items rated higher / lower / equal with context than without."""
    wins = loses = ties = 0
    for p in pairs:
        if isinstance(p, Mapping):
            w, wo = p["rating_with"], p["rating_without"]
        else:
            _, w, wo = p
        if w > wo:
            wins += 1
        elif w < wo:
            loses += 1
        else:
            ties += 1
    n = wins + loses + ties
    if n == 0:
        raise ValueError("no rating pairs")
    return WinLoss(wins / n, loses / n, ties / n, n)


@dataclass
class RatingRecord:
    item_id: str
    rater_id: str
    condition: str
    score: int


def load_ratings(stream: io.TextIOBase | str | Path) -> list[RatingRecord]:
    """CSV with columns item_id, rater_id, condition, score."""
    if isinstance(stream, (str, Path)):
        with open(stream, newline="", encoding="utf-8") as fh:
            return load_ratings(fh)
    reader = csv.DictReader(stream)
    need = {"item_id", "rater_id", "condition", "score"}
    if not reader.fieldnames or not need <= set(reader.fieldnames):
        raise DataError(f"ratings CSV needs columns {sorted(need)}")
    out = []
    for lineno, row in enumerate(reader, 2):
        try:
            score = int(row["score"])
        except ValueError:
            raise DataError(f"ratings line {lineno}: score {row['score']!r} is not an integer") from None
        if score not in RATING_SCALE:
            raise DataError(f"ratings line {lineno}: score {score} outside 0-5")
        out.append(RatingRecord(row["item_id"], row["rater_id"], row["condition"], score))
    return out


def rating_set(records: Iterable[RatingRecord], condition: str | None = None) -> RatingSet:
    recs = [r for r in records if condition is None or r.condition == condition]
    items = sorted({(r.item_id, r.condition) for r in recs})
    raters = sorted({r.rater_id for r in recs})
    idx_i = {k: i for i, k in enumerate(items)}
    idx_r = {k: j for j, k in enumerate(raters)}
    m: list[list[int | None]] = [[None] * len(raters) for _ in items]
    for r in recs:
        m[idx_i[(r.item_id, r.condition)]][idx_r[r.rater_id]] = r.score
    return RatingSet([f"{i}:{c}" for i, c in items], raters, m)


def winloss_pairs(records: Iterable[RatingRecord], with_cond: str = "with", without_cond: str = "without") -> list[dict]:
    """One pair per item: mean rating with context vs without."""
    by = defaultdict(list)
    for r in records:
        by[(r.item_id, r.condition)].append(r.score)
    items = sorted({i for i, _ in by})
    pairs = []
    for i in items:
        if (i, with_cond) in by and (i, without_cond) in by:
            pairs.append(
                {
                    "item": i,
                    "rating_with": sum(by[(i, with_cond)]) / len(by[(i, with_cond)]),
                    "rating_without": sum(by[(i, without_cond)]) / len(by[(i, without_cond)]),
                }
            )
    return pairs


def human_summary(records: Sequence[RatingRecord]) -> dict:
    out: dict = {"mean_rating": {}}
    for cond in sorted({r.condition for r in records}):
        scores = [r.score for r in records if r.condition == cond]
        out["mean_rating"][cond] = sum(scores) / len(scores)
    a = krippendorff_alpha(rating_set(records))
    out["alpha"] = a.alpha
    out["alpha_degenerate"] = a.degenerate
    pairs = winloss_pairs(records)
    if pairs:
        wl = pairwise_winloss(pairs)
        out.update(win=wl.win, lose=wl.lose, tie=wl.tie, n_pairs=wl.n)
    return out


# Datasets and reports -----------------------------------------------------


@dataclass(frozen=True)
class DatasetItem:
    id: str
    sequence: str
    question: str
    reference: str
    task: str = ""
    accession: str | None = None


def load_dataset(path: str | Path) -> list[DatasetItem]:
    items = []
    for d in iter_jsonl(path):
        try:
            items.append(
                DatasetItem(
                    id=str(d["id"]),
                    sequence=str(d["sequence"]),
                    question=str(d["question"]),
                    reference=str(d["reference"]),
                    task=str(d.get("task", "")),
                    accession=d.get("accession"),
                )
            )
        except KeyError as exc:
            raise DataError(f"{path}: dataset item missing {exc.args[0]!r}") from None
    return sorted(items, key=lambda x: x.id)


@dataclass
class EvalRow:
    dataset: str
    task: str
    model: str
    mode: str
    k: int
    rouge_l_precision: float
    rouge_l_recall: float
    rouge_l_f1: float
    n_items: int


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    audits: list[dict] = field(default_factory=list)
    human: dict | None = None

    COLUMNS = (
        "dataset",
        "task",
        "model",
        "mode",
        "k",
        "rouge_l_precision",
        "rouge_l_recall",
        "rouge_l_f1",
        "n_items",
    )

    def to_tsv(self, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        buf.write("\t".join(self.COLUMNS) + "\n")
        for r in self.rows:
            d = asdict(r)
            buf.write("\t".join(_fmt(d[c]) for c in self.COLUMNS) + "\n")
        return buf.getvalue()

    def to_json(self, header: dict | None = None) -> str:
        doc = {"rows": [asdict(r) for r in self.rows]}
        if header is not None:
            doc["__header__"] = header
        if self.human is not None:
            doc["human"] = self.human
        return dumps(doc) + "\n"


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def score_predictions(items: Sequence[DatasetItem], predictions: Mapping[str, str]) -> RougeScore:
    scores = [rouge_l(predictions.get(x.id, ""), x.reference) for x in items]
    n = len(scores)
    return RougeScore(
        math.fsum(s.precision for s in scores) / n,
        math.fsum(s.recall for s in scores) / n,
        math.fsum(s.f1 for s in scores) / n,
    )


def _run(items: Sequence[DatasetItem], indices: Indices, config: RetrievalConfig, gateway) -> tuple[dict, list[dict]]:
    preds = {}
    audits = []
    for x in items:
        res = answer(Query(x.sequence, x.question, x.accession), indices, config, gateway)
        preds[x.id] = res.text
        audits.append({"item": x.id, "prediction": res.text, "bundle": res.bundle.to_dict()})
    return preds, audits


def _by_task(dataset: Sequence[DatasetItem]) -> dict[str, list[DatasetItem]]:
    groups = defaultdict(list)
    for x in dataset:
        groups[x.task].append(x)
    return {t: sorted(v, key=lambda x: x.id) for t, v in sorted(groups.items())}


def _row(name, task, gateway, mode: Mode, k, items, preds) -> EvalRow:
    s = score_predictions(items, preds)
    return EvalRow(
        dataset=name,
        task=task,
        model=getattr(gateway, "model", ""),
        mode=mode.value,
        k=0 if mode is Mode.ZERO_SHOT else k,
        rouge_l_precision=s.precision,
        rouge_l_recall=s.recall,
        rouge_l_f1=s.f1,
        n_items=len(items),
    )


def k_sweep(
    dataset: Sequence[DatasetItem],
    ks: Iterable[int],
    indices: Indices,
    config: RetrievalConfig,
    gateway,
    name: str = "",
) -> EvalReport:
    """One row per (task, k) with mean ROUGE-L."""
    report = EvalReport()
    for task, items in _by_task(dataset).items():
        for k in ks:
            cfg = replace(config, k=k, candidate_m=max(config.candidate_m, k))
            preds, audits = _run(items, indices, cfg, gateway)
            report.rows.append(_row(name, task, gateway, cfg.mode, k, items, preds))
            report.audits.extend({"k": k, **a} for a in audits)
    return report


def ablate(
    dataset: Sequence[DatasetItem],
    modes: Iterable[Mode],
    indices: Indices,
    config: RetrievalConfig,
    gateway,
    name: str = "",
    k: int | None = None,
) -> EvalReport:
    """One row per (task, mode); k defaults per task unless given."""
    report = EvalReport()
    modes = list(modes)
    for task, items in _by_task(dataset).items():
        kk = k if k is not None else default_k(task)
        for mode in modes:
            cfg = replace(config, mode=mode, k=kk, candidate_m=max(config.candidate_m, kk))
            preds, audits = _run(items, indices, cfg, gateway)
            report.rows.append(_row(name, task, gateway, mode, kk, items, preds))
            report.audits.extend({"mode": mode.value, **a} for a in audits)
    return report


def evaluate(
    dataset: Sequence[DatasetItem],
    indices: Indices,
    config: RetrievalConfig,
    gateway,
    name: str = "",
    k: int | None = None,
) -> EvalReport:
    """Zero-shot vs adaptive-context comparison."""
    return ablate(dataset, [Mode.ZERO_SHOT, config.mode], indices, config, gateway, name=name, k=k)


def evaluate_predictions(dataset: Sequence[DatasetItem], predictions: Mapping[str, str], name="", model="", mode="") -> EvalReport:
    report = EvalReport()
    for task, items in _by_task(dataset).items():
        s = score_predictions(items, predictions)
        report.rows.append(EvalRow(name, task, model, mode, 0, s.precision, s.recall, s.f1, len(items)))
    return report


# Corpus statistics --------------------------------------------------------

LENGTH_BINS = (0, 50, 100, 200, 300, 500, 1000, 2000)


def _bin_label(n: int) -> str:
    for lo, hi in zip(LENGTH_BINS, LENGTH_BINS[1:]):
        if lo <= n < hi:
            return f"{lo}-{hi - 1}"
    return f">={LENGTH_BINS[-1]}"


def corpus_stats(corpus: Sequence[QAInstance], proteins: Sequence[ProteinRecord] = ()) -> dict:
    """Per-type counts, length histogram, species counts and token composition.

    Sequence tokens are residues; text tokens follow the evaluation
    tokenizer over question, answer and explanation.
    """
    if not corpus:
        raise ValueError("empty corpus")
    type_counts = {t.value: 0 for t in TYPE_ORDER}
    seq_tokens = text_tokens = 0
    for x in corpus:
        type_counts[x.qa_type.value] += 1
        seq_tokens += len(x.sequence)
        text_tokens += len(tokenize(" ".join(filter(None, [x.question, x.answer, x.explanation]))))
    proteins = list(proteins)
    if proteins:
        lengths = [len(p.sequence) for p in proteins]
        species = Counter(p.superkingdom for p in proteins)
    else:
        seqs = {x.accession: x.sequence for x in corpus}
        lengths = [len(s) for s in seqs.values()]
        species = Counter()
    hist = Counter(_bin_label(n) for n in lengths)
    order = [_bin_label(lo) for lo in LENGTH_BINS]
    total = seq_tokens + text_tokens
    return {
        "n_instances": len(corpus),
        "n_proteins": len({x.accession for x in corpus}),
        "type_counts": type_counts,
        "length_histogram": {b: hist.get(b, 0) for b in order},
        "species_counts": dict(sorted(species.items())),
        "sequence_tokens": seq_tokens,
        "text_tokens": text_tokens,
        "sequence_token_share": seq_tokens / total if total else 0.0,
        "reference_scale": REFERENCE_SCALE,
    }
