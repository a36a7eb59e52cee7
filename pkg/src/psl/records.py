"""Protein records, their JSONL schema and the UniProt TSV importer."""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

from ._io import DataError, iter_jsonl, write_jsonl

AMINO_ACIDS = frozenset("ACDEFGHIKLMNPQRSTVWY") | frozenset("BZXUO")
SUPERKINGDOMS = ("Eukaryota", "Bacteria", "Archaea", "Viruses", "Unknown")

_GO_ID = re.compile(r"GO:\d{7}")


@dataclass(frozen=True)
class Annotation:
    name: str = ""
    function: str = ""
    location: str = ""
    family: str = ""
    similarity: str = ""
    motif: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "function": self.function,
            "location": self.location,
            "family": self.family,
            "similarity": self.similarity,
            "motif": self.motif,
        }

    @classmethod
    def from_dict(cls, d: dict | None) -> "Annotation":
        d = d or {}
        return cls(**{k: str(d.get(k) or "") for k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class ProteinRecord:
    accession: str
    sequence: str
    go_terms: frozenset[str] = frozenset()
    superkingdom: str = "Unknown"
    annotation: Annotation = field(default_factory=Annotation)

    def __post_init__(self):
        if not self.accession:
            raise DataError("protein record without accession")
        if not self.sequence:
            raise DataError(f"{self.accession}: empty sequence")
        bad = set(self.sequence) - AMINO_ACIDS
        if bad:
            raise DataError(f"{self.accession}: invalid residues {''.join(sorted(bad))!r}")
        if self.superkingdom not in SUPERKINGDOMS:
            raise DataError(f"{self.accession}: unknown superkingdom {self.superkingdom!r}")
        if not isinstance(self.go_terms, frozenset):
            object.__setattr__(self, "go_terms", frozenset(self.go_terms))

    def to_dict(self) -> dict:
        return {
            "accession": self.accession,
            "sequence": self.sequence,
            "go_terms": sorted(self.go_terms),
            "superkingdom": self.superkingdom,
            "annotation": self.annotation.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProteinRecord":
        try:
            return cls(
                accession=str(d["accession"]),
                sequence=str(d["sequence"]).upper(),
                go_terms=frozenset(d.get("go_terms") or ()),
                superkingdom=d.get("superkingdom") or "Unknown",
                annotation=Annotation.from_dict(d.get("annotation")),
            )
        except KeyError as exc:
            raise DataError(f"protein record missing field {exc.args[0]!r}") from None


def load_proteins(path: str | Path) -> list[ProteinRecord]:
    proteins = [ProteinRecord.from_dict(d) for d in iter_jsonl(path)]
    seen: set[str] = set()
    for p in proteins:
        if p.accession in seen:
            raise DataError(f"{path}: duplicate accession {p.accession}")
        seen.add(p.accession)
    return proteins


def write_proteins(path: str | Path, proteins: Iterable[ProteinRecord], header: dict | None = None) -> int:
    rows = (p.to_dict() for p in sorted(proteins, key=lambda p: p.accession))
    return write_jsonl(path, rows, header)


# UniProt TSV export -------------------------------------------------------

_UNIPROT_COLUMNS = {
    "accession": ("Entry", "Accession"),
    "sequence": ("Sequence",),
    "go": ("Gene Ontology IDs", "Gene ontology IDs", "GO IDs"),
    "lineage": ("Taxonomic lineage", "Taxonomic lineage (SUPERKINGDOM)", "Taxonomic lineage (all)", "Lineage"),
    "name": ("Protein names",),
    "function": ("Function [CC]",),
    "location": ("Subcellular location [CC]",),
    "family": ("Protein families",),
    "similarity": ("Sequence similarities",),
    "motif": ("Motif",),
}

# UniProt prefixes comment fields with their topic and appends evidence tags.
_CC_PREFIX = re.compile(r"^(FUNCTION|SUBCELLULAR LOCATION|SIMILARITY|MOTIF):\s*", re.I)
_EVIDENCE = re.compile(r"\s*\{ECO:[^}]*\}")


def _clean_cc(text: str) -> str:
    text = _EVIDENCE.sub("", text or "")
    text = _CC_PREFIX.sub("", text.strip())
    return " ".join(text.split())


def superkingdom_from_lineage(lineage: str) -> str:
    for name in SUPERKINGDOMS[:-1]:
        if re.search(rf"\b{name}\b", lineage or ""):
            return name
    return "Unknown"


def import_uniprot_tsv(stream: TextIO) -> list[ProteinRecord]:
    """Read a UniProtKB TSV export (any column order; unknown columns ignored)."""
    reader = csv.DictReader(stream, delimiter="\t")
    header = reader.fieldnames or []
    cols: dict[str, str | None] = {}
    for key, names in _UNIPROT_COLUMNS.items():
        cols[key] = next((n for n in names if n in header), None)
    for required in ("accession", "sequence"):
        if cols[required] is None:
            raise DataError(f"UniProt TSV lacks a {required} column (have: {', '.join(header)})")

    def get(row: dict, key: str) -> str:
        col = cols[key]
        return (row.get(col) or "").strip() if col else ""

    proteins = []
    seen = set()
    for lineno, row in enumerate(reader, 2):
        acc = get(row, "accession")
        if not acc:
            raise DataError(f"line {lineno}: empty accession")
        if acc in seen:
            raise DataError(f"line {lineno}: duplicate accession {acc}")
        seen.add(acc)
        proteins.append(
            ProteinRecord(
                accession=acc,
                sequence=get(row, "sequence").upper(),
                go_terms=frozenset(_GO_ID.findall(get(row, "go"))),
                superkingdom=superkingdom_from_lineage(get(row, "lineage")),
                annotation=Annotation(
                    name=get(row, "name"),
                    function=_clean_cc(get(row, "function")),
                    location=_clean_cc(get(row, "location")),
                    family=get(row, "family"),
                    similarity=_clean_cc(get(row, "similarity")),
                    motif=_clean_cc(get(row, "motif")),
                ),
            )
        )
    return proteins
