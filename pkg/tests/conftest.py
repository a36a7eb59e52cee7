from __future__ import annotations

import io
from importlib import resources
from pathlib import Path

import pytest

from psl.go_graph import parse_obo
from psl.qa_forge import QAInstance, QAType
from psl.records import Annotation, ProteinRecord, load_proteins

FIXTURES = Path(str(resources.files("psl") / "fixtures"))


def obo(text: str):
    return parse_obo(io.StringIO(text))


def term(tid: str, *parents: str, ns: str = "biological_process", name: str | None = None) -> str:
    lines = ["[Term]", f"id: {tid}", f"name: {name or tid}", f"namespace: {ns}"]
    lines += [f"is_a: {p}" for p in parents]
    return "\n".join(lines) + "\n\n"


def protein(acc: str, seq: str = "MKV", go=(), kingdom: str = "Eukaryota", **ann) -> ProteinRecord:
    return ProteinRecord(acc, seq, frozenset(go), kingdom, Annotation(**ann))


def qa(acc: str, seq: str, question: str, answer: str, qa_type=QAType.KNOWLEDGE, index: int = 0) -> QAInstance:
    return QAInstance(
        accession=acc, qa_type=qa_type, question=question, answer=answer, sequence=seq, index=index
    )


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def toy_dag():
    with open(FIXTURES / "toy_go.obo", encoding="utf-8") as fh:
        return parse_obo(fh)


@pytest.fixture(scope="session")
def toy_proteins():
    return load_proteins(FIXTURES / "toy_proteins.jsonl")


def pytest_terminal_summary(terminalreporter):
    import sys

    acceptance = sys.modules.get("test_acceptance")
    results = getattr(acceptance, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok in results.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}")
