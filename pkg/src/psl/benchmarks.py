"""Importers for public protein QA benchmarks, driven by field mappings.

A mapping names the input format and which fields hold the id, sequence,
question and reference. Presets live in ``benchmarks.json``; any other
layout can be described by a JSON file with the same keys.
"""

from __future__ import annotations

import csv
import json
import re
from importlib import resources
from pathlib import Path
from typing import Any, Iterable

from ._io import DataError, iter_jsonl
from .evalkit import DatasetItem


def presets() -> dict[str, dict]:
    text = resources.files("psl").joinpath("benchmarks.json").read_text(encoding="utf-8")
    return json.loads(text)


def load_mapping(name_or_path: str) -> dict:
    table = presets()
    if name_or_path in table:
        return table[name_or_path]
    path = Path(name_or_path)
    if path.exists():
        return json.loads(path.read_text(encoding="utf-8"))
    raise DataError(f"unknown benchmark mapping {name_or_path!r} (presets: {', '.join(sorted(table))})")


def _get(row: dict, dotted: str) -> Any:
    cur: Any = row
    for part in dotted.split("."):
        if not isinstance(cur, dict) or part not in cur:
            return None
        cur = cur[part]
    return cur


def _rows(path: Path, fmt: str) -> Iterable[dict]:
    if fmt == "jsonl":
        yield from iter_jsonl(path)
    elif fmt == "json":
        data = json.loads(path.read_text(encoding="utf-8"))
        if isinstance(data, dict):
            data = data.get("data") or data.get("items") or []
        yield from data
    elif fmt in ("csv", "tsv"):
        with open(path, newline="", encoding="utf-8") as fh:
            yield from csv.DictReader(fh, delimiter="\t" if fmt == "tsv" else ",")
    else:
        raise DataError(f"unsupported benchmark format {fmt!r}")


def import_benchmark(path: str | Path, mapping: dict) -> list[DatasetItem]:
    path = Path(path)
    pattern = re.compile(mapping["sequence_pattern"]) if mapping.get("sequence_pattern") else None
    items = []
    for n, row in enumerate(_rows(path, mapping.get("format", "jsonl"))):
        seq = str(_get(row, mapping["sequence"]) or "")
        if pattern:
            m = pattern.search(seq)
            seq = m.group(1) if m else ""
        seq = "".join(seq.split()).upper()
        if not seq:
            raise DataError(f"{path}: row {n}: no sequence in field {mapping['sequence']!r}")
        if mapping.get("question"):
            question = str(_get(row, mapping["question"]) or "")
        else:
            question = mapping.get("question_constant", "")
        ref_fields = mapping["reference"]
        if isinstance(ref_fields, str):
            ref_fields = [ref_fields]
        reference = " ".join(str(_get(row, f) or "").strip() for f in ref_fields).strip()
        task = mapping.get("task_constant", "")
        sub = _get(row, mapping["task_field"]) if mapping.get("task_field") else None
        if sub:
            task = f"{task}/{sub}" if task else str(sub)
        item_id = _get(row, mapping["id"]) if mapping.get("id") else None
        items.append(
            DatasetItem(
                id=str(item_id if item_id not in (None, "") else n),
                sequence=seq,
                question=question,
                reference=reference,
                task=str(task),
            )
        )
    return items
