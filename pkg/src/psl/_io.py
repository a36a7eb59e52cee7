"""JSONL helpers shared by every file-producing command.

Output files start with a single header line ``{"__header__": {...}}``
carrying the tool version, a config hash and the run seed. Readers skip it.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Iterable, Iterator

from . import __version__

HEADER_KEY = "__header__"


class DataError(Exception):
    """Input data violates a file schema."""


def make_header(config_hash: str = "", seed: int = 0, **extra: Any) -> dict:
    header = {"tool": "psl", "version": __version__, "config_hash": config_hash, "seed": seed}
    header.update(extra)
    return header


def dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def config_hash(obj: Any) -> str:
    return hashlib.sha256(dumps(obj).encode("utf-8")).hexdigest()[:16]


def write_jsonl(path: str | Path, rows: Iterable[dict], header: dict | None = None) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header is not None:
            fh.write(dumps({HEADER_KEY: header}) + "\n")
        for row in rows:
            fh.write(dumps(row) + "\n")
            n += 1
    return n


def iter_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise DataError(f"{path}:{lineno}: expected a JSON object")
            if HEADER_KEY in obj:
                continue
            yield obj


def read_jsonl(path: str | Path) -> list[dict]:
    return list(iter_jsonl(path))


def read_header(path: str | Path) -> dict | None:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().strip()
    if not first:
        return None
    try:
        obj = json.loads(first)
    except json.JSONDecodeError:
        return None
    if isinstance(obj, dict):
        return obj.get(HEADER_KEY)
    return None
