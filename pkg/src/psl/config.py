"""Run configuration: an INI file plus command-line overrides (flags win)."""

from __future__ import annotations

import configparser
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from ._io import config_hash
from .context_engine import Mode, RetrievalConfig
from .corpus_dedup import ClusterSettings
from .llm_gateway import GatewayConfig

_SECRET_KEY = re.compile(r"(?:.*_)?(?:api_?key|token|secret|password)", re.I)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PruningSettings:
    lambda_: float = 0.001
    beta: float = 0.5
    tau0: float = 10.0
    alpha: float = 0.9
    total_count: int | None = None


@dataclass(frozen=True)
class DedupSettings:
    identity: float = 0.70
    per_group_target: int | None = None
    prefilter: bool = True
    kmer_k: int = 5
    kmer_fraction: float = 0.3
    ic_base: float = 2.718281828459045
    workers: int = 1

    def cluster_settings(self) -> ClusterSettings:
        return ClusterSettings(self.identity, self.prefilter, self.kmer_k, self.kmer_fraction)


@dataclass(frozen=True)
class QASettings:
    retries: int = 2
    types: str = "attr,know,desc,tf"


@dataclass(frozen=True)
class AppConfig:
    paths: dict = field(default_factory=dict)
    pruning: PruningSettings = PruningSettings()
    dedup: DedupSettings = DedupSettings()
    retrieval: RetrievalConfig = RetrievalConfig()
    gateway: GatewayConfig = GatewayConfig()
    backend: str = "http"
    mock_script: str | None = None
    qa: QASettings = QASettings()
    seed: int = 0

    def params(self) -> dict:
        """Everything that influences outputs, minus file locations."""
        return {
            "pruning": asdict(self.pruning),
            "dedup": asdict(self.dedup),
            "retrieval": {**asdict(self.retrieval), "mode": self.retrieval.mode.value},
            "gateway": {k: v for k, v in asdict(self.gateway).items() if k not in ("verbose", "timeout")},
            "backend": self.backend,
            "mock_script": Path(self.mock_script).name if self.mock_script else None,
            "qa": asdict(self.qa),
            "seed": self.seed,
        }

    def hash(self) -> str:
        return config_hash(self.params())


def _coerce(value: str, typ: Any, name: str):
    if isinstance(value, str) and value.strip().lower() in ("", "none", "null"):
        if "None" in str(typ):
            return None
    t = str(typ)
    try:
        if "bool" in t:
            if isinstance(value, bool):
                return value
            v = str(value).strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if "Mode" in t:
            return value if isinstance(value, Mode) else Mode.parse(str(value))
        if t.startswith("int"):
            return int(value)
        if t.startswith("float"):
            return float(value)
        if "int" in t and "float" not in t:
            return int(value)
        if "float" in t:
            return float(value)
        return str(value)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {value!r}") from None


def _build(cls, values: Mapping[str, Any], section: str, aliases: Mapping[str, str] = {}):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, raw in values.items():
        name = aliases.get(key, key).replace("-", "_")
        if name not in known:
            raise ConfigError(f"unknown key [{section}] {key}")
        kwargs[name] = _coerce(raw, known[name].type, f"{section}.{key}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def read_ini(path: str | Path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None)
    if not Path(path).exists():
        raise ConfigError(f"config file not found: {path}")
    parser.read(path, encoding="utf-8")
    out = {s: dict(parser[s]) for s in parser.sections()}
    for section, values in out.items():
        for key in values:
            if _SECRET_KEY.fullmatch(key):
                raise ConfigError(f"[{section}] {key}: secrets are read from the environment only")
    return out


def load_config(path: str | Path | None = None, overrides: Mapping[str, Mapping[str, Any]] | None = None) -> AppConfig:
    sections: dict[str, dict[str, Any]] = read_ini(path) if path else {}
    for section, values in (overrides or {}).items():
        sections.setdefault(section, {}).update({k: v for k, v in values.items() if v is not None})
    known = {"paths", "pruning", "dedup", "retrieval", "gateway", "qa", "run"}
    unknown = set(sections) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(sorted(unknown))}")

    gw = dict(sections.get("gateway", {}))
    backend = str(gw.pop("backend", "http"))
    mock_script = gw.pop("mock_script", None) or None
    retrieval = _build(RetrievalConfig, sections.get("retrieval", {}), "retrieval")
    run = sections.get("run", {})
    try:
        seed = int(run.get("seed", 0))
    except ValueError:
        raise ConfigError(f"bad seed {run.get('seed')!r}") from None
    return AppConfig(
        paths=dict(sections.get("paths", {})),
        pruning=_build(PruningSettings, sections.get("pruning", {}), "pruning", {"lambda": "lambda_"}),
        dedup=_build(DedupSettings, sections.get("dedup", {}), "dedup"),
        retrieval=retrieval,
        gateway=_build(GatewayConfig, gw, "gateway"),
        backend=backend,
        mock_script=str(mock_script) if mock_script else None,
        qa=_build(QASettings, sections.get("qa", {}), "qa"),
        seed=seed,
    )
