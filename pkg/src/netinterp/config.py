"""Pipeline configuration: one YAML document plus environment overrides.

Overrides use ``NETINTERP_<SECTION>__<KEY>`` (for example
``NETINTERP_LLM__BASE_URL``); top-level keys use ``NETINTERP_<KEY>``.
Values are parsed as YAML scalars. The model API key is read only from
the environment variable named by ``llm.api_key_env``.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from netinterp.errors import ConfigError
from netinterp.ingest import DEFAULT_FIELD_MAP
from netinterp.kb import DEFAULT_MAX_LIMIT
from netinterp.prompt import DEFAULT_BUDGET_TOKENS
from netinterp.rules import UseCaseThresholds, default_thresholds, thresholds_from_mapping
from netinterp.sanitizer import DEFAULT_RULES, RedactionRule, load_rules

ENV_PREFIX = "NETINTERP_"


@dataclass(frozen=True)
class LLMSettings:
    base_url: str | None = None
    model: str = "deepseek-r1-distill-qwen-7b"
    temperature: float = 0.2
    max_tokens: int = 1024
    timeout_ms: int = 60000
    api_key_env: str = "NETINTERP_API_KEY"


@dataclass(frozen=True)
class GeoSettings:
    base_url: str | None = None
    timeout_ms: int = 2000
    ttl_seconds: int = 3600
    include_coords: bool = True
    target: str = "client"


@dataclass(frozen=True)
class KBSettings:
    path: str | None = None
    max_limit: int = DEFAULT_MAX_LIMIT


@dataclass(frozen=True)
class RetrievalSettings:
    window_hours: int = 1
    limit: int = 200
    prefer: str = "geo"


@dataclass(frozen=True)
class PromptSettings:
    budget_tokens: int = DEFAULT_BUDGET_TOKENS
    template: str | None = None


@dataclass(frozen=True)
class PipelineConfig:
    llm: LLMSettings = field(default_factory=LLMSettings)
    geo: GeoSettings = field(default_factory=GeoSettings)
    kb: KBSettings = field(default_factory=KBSettings)
    retrieval: RetrievalSettings = field(default_factory=RetrievalSettings)
    prompt: PromptSettings = field(default_factory=PromptSettings)
    thresholds: tuple[UseCaseThresholds, ...] = field(default_factory=lambda: tuple(default_thresholds()))
    redaction_rules: tuple[RedactionRule, ...] = DEFAULT_RULES
    field_map: Mapping[str, str] = field(default_factory=dict)
    utc_offset_minutes: int = 0
    max_inflight_llm: int = 4
    llm_queue_timeout_ms: int = 30000

    def __post_init__(self) -> None:
        problems = []
        if not 0 <= self.llm.temperature <= 2:
            problems.append("llm.temperature must be in [0, 2]")
        if self.llm.max_tokens <= 0:
            problems.append("llm.max_tokens must be > 0")
        if self.llm.timeout_ms <= 0 or self.geo.timeout_ms <= 0:
            problems.append("timeouts must be > 0")
        if self.geo.ttl_seconds <= 0:
            problems.append("geo.ttl_seconds must be > 0")
        if self.geo.target not in ("client", "server"):
            problems.append("geo.target must be 'client' or 'server'")
        if self.retrieval.prefer not in ("geo", "server"):
            problems.append("retrieval.prefer must be 'geo' or 'server'")
        if self.retrieval.window_hours < 0:
            problems.append("retrieval.window_hours must be >= 0")
        if not 0 < self.retrieval.limit <= self.kb.max_limit:
            problems.append(f"retrieval.limit must be in [1, {self.kb.max_limit}]")
        if self.prompt.budget_tokens <= 0:
            problems.append("prompt.budget_tokens must be > 0")
        if not -720 <= self.utc_offset_minutes <= 840:
            problems.append("utc_offset_minutes must be in [-720, 840]")
        if self.max_inflight_llm <= 0:
            problems.append("max_inflight_llm must be > 0")
        unknown = set(self.field_map) - set(DEFAULT_FIELD_MAP)
        if unknown:
            problems.append(f"unknown field_map keys {sorted(unknown)}")
        if problems:
            raise ConfigError("; ".join(problems))

    def api_key(self, env: Mapping[str, str] | None = None) -> str | None:
        env = os.environ if env is None else env
        return env.get(self.llm.api_key_env) or None


_SECTIONS = {
    "llm": LLMSettings,
    "geo": GeoSettings,
    "kb": KBSettings,
    "retrieval": RetrievalSettings,
    "prompt": PromptSettings,
}
_SCALARS = {"utc_offset_minutes", "max_inflight_llm", "llm_queue_timeout_ms"}
_SECRET_KEYS = {"api_key", "apikey", "token", "secret", "password"}


def _section(cls: type, data: Any, name: str) -> Any:
    if data is None:
        return cls()
    if not isinstance(data, Mapping):
        raise ConfigError(f"{name} must be a mapping")
    secrets = _SECRET_KEYS & {k.lower() for k in data}
    if secrets:
        raise ConfigError(f"{name}: credentials are read from the environment only, not from config")
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"{name}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def config_from_dict(data: Mapping[str, Any] | None) -> PipelineConfig:
    data = dict(data or {})
    kwargs: dict[str, Any] = {}
    for name, cls in _SECTIONS.items():
        kwargs[name] = _section(cls, data.pop(name, None), name)
    try:
        if "thresholds" in data:
            kwargs["thresholds"] = tuple(thresholds_from_mapping(data.pop("thresholds")))
        if "redaction_rules" in data:
            kwargs["redaction_rules"] = load_rules(data.pop("redaction_rules"))
    except (TypeError, ValueError, KeyError, AttributeError) as exc:
        raise ConfigError(f"invalid thresholds or redaction rules: {exc}") from exc
    if "field_map" in data:
        fmap = data.pop("field_map") or {}
        if not isinstance(fmap, Mapping):
            raise ConfigError("field_map must be a mapping")
        kwargs["field_map"] = dict(fmap)
    for key in _SCALARS & set(data):
        kwargs[key] = data.pop(key)
    if data:
        raise ConfigError(f"unknown configuration keys {sorted(data)}")
    try:
        return PipelineConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def apply_env_overrides(data: dict[str, Any], env: Mapping[str, str]) -> dict[str, Any]:
    out = {k: (dict(v) if isinstance(v, Mapping) else v) for k, v in data.items()}
    for var, raw in sorted(env.items()):
        if not var.startswith(ENV_PREFIX):
            continue
        path = var[len(ENV_PREFIX):].lower().split("__")
        if len(path) == 2 and path[0] in _SECTIONS:
            out.setdefault(path[0], {})
            if out[path[0]] is None:
                out[path[0]] = {}
            out[path[0]][path[1]] = yaml.safe_load(raw)
        elif len(path) == 1 and path[0] in _SCALARS:
            out[path[0]] = yaml.safe_load(raw)
    return out


def load_config(path: str | Path | None = None, env: Mapping[str, str] | None = None) -> PipelineConfig:
    env = os.environ if env is None else env
    data: dict[str, Any] = {}
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text("utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file is not valid YAML: {exc}") from exc
        if loaded is not None and not isinstance(loaded, Mapping):
            raise ConfigError("config document must be a mapping")
        data = dict(loaded or {})
    return config_from_dict(apply_env_overrides(data, env))
