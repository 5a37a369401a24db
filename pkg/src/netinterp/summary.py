"""The interpretation returned to users, and parsing of model output into it."""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from typing import Any

import jsonschema

DISCLAIMER = (
    "This interpretation was generated automatically from a single speed test. "
    "Results vary with time of day, Wi-Fi conditions and the test server used."
)

# report field -> (metric name, unit, label used in prompts and summaries)
METRICS: dict[str, tuple[str, str, str]] = {
    "download_mbps": ("download", "Mbps", "Download speed"),
    "upload_mbps": ("upload", "Mbps", "Upload speed"),
    "latency_idle_ms": ("idle_latency", "ms", "Latency (idle)"),
    "jitter_ms": ("jitter", "ms", "Jitter"),
    "latency_dl_loaded_ms": ("loaded_latency_download", "ms", "Latency while downloading"),
    "latency_ul_loaded_ms": ("loaded_latency_upload", "ms", "Latency while uploading"),
    "packet_loss_pct": ("packet_loss", "%", "Packet loss"),
}

USE_CASE_LABELS = {
    "gaming": "online gaming",
    "video_streaming": "video streaming",
    "browsing": "web browsing",
}


@dataclass
class MetricExplanation:
    metric: str
    value: float | None
    unit: str | None
    explanation: str


@dataclass
class UseCaseImpact:
    use_case: str
    verdict: str | None = None
    limiting_metric: str | None = None
    text: str | None = None


@dataclass
class SummaryContext:
    geo_used: bool = False
    history_used: bool = False
    peers_down: int = 0
    peers_up: int = 0


@dataclass
class InterpretationSummary:
    overall_text: str
    per_metric: list[MetricExplanation]
    use_case_impacts: list[UseCaseImpact]
    recommendations: list[str]
    context: SummaryContext = field(default_factory=SummaryContext)
    llm_used: bool = False
    model_id: str | None = None
    disclaimer: str = DISCLAIMER

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True, indent=2)

    def to_text(self) -> str:
        lines = [self.overall_text, "", "Metrics:"]
        for m in self.per_metric:
            value = "" if m.value is None else f" ({m.value:.2f} {m.unit})"
            lines.append(f"  - {m.metric}{value}: {m.explanation}")
        if self.use_case_impacts:
            lines += ["", "Use cases:"]
            for u in self.use_case_impacts:
                detail = u.text or u.verdict or ""
                lines.append(f"  - {USE_CASE_LABELS.get(u.use_case, u.use_case)}: {detail}")
        if self.recommendations:
            lines += ["", "Recommendations:"]
            lines += [f"  - {r}" for r in self.recommendations]
        lines += ["", self.disclaimer]
        return "\n".join(lines)


SUMMARY_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": [
        "overall_text",
        "per_metric",
        "use_case_impacts",
        "recommendations",
        "context",
        "llm_used",
        "model_id",
        "disclaimer",
    ],
    "additionalProperties": False,
    "properties": {
        "overall_text": {"type": "string", "minLength": 1},
        "per_metric": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["metric", "value", "unit", "explanation"],
                "additionalProperties": False,
                "properties": {
                    "metric": {"type": "string", "minLength": 1},
                    "value": {"type": ["number", "null"]},
                    "unit": {"type": ["string", "null"]},
                    "explanation": {"type": "string"},
                },
            },
            "allOf": [
                {"contains": {"properties": {"metric": {"const": name}}}}
                for name in ("download", "upload", "idle_latency")
            ],
        },
        "use_case_impacts": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["use_case", "verdict", "limiting_metric", "text"],
                "additionalProperties": False,
                "properties": {
                    "use_case": {"type": "string"},
                    "verdict": {"enum": ["good", "marginal", "poor", None]},
                    "limiting_metric": {"type": ["string", "null"]},
                    "text": {"type": ["string", "null"]},
                },
                "anyOf": [
                    {"properties": {"verdict": {"type": "string"}}},
                    {"properties": {"text": {"type": "string"}}},
                ],
            },
        },
        "recommendations": {"type": "array", "items": {"type": "string"}},
        "context": {
            "type": "object",
            "required": ["geo_used", "history_used", "peers_down", "peers_up"],
            "additionalProperties": False,
            "properties": {
                "geo_used": {"type": "boolean"},
                "history_used": {"type": "boolean"},
                "peers_down": {"type": "integer", "minimum": 0},
                "peers_up": {"type": "integer", "minimum": 0},
            },
        },
        "llm_used": {"type": "boolean"},
        "model_id": {"type": ["string", "null"]},
        "disclaimer": {"type": "string", "minLength": 1},
    },
}


def validate_summary(data: dict[str, Any]) -> None:
    """Raise ``jsonschema.ValidationError`` if ``data`` is not a valid summary."""
    jsonschema.validate(data, SUMMARY_SCHEMA)


# --- model output -----------------------------------------------------------

SECTION_NAMES = ("overall", "metrics", "use cases", "recommendations")

_HEADING = re.compile(
    r"^\s*(?:#{1,6}\s*)?[*_]{0,2}\s*(overall|metrics|use[ _-]?cases|recommendations)\s*[*_]{0,2}"
    r"(?:\s*:\s*[*_]{0,2}\s*(.*)|\s*$)",
    re.IGNORECASE,
)
_BULLET = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s+(.*)$")


@dataclass
class ParsedOutput:
    overall_text: str = ""
    metric_notes: list[tuple[str, str]] = field(default_factory=list)
    use_cases: list[tuple[str, str]] = field(default_factory=list)
    recommendations: list[str] = field(default_factory=list)


def _items(lines: list[str]) -> list[str]:
    items: list[str] = []
    bulleted = any(_BULLET.match(line) for line in lines)
    for line in lines:
        if not line.strip():
            continue
        m = _BULLET.match(line)
        if m:
            items.append(m.group(1).strip())
        elif bulleted and items:
            items[-1] = f"{items[-1]} {line.strip()}"
        else:
            items.append(line.strip())
    return items


def _split_label(item: str) -> tuple[str, str]:
    label, sep, rest = item.partition(":")
    label = label.strip(" *_")
    if sep and label and len(label) <= 60:
        return label, rest.strip()
    return "", item


def parse_model_output(content: str) -> ParsedOutput:
    """Split labeled model output into sections.

    Recognizes OVERALL / METRICS / USE CASES / RECOMMENDATIONS headings in
    any case, with optional markdown decoration. Text before the first
    heading, or all text when there is none, goes to ``overall_text``.
    """
    sections: dict[str, list[str]] = {name: [] for name in SECTION_NAMES}
    preamble: list[str] = []
    current: str | None = None
    for line in content.splitlines():
        m = _HEADING.match(line)
        if m:
            current = re.sub(r"[ _-]+", " ", m.group(1).lower())
            if m.group(2) and m.group(2).strip():
                sections[current].append(m.group(2))
            continue
        (preamble if current is None else sections[current]).append(line)

    overall_parts = ["\n".join(preamble).strip(), "\n".join(sections["overall"]).strip()]
    out = ParsedOutput(overall_text="\n\n".join(p for p in overall_parts if p))
    out.metric_notes = [_split_label(i) for i in _items(sections["metrics"])]
    out.use_cases = [_split_label(i) for i in _items(sections["use cases"])]
    out.recommendations = _items(sections["recommendations"])
    return out
