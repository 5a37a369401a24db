"""Threshold-based use-case assessment and the no-LLM summary."""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from typing import Any, Mapping, Sequence

import yaml

from netinterp.errors import NetInterpError
from netinterp.sanitizer import SanitizedReport
from netinterp.stats import ContextStats
from netinterp.summary import (
    METRICS,
    USE_CASE_LABELS,
    InterpretationSummary,
    MetricExplanation,
    UseCaseImpact,
)

USE_CASES = ("gaming", "video_streaming", "browsing")
# tie-break order for the limiting metric
METRIC_ORDER = ("download", "upload", "latency", "loss")
VERDICTS = ("good", "marginal", "poor")
MARGINAL_BAND = 0.25


class DuplicateUseCase(NetInterpError, ValueError):
    code = "duplicate_use_case"


@dataclass(frozen=True)
class UseCaseThresholds:
    use_case: str
    min_download_mbps: float
    min_upload_mbps: float
    max_latency_ms: float
    max_loss_pct: float

    def __post_init__(self) -> None:
        if self.use_case not in USE_CASES:
            raise ValueError(f"unknown use case {self.use_case!r}")
        for name in ("min_download_mbps", "min_upload_mbps", "max_latency_ms", "max_loss_pct"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0")


@dataclass(frozen=True)
class Assessment:
    use_case: str
    verdict: str
    limiting_metric: str | None = None


def thresholds_from_mapping(data: Mapping[str, Mapping[str, Any]]) -> list[UseCaseThresholds]:
    return [
        UseCaseThresholds(use_case=name, **{k: float(v) for k, v in bounds.items()})
        for name, bounds in data.items()
    ]


def default_thresholds() -> list[UseCaseThresholds]:
    text = resources.files("netinterp").joinpath("assets/thresholds.yaml").read_text("utf-8")
    return thresholds_from_mapping(yaml.safe_load(text))


def _shortfall(value: float | None, bound: float, minimum: bool) -> float:
    """Relative miss of ``value`` against an inclusive bound; 0 when satisfied."""
    if value is None:
        return 0.0
    if minimum:
        if value >= bound:
            return 0.0
        return (bound - value) / bound
    if value <= bound:
        return 0.0
    return math.inf if bound == 0 else (value - bound) / bound


def assess_use_cases(
    report: SanitizedReport, thresholds: Sequence[UseCaseThresholds]
) -> list[Assessment]:
    """Grade each use case as good / marginal / poor.

    Unknown packet loss counts as satisfied.
    """
    seen: set[str] = set()
    for t in thresholds:
        if t.use_case in seen:
            raise DuplicateUseCase(f"use case {t.use_case!r} listed twice")
        seen.add(t.use_case)

    m = report.metrics
    out = []
    for t in thresholds:
        misses = {
            "download": _shortfall(m.get("download_mbps"), t.min_download_mbps, True),
            "upload": _shortfall(m.get("upload_mbps"), t.min_upload_mbps, True),
            "latency": _shortfall(m.get("latency_idle_ms"), t.max_latency_ms, False),
            "loss": _shortfall(m.get("packet_loss_pct"), t.max_loss_pct, False),
        }
        missed = [name for name in METRIC_ORDER if misses[name] > 0]
        if not missed:
            out.append(Assessment(t.use_case, "good"))
            continue
        # max() keeps the first of equal elements, so METRIC_ORDER breaks ties
        worst = max(missed, key=lambda name: misses[name])
        if len(missed) == 1 and misses[worst] < MARGINAL_BAND:
            verdict = "marginal"
        else:
            verdict = "poor"
        out.append(Assessment(t.use_case, verdict, worst))
    return out


REC_WIRED = (
    "Use a wired Ethernet connection instead of Wi-Fi for gaming, video calls "
    "and other activities that are sensitive to delay."
)
REC_ACCESS_POINT = (
    "Optimize the placement of your wireless access point: a central, raised "
    "spot away from thick walls and appliances gives better coverage."
)
REC_UPGRADE = (
    "If speeds remain below what you need after that, consider upgrading your internet plan."
)
_REC_ORDER = (REC_WIRED, REC_ACCESS_POINT, REC_UPGRADE)
_RECS_BY_METRIC = {
    "download": (REC_ACCESS_POINT, REC_UPGRADE),
    "upload": (REC_ACCESS_POINT, REC_UPGRADE),
    "latency": (REC_WIRED, REC_ACCESS_POINT),
    "loss": (REC_WIRED, REC_ACCESS_POINT),
}

_METRIC_PHRASES = {
    "download": "download speed",
    "upload": "upload speed",
    "latency": "latency",
    "loss": "packet loss",
}

METRIC_EXPLANATIONS = {
    "download_mbps": "How quickly data reaches you from the internet. It sets how fast pages, "
    "downloads and streaming video load.",
    "upload_mbps": "How quickly you can send data. It matters for video calls, sending large "
    "files and backups to the cloud.",
    "latency_idle_ms": "The round-trip delay on a quiet connection. Lower feels more responsive, "
    "which matters most for gaming and calls.",
    "jitter_ms": "How much the delay varies from moment to moment. High jitter makes calls and "
    "games stutter.",
    "latency_dl_loaded_ms": "The delay while the line is busy downloading. A large jump over "
    "idle latency means the connection gets sluggish when someone else is downloading.",
    "latency_ul_loaded_ms": "The delay while the line is busy uploading. A large jump over idle "
    "latency means calls suffer while files are being sent.",
    "packet_loss_pct": "The share of data that never arrived. Even a few percent causes "
    "glitches in calls and games.",
}


def metric_explanations(report: SanitizedReport) -> list[MetricExplanation]:
    out = []
    for field_name, (name, unit, _label) in METRICS.items():
        value = report.metrics.get(field_name)
        if value is None:
            continue
        out.append(MetricExplanation(name, value, unit, METRIC_EXPLANATIONS[field_name]))
    return out


def recommendations_for(assessments: Sequence[Assessment]) -> list[str]:
    wanted = {
        rec
        for a in assessments
        if a.verdict != "good" and a.limiting_metric is not None
        for rec in _RECS_BY_METRIC[a.limiting_metric]
    }
    return [rec for rec in _REC_ORDER if rec in wanted]


def _rank_sentence(stats: ContextStats | None, direction: str) -> str | None:
    if stats is None or stats.n == 0 or stats.percentile_rank_of_current is None:
        return None
    pct = round(stats.percentile_rank_of_current * 100)
    return (
        f"Compared with {stats.n} earlier {direction} measurements from a similar place and "
        f"time of day (average {stats.mean_mbps:.2f} Mbps), your result is higher than "
        f"about {pct}% of them."
    )


def _join(labels: list[str]) -> str:
    if len(labels) == 1:
        return labels[0]
    return ", ".join(labels[:-1]) + " and " + labels[-1]


def fallback_summary(
    report: SanitizedReport,
    assessments: Sequence[Assessment],
    stats_down: ContextStats | None = None,
    stats_up: ContextStats | None = None,
) -> InterpretationSummary:
    """Template-based summary used when no language model answer is available."""
    if not assessments:
        raise ValueError("at least one assessment is required")
    m = report.metrics
    sentences = [
        f"Your connection measured {m['download_mbps']:.2f} Mbps download, "
        f"{m['upload_mbps']:.2f} Mbps upload and {m['latency_idle_ms']:.2f} ms latency."
    ]
    by_verdict: dict[str, list[Assessment]] = {v: [] for v in VERDICTS}
    for a in assessments:
        by_verdict[a.verdict].append(a)
    if by_verdict["good"]:
        sentences.append(
            f"That is good enough for {_join([USE_CASE_LABELS[a.use_case] for a in by_verdict['good']])}."
        )
    for verdict, word in (("marginal", "borderline"), ("poor", "likely to struggle")):
        for a in by_verdict[verdict]:
            sentences.append(
                f"For {USE_CASE_LABELS[a.use_case]} it is {word}, mainly because of "
                f"{_METRIC_PHRASES[a.limiting_metric]}."
            )
    for stats, direction in ((stats_down, "download"), (stats_up, "upload")):
        sentence = _rank_sentence(stats, direction)
        if sentence:
            sentences.append(sentence)

    impacts = []
    for a in assessments:
        label = USE_CASE_LABELS[a.use_case]
        if a.verdict == "good":
            text = f"{label.capitalize()} should work well."
        else:
            text = (
                f"{label.capitalize()} may be affected ({a.verdict}); the weakest point is "
                f"{_METRIC_PHRASES[a.limiting_metric]}."
            )
        impacts.append(UseCaseImpact(a.use_case, a.verdict, a.limiting_metric, text))

    return InterpretationSummary(
        overall_text=" ".join(sentences),
        per_metric=metric_explanations(report),
        use_case_impacts=impacts,
        recommendations=recommendations_for(assessments),
        llm_used=False,
    )
