"""Assembly of the model prompt under a token budget.

The instruction text and section headings live in ``assets/prompt_v1.txt``
(sections introduced by ``=== name ===`` lines, ``$slot`` placeholders).
User text is built from up to four sections in a fixed order; when the
budget is tight, whole sections are dropped starting with upload history,
then download history, then location. Metrics are never dropped.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from string import Template
from typing import Sequence

from netinterp.errors import NetInterpError
from netinterp.geo import GeoContext
from netinterp.sanitizer import SanitizedReport, scrub_text
from netinterp.stats import ContextStats
from netinterp.summary import METRICS

TEMPLATE_VERSION = "v1"
DEFAULT_BUDGET_TOKENS = 3000
SECTION_ORDER = ("metrics", "geo", "history_down", "history_up")
# higher number is dropped first
PRIORITY = {"metrics": 0, "geo": 1, "history_down": 2, "history_up": 3}


class BudgetTooSmall(NetInterpError, ValueError):
    code = "budget_too_small"


@dataclass(frozen=True)
class PromptPart:
    name: str
    priority: int
    text: str


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_text: str
    token_estimate: int
    sections_included: frozenset[str]


@dataclass(frozen=True)
class PromptTemplate:
    system: str
    metrics: Template
    geo: Template
    history: Template


_SECTION_LINE = re.compile(r"^=== (\w+) ===$", re.MULTILINE)


def parse_template(text: str) -> PromptTemplate:
    pieces = _SECTION_LINE.split(text)
    sections = {pieces[i]: pieces[i + 1].strip("\n") for i in range(1, len(pieces), 2)}
    missing = {"system", "metrics", "geo", "history"} - set(sections)
    if missing:
        raise ValueError(f"prompt template lacks sections {sorted(missing)}")
    return PromptTemplate(
        system=sections["system"],
        metrics=Template(sections["metrics"]),
        geo=Template(sections["geo"]),
        history=Template(sections["history"]),
    )


@lru_cache(maxsize=None)
def load_template(path: str | None = None) -> PromptTemplate:
    if path is None:
        text = resources.files("netinterp").joinpath(f"assets/prompt_{TEMPLATE_VERSION}.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return parse_template(text)


def estimate_tokens(text: str) -> int:
    """Rough token count: one token per four characters, rounded up."""
    return math.ceil(len(text) / 4)


def _num(value: float) -> str:
    return f"{value:.2f}"


def _metrics_lines(report: SanitizedReport) -> list[str]:
    lines = []
    for field_name, (_name, unit, label) in METRICS.items():
        value = report.metrics.get(field_name)
        if value is not None:
            lines.append(f"- {label}: {_num(value)} {unit}")
    if report.isp_name:
        lines.append(f"- Internet provider: {report.isp_name}")
    server = ", ".join(p for p in (report.server_city, report.server_country) if p)
    if server:
        lines.append(f"- Test server location: {server}")
    lines.append(f"- Time of day: around hour {report.time_of_day_hour} (local, 24-hour clock)")
    return lines


def _geo_lines(geo: GeoContext) -> list[str]:
    lines = []
    for label, value in (("City", geo.city), ("Region", geo.region), ("Country", geo.country)):
        if value:
            lines.append(f"- {label}: {value}")
    if geo.approx_lat is not None and geo.approx_lon is not None:
        lines.append(f"- Approximate coordinates: {geo.approx_lat:.1f}, {geo.approx_lon:.1f}")
    return lines


def _history_lines(stats: ContextStats, direction: str) -> list[str]:
    lines = [f"- Earlier {direction} measurements found: {stats.n} ({stats.window_descriptor})"]
    if stats.mean_mbps is not None:
        lines.append(f"- Average: {_num(stats.mean_mbps)} Mbps")
    if stats.median_mbps is not None:
        lines.append(f"- Median: {_num(stats.median_mbps)} Mbps")
    if stats.stddev_mbps is not None:
        lines.append(f"- Standard deviation: {_num(stats.stddev_mbps)} Mbps")
    if stats.avg_fetch_time_ms is not None:
        lines.append(f"- Average fetch time: {_num(stats.avg_fetch_time_ms)} ms")
    if stats.percentile_rank_of_current is not None:
        pct = _num(stats.percentile_rank_of_current * 100)
        lines.append(f"- This result is higher than {pct}% of those measurements (ties count half)")
    return lines


def _join_user(parts: Sequence[PromptPart]) -> str:
    return "\n\n".join(p.text for p in parts)


def _estimate(system_text: str, parts: Sequence[PromptPart]) -> int:
    return estimate_tokens(system_text) + estimate_tokens(_join_user(parts))


def truncate_context(
    parts: Sequence[PromptPart], budget_tokens: int, system_text: str = ""
) -> list[PromptPart]:
    """Drop whole parts, lowest priority first, until the prompt fits."""
    kept = list(parts)
    essential = [p for p in kept if p.priority == 0]
    if _estimate(system_text, essential) > budget_tokens:
        raise BudgetTooSmall(
            f"instructions and metrics need {_estimate(system_text, essential)} tokens, "
            f"budget is {budget_tokens}"
        )
    for victim in sorted((p for p in kept if p.priority > 0), key=lambda p: -p.priority):
        if _estimate(system_text, kept) <= budget_tokens:
            break
        kept.remove(victim)
    return kept


def build_prompt(
    report: SanitizedReport,
    geo: GeoContext | None = None,
    stats_down: ContextStats | None = None,
    stats_up: ContextStats | None = None,
    budget_tokens: int = DEFAULT_BUDGET_TOKENS,
    template: PromptTemplate | None = None,
) -> PromptBundle:
    """Build the system and user texts. Pure: equal inputs give equal output."""
    tpl = template or load_template()

    def render(t: Template, lines: list[str], **slots: str) -> str:
        text = t.substitute(lines="\n".join(lines), **slots)
        return scrub_text(text)[0]

    parts = [PromptPart("metrics", PRIORITY["metrics"], render(tpl.metrics, _metrics_lines(report)))]
    if geo is not None and geo.available:
        parts.append(PromptPart("geo", PRIORITY["geo"], render(tpl.geo, _geo_lines(geo))))
    for name, stats, direction in (
        ("history_down", stats_down, "download"),
        ("history_up", stats_up, "upload"),
    ):
        if stats is not None and stats.n > 0:
            text = render(tpl.history, _history_lines(stats, direction), direction=direction.upper())
            parts.append(PromptPart(name, PRIORITY[name], text))

    kept = truncate_context(parts, budget_tokens, tpl.system)
    user_text = _join_user(kept)
    return PromptBundle(
        system_text=tpl.system,
        user_text=user_text,
        token_estimate=estimate_tokens(tpl.system) + estimate_tokens(user_text),
        sections_included=frozenset(p.name for p in kept),
    )
