"""End-to-end interpretation of one speed-test result.

parse -> sanitize (hour bucket kept) -> geolocate -> retrieve peers per
direction -> statistics -> prompt -> model -> parse model output.

Only parsing the input can fail a request. Geolocation, retrieval and the
model call each degrade on error; without a model answer the rules-based
summary is returned with ``llm_used = False``.
"""

from __future__ import annotations

import dataclasses
import logging
import threading
from dataclasses import dataclass
from typing import Any, Mapping

from netinterp.config import PipelineConfig
from netinterp.errors import NetInterpError
from netinterp.geo import CachedGeoLookup, GeoClient, GeoContext
from netinterp.ingest import MeasurementReport, parse_result
from netinterp.kb import (
    AllComponentsEmpty,
    RecordStore,
    RetrievalQuery,
    SQLiteStore,
    normalize_location,
)
from netinterp.llm import ChatBackend, ChatRequest, HTTPChatBackend, MalformedResponse, strip_reasoning
from netinterp.prompt import PromptBundle, build_prompt, load_template
from netinterp.rules import (
    METRIC_EXPLANATIONS,
    Assessment,
    assess_use_cases,
    fallback_summary,
)
from netinterp.sanitizer import SanitizedReport, sanitize_report, scrub_text
from netinterp.stats import ContextStats, compute_stats
from netinterp.summary import (
    METRICS,
    InterpretationSummary,
    MetricExplanation,
    SummaryContext,
    UseCaseImpact,
    parse_model_output,
)

log = logging.getLogger(__name__)


class LLMBusy(NetInterpError):
    """All model slots stayed busy for the whole queue timeout."""

    code = "llm_busy"


@dataclass
class PipelineResult:
    summary: InterpretationSummary
    sanitized: SanitizedReport
    geo: GeoContext
    stats_down: ContextStats | None
    stats_up: ContextStats | None
    prompt: PromptBundle | None
    location_key: str | None


def _metric_for_label(label: str) -> str | None:
    text = label.lower()
    if "loss" in text:
        return "packet_loss_pct"
    if "jitter" in text:
        return "jitter_ms"
    if any(w in text for w in ("latency", "ping", "delay", "lag")):
        if "download" in text:
            return "latency_dl_loaded_ms"
        if "upload" in text:
            return "latency_ul_loaded_ms"
        return "latency_idle_ms"
    if "download" in text:
        return "download_mbps"
    if "upload" in text:
        return "upload_mbps"
    return None


def _use_case_for_label(label: str) -> str | None:
    text = label.lower()
    if "gam" in text:
        return "gaming"
    if "video" in text or "stream" in text:
        return "video_streaming"
    if "brows" in text or "web" in text:
        return "browsing"
    return None


def summary_from_model(
    content: str,
    report: SanitizedReport,
    model_id: str | None,
    fallback_overall: str,
) -> InterpretationSummary:
    """Merge parsed model sections with the measured values.

    Every measured metric gets an entry; the model's explanation is used
    where one of its METRICS bullets names that metric. Unmatched bullets
    are kept as extra entries without a value.
    """
    parsed = parse_model_output(content)
    notes: dict[str, list[str]] = {}
    extras: list[MetricExplanation] = []
    for label, text in parsed.metric_notes:
        field_name = _metric_for_label(label)
        if field_name is not None and field_name in report.metrics:
            notes.setdefault(field_name, []).append(text)
        else:
            extras.append(MetricExplanation(label or "note", None, None, text))

    per_metric = []
    for field_name, (name, unit, _label) in METRICS.items():
        value = report.metrics.get(field_name)
        if value is None:
            continue
        explanation = " ".join(notes.get(field_name, [])) or METRIC_EXPLANATIONS[field_name]
        per_metric.append(MetricExplanation(name, value, unit, explanation))

    impacts = []
    for label, text in parsed.use_cases:
        key = _use_case_for_label(label or text)
        if key is None:
            key = label.lower() if label else "general"
        impacts.append(UseCaseImpact(use_case=key, text=text or label))

    return InterpretationSummary(
        overall_text=parsed.overall_text or fallback_overall,
        per_metric=per_metric + extras,
        use_case_impacts=impacts,
        recommendations=parsed.recommendations,
        llm_used=True,
        model_id=model_id or None,
    )


def scrub_summary(summary: InterpretationSummary) -> InterpretationSummary:
    """Run every text field through the redaction patterns."""

    def clean(value: str | None) -> str | None:
        return None if value is None else scrub_text(value)[0]

    return dataclasses.replace(
        summary,
        overall_text=clean(summary.overall_text),
        per_metric=[
            dataclasses.replace(m, metric=clean(m.metric), explanation=clean(m.explanation))
            for m in summary.per_metric
        ],
        use_case_impacts=[
            dataclasses.replace(u, use_case=clean(u.use_case), text=clean(u.text))
            for u in summary.use_case_impacts
        ],
        recommendations=[clean(r) for r in summary.recommendations],
        model_id=clean(summary.model_id),
    )


class Pipeline:
    """Holds the long-lived pieces (geo cache, store, model backend).

    Collaborators can be injected; otherwise they are built from ``cfg``.
    A missing ``llm.base_url`` means no model: every request uses the
    rules-based summary. A missing ``geo.base_url`` disables geolocation.
    """

    def __init__(
        self,
        cfg: PipelineConfig | None = None,
        *,
        llm: ChatBackend | None = None,
        geo: CachedGeoLookup | None = None,
        store: RecordStore | None = None,
        env: Mapping[str, str] | None = None,
    ):
        self.cfg = cfg or PipelineConfig()
        if llm is None and self.cfg.llm.base_url:
            llm = HTTPChatBackend(
                self.cfg.llm.base_url,
                api_key=self.cfg.api_key(env),
                timeout_ms=self.cfg.llm.timeout_ms,
            )
        self.llm = llm
        if geo is None and self.cfg.geo.base_url:
            client = GeoClient(
                self.cfg.geo.base_url,
                timeout_ms=self.cfg.geo.timeout_ms,
                include_coords=self.cfg.geo.include_coords,
            )
            geo = CachedGeoLookup(client, ttl_seconds=self.cfg.geo.ttl_seconds)
        self.geo = geo
        self.store = store if store is not None else SQLiteStore(self.cfg.kb.path or ":memory:")
        self.template = load_template(self.cfg.prompt.template)
        self._llm_slots = threading.BoundedSemaphore(self.cfg.max_inflight_llm)

    # -- stages ------------------------------------------------------------

    def _geolocate(self, report: MeasurementReport) -> GeoContext:
        if self.geo is None:
            return GeoContext.unavailable()
        if self.cfg.geo.target == "server":
            ip = report.server.ip
        else:
            ip = report.client_interface.external_ip
        if not ip:
            return GeoContext.unavailable()
        try:
            return self.geo.lookup(ip)
        except Exception as exc:  # enrichment only; never fatal
            log.info("geolocation unavailable: %s", type(exc).__name__)
            return GeoContext.unavailable()

    def _location_key(self, sanitized: SanitizedReport, geo: GeoContext) -> str | None:
        candidates = []
        if geo.available and geo.city:
            candidates.append((geo.city, geo.region, geo.country))
        if sanitized.server_city:
            candidates.append((sanitized.server_city, None, sanitized.server_country))
        if self.cfg.retrieval.prefer == "server":
            candidates.reverse()
        for parts in candidates:
            try:
                return normalize_location(*parts)
            except AllComponentsEmpty:
                continue
        return None

    def _history(
        self, location_key: str | None, hour: int, direction: str, current: float
    ) -> ContextStats | None:
        if location_key is None:
            return None
        try:
            q = RetrievalQuery(
                location_key=location_key,
                hour_local=hour,
                direction=direction,
                window_hours=self.cfg.retrieval.window_hours,
                limit=self.cfg.retrieval.limit,
                max_limit=self.cfg.kb.max_limit,
            )
            records = self.store.query_similar(q)
        except Exception as exc:  # retrieval is optional context
            log.info("history unavailable: %s", type(exc).__name__)
            return None
        w = self.cfg.retrieval.window_hours
        descriptor = f"location {location_key}, within {w} h of local hour {hour}, {direction}"
        return compute_stats(records, current, descriptor)

    def _ask_model(self, bundle: PromptBundle) -> tuple[str, str]:
        assert self.llm is not None
        req = ChatRequest.for_prompt(
            self.cfg.llm.model,
            bundle.system_text,
            bundle.user_text,
            temperature=self.cfg.llm.temperature,
            max_tokens=self.cfg.llm.max_tokens,
        )
        if not self._llm_slots.acquire(timeout=self.cfg.llm_queue_timeout_ms / 1000):
            raise LLMBusy("all model slots are busy")
        try:
            resp = self.llm.complete(req)
        finally:
            self._llm_slots.release()
        content = strip_reasoning(resp.content)
        if not content:
            raise MalformedResponse("model answer is empty after removing reasoning")
        return content, resp.model_id

    # -- entry points ------------------------------------------------------

    def run(self, raw_document: str | bytes | Mapping[str, Any], use_llm: bool = True) -> PipelineResult:
        report = parse_result(raw_document, self.cfg.field_map)
        sanitized = sanitize_report(report, self.cfg.redaction_rules, self.cfg.utc_offset_minutes)
        geo = self._geolocate(report)
        del report  # nothing below may see unsanitized data

        location_key = self._location_key(sanitized, geo)
        hour = sanitized.time_of_day_hour
        stats_down = self._history(location_key, hour, "download", sanitized.metrics["download_mbps"])
        stats_up = self._history(location_key, hour, "upload", sanitized.metrics["upload_mbps"])
        assessments: list[Assessment] = assess_use_cases(sanitized, self.cfg.thresholds)
        fallback = fallback_summary(sanitized, assessments, stats_down, stats_up)

        bundle: PromptBundle | None = None
        summary = fallback
        try:
            bundle = build_prompt(
                sanitized,
                geo,
                stats_down,
                stats_up,
                self.cfg.prompt.budget_tokens,
                template=self.template,
            )
        except NetInterpError as exc:
            log.warning("prompt not built: %s", exc)

        if use_llm and self.llm is not None and bundle is not None:
            try:
                content, model_id = self._ask_model(bundle)
                summary = summary_from_model(content, sanitized, model_id, fallback.overall_text)
            except LLMBusy:
                raise
            except Exception as exc:  # any model failure falls back to rules
                log.warning("model unavailable, using rules fallback: %s", type(exc).__name__)
                summary = fallback

        peers_down = stats_down.n if stats_down else 0
        peers_up = stats_up.n if stats_up else 0
        summary = dataclasses.replace(
            summary,
            context=SummaryContext(
                geo_used=geo.available,
                history_used=peers_down + peers_up > 0,
                peers_down=peers_down,
                peers_up=peers_up,
            ),
        )
        return PipelineResult(
            summary=scrub_summary(summary),
            sanitized=sanitized,
            geo=geo,
            stats_down=stats_down,
            stats_up=stats_up,
            prompt=bundle,
            location_key=location_key,
        )

    def interpret(self, raw_document: str | bytes | Mapping[str, Any], use_llm: bool = True) -> InterpretationSummary:
        return self.run(raw_document, use_llm=use_llm).summary

    def health(self) -> dict[str, Any]:
        try:
            count = self.store.record_count()
            kb = {"reachable": True, "records": count}
        except Exception:
            kb = {"reachable": False, "records": None}
        return {
            "kb": kb,
            "llm": {"configured": self.llm is not None},
            "geo": {"configured": self.geo is not None},
        }

    def close(self) -> None:
        self.store.close()


def interpret(raw_document: str | bytes | Mapping[str, Any], cfg: PipelineConfig | None = None) -> InterpretationSummary:
    """Convenience wrapper that builds a throwaway :class:`Pipeline`."""
    pipeline = Pipeline(cfg)
    try:
        return pipeline.interpret(raw_document)
    finally:
        pipeline.close()
