"""Plain-language interpretation of speed-test results."""

from netinterp.ingest import (
    MeasurementReport,
    ServerInfo,
    InterfaceInfo,
    convert_bandwidth,
    parse_result,
    validate_report,
)
from netinterp.sanitizer import SanitizedReport, sanitize_report, scrub_text
from netinterp.stats import ContextStats, compute_stats, percentile_rank
from netinterp.llm import strip_reasoning

__version__ = "0.1.0"

__all__ = [
    "MeasurementReport",
    "ServerInfo",
    "InterfaceInfo",
    "SanitizedReport",
    "ContextStats",
    "convert_bandwidth",
    "parse_result",
    "validate_report",
    "sanitize_report",
    "scrub_text",
    "compute_stats",
    "percentile_rank",
    "strip_reasoning",
]
