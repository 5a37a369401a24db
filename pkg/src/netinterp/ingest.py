"""Parsing of raw speed-test result documents.

The default field map follows the JSON emitted by the Ookla ``speedtest``
CLI (``-f json``). Bandwidth there is reported in bytes per second; reports
carry decimal megabits per second.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Mapping

from netinterp.errors import MalformedDocument, MissingRequiredField, RangeViolation

# report field -> dotted path in the source document
DEFAULT_FIELD_MAP: dict[str, str] = {
    "download_bandwidth": "download.bandwidth",
    "upload_bandwidth": "upload.bandwidth",
    "latency_idle_ms": "ping.latency",
    "jitter_ms": "ping.jitter",
    "latency_dl_loaded_ms": "download.latency.iqm",
    "latency_ul_loaded_ms": "upload.latency.iqm",
    "packet_loss_pct": "packetLoss",
    "isp_name": "isp",
    "timestamp_utc": "timestamp",
    "test_id": "result.id",
    "result_url": "result.url",
    "server.id": "server.id",
    "server.host": "server.host",
    "server.port": "server.port",
    "server.name": "server.name",
    "server.city": "server.location",
    "server.country": "server.country",
    "server.ip": "server.ip",
    "client_interface.internal_ip": "interface.internalIp",
    "client_interface.external_ip": "interface.externalIp",
    "client_interface.mac_addr": "interface.macAddr",
    "client_interface.name": "interface.name",
    "client_interface.is_vpn": "interface.isVpn",
}

METRIC_FIELDS = (
    "download_mbps",
    "upload_mbps",
    "latency_idle_ms",
    "jitter_ms",
    "latency_dl_loaded_ms",
    "latency_ul_loaded_ms",
    "packet_loss_pct",
)


@dataclass(frozen=True)
class ServerInfo:
    id: str | None = None
    host: str | None = None
    port: int | None = None
    name: str | None = None
    city: str | None = None
    country: str | None = None
    ip: str | None = None


@dataclass(frozen=True)
class InterfaceInfo:
    internal_ip: str | None = None
    external_ip: str | None = None
    mac_addr: str | None = None
    name: str | None = None
    is_vpn: bool | None = None


@dataclass(frozen=True)
class MeasurementReport:
    download_mbps: float
    upload_mbps: float
    latency_idle_ms: float
    timestamp_utc: datetime
    jitter_ms: float | None = None
    latency_dl_loaded_ms: float | None = None
    latency_ul_loaded_ms: float | None = None
    packet_loss_pct: float | None = None
    isp_name: str | None = None
    server: ServerInfo = field(default_factory=ServerInfo)
    client_interface: InterfaceInfo = field(default_factory=InterfaceInfo)
    test_id: str | None = None
    result_url: str | None = None
    raw: str = ""

    def metrics(self) -> dict[str, float]:
        """Present numeric metrics keyed by field name."""
        return {
            name: getattr(self, name)
            for name in METRIC_FIELDS
            if getattr(self, name) is not None
        }

    def raw_document(self) -> dict[str, Any]:
        return json.loads(self.raw)


@dataclass(frozen=True)
class Finding:
    field: str
    rule: str

    def __str__(self) -> str:
        return f"{self.field}: {self.rule}"


def convert_bandwidth(bytes_per_second: float) -> float:
    """Convert bytes/s to decimal megabits/s."""
    if isinstance(bytes_per_second, bool) or not isinstance(bytes_per_second, (int, float)):
        raise RangeViolation(f"bandwidth must be a number, got {type(bytes_per_second).__name__}")
    if not math.isfinite(bytes_per_second) or bytes_per_second < 0:
        raise RangeViolation("bandwidth must be finite and >= 0")
    return bytes_per_second * 8 / 1e6


def parse_timestamp(value: str) -> datetime:
    """Parse an ISO-8601 instant to an aware UTC datetime.

    A trailing ``Z`` is accepted. Values without an offset are taken as UTC.
    """
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        parsed = datetime.fromisoformat(text)
    except ValueError as exc:
        raise MalformedDocument("timestamp is not ISO-8601") from exc
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=timezone.utc)
    return parsed.astimezone(timezone.utc)


_MISSING = object()


def _lookup(doc: Mapping[str, Any], path: str) -> Any:
    node: Any = doc
    for part in path.split("."):
        if not isinstance(node, Mapping) or part not in node:
            return _MISSING
        node = node[part]
    return _MISSING if node is None else node


def _number(doc: Mapping[str, Any], path: str, name: str) -> float | None:
    value = _lookup(doc, path)
    if value is _MISSING:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MalformedDocument(f"{name} must be numeric")
    return float(value)


def _text(doc: Mapping[str, Any], path: str, name: str) -> str | None:
    value = _lookup(doc, path)
    if value is _MISSING:
        return None
    if isinstance(value, bool) or not isinstance(value, (str, int, float)):
        raise MalformedDocument(f"{name} must be text")
    return str(value)


def parse_result(
    raw_document: str | bytes | Mapping[str, Any],
    field_map: Mapping[str, str] | None = None,
) -> MeasurementReport:
    """Parse a speed-test result document into a validated report.

    ``field_map`` entries override :data:`DEFAULT_FIELD_MAP` per key.
    """
    if isinstance(raw_document, Mapping):
        raw_text = json.dumps(raw_document)
        doc: Any = raw_document
    else:
        if isinstance(raw_document, bytes):
            try:
                raw_text = raw_document.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise MalformedDocument("document is not valid UTF-8") from exc
        else:
            raw_text = raw_document
        try:
            doc = json.loads(raw_text)
        except json.JSONDecodeError as exc:
            raise MalformedDocument(f"document is not valid JSON: {exc.msg}") from exc
    if not isinstance(doc, Mapping):
        raise MalformedDocument("document must be a JSON object")

    fmap = dict(DEFAULT_FIELD_MAP)
    if field_map:
        unknown = set(field_map) - set(DEFAULT_FIELD_MAP)
        if unknown:
            raise ValueError(f"unknown report fields in field map: {sorted(unknown)}")
        fmap.update(field_map)

    down = _number(doc, fmap["download_bandwidth"], "download bandwidth")
    if down is None:
        raise MissingRequiredField("download bandwidth")
    up = _number(doc, fmap["upload_bandwidth"], "upload bandwidth")
    if up is None:
        raise MissingRequiredField("upload bandwidth")
    stamp = _lookup(doc, fmap["timestamp_utc"])
    if stamp is _MISSING:
        raise MissingRequiredField("timestamp")
    if not isinstance(stamp, str):
        raise MalformedDocument("timestamp must be text")
    latency = _number(doc, fmap["latency_idle_ms"], "idle latency")
    if latency is None:
        raise MissingRequiredField("idle latency")

    port = _number(doc, fmap["server.port"], "server port")
    if port is not None and not port.is_integer():
        raise MalformedDocument("server port must be an integer")
    is_vpn = _lookup(doc, fmap["client_interface.is_vpn"])
    if is_vpn is not _MISSING and not isinstance(is_vpn, bool):
        raise MalformedDocument("interface VPN flag must be boolean")

    report = MeasurementReport(
        download_mbps=convert_bandwidth(down),
        upload_mbps=convert_bandwidth(up),
        latency_idle_ms=latency,
        timestamp_utc=parse_timestamp(stamp),
        jitter_ms=_number(doc, fmap["jitter_ms"], "jitter"),
        latency_dl_loaded_ms=_number(doc, fmap["latency_dl_loaded_ms"], "download loaded latency"),
        latency_ul_loaded_ms=_number(doc, fmap["latency_ul_loaded_ms"], "upload loaded latency"),
        packet_loss_pct=_number(doc, fmap["packet_loss_pct"], "packet loss"),
        isp_name=_text(doc, fmap["isp_name"], "isp"),
        server=ServerInfo(
            id=_text(doc, fmap["server.id"], "server id"),
            host=_text(doc, fmap["server.host"], "server host"),
            port=None if port is None else int(port),
            name=_text(doc, fmap["server.name"], "server name"),
            city=_text(doc, fmap["server.city"], "server city"),
            country=_text(doc, fmap["server.country"], "server country"),
            ip=_text(doc, fmap["server.ip"], "server ip"),
        ),
        client_interface=InterfaceInfo(
            internal_ip=_text(doc, fmap["client_interface.internal_ip"], "internal ip"),
            external_ip=_text(doc, fmap["client_interface.external_ip"], "external ip"),
            mac_addr=_text(doc, fmap["client_interface.mac_addr"], "mac address"),
            name=_text(doc, fmap["client_interface.name"], "interface name"),
            is_vpn=None if is_vpn is _MISSING else is_vpn,
        ),
        test_id=_text(doc, fmap["test_id"], "test id"),
        result_url=_text(doc, fmap["result_url"], "result url"),
        raw=raw_text,
    )
    findings = validate_report(report)
    if findings:
        raise RangeViolation("; ".join(str(f) for f in findings))
    return report


def _check_nonneg(findings: list[Finding], name: str, value: float | None, required: bool) -> None:
    if value is None:
        if required:
            findings.append(Finding(name, "required"))
        return
    if not math.isfinite(value):
        findings.append(Finding(name, "must be finite"))
    elif value < 0:
        findings.append(Finding(name, "must be >= 0"))


def validate_report(report: MeasurementReport) -> list[Finding]:
    """Return one finding per violated invariant; empty when the report is valid."""
    findings: list[Finding] = []
    for name in ("download_mbps", "upload_mbps", "latency_idle_ms"):
        _check_nonneg(findings, name, getattr(report, name), required=True)
    for name in ("jitter_ms", "latency_dl_loaded_ms", "latency_ul_loaded_ms"):
        _check_nonneg(findings, name, getattr(report, name), required=False)

    loss = report.packet_loss_pct
    if loss is not None and not (math.isfinite(loss) and 0 <= loss <= 100):
        findings.append(Finding("packet_loss_pct", "must be within [0, 100]"))

    port = report.server.port
    if port is not None and not 1 <= port <= 65535:
        findings.append(Finding("server.port", "must be within [1, 65535]"))

    ts = report.timestamp_utc
    if not isinstance(ts, datetime) or ts.tzinfo is None:
        findings.append(Finding("timestamp_utc", "must be a timezone-aware instant"))
    return findings
