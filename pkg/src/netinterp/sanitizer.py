"""Removal of identifying data from measurement reports.

Field-level rules drop whole fields (addresses, identifiers, timestamps);
text-level rules replace matching substrings in whatever text survives
with ``[REDACTED:<kind>]`` placeholders. Every action is written to a
ledger that names the field and the kind of data, never the value.
"""

from __future__ import annotations

import dataclasses
import fnmatch
import json
import re
from dataclasses import dataclass
from datetime import timedelta
from typing import Any, Iterable, Mapping, Sequence

from netinterp.errors import InvalidOffset
from netinterp.ingest import METRIC_FIELDS, MeasurementReport

KINDS = ("ipv4", "ipv6", "mac", "url", "opaque_id", "timestamp", "field_drop")
ACTIONS = ("remove_field", "replace_token")

_HEX = r"[0-9A-Fa-f]{1,4}"

# Order matters: URLs swallow embedded addresses, UUIDs and MACs would
# otherwise be half-eaten by the IPv6 pattern, and IPv4 goes before IPv6 so
# an embedded dotted quad (::ffff:1.2.3.4) is taken whole. The IPv6 pattern
# is broad on purpose: any two or more colon-joined hex groups, so clock
# times such as 12:30 are redacted too.
URL_PATTERN = r"[A-Za-z][A-Za-z0-9+.\-]*://\S*"
UUID_PATTERN = r"[0-9A-Fa-f]{8}-[0-9A-Fa-f]{4}-[0-9A-Fa-f]{4}-[0-9A-Fa-f]{4}-[0-9A-Fa-f]{12}"
MAC_PATTERN = r"[0-9A-Fa-f]{2}(?:[:\-][0-9A-Fa-f]{2}){5}"
IPV6_PATTERN = (
    rf"(?:{_HEX}(?::{_HEX}){{0,6}})?::(?:{_HEX}(?::{_HEX}){{0,6}})?"
    rf"|{_HEX}(?::{_HEX}){{1,7}}"
)
IPV4_PATTERN = r"[0-9]{1,3}(?:\.[0-9]{1,3}){3}"

# Control characters and lone surrogates are neutralized before matching:
# JSON escapes them as \\b, \\f or \\u00XX, which could assemble new matches
# in the serialized form that were not present in the text.
_UNSAFE_CHARS = re.compile(r"[\x00-\x08\x0b\x0c\x0e-\x1f\x7f-\x9f\ud800-\udfff]")


@dataclass(frozen=True)
class RedactionRule:
    kind: str
    target: str
    action: str

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown redaction kind {self.kind!r}")
        if self.action not in ACTIONS:
            raise ValueError(f"unknown redaction action {self.action!r}")
        if self.action == "replace_token":
            # "[REDACTED:field_drop]" would itself match the IPv6 pattern
            if self.kind == "field_drop":
                raise ValueError("field_drop rules can only remove fields")
            re.compile(self.target)

    @property
    def placeholder(self) -> str:
        return f"[REDACTED:{self.kind}]"

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RedactionRule":
        return cls(kind=data["kind"], target=data["target"], action=data["action"])


@dataclass(frozen=True)
class RedactionEntry:
    path: str
    kind: str
    action: str

    def to_dict(self) -> dict[str, str]:
        return {"path": self.path, "kind": self.kind, "action": self.action}


FIELD_RULES: tuple[RedactionRule, ...] = (
    RedactionRule("field_drop", "client_interface.internal_ip", "remove_field"),
    RedactionRule("field_drop", "client_interface.external_ip", "remove_field"),
    RedactionRule("field_drop", "server.ip", "remove_field"),
    RedactionRule("mac", "client_interface.mac_addr", "remove_field"),
    RedactionRule("opaque_id", "test_id", "remove_field"),
    RedactionRule("opaque_id", "server.id", "remove_field"),
    RedactionRule("timestamp", "timestamp_utc", "remove_field"),
    RedactionRule("url", "result_url", "remove_field"),
    RedactionRule("field_drop", "server.host", "remove_field"),
)

TEXT_RULES: tuple[RedactionRule, ...] = (
    RedactionRule("url", URL_PATTERN, "replace_token"),
    RedactionRule("opaque_id", UUID_PATTERN, "replace_token"),
    RedactionRule("mac", MAC_PATTERN, "replace_token"),
    RedactionRule("ipv4", IPV4_PATTERN, "replace_token"),
    RedactionRule("ipv6", IPV6_PATTERN, "replace_token"),
)

DEFAULT_RULES: tuple[RedactionRule, ...] = FIELD_RULES + TEXT_RULES

# Text fields carried into a SanitizedReport. Anything else left after the
# field rules is dropped and ledgered (fail closed).
RETAINED_TEXT = {
    "server.city": "server_city",
    "server.country": "server_country",
    "isp_name": "isp_name",
}

_LEAK_RE = re.compile("|".join(f"(?:{r.target})" for r in TEXT_RULES))


def find_leaks(text: str) -> list[str]:
    """All substrings of ``text`` matching the default redaction patterns."""
    return [m.group(0) for m in _LEAK_RE.finditer(text)]


def load_rules(items: Iterable[Mapping[str, Any]]) -> tuple[RedactionRule, ...]:
    return tuple(RedactionRule.from_dict(item) for item in items)


@dataclass(frozen=True)
class SanitizedReport:
    metrics: dict[str, float]
    time_of_day_hour: int
    server_city: str | None = None
    server_country: str | None = None
    isp_name: str | None = None
    ledger: tuple[RedactionEntry, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "metrics": dict(self.metrics),
            "server_city": self.server_city,
            "server_country": self.server_country,
            "isp_name": self.isp_name,
            "time_of_day_hour": self.time_of_day_hour,
            "ledger": [e.to_dict() for e in self.ledger],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True)


def extract_time_of_day(report: MeasurementReport, utc_offset_minutes: int) -> int:
    """Local hour (0-23) of the measurement for a fixed UTC offset."""
    if (
        isinstance(utc_offset_minutes, bool)
        or not isinstance(utc_offset_minutes, int)
        or not -720 <= utc_offset_minutes <= 840
    ):
        raise InvalidOffset(f"utc offset must be an integer in [-720, 840], got {utc_offset_minutes!r}")
    local = report.timestamp_utc + timedelta(minutes=utc_offset_minutes)
    return local.hour


def scrub_text(
    text: str, rules: Sequence[RedactionRule] = TEXT_RULES, path: str = ""
) -> tuple[str, list[RedactionEntry]]:
    """Replace identifier-like substrings with placeholders.

    Rules apply in order and the pass repeats until nothing matches, so the
    result is a fixed point. ``path`` is copied into each ledger entry.
    """
    text = _UNSAFE_CHARS.sub("�", text)
    entries: list[RedactionEntry] = []
    compiled = [(r, re.compile(r.target)) for r in rules if r.action == "replace_token"]
    # each pass strictly shrinks the set of matchable characters; the bound
    # only guards against pathological user-supplied rules
    for _ in range(32):
        changed = False
        for rule, pattern in compiled:
            text, n = pattern.subn(rule.placeholder, text)
            if n:
                changed = True
                entries.extend(RedactionEntry(path, rule.kind, "replace_token") for _ in range(n))
        if not changed:
            break
    return text, entries


def _flatten(report: MeasurementReport) -> dict[str, Any]:
    flat: dict[str, Any] = {}
    for f in dataclasses.fields(report):
        if f.name == "raw":  # parser bookkeeping, never carried forward
            continue
        value = getattr(report, f.name)
        if dataclasses.is_dataclass(value):
            for sub in dataclasses.fields(value):
                inner = getattr(value, sub.name)
                if inner is not None:
                    flat[f"{f.name}.{sub.name}"] = inner
        elif value is not None and value != "":
            flat[f.name] = value
    return flat


def sanitize_report(
    report: MeasurementReport | SanitizedReport,
    rules: Sequence[RedactionRule] = DEFAULT_RULES,
    utc_offset_minutes: int = 0,
) -> SanitizedReport:
    """Strip identifying data from a report.

    A :class:`SanitizedReport` passed back in is rescrubbed; since the first
    pass already reached a fixed point this returns an equal object.
    """
    if isinstance(report, SanitizedReport):
        return _rescrub(report, rules)

    hour = extract_time_of_day(report, utc_offset_minutes)
    field_rules = [r for r in rules if r.action == "remove_field"]
    ledger: list[RedactionEntry] = []
    remaining: dict[str, Any] = {}
    for path, value in _flatten(report).items():
        rule = next((r for r in field_rules if fnmatch.fnmatchcase(path, r.target)), None)
        if rule is not None:
            ledger.append(RedactionEntry(path, rule.kind, "remove_field"))
        else:
            remaining[path] = value

    metrics = {name: remaining.pop(name) for name in METRIC_FIELDS if name in remaining}
    retained: dict[str, str] = {}
    for path, attr in RETAINED_TEXT.items():
        if path in remaining:
            scrubbed, entries = scrub_text(remaining.pop(path), rules, path)
            retained[attr] = scrubbed
            ledger.extend(entries)
    for path in sorted(remaining):
        ledger.append(RedactionEntry(path, "field_drop", "remove_field"))

    return SanitizedReport(
        metrics=metrics,
        time_of_day_hour=hour,
        ledger=tuple(ledger),
        **retained,
    )


def _rescrub(report: SanitizedReport, rules: Sequence[RedactionRule]) -> SanitizedReport:
    ledger = list(report.ledger)
    updates: dict[str, str] = {}
    for path, attr in RETAINED_TEXT.items():
        value = getattr(report, attr)
        if value is not None:
            updates[attr], entries = scrub_text(value, rules, path)
            ledger.extend(entries)
    return dataclasses.replace(report, ledger=tuple(ledger), **updates)
