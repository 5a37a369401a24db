import dataclasses
import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import GENERATORS, fixture_text, fuzz_document
from netinterp.errors import InvalidOffset
from netinterp.ingest import parse_result
from netinterp.sanitizer import (
    RedactionRule,
    SanitizedReport,
    extract_time_of_day,
    find_leaks,
    sanitize_report,
    scrub_text,
)


def report_at(ts):
    return parse_result({"download": {"bandwidth": 1}, "upload": {"bandwidth": 1}, "ping": {"latency": 1}, "timestamp": ts})


@pytest.mark.parametrize(
    "ts,offset,hour",
    [
        ("2024-01-01T00:30:00Z", 0, 0),
        ("2024-01-01T23:30:00Z", 120, 1),
        ("2024-01-01T02:00:00Z", -480, 18),
        ("2024-01-01T12:00:00Z", 840, 2),
        ("2024-01-01T12:00:00Z", -720, 0),
    ],
)
def test_time_of_day(ts, offset, hour):
    assert extract_time_of_day(report_at(ts), offset) == hour


@pytest.mark.parametrize("offset", [841, -721, 1.5, True])
def test_time_of_day_bad_offset(offset):
    with pytest.raises(InvalidOffset):
        extract_time_of_day(report_at("2024-01-01T00:00:00Z"), offset)


@pytest.mark.parametrize(
    "text,expected",
    [
        ("server 203.0.113.7 ok", "server [REDACTED:ipv4] ok"),
        ("mac aa:bb:cc:dd:ee:ff", "mac [REDACTED:mac]"),
        ("see https://example.net/result/abc", "see [REDACTED:url]"),
        ("id 3fa85f64-5717-4562-b3fc-2c963f66afa6.", "id [REDACTED:opaque_id]."),
        ("v6 2001:db8::1 here", "v6 [REDACTED:ipv6] here"),
        ("full 2001:db8:0:0:8:800:200c:417a", "full [REDACTED:ipv6]"),
        ("mapped ::ffff:192.0.2.1", "mapped [REDACTED:ipv6]:[REDACTED:ipv4]"),
        ("plain text and 1.5.", "plain text and 1.5."),
        # broad on purpose: anything shaped like two hex groups goes
        ("at 12:30", "at [REDACTED:ipv6]"),
    ],
)
def test_scrub_text_examples(text, expected):
    assert scrub_text(text)[0] == expected


def test_scrub_ledger_counts():
    out, entries = scrub_text("a 1.2.3.4 b 5.6.7.8 c aa-bb-cc-dd-ee-ff", path="isp_name")
    assert sorted(e.kind for e in entries) == ["ipv4", "ipv4", "mac"]
    assert {e.path for e in entries} == {"isp_name"}
    assert find_leaks(out) == []


def test_control_characters_neutralized():
    # a backspace would serialize as \b, and "\b" + "ad:..." style splices
    # must not be able to build a new identifier after escaping
    out, _ = scrub_text("1.2.3\x00.4 x\x08y")
    assert "\x00" not in out and "\x08" not in out
    assert find_leaks(json.dumps(out, ensure_ascii=False)) == []


def test_placeholders_never_match():
    for kind in ("ipv4", "ipv6", "mac", "url", "opaque_id", "timestamp"):
        assert find_leaks(RedactionRule(kind, "x", "replace_token").placeholder) == []


def test_full_report_sanitized():
    r = parse_result(fixture_text("ookla_result.json"))
    s = sanitize_report(r)
    assert find_leaks(s.to_json()) == []
    assert len(s.ledger) >= 7
    assert s.time_of_day_hour == 18
    assert s.server_city == "Santa Barbara"
    assert s.server_country == "United States"
    assert s.isp_name == "Example Cable"
    assert s.metrics["download_mbps"] == 100.0
    dropped = {e.path for e in s.ledger}
    for path in (
        "client_interface.internal_ip",
        "client_interface.external_ip",
        "client_interface.mac_addr",
        "server.ip",
        "server.host",
        "server.id",
        "test_id",
        "result_url",
        "timestamp_utc",
    ):
        assert path in dropped
    # nothing from the raw document survives beyond the retained fields
    for secret in ("192.168.1.23", "A4:83:E7", "speedtest.example.net", "Example Networks", "en0"):
        assert secret not in s.to_json()


def test_report_without_identity_fields():
    s = sanitize_report(report_at("2024-01-01T00:30:00Z"))
    assert s.metrics == {"download_mbps": 8e-6, "upload_mbps": 8e-6, "latency_idle_ms": 1.0}
    assert s.time_of_day_hour == 0
    assert s.server_city is None and s.isp_name is None
    # only the consumed timestamp is recorded; there was nothing to scrub
    assert [(e.path, e.kind) for e in s.ledger] == [("timestamp_utc", "timestamp")]


def test_idempotent_on_fixture():
    s = sanitize_report(parse_result(fixture_text("ookla_result.json")))
    again = sanitize_report(SanitizedReport(**{f.name: getattr(s, f.name) for f in dataclasses.fields(s)}))
    assert again == s
    assert again.to_json() == s.to_json()


def test_retained_text_is_scrubbed():
    doc = json.loads(fixture_text("ookla_result.json"))
    doc["isp"] = "ISP via 10.0.0.1 and http://portal.example/x"
    s = sanitize_report(parse_result(doc))
    assert s.isp_name == "ISP via [REDACTED:ipv4] and [REDACTED:url]"
    assert {e.kind for e in s.ledger if e.path == "isp_name"} == {"ipv4", "url"}


def test_custom_field_rule_glob():
    rules = (RedactionRule("field_drop", "server.*", "remove_field"),)
    s = sanitize_report(parse_result(fixture_text("ookla_result.json")), rules)
    assert s.server_city is None and s.server_country is None


def test_bad_rule():
    with pytest.raises(ValueError):
        RedactionRule("ssn", "x", "remove_field")
    with pytest.raises(ValueError):
        RedactionRule("ipv4", "x", "shred")
    with pytest.raises(ValueError):
        RedactionRule("field_drop", "x", "replace_token")


def test_seeded_fuzz_corpus():
    rng = random.Random(20240514)
    for _ in range(300):
        s = sanitize_report(parse_result(fuzz_document(rng)), utc_offset_minutes=rng.randrange(-720, 841))
        assert find_leaks(s.to_json()) == []
        assert sanitize_report(s) == s


identifier = st.sampled_from(sorted(GENERATORS)).flatmap(
    lambda kind: st.randoms(use_true_random=False).map(lambda r: GENERATORS[kind](r))
)
filler = st.text(max_size=12)
embedded = st.lists(st.tuples(filler, identifier), min_size=1, max_size=4).map(
    lambda pairs: "".join(a + b for a, b in pairs)
)


@settings(max_examples=1000, deadline=None)
@given(isp=embedded, city=embedded, country=filler | embedded, tail=filler)
def test_hypothesis_no_leaks(isp, city, country, tail):
    doc = json.loads(fixture_text("ookla_result.json"))
    doc["isp"] = isp + tail
    doc["server"]["location"] = city
    doc["server"]["country"] = country
    s = sanitize_report(parse_result(doc))
    assert find_leaks(s.to_json()) == []
    assert sanitize_report(s) == s


@settings(max_examples=300, deadline=None)
@given(st.text())
def test_scrub_is_fixed_point(text):
    once, _ = scrub_text(text)
    twice, entries = scrub_text(once)
    assert twice == once and entries == []
    assert find_leaks(once) == []
