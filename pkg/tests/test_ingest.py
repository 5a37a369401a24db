import json
import math
import random
from datetime import datetime, timezone

import pytest

from helpers import fixture_text
from netinterp.errors import MalformedDocument, MissingRequiredField, RangeViolation
from netinterp.ingest import (
    MeasurementReport,
    convert_bandwidth,
    parse_result,
    parse_timestamp,
    validate_report,
)


def full_doc():
    return json.loads(fixture_text("ookla_result.json"))


@pytest.mark.parametrize("bps,mbps", [(0, 0.0), (125_000, 1.0), (12_500_000, 100.0)])
def test_convert_bandwidth_exact(bps, mbps):
    assert convert_bandwidth(bps) == mbps


@pytest.mark.parametrize("bad", [-1, -5.0, math.inf, math.nan, "12", True, None])
def test_convert_bandwidth_rejects(bad):
    with pytest.raises(RangeViolation):
        convert_bandwidth(bad)


def test_convert_bandwidth_linear_on_integers():
    rng = random.Random(8)
    for _ in range(1000):
        a, b = rng.randrange(10**10), rng.randrange(10**10)
        whole = convert_bandwidth(a + b)
        assert abs(convert_bandwidth(a) + convert_bandwidth(b) - whole) <= math.ulp(whole)


def test_parse_full_fixture():
    r = parse_result(fixture_text("ookla_result.json"))
    assert r.download_mbps == 100.0
    assert r.upload_mbps == 20.0
    assert r.latency_idle_ms == 14.823
    assert r.jitter_ms == 1.214
    assert r.latency_dl_loaded_ms == 45.117
    assert r.latency_ul_loaded_ms == 62.5
    assert r.packet_loss_pct == 0.4
    assert r.isp_name == "Example Cable"
    assert r.server.city == "Santa Barbara"
    assert r.server.port == 8080
    assert r.client_interface.mac_addr == "A4:83:E7:12:34:56"
    assert r.client_interface.is_vpn is False
    assert r.timestamp_utc == datetime(2024, 5, 14, 18, 42, 11, tzinfo=timezone.utc)
    assert r.raw_document() == full_doc()


def test_parse_accepts_bytes_and_mapping():
    text = fixture_text("ookla_result.json")
    a = parse_result(text.encode())
    b = parse_result(json.loads(text))
    assert a.metrics() == b.metrics()


def test_missing_packet_loss_is_not_an_error():
    doc = full_doc()
    del doc["packetLoss"]
    r = parse_result(doc)
    assert r.packet_loss_pct is None
    assert "packet_loss_pct" not in r.metrics()


def test_negative_bandwidth_is_range_violation():
    doc = full_doc()
    doc["download"]["bandwidth"] = -5
    with pytest.raises(RangeViolation):
        parse_result(doc)


@pytest.mark.parametrize(
    "path,field",
    [
        (("download", "bandwidth"), "download"),
        (("upload", "bandwidth"), "upload"),
        (("timestamp",), "timestamp"),
        (("ping", "latency"), "latency"),
    ],
)
def test_missing_required(path, field):
    doc = full_doc()
    node = doc
    for key in path[:-1]:
        node = node[key]
    del node[path[-1]]
    with pytest.raises(MissingRequiredField) as info:
        parse_result(doc)
    assert field in str(info.value)


@pytest.mark.parametrize(
    "raw", ["", "not json", "[1, 2]", b"\xff\xfe", '{"download": {"bandwidth": "fast"}}']
)
def test_malformed(raw):
    with pytest.raises(MalformedDocument):
        parse_result(raw)


def test_bad_timestamp():
    doc = full_doc()
    doc["timestamp"] = "yesterday"
    with pytest.raises(MalformedDocument):
        parse_result(doc)


def test_naive_timestamp_taken_as_utc():
    assert parse_timestamp("2024-01-01T05:00:00") == datetime(2024, 1, 1, 5, tzinfo=timezone.utc)
    assert parse_timestamp("2024-01-01T07:00:00+02:00") == datetime(2024, 1, 1, 5, tzinfo=timezone.utc)


def test_field_map_override():
    doc = full_doc()
    doc["speeds"] = {"down": doc.pop("download")["bandwidth"]}
    r = parse_result(doc, {"download_bandwidth": "speeds.down", "latency_dl_loaded_ms": "nowhere"})
    assert r.download_mbps == 100.0
    assert r.latency_dl_loaded_ms is None


def test_field_map_unknown_key():
    with pytest.raises(ValueError):
        parse_result(full_doc(), {"bogus": "x"})


def test_validate_valid_report_is_empty():
    assert validate_report(parse_result(full_doc())) == []


def _report(**kw):
    base = dict(
        download_mbps=1.0,
        upload_mbps=1.0,
        latency_idle_ms=1.0,
        timestamp_utc=datetime(2024, 1, 1, tzinfo=timezone.utc),
    )
    base.update(kw)
    return MeasurementReport(**base)


def test_validate_packet_loss_bound():
    findings = validate_report(_report(packet_loss_pct=150))
    assert [f.field for f in findings] == ["packet_loss_pct"]


def test_validate_port_bound():
    from netinterp.ingest import ServerInfo

    findings = validate_report(_report(server=ServerInfo(port=0)))
    assert [f.field for f in findings] == ["server.port"]


def test_port_zero_in_document_fails_parse():
    doc = full_doc()
    doc["server"]["port"] = 0
    with pytest.raises(RangeViolation):
        parse_result(doc)
