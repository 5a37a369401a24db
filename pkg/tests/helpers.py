"""Shared test helpers: fixtures on disk, stub transports, generators, oracles."""

from __future__ import annotations

import json
import math
import random
import uuid
from datetime import datetime, timedelta, timezone
from pathlib import Path

import httpx

from netinterp.kb import HistoricalRecord, hour_distance
from netinterp.llm import ChatRequest, ChatResponse, Exhausted

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"

GEO_RECORD = {
    "city": "Santa Barbara",
    "region": "California",
    "country": "US",
    "lat": 34.4208,
    "lon": -119.6982,
    "postal": "93101",
    "timezone": "America/Los_Angeles",
}

MODEL_REPLY = """<think>The user has 100 Mbps down. Compare with peers.</think>
OVERALL:
Your connection is fast and steady for a typical household.

METRICS:
- Download speed: 100 Mbps is plenty for several HD streams at once.
- Upload speed: 20 Mbps handles video calls and photo uploads comfortably.
- Latency (idle): about 15 ms, so the connection feels responsive.
- Packet loss: 0.4 percent is low but worth watching.

USE CASES:
- Online gaming: smooth for most games.
- Video streaming: 4K streaming should work.
- Web browsing: pages load quickly.

RECOMMENDATIONS:
- Move the Wi-Fi router to a central spot if some rooms feel slow.
"""


def fixture_text(name: str) -> str:
    return (FIXTURES / name).read_text("utf-8")


def geo_transport(mode: str = "up", record: dict | None = None, calls: list | None = None) -> httpx.MockTransport:
    """Stub geolocation provider. ``calls`` collects every request URL."""

    def handler(request: httpx.Request) -> httpx.Response:
        if calls is not None:
            calls.append(str(request.url))
        if mode == "down":
            raise httpx.ConnectTimeout("stub provider is down", request=request)
        if mode == "500":
            return httpx.Response(500, text="boom")
        return httpx.Response(200, json=record or GEO_RECORD)

    return httpx.MockTransport(handler)


class FailingBackend:
    def __init__(self) -> None:
        self.calls: list[ChatRequest] = []

    def complete(self, request: ChatRequest) -> ChatResponse:
        self.calls.append(request)
        raise Exhausted("gave up after 3 attempts (last: HTTP 503)")


class EchoBackend:
    """Labeled reply that repeats the prompt text, to test leak-freedom end to end."""

    def __init__(self) -> None:
        self.calls: list[ChatRequest] = []

    def complete(self, request: ChatRequest) -> ChatResponse:
        self.calls.append(request)
        user = request.messages[-1].content
        return ChatResponse(
            content=f"<think>{user}</think>OVERALL:\n{user}\nMETRICS:\n- Download: {user[:200]}\n",
            model_id="echo",
        )


# --- knowledge base ---------------------------------------------------------

LOCATIONS = ["santa barbara|california|us", "austin|texas|us", "berlin||de", "||fr"]


def random_records(rng: random.Random, n: int, units: int = 40) -> list[HistoricalRecord]:
    base = datetime(2023, 9, 1, tzinfo=timezone.utc)
    out = []
    for _ in range(n):
        out.append(
            HistoricalRecord(
                unit_pseudonym=f"u{rng.randrange(units):04d}",
                location_key=rng.choice(LOCATIONS),
                direction=rng.choice(("download", "upload")),
                # coarse timestamps so ties on time (and on time + unit) occur
                measured_at_utc=base + timedelta(minutes=30 * rng.randrange(400)),
                hour_local=rng.randrange(24),
                throughput_mbps=rng.uniform(0, 1000),
                fetch_time_ms=rng.choice([None, rng.uniform(1, 5000)]),
            )
        )
    return out


def brute_force_query(records, location_key, hour, window, direction, limit):
    """Linear filter + stable sort; insertion order breaks remaining ties."""
    hits = [
        r
        for r in records
        if r.location_key == location_key
        and r.direction == direction
        and hour_distance(r.hour_local, hour) <= window
    ]
    hits.sort(key=lambda r: r.unit_pseudonym)
    hits.sort(key=lambda r: r.measured_at_utc, reverse=True)
    return hits[:limit]


# --- statistics oracle ------------------------------------------------------

def oracle_stats(values: list[float], current: float) -> dict:
    """Textbook formulas with plain summation and a sort-based rank count."""
    n = len(values)
    if n == 0:
        return {"n": 0, "mean": None, "median": None, "stddev": None, "rank": None}
    mean = sum(values) / n
    ordered = sorted(values)
    if n % 2:
        median = ordered[n // 2]
    else:
        median = (ordered[n // 2 - 1] + ordered[n // 2]) / 2
    stddev = None
    if n >= 2:
        stddev = (sum((v - mean) ** 2 for v in values) / (n - 1)) ** 0.5
    lo = 0
    while lo < n and ordered[lo] < current:
        lo += 1
    hi = lo
    while hi < n and ordered[hi] == current:
        hi += 1
    return {"n": n, "mean": mean, "median": median, "stddev": stddev, "rank": (lo + (hi - lo) / 2) / n}


def close(a, b, rel=1e-9) -> bool:
    if a is None or b is None:
        return a is b
    return math.isclose(a, b, rel_tol=rel, abs_tol=1e-12)


# --- identifier fuzzing -----------------------------------------------------

_NOISE = (
    "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"
    " .,;:-_/\\[](){}<>!?@#%&*+=\"'|~`^$\t\n\r\x00\x08\x0c\x1b\x7f"
    "éüßøñ中文日本語Ωπ€✓​"
)


def random_ipv4(rng: random.Random) -> str:
    return ".".join(str(rng.randrange(256)) for _ in range(4))


def random_ipv6(rng: random.Random) -> str:
    groups = [f"{rng.randrange(0x10000):x}" for _ in range(8)]
    form = rng.randrange(3)
    if form == 0:
        return ":".join(groups)
    if form == 1:
        cut = rng.randrange(1, 7)
        keep = rng.randrange(0, 8 - cut)
        return ":".join(groups[:keep]) + "::" + ":".join(groups[keep + cut:])
    return "fe80::" + ":".join(groups[:rng.randrange(1, 5)])


def random_mac(rng: random.Random) -> str:
    sep = rng.choice(":-")
    octets = [f"{rng.randrange(256):02x}" for _ in range(6)]
    mac = sep.join(octets)
    return mac.upper() if rng.random() < 0.5 else mac


def random_url(rng: random.Random) -> str:
    scheme = rng.choice(["http", "https", "ftp", "ws"])
    host = rng.choice(["example.net", "speedtest.example.org", random_ipv4(rng)])
    path = "/".join(rng.choice(["result", "c", str(uuid.UUID(int=rng.getrandbits(128))), "x?y=1"]) for _ in range(rng.randrange(3)))
    return f"{scheme}://{host}/{path}"


def random_uuid(rng: random.Random) -> str:
    return str(uuid.UUID(int=rng.getrandbits(128), version=4))


GENERATORS = {
    "ipv4": random_ipv4,
    "ipv6": random_ipv6,
    "mac": random_mac,
    "url": random_url,
    "uuid": random_uuid,
}


def noisy_text(rng: random.Random, identifiers: int = 2, planted: list | None = None) -> str:
    pieces = []
    for _ in range(identifiers):
        pieces.append("".join(rng.choice(_NOISE) for _ in range(rng.randrange(0, 8))))
        ident = GENERATORS[rng.choice(list(GENERATORS))](rng)
        if planted is not None:
            planted.append(ident)
        pieces.append(ident)
    pieces.append("".join(rng.choice(_NOISE) for _ in range(rng.randrange(0, 8))))
    return "".join(pieces)


# text fields of the source document that can carry arbitrary strings
TEXT_PATHS = [
    ("isp",),
    ("server", "name"),
    ("server", "location"),
    ("server", "country"),
    ("server", "host"),
    ("interface", "name"),
    ("result", "id"),
    ("result", "url"),
    ("extra", "note"),
]


def fuzz_document(rng: random.Random, planted: list | None = None) -> dict:
    """An Ookla-shaped result with identifiers planted in random text fields.

    Every planted identifier is appended to ``planted`` when given.
    """
    doc = json.loads(fixture_text("ookla_result.json"))
    doc["timestamp"] = (
        datetime(2024, 1, 1, tzinfo=timezone.utc) + timedelta(minutes=rng.randrange(525600))
    ).isoformat().replace("+00:00", "Z")
    doc["download"]["bandwidth"] = rng.uniform(0, 1.25e8)
    doc["upload"]["bandwidth"] = rng.uniform(0, 5e7)
    doc["ping"]["latency"] = rng.uniform(1, 300)
    doc["packetLoss"] = rng.choice([None, rng.uniform(0, 100)])
    doc["interface"]["externalIp"] = rng.choice([random_ipv4(rng), random_ipv6(rng), "8.8.8.8"])
    doc["interface"]["macAddr"] = random_mac(rng)
    if planted is not None:
        planted += [doc["interface"]["externalIp"], doc["interface"]["macAddr"]]
        planted += [doc["interface"]["internalIp"], doc["server"]["ip"], doc["result"]["id"], doc["result"]["url"]]
    doc.setdefault("extra", {})
    for path in rng.sample(TEXT_PATHS, rng.randrange(1, len(TEXT_PATHS) + 1)):
        node = doc
        for key in path[:-1]:
            node = node.setdefault(key, {})
        node[path[-1]] = noisy_text(rng, rng.randrange(1, 4), planted)
    return doc


# --- MBA-layout CSV files ---------------------------------------------------

MBA_HEADER = [
    "unit_id", "dtime", "target", "address", "fetch_time", "bytes_total",
    "bytes_sec", "bytes_sec_interval", "warmup_time", "warmup_bytes",
    "sequence", "threads", "successes", "failures", "location_id",
]

UNIT_LOCATIONS = [
    # unit_id, city, region, country, utc_offset_minutes
    ("386", "Santa Barbara", "California", "US", "-480"),
    ("412", "Austin", "Texas", "US", "-360"),
    ("977", "Berlin", "", "DE", "60"),
    ("1203", "Boston", "Massachusetts", "US", ""),
]


def write_unit_locations(path: Path, rows=UNIT_LOCATIONS) -> Path:
    lines = ["unit_id,city,region,country,utc_offset_minutes"]
    lines += [",".join(r) for r in rows]
    path.write_text("\n".join(lines) + "\n", "utf-8")
    return path


def mba_row(rng: random.Random, unit: str = "386") -> list[str]:
    ts = datetime(2023, 9, 1) + timedelta(seconds=rng.randrange(30 * 86400))
    return [
        unit, ts.strftime("%Y-%m-%d %H:%M:%S"), "sp1-vm-newyork-us.samknows.com", "151.139.31.1",
        str(rng.randrange(5_000_000, 15_000_000)), str(rng.randrange(10**8, 10**9)),
        str(rng.randrange(10**6, 10**8)), "0", "2000000", "1000000", "1", "3", "1", "0", "0",
    ]


def write_mba_csv(path: Path, rows: list[list[str]], header=MBA_HEADER) -> Path:
    import csv

    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


# --- pipeline assembly ------------------------------------------------------

# The fixture was measured at 18:42 UTC; at UTC-7 that is local hour 11.
FIXTURE_OFFSET = -420
FIXTURE_LOCATION = "santa barbara|california|us"
# key derived from the report's own server fields when geolocation is down
SERVER_LOCATION = "santa barbara||united states"


def fixture_config(**overrides):
    from netinterp.config import PipelineConfig

    return PipelineConfig(utc_offset_minutes=FIXTURE_OFFSET, **overrides)


def seeded_store(populated: bool = True):
    from netinterp.kb import SQLiteStore

    store = SQLiteStore()
    if populated:
        rng = random.Random(7)
        base = datetime(2023, 9, 1, tzinfo=timezone.utc)
        recs = []
        for i in range(90):
            direction = "download" if i % 2 == 0 else "upload"
            scale = 120 if direction == "download" else 20
            recs.append(
                HistoricalRecord(
                    unit_pseudonym=f"{i % 9:016x}",
                    location_key=FIXTURE_LOCATION if i < 60 else SERVER_LOCATION,
                    direction=direction,
                    measured_at_utc=base + timedelta(hours=i),
                    hour_local=(9 + i) % 5 + 9,
                    throughput_mbps=round(rng.uniform(0.2, 1.6) * scale, 3),
                    fetch_time_ms=round(rng.uniform(500, 9000), 1),
                )
            )
        store.add_records(recs)
    return store


def make_pipeline(geo: str = "up", kb: bool = True, llm=None, cfg=None):
    from netinterp.geo import CachedGeoLookup, GeoClient
    from netinterp.pipeline import Pipeline

    lookup = CachedGeoLookup(GeoClient("http://geo.test/json", transport=geo_transport(geo)))
    return Pipeline(cfg or fixture_config(), llm=llm, geo=lookup, store=seeded_store(kb))


def request_for(bundle, cfg=None) -> ChatRequest:
    cfg = cfg or fixture_config()
    return ChatRequest.for_prompt(
        cfg.llm.model,
        bundle.system_text,
        bundle.user_text,
        temperature=cfg.llm.temperature,
        max_tokens=cfg.llm.max_tokens,
    )


def render_prompt(bundle) -> str:
    """Golden-file layout of a prompt bundle."""
    return f"=== SYSTEM ===\n{bundle.system_text}\n=== USER ===\n{bundle.user_text}\n"
