"""Historical measurement store built from FCC MBA style CSV exports.

MBA throughput tables key rows by panel unit id, not by place, so ingest
joins each unit against a separate unit-location CSV
(``unit_id,city,region,country[,utc_offset_minutes]``). Unit ids are
pseudonymized before storage.

Storage sits behind :class:`RecordStore`; :class:`SQLiteStore` is the
embedded implementation (in memory or file backed).
"""

from __future__ import annotations

import abc
import csv
import hashlib
import math
import sqlite3
import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any, Mapping, Sequence

from netinterp.errors import NetInterpError, RangeViolation
from netinterp.ingest import MalformedDocument, convert_bandwidth, parse_timestamp

DIRECTIONS = ("download", "upload")
DEFAULT_MAX_LIMIT = 500


class KnowledgeBaseError(NetInterpError):
    code = "kb_error"


class AllComponentsEmpty(KnowledgeBaseError, ValueError):
    code = "all_components_empty"


class HeaderMismatch(KnowledgeBaseError):
    code = "header_mismatch"


class StorageFailure(KnowledgeBaseError):
    code = "storage_failure"


def normalize_location(
    city: str | None = None, region: str | None = None, country: str | None = None
) -> str:
    """Build the ``city|region|country`` join key used by the store."""
    parts = [" ".join((p or "").split()).lower() for p in (city, region, country)]
    if not any(parts):
        raise AllComponentsEmpty("at least one location component is required")
    return "|".join(parts)


def pseudonymize_unit(unit_id: str) -> str:
    return hashlib.sha256(f"mba-unit:{unit_id.strip()}".encode()).hexdigest()[:16]


def hour_distance(a: int, b: int) -> int:
    d = abs(a - b) % 24
    return min(d, 24 - d)


@dataclass(frozen=True)
class HistoricalRecord:
    unit_pseudonym: str
    location_key: str
    direction: str
    measured_at_utc: datetime
    hour_local: int
    throughput_mbps: float
    fetch_time_ms: float | None = None
    isp: str | None = None

    def __post_init__(self) -> None:
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        if not 0 <= self.hour_local <= 23:
            raise ValueError("hour_local must be in [0, 23]")
        if not math.isfinite(self.throughput_mbps) or self.throughput_mbps < 0:
            raise ValueError("throughput_mbps must be finite and >= 0")
        if self.fetch_time_ms is not None and (
            not math.isfinite(self.fetch_time_ms) or self.fetch_time_ms < 0
        ):
            raise ValueError("fetch_time_ms must be finite and >= 0")
        if self.measured_at_utc.tzinfo is None:
            raise ValueError("measured_at_utc must be timezone aware")
        parts = self.location_key.split("|")
        if len(parts) != 3 or normalize_location(*parts) != self.location_key:
            raise ValueError("location_key is not normalized")


@dataclass(frozen=True)
class RetrievalQuery:
    location_key: str
    hour_local: int
    direction: str
    window_hours: int = 1
    limit: int = 200
    max_limit: int = DEFAULT_MAX_LIMIT

    def __post_init__(self) -> None:
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        if not 0 <= self.hour_local <= 23:
            raise ValueError("hour_local must be in [0, 23]")
        if self.window_hours < 0:
            raise ValueError("window_hours must be >= 0")
        if not 0 < self.limit <= self.max_limit:
            raise ValueError(f"limit must be in [1, {self.max_limit}]")

    def matches(self, record: HistoricalRecord) -> bool:
        return (
            record.location_key == self.location_key
            and record.direction == self.direction
            and hour_distance(record.hour_local, self.hour_local) <= self.window_hours
        )


class RecordStore(abc.ABC):
    """Storage contract for historical records."""

    @abc.abstractmethod
    def add_records(self, records: Sequence[HistoricalRecord]) -> int:
        """Insert all records in one transaction; nothing is stored on failure."""

    @abc.abstractmethod
    def query_similar(self, q: RetrievalQuery) -> list[HistoricalRecord]:
        ...

    @abc.abstractmethod
    def record_count(self, location_key: str | None = None) -> int:
        ...

    @abc.abstractmethod
    def location_keys(self) -> list[str]:
        ...

    def close(self) -> None:
        pass


_SCHEMA = """
CREATE TABLE IF NOT EXISTS historical_record (
    id INTEGER PRIMARY KEY,
    unit_pseudonym TEXT NOT NULL,
    location_key TEXT NOT NULL,
    direction TEXT NOT NULL CHECK (direction IN ('download', 'upload')),
    measured_at_us INTEGER NOT NULL,
    hour_local INTEGER NOT NULL CHECK (hour_local BETWEEN 0 AND 23),
    throughput_mbps REAL NOT NULL CHECK (throughput_mbps >= 0),
    fetch_time_ms REAL,
    isp TEXT
);
CREATE INDEX IF NOT EXISTS ix_record_loc_dir
    ON historical_record (location_key, direction, hour_local);
"""

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


def _to_us(ts: datetime) -> int:
    return (ts - _EPOCH) // timedelta(microseconds=1)


def _from_us(us: int) -> datetime:
    return _EPOCH + timedelta(microseconds=us)


class SQLiteStore(RecordStore):
    """Embedded store. ``path=":memory:"`` for a throwaway instance.

    Order of ``query_similar`` results: newest first, then unit pseudonym
    ascending, then insertion order.
    """

    def __init__(self, path: str | Path = ":memory:"):
        self.path = str(path)
        self._lock = threading.RLock()
        try:
            self._conn = sqlite3.connect(self.path, check_same_thread=False, isolation_level=None)
            self._conn.executescript(_SCHEMA)
        except sqlite3.Error as exc:
            raise StorageFailure(f"cannot open store: {exc}") from exc

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    def add_records(self, records: Sequence[HistoricalRecord]) -> int:
        rows = [
            (
                r.unit_pseudonym,
                r.location_key,
                r.direction,
                _to_us(r.measured_at_utc),
                r.hour_local,
                r.throughput_mbps,
                r.fetch_time_ms,
                r.isp,
            )
            for r in records
        ]
        with self._lock:
            try:
                self._conn.execute("BEGIN IMMEDIATE")
                self._conn.executemany(
                    "INSERT INTO historical_record (unit_pseudonym, location_key, direction,"
                    " measured_at_us, hour_local, throughput_mbps, fetch_time_ms, isp)"
                    " VALUES (?, ?, ?, ?, ?, ?, ?, ?)",
                    rows,
                )
                self._conn.execute("COMMIT")
            except sqlite3.Error as exc:
                if self._conn.in_transaction:
                    self._conn.execute("ROLLBACK")
                raise StorageFailure(f"insert failed: {exc}") from exc
        return len(rows)

    def query_similar(self, q: RetrievalQuery) -> list[HistoricalRecord]:
        sql = (
            "SELECT unit_pseudonym, location_key, direction, measured_at_us, hour_local,"
            " throughput_mbps, fetch_time_ms, isp FROM historical_record"
            " WHERE location_key = ? AND direction = ?"
            " AND min(abs(hour_local - ?), 24 - abs(hour_local - ?)) <= ?"
            " ORDER BY measured_at_us DESC, unit_pseudonym ASC, id ASC LIMIT ?"
        )
        params = (q.location_key, q.direction, q.hour_local, q.hour_local, q.window_hours, q.limit)
        with self._lock:
            try:
                rows = self._conn.execute(sql, params).fetchall()
            except sqlite3.Error as exc:
                raise StorageFailure(f"query failed: {exc}") from exc
        return [
            HistoricalRecord(
                unit_pseudonym=u,
                location_key=loc,
                direction=d,
                measured_at_utc=_from_us(ts),
                hour_local=h,
                throughput_mbps=tp,
                fetch_time_ms=ft,
                isp=isp,
            )
            for u, loc, d, ts, h, tp, ft, isp in rows
        ]

    def record_count(self, location_key: str | None = None) -> int:
        with self._lock:
            try:
                if location_key is None:
                    row = self._conn.execute("SELECT count(*) FROM historical_record").fetchone()
                else:
                    row = self._conn.execute(
                        "SELECT count(*) FROM historical_record WHERE location_key = ?",
                        (location_key,),
                    ).fetchone()
            except sqlite3.Error as exc:
                raise StorageFailure(f"count failed: {exc}") from exc
        return int(row[0])

    def location_keys(self) -> list[str]:
        with self._lock:
            try:
                rows = self._conn.execute(
                    "SELECT DISTINCT location_key FROM historical_record ORDER BY location_key"
                ).fetchall()
            except sqlite3.Error as exc:
                raise StorageFailure(f"query failed: {exc}") from exc
        return [r[0] for r in rows]


def query_similar(store: RecordStore, q: RetrievalQuery) -> list[HistoricalRecord]:
    return store.query_similar(q)


def record_count(store: RecordStore, location_key: str | None = None) -> int:
    return store.record_count(location_key)


# --- CSV ingest -------------------------------------------------------------

THROUGHPUT_UNITS = {
    "bytes_per_second": convert_bandwidth,
    "bits_per_second": lambda v: v / 1e6,
    "mbps": lambda v: v,
}
FETCH_TIME_UNITS = {"us": 1e-3, "ms": 1.0, "s": 1e3}


@dataclass(frozen=True)
class ColumnMap:
    """Which CSV columns feed a record, and in which units.

    The defaults follow the MBA ``curr_httpgetmt``/``curr_httppostmt`` layout
    (``unit_id, dtime, target, address, fetch_time, bytes_total, bytes_sec,
    ...``). ``fetch_time_unit`` must be stated whenever ``fetch_time`` is
    mapped.
    """

    unit_id: str = "unit_id"
    timestamp: str = "dtime"
    throughput: str = "bytes_sec"
    throughput_unit: str = "bytes_per_second"
    fetch_time: str | None = "fetch_time"
    fetch_time_unit: str | None = "us"
    isp: str | None = None

    def __post_init__(self) -> None:
        if self.throughput_unit not in THROUGHPUT_UNITS:
            raise ValueError(f"throughput_unit must be one of {sorted(THROUGHPUT_UNITS)}")
        if self.fetch_time is not None and self.fetch_time_unit not in FETCH_TIME_UNITS:
            raise ValueError(
                f"fetch_time_unit must be one of {sorted(FETCH_TIME_UNITS)} when fetch_time is mapped"
            )

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ColumnMap":
        unknown = set(data) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown column map keys: {sorted(unknown)}")
        return cls(**data)

    def required_columns(self) -> list[str]:
        cols = [self.unit_id, self.timestamp, self.throughput]
        cols += [c for c in (self.fetch_time, self.isp) if c is not None]
        return cols


@dataclass(frozen=True)
class UnitLocation:
    location_key: str
    utc_offset_minutes: int | None = None


def load_unit_locations(path: str | Path) -> dict[str, UnitLocation]:
    """Read ``unit_id,city,region,country[,utc_offset_minutes]``."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = {"unit_id", "city", "region", "country"} - set(header)
        if missing:
            raise HeaderMismatch(f"unit location file lacks columns {sorted(missing)}")
        units: dict[str, UnitLocation] = {}
        for row in reader:
            unit = (row.get("unit_id") or "").strip()
            if not unit:
                continue
            try:
                key = normalize_location(row.get("city"), row.get("region"), row.get("country"))
            except AllComponentsEmpty:
                continue
            offset = (row.get("utc_offset_minutes") or "").strip()
            units[unit] = UnitLocation(key, int(offset) if offset else None)
    return units


@dataclass
class IngestResult:
    ingested: int = 0
    skipped: int = 0
    skip_reasons: dict[str, int] = field(default_factory=dict)

    @property
    def total_rows(self) -> int:
        return self.ingested + self.skipped

    def skip(self, reason: str) -> None:
        self.skipped += 1
        self.skip_reasons[reason] = self.skip_reasons.get(reason, 0) + 1


def _parse_float(text: str | None) -> float:
    if text is None:
        raise ValueError("missing value")
    value = float(text)
    if not math.isfinite(value):
        raise ValueError("non-finite value")
    return value


def ingest_csv(
    store: RecordStore,
    path: str | Path,
    direction: str,
    unit_locations: Mapping[str, UnitLocation],
    column_map: ColumnMap | None = None,
    utc_offset_source: str = "map",
) -> IngestResult:
    """Load one MBA-layout CSV into ``store``.

    Malformed rows are skipped and counted by reason. The file is stored
    in a single transaction: either every well-formed row lands or none.
    ``utc_offset_source`` is ``"map"`` (local hour from the unit's offset)
    or ``"utc"``.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    if utc_offset_source not in ("map", "utc"):
        raise ValueError("utc_offset_source must be 'map' or 'utc'")
    cmap = column_map or ColumnMap()
    convert = THROUGHPUT_UNITS[cmap.throughput_unit]
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))

    result = IngestResult()
    records: list[HistoricalRecord] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise HeaderMismatch("file has no header row")
        header = [h.strip() for h in header]
        missing = [c for c in cmap.required_columns() if c not in header]
        if missing:
            raise HeaderMismatch(f"mapped columns absent from header: {missing}")

        for raw_row in reader:
            if len(raw_row) != len(header):
                result.skip("empty row" if not raw_row else "column count")
                continue
            row = dict(zip(header, raw_row))
            unit = row[cmap.unit_id].strip()
            loc = unit_locations.get(unit)
            if loc is None:
                result.skip("unknown unit")
                continue
            try:
                measured = parse_timestamp(row[cmap.timestamp])
                throughput = convert(_parse_float(row[cmap.throughput]))
                if throughput < 0:
                    raise ValueError("negative throughput")
                fetch_ms = None
                if cmap.fetch_time is not None and row[cmap.fetch_time].strip():
                    fetch_ms = _parse_float(row[cmap.fetch_time]) * FETCH_TIME_UNITS[cmap.fetch_time_unit]
                    if fetch_ms < 0:
                        raise ValueError("negative fetch time")
            except (ValueError, MalformedDocument, RangeViolation):
                result.skip("bad value")
                continue
            if utc_offset_source == "map":
                if loc.utc_offset_minutes is None:
                    result.skip("no utc offset")
                    continue
                hour = (measured + timedelta(minutes=loc.utc_offset_minutes)).hour
            else:
                hour = measured.hour
            isp = (row[cmap.isp].strip() or None) if cmap.isp is not None else None
            records.append(
                HistoricalRecord(
                    unit_pseudonym=pseudonymize_unit(unit),
                    location_key=loc.location_key,
                    direction=direction,
                    measured_at_utc=measured,
                    hour_local=hour,
                    throughput_mbps=throughput,
                    fetch_time_ms=fetch_ms,
                    isp=isp,
                )
            )
    result.ingested = store.add_records(records)
    return result
