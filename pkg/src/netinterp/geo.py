"""City-level geolocation of the client's public address.

The provider is any HTTP service answering ``GET <base_url>/<ip>`` with a
flat JSON object ``{city, region, country, lat, lon}``. Results are
coarsened to one decimal degree and never hold the queried address.
"""

from __future__ import annotations

import hashlib
import ipaddress
import math
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable, Mapping

import httpx

from netinterp.errors import NetInterpError
from netinterp.sanitizer import scrub_text

SOURCES = ("lookup", "configured", "unavailable")


class GeoError(NetInterpError):
    code = "geo_error"


class InvalidAddress(GeoError, ValueError):
    code = "invalid_address"


class PrivateAddress(GeoError):
    code = "private_address"


class ProviderTimeout(GeoError):
    code = "provider_timeout"


class ProviderError(GeoError):
    code = "provider_error"


class MissingCountry(GeoError, ValueError):
    code = "missing_country"


@dataclass(frozen=True)
class GeoContext:
    country: str | None
    city: str | None = None
    region: str | None = None
    approx_lat: float | None = None
    approx_lon: float | None = None
    source: str = "lookup"

    @classmethod
    def unavailable(cls) -> "GeoContext":
        return cls(country=None, source="unavailable")

    @property
    def available(self) -> bool:
        return self.source != "unavailable"

    def to_dict(self) -> dict[str, Any]:
        return {
            "city": self.city,
            "region": self.region,
            "country": self.country,
            "approx_lat": self.approx_lat,
            "approx_lon": self.approx_lon,
            "source": self.source,
        }


def _clean_text(value: Any) -> str | None:
    if value is None:
        return None
    text = " ".join(str(value).split())
    if not text:
        return None
    return scrub_text(text)[0]


def _coord(value: Any, limit: float) -> float | None:
    if value is None or isinstance(value, bool):
        return None
    try:
        number = float(value)
    except (TypeError, ValueError):
        return None
    if not math.isfinite(number) or abs(number) > limit:
        return None
    rounded = round(number, 1)
    return rounded + 0.0  # normalizes -0.0


def coarsen_geo(raw: Mapping[str, Any], include_coords: bool = True) -> GeoContext:
    """Reduce a provider location record to city granularity.

    Only city, region, country and rounded coordinates survive; postal
    codes, street data, timezones and anything else are discarded.
    Accepts the output of :meth:`GeoContext.to_dict` too.
    """
    country = raw.get("country")
    if not isinstance(country, str) or not country.strip():
        raise MissingCountry("location record has no country code")
    country = country.strip().upper()
    if len(country) != 2 or not country.isascii() or not country.isalpha():
        raise MissingCountry("country is not an ISO 3166-1 alpha-2 code")

    lat = lon = None
    if include_coords:
        lat = _coord(raw.get("lat", raw.get("approx_lat")), 90.0)
        lon = _coord(raw.get("lon", raw.get("approx_lon")), 180.0)
        if lat is None or lon is None:
            lat = lon = None

    source = raw.get("source", "lookup")
    return GeoContext(
        country=country,
        city=_clean_text(raw.get("city")),
        region=_clean_text(raw.get("region")),
        approx_lat=lat,
        approx_lon=lon,
        source=source if source in SOURCES else "lookup",
    )


def check_public_ip(ip: str) -> ipaddress.IPv4Address | ipaddress.IPv6Address:
    try:
        addr = ipaddress.ip_address(ip.strip())
    except ValueError as exc:
        raise InvalidAddress("not an IP address") from exc
    if (
        addr.is_private
        or addr.is_loopback
        or addr.is_link_local
        or addr.is_multicast
        or addr.is_reserved
        or addr.is_unspecified
    ):
        raise PrivateAddress("address is not publicly routable")
    return addr


class GeoClient:
    """Client for a flat-JSON geolocation HTTP API."""

    def __init__(
        self,
        base_url: str,
        timeout_ms: int = 2000,
        include_coords: bool = True,
        transport: httpx.BaseTransport | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.include_coords = include_coords
        self._http = httpx.Client(timeout=timeout_ms / 1000, transport=transport)

    def close(self) -> None:
        self._http.close()

    def lookup_ip(self, ip: str) -> GeoContext:
        addr = check_public_ip(ip)
        url = f"{self.base_url}/{addr.compressed}"
        try:
            resp = self._http.get(url)
        except httpx.TimeoutException as exc:
            raise ProviderTimeout("geolocation provider timed out") from exc
        except httpx.HTTPError as exc:
            # connection failures are treated like timeouts: provider unreachable
            raise ProviderTimeout(f"geolocation provider unreachable ({type(exc).__name__})") from exc
        if not resp.is_success:
            raise ProviderError(f"geolocation provider returned HTTP {resp.status_code}")
        try:
            body = resp.json()
        except ValueError as exc:
            raise ProviderError("geolocation provider returned a non-JSON body") from exc
        if not isinstance(body, Mapping):
            raise ProviderError("geolocation provider returned a non-object body")
        try:
            return coarsen_geo(body, include_coords=self.include_coords)
        except MissingCountry as exc:
            raise ProviderError("geolocation provider response has no country") from exc


def _cache_key(ip: str) -> str:
    # the cache is keyed by a digest so addresses are not kept in memory
    return hashlib.sha256(ipaddress.ip_address(ip.strip()).compressed.encode()).hexdigest()


class CachedGeoLookup:
    """TTL cache in front of :class:`GeoClient`. Thread-safe."""

    def __init__(
        self,
        client: GeoClient,
        ttl_seconds: int = 3600,
        clock: Callable[[], float] = time.monotonic,
    ):
        if ttl_seconds <= 0:
            raise ValueError("ttl_seconds must be > 0")
        self.client = client
        self.ttl_seconds = ttl_seconds
        self._clock = clock
        self._lock = threading.Lock()
        self._entries: dict[str, tuple[float, GeoContext]] = {}

    def lookup(self, ip: str) -> GeoContext:
        check_public_ip(ip)
        key = _cache_key(ip)
        now = self._clock()
        with self._lock:
            hit = self._entries.get(key)
            if hit is not None and hit[0] > now:
                return hit[1]
        geo = self.client.lookup_ip(ip)
        with self._lock:
            self._entries[key] = (self._clock() + self.ttl_seconds, geo)
        return geo

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()

