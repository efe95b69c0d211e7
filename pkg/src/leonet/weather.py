"""Weather providers: clear sky, CSV fixture replay, and the live OpenWeatherMap client."""

from __future__ import annotations

import csv
import math
import os
import threading
from dataclasses import dataclass
from datetime import datetime, timezone

OWM_URL = "https://api.openweathermap.org/data/2.5/weather"
FIXTURE_COLUMNS = ["lat", "lon", "iso_time", "rain_mm_h", "snow_mm_h", "temp_c", "humidity_pct", "pressure_hpa"]


class WeatherError(RuntimeError):
    pass


@dataclass(frozen=True)
class WeatherSample:
    lat: float
    lon: float
    time: datetime | None
    rain_rate: float = 0.0  # mm/h
    snow: float = 0.0  # mm/h
    temperature: float = 15.0  # degC
    humidity: float = 50.0  # %
    pressure: float = 1013.25  # hPa

    def __post_init__(self):
        if self.rain_rate < 0:
            raise ValueError("rain rate must be non-negative")


def clear_sky(lat: float, lon: float, t: datetime | None) -> WeatherSample:
    return WeatherSample(lat, lon, t)


def _parse_time(s: str) -> datetime:
    t = datetime.fromisoformat(s.strip().replace("Z", "+00:00"))
    return t if t.tzinfo else t.replace(tzinfo=timezone.utc)


class ClearSkyProvider:
    def sample(self, lat, lon, t):
        return clear_sky(lat, lon, t)


class FixtureWeatherProvider:
    """Nearest-record lookup in a CSV fixture.

    The nearest location (planar distance in degrees) is chosen first, then
    the nearest time among that location's records.  A location further
    than ``max_distance_deg`` or a time further than ``max_time_s`` is a miss.
    """

    def __init__(self, records, max_distance_deg: float = 1.0, max_time_s: float | None = None):
        self.records = list(records)
        self.max_distance_deg = max_distance_deg
        self.max_time_s = max_time_s

    @classmethod
    def from_csv(cls, path, **kw):
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            missing = set(FIXTURE_COLUMNS) - set(reader.fieldnames or [])
            if missing:
                raise WeatherError(f"{path}: missing fixture columns {sorted(missing)}")
            recs = [
                WeatherSample(
                    lat=float(row["lat"]), lon=float(row["lon"]), time=_parse_time(row["iso_time"]),
                    rain_rate=float(row["rain_mm_h"] or 0.0), snow=float(row["snow_mm_h"] or 0.0),
                    temperature=float(row["temp_c"]), humidity=float(row["humidity_pct"]),
                    pressure=float(row["pressure_hpa"]),
                )
                for row in reader
            ]
        return cls(recs, **kw)

    def sample(self, lat: float, lon: float, t: datetime) -> WeatherSample:
        if not self.records:
            raise WeatherError("weather fixture is empty")

        def dist(r):
            dlon = abs(r.lon - lon) % 360.0
            return math.hypot(r.lat - lat, min(dlon, 360.0 - dlon))

        best = min(dist(r) for r in self.records)
        if best > self.max_distance_deg:
            raise WeatherError(f"no fixture record near ({lat:.4f}, {lon:.4f}) at {t}")
        here = [r for r in self.records if dist(r) == best]
        if t is None:
            return here[0]
        rec = min(here, key=lambda r: (abs((r.time - t).total_seconds()), r.time))
        if self.max_time_s is not None and abs((rec.time - t).total_seconds()) > self.max_time_s:
            raise WeatherError(f"no fixture record near ({lat:.4f}, {lon:.4f}) at {t.isoformat()}")
        return rec


class OpenWeatherMapProvider:
    """Live current-weather client with a (0.1 deg, 1 minute) cache.

    ``session`` only needs a ``get(url, params=..., timeout=...)`` method
    returning an object with ``raise_for_status()`` and ``json()``; by default
    a ``requests.Session`` is created lazily.
    """

    def __init__(self, api_key: str | None = None, session=None, timeout: float = 10.0,
                 max_concurrent: int = 4, url: str = OWM_URL):
        self.api_key = api_key if api_key is not None else os.environ.get("WEATHER_API_KEY")
        if not self.api_key:
            raise WeatherError("no API key: set WEATHER_API_KEY")
        self._session = session
        self.timeout = timeout
        self.url = url
        self._cache: dict = {}
        self._lock = threading.Lock()
        self._slots = threading.BoundedSemaphore(max_concurrent)
        self.upstream_calls = 0

    @staticmethod
    def cache_key(lat: float, lon: float, t: datetime):
        minute = int(t.timestamp() // 60) if t is not None else None
        return round(lat, 1), round(lon, 1), minute

    def _get_session(self):
        if self._session is None:
            import requests

            self._session = requests.Session()
        return self._session

    def sample(self, lat: float, lon: float, t: datetime) -> WeatherSample:
        key = self.cache_key(lat, lon, t)
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        with self._slots:
            with self._lock:
                hit = self._cache.get(key)
                if hit is not None:
                    return hit
                self.upstream_calls += 1
            try:
                resp = self._get_session().get(
                    self.url,
                    params={"lat": key[0], "lon": key[1], "appid": self.api_key, "units": "metric"},
                    timeout=self.timeout,
                )
                resp.raise_for_status()
                sample = self.from_response(resp.json(), lat, lon, t)
            except WeatherError:
                raise
            except Exception as exc:
                raise WeatherError(f"weather query failed for ({lat}, {lon}): {exc}") from exc
        with self._lock:
            self._cache[key] = sample
        return sample

    @staticmethod
    def from_response(doc: dict, lat: float, lon: float, t: datetime) -> WeatherSample:
        main = doc.get("main", {})
        try:
            return WeatherSample(
                lat=lat, lon=lon, time=t,
                rain_rate=float(doc.get("rain", {}).get("1h", 0.0)),
                snow=float(doc.get("snow", {}).get("1h", 0.0)),
                temperature=float(main.get("temp", 15.0)),
                humidity=float(main.get("humidity", 50.0)),
                pressure=float(main.get("pressure", 1013.25)),
            )
        except (TypeError, ValueError) as exc:
            raise WeatherError(f"unexpected weather payload: {exc}") from exc


def fetch_weather(provider, lat: float, lon: float, t: datetime) -> WeatherSample:
    return provider.sample(lat, lon, t)


def make_provider(weather_cfg, base_dir=None):
    """Provider for a ``WeatherConfig`` (mode ``clear``, ``fixture`` or ``live``)."""
    mode = weather_cfg.mode
    if mode == "clear":
        return ClearSkyProvider()
    if mode == "fixture":
        path = weather_cfg.fixture
        if base_dir is not None and not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        return FixtureWeatherProvider.from_csv(path, max_distance_deg=weather_cfg.max_distance_deg)
    if mode == "live":
        return OpenWeatherMapProvider(api_key=os.environ.get(weather_cfg.api_key_env))
    raise ValueError(f"unknown weather mode {mode!r}")
