import threading
from datetime import datetime, timedelta, timezone
from pathlib import Path

import pytest

from leonet.config import WeatherConfig
from leonet.weather import (ClearSkyProvider, FixtureWeatherProvider, OpenWeatherMapProvider, WeatherError,
                            make_provider)

DATA = Path(__file__).parent / "data"
T0 = datetime(2024, 1, 1, tzinfo=timezone.utc)


class FakeResponse:
    def __init__(self, doc, status=200):
        self.doc, self.status = doc, status

    def raise_for_status(self):
        if self.status >= 400:
            raise RuntimeError(f"HTTP {self.status}")

    def json(self):
        return self.doc


class FakeSession:
    def __init__(self, doc=None, status=200):
        self.calls = []
        self.doc = doc or {"rain": {"1h": 3.5}, "main": {"temp": 11.0, "humidity": 70, "pressure": 1009}}
        self.status = status
        self.lock = threading.Lock()

    def get(self, url, params=None, timeout=None):
        with self.lock:
            self.calls.append(params)
        return FakeResponse(self.doc, self.status)


def test_fixture_nearest_location_then_time():
    p = FixtureWeatherProvider.from_csv(DATA / "weather_fixture.csv")
    assert p.sample(51.4, -0.2, T0 + timedelta(minutes=5)).rain_rate == 10.0
    assert p.sample(51.4, -0.2, T0 + timedelta(minutes=25)).rain_rate == 2.0
    assert p.sample(40.7, -74.0, T0).rain_rate == 0.0


def test_fixture_miss_raises():
    p = FixtureWeatherProvider.from_csv(DATA / "weather_fixture.csv")
    with pytest.raises(WeatherError):
        p.sample(0.0, 0.0, T0)


def test_fixture_missing_columns(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("lat,lon\n1,2\n")
    with pytest.raises(WeatherError):
        FixtureWeatherProvider.from_csv(f)


def test_live_client_maps_payload_and_caches():
    s = FakeSession()
    p = OpenWeatherMapProvider(api_key="k", session=s)
    a = p.sample(51.51, -0.12, T0)
    b = p.sample(51.49, -0.14, T0 + timedelta(seconds=30))  # same 0.1 deg cell, same minute
    assert a.rain_rate == 3.5 and a.temperature == 11.0
    assert b is a
    assert p.upstream_calls == 1 and len(s.calls) == 1
    assert s.calls[0]["appid"] == "k"
    p.sample(51.51, -0.12, T0 + timedelta(minutes=2))
    assert p.upstream_calls == 2


def test_live_client_is_safe_under_concurrency():
    s = FakeSession()
    p = OpenWeatherMapProvider(api_key="k", session=s, max_concurrent=2)
    threads = [threading.Thread(target=p.sample, args=(10.0, 10.0, T0)) for _ in range(16)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert p.upstream_calls == 1


def test_live_client_errors():
    with pytest.raises(WeatherError):
        OpenWeatherMapProvider(api_key="k", session=FakeSession(status=500)).sample(0, 0, T0)
    with pytest.raises(WeatherError):
        OpenWeatherMapProvider(api_key="k", session=FakeSession({"rain": {"1h": "x"}})).sample(0, 0, T0)


def test_live_client_needs_key(monkeypatch):
    monkeypatch.delenv("WEATHER_API_KEY", raising=False)
    with pytest.raises(WeatherError):
        OpenWeatherMapProvider()


def test_make_provider_modes():
    assert isinstance(make_provider(WeatherConfig()), ClearSkyProvider)
    p = make_provider(WeatherConfig(mode="fixture", fixture="weather_fixture.csv"), DATA)
    assert isinstance(p, FixtureWeatherProvider)
