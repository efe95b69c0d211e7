import math
from datetime import datetime, timezone

import numpy as np
import pytest

from leonet import linkmodel as lm
from leonet.topology import Connectivity, GroundSegment
from leonet.weather import WeatherError, WeatherSample, clear_sky

# mpmath, 30 digits, from the textbook formulas
FSPL_1KM_1GHZ = 92.44778322188337
FSPL_550KM_12GHZ = 168.83866193272075
DELAY_550KM_MS = 1.8346025235898363
SNR_WORKED_DB = 33.95922565016319
CAP_WORKED_MBPS = 2707.5816540723635
RAIN_10MMH_12GHZ_ZENITH_DB = 1.4528822924210728
RAIN_10MMH_12GHZ_30DEG_DB = 2.9057645848421457

RF = lm.RfParameters()
RAIN = WeatherSample(0.0, 0.0, None, rain_rate=10.0)


def test_fspl_desk_values():
    assert lm.fspl(1.0, 1e9) == pytest.approx(FSPL_1KM_1GHZ, abs=1e-9)
    assert lm.fspl(550.0, 12e9) == pytest.approx(FSPL_550KM_12GHZ, abs=1e-9)


def test_fspl_doubling_distance_adds_6db():
    assert lm.fspl(1100.0, 12e9) - lm.fspl(550.0, 12e9) == pytest.approx(20 * math.log10(2))


def test_delay():
    assert lm.propagation_delay(550.0) == pytest.approx(DELAY_550KM_MS, abs=1e-12)
    with pytest.raises(ValueError):
        lm.propagation_delay(0.0)


def test_worked_snr_and_capacity():
    s = lm.snr(RF, 550.0, 90.0)
    assert s == pytest.approx(SNR_WORKED_DB, abs=1e-9)
    assert lm.gsl_capacity(s, RF.bandwidth_hz, RF.cell_density) == pytest.approx(CAP_WORKED_MBPS, abs=1e-6)


def test_snr_is_term_sum():
    t = lm.budget_breakdown(RF, 800.0, 40.0, RAIN)
    total = (t["eirp_dbw"] + t["g_over_t_dbk"] - t["fspl_db"] - t["fixed_losses_db"] - t["rain_db"]
             + t["boltzmann_db"] - t["bandwidth_dbhz"])
    assert t["snr_db"] == pytest.approx(total, abs=1e-9)


def test_rain_attenuation_values():
    assert lm.rain_coefficients(12e9) == pytest.approx((0.02386, 1.1825))
    assert lm.rain_attenuation(RAIN, 12e9, 90.0) == pytest.approx(RAIN_10MMH_12GHZ_ZENITH_DB, abs=1e-12)
    assert lm.rain_attenuation(RAIN, 12e9, 30.0) == pytest.approx(RAIN_10MMH_12GHZ_30DEG_DB, abs=1e-12)
    assert lm.rain_attenuation(clear_sky(0, 0, None), 12e9, 30.0) == 0.0


def test_rain_path_capped_at_low_elevation():
    assert lm.rain_attenuation(RAIN, 12e9, 1.0) == pytest.approx(
        lm.rain_attenuation(RAIN, 12e9, 90.0) * 20.0 / 4.0)


def test_rain_monotone_in_rate_and_frequency():
    a = [lm.rain_attenuation(WeatherSample(0, 0, None, rain_rate=r), 20e9, 45.0) for r in (1, 5, 25, 50)]
    assert a == sorted(a)
    f = [lm.rain_attenuation(RAIN, hz, 45.0) for hz in (4e9, 12e9, 20e9, 30e9)]
    assert f == sorted(f)


def test_capacity_shannon_and_density():
    assert lm.gsl_capacity(0.0, 1e6, 1.0) == pytest.approx(1.0)
    assert lm.gsl_capacity(10.0, 1e6, 0.5) == pytest.approx(0.5 * math.log2(11.0))
    with pytest.raises(ValueError):
        lm.gsl_capacity(10.0, 1e6, 0.0)


def test_rf_validation():
    with pytest.raises(ValueError):
        lm.RfParameters(bandwidth_hz=0.0)


class _Failing:
    def sample(self, lat, lon, t):
        raise WeatherError("offline")


class _Rainy:
    def sample(self, lat, lon, t):
        return WeatherSample(lat, lon, t, rain_rate=10.0)


def _toy():
    g = GroundSegment("G", "terminal", 0.0, 0.0)
    gpos = g.ecef()
    sat0 = gpos * (1 + 550.0 / np.linalg.norm(gpos))
    sat1 = sat0 + np.array([0.0, 1000.0, 0.0])
    pos = np.array([sat0, sat1, gpos])
    conn = Connectivity(datetime(2024, 1, 1, tzinfo=timezone.utc), 3, 2, np.array([0, 0]), np.array([1, 2]))
    return conn, pos, [g]


def test_characterize_isl_and_gsl():
    conn, pos, grounds = _toy()
    m = lm.characterize(conn, pos, 2, grounds, RF, None, conn.t)
    isl, gsl = m.link(0, 1), m.link(2, 0)
    assert isl.latency == pytest.approx(1000.0 / lm.SPEED_OF_LIGHT_KM_S * 1000)
    assert isl.capacity == RF.isl_capacity_mbps
    assert gsl.latency == pytest.approx(DELAY_550KM_MS, rel=1e-9)
    assert gsl.capacity == pytest.approx(CAP_WORKED_MBPS, rel=1e-9)
    assert (m.latency_matrix() > 0).sum() == 4


def test_characterize_rain_lowers_gsl_capacity():
    conn, pos, grounds = _toy()
    clear = lm.characterize(conn, pos, 2, grounds, RF, None, conn.t)
    wet = lm.characterize(conn, pos, 2, grounds, RF, _Rainy(), conn.t)
    assert wet.link(0, 2).capacity < clear.link(0, 2).capacity
    assert wet.link(0, 1).capacity == clear.link(0, 1).capacity


def test_characterize_weather_failure_falls_back():
    conn, pos, grounds = _toy()
    m = lm.characterize(conn, pos, 2, grounds, RF, _Failing(), conn.t)
    assert m.warnings and m.link(0, 2).capacity == pytest.approx(CAP_WORKED_MBPS, rel=1e-9)
