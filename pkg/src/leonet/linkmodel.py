"""Link budget: latency, FSPL, rain fade, SNR and Shannon capacity per link."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from datetime import datetime

import numpy as np

from . import kernels
from .weather import WeatherError, WeatherSample, clear_sky

log = logging.getLogger(__name__)

SPEED_OF_LIGHT_KM_S = 299792.458
SPEED_OF_LIGHT_M_S = 299792458.0
BOLTZMANN_DB = 228.6  # -10 log10(k), dBW/K/Hz
RAIN_HEIGHT_KM = 4.0
MAX_RAIN_PATH_KM = 20.0

# Specific attenuation coefficients (k, alpha), horizontal polarisation,
# at anchor frequencies in GHz.  Interpolation is log-linear in frequency
# for k and linear in log-frequency for alpha.
RAIN_COEFFICIENTS = (
    (1.0, 0.0000259, 0.9691),
    (2.0, 0.0000847, 1.0664),
    (4.0, 0.0001071, 1.6009),
    (6.0, 0.0007056, 1.5900),
    (7.0, 0.001915, 1.4810),
    (8.0, 0.004115, 1.3905),
    (10.0, 0.01217, 1.2571),
    (12.0, 0.02386, 1.1825),
    (15.0, 0.04481, 1.1233),
    (20.0, 0.09164, 1.0568),
    (25.0, 0.1571, 0.9991),
    (30.0, 0.2403, 0.9485),
    (35.0, 0.3374, 0.9047),
    (40.0, 0.4431, 0.8673),
    (50.0, 0.6600, 0.8084),
    (60.0, 0.8606, 0.7656),
    (70.0, 1.0315, 0.7345),
    (80.0, 1.1704, 0.7115),
    (90.0, 1.2807, 0.6944),
    (100.0, 1.3671, 0.6815),
)
_RC = np.array(RAIN_COEFFICIENTS)


@dataclass(frozen=True)
class RfParameters:
    eirp_dbw: float = 50.0
    g_over_t_dbk: float = 10.0
    bandwidth_hz: float = 240e6
    frequency_hz: float = 12e9
    fixed_losses_db: float = 2.0
    cell_density: float = 1.0
    isl_capacity_mbps: float = 10000.0

    def __post_init__(self):
        if self.bandwidth_hz <= 0:
            raise ValueError("rf.bandwidth_hz must be positive")
        if not 1e9 <= self.frequency_hz <= 100e9:
            raise ValueError("rf.frequency_hz must lie in 1-100 GHz")
        if not 0.0 < self.cell_density <= 1.0:
            raise ValueError("rf.cell_density must lie in (0, 1]")
        if self.isl_capacity_mbps < 0:
            raise ValueError("isl capacity must be non-negative")


@dataclass(frozen=True)
class LinkCharacteristics:
    latency: float  # ms
    capacity: float  # Mbps
    snr: float | None = None  # dB, GSLs only


def propagation_delay(distance_km):
    """One-way light-time in ms."""
    d = np.asarray(distance_km, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    out = d / SPEED_OF_LIGHT_KM_S * 1000.0
    return float(out) if out.ndim == 0 else out


def fspl(distance_km: float, frequency_hz: float) -> float:
    if distance_km <= 0 or frequency_hz <= 0:
        raise ValueError("distance and frequency must be positive")
    return 20.0 * math.log10(4.0 * math.pi * distance_km * 1000.0 * frequency_hz / SPEED_OF_LIGHT_M_S)


def rain_coefficients(frequency_hz: float) -> tuple[float, float]:
    f = frequency_hz / 1e9
    lf = np.log10(_RC[:, 0])
    x = math.log10(min(max(f, _RC[0, 0]), _RC[-1, 0]))
    k = 10.0 ** float(np.interp(x, lf, np.log10(_RC[:, 1])))
    alpha = float(np.interp(x, lf, _RC[:, 2]))
    return k, alpha


def rain_attenuation(weather: WeatherSample, frequency_hz: float, elevation_deg: float) -> float:
    """Rain fade (dB) along the slant path below a fixed 4 km rain height."""
    if not 0.0 < elevation_deg <= 90.0:
        raise ValueError(f"elevation {elevation_deg} outside (0, 90]")
    if weather.rain_rate <= 0.0:
        return 0.0
    k, alpha = rain_coefficients(frequency_hz)
    gamma = k * weather.rain_rate ** alpha
    path = min(RAIN_HEIGHT_KM / math.sin(math.radians(elevation_deg)), MAX_RAIN_PATH_KM)
    return gamma * path


def snr(rf: RfParameters, distance_km: float, elevation_deg: float,
        weather: WeatherSample | None = None) -> float:
    """Downlink SNR in dB (standard budget: G/T added, Boltzmann term +228.6)."""
    weather = weather or clear_sky(0.0, 0.0, None)
    return (rf.eirp_dbw + rf.g_over_t_dbk - fspl(distance_km, rf.frequency_hz)
            - rf.fixed_losses_db - rain_attenuation(weather, rf.frequency_hz, elevation_deg)
            + BOLTZMANN_DB - 10.0 * math.log10(rf.bandwidth_hz))


def gsl_capacity(snr_db: float, bandwidth_hz: float, cell_density: float) -> float:
    """Fair-share Shannon capacity in Mbps."""
    if not 0.0 < cell_density <= 1.0:
        raise ValueError("cell density must lie in (0, 1]")
    lin = 0.0 if snr_db == -math.inf else 10.0 ** (snr_db / 10.0)
    return cell_density * bandwidth_hz * math.log2(1.0 + lin) / 1e6


def budget_breakdown(rf: RfParameters, distance_km: float, elevation_deg: float,
                     weather: WeatherSample | None = None) -> dict:
    """Every budget term, for the desk calculator."""
    weather = weather or clear_sky(0.0, 0.0, None)
    terms = {
        "eirp_dbw": rf.eirp_dbw,
        "g_over_t_dbk": rf.g_over_t_dbk,
        "fspl_db": fspl(distance_km, rf.frequency_hz),
        "fixed_losses_db": rf.fixed_losses_db,
        "rain_db": rain_attenuation(weather, rf.frequency_hz, elevation_deg),
        "boltzmann_db": BOLTZMANN_DB,
        "bandwidth_dbhz": 10.0 * math.log10(rf.bandwidth_hz),
    }
    terms["snr_db"] = snr(rf, distance_km, elevation_deg, weather)
    terms["capacity_mbps"] = gsl_capacity(terms["snr_db"], rf.bandwidth_hz, rf.cell_density)
    terms["latency_ms"] = propagation_delay(distance_km)
    return terms


@dataclass
class LinkMatrices:
    """Latency/capacity per edge, aligned with a Connectivity's edge arrays.

    ``snr`` is NaN on ISLs.  ``latency_matrix()``/``capacity_matrix()`` give
    the dense N x N form (zero where no link exists).
    """

    n_nodes: int
    i: np.ndarray
    j: np.ndarray
    latency: np.ndarray
    capacity: np.ndarray
    snr: np.ndarray
    warnings: list

    def _dense(self, values):
        m = np.zeros((self.n_nodes, self.n_nodes))
        m[self.i, self.j] = values
        m[self.j, self.i] = values
        return m

    def latency_matrix(self):
        return self._dense(self.latency)

    def capacity_matrix(self):
        return self._dense(self.capacity)

    def link(self, a: int, b: int) -> LinkCharacteristics:
        a, b = min(a, b), max(a, b)
        hit = np.nonzero((self.i == a) & (self.j == b))[0]
        if hit.size == 0:
            raise KeyError((a, b))
        k = hit[0]
        s = None if np.isnan(self.snr[k]) else float(self.snr[k])
        return LinkCharacteristics(float(self.latency[k]), float(self.capacity[k]), s)


def characterize(connectivity, node_positions, n_satellites: int, ground_segments,
                 rf: RfParameters, weather_provider, t: datetime) -> LinkMatrices:
    """Latency and capacity for every edge of ``connectivity`` at ``t``.

    ``node_positions`` holds ECEF km for all nodes in node-index order
    (satellites then ground segments).
    """
    i, j = connectivity.i, connectivity.j
    n = connectivity.n_nodes
    warnings = []
    if i.size == 0:
        empty = np.zeros(0)
        return LinkMatrices(n, i, j, empty, empty.copy(), empty.copy(), warnings)
    dist = kernels.edge_lengths(node_positions, i, j)
    latency = dist / SPEED_OF_LIGHT_KM_S * 1000.0
    capacity = np.full(i.size, float(rf.isl_capacity_mbps))
    snr_db = np.full(i.size, np.nan)
    for k in np.nonzero(j >= n_satellites)[0]:
        g = ground_segments[j[k] - n_satellites]
        sat = node_positions[i[k]]
        gpos = node_positions[j[k]]
        up = g.up_vector()
        rho = sat - gpos
        elev = math.degrees(math.asin(max(-1.0, min(1.0, float(rho @ up) / dist[k]))))
        try:
            sample = weather_provider.sample(g.lat, g.lon, t) if weather_provider else None
        except WeatherError as exc:
            warnings.append(f"weather unavailable for {g.id}: {exc}; using clear sky")
            log.warning("weather unavailable for %s: %s", g.id, exc)
            sample = None
        sample = sample or clear_sky(g.lat, g.lon, t)
        s = snr(rf, float(dist[k]), max(elev, 1e-6), sample)
        snr_db[k] = s
        capacity[k] = gsl_capacity(s, rf.bandwidth_hz, rf.cell_density)
    return LinkMatrices(n, i, j, latency, capacity, snr_db, warnings)
