"""Orbital elements, TLE I/O, Walker-delta generation and two-body propagation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

import numpy as np

from . import kernels

MU_EARTH = 398600.4418  # km^3/s^2
R_EARTH = kernels.WGS84_A  # km, equatorial
EARTH_ROTATION_RATE = 7.2921159e-5  # rad/s
SECONDS_PER_DAY = 86400.0
J2000 = datetime(2000, 1, 1, 12, 0, 0, tzinfo=timezone.utc)
# Earth rotation angle at J2000.0 (IERS 2003 convention)
ERA_J2000 = 2.0 * math.pi * 0.7790572732640

TWO_PI = 2.0 * math.pi

# orbit grouping tolerances (deg)
INCLINATION_TOL_DEG = 0.5
RAAN_TOL_DEG = 1.0


class TLEError(ValueError):
    """Malformed TLE record."""


class TLEChecksumError(TLEError):
    def __init__(self, line_no: int, expected: int, found: int):
        super().__init__(f"checksum mismatch on line {line_no}: computed {expected}, found {found}")
        self.line_no = line_no


class KeplerConvergenceError(RuntimeError):
    pass


def _utc(t: datetime) -> datetime:
    if t.tzinfo is None:
        return t.replace(tzinfo=timezone.utc)
    return t.astimezone(timezone.utc)


@dataclass(frozen=True)
class OrbitalElements:
    epoch: datetime
    inclination: float  # rad
    raan: float  # rad
    eccentricity: float
    arg_perigee: float  # rad
    mean_anomaly: float  # rad
    mean_motion: float  # rev/day
    satellite_id: int
    name: str = ""

    def __post_init__(self):
        if not 0.0 <= self.eccentricity < 1.0:
            raise ValueError(f"eccentricity {self.eccentricity} outside [0, 1)")
        if self.mean_motion <= 0.0:
            raise ValueError("mean motion must be positive")
        for field in ("inclination", "raan", "arg_perigee", "mean_anomaly"):
            object.__setattr__(self, field, getattr(self, field) % TWO_PI)
        object.__setattr__(self, "epoch", _utc(self.epoch))

    @property
    def semi_major_axis(self) -> float:
        """Semi-major axis (km) from mean motion via Kepler's third law."""
        n = self.mean_motion * TWO_PI / SECONDS_PER_DAY
        return (MU_EARTH / (n * n)) ** (1.0 / 3.0)

    @property
    def period(self) -> float:
        return SECONDS_PER_DAY / self.mean_motion


@dataclass(frozen=True)
class AnomalySolution:
    eccentric_anomaly: float
    true_anomaly: float


@dataclass
class ConstellationGeometry:
    """Satellites grouped into orbits ("a list of list") in RAAN order.

    ``keys[k]`` is the (inclination, RAAN) reference, in degrees, of orbit ``k``.
    """

    orbits: list[list[int]]
    keys: list[tuple[float, float]]

    @property
    def satellite_ids(self) -> list[int]:
        return [s for orbit in self.orbits for s in orbit]

    def __len__(self):
        return len(self.orbits)


@dataclass(frozen=True)
class SatelliteState:
    time: datetime
    position: tuple[float, float, float]  # ECEF km
    lat: float
    lon: float
    altitude: float  # km above the equatorial radius


# ---------------------------------------------------------------------------
# TLE text


def tle_checksum(line: str) -> int:
    total = 0
    for c in line[:68]:
        if c.isdigit():
            total += int(c)
        elif c == "-":
            total += 1
    return total % 10


def _parse_epoch(field: str) -> datetime:
    year = int(field[:2])
    year += 2000 if year < 57 else 1900
    day = float(field[2:])
    return datetime(year, 1, 1, tzinfo=timezone.utc) + timedelta(days=day - 1.0)


def _parse_record(name: str, l1: str, l2: str, line_no: int) -> OrbitalElements:
    for k, line in ((0, l1), (1, l2)):
        if len(line) < 69:
            raise TLEError(f"line {line_no + k} is {len(line)} chars, expected 69")
        if line[0] != str(k + 1):
            raise TLEError(f"line {line_no + k} should start with {k + 1}")
        try:
            found = int(line[68])
        except ValueError:
            raise TLEError(f"line {line_no + k} has a non-numeric checksum") from None
        expected = tle_checksum(line)
        if expected != found:
            raise TLEChecksumError(line_no + k, expected, found)
    try:
        satnum = int(l1[2:7])
        if int(l2[2:7]) != satnum:
            raise TLEError(f"satellite number mismatch at line {line_no}")
        epoch = _parse_epoch(l1[18:32])
        inc = float(l2[8:16])
        raan = float(l2[17:25])
        ecc = float("0." + l2[26:33].strip())
        argp = float(l2[34:42])
        mean_anom = float(l2[43:51])
        n = float(l2[52:63])
    except ValueError as exc:
        raise TLEError(f"malformed field in record at line {line_no}: {exc}") from None
    return OrbitalElements(
        epoch=epoch,
        inclination=math.radians(inc),
        raan=math.radians(raan),
        eccentricity=ecc,
        arg_perigee=math.radians(argp),
        mean_anomaly=math.radians(mean_anom),
        mean_motion=n,
        satellite_id=satnum,
        name=name.strip() or f"SAT-{satnum}",
    )


def parse_tle(text: str) -> list[OrbitalElements]:
    """Parse 2-line or 3-line TLE records, verifying both line checksums."""
    lines = [(no, ln.rstrip("\r\n")) for no, ln in enumerate(text.splitlines(), 1)]
    lines = [(no, ln.rstrip()) for no, ln in lines if ln.strip()]
    out = []
    k = 0
    while k < len(lines):
        no, line = lines[k]
        if line.startswith("1 ") and k + 1 < len(lines) and lines[k + 1][1].startswith("2 "):
            name = ""
            l1, l2 = line, lines[k + 1][1]
            k += 2
        elif k + 2 < len(lines):
            name = line[2:] if line.startswith("0 ") else line
            no, l1 = lines[k + 1]
            l2 = lines[k + 2][1]
            k += 3
        else:
            raise TLEError(f"incomplete record starting at line {no}")
        out.append(_parse_record(name, l1, l2, no))
    return out


def _fmt_epoch(t: datetime) -> str:
    t = _utc(t)
    start = datetime(t.year, 1, 1, tzinfo=timezone.utc)
    day = (t - start).total_seconds() / SECONDS_PER_DAY + 1.0
    return f"{t.year % 100:02d}{day:012.8f}"


def format_tle(el: OrbitalElements) -> str:
    """Three-line TLE text (name + two element lines) with valid checksums."""
    ecc = f"{el.eccentricity:.7f}"[2:]
    l1 = (
        f"1 {el.satellite_id:05d}U {'00000A':8s} {_fmt_epoch(el.epoch)} "
        f"{' .00000000':10s} {' 00000-0':8s} {' 00000-0':8s} 0 {999:4d}"
    )
    l2 = (
        f"2 {el.satellite_id:05d} {math.degrees(el.inclination):8.4f} "
        f"{math.degrees(el.raan):8.4f} {ecc} {math.degrees(el.arg_perigee):8.4f} "
        f"{math.degrees(el.mean_anomaly):8.4f} {el.mean_motion:11.8f}{0:5d}"
    )
    assert len(l1) == 68 and len(l2) == 68, (len(l1), len(l2))
    l1 += str(tle_checksum(l1))
    l2 += str(tle_checksum(l2))
    return f"{el.name}\n{l1}\n{l2}\n"


def format_tles(elements) -> str:
    return "".join(format_tle(el) for el in elements)


# ---------------------------------------------------------------------------
# Walker-delta


def mean_motion_for_altitude(altitude_km: float) -> float:
    """Circular-orbit mean motion (rev/day) at ``altitude_km`` above the equatorial radius."""
    a = R_EARTH + altitude_km
    period = TWO_PI * math.sqrt(a ** 3 / MU_EARTH)
    return SECONDS_PER_DAY / period


def generate_walker(orbits: int, sats_per_orbit: int, altitude_km: float, inclination_deg: float,
                    phasing: int = 0, epoch: datetime | None = None) -> list[OrbitalElements]:
    """Circular Walker-delta shell, satellite ids numbered from 1 in orbit-major order."""
    if orbits < 1 or sats_per_orbit < 1:
        raise ValueError("orbit and satellite counts must be >= 1")
    if not 300.0 <= altitude_km <= 2000.0:
        raise ValueError(f"altitude {altitude_km} km outside the LEO range 300-2000 km")
    epoch = _utc(epoch or J2000)
    n = mean_motion_for_altitude(altitude_km)
    total = orbits * sats_per_orbit
    inc = math.radians(inclination_deg)
    out = []
    for p in range(orbits):
        raan = TWO_PI * p / orbits
        for s in range(sats_per_orbit):
            m = TWO_PI * s / sats_per_orbit + p * phasing * TWO_PI / total
            sid = p * sats_per_orbit + s + 1
            out.append(OrbitalElements(epoch, inc, raan, 0.0, 0.0, m, n, sid, f"WALKER-{p:03d}-{s:03d}"))
    return out


# ---------------------------------------------------------------------------
# Anomalies


def solve_eccentric_anomaly(M: float, e: float) -> float:
    if not 0.0 <= e < 1.0:
        raise ValueError(f"eccentricity {e} outside [0, 1)")
    E, ok = kernels.solve_kepler(np.array([M], dtype=float), np.array([e], dtype=float))
    if not ok[0]:
        raise KeplerConvergenceError(f"Kepler solve did not converge for M={M}, e={e}")
    return float(E[0])


def true_anomaly(E, e):
    """True anomaly in [0, 2pi) from the half-angle tangent form (same half-plane as E)."""
    nu = 2.0 * np.arctan2(np.sqrt(1.0 + e) * np.sin(0.5 * np.asarray(E)),
                          np.sqrt(1.0 - e) * np.cos(0.5 * np.asarray(E)))
    nu = np.mod(nu, TWO_PI)
    if np.ndim(nu) == 0:
        return float(nu)
    return nu


def solve_anomalies(M: float, e: float) -> AnomalySolution:
    E = solve_eccentric_anomaly(M, e)
    return AnomalySolution(E, true_anomaly(E, e))


# ---------------------------------------------------------------------------
# Orbit grouping


def _angdiff_deg(a: float, b: float) -> float:
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def group_orbits(elements, inclination_tol: float = INCLINATION_TOL_DEG,
                 raan_tol: float = RAAN_TOL_DEG) -> ConstellationGeometry:
    """Bucket satellites by (inclination, RAAN) and sort each orbit by true anomaly.

    True anomaly is evaluated at the latest epoch among the inputs so that
    records from different TLE epochs are compared at one instant.
    """
    elements = list(elements)
    if not elements:
        raise ValueError("no elements to group")
    ref = max(el.epoch for el in elements)
    buckets: list[list[OrbitalElements]] = []
    keys: list[tuple[float, float]] = []
    for el in sorted(elements, key=lambda x: (x.raan, x.inclination, x.satellite_id)):
        inc, raan = math.degrees(el.inclination), math.degrees(el.raan)
        for k, (kinc, kraan) in enumerate(keys):
            if abs(inc - kinc) <= inclination_tol and _angdiff_deg(raan, kraan) <= raan_tol:
                buckets[k].append(el)
                break
        else:
            keys.append((inc, raan))
            buckets.append([el])

    orbits = []
    for bucket in buckets:
        M = np.array([el.mean_anomaly + el.mean_motion * TWO_PI / SECONDS_PER_DAY
                      * (ref - el.epoch).total_seconds() for el in bucket])
        e = np.array([el.eccentricity for el in bucket])
        E, _ = kernels.solve_kepler(M, e)
        nu = true_anomaly(E, e)
        order = sorted(range(len(bucket)), key=lambda k: (nu[k], bucket[k].satellite_id))
        orbits.append([bucket[k].satellite_id for k in order])
    order = sorted(range(len(orbits)), key=lambda k: (keys[k][1], keys[k][0]))
    return ConstellationGeometry([orbits[k] for k in order], [keys[k] for k in order])


# ---------------------------------------------------------------------------
# Propagation


def earth_rotation_angle(t: datetime) -> float:
    dt = (_utc(t) - J2000).total_seconds()
    return (ERA_J2000 + EARTH_ROTATION_RATE * dt) % TWO_PI


class ElementSet:
    """Column-wise view of many OrbitalElements for vectorised propagation."""

    def __init__(self, elements):
        self.elements = list(elements)
        els = self.elements
        self.ids = np.array([el.satellite_id for el in els], dtype=np.int64)
        self.epoch = [el.epoch for el in els]
        self.ecc = np.array([el.eccentricity for el in els])
        self.inc = np.array([el.inclination for el in els])
        self.raan = np.array([el.raan for el in els])
        self.argp = np.array([el.arg_perigee for el in els])
        self.M0 = np.array([el.mean_anomaly for el in els])
        self.n = np.array([el.mean_motion for el in els]) * TWO_PI / SECONDS_PER_DAY
        self.a = (MU_EARTH / self.n ** 2) ** (1.0 / 3.0)
        epochs = {el.epoch for el in els}
        self._common_epoch = next(iter(epochs)) if len(epochs) == 1 else None
        self._epoch_s = np.array([(el.epoch - J2000).total_seconds() for el in els])

    def __len__(self):
        return len(self.elements)

    def subset(self, order) -> "ElementSet":
        return ElementSet([self.elements[k] for k in order])

    def positions(self, t: datetime):
        """(eci, ecef) position arrays, shape (N, 3), km."""
        t = _utc(t)
        if self._common_epoch is not None:
            dt = np.full(len(self), (t - self._common_epoch).total_seconds())
        else:
            dt = (t - J2000).total_seconds() - self._epoch_s
        return kernels.propagate_positions(self.a, self.ecc, self.inc, self.raan, self.argp,
                                           self.M0, self.n, dt, earth_rotation_angle(t))


def propagate(elements: OrbitalElements, t: datetime) -> SatelliteState:
    """Two-body Keplerian state of one satellite at ``t``."""
    t = _utc(t)
    if t < elements.epoch - timedelta(days=1):
        raise ValueError("propagation more than one day before epoch")
    _, ecef = ElementSet([elements]).positions(t)
    lat, lon = kernels.ecef_to_latlon(ecef)
    r = float(np.linalg.norm(ecef[0]))
    return SatelliteState(t, tuple(float(x) for x in ecef[0]), float(lat[0]), float(lon[0]), r - R_EARTH)


def propagate_eci(elements: OrbitalElements, t: datetime) -> np.ndarray:
    eci, _ = ElementSet([elements]).positions(t)
    return eci[0]
