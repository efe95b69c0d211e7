"""Scenario file (YAML, ``schema_version: 1``) parsing, validation and serialisation.

Seven top-level sections plus the version key::

    schema_version: 1
    constellation:   {name, isl_pattern, isl_max_range_km, isl_lat_mask_deg,
                      isl_capacity_mbps, min_elevation_deg, cross_orbit_offset}
    satellites:      {tle_file: path} | {walker: {orbits, sats_per_orbit,
                      altitude_km, inclination_deg, phasing}}
    ground_segments: [{id, role, lat, lon, alt_m}, ...]
    rf:              {eirp_dbw, g_over_t_dbk, bandwidth_hz, frequency_hz,
                      fixed_losses_db, cell_density}
    simulation:      {start, duration_s, interval_ms}
    weather:         {mode: clear|fixture|live, fixture, api_key_env, max_distance_deg}
    applications:    {routing_metric, handover, flows: [{id, src, dst, start_s,
                      duration_s, demand_mbps, disruption_window_ms}, ...]}
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone

import yaml

from .linkmodel import RfParameters
from .routing import RouteMetric
from .topology import DEFAULT_ISL_MAX_RANGE_KM, DEFAULT_MIN_ELEVATION_DEG, GroundSegment, HandoverStrategy

SCHEMA_VERSION = 1
SECTIONS = ("constellation", "satellites", "ground_segments", "rf", "simulation", "weather", "applications")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ConstellationConfig:
    name: str = "constellation"
    isl_pattern: str = "grid"  # grid | intra_orbit
    isl_max_range_km: float | None = DEFAULT_ISL_MAX_RANGE_KM
    isl_lat_mask_deg: float | None = None
    isl_capacity_mbps: float = 10000.0
    min_elevation_deg: float = DEFAULT_MIN_ELEVATION_DEG
    cross_orbit_offset: int = 0


@dataclass(frozen=True)
class WalkerSource:
    orbits: int
    sats_per_orbit: int
    altitude_km: float
    inclination_deg: float
    phasing: int = 0


@dataclass(frozen=True)
class SatelliteSource:
    tle_file: str | None = None
    walker: WalkerSource | None = None


@dataclass(frozen=True)
class SimWindow:
    start: datetime
    duration_s: float
    interval_ms: int = 1000

    @property
    def ticks(self) -> int:
        return int(round(self.duration_s * 1000)) // self.interval_ms


@dataclass(frozen=True)
class WeatherConfig:
    mode: str = "clear"  # clear | fixture | live
    fixture: str | None = None
    api_key_env: str = "WEATHER_API_KEY"
    max_distance_deg: float = 1.0


@dataclass(frozen=True)
class Flow:
    id: str
    src: str
    dst: str
    start_s: float = 0.0
    duration_s: float | None = None
    demand_mbps: float | None = None  # None = unlimited
    disruption_window_ms: float = 0.0

    def active(self, t_s: float) -> bool:
        end = math.inf if self.duration_s is None else self.start_s + self.duration_s
        return self.start_s <= t_s < end


@dataclass(frozen=True)
class Applications:
    flows: tuple[Flow, ...] = ()
    routing_metric: RouteMetric = RouteMetric.LATENCY
    handover: HandoverStrategy = HandoverStrategy.DISTANCE_BASED


@dataclass(frozen=True)
class ScenarioConfig:
    constellation: ConstellationConfig
    satellites: SatelliteSource
    ground_segments: tuple[GroundSegment, ...]
    rf: RfParameters
    sim_window: SimWindow
    weather: WeatherConfig = field(default_factory=WeatherConfig)
    applications: Applications = field(default_factory=Applications)
    schema_version: int = SCHEMA_VERSION

    def ground(self, gid: str) -> GroundSegment:
        for g in self.ground_segments:
            if g.id == gid:
                return g
        raise KeyError(gid)


# ---------------------------------------------------------------------------


def _section(doc, name, kind=dict, required=False):
    if name not in doc or doc[name] is None:
        if required:
            raise ConfigError(f"missing required section '{name}'")
        return kind()
    val = doc[name]
    if not isinstance(val, kind):
        raise ConfigError(f"section '{name}' must be a {'mapping' if kind is dict else 'list'}")
    return val


def _build(cls, data: dict, where: str, convert=None):
    """Construct a dataclass from a mapping, rejecting unknown keys."""
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}")
    kwargs = dict(data)
    for key, fn in (convert or {}).items():
        if key in kwargs and kwargs[key] is not None:
            try:
                kwargs[key] = fn(kwargs[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{where}.{key}: {exc}") from None
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _opt_float(x):
    return None if x is None else float(x)


def _datetime(x) -> datetime:
    if isinstance(x, datetime):
        t = x
    else:
        t = datetime.fromisoformat(str(x).strip().replace("Z", "+00:00"))
    return t.replace(tzinfo=timezone.utc) if t.tzinfo is None else t.astimezone(timezone.utc)


def _from_doc(doc) -> ScenarioConfig:
    if not isinstance(doc, dict):
        raise ConfigError("scenario document must be a mapping")
    unknown = set(doc) - set(SECTIONS) - {"schema_version"}
    if unknown:
        raise ConfigError(f"unknown section(s) {sorted(unknown)}")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: unsupported version {version!r} (expected {SCHEMA_VERSION})")

    cons = _build(ConstellationConfig, _section(doc, "constellation"), "constellation", {
        "isl_max_range_km": _opt_float, "isl_lat_mask_deg": _opt_float, "isl_capacity_mbps": float,
        "min_elevation_deg": float, "cross_orbit_offset": int, "name": str,
    })
    if cons.isl_pattern not in ("grid", "intra_orbit"):
        raise ConfigError(f"constellation.isl_pattern: expected grid or intra_orbit, got {cons.isl_pattern!r}")
    if not 0.0 <= cons.min_elevation_deg < 90.0:
        raise ConfigError("constellation.min_elevation_deg: must lie in [0, 90)")

    sats = dict(_section(doc, "satellites", required=True))
    if "walker" in sats and sats["walker"] is not None:
        w = sats["walker"]
        if not isinstance(w, dict):
            raise ConfigError("satellites.walker must be a mapping")
        sats["walker"] = _build(WalkerSource, w, "satellites.walker", {
            "orbits": int, "sats_per_orbit": int, "altitude_km": float, "inclination_deg": float, "phasing": int,
        })
        if sats["walker"].orbits < 1 or sats["walker"].sats_per_orbit < 1:
            raise ConfigError("satellites.walker: counts must be >= 1")
    source = _build(SatelliteSource, sats, "satellites")
    if (source.tle_file is None) == (source.walker is None):
        raise ConfigError("satellites: give exactly one of tle_file or walker")

    grounds = []
    for k, g in enumerate(_section(doc, "ground_segments", list)):
        if not isinstance(g, dict):
            raise ConfigError(f"ground_segments[{k}] must be a mapping")
        grounds.append(_build(GroundSegment, g, f"ground_segments[{k}]",
                              {"id": str, "lat": float, "lon": float, "alt_m": float}))
    ids = [g.id for g in grounds]
    if len(set(ids)) != len(ids):
        raise ConfigError("ground_segments: duplicate id")

    rf_doc = dict(_section(doc, "rf"))
    if "isl_capacity_mbps" in rf_doc:
        raise ConfigError("rf.isl_capacity_mbps: set constellation.isl_capacity_mbps instead")
    rf_doc["isl_capacity_mbps"] = cons.isl_capacity_mbps
    rf = _build(RfParameters, rf_doc, "rf", {k: float for k in rf_doc})

    sim = _section(doc, "simulation", required=True)
    window = _build(SimWindow, sim, "simulation", {"start": _datetime, "duration_s": float, "interval_ms": int})
    if window.interval_ms < 1:
        raise ConfigError("simulation.interval_ms: interval must be >= 1 ms")
    if window.duration_s <= 0:
        raise ConfigError("simulation.duration_s: duration must be positive")
    dur_ms = window.duration_s * 1000.0
    if abs(dur_ms - round(dur_ms)) > 1e-9 or round(dur_ms) % window.interval_ms:
        raise ConfigError("simulation.duration_s: duration must be a whole multiple of interval_ms")

    weather = _build(WeatherConfig, _section(doc, "weather"), "weather", {"max_distance_deg": float})
    if weather.mode not in ("clear", "fixture", "live"):
        raise ConfigError(f"weather.mode: expected clear, fixture or live, got {weather.mode!r}")
    if weather.mode == "fixture" and not weather.fixture:
        raise ConfigError("weather.fixture: path required in fixture mode")

    apps = dict(_section(doc, "applications"))
    flows = []
    for k, f in enumerate(apps.pop("flows", None) or []):
        if not isinstance(f, dict):
            raise ConfigError(f"applications.flows[{k}] must be a mapping")
        flow = _build(Flow, f, f"applications.flows[{k}]", {
            "id": str, "src": str, "dst": str, "start_s": float, "duration_s": _opt_float,
            "demand_mbps": _opt_float, "disruption_window_ms": float,
        })
        for end in (flow.src, flow.dst):
            if end not in ids:
                raise ConfigError(f"applications.flows[{k}] ({flow.id}): unknown ground segment {end!r}")
        if flow.src == flow.dst:
            raise ConfigError(f"applications.flows[{k}] ({flow.id}): src and dst are the same")
        if flow.start_s < 0 or (flow.duration_s is not None and flow.duration_s <= 0):
            raise ConfigError(f"applications.flows[{k}] ({flow.id}): bad start/duration")
        if flow.start_s + (flow.duration_s or 0.0) > window.duration_s + 1e-9:
            raise ConfigError(f"applications.flows[{k}] ({flow.id}): extends past the simulation window")
        if flow.demand_mbps is not None and flow.demand_mbps <= 0:
            raise ConfigError(f"applications.flows[{k}] ({flow.id}): demand must be positive")
        if flow.disruption_window_ms < 0:
            raise ConfigError(f"applications.flows[{k}] ({flow.id}): disruption window must be >= 0")
        flows.append(flow)
    if len({f.id for f in flows}) != len(flows):
        raise ConfigError("applications.flows: duplicate flow id")
    applications = _build(Applications, {**apps, "flows": tuple(flows)}, "applications",
                          {"routing_metric": RouteMetric, "handover": HandoverStrategy})

    return ScenarioConfig(cons, source, tuple(grounds), rf, window, weather, applications, version)


def parse_scenario(text: str) -> ScenarioConfig:
    """Parse and validate a scenario document."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"not a valid YAML document: {exc}") from None
    return _from_doc(doc or {})


def scenario_from_dict(doc: dict) -> ScenarioConfig:
    return _from_doc(doc)


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    cons = asdict(cfg.constellation)
    rf = asdict(cfg.rf)
    rf.pop("isl_capacity_mbps")
    sats = {"tle_file": cfg.satellites.tle_file} if cfg.satellites.tle_file else {
        "walker": asdict(cfg.satellites.walker)}
    sim = {
        "start": cfg.sim_window.start.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ"),
        "duration_s": cfg.sim_window.duration_s,
        "interval_ms": cfg.sim_window.interval_ms,
    }
    apps = {
        "routing_metric": cfg.applications.routing_metric.value,
        "handover": cfg.applications.handover.value,
        "flows": [asdict(f) for f in cfg.applications.flows],
    }
    return {
        "schema_version": cfg.schema_version,
        "constellation": cons,
        "satellites": sats,
        "ground_segments": [asdict(g) for g in cfg.ground_segments],
        "rf": rf,
        "simulation": sim,
        "weather": asdict(cfg.weather),
        "applications": apps,
    }


def serialize_scenario(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(scenario_to_dict(cfg), sort_keys=False)


def load_scenario(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())
