"""Per-instant connectivity: ISLs by pattern and GSLs by visibility + handover."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from . import kernels
from .geometry import ConstellationGeometry, ElementSet

DEFAULT_MIN_ELEVATION_DEG = 25.0
DEFAULT_ISL_MAX_RANGE_KM = 5000.0


class TopologyError(ValueError):
    pass


class HandoverStrategy(str, enum.Enum):
    DISTANCE_BASED = "distance"
    LONGEST_ATTACHMENT = "longest"


@dataclass(frozen=True)
class GroundSegment:
    id: str
    role: str  # terminal | gateway
    lat: float
    lon: float
    alt_m: float = 0.0

    def __post_init__(self):
        if self.role not in ("terminal", "gateway"):
            raise ValueError(f"ground segment {self.id}: role must be terminal or gateway")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"ground segment {self.id}: latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"ground segment {self.id}: longitude {self.lon} outside [-180, 180]")

    def ecef(self) -> np.ndarray:
        phi, lam = math.radians(self.lat), math.radians(self.lon)
        a, e2 = kernels.WGS84_A, kernels.WGS84_E2
        N = a / math.sqrt(1.0 - e2 * math.sin(phi) ** 2)
        h = self.alt_m / 1000.0
        return np.array([
            (N + h) * math.cos(phi) * math.cos(lam),
            (N + h) * math.cos(phi) * math.sin(lam),
            (N * (1.0 - e2) + h) * math.sin(phi),
        ])

    def up_vector(self) -> np.ndarray:
        phi, lam = math.radians(self.lat), math.radians(self.lon)
        return np.array([math.cos(phi) * math.cos(lam), math.cos(phi) * math.sin(lam), math.sin(phi)])


class NodeIndex:
    """Dense index over satellites (orbit-major) followed by ground segments."""

    def __init__(self, satellite_ids, ground_ids):
        self.satellite_ids = [int(s) for s in satellite_ids]
        self.ground_ids = list(ground_ids)
        self.ids = [f"SAT-{s}" for s in self.satellite_ids] + self.ground_ids
        self._pos = {nid: k for k, nid in enumerate(self.ids)}
        if len(self._pos) != len(self.ids):
            raise TopologyError("node ids are not unique")
        self._sat_pos = {s: k for k, s in enumerate(self.satellite_ids)}

    @classmethod
    def from_geometry(cls, geometry: ConstellationGeometry, ground_ids):
        return cls(geometry.satellite_ids, ground_ids)

    @property
    def n_satellites(self) -> int:
        return len(self.satellite_ids)

    def __len__(self):
        return len(self.ids)

    def index(self, node_id: str) -> int:
        return self._pos[node_id]

    def satellite_index(self, satellite_id: int) -> int:
        return self._sat_pos[int(satellite_id)]

    def ground_index(self, ground_id: str) -> int:
        return self._pos[ground_id]

    def id(self, k: int) -> str:
        return self.ids[k]

    def __eq__(self, other):
        return isinstance(other, NodeIndex) and self.ids == other.ids


@dataclass
class ConstellationState:
    """All satellite positions at one instant, rows in node-index order."""

    time: datetime
    eci: np.ndarray
    ecef: np.ndarray
    lat: np.ndarray
    lon: np.ndarray

    @property
    def altitude(self) -> np.ndarray:
        return np.linalg.norm(self.ecef, axis=1) - kernels.WGS84_A

    @classmethod
    def compute(cls, elements: ElementSet, t: datetime) -> "ConstellationState":
        eci, ecef = elements.positions(t)
        lat, lon = kernels.ecef_to_latlon(ecef)
        return cls(t, eci, ecef, lat, lon)


@dataclass
class Connectivity:
    """Undirected link set at one instant; ``i < j`` and rows sorted by (i, j)."""

    t: datetime
    n_nodes: int
    n_satellites: int
    i: np.ndarray
    j: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        m = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
        m[self.i, self.j] = True
        m[self.j, self.i] = True
        return m

    @property
    def n_edges(self) -> int:
        return int(self.i.size)

    @property
    def is_isl(self) -> np.ndarray:
        return self.j < self.n_satellites

    def edges(self) -> set:
        return set(zip(self.i.tolist(), self.j.tolist()))


@dataclass(frozen=True)
class Attachment:
    satellite: int | None  # node index
    since: datetime | None


@dataclass
class AttachmentState:
    by_ground: dict = field(default_factory=dict)

    def get(self, ground_id: str) -> Attachment:
        return self.by_ground.get(ground_id, Attachment(None, None))


@dataclass(frozen=True)
class Visible:
    satellite: int  # node index
    satellite_id: int
    elevation: float
    distance: float


def _canonical(pairs) -> np.ndarray:
    """Deduplicate undirected pairs into a sorted (E, 2) int array with i < j."""
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    arr = np.sort(arr, axis=1)
    arr = arr[arr[:, 0] != arr[:, 1]]
    return np.unique(arr, axis=0)


def _orbit_offsets(geometry: ConstellationGeometry):
    offs, k = [], 0
    for orbit in geometry.orbits:
        offs.append(k)
        k += len(orbit)
    return offs


def build_isl_intra_orbit(geometry: ConstellationGeometry) -> np.ndarray:
    """Ring per orbit (predecessor/successor), as node-index pairs."""
    pairs = []
    for off, orbit in zip(_orbit_offsets(geometry), geometry.orbits):
        k = len(orbit)
        if k < 3:
            raise TopologyError(f"orbit of size {k} cannot form an ISL ring (need >= 3)")
        pairs.extend((off + m, off + (m + 1) % k) for m in range(k))
    return _canonical(pairs)


def grid_candidates(geometry: ConstellationGeometry, cross_offset: int = 0) -> np.ndarray:
    """Unfiltered +grid torus: rings plus same-index links to the next orbit."""
    if len(geometry.orbits) < 2:
        raise TopologyError("grid ISL pattern needs at least 2 orbits")
    pairs = build_isl_intra_orbit(geometry).tolist()
    offs = _orbit_offsets(geometry)
    P = len(geometry.orbits)
    for p in range(P):
        q = (p + 1) % P
        kp, kq = len(geometry.orbits[p]), len(geometry.orbits[q])
        for m in range(kp):
            pairs.append((offs[p] + m, offs[q] + (m + cross_offset) % kq))
    return _canonical(pairs)


def filter_isls(candidates: np.ndarray, state: ConstellationState, max_range_km: float | None = None,
                lat_mask_deg: float | None = None) -> np.ndarray:
    keep = np.ones(len(candidates), dtype=bool)
    if len(candidates) == 0:
        return candidates
    a, b = candidates[:, 0], candidates[:, 1]
    if max_range_km is not None:
        keep &= kernels.edge_lengths(state.eci, a, b) <= max_range_km
    if lat_mask_deg is not None:
        high = np.abs(state.lat) > lat_mask_deg
        keep &= ~(high[a] & high[b])
    return candidates[keep]


def build_isl_grid(geometry: ConstellationGeometry, state: ConstellationState | None = None,
                   max_range_km: float | None = None, lat_mask_deg: float | None = None,
                   cross_offset: int = 0) -> np.ndarray:
    cands = grid_candidates(geometry, cross_offset)
    if state is None:
        if max_range_km is not None or lat_mask_deg is not None:
            raise TopologyError("ISL limits need satellite states")
        return cands
    return filter_isls(cands, state, max_range_km, lat_mask_deg)


def visible_satellites(ground: GroundSegment, state: ConstellationState, min_elevation_deg: float,
                       satellite_ids=None, ground_ecef=None) -> list[Visible]:
    """Satellites at or above the elevation mask, nearest first (ties by satellite id)."""
    if not 0.0 <= min_elevation_deg < 90.0:
        raise ValueError("min elevation must lie in [0, 90)")
    g = ground.ecef() if ground_ecef is None else ground_ecef
    elev, rng = kernels.look_angles(g, ground.up_vector(), state.ecef)
    idx = np.nonzero(elev >= min_elevation_deg)[0]
    ids = np.arange(len(elev)) if satellite_ids is None else np.asarray(satellite_ids)
    order = np.lexsort((ids[idx], rng[idx]))
    return [Visible(int(idx[k]), int(ids[idx[k]]), float(elev[idx[k]]), float(rng[idx[k]])) for k in order]


def select_attachment(strategy: HandoverStrategy, visible: list[Visible], prior: Attachment | None,
                      t: datetime) -> Attachment:
    prior = prior or Attachment(None, None)
    if not visible:
        return Attachment(None, None)
    if HandoverStrategy(strategy) is HandoverStrategy.LONGEST_ATTACHMENT and prior.satellite is not None:
        if any(v.satellite == prior.satellite for v in visible):
            return prior
    best = visible[0].satellite
    if best == prior.satellite:
        return prior
    return Attachment(best, t)


def build_connectivity(t: datetime, state: ConstellationState, isl_edges: np.ndarray, ground_segments,
                       n_satellites: int, handover: HandoverStrategy, min_elevation_deg: float,
                       prior: AttachmentState | None = None, satellite_ids=None, ground_ecef=None):
    """Union of the (already filtered) ISL edges and one GSL per ground segment.

    Returns ``(Connectivity, AttachmentState)``.
    """
    prior = prior or AttachmentState()
    new = AttachmentState()
    pairs = [isl_edges.reshape(-1, 2)]
    gsl = []
    for g_k, g in enumerate(ground_segments):
        gpos = None if ground_ecef is None else ground_ecef[g_k]
        vis = visible_satellites(g, state, min_elevation_deg, satellite_ids, gpos)
        att = select_attachment(handover, vis, prior.get(g.id), t)
        new.by_ground[g.id] = att
        if att.satellite is not None:
            gsl.append((att.satellite, n_satellites + g_k))
    if gsl:
        pairs.append(np.asarray(gsl, dtype=np.int64))
    edges = _canonical(np.concatenate(pairs)) if sum(len(p) for p in pairs) else np.zeros((0, 2), np.int64)
    conn = Connectivity(t, n_satellites + len(ground_segments), n_satellites,
                        edges[:, 0].astype(np.int32), edges[:, 1].astype(np.int32))
    return conn, new
