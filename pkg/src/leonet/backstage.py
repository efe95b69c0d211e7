"""Pre-computation pipeline: per-tick snapshots, deltas, relevance mask, bundle persistence.

Bundle file layout (all integers little-endian)::

    b"LEONETB\\0"                 8-byte magic
    u32 schema_version
    record*                       u8 tag | u64 payload length | payload
        tag b"H"  header          canonical JSON
        tag b"S"  initial snapshot
        tag b"D"  one per delta, in tick order
        tag b"E"  end marker, empty payload
    32-byte SHA-256 of every preceding byte

Snapshot and delta payloads are ``u32 json_len | canonical JSON | array
bytes``; the JSON lists the arrays (name, row count) in the order their raw
bytes follow.  Edge rows use ``EDGE_DTYPE``, removed-link rows ``PAIR_DTYPE``.
Canonical JSON means sorted keys and compact separators, so saving the same
bundle twice gives identical bytes.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import os
import struct
import sys
from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np

from . import geometry
from .config import ScenarioConfig, scenario_from_dict, scenario_to_dict
from .linkmodel import characterize
from .routing import RoutingTable, all_pairs_tables, build_graph, build_routing_tables, shortest_paths
from .topology import (
    Attachment,
    AttachmentState,
    ConstellationState,
    NodeIndex,
    build_connectivity,
    build_isl_intra_orbit,
    filter_isls,
    grid_candidates,
)

log = logging.getLogger(__name__)

BUNDLE_SCHEMA_VERSION = 1
MAGIC = b"LEONETB\0"
EDGE_DTYPE = np.dtype([("i", "<i4"), ("j", "<i4"), ("latency", "<f8"), ("capacity", "<f8")])
PAIR_DTYPE = np.dtype([("i", "<i4"), ("j", "<i4")])
DEFAULT_EPS_LATENCY_MS = 0.01
DEFAULT_EPS_CAPACITY_MBPS = 1.0


class BundleError(RuntimeError):
    pass


class BundleIntegrityError(BundleError):
    pass


class BundleVersionError(BundleError):
    pass


class BundleTruncatedError(BundleError):
    pass


class PrecomputeError(RuntimeError):
    pass


def edge_keys(arr, n_nodes: int) -> np.ndarray:
    return arr["i"].astype(np.int64) * n_nodes + arr["j"].astype(np.int64)


@dataclass
class TopologySnapshot:
    tick: int
    t_ms: int  # offset from the scenario start
    edges: np.ndarray  # EDGE_DTYPE, sorted by (i, j)
    routing: RoutingTable
    attachments: AttachmentState = field(default_factory=AttachmentState)

    def restricted(self, links, n_nodes: int) -> np.ndarray:
        """Edge rows whose (i, j) key is in ``links`` (a set of pairs)."""
        if links is None:
            return self.edges
        keys = np.fromiter((a * n_nodes + b for a, b in links), dtype=np.int64, count=len(links))
        return self.edges[np.isin(edge_keys(self.edges, n_nodes), keys)]


@dataclass
class LinkDelta:
    tick: int
    t_ms: int
    added: np.ndarray  # EDGE_DTYPE
    removed: np.ndarray  # PAIR_DTYPE
    modified: np.ndarray  # EDGE_DTYPE
    routing_changes: list  # (node, dst, next hop or -1 for withdrawal)
    path_changes: list  # {"flow", "src", "dst", "old", "new"}

    @property
    def is_empty(self) -> bool:
        return not (self.added.size or self.removed.size or self.modified.size
                    or self.routing_changes or self.path_changes)


@dataclass(frozen=True)
class RelevanceMask:
    nodes: frozenset
    links: frozenset  # (i, j) with i < j

    @property
    def empty(self) -> bool:
        return not self.nodes and not self.links


# ---------------------------------------------------------------------------
# diff / fold


def _empty(dtype):
    return np.zeros(0, dtype=dtype)


def diff_snapshots(prev: TopologySnapshot, nxt: TopologySnapshot, n_nodes: int,
                   eps_latency_ms: float = DEFAULT_EPS_LATENCY_MS,
                   eps_capacity_mbps: float = DEFAULT_EPS_CAPACITY_MBPS, flows=()) -> LinkDelta:
    """Link, routing-entry and per-flow path differences from ``prev`` to ``nxt``.

    ``flows`` is a sequence of ``(flow_id, src_node, dst_node)``.  A link in
    both snapshots counts as modified when latency moves by more than
    ``eps_latency_ms`` or capacity by more than ``eps_capacity_mbps``.
    """
    for snap in (prev, nxt):
        if snap.edges.size and (snap.edges["i"].max() >= n_nodes or snap.edges["j"].max() >= n_nodes):
            raise ValueError("snapshot refers to nodes beyond the node index")
    kp, kn = edge_keys(prev.edges, n_nodes), edge_keys(nxt.edges, n_nodes)
    added = nxt.edges[~np.isin(kn, kp)]
    gone = prev.edges[~np.isin(kp, kn)]
    removed = np.zeros(gone.size, dtype=PAIR_DTYPE)
    removed["i"], removed["j"] = gone["i"], gone["j"]
    _, ip, inx = np.intersect1d(kp, kn, assume_unique=True, return_indices=True)
    a, b = prev.edges[ip], nxt.edges[inx]
    changed = (np.abs(a["latency"] - b["latency"]) > eps_latency_ms) | \
              (np.abs(a["capacity"] - b["capacity"]) > eps_capacity_mbps)
    modified = b[changed]

    old_e, new_e = prev.routing.entries(), nxt.routing.entries()
    routing = sorted(
        [(u, d, n) for (u, d), n in new_e.items() if old_e.get((u, d)) != n]
        + [(u, d, -1) for (u, d) in old_e if (u, d) not in new_e]
    )
    paths = []
    for fid, s, d in flows:
        old, new = prev.routing.paths.get((s, d)), nxt.routing.paths.get((s, d))
        if old != new:
            paths.append({"flow": fid, "src": s, "dst": d,
                          "old": None if old is None else list(old), "new": None if new is None else list(new)})
    return LinkDelta(nxt.tick, nxt.t_ms, added, removed, modified, routing, paths)


def apply_delta(snap: TopologySnapshot, delta: LinkDelta, n_nodes: int) -> TopologySnapshot:
    keys = edge_keys(snap.edges, n_nodes)
    rm = edge_keys(delta.removed, n_nodes)
    base = snap.edges[~np.isin(keys, rm)].copy()
    if delta.modified.size:
        bk = edge_keys(base, n_nodes)
        mk = edge_keys(delta.modified, n_nodes)
        pos = np.searchsorted(bk, mk)
        if np.any(pos >= bk.size) or np.any(bk[np.minimum(pos, bk.size - 1)] != mk):
            raise BundleError(f"delta at tick {delta.tick} modifies a link that does not exist")
        base["latency"][pos] = delta.modified["latency"]
        base["capacity"][pos] = delta.modified["capacity"]
    edges = np.concatenate([base, delta.added]) if delta.added.size else base
    edges = edges[np.argsort(edge_keys(edges, n_nodes), kind="stable")]
    routing = snap.routing.copy()
    for u, d, n in delta.routing_changes:
        if n < 0:
            routing.next_hop.get(u, {}).pop(d, None)
            if u in routing.next_hop and not routing.next_hop[u]:
                del routing.next_hop[u]
        else:
            routing.next_hop.setdefault(u, {})[d] = n
    for pc in delta.path_changes:
        routing.paths[(pc["src"], pc["dst"])] = None if pc["new"] is None else tuple(pc["new"])
    return TopologySnapshot(delta.tick, delta.t_ms, edges, routing)


def relevant_subset(routings, flows) -> RelevanceMask:
    """Union over ticks of every flow's path nodes/links plus the flow endpoints.

    ``routings`` is an iterable of RoutingTables (or ``{(src, dst): path}``
    dicts); ``flows`` a sequence of ``(flow_id, src_node, dst_node)``.
    """
    flows = list(flows)
    nodes, links = set(), set()
    for _, s, d in flows:
        nodes.update((s, d))
    if not flows:
        return RelevanceMask(frozenset(), frozenset())
    pairs = {(s, d) for _, s, d in flows}
    for r in routings:
        paths = r.paths if isinstance(r, RoutingTable) else r
        for pair in pairs:
            p = paths.get(pair)
            if p:
                nodes.update(p)
                links.update((min(a, b), max(a, b)) for a, b in zip(p[:-1], p[1:]))
    return RelevanceMask(frozenset(nodes), frozenset(links))


def filter_delta(delta: LinkDelta, mask: RelevanceMask | None, n_nodes: int) -> LinkDelta:
    if mask is None:
        return delta
    keys = np.fromiter((a * n_nodes + b for a, b in mask.links), dtype=np.int64, count=len(mask.links))

    def keep(arr):
        return arr[np.isin(edge_keys(arr, n_nodes), keys)]

    return LinkDelta(delta.tick, delta.t_ms, keep(delta.added), keep(delta.removed), keep(delta.modified),
                     [r for r in delta.routing_changes if r[0] in mask.nodes], list(delta.path_changes))


# ---------------------------------------------------------------------------
# scenario model


class ScenarioModel:
    """Everything static about a scenario: ordered elements, node index, ISL candidates."""

    def __init__(self, config: ScenarioConfig, base_dir=None, elements=None):
        self.config = config
        if elements is None:
            elements = load_elements(config, base_dir)
        self.geometry = geometry.group_orbits(elements)
        by_id = {el.satellite_id: el for el in elements}
        self.elements = geometry.ElementSet([by_id[s] for s in self.geometry.satellite_ids])
        self.grounds = list(config.ground_segments)
        self.node_index = NodeIndex.from_geometry(self.geometry, [g.id for g in self.grounds])
        self.n_sat = self.node_index.n_satellites
        self.n_nodes = len(self.node_index)
        self.ground_ecef = np.array([g.ecef() for g in self.grounds]).reshape(-1, 3)
        cons = config.constellation
        if cons.isl_pattern == "grid":
            self.isl_candidates = grid_candidates(self.geometry, cons.cross_orbit_offset)
        else:
            self.isl_candidates = build_isl_intra_orbit(self.geometry)
        self.flows = [(f.id, self.node_index.ground_index(f.src), self.node_index.ground_index(f.dst))
                      for f in config.applications.flows]
        self.pairs = sorted({(s, d) for _, s, d in self.flows})

    def time_at(self, tick: int) -> datetime:
        return self.config.sim_window.start + timedelta(milliseconds=tick * self.config.sim_window.interval_ms)

    def snapshot(self, tick: int, provider, prior: AttachmentState | None = None,
                 all_pairs: bool = False, freeze_time: bool = False) -> TopologySnapshot:
        cfg = self.config
        t = self.time_at(tick)
        t_orbit = self.time_at(0) if freeze_time else t
        state = ConstellationState.compute(self.elements, t_orbit)
        cons = cfg.constellation
        isl = filter_isls(self.isl_candidates, state, cons.isl_max_range_km, cons.isl_lat_mask_deg)
        conn, att = build_connectivity(t, state, isl, self.grounds, self.n_sat, cfg.applications.handover,
                                       cons.min_elevation_deg, prior, self.node_index.satellite_ids,
                                       self.ground_ecef)
        if freeze_time:
            att = AttachmentState({g: Attachment(a.satellite, self.time_at(0) if a.satellite is not None else None)
                                   for g, a in att.by_ground.items()})
        pos = np.concatenate([state.ecef, self.ground_ecef]) if len(self.grounds) else state.ecef
        lm = characterize(conn, pos, self.n_sat, self.grounds, cfg.rf, provider, t)
        for w in lm.warnings:
            log.warning("tick %d: %s", tick, w)
        graph = build_graph(self.n_nodes, conn.i, conn.j, lm.latency, lm.capacity, cfg.applications.routing_metric)
        if all_pairs:
            routing = all_pairs_tables(graph, self.pairs, t)
        else:
            routing = build_routing_tables(shortest_paths(graph, self.pairs), t)
        edges = np.zeros(conn.n_edges, dtype=EDGE_DTYPE)
        edges["i"], edges["j"] = conn.i, conn.j
        edges["latency"], edges["capacity"] = lm.latency, lm.capacity
        return TopologySnapshot(tick, tick * cfg.sim_window.interval_ms, edges, routing, att)

    def iter_snapshots(self, provider, all_pairs: bool = False, freeze_time: bool = False, ticks=None):
        prior = AttachmentState()
        for k in range(self.config.sim_window.ticks if ticks is None else ticks):
            snap = self.snapshot(k, provider, prior, all_pairs, freeze_time)
            prior = snap.attachments
            yield snap


def load_elements(config: ScenarioConfig, base_dir=None):
    src = config.satellites
    if src.walker is not None:
        w = src.walker
        return geometry.generate_walker(w.orbits, w.sats_per_orbit, w.altitude_km, w.inclination_deg,
                                        w.phasing, epoch=config.sim_window.start)
    path = src.tle_file
    if base_dir is not None and not os.path.isabs(path):
        path = os.path.join(base_dir, path)
    with open(path, encoding="utf-8") as fh:
        return geometry.parse_tle(fh.read())


# ---------------------------------------------------------------------------
# bundle


@dataclass
class ScenarioBundle:
    config: ScenarioConfig
    node_index: NodeIndex
    initial: TopologySnapshot
    deltas: list
    relevance: RelevanceMask | None
    meta: dict
    schema_version: int = BUNDLE_SCHEMA_VERSION
    checksum: str | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.node_index)

    @property
    def interval_ms(self) -> int:
        return self.config.sim_window.interval_ms

    @property
    def n_ticks(self) -> int:
        return 1 + len(self.deltas)

    @property
    def flows(self):
        return list(self.config.applications.flows)

    def flow_nodes(self, flow):
        return self.node_index.ground_index(flow.src), self.node_index.ground_index(flow.dst)

    def initial_view(self) -> TopologySnapshot:
        """Initial snapshot restricted to the relevant links (whole when unfiltered)."""
        if self.relevance is None:
            return self.initial
        return TopologySnapshot(self.initial.tick, self.initial.t_ms,
                                self.initial.restricted(self.relevance.links, self.n_nodes),
                                self.initial.routing.copy(), self.initial.attachments)

    def fold(self, upto_tick: int | None = None):
        """Yield the folded state for ticks 0..upto_tick on the stored subset."""
        snap = self.initial_view()
        yield snap
        for d in self.deltas:
            if upto_tick is not None and d.tick > upto_tick:
                return
            snap = apply_delta(snap, d, self.n_nodes)
            yield snap


def precompute(config: ScenarioConfig, weather_provider=None, *, base_dir=None, elements=None,
               eps_latency_ms: float = DEFAULT_EPS_LATENCY_MS, eps_capacity_mbps: float = DEFAULT_EPS_CAPACITY_MBPS,
               relevance: bool = True, all_pairs: bool = False, freeze_time: bool = False,
               progress: bool = False) -> ScenarioBundle:
    """Run the whole window: snapshot tick 0, diff every later tick against the folded state.

    Diffing against the folded state (not the raw previous tick) keeps
    sub-threshold drift from accumulating: the played-back value of any link
    never strays from the true value by more than the epsilon.
    """
    from .weather import ClearSkyProvider

    provider = weather_provider or ClearSkyProvider()
    model = ScenarioModel(config, base_dir, elements)
    n = model.n_nodes
    total = config.sim_window.ticks
    initial = None
    folded = None
    deltas = []
    routings = []
    for snap in _checked(model.iter_snapshots(provider, all_pairs, freeze_time), model):
        routings.append(snap.routing.paths)
        if initial is None:
            initial = folded = snap
        else:
            d = diff_snapshots(folded, snap, n, eps_latency_ms, eps_capacity_mbps, model.flows)
            folded = apply_delta(folded, d, n)
            folded.attachments = snap.attachments
            deltas.append(d)
        if progress and (snap.tick % max(1, total // 20) == 0 or snap.tick == total - 1):
            print(f"precompute: tick {snap.tick + 1}/{total}", file=sys.stderr, flush=True)

    mask = relevant_subset(routings, model.flows) if relevance else None
    if mask is not None:
        deltas = [filter_delta(d, mask, n) for d in deltas]
    meta = {
        "eps_latency_ms": eps_latency_ms,
        "eps_capacity_mbps": eps_capacity_mbps,
        "isl_total": int(len(model.isl_candidates)),
        "n_satellites": model.n_sat,
        "all_pairs": all_pairs,
        "freeze_time": freeze_time,
        "relevance_filtered": relevance,
    }
    return ScenarioBundle(config, model.node_index, initial, deltas, mask, meta)


def _checked(snapshots, model):
    it = iter(snapshots)
    k = 0
    while True:
        try:
            snap = next(it)
        except StopIteration:
            return
        except Exception as exc:
            raise PrecomputeError(f"precompute failed at tick {k}: {exc}") from exc
        k += 1
        yield snap


# --- encoding ---------------------------------------------------------------


def _cjson(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def _routing_doc(r: RoutingTable):
    return {
        "next_hop": [[u, d, n] for (u, d), n in sorted(r.entries().items())],
        "paths": [[s, d, None if p is None else list(p)] for (s, d), p in sorted(r.paths.items())],
    }


def _routing_from(doc, t=None) -> RoutingTable:
    r = RoutingTable(t)
    for u, d, n in doc["next_hop"]:
        r.next_hop.setdefault(u, {})[d] = n
    for s, d, p in doc["paths"]:
        r.paths[(s, d)] = None if p is None else tuple(p)
    return r


def _payload(doc: dict, arrays) -> bytes:
    doc = dict(doc, arrays=[[name, int(arr.size)] for name, arr in arrays])
    js = _cjson(doc)
    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(js)))
    buf.write(js)
    for _, arr in arrays:
        buf.write(np.ascontiguousarray(arr).tobytes())
    return buf.getvalue()


_ARRAY_DTYPES = {"edges": EDGE_DTYPE, "added": EDGE_DTYPE, "modified": EDGE_DTYPE, "removed": PAIR_DTYPE}


def _unpayload(data: bytes):
    (jl,) = struct.unpack_from("<I", data, 0)
    doc = json.loads(data[4:4 + jl].decode("utf-8"))
    off = 4 + jl
    arrays = {}
    for name, count in doc["arrays"]:
        dt = _ARRAY_DTYPES[name]
        nbytes = dt.itemsize * count
        if off + nbytes > len(data):
            raise BundleError("truncated array payload")
        arrays[name] = np.frombuffer(data[off:off + nbytes], dtype=dt).copy()
        off += nbytes
    return doc, arrays


def _record(tag: bytes, payload: bytes) -> bytes:
    return tag + struct.pack("<Q", len(payload)) + payload


def encode_bundle(bundle: ScenarioBundle) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", bundle.schema_version))
    mask = None
    if bundle.relevance is not None:
        mask = {"nodes": sorted(bundle.relevance.nodes), "links": sorted(list(p) for p in bundle.relevance.links)}
    header = {
        "config": scenario_to_dict(bundle.config),
        "satellite_ids": bundle.node_index.satellite_ids,
        "ground_ids": bundle.node_index.ground_ids,
        "relevance": mask,
        "meta": bundle.meta,
        "n_deltas": len(bundle.deltas),
    }
    out.write(_record(b"H", _cjson(header)))
    snap = bundle.initial
    sdoc = {
        "tick": snap.tick, "t_ms": snap.t_ms, "routing": _routing_doc(snap.routing),
        "attachments": {g: [a.satellite, None if a.since is None else a.since.isoformat()]
                        for g, a in sorted(snap.attachments.by_ground.items())},
    }
    out.write(_record(b"S", _payload(sdoc, [("edges", snap.edges)])))
    for d in bundle.deltas:
        ddoc = {"tick": d.tick, "t_ms": d.t_ms, "routing": [list(r) for r in d.routing_changes],
                "paths": d.path_changes}
        out.write(_record(b"D", _payload(ddoc, [("added", d.added), ("removed", d.removed),
                                                 ("modified", d.modified)])))
    out.write(_record(b"E", b""))
    body = out.getvalue()
    return body + hashlib.sha256(body).digest()


def _is_truncated(data: bytes) -> bool:
    """True when the record chain runs off the end before the end marker and trailer."""
    off = len(MAGIC) + 4
    while off + 9 <= len(data):
        tag = data[off:off + 1]
        (ln,) = struct.unpack_from("<Q", data, off + 1)
        off += 9 + ln
        if tag == b"E":
            return off + 32 > len(data)
    return True


def decode_bundle(data: bytes) -> ScenarioBundle:
    if not data or data[:len(MAGIC)] != MAGIC[:len(data)]:
        raise BundleError("not a bundle file (bad magic)")
    if len(data) < len(MAGIC) + 4 + 32:
        raise BundleTruncatedError("bundle file is truncated")
    (version,) = struct.unpack_from("<I", data, len(MAGIC))
    if version != BUNDLE_SCHEMA_VERSION:
        raise BundleVersionError(f"bundle schema version {version} unsupported (expected {BUNDLE_SCHEMA_VERSION})")
    body, digest = data[:-32], data[-32:]
    checksum = hashlib.sha256(body).digest()
    if checksum != digest:
        if _is_truncated(data):
            raise BundleTruncatedError("bundle file is truncated")
        raise BundleIntegrityError("bundle checksum mismatch (file corrupted)")
    off = len(MAGIC) + 4
    header = snap = None
    deltas = []
    ended = False
    while off < len(body):
        if off + 9 > len(body):
            raise BundleError("truncated record header")
        tag = body[off:off + 1]
        (ln,) = struct.unpack_from("<Q", body, off + 1)
        payload = body[off + 9:off + 9 + ln]
        if len(payload) != ln:
            raise BundleError("truncated record")
        off += 9 + ln
        if tag == b"H":
            header = json.loads(payload.decode("utf-8"))
        elif tag == b"S":
            doc, arrs = _unpayload(payload)
            att = AttachmentState({g: Attachment(s, None if ts is None else datetime.fromisoformat(ts))
                                   for g, (s, ts) in doc["attachments"].items()})
            snap = TopologySnapshot(doc["tick"], doc["t_ms"], arrs["edges"], _routing_from(doc["routing"]), att)
        elif tag == b"D":
            doc, arrs = _unpayload(payload)
            deltas.append(LinkDelta(doc["tick"], doc["t_ms"], arrs["added"], arrs["removed"], arrs["modified"],
                                    [tuple(r) for r in doc["routing"]], doc["paths"]))
        elif tag == b"E":
            ended = True
            break
        else:
            raise BundleError(f"unknown record tag {tag!r}")
    if header is None or snap is None or not ended:
        raise BundleError("bundle is missing header, snapshot or end marker")
    if len(deltas) != header["n_deltas"]:
        raise BundleError("delta count does not match header")
    config = scenario_from_dict(header["config"])
    interval = config.sim_window.interval_ms
    prev = snap.t_ms
    for d in deltas:
        if d.t_ms - prev != interval:
            raise BundleError(f"delta at tick {d.tick} is not one interval after its predecessor")
        prev = d.t_ms
    rel = header["relevance"]
    mask = None if rel is None else RelevanceMask(frozenset(rel["nodes"]), frozenset(tuple(p) for p in rel["links"]))
    for s in (snap,):
        s.routing.t = config.sim_window.start
    return ScenarioBundle(config, NodeIndex(header["satellite_ids"], header["ground_ids"]), snap, deltas,
                          mask, header["meta"], version, checksum.hex())


def save_bundle(bundle: ScenarioBundle, path) -> str:
    data = encode_bundle(bundle)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
    bundle.checksum = hashlib.sha256(data[:-32]).hexdigest()
    return bundle.checksum


def load_bundle(path) -> ScenarioBundle:
    with open(path, "rb") as fh:
        return decode_bundle(fh.read())
