"""Playback of a precomputed bundle with a flow-level traffic model.

Each tick applies the stored delta, refreshes flow paths from the routing
cache, allocates demand-capped max-min fair rates and emits events.  Event
records (one JSON object per line) share ``tick``, ``t_ms`` (offset from the
scenario start), ``unix_ms`` and ``kind``; the rest depends on the kind:

=============  ==========================================================
LinkUp         ``a``, ``b``, ``latency_ms``, ``capacity_mbps``
LinkDown       ``a``, ``b``
LinkModified   ``a``, ``b``, ``latency_ms``, ``capacity_mbps``
PathChange     ``flow``, ``old_path``, ``new_path``, ``old_hops``, ``new_hops``
FlowStats      ``flow``, ``rate_mbps``, ``latency_ms``, ``hops``, ``disrupted``
ProbeResult    ``flow``, ``rtt_ms`` (null on loss), ``loss``
TickLag        ``processing_ms``, ``interval_ms``, ``lag_ms``
Warning        ``message``
=============  ==========================================================

Within a tick, records follow that table's order (link events first, lag last).
"""

from __future__ import annotations

import enum
import json
import math
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import kernels
from .backstage import ScenarioBundle, TopologySnapshot, apply_delta
from .routing import export_route_commands


class PlaybackError(RuntimeError):
    pass


class Mode(str, enum.Enum):
    REALTIME = "realtime"
    FAST = "fast"


KIND_ORDER = ("LinkUp", "LinkDown", "LinkModified", "PathChange", "FlowStats", "ProbeResult", "TickLag", "Warning")


@dataclass
class SimEvent:
    tick: int
    t_ms: int
    unix_ms: int
    kind: str
    payload: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"tick": self.tick, "t_ms": self.t_ms, "unix_ms": self.unix_ms, "kind": self.kind, **self.payload}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class ProbeResult:
    rtt_ms: float | None

    @property
    def loss(self) -> bool:
        return self.rtt_ms is None


class PlaybackState:
    """Live view of the relevant subset: folded snapshot plus per-flow path and rate."""

    def __init__(self, snapshot: TopologySnapshot, n_nodes: int):
        self.n_nodes = n_nodes
        self.snapshot = snapshot
        self.paths: dict = {}
        self.rates: dict = {}
        self._reindex()

    @property
    def tick(self) -> int:
        return self.snapshot.tick

    @property
    def routing(self):
        return self.snapshot.routing

    def _reindex(self):
        e = self.snapshot.edges
        self.links = {(a, b): (lat, cap) for a, b, lat, cap in
                      zip(e["i"].tolist(), e["j"].tolist(), e["latency"].tolist(), e["capacity"].tolist())}

    def apply(self, delta) -> None:
        self.snapshot = apply_delta(self.snapshot, delta, self.n_nodes)
        self._reindex()

    def link(self, a: int, b: int):
        return self.links.get((a, b) if a < b else (b, a))

    def path_links(self, path):
        """``[(key, latency, capacity)]`` for each hop, or None when a hop is missing."""
        out = []
        for a, b in zip(path[:-1], path[1:]):
            k = (a, b) if a < b else (b, a)
            v = self.links.get(k)
            if v is None:
                return None
            out.append((k, v[0], v[1]))
        return out


def allocate_throughput(paths, capacity, demands=None) -> list:
    """Demand-capped max-min fair rates (Mbps).

    ``paths[f]`` is a sequence of link keys (None or empty for an unrouted
    flow); ``capacity`` maps link key to Mbps; ``demands[f]`` is Mbps or None
    for unlimited.
    """
    n = len(paths)
    demands = [None] * n if demands is None else list(demands)
    keys, inc_f, inc_l = {}, [], []
    routed = np.zeros(n, dtype=bool)
    for f, p in enumerate(paths):
        if not p:
            continue
        routed[f] = True
        for k in p:
            inc_f.append(f)
            inc_l.append(keys.setdefault(k, len(keys)))
    cap = np.zeros(len(keys))
    for k, idx in keys.items():
        cap[idx] = capacity[k]
    dem = np.array([math.inf if d is None else float(d) for d in demands], dtype=np.float64)
    rate = kernels.waterfill(n, np.array(inc_f, dtype=np.int64), np.array(inc_l, dtype=np.int64), cap, dem, routed)
    return _clip_to_capacity([float(r) for r in rate], inc_f, inc_l, cap)


def _clip_to_capacity(rate, inc_f, inc_l, cap):
    # filling leaves saturated links a few ulps over; shave them so the
    # exactly rounded sum never exceeds capacity (lowering only helps other links)
    users = [[] for _ in range(len(cap))]
    for f, l in zip(inc_f, inc_l):
        users[l].append(f)
    for l, fs in enumerate(users):
        while fs and math.fsum(rate[f] for f in fs) > cap[l]:
            for f in fs:
                rate[f] = math.nextafter(rate[f], 0.0)
    return rate


def probe_latency(path_latencies) -> ProbeResult:
    """RTT = 2 x one-way path latency; ``None`` (unrouted) reports loss."""
    if path_latencies is None:
        return ProbeResult(None)
    return ProbeResult(2.0 * math.fsum(path_latencies))


def apply_disruption(window_ms: float, change_tick: int, interval_ms: int) -> range:
    """Ticks whose reported rate is forced to zero after a path change at ``change_tick``."""
    if window_ms < 0:
        raise ValueError("disruption window must be >= 0")
    n = math.ceil(window_ms / interval_ms - 1e-12) if window_ms > 0 else 0
    return range(change_tick + 1, change_tick + 1 + n)


class JsonlSink:
    def __init__(self, fh):
        self.fh = fh

    def __call__(self, ev: SimEvent):
        self.fh.write(ev.to_json() + "\n")


@dataclass
class RunResult:
    events: list
    processing_ms: list
    lag_ms: list
    wall_s: float
    n_events: int = 0

    def p95_lag_ms(self) -> float:
        return float(np.percentile(self.lag_ms, 95)) if self.lag_ms else 0.0


def _check_flows(bundle: ScenarioBundle, flows):
    known = {f.id: f for f in bundle.flows}
    for f in flows:
        g = known.get(f.id)
        if g is None or (g.src, g.dst) != (f.src, f.dst):
            raise PlaybackError(f"flow {f.id!r} is not part of the bundle's scenario")


def _wait_until(due, clock, sleep):
    # sleep() may return early; never start a tick before its slot
    while True:
        now = clock()
        if now >= due:
            return
        sleep(due - now)


def run(bundle: ScenarioBundle, flows=None, mode: Mode | str = Mode.FAST, sink=None, routes_dir=None,
        clock=time.perf_counter, sleep=time.sleep, collect: bool = True, on_tick=None) -> RunResult:
    """Play the bundle tick by tick.

    In realtime mode tick ``k`` starts no earlier than ``start + k * interval``
    (absolute schedule, so lateness never accumulates beyond the overruns),
    and the run ends no earlier than ``start + n_ticks * interval``.
    ``on_tick(state)`` is called after each tick's state is final.
    """
    mode = Mode(mode)
    flows = list(bundle.flows if flows is None else flows)
    _check_flows(bundle, flows)
    interval = bundle.interval_ms
    start_unix_ms = int(round(bundle.config.sim_window.start.timestamp() * 1000))
    ends = [bundle.flow_nodes(f) for f in flows]
    ids = bundle.node_index.ids

    events, proc, lags = [], [], []
    count = 0

    def emit(ev):
        nonlocal count
        count += 1
        if collect:
            events.append(ev)
        if sink is not None:
            sink(ev)

    state = PlaybackState(bundle.initial_view(), bundle.n_nodes)
    blocked: dict = {}  # flow id -> tick range with zeroed rate
    t0 = clock()
    for k in range(bundle.n_ticks):
        if mode is Mode.REALTIME:
            _wait_until(t0 + k * interval / 1000.0, clock, sleep)
        began = clock()
        t_ms = k * interval
        unix_ms = start_unix_ms + t_ms

        def ev(kind, **payload):
            emit(SimEvent(k, t_ms, unix_ms, kind, payload))

        if k > 0:
            d = bundle.deltas[k - 1]
            if d.tick != k:
                raise PlaybackError(f"delta sequence broken at tick {k}")
            state.apply(d)
            for r in d.added.tolist():
                ev("LinkUp", a=ids[r[0]], b=ids[r[1]], latency_ms=r[2], capacity_mbps=r[3])
            for r in d.removed.tolist():
                ev("LinkDown", a=ids[r[0]], b=ids[r[1]])
            for r in d.modified.tolist():
                ev("LinkModified", a=ids[r[0]], b=ids[r[1]], latency_ms=r[2], capacity_mbps=r[3])

        t_s = t_ms / 1000.0
        active = [f.active(t_s) for f in flows]
        hops_now, warnings = [], []
        for n, (f, (s, dd)) in enumerate(zip(flows, ends)):
            path = state.routing.paths.get((s, dd)) if active[n] else None
            hop_data = state.path_links(path) if path else None
            if path and hop_data is None:
                warnings.append(f"flow {f.id}: path uses a link missing from the live topology")
                path = None
            hops_now.append(hop_data)
            if not active[n]:
                state.paths.pop(f.id, None)
                continue
            old = state.paths.get(f.id, path)
            if f.id in state.paths and old != path:
                ev("PathChange", flow=f.id,
                   old_path=None if old is None else [ids[x] for x in old],
                   new_path=None if path is None else [ids[x] for x in path],
                   old_hops=None if old is None else len(old) - 1,
                   new_hops=None if path is None else len(path) - 1)
                blocked[f.id] = apply_disruption(f.disruption_window_ms, k, interval)
            state.paths[f.id] = path

        disrupted = [active[n] and k in blocked.get(f.id, ()) for n, f in enumerate(flows)]
        alloc_paths = [None if (h is None or disrupted[n]) else [x[0] for x in h] for n, h in enumerate(hops_now)]
        capacity = {x[0]: x[2] for h in hops_now if h for x in h}
        rates = allocate_throughput(alloc_paths, capacity, [f.demand_mbps for f in flows])
        for n, f in enumerate(flows):
            if not active[n]:
                state.rates.pop(f.id, None)
                continue
            h = hops_now[n]
            state.rates[f.id] = rates[n]
            ev("FlowStats", flow=f.id, rate_mbps=rates[n],
               latency_ms=None if h is None else math.fsum(x[1] for x in h),
               hops=None if h is None else len(h), disrupted=disrupted[n])
        for n, f in enumerate(flows):
            if active[n]:
                h = hops_now[n]
                pr = probe_latency(None if h is None else [x[1] for x in h])
                ev("ProbeResult", flow=f.id, rtt_ms=pr.rtt_ms, loss=pr.loss)
        if routes_dir is not None:
            export_route_commands(state.routing, datetime.fromtimestamp(unix_ms / 1000.0, timezone.utc), routes_dir)
        if on_tick is not None:
            on_tick(state)

        done = clock()
        processing = (done - began) * 1000.0
        lag = (began - (t0 + k * interval / 1000.0)) * 1000.0 if mode is Mode.REALTIME else 0.0
        proc.append(processing)
        lags.append(lag)
        ev("TickLag", processing_ms=processing, interval_ms=interval, lag_ms=lag)
        for w in warnings:
            ev("Warning", message=w)

    if mode is Mode.REALTIME:
        _wait_until(t0 + bundle.n_ticks * interval / 1000.0, clock, sleep)
    return RunResult(events, proc, lags, clock() - t0, count)


def fast_log(events) -> list:
    """Event dicts with wall-clock fields removed, for determinism comparisons."""
    out = []
    for e in events:
        d = e.to_dict()
        if d["kind"] == "TickLag":
            d.pop("processing_ms")
            d.pop("lag_ms")
        out.append(d)
    return out
