import dataclasses
import struct
from pathlib import Path

import numpy as np
import pytest

from leonet import backstage as bs
from leonet.config import SatelliteSource
from leonet.routing import RoutingTable
from leonet.weather import ClearSkyProvider, FixtureWeatherProvider

from conftest import make_config

DATA = Path(__file__).parent / "data"


def _edges(rows):
    a = np.zeros(len(rows), dtype=bs.EDGE_DTYPE)
    for k, r in enumerate(rows):
        a[k] = r
    return a


def _snap(tick, rows, paths=None):
    r = RoutingTable(None)
    for (s, d), p in (paths or {}).items():
        r.paths[(s, d)] = p
        for u, v in zip(p[:-1], p[1:]):
            r.next_hop.setdefault(u, {})[d] = v
    return bs.TopologySnapshot(tick, tick * 1000, _edges(rows), r)


# --- diff -------------------------------------------------------------------


def test_identical_snapshots_give_empty_delta():
    s = _snap(0, [(0, 1, 2.0, 100.0), (1, 2, 3.0, 100.0)])
    assert bs.diff_snapshots(s, _snap(1, [(0, 1, 2.0, 100.0), (1, 2, 3.0, 100.0)]), 4).is_empty


def test_handover_is_one_removed_one_added():
    # ground node 3 moves its GSL from satellite 0 to satellite 1
    a = _snap(0, [(0, 1, 2.0, 1e4), (0, 3, 2.0, 2500.0)])
    b = _snap(1, [(0, 1, 2.0, 1e4), (1, 3, 2.1, 2400.0)])
    d = bs.diff_snapshots(a, b, 4)
    assert d.removed.tolist() == [(0, 3)]
    assert d.added.tolist() == [(1, 3, 2.1, 2400.0)]
    assert d.modified.size == 0


def test_threshold_semantics():
    a = _snap(0, [(0, 1, 2.0, 100.0)])
    small = _snap(1, [(0, 1, 2.001, 100.5)])
    big = _snap(1, [(0, 1, 2.02, 100.0)])
    assert bs.diff_snapshots(a, small, 2, 0.01, 1.0).is_empty
    assert bs.diff_snapshots(a, big, 2, 0.01, 1.0).modified.tolist() == [(0, 1, 2.02, 100.0)]
    assert bs.diff_snapshots(a, small, 2, 0.0, 0.0).modified.size == 1


def test_diff_rejects_foreign_nodes():
    with pytest.raises(ValueError):
        bs.diff_snapshots(_snap(0, [(0, 9, 1.0, 1.0)]), _snap(1, []), 4)


def test_routing_and_path_changes_recorded_and_applied():
    a = _snap(0, [(0, 1, 1, 1), (1, 2, 1, 1), (0, 2, 5, 1)], {(0, 2): (0, 1, 2)})
    b = _snap(1, [(0, 2, 1, 1)], {(0, 2): (0, 2)})
    d = bs.diff_snapshots(a, b, 3, flows=[("f", 0, 2)])
    assert d.path_changes == [{"flow": "f", "src": 0, "dst": 2, "old": [0, 1, 2], "new": [0, 2]}]
    assert sorted(d.routing_changes) == [(0, 2, 2), (1, 2, -1)]
    folded = bs.apply_delta(a, d, 3)
    assert folded.routing == b.routing
    assert folded.edges.tobytes() == b.edges.tobytes()


def test_apply_rejects_unknown_modified_link():
    d = bs.LinkDelta(1, 1000, _edges([]), np.zeros(0, bs.PAIR_DTYPE), _edges([(1, 2, 1.0, 1.0)]), [], [])
    with pytest.raises(bs.BundleError):
        bs.apply_delta(_snap(0, [(0, 1, 1, 1)]), d, 3)


# --- relevance ----------------------------------------------------------------


def test_relevance_zero_flows_is_empty():
    assert bs.relevant_subset([{(0, 4): (0, 1, 2, 3, 4)}], []).empty


def test_relevance_static_path():
    paths = {(0, 4): (0, 1, 2, 3, 4)}
    m = bs.relevant_subset([paths] * 5, [("f", 0, 4)])
    assert m.nodes == {0, 1, 2, 3, 4}
    assert m.links == {(0, 1), (1, 2), (2, 3), (3, 4)}


def test_relevance_unions_across_path_change():
    m = bs.relevant_subset([{(0, 4): (0, 1, 4)}, {(0, 4): (0, 2, 4)}], [("f", 0, 4)])
    assert m.nodes == {0, 1, 2, 4}
    assert m.links == {(0, 1), (1, 4), (0, 2), (2, 4)}


# --- precompute + bundle --------------------------------------------------------


def test_tick_count(small_bundle):
    assert small_bundle.n_ticks == 10 and len(small_bundle.deltas) == 9
    assert [d.t_ms for d in small_bundle.deltas] == list(range(1000, 10000, 1000))


def test_frozen_time_gives_empty_deltas():
    b = bs.precompute(make_config(simulation={"duration_s": 3}), freeze_time=True)
    assert len(b.deltas) == 2 and all(d.is_empty for d in b.deltas)


def test_relevance_mask_covers_flow(small_bundle):
    s, d = small_bundle.flow_nodes(small_bundle.flows[0])
    assert {s, d} <= small_bundle.relevance.nodes
    for delta in small_bundle.deltas:
        for arr in (delta.added, delta.removed, delta.modified):
            assert all((int(a), int(b)) in small_bundle.relevance.links for a, b in zip(arr["i"], arr["j"]))


def test_fold_matches_direct_recomputation_globally():
    cfg = make_config()
    b = bs.precompute(cfg, eps_latency_ms=0.0, eps_capacity_mbps=0.0, relevance=False)
    model = bs.ScenarioModel(cfg)
    for snap in b.fold():
        direct = model.snapshot(snap.tick, ClearSkyProvider())
        assert snap.edges.tobytes() == direct.edges.tobytes()
        assert snap.routing == direct.routing


def test_drift_stays_within_eps():
    cfg = make_config(simulation={"duration_s": 30})
    b = bs.precompute(cfg, eps_latency_ms=0.01, eps_capacity_mbps=1.0, relevance=False)
    model = bs.ScenarioModel(cfg)
    for snap in b.fold():
        direct = model.snapshot(snap.tick, None)
        assert np.array_equal(snap.edges[["i", "j"]], direct.edges[["i", "j"]])
        assert np.max(np.abs(snap.edges["latency"] - direct.edges["latency"])) <= 0.01
        assert np.max(np.abs(snap.edges["capacity"] - direct.edges["capacity"])) <= 1.0


def test_save_load_round_trip_is_byte_identical(tmp_path, small_bundle):
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    bs.save_bundle(small_bundle, p1)
    loaded = bs.load_bundle(p1)
    bs.save_bundle(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert loaded.config == small_bundle.config
    assert loaded.node_index == small_bundle.node_index
    assert loaded.relevance == small_bundle.relevance
    for x, y in zip(loaded.fold(), small_bundle.fold()):
        assert x.edges.tobytes() == y.edges.tobytes() and x.routing == y.routing


def test_corrupted_byte_fails_checksum(tmp_path, small_bundle):
    p = tmp_path / "a.bin"
    bs.save_bundle(small_bundle, p)
    data = bytearray(p.read_bytes())
    data[len(data) // 2] ^= 0x01
    p.write_bytes(bytes(data))
    with pytest.raises(bs.BundleIntegrityError):
        bs.load_bundle(p)


def test_future_version_rejected(tmp_path, small_bundle):
    data = bytearray(bs.encode_bundle(small_bundle))
    data[8:12] = struct.pack("<I", bs.BUNDLE_SCHEMA_VERSION + 1)
    with pytest.raises(bs.BundleVersionError):
        bs.decode_bundle(bytes(data))


def test_truncated_file_rejected(small_bundle):
    data = bs.encode_bundle(small_bundle)
    for cut in (5, 20, len(data) // 3, len(data) - 1):
        with pytest.raises(bs.BundleTruncatedError):
            bs.decode_bundle(data[:cut])


def test_precompute_is_deterministic_with_fixture_weather():
    cfg = make_config(weather={"mode": "fixture", "fixture": str(DATA / "weather_fixture.csv")})
    prov = FixtureWeatherProvider.from_csv(DATA / "weather_fixture.csv")
    a = bs.encode_bundle(bs.precompute(cfg, prov))
    b = bs.encode_bundle(bs.precompute(cfg, FixtureWeatherProvider.from_csv(DATA / "weather_fixture.csv")))
    assert a == b


def test_precompute_failure_names_tick():
    class Boom:
        def sample(self, lat, lon, t):
            raise RuntimeError("kaput")

    with pytest.raises(bs.PrecomputeError, match="tick 0"):
        bs.precompute(make_config(), Boom())


def test_tle_source_resolved_against_base_dir(tmp_path):
    from leonet.geometry import format_tles, generate_walker
    from conftest import T0

    (tmp_path / "shell.tle").write_text(format_tles(generate_walker(6, 8, 550.0, 53.0, 1, epoch=T0)))
    cfg = make_config(simulation={"duration_s": 2})
    cfg = dataclasses.replace(cfg, satellites=SatelliteSource(tle_file="shell.tle"))
    b = bs.precompute(cfg, base_dir=tmp_path)
    assert b.node_index.n_satellites == 48
