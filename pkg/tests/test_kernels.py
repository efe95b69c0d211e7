"""The numba kernels and their numpy twins must agree."""

import numpy as np
import pytest

from leonet import kernels

pytestmark = pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba not installed")

rng = np.random.default_rng(7)


def test_kepler_backends_agree():
    M = rng.uniform(-10, 10, 2000)
    e = rng.uniform(0, 0.95, 2000)
    E1, ok1 = kernels._kepler_numba(M, e)
    E2, ok2 = kernels._kepler_numpy(M, e)
    assert ok1.all() and ok2.all()
    np.testing.assert_allclose(E1, E2, rtol=0, atol=1e-12)


def test_propagate_backends_agree():
    n = 300
    a = rng.uniform(6700, 8000, n)
    args = (a, rng.uniform(0, 0.2, n), rng.uniform(0, np.pi, n), rng.uniform(0, 2 * np.pi, n),
            rng.uniform(0, 2 * np.pi, n), rng.uniform(0, 2 * np.pi, n), np.sqrt(398600.4418 / a ** 3),
            rng.uniform(-5000, 5000, n))
    eci1, ecef1 = kernels._propagate_numba(*args, 1.234)
    eci2, ecef2 = kernels._propagate_numpy(*args, 1.234)
    np.testing.assert_allclose(eci1, eci2, atol=1e-8)
    np.testing.assert_allclose(ecef1, ecef2, atol=1e-8)


def test_geodetic_and_look_angles_agree():
    pts = rng.normal(size=(500, 3))
    pts = pts / np.linalg.norm(pts, axis=1)[:, None] * rng.uniform(6400, 7500, (500, 1))
    la1, lo1 = kernels._geodetic_numba(pts)
    la2, lo2 = kernels._geodetic_numpy(pts)
    np.testing.assert_allclose(la1, la2, atol=1e-9)
    np.testing.assert_allclose(lo1, lo2, atol=1e-9)
    g = np.array([4000.0, 100.0, 4950.0])
    up = g / np.linalg.norm(g)
    e1, r1 = kernels._look_numba(g, up, pts)
    e2, r2 = kernels._look_numpy(g, up, pts)
    np.testing.assert_allclose(e1, e2, atol=1e-9)
    np.testing.assert_allclose(r1, r2, atol=1e-9)


def test_edge_lengths_agree():
    pos = rng.normal(size=(50, 3)) * 7000
    i = rng.integers(0, 50, 200)
    j = rng.integers(0, 50, 200)
    np.testing.assert_allclose(kernels._edge_len_numba(pos, i, j), kernels._edge_len_numpy(pos, i, j), atol=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_waterfill_backends_agree(seed):
    r = np.random.default_rng(seed)
    n_flows, n_links = 12, 20
    inc_f, inc_l = [], []
    for f in range(n_flows):
        for l in r.choice(n_links, size=r.integers(1, 6), replace=False):
            inc_f.append(f)
            inc_l.append(l)
    cap = r.uniform(10, 100, n_links)
    demand = np.where(r.random(n_flows) < 0.5, np.inf, r.uniform(1, 50, n_flows))
    routed = r.random(n_flows) < 0.9
    a = kernels._waterfill_numba(n_flows, np.array(inc_f), np.array(inc_l), cap, demand, routed)
    b = kernels._waterfill_numpy(n_flows, np.array(inc_f), np.array(inc_l), cap, demand, routed)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-9)


def test_backend_flag_is_consistent():
    assert kernels.BACKEND == ("numba" if kernels.USE_NUMBA else "numpy")
