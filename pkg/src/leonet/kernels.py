"""Numeric hot loops with two interchangeable backends.

Every kernel exists twice: a numba ``@njit`` loop version and a vectorised
pure-numpy version.  The numba path is used when numba imports cleanly and
the environment variable ``LEONET_DISABLE_NUMBA`` is not set to a truthy
value; otherwise the numpy path is used.  Both paths are importable directly
(``*_numba`` / ``*_numpy``) so tests and the benchmark can compare them.
"""

import os

import numpy as np

_FALSY = {"", "0", "false", "no", "off"}

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("LEONET_DISABLE_NUMBA", "").strip().lower() in _FALSY
BACKEND = "numba" if USE_NUMBA else "numpy"

KEPLER_MAX_ITER = 50
KEPLER_TOL = 1e-14

# WGS-84
WGS84_A = 6378.137
WGS84_F = 1.0 / 298.257223563
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)

TWO_PI = 2.0 * np.pi


if HAVE_NUMBA:
    njit = numba.njit(cache=True, nogil=True)
else:  # pragma: no cover
    def njit(fn):
        return fn


# ---------------------------------------------------------------------------
# Kepler's equation


@njit
def _kepler_numba(M, e):
    n = M.shape[0]
    E = np.empty(n)
    ok = np.ones(n, dtype=np.bool_)
    for k in range(n):
        m = M[k] % TWO_PI
        ek = e[k]
        x = np.pi if ek > 0.8 else m
        conv = False
        for _ in range(KEPLER_MAX_ITER):
            f = x - ek * np.sin(x) - m
            if abs(f) < KEPLER_TOL:
                conv = True
                break
            step = f / (1.0 - ek * np.cos(x))
            x -= step
            if abs(step) < 1e-16:
                conv = True
                break
        E[k] = x
        ok[k] = conv
    return E, ok


def _kepler_numpy(M, e):
    m = np.mod(M, TWO_PI)
    x = np.where(e > 0.8, np.pi, m)
    done = np.zeros(m.shape, dtype=bool)
    for _ in range(KEPLER_MAX_ITER):
        f = x - e * np.sin(x) - m
        done |= np.abs(f) < KEPLER_TOL
        if done.all():
            break
        step = np.where(done, 0.0, f / (1.0 - e * np.cos(x)))
        x = x - step
        done |= (np.abs(step) < 1e-16) & ~done
    return x, done


def solve_kepler(M, e):
    """Vectorised Newton solve of ``M = E - e sin E``.

    Returns ``(E, converged)``; callers decide what to do with stragglers.
    """
    M = np.ascontiguousarray(M, dtype=np.float64)
    e = np.ascontiguousarray(np.broadcast_to(e, M.shape), dtype=np.float64)
    if USE_NUMBA:
        return _kepler_numba(M, e)
    return _kepler_numpy(M, e)


# ---------------------------------------------------------------------------
# Two-body propagation to ECI and ECEF


@njit
def _propagate_numba(a, ecc, inc, raan, argp, M0, n, dt, theta):
    N = a.shape[0]
    eci = np.empty((N, 3))
    ecef = np.empty((N, 3))
    ct = np.cos(theta)
    st = np.sin(theta)
    for k in range(N):
        m = (M0[k] + n[k] * dt[k]) % TWO_PI
        e = ecc[k]
        x = np.pi if e > 0.8 else m
        for _ in range(KEPLER_MAX_ITER):
            f = x - e * np.sin(x) - m
            if abs(f) < KEPLER_TOL:
                break
            step = f / (1.0 - e * np.cos(x))
            x -= step
            if abs(step) < 1e-16:
                break
        nu = 2.0 * np.arctan2(np.sqrt(1.0 + e) * np.sin(0.5 * x),
                              np.sqrt(1.0 - e) * np.cos(0.5 * x))
        r = a[k] * (1.0 - e * np.cos(x))
        u = argp[k] + nu
        cu = np.cos(u)
        su = np.sin(u)
        cO = np.cos(raan[k])
        sO = np.sin(raan[k])
        ci = np.cos(inc[k])
        si = np.sin(inc[k])
        X = r * (cO * cu - sO * su * ci)
        Y = r * (sO * cu + cO * su * ci)
        Z = r * (su * si)
        eci[k, 0] = X
        eci[k, 1] = Y
        eci[k, 2] = Z
        ecef[k, 0] = ct * X + st * Y
        ecef[k, 1] = -st * X + ct * Y
        ecef[k, 2] = Z
    return eci, ecef


def _propagate_numpy(a, ecc, inc, raan, argp, M0, n, dt, theta):
    m = np.mod(M0 + n * dt, TWO_PI)
    E, _ = _kepler_numpy(m, ecc)
    nu = 2.0 * np.arctan2(np.sqrt(1.0 + ecc) * np.sin(0.5 * E),
                          np.sqrt(1.0 - ecc) * np.cos(0.5 * E))
    r = a * (1.0 - ecc * np.cos(E))
    u = argp + nu
    cu, su = np.cos(u), np.sin(u)
    cO, sO = np.cos(raan), np.sin(raan)
    ci, si = np.cos(inc), np.sin(inc)
    X = r * (cO * cu - sO * su * ci)
    Y = r * (sO * cu + cO * su * ci)
    Z = r * (su * si)
    eci = np.stack([X, Y, Z], axis=1)
    ct, st = np.cos(theta), np.sin(theta)
    ecef = np.stack([ct * X + st * Y, -st * X + ct * Y, Z], axis=1)
    return eci, ecef


def propagate_positions(a, ecc, inc, raan, argp, M0, n, dt, theta):
    """Positions (km) in ECI and ECEF for element arrays after ``dt`` seconds.

    ``n`` is mean motion in rad/s, ``theta`` the Earth rotation angle (rad).
    """
    args = [np.ascontiguousarray(x, dtype=np.float64) for x in (a, ecc, inc, raan, argp, M0, n, dt)]
    if USE_NUMBA:
        return _propagate_numba(*args, float(theta))
    return _propagate_numpy(*args, float(theta))


# ---------------------------------------------------------------------------
# ECEF -> geodetic latitude/longitude


@njit
def _geodetic_numba(ecef):
    N = ecef.shape[0]
    lat = np.empty(N)
    lon = np.empty(N)
    for k in range(N):
        x = ecef[k, 0]
        y = ecef[k, 1]
        z = ecef[k, 2]
        p = np.sqrt(x * x + y * y)
        phi = np.arctan2(z, p * (1.0 - WGS84_E2))
        for _ in range(6):
            s = np.sin(phi)
            Nr = WGS84_A / np.sqrt(1.0 - WGS84_E2 * s * s)
            h = p * np.cos(phi) + z * s - WGS84_A * WGS84_A / Nr
            phi = np.arctan2(z, p * (1.0 - WGS84_E2 * Nr / (Nr + h)))
        lat[k] = np.degrees(phi)
        lon[k] = np.degrees(np.arctan2(y, x))
    return lat, lon


def _geodetic_numpy(ecef):
    x, y, z = ecef[:, 0], ecef[:, 1], ecef[:, 2]
    p = np.hypot(x, y)
    phi = np.arctan2(z, p * (1.0 - WGS84_E2))
    for _ in range(6):
        s = np.sin(phi)
        Nr = WGS84_A / np.sqrt(1.0 - WGS84_E2 * s * s)
        h = p * np.cos(phi) + z * s - WGS84_A * WGS84_A / Nr
        phi = np.arctan2(z, p * (1.0 - WGS84_E2 * Nr / (Nr + h)))
    return np.degrees(phi), np.degrees(np.arctan2(y, x))


def ecef_to_latlon(ecef):
    """Geodetic latitude and longitude (deg) on the WGS-84 ellipsoid."""
    ecef = np.ascontiguousarray(ecef, dtype=np.float64).reshape(-1, 3)
    if USE_NUMBA:
        return _geodetic_numba(ecef)
    return _geodetic_numpy(ecef)


# ---------------------------------------------------------------------------
# Ground look angles


@njit
def _look_numba(ground, up, sats):
    N = sats.shape[0]
    elev = np.empty(N)
    rng = np.empty(N)
    for k in range(N):
        dx = sats[k, 0] - ground[0]
        dy = sats[k, 1] - ground[1]
        dz = sats[k, 2] - ground[2]
        d = np.sqrt(dx * dx + dy * dy + dz * dz)
        s = (dx * up[0] + dy * up[1] + dz * up[2]) / d
        if s > 1.0:
            s = 1.0
        elif s < -1.0:
            s = -1.0
        elev[k] = np.degrees(np.arcsin(s))
        rng[k] = d
    return elev, rng


def _look_numpy(ground, up, sats):
    rho = sats - ground
    d = np.sqrt(np.einsum("ij,ij->i", rho, rho))
    s = np.clip(rho @ up / d, -1.0, 1.0)
    return np.degrees(np.arcsin(s)), d


def look_angles(ground_ecef, up, sats_ecef):
    """Elevation (deg) and slant range (km) from one ground point to many satellites."""
    g = np.ascontiguousarray(ground_ecef, dtype=np.float64)
    u = np.ascontiguousarray(up, dtype=np.float64)
    s = np.ascontiguousarray(sats_ecef, dtype=np.float64).reshape(-1, 3)
    if USE_NUMBA:
        return _look_numba(g, u, s)
    return _look_numpy(g, u, s)


# ---------------------------------------------------------------------------
# Edge lengths


@njit
def _edge_len_numba(pos, i, j):
    out = np.empty(i.shape[0])
    for k in range(i.shape[0]):
        a = i[k]
        b = j[k]
        dx = pos[a, 0] - pos[b, 0]
        dy = pos[a, 1] - pos[b, 1]
        dz = pos[a, 2] - pos[b, 2]
        out[k] = np.sqrt(dx * dx + dy * dy + dz * dz)
    return out


def _edge_len_numpy(pos, i, j):
    d = pos[i] - pos[j]
    return np.sqrt(np.einsum("ij,ij->i", d, d))


def edge_lengths(pos, i, j):
    """Euclidean length (km) of each edge ``(i[k], j[k])`` over rows of ``pos``."""
    pos = np.ascontiguousarray(pos, dtype=np.float64)
    i = np.ascontiguousarray(i, dtype=np.int64)
    j = np.ascontiguousarray(j, dtype=np.int64)
    if USE_NUMBA:
        return _edge_len_numba(pos, i, j)
    return _edge_len_numpy(pos, i, j)


# ---------------------------------------------------------------------------
# Max-min fair water-filling
#
# Incidence is given as parallel arrays (inc_flow[k], inc_link[k]): flow uses link.
# Flows with ``routed[f] == False`` stay at zero.  ``demand`` is +inf for
# unlimited flows.


@njit
def _waterfill_numba(n_flows, inc_flow, inc_link, cap, demand, routed):
    L = cap.shape[0]
    rate = np.zeros(n_flows)
    frozen = np.empty(n_flows, dtype=np.bool_)
    for f in range(n_flows):
        frozen[f] = not routed[f]
    rem = cap.copy()
    count = np.zeros(L, dtype=np.int64)
    for k in range(inc_flow.shape[0]):
        if not frozen[inc_flow[k]]:
            count[inc_link[k]] += 1
    for _ in range(n_flows + L + 1):
        inc = np.inf
        any_active = False
        for f in range(n_flows):
            if not frozen[f]:
                any_active = True
                r = demand[f] - rate[f]
                if r < inc:
                    inc = r
        if not any_active:
            break
        for l in range(L):
            if count[l] > 0:
                s = rem[l] / count[l]
                if s < inc:
                    inc = s
        if inc < 0.0:
            inc = 0.0
        for f in range(n_flows):
            if not frozen[f]:
                rate[f] += inc
        sat = np.zeros(L, dtype=np.bool_)
        for l in range(L):
            if count[l] > 0:
                rem[l] -= inc * count[l]
                if rem[l] <= 1e-12 * max(cap[l], 1.0):
                    rem[l] = 0.0 if rem[l] < 0.0 else rem[l]
                    sat[l] = True
        newly = np.zeros(n_flows, dtype=np.bool_)
        for f in range(n_flows):
            if not frozen[f] and np.isfinite(demand[f]) and demand[f] - rate[f] <= 1e-12 * max(demand[f], 1.0):
                newly[f] = True
        for k in range(inc_flow.shape[0]):
            f = inc_flow[k]
            if not frozen[f] and sat[inc_link[k]]:
                newly[f] = True
        for k in range(inc_flow.shape[0]):
            f = inc_flow[k]
            if newly[f] and not frozen[f]:
                count[inc_link[k]] -= 1
        for f in range(n_flows):
            if newly[f]:
                frozen[f] = True
    return rate


def _waterfill_numpy(n_flows, inc_flow, inc_link, cap, demand, routed):
    L = cap.shape[0]
    rate = np.zeros(n_flows)
    frozen = ~routed.astype(bool)
    rem = cap.astype(np.float64).copy()
    for _ in range(n_flows + L + 1):
        if frozen.all():
            break
        live = ~frozen[inc_flow]
        count = np.bincount(inc_link[live], minlength=L)
        inc = np.min(demand[~frozen] - rate[~frozen])
        used = count > 0
        if used.any():
            inc = min(inc, np.min(rem[used] / count[used]))
        inc = max(inc, 0.0)
        rate[~frozen] += inc
        rem[used] -= inc * count[used]
        sat = used & (rem <= 1e-12 * np.maximum(cap, 1.0))
        rem[sat & (rem < 0.0)] = 0.0
        newly = ~frozen & (demand - rate <= 1e-12 * np.maximum(np.where(np.isinf(demand), 1.0, demand), 1.0))
        hit = live & sat[inc_link]
        newly[inc_flow[hit]] = True
        frozen |= newly
    return rate


def waterfill(n_flows, inc_flow, inc_link, cap, demand, routed):
    """Demand-capped max-min fair rates by progressive filling."""
    inc_flow = np.ascontiguousarray(inc_flow, dtype=np.int64)
    inc_link = np.ascontiguousarray(inc_link, dtype=np.int64)
    cap = np.ascontiguousarray(cap, dtype=np.float64)
    demand = np.ascontiguousarray(demand, dtype=np.float64)
    routed = np.ascontiguousarray(routed, dtype=np.bool_)
    if USE_NUMBA:
        return _waterfill_numba(int(n_flows), inc_flow, inc_link, cap, demand, routed)
    return _waterfill_numpy(int(n_flows), inc_flow, inc_link, cap, demand, routed)
