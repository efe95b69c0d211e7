"""Time each hot kernel under numba and under the numpy fallback.

    python benchmarks/bench_kernels.py [--sats 1584] [--repeat 20]

Inputs are sized like one tick of a 72x22 shell.  Both backends are called
directly, so the LEONET_DISABLE_NUMBA flag does not matter here.  Results
are checked to agree before any timing is reported.
"""

import argparse
import timeit

import numpy as np

from leonet import kernels as k
from leonet.geometry import J2000, ElementSet, earth_rotation_angle, generate_walker


def _inputs(n_sats, rng):
    es = ElementSet(generate_walker(72, max(1, n_sats // 72), 550.0, 53.0, phasing=1, epoch=J2000))
    prop = (es.a, es.ecc, es.inc, es.raan, es.argp, es.M0, es.n, np.full(len(es), 600.0),
            earth_rotation_angle(J2000))
    _, ecef = k._propagate_numpy(*prop)
    ground = np.array([3978.7, -6.9, 4968.9])
    up = ground / np.linalg.norm(ground)
    n = ecef.shape[0]
    i = np.repeat(np.arange(n, dtype=np.int64), 2)
    j = np.concatenate([[(s + 1) % n, (s + 22) % n] for s in range(n)]).astype(np.int64)

    n_flows, n_links = 200, 400
    inc_flow = np.repeat(np.arange(n_flows, dtype=np.int64), 12)
    inc_link = rng.integers(0, n_links, inc_flow.size).astype(np.int64)
    cap = rng.uniform(100.0, 10000.0, n_links)
    demand = np.where(rng.random(n_flows) < 0.3, rng.uniform(10.0, 500.0, n_flows), np.inf)
    routed = np.ones(n_flows, dtype=np.bool_)
    M = rng.uniform(0.0, 2 * np.pi, 10000)
    e = rng.uniform(0.0, 0.9, 10000)
    return {
        "kepler": ((M, e),),
        "propagate": (prop,),
        "geodetic": ((ecef,),),
        "look": ((ground, up, ecef),),
        "edge_len": ((ecef, i, j),),
        "waterfill": ((n_flows, inc_flow, inc_link, cap, demand, routed),),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-9, atol=1e-9)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sats", type=int, default=1584)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    if not k.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")

    cases = _inputs(args.sats, np.random.default_rng(0))
    print(f"{'kernel':<10} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for name, (call_args,) in cases.items():
        fast = getattr(k, f"_{name}_numba")
        slow = getattr(k, f"_{name}_numpy")
        if not _same(fast(*call_args), slow(*call_args)):  # also warms the JIT
            raise SystemExit(f"{name}: backends disagree")
        t_fast = min(timeit.repeat(lambda: fast(*call_args), number=1, repeat=args.repeat)) * 1000
        t_slow = min(timeit.repeat(lambda: slow(*call_args), number=1, repeat=args.repeat)) * 1000
        print(f"{name:<10} {t_fast:>10.3f} {t_slow:>10.3f} {t_slow / t_fast:>7.1f}x")


if __name__ == "__main__":
    main()
