"""``leonet`` command line: precompute, run, churn, linkbudget, export-routes.

Exit status: 0 success, 1 usage error, 2 data or integrity error.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from datetime import timedelta

from . import backstage, mainstage
from .config import ConfigError, load_scenario
from .linkmodel import RfParameters, budget_breakdown
from .routing import export_route_commands
from .weather import WeatherError, WeatherSample, make_provider

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

CHURN_CLASSES = {0: "none", 1: "green", 2: "orange"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


@dataclass
class ChurnMinute:
    minute: int
    changes: int
    instances: int

    @property
    def klass(self) -> str:
        return CHURN_CLASSES.get(self.instances, "red")


@dataclass
class ChurnReport:
    isl_total: int
    minutes: list = field(default_factory=list)

    @property
    def total_changes(self) -> int:
        return sum(m.changes for m in self.minutes)

    def fraction(self, m: ChurnMinute) -> float:
        return m.changes / self.isl_total if self.isl_total else 0.0

    @property
    def mean_fraction(self) -> float:
        if not self.minutes or not self.isl_total:
            return 0.0
        return self.total_changes / len(self.minutes) / self.isl_total

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["minute", "changes", "instances", "class", "fraction"])
        for m in self.minutes:
            w.writerow([m.minute, m.changes, m.instances, m.klass, f"{self.fraction(m):.6f}"])
        return buf.getvalue()

    def to_table(self) -> str:
        lines = [f"{'minute':>6} {'changes':>8} {'inst':>5} {'class':<7} {'fraction':>9}"]
        for m in self.minutes:
            lines.append(f"{m.minute:>6} {m.changes:>8} {m.instances:>5} {m.klass:<7} {self.fraction(m):>9.4%}")
        lines.append(f"ISLs {self.isl_total}, changes {self.total_changes}, "
                     f"mean per minute {self.mean_fraction:.4%} of ISLs")
        return "\n".join(lines)


def churn_report(bundle: backstage.ScenarioBundle) -> ChurnReport:
    """Per-minute ISL up/down counts from an unfiltered bundle."""
    if bundle.relevance is not None:
        raise UsageError("churn needs a bundle precomputed with --no-relevance")
    n_sat = bundle.node_index.n_satellites
    per_minute_ticks = 60000 / bundle.interval_ms
    n_minutes = max(1, math.ceil(bundle.n_ticks / per_minute_ticks))
    minutes = [ChurnMinute(m, 0, 0) for m in range(n_minutes)]
    for d in bundle.deltas:
        n = int((d.added["j"] < n_sat).sum() + (d.removed["j"] < n_sat).sum())
        if n:
            m = minutes[d.t_ms // 60000]
            m.changes += n
            m.instances += 1
    return ChurnReport(int(bundle.meta.get("isl_total", 0)), minutes)


def _emit_csv(text: str, dest: str):
    if dest == "-":
        sys.stdout.write(text)
    else:
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------


def cmd_precompute(args) -> int:
    path = args.config
    if not os.path.isfile(path):
        print(f"error: config file not found: {path}", file=sys.stderr)
        return EXIT_DATA
    cfg = load_scenario(path)
    base = os.path.dirname(os.path.abspath(path))
    provider = make_provider(cfg.weather, base)
    bundle = backstage.precompute(
        cfg, provider, base_dir=base, eps_latency_ms=args.eps_latency, eps_capacity_mbps=args.eps_capacity,
        relevance=not args.no_relevance, all_pairs=args.all_pairs, progress=not args.quiet,
    )
    digest = backstage.save_bundle(bundle, args.out)
    print(f"wrote {args.out}: {bundle.n_ticks} ticks, {len(bundle.node_index)} nodes, sha256 {digest[:16]}")
    return EXIT_OK


def cmd_run(args) -> int:
    bundle = backstage.load_bundle(args.bundle)
    mode = mainstage.Mode.REALTIME if args.realtime else mainstage.Mode.FAST
    out = sys.stdout if args.events in (None, "-") else open(args.events, "w", encoding="utf-8")
    try:
        res = mainstage.run(bundle, mode=mode, sink=mainstage.JsonlSink(out), routes_dir=args.routes_dir,
                            collect=False)
    finally:
        if out is not sys.stdout:
            out.close()
    print(f"{bundle.n_ticks} ticks, {res.n_events} events, wall {res.wall_s:.3f} s, "
          f"p95 tick lag {res.p95_lag_ms():.2f} ms", file=sys.stderr)
    return EXIT_OK


def cmd_churn(args) -> int:
    report = churn_report(backstage.load_bundle(args.bundle))
    if args.csv:
        _emit_csv(report.to_csv(), args.csv)
        if args.csv == "-":
            return EXIT_OK
    print(report.to_table())
    return EXIT_OK


def cmd_linkbudget(args) -> int:
    try:
        rf = RfParameters(eirp_dbw=args.eirp, g_over_t_dbk=args.gt, bandwidth_hz=args.bw * 1e6,
                          frequency_hz=args.freq * 1e9, fixed_losses_db=args.loss, cell_density=args.density)
        wx = WeatherSample(0.0, 0.0, None, rain_rate=args.rain)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.distance <= 0 or not 0 < args.elev <= 90:
        raise UsageError("--distance must be > 0 and --elev in (0, 90]")
    terms = budget_breakdown(rf, args.distance, args.elev, wx)
    if args.csv:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["term", "value"])
        for k, v in terms.items():
            w.writerow([k, repr(v)])
        _emit_csv(buf.getvalue(), args.csv)
        if args.csv == "-":
            return EXIT_OK
    labels = [
        ("EIRP", "eirp_dbw", "dBW", "+"), ("G/T", "g_over_t_dbk", "dB/K", "+"), ("FSPL", "fspl_db", "dB", "-"),
        ("fixed losses", "fixed_losses_db", "dB", "-"), ("rain", "rain_db", "dB", "-"),
        ("-10log10(k)", "boltzmann_db", "dB", "+"), ("10log10(BW)", "bandwidth_dbhz", "dBHz", "-"),
    ]
    for name, key, unit, sign in labels:
        print(f"  {sign} {name:<13} {terms[key]:>10.4f} {unit}")
    print(f"  = SNR           {terms['snr_db']:>10.4f} dB")
    print(f"  capacity        {terms['capacity_mbps']:>10.2f} Mbps")
    print(f"  one-way delay   {terms['latency_ms']:>10.4f} ms")
    return EXIT_OK


def cmd_export_routes(args) -> int:
    bundle = backstage.load_bundle(args.bundle)
    start = bundle.config.sim_window.start
    written = 0
    for snap in bundle.fold(args.tick):
        if args.tick is not None and snap.tick != args.tick:
            continue
        export_route_commands(snap.routing, start + timedelta(milliseconds=snap.t_ms), args.out)
        written += 1
    if args.tick is not None and not written:
        raise UsageError(f"tick {args.tick} outside the bundle (0..{bundle.n_ticks - 1})")
    print(f"wrote {written} route file(s) to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="leonet", description="LEO constellation network precompute and playback")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("precompute", help="build a scenario bundle from a config file")
    s.add_argument("config")
    s.add_argument("-o", "--out", required=True, help="bundle path")
    s.add_argument("--eps-latency", type=float, default=backstage.DEFAULT_EPS_LATENCY_MS, metavar="MS")
    s.add_argument("--eps-capacity", type=float, default=backstage.DEFAULT_EPS_CAPACITY_MBPS, metavar="MBPS")
    s.add_argument("--no-relevance", action="store_true", help="store the full delta stream (needed for churn)")
    s.add_argument("--all-pairs", action="store_true", help="routing tables toward every node")
    s.add_argument("-q", "--quiet", action="store_true", help="no progress on stderr")
    s.set_defaults(func=cmd_precompute)

    s = sub.add_parser("run", help="play a bundle")
    s.add_argument("bundle")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--realtime", action="store_true", help="pace ticks to wall-clock time")
    g.add_argument("--fast", action="store_true", help="no pacing (default)")
    s.add_argument("--events", help="JSONL event log path ('-' or omitted: stdout)")
    s.add_argument("--routes-dir", help="also write per-tick route command files here")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("churn", help="per-minute ISL churn of an unfiltered bundle")
    s.add_argument("bundle")
    s.add_argument("--csv", metavar="PATH", help="write CSV ('-' for stdout)")
    s.set_defaults(func=cmd_churn)

    s = sub.add_parser("linkbudget", help="GSL budget desk calculator")
    s.add_argument("--distance", type=float, required=True, help="slant range, km")
    s.add_argument("--freq", type=float, default=12.0, help="carrier, GHz")
    s.add_argument("--eirp", type=float, default=50.0, help="dBW")
    s.add_argument("--gt", type=float, default=10.0, help="receiver G/T, dB/K")
    s.add_argument("--bw", type=float, default=240.0, help="bandwidth, MHz")
    s.add_argument("--loss", type=float, default=2.0, help="fixed losses, dB")
    s.add_argument("--rain", type=float, default=0.0, help="rain rate, mm/h")
    s.add_argument("--elev", type=float, default=90.0, help="elevation, deg")
    s.add_argument("--density", type=float, default=1.0, help="cell density factor")
    s.add_argument("--csv", metavar="PATH", help="write CSV ('-' for stdout)")
    s.set_defaults(func=cmd_linkbudget)

    s = sub.add_parser("export-routes", help="write route command files from a bundle")
    s.add_argument("bundle")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--tick", type=int, help="single tick (default: all)")
    s.set_defaults(func=cmd_export_routes)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, backstage.BundleError, backstage.PrecomputeError, WeatherError,
            mainstage.PlaybackError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
