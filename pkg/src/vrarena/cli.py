"""Command-line entry points.

Exit codes: 0 ok, 1 usage, 2 data error, 3 infeasible scenario.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import rdmodel, scenario, sim
from .assignment import AssignmentError, bottleneck_match, max_min_snr_assign
from .geometry import GeometryError, TilingConfig
from .navigation import GopInterval, NavigationError, NavigationTrace, profile_for_interval

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INFEASIBLE = 0, 1, 2, 3
SWEEP_METRICS = ("psnr_db", "wspsnr_db", "rate_mbps", "downtime_pct")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fail(msg: str, code: int) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def cmd_fit_rd(args) -> int:
    samples = rdmodel.read_samples(args.samples)
    model = rdmodel.fit(samples, args.kind)
    model.save(args.output)
    err = model.fit_error
    print(f"fitted {model.kind} model on {model.shape[0]}x{model.shape[1]} tiles, "
          f"max RMS relative error {float(np.max(err)):.3g} -> {args.output}")
    return EXIT_OK


def cmd_nav_profile(args) -> int:
    trace = NavigationTrace.from_csv(args.trace)
    cfg = TilingConfig(args.panorama_width, args.panorama_height, args.tiles_x, args.tiles_y,
                       args.fov_h, args.fov_v, args.raster_grid)
    t0, t1 = trace.span()
    n = args.gops if args.gops is not None else int(np.floor((t1 - args.start) / args.gop + 1e-9))
    if n < 1:
        raise NavigationError("trace underflow")
    with open(args.output, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["gop", "tile_x", "tile_y", "p"])
        for g in range(n):
            prof = profile_for_interval(trace, GopInterval(args.start + g * args.gop, args.gop, args.frame_rate), cfg)
            for (i, j), p in np.ndenumerate(prof.p):
                w.writerow([g, i, j, repr(float(p))])
    print(f"{n} GOP profiles -> {args.output}")
    return EXIT_OK


def _record_infeasible(result) -> bool:
    return any(r.infeasible for r in result.records)


def cmd_simulate(args) -> int:
    s = scenario.load(args.scenario)
    result = sim.run_session(s, args.method)
    out = Path(args.out)
    m, su = sim.write_outputs(out, result)
    if not args.no_figures:
        from .plotting import timeline_figure

        timeline_figure(result, out / "timeline.png")
    print(sim.format_summary(result.summary))
    print(f"wrote {m} and {su}")
    if _record_infeasible(result):
        return _fail("allocation infeasible in at least one GOP (see downtime column)", EXIT_INFEASIBLE)
    return EXIT_OK


def _parse_values(text: str) -> list:
    vals = [v.strip() for v in text.split(",") if v.strip()]
    if not vals:
        raise UsageError("--values must list at least one value")
    out = []
    for v in vals:
        try:
            out.append(json.loads(v))
        except json.JSONDecodeError:
            out.append(v)
    return out


def sweep(raw: dict, base_dir, param: str, values, method=None) -> list[dict]:
    rows = []
    for v in values:
        s = scenario.build(scenario.set_path(raw, param, v), base_dir)
        summ = sim.run_session(s, method).overall()
        for metric in SWEEP_METRICS:
            if metric == "downtime_pct":
                mean, std = summ["downtime_pct"], 0.0
            else:
                key = metric.replace("_db", "").replace("_mbps", "")
                mean, std = summ[f"{key}_mean"], summ[f"{key}_std"]
            rows.append(dict(param=param, value=v, metric=metric, mean=mean, std=std))
    return rows


def cmd_sweep(args) -> int:
    values = _parse_values(args.values)
    raw = scenario.load_raw(args.scenario)
    try:
        scenario.set_path(raw, args.param, values[0])
    except scenario.ScenarioError as e:
        raise UsageError(str(e)) from None
    rows = sweep(raw, Path(args.scenario).parent, args.param, values, args.method)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep.csv"
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["param", "value", "metric", "mean", "std"])
        for r in rows:
            w.writerow([r["param"], json.dumps(r["value"]), r["metric"], repr(float(r["mean"])),
                        repr(float(r["std"]))])
    if not args.no_figures and all(isinstance(v, (int, float)) for v in values):
        from .plotting import sweep_figure

        sweep_figure(rows, args.param, out / "sweep.png")
    for r in rows:
        if r["metric"] == "wspsnr_db":
            print(f"{args.param}={r['value']}: WS-PSNR {r['mean']:.2f} dB (std {r['std']:.2f})")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_match(args) -> int:
    with open(args.weights, newline="", encoding="utf-8") as f:
        rows = [r for r in csv.reader(f) if r and not r[0].startswith("#")]
    try:
        w = np.array([[float(x) for x in r] for r in rows])
    except ValueError as e:
        raise AssignmentError(f"weights file: {e}") from None
    a = max_min_snr_assign(w) if args.snr else bottleneck_match(w)
    label = "min SNR" if args.snr else "bottleneck"
    print(json.dumps({"pi": list(a.pi), label.replace(" ", "_"): a.bottleneck,
                      "feasibility_tests": a.feasibility_tests}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vrarena", description="Dual-connectivity tiled 360 video arena: fit, profile, simulate, sweep, match.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fit-rd", help="fit per-tile RD models to a sample CSV")
    f.add_argument("samples")
    f.add_argument("--kind", choices=["power", "exponential"], default="power")
    f.add_argument("-o", "--output", default="model.json")
    f.set_defaults(func=cmd_fit_rd)

    n = sub.add_parser("nav-profile", help="per-GOP tile navigation likelihoods of a trace")
    n.add_argument("trace")
    n.add_argument("--panorama-width", type=int, default=7680)
    n.add_argument("--panorama-height", type=int, default=3840)
    n.add_argument("--tiles-x", type=int, default=6)
    n.add_argument("--tiles-y", type=int, default=4)
    n.add_argument("--fov-h", type=float, default=90.0)
    n.add_argument("--fov-v", type=float, default=90.0)
    n.add_argument("--raster-grid", type=int, default=256)
    n.add_argument("--gop", type=float, default=1.0)
    n.add_argument("--frame-rate", type=float, default=30.0)
    n.add_argument("--start", type=float, default=0.0)
    n.add_argument("--gops", type=int, default=None)
    n.add_argument("-o", "--output", default="profiles.csv")
    n.set_defaults(func=cmd_nav_profile)

    s = sub.add_parser("simulate", help="run a scenario and write metrics, summary and a timeline figure")
    s.add_argument("scenario")
    s.add_argument("--out", default="out")
    s.add_argument("--method", choices=list(scenario.METHODS), default=None)
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", help="one simulation per parameter value, long-format CSV")
    w.add_argument("scenario")
    w.add_argument("--param", required=True, help="dotted or JSON-pointer path, e.g. budgets.cx_mbps")
    w.add_argument("--values", required=True, help="comma-separated JSON values")
    w.add_argument("--out", default="out")
    w.add_argument("--method", choices=list(scenario.METHODS), default=None)
    w.add_argument("--no-figures", action="store_true")
    w.set_defaults(func=cmd_sweep)

    m = sub.add_parser("match", help="bottleneck assignment on a users x transmitters CSV")
    m.add_argument("weights")
    m.add_argument("--snr", action="store_true", help="weights are SNRs; maximize the minimum")
    m.set_defaults(func=cmd_match)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        return _fail(str(e), EXIT_USAGE)
    except scenario.ScenarioError as e:
        return _fail(f"scenario {e}", EXIT_DATA)
    except (rdmodel.RdError, NavigationError, GeometryError, AssignmentError, OSError, ValueError) as e:
        return _fail(str(e), EXIT_DATA)


if __name__ == "__main__":
    sys.exit(main())
