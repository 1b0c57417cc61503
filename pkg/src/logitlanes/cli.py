"""Command-line front end.

Subcommands::

    logitlanes simulate SCENARIO [--scheme S] [--cells N] [--cfl C] [--group-size G] [--duration T] --out DIR
    logitlanes compare SCENARIO CONFIG CONFIG... [--duration T] --out DIR
    logitlanes equilibrium NETWORK --rho CLASS=VALUE ... [--nu NU]
    logitlanes estimate SAMPLES.csv [--bands 5-10,10-20] --out DIR

Exit status is 0 on success, 2 on bad input and 1 when a run fails
numerically. ``LOGITLANES_MAX_THREADS`` caps the BLAS/LAPACK thread pools.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys
from pathlib import Path
from typing import Sequence

from .compare import SchemeConfig, compare
from .equilibrium import ConvergenceError, solve_split
from .estimation import DEFAULT_BANDS, EstimationError, estimate_report, read_samples
from .euler import SchemeError
from .model import ValidationError
from .report import snapshot_split, write_groups_csv, write_mass_csv, write_snapshots_csv
from .runner import run_scenario
from .scenario import SCHEMES, ScenarioError, bundled_path, load_network, load_scenario

THREADS_ENV = "LOGITLANES_MAX_THREADS"


class UsageError(ValueError):
    pass


_DURATION = re.compile(r"^\s*([0-9.eE+-]+)\s*(h|min|s)?\s*$")


def parse_duration(text: str) -> float:
    """Hours by default; ``2min`` and ``120s`` are also accepted."""
    m = _DURATION.match(text)
    if not m:
        raise argparse.ArgumentTypeError(f"bad duration {text!r}; use e.g. 0.0333, 2min or 120s")
    try:
        value = float(m.group(1))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad duration {text!r}") from None
    value /= {"h": 1.0, None: 1.0, "min": 60.0, "s": 3600.0}[m.group(2)]
    if not (math.isfinite(value) and value >= 0):
        raise argparse.ArgumentTypeError(f"duration must be finite and >= 0, got {text!r}")
    return value


def _positive_int(text: str) -> int:
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if n < 3:
        raise argparse.ArgumentTypeError(f"need at least 3 cells, got {n}")
    return n


def _positive_float(text: str) -> float:
    try:
        x = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not (math.isfinite(x) and x > 0):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return x


def _resolve(path: str) -> Path:
    """Existing paths win; otherwise fall back to a bundled data file of that name."""
    p = Path(path)
    if p.exists():
        return p
    bundled = bundled_path(p.name)
    return bundled if bundled.exists() else p


def _thread_limit() -> int | None:
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=False) + "\n")


# simulate


def cmd_simulate(args) -> int:
    scenario = load_scenario(_resolve(args.scenario))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = run_scenario(
        scenario,
        scheme=args.scheme,
        cells=args.cells,
        cfl=args.cfl,
        group_size=args.group_size,
        duration=args.duration,
    )
    spec = scenario.network
    splits = [snapshot_split(spec, s.state) for s in res.snapshots]
    write_snapshots_csv(out / "snapshots.csv", spec, res.snapshots, splits)
    write_mass_csv(out / "mass.csv", res.mass_audit)
    if res.scheme == "lagrange":
        write_groups_csv(out / "groups.csv", spec, res.group_snapshots)
    if not args.no_plots:
        from .plotting import plot_snapshot

        for n, (snap, split) in enumerate(zip(res.snapshots, splits)):
            plot_snapshot(out / f"snapshot_{n:03d}.svg", spec, snap.t, snap.state, split, title=res.scheme)
    print(
        f"{res.scheme}: {res.steps} steps, dt = {res.dt:.6g} h, {len(res.snapshots)} snapshots, "
        f"{res.flux_evaluations} flux evaluations, {res.wall_time:.2f} s -> {out}"
    )
    return 0


# compare


def cmd_compare(args) -> int:
    scenario = load_scenario(_resolve(args.scenario))
    configs = [SchemeConfig.parse(c) for c in args.configs]
    if len(configs) < 2:
        raise UsageError("compare needs at least two scheme configs")
    report, _ = compare(scenario, configs, duration=args.duration)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    # timings vary run to run, so they live apart from the deterministic report
    _write_json(out / "comparison.json", report.to_dict(include_timing=False))
    _write_json(out / "timing.json", {"wall_clock_s": report.wall_clock})
    report.write_csv(out / "comparison.csv")
    labels = report.labels
    width = max(len(s) for s in labels)
    print(f"{'scheme':<{width}}  {'flux evals':>12}  {'wall s':>8}  max mass drift")
    for s in labels:
        drift = max(report.mass_drift[s].values())
        print(f"{s:<{width}}  {report.flux_evaluations[s]:>12d}  {report.wall_clock[s]:>8.2f}  {drift:.3e}")
    print()
    for a, b in report.distances:
        final = report.final_distance(a, b)
        parts = ", ".join(f"class {d}: {v:.4f}" for d, v in final.items())
        print(f"{a} vs {b}: relative L1 at final time {parts}")
    return 0


# equilibrium


def _parse_rho(items: Sequence[str], classes: Sequence[str]) -> dict[str, float]:
    rho = {}
    for item in items:
        if "=" not in item:
            raise UsageError(f"--rho expects CLASS=VALUE, got {item!r}")
        d, val = item.split("=", 1)
        d = d.strip()
        if d not in classes:
            raise UsageError(f"--rho: unknown class {d!r}; classes: {', '.join(classes)}")
        try:
            r = float(val)
        except ValueError:
            raise UsageError(f"--rho {item!r}: value must be a number") from None
        if not (math.isfinite(r) and r >= 0):
            raise UsageError(f"--rho {item!r}: density must be finite and >= 0")
        rho[d] = r
    return rho


def format_split_table(split) -> str:
    data = split.to_dict()
    lanes = list(data["lane_density"])
    classes = list(data["class_flux"])
    head = ["", *[f"lane {i}" for i in lanes], "flux", "speed"]
    rows = [head]
    for d in classes:
        rows.append(
            [f"class {d}"]
            + [f"{data['partial'][d][i]:.6g}" for i in lanes]
            + [f"{data['class_flux'][d]:.6g}", f"{data['class_speed'][d]:.6g}"]
        )
    rows.append(["density"] + [f"{data['lane_density'][i]:.6g}" for i in lanes] + ["", ""])
    rows.append(["speed"] + [f"{data['lane_speed'][i]:.6g}" for i in lanes] + ["", ""])
    widths = [max(len(r[c]) for r in rows) for c in range(len(head))]
    lines = ["  ".join(cell.rjust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
    lines.append(f"residual {split.residual:.3e}, converged {split.converged}, iterations {split.iterations}")
    return "\n".join(lines)


def cmd_equilibrium(args) -> int:
    spec = load_network(_resolve(args.network))
    if args.nu is not None:
        spec = spec.with_nu(args.nu)
    rho = _parse_rho(args.rho, spec.classes)
    split = solve_split(spec, rho)
    if args.format in ("json", "both"):
        print(json.dumps(split.to_dict(), indent=2))
    if args.format == "both":
        print()
    if args.format in ("table", "both"):
        print(format_split_table(split))
    return 0 if split.converged else 1


# estimate


def _parse_bands(text: str) -> tuple[tuple[float, float], ...]:
    bands = []
    for part in text.split(","):
        m = re.match(r"^\s*([0-9.]+)\s*-\s*([0-9.]+)\s*$", part)
        if not m:
            raise argparse.ArgumentTypeError(f"bad band {part!r}; use e.g. 5-10,10-20")
        lo, hi = float(m.group(1)), float(m.group(2))
        if not lo < hi:
            raise argparse.ArgumentTypeError(f"band {part!r}: lower bound must be below upper bound")
        bands.append((lo, hi))
    return tuple(bands)


def cmd_estimate(args) -> int:
    samples = read_samples(_resolve(args.samples))
    report, curve = estimate_report(samples, args.bands)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "report.json", report)
    with (out / "sse_curve.csv").open("w") as fh:
        fh.write("station,band,nu,sse\n")
        for station, band, nu, sse in curve:
            fh.write(f"{station},{band},{nu!r},{sse!r}\n")
    for station, entry in report.items():
        print(f"station {station}")
        for band, est in entry["bands"].items():
            if est is None:
                print(f"  band {band:>7} veh/km/lane: no samples")
            else:
                nu = est["nu"]
                shown = nu if isinstance(nu, str) else f"{nu:.4g}"
                print(f"  band {band:>7} veh/km/lane: nu = {shown} km/h ({est['sample_count']} samples)")
        for pair, est in entry["regression"].items():
            nu = est["nu"]
            shown = nu if isinstance(nu, str) else f"{nu:.4g}"
            print(f"  regression lanes {pair}: nu = {shown} km/h ({est['sample_count']} samples)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="logitlanes",
        description="Multilane multiclass traffic on a ring with Logit lane choice.",
        epilog=f"Set {THREADS_ENV} to cap numeric worker threads.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a scenario and write CSV snapshots and SVG plots")
    s.add_argument("scenario", help="scenario JSON (bundled names such as riemann.json also work)")
    s.add_argument("--scheme", help=f"one of {', '.join(SCHEMES)}")
    s.add_argument("--cells", type=_positive_int, help="fixed-mesh cells (Lagrange: initial sampling and output bins)")
    s.add_argument("--cfl", type=_positive_float)
    s.add_argument("--group-size", type=_positive_float, help="vehicles per Lagrangian group")
    s.add_argument("--duration", type=parse_duration, help="hours, or with a unit: 2min, 120s")
    s.add_argument("--out", default="out", help="output directory (default: out)")
    s.add_argument("--no-plots", action="store_true", help="skip the SVG figures")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="run several scheme configs and compare them pairwise")
    c.add_argument("scenario")
    c.add_argument("configs", nargs="+", metavar="CONFIG", help="scheme[:cells_or_group_size[:cfl]], e.g. rusanov:800:0.5")
    c.add_argument("--duration", type=parse_duration)
    c.add_argument("--out", default="out")
    c.set_defaults(func=cmd_compare)

    e = sub.add_parser("equilibrium", help="solve the lane split for one density vector")
    e.add_argument("network", help="network or scenario JSON")
    e.add_argument("--rho", action="append", default=[], metavar="CLASS=VALUE", help="class density in veh/km")
    e.add_argument("--nu", type=_positive_float, help="override the Logit sensitivity (km/h)")
    e.add_argument("--format", choices=("both", "json", "table"), default="both")
    e.set_defaults(func=cmd_equilibrium)

    m = sub.add_parser("estimate", help="estimate nu from per-lane detector records")
    m.add_argument("samples", help="CSV with columns station,timestamp,lane,density,speed")
    m.add_argument("--bands", type=_parse_bands, default=DEFAULT_BANDS, help="density bands per lane, e.g. 5-10,10-20")
    m.add_argument("--out", default="out")
    m.set_defaults(func=cmd_estimate)
    return p


USER_ERRORS = (UsageError, ScenarioError, ValidationError, EstimationError)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        limit = _thread_limit()
        if limit is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=limit):
                return args.func(args)
        return args.func(args)
    except USER_ERRORS as exc:
        print(f"logitlanes {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (SchemeError, ConvergenceError) as exc:
        print(f"logitlanes {args.command}: run failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
