"""Command-line entry point: ``offpath <subcommand> ...``.

Exit codes: 0 success, 1 parse/validation error or bad usage, 2 fixture check failed.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import hashlib
import io
import json
import math
import os
import sys
from importlib import resources

from . import analytic, calibration, planner, simulator
from .errors import EmptyRange, OffpathError
from .hw import PROFILE_ENV, Path, Verb, dump_profile, load_profile
from .workloads import ReplicationWorkloadSpec

EXIT_OK, EXIT_ERROR, EXIT_FIXTURES = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _fixtures_bytes(path) -> bytes:
    if path is None:
        return (resources.files("offpath") / "data" / "observations.csv").read_bytes()
    with open(path, "rb") as fh:
        return fh.read()


def _rows_to_csv(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _fmt(value):
    if isinstance(value, float):
        return "inf" if math.isinf(value) else f"{value:.6f}"
    return value


class _Output:
    """Writes the result table to stdout and, with ``--out``, a CSV plus a run manifest."""

    def __init__(self, args, argv):
        self.args = args
        self.argv = argv

    def emit(self, header, rows, summary=None, cfg=None, stdout_text=None):
        rows = [[_fmt(v) for v in row] for row in rows]
        body = _rows_to_csv([header] + rows)
        if stdout_text is not None:
            sys.stdout.write(stdout_text.rstrip("\n") + "\n")
        elif getattr(self.args, "format", "csv") == "json":
            payload = {"columns": list(header), "rows": rows}
            if summary:
                payload["summary"] = summary
            sys.stdout.write(json.dumps(payload, indent=2, default=str) + "\n")
        else:
            sys.stdout.write(body)
        out = getattr(self.args, "out", None)
        if out:
            os.makedirs(out, exist_ok=True)
            name = self.args.command.replace(" ", "_")
            with open(os.path.join(out, f"{name}.csv"), "w", newline="", encoding="utf-8") as fh:
                fh.write(body)
            manifest = {
                "command": self.args.command,
                "argv": self.argv,
                "seed": getattr(self.args, "seed", None),
                "profile_sha256": cfg.digest() if cfg is not None else None,
                "fixtures_sha256": _sha256(_fixtures_bytes(getattr(self.args, "fixtures", None))),
                "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
                "summary": summary,
            }
            with open(os.path.join(out, f"{name}.manifest.json"), "w", encoding="utf-8") as fh:
                json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
                fh.write("\n")


def _scenario(args):
    with open(args.scenario, encoding="utf-8") as fh:
        text = fh.read()
    cfg = load_profile(args.profile) if args.profile else None
    return simulator.build_scenario(text, cfg)


# ---------------------------------------------------------------------------
# subcommands


def cmd_analyze(args, out):
    scenario = _scenario(args)
    report = analytic.allocate_bandwidth(scenario.cfg, [f.spec for f in scenario.flows])
    header = ("flow", "path", "verb", "payload", "rate_gbps", "limit", "bottleneck", "total_gbps")
    rows = [list(row) + [report.bottleneck, report.total_goodput] for row in list(report.csv_rows())[1:]]
    for row in rows:
        row[4] = float(row[4])
    out.emit(header, rows, report.summary(), scenario.cfg)
    return EXIT_OK


def cmd_simulate(args, out):
    scenario = _scenario(args)
    changes = {k: getattr(args, k) for k in ("duration", "warmup", "seed") if getattr(args, k) is not None}
    if changes:
        scenario = dataclasses.replace(scenario, **changes)
    args.seed = scenario.seed
    metrics = simulator.run_simulation(scenario)
    header = ("flow", "gbps", "mreqs_per_s", "p50_us", "p99_us")
    rows = list(zip(metrics.flow_names, metrics.gbps, metrics.mreqs, metrics.p50_us, metrics.p99_us))
    summary = {"events": metrics.events, "issued": metrics.issued, "completed": metrics.completed,
               "in_flight": metrics.in_flight, "utilization": metrics.utilization}
    out.emit(header, rows, summary, scenario.cfg)
    return EXIT_OK


def cmd_plan_replication(args, out):
    plan = planner.plan_hybrid_replication(args.pcie, args.net, args.ratio)
    text = f"S={plan.S:g} H={plan.H:g} goodput={plan.goodput:g}"
    header = ("S_gbps", "H_gbps", "ratio", "goodput_gbps", "pcie_residual", "network_residual")
    rows = [(plan.S, plan.H, plan.ratio, plan.goodput, plan.pcie_residual, plan.network_residual)]
    cfg = load_profile(args.profile)
    if args.alternatives:
        workload = ReplicationWorkloadSpec(compression_ratio=args.ratio)
        profiles = [planner.eval_alternative(a, "replication", cfg, workload) for a in args.alternatives]
        combined = planner.greedy_combine(profiles, cfg)
        text += "\n" + combined.table()
    out.emit(header, rows, {"plan": plan.__dict__}, cfg, stdout_text=text if args.format == "csv" else None)
    return EXIT_OK


def cmd_plan_kv(args, out):
    cfg = load_profile(args.profile)
    model = planner.KvModel(miss_rate=args.miss_rate)
    profiles = [planner.eval_alternative(a, "kv", cfg, model=model) for a in args.alternatives]
    combined = planner.greedy_combine(profiles, cfg)
    soc_capacity = next((load for alt, load in combined.assignments if alt.startswith("A5")),
                        combined.assignments[0][1])
    clients = planner.kv_switch_point(soc_capacity, args.client_demand, args.rho_max)
    header = ("alternative", "load_mreqs", "latency_us", "peak_mreqs")
    by_id = {p.id: p for p in profiles}
    rows = [(alt, load, by_id[alt].latency_us, by_id[alt].peak_throughput) for alt, load in combined.assignments]
    text = combined.table() + f"\nfast-path clients: {clients}"
    summary = {"total": combined.total, "switch_points": combined.switch_points, "fast_path_clients": clients}
    out.emit(header, rows, summary, cfg, stdout_text=text if args.format == "csv" else None)
    return EXIT_OK


def _grid(start, stop, step, factor=None):
    if factor is not None:
        if factor <= 1 or start <= 0:
            raise EmptyRange("geometric grid needs factor > 1 and start > 0")
        values, v = [], float(start)
        while v <= stop * (1 + 1e-12):
            values.append(v)
            v *= factor
    else:
        if step is None or step <= 0:
            raise EmptyRange("step must be > 0")
        count = math.floor((stop - start) / step + 1e-9) + 1
        values = [start + i * step for i in range(max(count, 0))]
    if not values:
        raise EmptyRange(f"no grid points in [{start}, {stop}]")
    return values


def run_sweep(variable: str, values, cfg, **opts):
    """Evaluate one grid point per value; returns (header, rows) in grid order."""
    values = list(values)
    if not values:
        raise EmptyRange("empty sweep")
    P, N = opts.get("pcie", 256.0), opts.get("net", 200.0)
    if variable == "ratio":
        header = ("ratio", "a1_gbps", "a3_gbps", "hybrid_gbps", "hybrid_S", "hybrid_H")
        rows = []
        for r in values:
            r = round(r, 12)
            plan = planner.plan_hybrid_replication(P, N, r)
            rows.append((r, planner.a1_limit(P, r, N), min(N, P), plan.goodput, plan.S, plan.H))
        return header, rows
    if variable == "payload":
        path, verb = Path.parse(opts.get("path", "client_soc")), Verb.parse(opts.get("verb", "read"))
        header = ("payload", "cap_gbps", "cliff")
        rows = [(int(p), analytic.effective_path_cap(cfg, path, verb, int(p)),
                 int(analytic.in_cliff(cfg, path, verb, int(p)))) for p in values]
        return header, rows
    if variable == "n_clients":
        demand = opts.get("client_demand", 12.0)
        profiles = [planner.eval_alternative(a, "kv", cfg) for a in ("A5-sendrecv", "A4")]
        combined = planner.greedy_combine(profiles, cfg)
        fast = planner.kv_switch_point(combined.assignments[0][1], demand)
        header = ("n_clients", "a5_clients", "offered_mreqs", "predicted_mreqs")
        rows = []
        for n in values:
            n = int(n)
            rows.append((n, min(n, fast), n * demand, min(n * demand, combined.total)))
        return header, rows
    if variable == "a3-fraction":
        ratio = opts.get("ratio", 0.5)
        workload = ReplicationWorkloadSpec(compression_ratio=ratio)
        a2 = planner.eval_alternative("A2", "replication", cfg, workload)
        a3 = planner.eval_alternative("A3", "replication", cfg, workload)
        caps = planner.resource_capacities(cfg)
        header = ("a3_fraction", "goodput_gbps", "network_saving")
        rows = []
        for f in values:
            mix = {r: (1 - f) * a2.resource_vector.get(r, 0.0) + f * a3.resource_vector.get(r, 0.0)
                   for r in caps}
            goodput = min(caps[r] / v for r, v in mix.items() if v > 0)
            rows.append((round(f, 12), goodput, (1 - f) * (1 - ratio)))
        return header, rows
    raise EmptyRange(f"unknown sweep variable {variable!r}")


def cmd_sweep(args, out):
    cfg = load_profile(args.profile)
    values = _grid(args.start, args.stop, args.step, args.factor)
    header, rows = run_sweep(args.var, values, cfg, pcie=args.pcie, net=args.net, path=args.path,
                             verb=args.verb, ratio=args.ratio, client_demand=args.client_demand)
    out.emit(header, rows, {"variable": args.var, "points": len(rows)}, cfg)
    return EXIT_OK


def cmd_calibrate(args, out):
    cfg = load_profile(args.profile or "bluefield2").theoretical()
    fixtures = calibration.load_fixtures(args.fixtures)
    efficiency = calibration.fit_efficiency(cfg, fixtures)
    fitted = cfg.with_efficiency(efficiency)
    target = args.output or str(resources.files("offpath") / "data" / "fitted.profile")
    with open(target, "w", encoding="utf-8") as fh:
        fh.write("# Bluefield-2 profile with link efficiencies fitted to the bundled fixtures.\n"
                 "# Regenerate with: offpath calibrate\n")
        fh.write(dump_profile(fitted))
    rows = sorted(efficiency.items())
    out.emit(("link", "efficiency"), rows, {"profile": target}, fitted)
    print(f"wrote {target}", file=sys.stderr)
    return EXIT_OK


def cmd_fixtures_check(args, out):
    cfg = load_profile(args.profile or "fitted")
    fixtures = calibration.load_fixtures(args.fixtures)
    report = calibration.validate_against_fixtures(cfg, None, fixtures)
    header = ("id", "model", "observed", "relative_error", "tol", "status")
    rows = [(r.id, r.model, r.observed, r.relative_error, r.tol, "pass" if r.passed else "FAIL")
            for r in report.results]
    out.emit(header, rows, {"passed": report.passed, "failures": [r.id for r in report.failures]}, cfg)
    return EXIT_OK if report.passed else EXIT_FIXTURES


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--profile", help=f"profile file or bundled name (default: ${PROFILE_ENV} or bluefield2)")
    common.add_argument("--out", help="directory for the result CSV and run manifest")
    common.add_argument("--format", choices=("csv", "json"), default="csv", help="stdout format")

    parser = _Parser(prog="offpath", description="SmartNIC data-path models, simulator and offload planner.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("analyze", parents=[common], help="max-min allocation for a scenario file")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", parents=[common], help="discrete-event simulation of a scenario file")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int)
    p.add_argument("--duration", type=float, help="simulated seconds")
    p.add_argument("--warmup", type=float, help="seconds discarded from metrics")
    p.set_defaults(func=cmd_simulate)

    plan = sub.add_parser("plan", help="offload planning")
    plan_sub = plan.add_subparsers(dest="case", required=True, parser_class=_Parser)
    p = plan_sub.add_parser("replication", parents=[common], help="hybrid replication split")
    p.add_argument("--pcie", type=float, default=256.0, help="PCIe1 bandwidth per direction, Gbps")
    p.add_argument("--net", type=float, default=200.0, help="network bandwidth per direction, Gbps")
    p.add_argument("--ratio", type=float, required=True, help="compressed / uncompressed size")
    p.add_argument("--alternatives", nargs="*", choices=planner.REPLICATION_ALTERNATIVES,
                   help="also combine these alternatives greedily")
    p.set_defaults(func=cmd_plan_replication)
    p = plan_sub.add_parser("kv", parents=[common], help="key-value alternative combination")
    p.add_argument("--alternatives", nargs="+", default=["A5-sendrecv", "A4"], choices=planner.KV_ALTERNATIVES)
    p.add_argument("--client-demand", type=float, default=12.0, help="M reqs/s offered per client")
    p.add_argument("--rho-max", type=float, default=1.0, help="utilization guard for the SoC path")
    p.add_argument("--miss-rate", type=float, default=None, help="cache miss probability for A5")
    p.set_defaults(func=cmd_plan_kv)

    p = sub.add_parser("sweep", parents=[common], help="grid sweep emitting plot-ready CSV")
    p.add_argument("--var", required=True, choices=("ratio", "payload", "n_clients", "a3-fraction"))
    p.add_argument("--start", type=float, required=True)
    p.add_argument("--stop", type=float, required=True)
    p.add_argument("--step", type=float)
    p.add_argument("--factor", type=float, help="geometric grid multiplier instead of --step")
    p.add_argument("--pcie", type=float, default=256.0)
    p.add_argument("--net", type=float, default=200.0)
    p.add_argument("--path", default="client_soc")
    p.add_argument("--verb", default="read")
    p.add_argument("--ratio", type=float, default=0.5)
    p.add_argument("--client-demand", type=float, default=12.0)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("calibrate", parents=[common], help="fit link efficiencies to fixtures")
    p.add_argument("--fixtures", help="fixture CSV (default: bundled table)")
    p.add_argument("--output", help="profile to write (default: bundled fitted.profile)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("fixtures-check", parents=[common], help="validate the model against fixtures")
    p.add_argument("--fixtures", help="fixture CSV (default: bundled table)")
    p.set_defaults(func=cmd_fixtures_check)
    return parser


def run_cli(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_ERROR
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_ERROR
    args.command = args.command if args.command != "plan" else f"plan {args.case}"
    try:
        return args.func(args, _Output(args, argv))
    except (OffpathError, ValueError, KeyError, OSError) as exc:
        print(f"offpath: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def main() -> None:
    sys.exit(run_cli())
