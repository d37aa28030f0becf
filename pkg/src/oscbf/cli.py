"""Command-line front end: run scenarios, benchmarks, validation, teleop.

Exit codes: 0 success, 2 configuration error, 3 safety violation or sim
divergence (artifacts are still written), 1 validation-suite failure.

OSCBF_THREADS caps the numerical backends' thread pools; it must be read
before numpy spins them up, which is why this module configures the
environment before importing anything heavy.
"""

from __future__ import annotations

import os

if os.environ.get("OSCBF_THREADS"):
    _n = os.environ["OSCBF_THREADS"]
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ.setdefault(_var, _n)

import argparse
import json
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CONFIG = 2
EXIT_SAFETY = 3

SAFETY_TOLERANCE = -1e-3


def _parse_override(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ValueError(f"override {item!r} must look like key=value")
        key, value = item.split("=", 1)
        out[key] = value
    return out


_OVERRIDE_TYPES = {
    "mode": str,
    "seed": int,
    "duration": float,
    "dt": float,
    "objective": str,
    "prune_k": int,
    "slack_penalty": float,
    "hocbf": lambda s: s.lower() in ("1", "true", "yes"),
    "inner_loop": lambda s: s.lower() in ("1", "true", "yes"),
    "robot": str,
    "name": str,
}


def _typed_overrides(raw: dict) -> dict:
    out = {}
    for key, value in raw.items():
        if key not in _OVERRIDE_TYPES:
            raise ValueError(f"unknown override key {key!r}; valid: {sorted(_OVERRIDE_TYPES)}")
        out[key] = _OVERRIDE_TYPES[key](value)
    return out


def _load_scenario(args):
    from .sim import ScenarioConfig

    path = Path(args.scenario)
    if not path.exists():
        raise FileNotFoundError(f"scenario file not found: {path}")
    cfg = ScenarioConfig.load(path)
    over = _typed_overrides(_parse_override(getattr(args, "override", None)))
    if getattr(args, "mode", None):
        over["mode"] = args.mode
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "prune_k", None) is not None:
        over["prune_k"] = args.prune_k
    cfg = cfg.with_overrides(**over)
    if getattr(args, "alpha", None) is not None:
        barriers = [dict(b, alpha_gain=args.alpha, alpha2_gain=args.alpha) for b in cfg.barriers]
        cfg = cfg.with_overrides(barriers=barriers)
    return cfg


def cmd_run(args) -> int:
    from .sim import run_scenario, write_summary

    try:
        cfg = _load_scenario(args)
    except Exception as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log, summary = run_scenario(cfg)
    log.to_csv(out / "log.csv")
    write_summary(summary, out / "summary.json")
    print(json.dumps({k: summary[k] for k in
                      ("scenario", "mode", "steps", "min_h", "rms_pos_err",
                       "mean_freq_hz", "diverged", "safety_violation")}, indent=1))
    if summary["diverged"] or summary["min_h"] < SAFETY_TOLERANCE:
        print(f"safety violation: min h = {summary['min_h']:.3e}", file=sys.stderr)
        return EXIT_SAFETY
    return EXIT_OK


def cmd_bench(args) -> int:
    from .models import load_robot
    from .scenarios import bench_rows_configs, table_speed_configs
    from .sim import ScenarioConfig, benchmark

    if args.pin_core is not None and hasattr(os, "sched_setaffinity"):
        os.sched_setaffinity(0, {args.pin_core})  # steadier timing on busy hosts

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = load_robot("panda")
    report = {"v": 1, "experiments": [], "scaling": []}

    for cfg_v, cfg_t in zip(table_speed_configs("velocity", args.duration),
                            table_speed_configs("torque", args.duration)):
        row = {"experiment": cfg_v["name"].removeprefix("speed_")}
        for label, cfg in (("velocity", cfg_v), ("torque", cfg_t)):
            stats = benchmark(ScenarioConfig.from_dict(cfg), trials=args.trials, model=model)
            row["rows"] = stats["rows"]
            row[f"{label}_mean_khz"] = stats["mean_freq_hz"] / 1e3
            row[f"{label}_p5_khz"] = stats["p5_freq_hz"] / 1e3
            row[f"{label}_median_latency_us"] = stats["median_latency"] * 1e6
        report["experiments"].append(row)

    for cfg_v, cfg_t in zip(bench_rows_configs("velocity", args.duration),
                            bench_rows_configs("torque", args.duration)):
        row = {"name": cfg_v["name"]}
        for label, cfg in (("velocity", cfg_v), ("torque", cfg_t)):
            stats = benchmark(ScenarioConfig.from_dict(cfg), trials=args.trials, model=model)
            row["rows"] = stats["rows"]
            row[f"{label}_median_latency_us"] = stats["median_latency"] * 1e6
            row[f"{label}_mean_khz"] = stats["mean_freq_hz"] / 1e3
        report["scaling"].append(row)

    (out / "bench.json").write_text(json.dumps(report, indent=1))
    lines = [
        "| Experiment | Rows | Velocity mean/p5 (kHz) | Torque mean/p5 (kHz) |",
        "|---|---|---|---|",
    ]
    for r in report["experiments"]:
        lines.append(
            f"| {r['experiment']} | {r['rows']} | "
            f"{r['velocity_mean_khz']:.2f} / {r['velocity_p5_khz']:.2f} | "
            f"{r['torque_mean_khz']:.2f} / {r['torque_p5_khz']:.2f} |"
        )
    lines.append("")
    lines.append("| Scaling | Rows | Velocity median (us) | Torque median (us) |")
    lines.append("|---|---|---|---|")
    for r in report["scaling"]:
        lines.append(
            f"| {r['name']} | {r['rows']} | {r['velocity_median_latency_us']:.0f} | "
            f"{r['torque_median_latency_us']:.0f} |"
        )
    md = "\n".join(lines)
    (out / "bench.md").write_text(md + "\n")
    print(md)
    return EXIT_OK


def _validate_bench_report(path: Path) -> int:
    try:
        data = json.loads(path.read_text())
    except Exception as exc:
        print(f"[FAIL] bench report: not valid JSON ({exc})")
        return EXIT_VALIDATION
    ok = isinstance(data.get("experiments"), list) and isinstance(data.get("scaling"), list)
    need = {"rows", "velocity_mean_khz", "torque_mean_khz"}
    for row in data.get("experiments", []):
        ok &= need.issubset(row)
    print(f"[{'PASS' if ok else 'FAIL'}] bench report schema: {path}")
    return EXIT_OK if ok else EXIT_VALIDATION


def cmd_validate(args) -> int:
    if args.bench_report:
        return _validate_bench_report(Path(args.bench_report))
    from .checks import run_all

    results = run_all(gradient_states=args.gradient_states)
    for r in results:
        print(r.line())
    n_pass = sum(r.passed for r in results)
    print(f"{n_pass}/{len(results)} checks passed")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(
            {"v": 1, "checks": [{"name": r.name, "passed": bool(r.passed), "detail": r.detail}
                                for r in results]}, indent=1))
    return EXIT_OK if n_pass == len(results) else EXIT_VALIDATION


def cmd_serve(args) -> int:
    from .teleop import serve_forever

    try:
        cfg = _load_scenario(args)
    except Exception as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    serve_forever(cfg, host=args.host, port=args.port, rt_factor=args.rt_factor)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oscbf",
        description="Safety-filtered manipulator control: scenarios, benchmarks, validation, teleop.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a scenario; write log.csv and summary.json")
    run.add_argument("scenario", nargs="?", help="scenario JSON path")
    run.add_argument("--scenario", dest="scenario_flag", help="scenario JSON path")
    run.add_argument("--out", default="out", help="output directory")
    run.add_argument("--seed", type=int)
    run.add_argument("--mode", choices=("velocity", "torque"))
    run.add_argument("--prune-k", dest="prune_k", type=int)
    run.add_argument("--alpha", type=float, help="override every barrier's class-K gains")
    run.add_argument("--override", action="append", metavar="KEY=VALUE")
    run.set_defaults(func=cmd_run)

    bench = sub.add_parser("bench", help="speed table and row-count scaling report")
    bench.add_argument("--out", default="out")
    bench.add_argument("--trials", type=int, default=2)
    bench.add_argument("--duration", type=float, default=0.5)
    bench.add_argument("--pin-core", dest="pin_core", type=int,
                       help="pin the process to one CPU core for stable timing")
    bench.set_defaults(func=cmd_bench)

    val = sub.add_parser("validate", help="run the numerical ground-truth suite")
    val.add_argument("--gradient-states", type=int, default=100)
    val.add_argument("--out", help="write a JSON report here")
    val.add_argument("--bench-report", help="validate a bench report file instead")
    val.set_defaults(func=cmd_validate)

    serve = sub.add_parser("serve", help="teleoperation bridge over WebSocket")
    serve.add_argument("scenario", nargs="?", help="scenario JSON path")
    serve.add_argument("--scenario", dest="scenario_flag")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8765)
    serve.add_argument("--rt-factor", type=float, default=1.0,
                       help="real-time pacing factor (1.0 = wall-clock rate)")
    serve.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if hasattr(args, "scenario_flag") and args.scenario_flag and not args.scenario:
        args.scenario = args.scenario_flag
    if args.command in ("run", "serve") and not args.scenario:
        print("config error: a scenario path is required", file=sys.stderr)
        return EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
