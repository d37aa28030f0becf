"""Acceptance suite: the release criteria, one test per criterion.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
lines. The adversarial-sweep ensemble (criteria 1 and 2) is simulated once
per (mode, seed) and shared.
"""

import time

import numpy as np
import pytest

from oscbf import load_robot
from oscbf.scenarios import (
    bench_rows_configs,
    fig_boundary_push,
    fig_dynamic_line,
    fig_sweep,
    line_deviation,
    null_space_motion,
)
from oscbf.sim import ScenarioConfig, benchmark, run_scenario

SEEDS = list(range(20))
MODES = ("velocity", "torque")
SAFETY_TOL = -1e-3


def _report(criterion: str, passed: bool, detail: str):
    print(f"\n[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")
    assert passed, f"{criterion}: {detail}"


@pytest.fixture(scope="module")
def sweep_ensemble():
    """All (mode, seed) sweep runs, reduced to the fields the criteria need."""
    runs = {}
    for mode in MODES:
        for seed in SEEDS:
            cfg = ScenarioConfig.from_dict(fig_sweep(mode, seed=seed))
            t0 = time.perf_counter()
            log, summary = run_scenario(cfg)
            wall = time.perf_counter() - t0
            runs[(mode, seed)] = {
                "wall": wall,
                "min_h": summary["min_h"],
                "min_h_per_kind": summary["min_h_per_kind"],
                "rows": summary["rows"],
                "min_h_trace": log.min_h.copy(),
                "dev_joint": log.dev_joint.copy(),
                "err_pos": log.err_pos.copy(),
                "median_latency": summary["median_latency"],
            }
            del log
    return runs


def test_criterion_forward_invariance(sweep_ensemble):
    """Adversarial sweep, 168 rows, both modes, 20 seeds: every h >= -1e-3."""
    worst = min(r["min_h"] for r in sweep_ensemble.values())
    rows_ok = all(r["rows"] == 168 for r in sweep_ensemble.values())
    slowest = max(r["wall"] for r in sweep_ensemble.values())
    ok = worst >= SAFETY_TOL and rows_ok and slowest < 120.0
    _report(
        "forward_invariance",
        ok,
        f"min h over {len(sweep_ensemble)} runs = {worst:.2e} (>= -1e-3); "
        f"168 rows; slowest run {slowest:.0f}s (< 120s)",
    )


def test_criterion_non_conservatism(sweep_ensemble):
    """The sweep genuinely probes every barrier family, and the filter is
    exactly inactive whenever every row is comfortably clear."""
    probe_ok = True
    worst_probe = -np.inf
    for (mode, seed), r in sweep_ensemble.items():
        fam_max = max(r["min_h_per_kind"].values())
        worst_probe = max(worst_probe, fam_max)
        probe_ok &= all(v < 0.05 for v in r["min_h_per_kind"].values())

    # filter inactivity: wherever all rows sit above 0.2, the command equals
    # the nominal to 1e-6 (the manipulability row rarely clears 0.2 on this
    # arm, so also verify against an unconstrained twin on the prefix before
    # the filter first acts)
    inactive_ok = True
    n_quiet = 0
    for r in sweep_ensemble.values():
        quiet = r["min_h_trace"] > 0.2
        n_quiet += int(quiet.sum())
        if quiet.any():
            inactive_ok &= bool(np.max(r["dev_joint"][quiet]) < 1e-6)

    twin_ok = True
    for mode in MODES:
        cfg = ScenarioConfig.from_dict(fig_sweep(mode, seed=0))
        free = cfg.with_overrides(barriers=[])
        log_free, _ = run_scenario(free)
        filtered = sweep_ensemble[(mode, 0)]
        active_at = np.flatnonzero(filtered["dev_joint"] > 1e-6)
        prefix = int(active_at[0]) if len(active_at) else len(log_free.err_pos)
        diff = float(np.max(np.abs(
            filtered["err_pos"][:prefix] - log_free.err_pos[:prefix]
        )))
        twin_ok &= diff < 1e-6

    ok = probe_ok and inactive_ok and twin_ok
    _report(
        "non_conservatism",
        ok,
        f"every family dips below 0.05 in every run (worst family min {worst_probe:.3f}); "
        f"filter inactive on {n_quiet} quiet steps; unconstrained twin matches the "
        f"pre-activity prefix within 1e-6",
    )


def test_criterion_task_consistency():
    """Boundary push: the task-consistent objective beats the input metric on
    steady-state EE error and the pure task metric on null-space motion."""
    model = load_robot("panda")
    out = {}
    for objective in ("oscbf", "input_metric", "opspace_only"):
        cfg = ScenarioConfig.from_dict(fig_boundary_push(objective))
        log, summary = run_scenario(cfg)
        ss_err = float(np.mean(log.err_pos[-1000:]))
        nm = null_space_motion(model, log.q, log.qd, cfg.dt)
        out[objective] = (ss_err, nm, summary["min_h"])
    err_gap = out["input_metric"][0] - out["oscbf"][0]
    nm_gap = out["opspace_only"][1] - out["oscbf"][1]
    safe = all(v[2] >= SAFETY_TOL for v in out.values())
    ok = err_gap > 0 and nm_gap > 0 and safe
    _report(
        "task_consistency",
        ok,
        f"steady-state EE error {out['oscbf'][0]:.4f} <= input-metric "
        f"{out['input_metric'][0]:.4f} (gap {err_gap:.4f} > 0); null motion "
        f"{out['oscbf'][1]:.3f} <= task-only {out['opspace_only'][1]:.3f} "
        f"(gap {nm_gap:.3f} > 0); all runs safe",
    )


@pytest.fixture(scope="module")
def dynamic_line_runs():
    out = {}
    for mode in MODES:
        cfg = ScenarioConfig.from_dict(fig_dynamic_line(mode, seed=0))
        log, summary = run_scenario(cfg)
        dev = line_deviation(log.ee_pos, cfg.reference["a"], cfg.reference["b"])
        out[mode] = {"min_h": summary["min_h"], "dev": dev}
    return out


def test_criterion_dynamic_safety(dynamic_line_runs):
    """Periodic line with finite actuation: both modes safe; the full-order
    filter tracks the line strictly better."""
    v = dynamic_line_runs["velocity"]
    t = dynamic_line_runs["torque"]
    ok = v["min_h"] >= SAFETY_TOL and t["min_h"] >= SAFETY_TOL and t["dev"] < v["dev"]
    _report(
        "dynamic_safety",
        ok,
        f"min h velocity {v['min_h']:.2e}, torque {t['min_h']:.2e} (>= -1e-3); "
        f"line RMS deviation torque {t['dev']:.4f} < velocity {v['dev']:.4f}",
    )


def test_criterion_performance():
    """Median step <= 1 ms on the 168-row five-family suite; frequency
    monotone over the collision-scaling ladder; velocity mode at least as
    fast as torque mode at every row count."""
    from oscbf.scenarios import table_speed_configs

    model = load_robot("panda")
    ladder = [0, 1, 2, 3]  # rows 1, 21, 168, 420
    stats = {}
    suite = {}
    for mode in MODES:
        cfgs = [ScenarioConfig.from_dict(bench_rows_configs(mode, duration=0.5)[i])
                for i in ladder]
        # interleave the rungs round-robin so slow machine-load drift hits
        # every row count equally instead of biasing adjacent rungs
        lat = {c.name: [] for c in cfgs}
        rows = {}
        for trial in range(5):
            for cfg in cfgs:
                log, summary = run_scenario(cfg, model)
                rows[cfg.name] = summary["rows"]
                if trial == 0:
                    continue  # warm-up round discarded
                lat[cfg.name].append(log.latency[1:])
        for name, chunks in lat.items():
            all_lat = np.concatenate(chunks)
            stats[(mode, name)] = {
                "rows": rows[name],
                "median_latency": float(np.median(all_lat)),
                "median_freq_hz": float(1.0 / np.median(all_lat)),
            }
        all_cfg = ScenarioConfig.from_dict(table_speed_configs(mode, duration=1.0)[-1])
        suite[mode] = benchmark(all_cfg, trials=3, model=model)
        assert suite[mode]["rows"] == 168
    lines = []
    mono_ok = True
    mode_ok = True
    for mode in MODES:
        freqs = [stats[(mode, n)]["median_freq_hz"]
                 for n in ("rows_1", "rows_21", "rows_168", "rows_420")]
        mono_ok &= all(freqs[i] > freqs[i + 1] for i in range(len(freqs) - 1))
        lines.append(f"{mode} median kHz over rows 1/21/168/420: "
                     + "/".join(f"{f/1e3:.2f}" for f in freqs))
    for name in ("rows_1", "rows_21", "rows_168", "rows_420"):
        mode_ok &= stats[("velocity", name)]["median_freq_hz"] >= stats[("torque", name)]["median_freq_hz"]
    mode_ok &= suite["velocity"]["median_freq_hz"] >= suite["torque"]["median_freq_hz"]
    lat_v = suite["velocity"]["median_latency"]
    lat_t = suite["torque"]["median_latency"]
    lat_ok = lat_v <= 1e-3 and lat_t <= 1e-3
    ok = mono_ok and mode_ok and lat_ok
    _report(
        "performance",
        ok,
        f"five-family 168-row suite median latency: velocity {lat_v*1e6:.0f} us, "
        f"torque {lat_t*1e6:.0f} us (<= 1000 us); ladder monotone: {mono_ok}; "
        f"velocity >= torque everywhere: {mode_ok}; " + "; ".join(lines),
    )


def test_criterion_numerical_ground_truth():
    """(a) barrier gradients vs FD over 100 states; (b) QP vs active-set
    oracle over 100 problems; (c) task-space identities; (d) pendulum period;
    (e) energy conservation."""
    from oscbf.checks import (
        check_barrier_gradients,
        check_energy_conservation,
        check_opspace_identities,
        check_pendulum_period,
        check_qp_oracle,
    )

    results = [
        check_barrier_gradients(states_per_kind=100),
        check_qp_oracle(n_problems=100),
        check_opspace_identities(),
        check_pendulum_period(),
        check_energy_conservation(),
    ]
    ok = all(r.passed for r in results)
    _report("numerical_ground_truth", ok, "; ".join(r.line() for r in results))


def test_criterion_negative_controls():
    """Disabling the high-order barrier handling must break safety on the
    dynamic-line scenario; removing slack must make a conflicting problem
    infeasible."""
    cfg = ScenarioConfig.from_dict(fig_dynamic_line("torque", seed=0))
    cfg = cfg.with_overrides(hocbf=False, duration=2.5)
    log, summary = run_scenario(cfg)
    hocbf_broken = summary["min_h"] < SAFETY_TOL

    from oscbf.qp import INFEASIBLE, QpProblem, solve

    conflict = QpProblem(
        P=np.eye(1) * 2, q=np.zeros(1), G=np.array([[1.0], [-1.0]]),
        h=np.array([1.0, 0.0]), slackable=np.array([False, False]), rho=np.ones(2),
    )
    infeasible_detected = solve(conflict).status == INFEASIBLE
    relaxed = QpProblem(
        P=np.eye(1) * 2, q=np.zeros(1), G=np.array([[1.0], [-1.0]]),
        h=np.array([1.0, 0.0]), slackable=np.array([True, True]), rho=1e6 * np.ones(2),
    )
    relaxed_solves = solve(relaxed).status == "optimal"

    ok = hocbf_broken and infeasible_detected and relaxed_solves
    _report(
        "negative_controls",
        ok,
        f"naive-RD1 torque run min h = {summary['min_h']:.2e} (< -1e-3, unsafe as "
        f"expected); slack removal on a conflicting pair -> {solve(conflict).status}; "
        f"the relaxed form solves",
    )
