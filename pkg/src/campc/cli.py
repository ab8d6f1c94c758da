"""Command line interface.

Subcommands:
  bench thermal   closed-loop thermal benchmark (full/reduced/verify)
  run             closed loop on matrices loaded from an .npz container
  selftest        quick randomized property suites
  sweep-nc        screening-time scaling experiment

Exit codes: 0 pass, 1 acceptance failure, 2 configuration error,
3 solver failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import yaml

from campc import condenser, harness, numqp, screener, thermal2d
from campc.condenser import ConstraintBlock, StateSpaceModel, TrackingProblem
from campc.numqp import SolverFailure, SolverOptions

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3


class ConfigError(ValueError):
    pass


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a mapping")
    return cfg


def _gaussian_spec(entry, default) -> thermal2d.GaussianSpec:
    if entry is None:
        return default
    try:
        return thermal2d.GaussianSpec(
            center=tuple(entry.get("center", default.center)),
            width=float(entry.get("width", default.width)),
            peak=float(entry.get("peak", entry.get("amplitude", default.peak))),
            floor=float(entry.get("floor", default.floor)),
        )
    except (TypeError, ValueError, AttributeError) as exc:
        raise ConfigError(f"bad Gaussian spec {entry!r}: {exc}") from exc


def thermal_config(section: dict | None) -> thermal2d.ThermalConfig:
    section = dict(section or {})
    kwargs = {}
    for key in ("n", "horizon", "ref_ramp_steps", "output_block"):
        if key in section:
            kwargs[key] = int(section.pop(key))
    for key in ("alpha", "beta", "reaction_sign", "boundary_sign", "dt",
                "q_scale", "r_scale", "rho_scale", "ref_target"):
        if key in section:
            kwargs[key] = float(section.pop(key))
    if "output_nodes" in section:
        kwargs["output_nodes"] = tuple(int(j) for j in section.pop("output_nodes"))
    if "loads" in section:
        entries = section.pop("loads")
        kwargs["loads"] = tuple(
            _gaussian_spec(e, thermal2d.GaussianSpec()) for e in entries)
    if "bound" in section:
        kwargs["bound"] = _gaussian_spec(section.pop("bound"),
                                         thermal2d._DEFAULT_BOUND)
    if section:
        raise ConfigError(f"unknown thermal config keys: {sorted(section)}")
    try:
        return thermal2d.ThermalConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def solver_options(section: dict | None) -> SolverOptions:
    section = dict(section or {})
    kwargs = {}
    if "tol" in section:
        kwargs["tol"] = float(section.pop("tol"))
    if "max_iterations" in section:
        kwargs["max_iterations"] = int(section.pop("max_iterations"))
    if "fraction_to_boundary" in section:
        kwargs["fraction_to_boundary"] = float(section.pop("fraction_to_boundary"))
    if section:
        raise ConfigError(f"unknown solver config keys: {sorted(section)}")
    return SolverOptions(**kwargs)


def _print_report(report: harness.Report) -> None:
    print(f"steps:            {report.steps}")
    print(f"constraints:      {report.n_c}")
    print(f"max |A|:          {report.max_kept} "
          f"({100.0 * report.kept_fraction:.1f}%)")
    print(f"max deviation:    {report.max_dev:.3e}")
    print(f"median deviation: {report.median_dev:.3e}")
    print(f"speedup:          {report.speedup:.1f}x")
    print(f"equivalence:      {'pass' if report.dev_ok else 'FAIL'}")


def cmd_bench(args) -> int:
    cfg_file = load_config(args.config) if args.config else {}
    cfg = thermal_config(cfg_file.get("thermal"))
    opts = solver_options(cfg_file.get("solver"))
    scen_cfg = dict(cfg_file.get("scenario") or {})
    mode = args.mode or scen_cfg.get("mode", "verify")
    steps = args.steps or int(scen_cfg.get("steps", 60))

    model, problem, cfg = thermal2d.build_thermal_benchmark(cfg)
    scenario = harness.Scenario(
        model=model, problem=problem,
        references=lambda k: thermal2d.reference_window(cfg, k),
        steps=steps, mode=mode, options=opts,
        seed=int(scen_cfg.get("seed", 0)),
        timing_repeats=int(scen_cfg.get("timing_repeats", 1)))
    return _run_scenario(scenario, args.out)


def _load_matrices(path) -> tuple:
    try:
        data = np.load(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read matrix container {path}: {exc}") from exc
    need = {"A", "B", "C", "Q", "R", "N", "y_ref"}
    missing = need - set(data.files)
    if missing:
        raise ConfigError(f"matrix container missing keys: {sorted(missing)}")
    model = StateSpaceModel(A=data["A"], B=data["B"], C=data["C"],
                            D=data["D"] if "D" in data.files else None)

    def block(prefix):
        if f"M_{prefix}" not in data.files:
            return None
        return ConstraintBlock(M=data[f"M_{prefix}"], g=data[f"g_{prefix}"],
                               rho=data[f"rho_{prefix}"])

    problem = TrackingProblem(
        Q=data["Q"], R=data["R"], N=int(data["N"]),
        state_constraints=block("x"),
        input_constraints=block("u"),
        rate_constraints=block("d"))
    y_ref = np.atleast_2d(np.asarray(data["y_ref"], dtype=float))
    x0 = data["x0"] if "x0" in data.files else None
    u_prev = data["u_prev"] if "u_prev" in data.files else None
    return model, problem, y_ref, x0, u_prev


def cmd_run(args) -> int:
    cfg_file = load_config(args.config)
    mats = cfg_file.get("matrices")
    if not mats or "path" not in mats:
        raise ConfigError("`run` needs matrices: {path: file.npz} in the config")
    path = Path(args.config).parent / mats["path"]
    model, problem, y_ref, x0, u_prev = _load_matrices(path)
    opts = solver_options(cfg_file.get("solver"))
    scen_cfg = dict(cfg_file.get("scenario") or {})
    steps = int(scen_cfg.get("steps", 60))
    N = problem.N
    if len(y_ref) < steps + N:
        raise ConfigError(
            f"y_ref must cover steps+N = {steps + N} rows, has {len(y_ref)}")

    scenario = harness.Scenario(
        model=model, problem=problem,
        references=lambda k: [y_ref[k + i] for i in range(1, N + 1)],
        steps=steps, x0=x0, u_prev0=u_prev,
        mode=scen_cfg.get("mode", "verify"), options=opts,
        seed=int(scen_cfg.get("seed", 0)),
        timing_repeats=int(scen_cfg.get("timing_repeats", 1)))
    return _run_scenario(scenario, args.out)


def _run_scenario(scenario: harness.Scenario, out_dir) -> int:
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    try:
        result = harness.run_closed_loop(scenario)
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        if out and getattr(exc, "traces", None):
            harness.write_trace_csv(exc.traces, out / "trace.csv",
                                    scenario.model.n_u)
        return EXIT_SOLVER
    if out:
        harness.write_trace_csv(result.traces, out / "trace.csv",
                                scenario.model.n_u)
        print(f"trace written to {out / 'trace.csv'}")
    if scenario.mode == "verify":
        report = harness.verify_equivalence(result.traces, result.qp.n_c)
        _print_report(report)
        return EXIT_OK if report.dev_ok else EXIT_FAIL
    kept = max(t.n_kept for t in result.traces)
    print(f"steps: {len(result.traces)}, max |A|: {kept} of {result.qp.n_c}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    rng = np.random.default_rng(args.seed)
    failures = []

    def check(name, ok):
        print(f"{'pass' if ok else 'FAIL'}  {name}")
        if not ok:
            failures.append(name)

    n_inst = args.instances
    solver_ok = sound_ok = member_ok = True
    for _ in range(n_inst):
        qp, z = _random_softqp(rng)
        full = numqp.solve_soft_qp(qp, z)
        oracle = numqp.enumerate_oracle(qp, z)
        tol = 1e-6 * (1.0 + np.abs(oracle.v_star).max())
        solver_ok &= np.abs(full.v_star - oracle.v_star).max() <= tol

        v_tilde = oracle.v_star + rng.normal(scale=0.5, size=qp.n_v)
        eps_tilde = screener.complete_slacks(v_tilde, qp, z)
        bound = screener.ellipsoid_bound(v_tilde, eps_tilde, qp, z)
        member_ok &= bound.radius_sq(oracle.v_star) <= bound.sigma * (1 + 1e-7) + 1e-9
        cache = screener.precompute_row_norms(qp)
        kept = screener.screen(cache, bound, z, eps_tilde)
        red = screener.reduce_qp(qp, kept)
        red_star = numqp.enumerate_oracle(red, z)
        sound_ok &= np.abs(red_star.v_star - oracle.v_star).max() <= tol
    check(f"solver matches oracle on {n_inst} random QPs", solver_ok)
    check("full minimizer inside ellipsoid bound", member_ok)
    check("screening preserves the minimizer", sound_ok)
    return EXIT_OK if not failures else EXIT_FAIL


def _random_softqp(rng, n_v_max=4, n_c_max=10):
    n_v = int(rng.integers(1, n_v_max + 1))
    n_c = int(rng.integers(1, n_c_max + 1))
    n_z = int(rng.integers(1, 4))
    M = rng.normal(size=(n_v, n_v))
    qp = numqp.SoftQP(
        H=M.T @ M + 0.1 * np.eye(n_v),
        F=rng.normal(size=(n_v, n_z)),
        W=rng.normal(size=(n_c, n_v)),
        c=rng.normal(size=n_c),
        L=rng.normal(size=(n_c, n_z)),
        rho=rng.uniform(0.2, 3.0, size=n_c))
    return qp, rng.normal(size=n_z)


def cmd_sweep(args) -> int:
    result = harness.screening_time_sweep(
        n_c_values=tuple(args.n_c), n_v=args.n_v, repeats=args.repeats,
        seed=args.seed)
    for n_c, t in zip(result["n_c"], result["t_screen_s"]):
        print(f"n_c={n_c:6d}  t_screen={t * 1e6:9.1f} us")
    print(f"linear fit R^2 = {result['r_squared']:.4f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sweep_nc.csv", "w") as fh:
            fh.write("n_c,t_screen_s\n")
            for n_c, t in zip(result["n_c"], result["t_screen_s"]):
                fh.write(f"{n_c},{t!r}\n")
    return EXIT_OK if result["r_squared"] >= 0.95 else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="campc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    bench = sub.add_parser("bench", help="built-in benchmarks")
    bench_sub = bench.add_subparsers(dest="benchmark", required=True)
    thermal = bench_sub.add_parser("thermal", help="2-d thermal benchmark")
    thermal.add_argument("--config", help="YAML config file")
    thermal.add_argument("--mode", choices=harness.MODES)
    thermal.add_argument("--steps", type=int)
    thermal.add_argument("--out", help="output directory for trace.csv")
    thermal.set_defaults(func=cmd_bench)

    run = sub.add_parser("run", help="closed loop on loaded matrices")
    run.add_argument("--config", required=True)
    run.add_argument("--out")
    run.set_defaults(func=cmd_run)

    selftest = sub.add_parser("selftest", help="randomized property suites")
    selftest.add_argument("--seed", type=int, default=0)
    selftest.add_argument("--instances", type=int, default=100)
    selftest.set_defaults(func=cmd_selftest)

    sweep = sub.add_parser("sweep-nc", help="screening-time scaling")
    sweep.add_argument("--n-c", type=int, nargs="+",
                       default=[500, 1000, 2000, 4000])
    sweep.add_argument("--n-v", type=int, default=15)
    sweep.add_argument("--repeats", type=int, default=50)
    sweep.add_argument("--seed", type=int, default=0)
    sweep.add_argument("--out")
    sweep.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
