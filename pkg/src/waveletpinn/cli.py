"""Command-line entry points.

Subcommands: solve (one pipeline run), select (stage 1 only, dump the
active set), ntk (kernel diagnostics on a checkpoint), fdtd (reference
solver), bench (preset benchmark grid or manifest rerun), check (built-in
property suite).  Exit codes: 0 success, 2 validation error, 3 numerical
failure.  The WAVELETPINN_WORKERS environment variable bounds worker
threads for point-block evaluation; everything else comes from flags or
config files.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import NumericalError, ValidationError


def _load_config(args):
    from .harness import RunConfig
    from .presets import get_preset

    if getattr(args, "config", None):
        config = RunConfig.from_ini(Path(args.config).read_text())
    elif getattr(args, "preset", None):
        config = get_preset(args.preset)
    else:
        raise ValidationError("either --preset or --config is required")
    if getattr(args, "output", None):
        config.output_dir = args.output
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ValidationError(f"--set expects field=value, got {item!r}")
        key, raw = item.split("=", 1)
        config = _override_field(config, key.strip(), raw.strip())
    return config


def _override_field(config, key, raw):
    from .harness import apply_overrides

    current = getattr(config, key, None)
    if current is None and key not in vars(config):
        raise ValidationError(f"unknown config field {key!r}")
    if isinstance(current, bool):
        value = raw.lower() == "true"
    elif isinstance(current, int):
        value = int(raw)
    elif isinstance(current, float):
        value = float(raw)
    elif isinstance(current, tuple):
        value = tuple(int(v) for v in raw.split(","))
    else:
        value = raw
    return apply_overrides(config, {key: value})


def cmd_solve(args) -> int:
    from .optimize import run_pipeline

    config = _load_config(args)
    problem = config.build_problem()
    seed = args.seed if args.seed is not None else config.seeds[0]
    result = run_pipeline(problem, config.pipeline_config(), seed=int(seed))
    from .harness import evaluate_metrics, reference_on_grid

    reference = reference_on_grid(config, problem, result.points.test)
    metrics = evaluate_metrics(result, reference)
    print(f"seed {seed}: families={result.family_size}", end="")
    if result.active is not None:
        print(f" active={[len(a) for a in result.active]}", end="")
    print(f" lbfgs={result.lbfgs_report.iterations}it ({result.lbfgs_report.reason})")
    for name, value in metrics.items():
        print(f"relative-l2 {name} = {value:.6e}")
    return 0


def cmd_select(args) -> int:
    from .family import build_family
    from .loss import LinearLossCache
    from .model import combined_params, init_fixed, with_combined_params
    from .optimize import AdamState, adam_step
    from .selection import category_scores, select_active

    config = _load_config(args)
    problem = config.build_problem()
    pipe = config.pipeline_config()
    seed = args.seed if args.seed is not None else config.seeds[0]
    rootss = np.random.SeedSequence(int(seed))
    sample_seed, *init_seeds = [int(s.generate_state(1)[0]) for s in rootss.spawn(1 + problem.n_fields)]
    from .problems import sample_points

    pts = sample_points(problem, pipe.n_res, pipe.n_sup, pipe.test_resolution, sample_seed)
    family = build_family(pipe.axes)
    states = [init_fixed(family, s) for s in init_seeds]
    cache = LinearLossCache(problem, family, pts)
    vec = combined_params(states)
    adam = AdamState.init(vec.size, pipe.train.adam)
    for _ in range(pipe.train.adam_iters):
        _, grad = cache.loss_and_gradient(with_combined_params(states, vec), pipe.weights, pipe.exponents)
        vec, adam = adam_step(adam, vec, grad)
    states = with_combined_params(states, vec)

    out = Path(args.output or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for f in range(problem.n_fields):
        scores = category_scores(problem, family, states[f].coeffs, pts, field_index=f)
        active = select_active(scores, states[f].coeffs, family, pipe.selection)
        lines.append(f"field {f}")
        lines.extend(active.manifest_lines())
        print(f"field {f}: {len(active)} of {len(family)} members selected")
    (out / "active_set.txt").write_text("\n".join(lines) + "\n")
    print(f"wrote {out / 'active_set.txt'}")
    return 0


def cmd_ntk(args) -> int:
    from .model import load_model
    from .ntk import assemble_kernel, decompose_kernel, jacobi_eigh, spectral_decay

    model = load_model(args.model)
    rng = np.random.default_rng(args.seed)
    if args.points_file:
        rows = np.loadtxt(args.points_file, delimiter=",", ndmin=2)
        x = rows[:, : model.dim]
    else:
        bounds = []
        for span in (args.box or "-1:1").split(","):
            lo, hi = span.split(":")
            bounds.append((float(lo), float(hi)))
        while len(bounds) < model.dim:
            bounds.append(bounds[-1])
        x = np.stack(
            [rng.uniform(lo, hi, args.n_points) for lo, hi in bounds[: model.dim]], axis=1
        )
    kernel = assemble_kernel(model, target="output", x=x, scaled=args.scaled)
    kernel.validate()
    w, q = jacobi_eigh(kernel.matrix)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "spectrum.csv").open("w") as fh:
        fh.write("index,eigenvalue\n")
        for i, val in enumerate(w):
            fh.write(f"{i},{val!r}\n")
    print(f"kernel {kernel.n}x{kernel.n}: eigenvalues in [{w.min():.3e}, {w.max():.3e}]")
    if model.kind == "adaptive":
        kc, kt, kb = decompose_kernel(model, x, scaled=args.scaled)
        print(
            f"decomposition norms: |K_c|={np.abs(kc).max():.3e} "
            f"|K_theta|={np.abs(kt).max():.3e} |K_bias|={np.abs(kb).max():.3e}"
        )
    if args.times:
        times = [float(t) for t in args.times.split(",")]
        e0 = np.ones(kernel.n)
        traj = spectral_decay(kernel, e0, times)
        with (out / "decay.csv").open("w") as fh:
            fh.write("time," + ",".join(f"e{i}" for i in range(kernel.n)) + "\n")
            for t, row in zip(times, traj):
                fh.write(f"{t!r}," + ",".join(repr(v) for v in row) + "\n")
        print(f"wrote decay trajectories for t={times}")
    print(f"wrote {out / 'spectrum.csv'}")
    return 0


def cmd_fdtd(args) -> int:
    from .fdtd import solve_reference

    queries = None
    if args.queries:
        queries = np.loadtxt(args.queries, delimiter=",", ndmin=2)
    snapshots = [float(t) for t in args.snapshots.split(",")] if args.snapshots else []
    center = tuple(float(v) for v in args.center.split(","))
    sol = solve_reference(
        args.dx,
        args.dx,
        args.dt,
        args.t_final,
        tau=args.tau,
        omega=args.omega,
        sigma=args.sigma,
        center=center,
        query_points=queries,
        snapshot_times=snapshots,
    )
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    print(f"ran {sol.n_steps} steps at dx={sol.dx:.4g}, dt={sol.dt:.4g}")
    for t, fields in sol.snapshots.items():
        for name, arr in fields.items():
            path = out / f"snapshot_{name}_t{t:g}.csv"
            np.savetxt(path, arr, delimiter=",")
        print(f"wrote snapshots at t={t:g}")
    if queries is not None:
        with (out / "reference_table.csv").open("w") as fh:
            fh.write("x,y,t,ex,ey,hz\n")
            for row, ex, ey, hz in zip(sol.queries, sol.ex, sol.ey, sol.hz):
                fh.write(
                    ",".join(repr(float(v)) for v in row)
                    + f",{ex!r},{ey!r},{hz!r}\n"
                )
        print(f"wrote {out / 'reference_table.csv'}")
    return 0


def cmd_bench(args) -> int:
    from .harness import rerun_manifest, run_benchmark

    if args.from_manifest:
        old, new = rerun_manifest(args.from_manifest)
        match = old == new
        for name in old:
            print(f"{name}: stored={old[name]!r} rerun={new[name]!r}")
        print("bit-exact match" if match else "MISMATCH")
        return 0 if match else 3
    report = run_benchmark(args.preset, repeats=args.repeats, output_dir=args.output)
    for name in report.fields:
        print(
            f"{args.preset} {name}: mean={report.mean(name):.3e} "
            f"std={report.std(name):.3e} median={report.median(name):.3e} "
            f"({len(report.per_seed)} seeds)"
        )
    return 0


def cmd_check(args) -> int:
    from .checks import run_all

    return 0 if run_all() else 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="waveletpinn",
        description="Adaptive wavelet collocation solver for PDEs with localized sources",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--preset", help="named preset (see presets module)")
        p.add_argument("--config", help="INI config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--output", help="output directory override")
        p.add_argument("--set", action="append", metavar="FIELD=VALUE",
                       help="override a RunConfig field (repeatable)")

    p_solve = sub.add_parser("solve", help="run the two-stage pipeline once")
    add_config_args(p_solve)
    p_solve.set_defaults(fn=cmd_solve)

    p_sel = sub.add_parser("select", help="stage 1 only: pre-train and dump the active set")
    add_config_args(p_sel)
    p_sel.set_defaults(fn=cmd_select)

    p_ntk = sub.add_parser("ntk", help="kernel diagnostics on a saved model")
    p_ntk.add_argument("--model", required=True, help="model checkpoint file")
    p_ntk.add_argument("--points-file", help="CSV of evaluation points")
    p_ntk.add_argument("--box", help="per-axis lo:hi spans, comma-separated")
    p_ntk.add_argument("--n-points", type=int, default=32)
    p_ntk.add_argument("--seed", type=int, default=0)
    p_ntk.add_argument("--scaled", action="store_true", help="1/sqrt(width) scaling")
    p_ntk.add_argument("--times", help="comma-separated decay times")
    p_ntk.add_argument("--output", default="ntk-out")
    p_ntk.set_defaults(fn=cmd_ntk)

    p_fd = sub.add_parser("fdtd", help="run the FDTD reference solver")
    p_fd.add_argument("--dx", type=float, default=2.5e-3)
    p_fd.add_argument("--dt", type=float, default=1.25e-3)
    p_fd.add_argument("--t-final", type=float, default=0.5)
    p_fd.add_argument("--tau", type=float, default=0.25)
    p_fd.add_argument("--omega", type=float, default=0.25)
    p_fd.add_argument("--sigma", type=float, default=0.01)
    p_fd.add_argument("--center", default="0.5,0.5")
    p_fd.add_argument("--snapshots", help="comma-separated snapshot times")
    p_fd.add_argument("--queries", help="CSV of x,y,t query points")
    p_fd.add_argument("--output", default="fdtd-out")
    p_fd.set_defaults(fn=cmd_fdtd)

    p_bench = sub.add_parser("bench", help="run a benchmark preset over seeds")
    p_bench.add_argument("--preset")
    p_bench.add_argument("--repeats", type=int, default=None)
    p_bench.add_argument("--output", default=None)
    p_bench.add_argument("--from-manifest", help="re-run a saved manifest and compare")
    p_bench.set_defaults(fn=cmd_bench)

    p_check = sub.add_parser("check", help="run the built-in property checks")
    p_check.set_defaults(fn=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
