"""Benchmark orchestration: run configs, presets, metrics, artifacts.

A run config serializes to an INI-style text file (section headers, flat
key = value pairs; exact grammar below) and validates strictly: unknown
sections or keys are rejected.  Benchmarks execute the two-stage pipeline
over one or more seeds, score predictions with the relative L2 metric
against the closed-form solution (or the FDTD reference for the cavity
problem), and leave a self-contained artifact directory behind: manifest,
training log, prediction/error grids, and model checkpoints.  A rerun
from a saved manifest reproduces the metrics bit-exactly on the same
platform and worker count.

Config grammar (INI):

    [problem]   name = heat|poisson|flow|maxwell, plus problem parameters
                (eps; amplitude/t_s/boundary; tau/omega/sigma/center_x/
                center_y/t_final)
    [family]    levels<n> = comma-separated integers, gamma<n> = float,
                one pair per axis
    [points]    n_res = int; n_sup = int or name:count list;
                test_resolution = int or comma list
    [selection] kappa = percent; rescale = bool; zero_rhs_tol = float;
                threshold_ic/_bc/_pde = >value or <value (optional)
    [loss]      mode = weighted|exponent; omega_r, omega_s = float;
                p, q = int (exponent mode)
    [train]     adam_iters, adam_lr, lbfgs_max_iters, lbfgs_grad_tol,
                lbfgs_rel_loss_tol, matrix_budget_mb
    [run]       variant = adaptive|wpinn; seeds = comma list; output_dir
    [reference] maxwell only: dx, dt (FDTD reference resolution)
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import subprocess
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ValidationError
from .family import AxisSpec
from .fdtd import solve_reference
from .loss import LossWeights
from .model import save_model
from .optimize import (
    AdamConfig,
    LbfgsConfig,
    PipelineConfig,
    PipelineResult,
    TrainConfig,
    run_pipeline,
)
from .problems import PROBLEM_BUILDERS, PdeProblem
from .selection import SelectionConfig, Threshold


def relative_l2(pred: np.ndarray, exact: np.ndarray) -> float:
    """|pred - exact|_2 / |exact|_2 over a test grid."""
    pred = np.asarray(pred, dtype=float).ravel()
    exact = np.asarray(exact, dtype=float).ravel()
    if pred.shape != exact.shape:
        raise ValidationError("prediction and reference lengths differ")
    denom = float(np.linalg.norm(exact))
    if denom == 0.0:
        raise ValidationError("reference norm is zero; relative error undefined")
    return float(np.linalg.norm(pred - exact) / denom)


def code_version() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"waveletpinn-{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"waveletpinn-{__version__}"


# -- run configuration -----------------------------------------------------------


@dataclass
class RunConfig:
    """Everything one benchmark run needs, serializable to INI text."""

    problem_name: str
    problem_params: dict
    levels: list  # per-axis tuples of ints
    gammas: list  # per-axis floats
    n_res: int
    n_sup: object  # int or {condition: count}
    test_resolution: object
    kappa: float = 5.0
    thresholds: dict = field(default_factory=dict)  # category -> (op, value)
    rescale: bool = True
    zero_rhs_tol: float = 1e-12
    mode: str = "weighted"
    omega_r: float = 1.0
    omega_s: float = 1.0
    p: int = 1
    q: int = 1
    adam_iters: int = 1000
    adam_lr: float = 1e-3
    lbfgs_max_iters: int = 500
    lbfgs_grad_tol: float = 1e-9
    lbfgs_rel_loss_tol: float = 1e-12
    matrix_budget_mb: float = 512.0
    variant: str = "adaptive"
    seeds: tuple = (0,)
    output_dir: str = "runs/out"
    reference: dict = field(default_factory=dict)  # maxwell FDTD resolution

    def __post_init__(self):
        if self.problem_name not in PROBLEM_BUILDERS:
            raise ValidationError(f"unknown problem {self.problem_name!r}")
        if self.mode not in ("weighted", "exponent"):
            raise ValidationError(f"loss mode must be weighted/exponent, got {self.mode}")
        if len(self.levels) != len(self.gammas):
            raise ValidationError("levels and gammas must pair up per axis")
        if not self.seeds:
            raise ValidationError("at least one seed is required")

    def build_problem(self) -> PdeProblem:
        return PROBLEM_BUILDERS[self.problem_name](**self.problem_params)

    def pipeline_config(self) -> PipelineConfig:
        problem = self.build_problem()
        if len(self.levels) != problem.dim:
            raise ValidationError(
                f"{problem.dim} axes expected for {self.problem_name}, "
                f"got {len(self.levels)} level sets"
            )
        axes = tuple(
            AxisSpec(lo, hi, tuple(lv), g)
            for (lo, hi), lv, g in zip(problem.domain, self.levels, self.gammas)
        )
        thresholds = {
            cat: Threshold(value, "greater" if op == ">" else "less")
            for cat, (op, value) in self.thresholds.items()
        }
        return PipelineConfig(
            axes=axes,
            selection=SelectionConfig(
                thresholds=thresholds,
                top_kappa_percent=self.kappa,
                zero_rhs_tol=self.zero_rhs_tol,
                rescale_coefficients=self.rescale,
            ),
            train=TrainConfig(
                adam_iters=self.adam_iters,
                adam=AdamConfig(lr=self.adam_lr),
                lbfgs=LbfgsConfig(
                    max_iters=self.lbfgs_max_iters,
                    grad_tol=self.lbfgs_grad_tol,
                    rel_loss_tol=self.lbfgs_rel_loss_tol,
                ),
                matrix_budget_mb=self.matrix_budget_mb,
            ),
            weights=LossWeights(residual=self.omega_r, supervised=self.omega_s),
            exponents=(self.p, self.q) if self.mode == "exponent" else None,
            n_res=self.n_res,
            n_sup=self.n_sup,
            test_resolution=self.test_resolution,
            variant=self.variant,
        )

    # -- INI serialization -------------------------------------------------------

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp["problem"] = {"name": self.problem_name}
        for k, v in self.problem_params.items():
            if k == "center":
                cp["problem"]["center_x"] = repr(float(v[0]))
                cp["problem"]["center_y"] = repr(float(v[1]))
            else:
                cp["problem"][k] = str(v)
        cp["family"] = {}
        for n, (lv, g) in enumerate(zip(self.levels, self.gammas)):
            cp["family"][f"levels{n}"] = ",".join(str(int(j)) for j in lv)
            cp["family"][f"gamma{n}"] = repr(float(g))
        cp["points"] = {
            "n_res": str(self.n_res),
            "n_sup": (
                ",".join(f"{k}:{v}" for k, v in self.n_sup.items())
                if isinstance(self.n_sup, dict)
                else str(self.n_sup)
            ),
            "test_resolution": (
                ",".join(str(r) for r in self.test_resolution)
                if np.iterable(self.test_resolution)
                else str(self.test_resolution)
            ),
        }
        cp["selection"] = {
            "kappa": repr(float(self.kappa)),
            "rescale": str(self.rescale).lower(),
            "zero_rhs_tol": repr(float(self.zero_rhs_tol)),
        }
        for cat, (op, value) in self.thresholds.items():
            cp["selection"][f"threshold_{cat}"] = f"{op}{value!r}"
        cp["loss"] = {
            "mode": self.mode,
            "omega_r": repr(float(self.omega_r)),
            "omega_s": repr(float(self.omega_s)),
        }
        if self.mode == "exponent":
            cp["loss"]["p"] = str(self.p)
            cp["loss"]["q"] = str(self.q)
        cp["train"] = {
            "adam_iters": str(self.adam_iters),
            "adam_lr": repr(float(self.adam_lr)),
            "lbfgs_max_iters": str(self.lbfgs_max_iters),
            "lbfgs_grad_tol": repr(float(self.lbfgs_grad_tol)),
            "lbfgs_rel_loss_tol": repr(float(self.lbfgs_rel_loss_tol)),
            "matrix_budget_mb": repr(float(self.matrix_budget_mb)),
        }
        cp["run"] = {
            "variant": self.variant,
            "seeds": ",".join(str(s) for s in self.seeds),
            "output_dir": self.output_dir,
        }
        if self.reference:
            cp["reference"] = {k: repr(float(v)) for k, v in self.reference.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser()
        cp.read_string(text)
        known_sections = {"problem", "family", "points", "selection", "loss", "train", "run", "reference"}
        unknown = set(cp.sections()) - known_sections
        if unknown:
            raise ValidationError(f"unknown config sections: {sorted(unknown)}")

        def section(name):
            return dict(cp[name]) if cp.has_section(name) else {}

        prob = section("problem")
        name = prob.pop("name", None)
        if name is None:
            raise ValidationError("[problem] needs a name")
        params = {}
        center = [None, None]
        for k, v in prob.items():
            if k == "center_x":
                center[0] = float(v)
            elif k == "center_y":
                center[1] = float(v)
            elif k in ("eps", "amplitude", "t_s", "tau", "omega", "sigma", "t_final"):
                params[k] = float(v)
            elif k == "boundary":
                params[k] = v
            else:
                raise ValidationError(f"unknown [problem] key {k!r}")
        if center != [None, None]:
            if None in center:
                raise ValidationError("center_x and center_y must both be given")
            params["center"] = (center[0], center[1])

        fam = section("family")
        levels, gammas = [], []
        n = 0
        while f"levels{n}" in fam:
            levels.append(tuple(int(t) for t in fam.pop(f"levels{n}").split(",")))
            gammas.append(float(fam.pop(f"gamma{n}", "0.0")))
            n += 1
        if fam:
            raise ValidationError(f"unknown [family] keys: {sorted(fam)}")

        pnts = section("points")
        n_res = int(pnts.pop("n_res"))
        raw_sup = pnts.pop("n_sup")
        n_sup = (
            {k: int(v) for k, v in (kv.split(":") for kv in raw_sup.split(","))}
            if ":" in raw_sup
            else int(raw_sup)
        )
        raw_res = pnts.pop("test_resolution")
        test_resolution = (
            tuple(int(t) for t in raw_res.split(",")) if "," in raw_res else int(raw_res)
        )
        if pnts:
            raise ValidationError(f"unknown [points] keys: {sorted(pnts)}")

        sel = section("selection")
        thresholds = {}
        for cat in ("ic", "bc", "pde"):
            raw = sel.pop(f"threshold_{cat}", None)
            if raw is not None:
                op, value = raw[0], float(raw[1:])
                if op not in "<>":
                    raise ValidationError(f"threshold must start with < or >, got {raw!r}")
                thresholds[cat] = (op, value)
        kappa = float(sel.pop("kappa", "5.0"))
        rescale = sel.pop("rescale", "true").lower() == "true"
        zero_rhs_tol = float(sel.pop("zero_rhs_tol", "1e-12"))
        if sel:
            raise ValidationError(f"unknown [selection] keys: {sorted(sel)}")

        lo = section("loss")
        mode = lo.pop("mode", "weighted")
        omega_r = float(lo.pop("omega_r", "1.0"))
        omega_s = float(lo.pop("omega_s", "1.0"))
        p = int(lo.pop("p", "1"))
        q = int(lo.pop("q", "1"))
        if lo:
            raise ValidationError(f"unknown [loss] keys: {sorted(lo)}")

        tr = section("train")
        train_kwargs = dict(
            adam_iters=int(tr.pop("adam_iters", "1000")),
            adam_lr=float(tr.pop("adam_lr", "1e-3")),
            lbfgs_max_iters=int(tr.pop("lbfgs_max_iters", "500")),
            lbfgs_grad_tol=float(tr.pop("lbfgs_grad_tol", "1e-9")),
            lbfgs_rel_loss_tol=float(tr.pop("lbfgs_rel_loss_tol", "1e-12")),
            matrix_budget_mb=float(tr.pop("matrix_budget_mb", "512.0")),
        )
        if tr:
            raise ValidationError(f"unknown [train] keys: {sorted(tr)}")

        run = section("run")
        variant = run.pop("variant", "adaptive")
        seeds = tuple(int(s) for s in run.pop("seeds", "0").split(","))
        output_dir = run.pop("output_dir", "runs/out")
        if run:
            raise ValidationError(f"unknown [run] keys: {sorted(run)}")

        ref = {k: float(v) for k, v in section("reference").items()}
        bad_ref = set(ref) - {"dx", "dt"}
        if bad_ref:
            raise ValidationError(f"unknown [reference] keys: {sorted(bad_ref)}")

        return cls(
            problem_name=name,
            problem_params=params,
            levels=levels,
            gammas=gammas,
            n_res=n_res,
            n_sup=n_sup,
            test_resolution=test_resolution,
            kappa=kappa,
            thresholds=thresholds,
            rescale=rescale,
            zero_rhs_tol=zero_rhs_tol,
            mode=mode,
            omega_r=omega_r,
            omega_s=omega_s,
            p=p,
            q=q,
            variant=variant,
            seeds=seeds,
            output_dir=output_dir,
            reference=ref,
            **train_kwargs,
        )


# -- metric evaluation -------------------------------------------------------------


FIELD_NAMES = {1: ("u",), 3: ("ex", "ey", "hz")}


def reference_on_grid(config: RunConfig, problem: PdeProblem, test: np.ndarray) -> np.ndarray:
    """(n_fields, n_test) reference values: closed form or FDTD."""
    if problem.exact is not None:
        return problem.exact_values(test)
    if problem.name != "maxwell":
        raise ValidationError(f"no reference available for {problem.name}")
    ref = config.reference or {}
    dx = float(ref.get("dx", 2.5e-3))
    dt = float(ref.get("dt", 1.25e-3))
    sol = solve_reference(
        dx,
        dx,
        dt,
        problem.params["t_final"],
        tau=problem.params["tau"],
        omega=problem.params["omega"],
        sigma=problem.params["sigma"],
        center=problem.params["center"],
        query_points=test,
    )
    return sol.stacked()


def evaluate_metrics(result: PipelineResult, reference: np.ndarray) -> dict:
    test = result.points.test
    names = FIELD_NAMES[len(result.models)]
    return {
        name: relative_l2(result.models[f].forward(test), reference[f])
        for f, name in enumerate(names)
    }


# -- artifacts ----------------------------------------------------------------------


@dataclass
class MetricReport:
    """Per-seed relative L2 errors with mean/std aggregation."""

    preset: str
    per_seed: list  # [{"seed": s, "metrics": {...}, "seconds": {...}, "reason": str}]
    fields: tuple

    def values(self, field_name: str) -> np.ndarray:
        return np.array([r["metrics"][field_name] for r in self.per_seed])

    def mean(self, field_name: str) -> float:
        return float(self.values(field_name).mean())

    def std(self, field_name: str) -> float:
        return float(self.values(field_name).std(ddof=0))

    def median(self, field_name: str) -> float:
        return float(np.median(self.values(field_name)))

    def summary(self) -> dict:
        return {
            name: {
                "per_seed": [float(v) for v in self.values(name)],
                "mean": self.mean(name),
                "std": self.std(name),
                "median": self.median(name),
            }
            for name in self.fields
        }


def _write_training_log(path: Path, result: PipelineResult):
    names = sorted({k for row in result.log for k in row.terms})
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["iteration", "phase"] + names + ["total", "grad_norm", "step_size", "wall_clock"]
        )
        for row in result.log:
            w.writerow(
                [row.iteration, row.phase]
                + [repr(row.terms[n]) if n in row.terms else "" for n in names]
                + [repr(row.total), repr(row.grad_norm), repr(row.step_size), repr(row.wall_clock)]
            )


def _write_grid_csv(path: Path, test: np.ndarray, columns: dict):
    d = test.shape[1]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{n}" for n in range(d)] + list(columns))
        for i in range(test.shape[0]):
            w.writerow(
                [repr(float(v)) for v in test[i]]
                + [repr(float(col[i])) for col in columns.values()]
            )


def run_benchmark(
    preset_or_config,
    overrides: dict | None = None,
    repeats: int | None = None,
    output_dir: str | None = None,
) -> MetricReport:
    """Run a preset (or explicit RunConfig) and write its artifact tree.

    repeats, when given, replaces the config's seed list with range(repeats).
    Every per-seed directory carries a manifest sufficient for a bit-exact
    rerun; the aggregate report lands in report.json at the root.
    """
    from .presets import get_preset  # local import; presets build RunConfigs

    if isinstance(preset_or_config, RunConfig):
        config = preset_or_config
        preset_name = "custom"
    else:
        preset_name = str(preset_or_config)
        config = get_preset(preset_name)
    if overrides:
        config = apply_overrides(config, overrides)
    if repeats is not None:
        config.seeds = tuple(range(int(repeats)))
    if output_dir is not None:
        config.output_dir = str(output_dir)

    problem = config.build_problem()
    pipe_cfg = config.pipeline_config()
    out_root = Path(config.output_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    version = code_version()
    fields = FIELD_NAMES[problem.n_fields]
    from .family import build_family

    family_manifest_text = build_family(pipe_cfg.axes).manifest()

    reference = None
    per_seed = []
    for seed in config.seeds:
        t0 = time.perf_counter()
        result = run_pipeline(problem, pipe_cfg, seed=int(seed))
        if reference is None:
            reference = reference_on_grid(config, problem, result.points.test)
        metrics = evaluate_metrics(result, reference)
        seconds = dict(result.phase_seconds)
        seconds["total"] = time.perf_counter() - t0

        run_dir = out_root / f"seed-{seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        manifest = {
            "preset": preset_name,
            "config_ini": config.to_ini(),
            "seed": int(seed),
            "version": version,
            "termination_reason": result.lbfgs_report.reason,
            "lbfgs_iterations": result.lbfgs_report.iterations,
            "family_size": result.family_size,
            "active_units": [len(a) for a in result.active] if result.active else None,
            "metrics": {k: float(v) for k, v in metrics.items()},
            "seconds": {k: float(v) for k, v in seconds.items()},
        }
        (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
        _write_training_log(run_dir / "training_log.csv", result)
        preds = {
            f"pred_{name}": result.models[f].forward(result.points.test)
            for f, name in enumerate(fields)
        }
        errs = {
            f"abs_err_{name}": np.abs(preds[f"pred_{name}"] - reference[f])
            for f, name in enumerate(fields)
        }
        refs = {f"ref_{name}": reference[f] for f, name in enumerate(fields)}
        _write_grid_csv(run_dir / "prediction_grid.csv", result.points.test, {**preds, **refs, **errs})
        for f, name in enumerate(fields):
            save_model(result.models[f], run_dir / f"model_{name}.txt")
        fam_text = family_manifest_text
        if result.active is not None:
            for f, name in enumerate(fields):
                fam_text += "\n".join(
                    [f"field {name}"] + result.active[f].manifest_lines()
                ) + "\n"
        (run_dir / "family_manifest.txt").write_text(fam_text)
        per_seed.append(
            {
                "seed": int(seed),
                "metrics": {k: float(v) for k, v in metrics.items()},
                "seconds": {k: float(v) for k, v in seconds.items()},
                "reason": result.lbfgs_report.reason,
            }
        )

    report = MetricReport(preset=preset_name, per_seed=per_seed, fields=fields)
    (out_root / "report.json").write_text(
        json.dumps({"preset": preset_name, "version": version, **report.summary()}, indent=2)
    )
    return report


def apply_overrides(config: RunConfig, overrides: dict) -> RunConfig:
    """Override RunConfig fields by name (values already typed)."""
    data = asdict(config)
    for key, value in overrides.items():
        if key not in data:
            raise ValidationError(f"unknown config field {key!r}")
        data[key] = value
    return RunConfig(**data)


def rerun_manifest(manifest_path) -> tuple[dict, dict]:
    """Re-execute the run a manifest describes; return (old, new) metrics."""
    manifest = json.loads(Path(manifest_path).read_text())
    config = RunConfig.from_ini(manifest["config_ini"])
    problem = config.build_problem()
    pipe_cfg = config.pipeline_config()
    result = run_pipeline(problem, pipe_cfg, seed=int(manifest["seed"]))
    reference = reference_on_grid(config, problem, result.points.test)
    metrics = evaluate_metrics(result, reference)
    return manifest["metrics"], {k: float(v) for k, v in metrics.items()}
