"""Shipped benchmark configurations.

Two tiers per problem:

* desk presets (plain names): reduced families, point counts, and
  iteration budgets calibrated to finish on a laptop CPU in minutes while
  staying under the relaxed error targets.  Their selection leans on the
  top-kappa rule with kappa sized to the smaller families.
* full-scale presets ("-full" suffix): the published hyperparameter
  tables verbatim (resolution ranges, thresholds with their stated
  comparison directions, kappa, weights, point counts, Adam budgets).
  These reproduce the original experiment scale and are not CI-gated;
  expect long runtimes and a large memory budget.

Variants: "-wpinn" trains the fixed basis only (coefficients + L-BFGS
polish, no adaptive stage); "-mmpinn" additionally switches to the
exponent-regularized loss with the published (p, q).
"""

from __future__ import annotations

from dataclasses import asdict

from .errors import ValidationError
from .harness import RunConfig

DESK_SEEDS = (0, 1, 2, 3, 4)


def _heat_desk(eps: float) -> RunConfig:
    return RunConfig(
        problem_name="heat",
        problem_params={"eps": eps},
        levels=[(0, 1), (0, 1, 2, 3, 4)],
        gammas=[0.3, 0.3],
        n_res=2500,
        n_sup={"initial": 250, "left": 125, "right": 125},
        test_resolution=101,
        kappa=35.0,
        mode="weighted",
        omega_r=0.01,
        omega_s=1.0,
        adam_iters=1000,
        adam_lr=0.2,
        lbfgs_max_iters=500,
        seeds=DESK_SEEDS,
        output_dir=f"runs/heat-{eps}",
    )


def _heat_full(eps: float, adam_iters: int, th_ic, th_bc, th_pde, kappa: float) -> RunConfig:
    return RunConfig(
        problem_name="heat",
        problem_params={"eps": eps},
        levels=[tuple(range(-6, 6)), tuple(range(-6, 7))],
        gammas=[0.3, 0.3],
        n_res=20000,
        n_sup={"initial": 1000, "left": 1000, "right": 1000},
        test_resolution=201,
        kappa=kappa,
        thresholds={"ic": th_ic, "bc": th_bc, "pde": th_pde},
        mode="weighted",
        omega_r=0.01,
        omega_s=1.0,
        adam_iters=adam_iters,
        adam_lr=1e-3,
        lbfgs_max_iters=20000,
        matrix_budget_mb=8192.0,
        seeds=DESK_SEEDS,
        output_dir=f"runs/heat-{eps}-full",
    )


def _poisson_desk(eps: float) -> RunConfig:
    fine = (0, 1, 2, 3, 4) if eps >= 0.04 else (0, 1, 2, 3, 4, 5)
    return RunConfig(
        problem_name="poisson",
        problem_params={"eps": eps},
        levels=[fine, (0, 1)],
        gammas=[0.1, 0.1],
        n_res=2500,
        n_sup=250,
        test_resolution=101,
        kappa=35.0,
        mode="weighted",
        omega_r=0.01,
        omega_s=10.0,
        adam_iters=1000,
        adam_lr=0.2,
        lbfgs_max_iters=500,
        seeds=DESK_SEEDS,
        output_dir=f"runs/poisson-{eps}",
    )


def _poisson_full(eps: float, adam_iters: int, kappa: float, th_pde) -> RunConfig:
    return RunConfig(
        problem_name="poisson",
        problem_params={"eps": eps},
        levels=[tuple(range(-6, 7)), tuple(range(-6, 7))],
        gammas=[0.1 if eps >= 0.04 else 0.2] * 2,
        n_res=10000,
        n_sup=1000,
        test_resolution=201,
        kappa=kappa,
        thresholds={"bc": (">", 0.2), "pde": th_pde},
        mode="weighted",
        omega_r=0.01,
        omega_s=10.0,
        adam_iters=adam_iters,
        adam_lr=1e-3,
        lbfgs_max_iters=20000,
        matrix_budget_mb=8192.0,
        seeds=DESK_SEEDS,
        output_dir=f"runs/poisson-{eps}-full",
    )


def _flow_desk() -> RunConfig:
    return RunConfig(
        problem_name="flow",
        problem_params={"amplitude": 100.0, "t_s": 0.05},
        levels=[(0, 1), (1, 2, 7)],
        gammas=[0.3, 0.3],
        n_res=5000,
        n_sup=250,
        test_resolution=101,
        kappa=12.0,
        mode="weighted",
        omega_r=1.0,
        omega_s=1.0,
        adam_iters=2000,
        adam_lr=0.1,
        lbfgs_max_iters=1500,
        seeds=DESK_SEEDS,
        output_dir="runs/flow",
    )


def _flow_full() -> RunConfig:
    return RunConfig(
        problem_name="flow",
        problem_params={"amplitude": 100.0, "t_s": 0.05},
        levels=[tuple(range(-6, 7)), tuple(range(-6, 7))],
        gammas=[0.3, 0.3],
        n_res=20000,
        n_sup={"initial": 1000, "inflow": 1000},
        test_resolution=201,
        kappa=2.0,
        thresholds={"ic": (">", 0.5), "bc": (">", 0.95), "pde": ("<", 0.25)},
        mode="weighted",
        omega_r=1.0,
        omega_s=1.0,
        adam_iters=1000,
        adam_lr=1e-3,
        lbfgs_max_iters=20000,
        matrix_budget_mb=8192.0,
        seeds=DESK_SEEDS,
        output_dir="runs/flow-full",
    )


def _maxwell_desk() -> RunConfig:
    return RunConfig(
        problem_name="maxwell",
        problem_params={},
        levels=[(0, 1, 2), (0, 1, 2), (0, 1, 2)],
        gammas=[0.1, 0.1, 0.1],
        n_res=6000,
        n_sup=250,
        test_resolution=(41, 41, 11),
        kappa=30.0,
        mode="weighted",
        omega_r=0.1,
        omega_s=1.0,
        adam_iters=1500,
        adam_lr=0.1,
        lbfgs_max_iters=800,
        seeds=DESK_SEEDS,
        output_dir="runs/maxwell",
        reference={"dx": 2.5e-3, "dt": 1.25e-3},
    )


def _maxwell_full() -> RunConfig:
    return RunConfig(
        problem_name="maxwell",
        problem_params={},
        levels=[tuple(range(-5, 5))] * 3,
        gammas=[0.1, 0.1, 0.1],
        n_res=40000,
        n_sup={
            "pec-left": 1000,
            "pec-right": 1000,
            "pec-bottom": 1000,
            "pec-top": 1000,
            "initial-ex": 2000,
            "initial-ey": 2000,
            "initial-hz": 2000,
        },
        test_resolution=(51, 51, 21),
        kappa=5.0,
        thresholds={"ic": ("<", 0.95), "bc": ("<", 0.95), "pde": ("<", 0.91)},
        mode="weighted",
        omega_r=0.1,
        omega_s=1.0,
        adam_iters=10000,
        adam_lr=1e-3,
        lbfgs_max_iters=20000,
        matrix_budget_mb=16384.0,
        seeds=DESK_SEEDS,
        output_dir="runs/maxwell-full",
        reference={"dx": 5e-3, "dt": 1.5e-3},
    )


# Published exponent pairs for the magnitude-balancing loss variant.
_MMPINN_PQ = {
    "heat-0.12": (3, 1),
    "heat-0.11": (4, 1),
    "heat-0.10": (4, 1),
    "poisson-0.05": (3, 1),
    "poisson-0.02": (4, 1),
    "flow": (3, 1),
    "maxwell": (2, 1),
}


def _base_presets() -> dict:
    return {
        "heat-0.12": lambda: _heat_desk(0.12),
        "heat-0.11": lambda: _heat_desk(0.11),
        "heat-0.10": lambda: _heat_desk(0.10),
        "poisson-0.05": lambda: _poisson_desk(0.05),
        "poisson-0.02": lambda: _poisson_desk(0.02),
        "flow": _flow_desk,
        "maxwell": _maxwell_desk,
        "heat-0.12-full": lambda: _heat_full(0.12, 1000, (">", 0.5), ("<", 0.002), ("<", 0.980), 8.0),
        "heat-0.11-full": lambda: _heat_full(0.11, 2000, (">", 0.2), ("<", 0.02), ("<", 0.988), 10.0),
        "heat-0.10-full": lambda: _heat_full(0.10, 3000, (">", 0.4), ("<", 0.003), ("<", 0.984), 8.0),
        "poisson-0.05-full": lambda: _poisson_full(0.05, 1000, 2.0, ("<", 0.850)),
        "poisson-0.02-full": lambda: _poisson_full(0.02, 2000, 1.0, ("<", 0.975)),
        "flow-full": _flow_full,
        "maxwell-full": _maxwell_full,
    }


def preset_names() -> list[str]:
    names = []
    for base in _base_presets():
        names.append(base)
        if not base.endswith("-full"):
            names.append(f"{base}-wpinn")
            names.append(f"{base}-mmpinn")
    return sorted(names)


def get_preset(name: str) -> RunConfig:
    """Build a fresh RunConfig for a named preset."""
    base_name = name
    variant = None
    for suffix in ("-wpinn", "-mmpinn"):
        if name.endswith(suffix):
            base_name = name[: -len(suffix)]
            variant = suffix[1:]
            break
    presets = _base_presets()
    if base_name not in presets:
        raise ValidationError(
            f"unknown preset {name!r}; available: {', '.join(preset_names())}"
        )
    config = presets[base_name]()
    if variant is None:
        return config
    data = asdict(config)
    data["variant"] = "wpinn"
    data["output_dir"] = f"{config.output_dir}-{variant}"
    if variant == "mmpinn":
        p, q = _MMPINN_PQ[base_name.removesuffix("-full")]
        data["mode"] = "exponent"
        data["p"], data["q"] = p, q
    return RunConfig(**data)
