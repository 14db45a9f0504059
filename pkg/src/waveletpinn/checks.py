"""Fast built-in property checks, runnable from the CLI.

Each check returns (name, passed, detail).  These are cheap spot versions
of the oracle suites the full test battery runs; they exist so an
installed copy can self-verify without the test tree.
"""

from __future__ import annotations

import numpy as np

from .family import AxisSpec, build_family
from .loss import LossWeights, loss_and_gradient, loss_breakdown
from .model import VALUE, ModelState, combined_params, grad_axis, hess_axis, init_adaptive, with_combined_params
from .ntk import assemble_kernel, decompose_kernel, jacobi_eigh
from .optimize import LbfgsConfig, lbfgs_minimize
from .problems import make_heat_conduction, sample_points
from .selection import similarity_scores
from .wavelet import eval_psi
from .fdtd import YeeGrid


def check_wavelet_derivatives():
    rng = np.random.default_rng(1)
    x = rng.uniform(-5, 5, 200)
    h = 1e-5
    worst = 0.0
    for n in range(3):
        fd = (eval_psi(x + h, n) - eval_psi(x - h, n)) / (2 * h)
        exact = eval_psi(x, n + 1)
        worst = max(worst, float(np.max(np.abs(fd - exact) / np.maximum(np.abs(exact), 1e-3))))
    return "wavelet-derivative-chain", worst < 1e-6, f"max rel err {worst:.2e}"


def check_parameter_gradients():
    rng = np.random.default_rng(2)
    m = init_adaptive(4, 2, seed=3)
    x = rng.uniform(-1, 1, 2)
    worst = 0.0
    for target in (VALUE, grad_axis(0), hess_axis(1)):
        g = m.param_gradient(x, target)
        theta = m.param_vector()
        for p in range(theta.size):
            h = 1e-6
            tp, tm = theta.copy(), theta.copy()
            tp[p] += h
            tm[p] -= h

            def q(vec):
                mm = m.with_params(vec)
                if target[0] == "value":
                    return mm.forward(x)
                return mm.spatial_derivative(x, target[1], 1 if target[0] == "grad" else 2)

            fd = (q(tp) - q(tm)) / (2 * h)
            worst = max(worst, abs(fd - g[p]) / max(1e-2, float(np.abs(g).max())))
    return "parameter-gradients-vs-fd", worst < 1e-5, f"max rel err {worst:.2e}"


def check_loss_gradient():
    problem = make_heat_conduction(0.12)
    pts = sample_points(problem, 25, 8, 5, seed=4)
    m = init_adaptive(3, 2, seed=5)
    weights = LossWeights(residual=0.01, supervised=1.0)
    bk, g = loss_and_gradient(problem, m, pts, weights)
    theta = combined_params([m])
    worst = 0.0
    for p in range(theta.size):
        h = 1e-4 * max(1.0, abs(theta[p]))

        def total(vec):
            return loss_breakdown(problem, with_combined_params([m], vec), pts, weights).total

        tp, tm = theta.copy(), theta.copy()
        tp[p] += h
        tm[p] -= h
        fd = (total(tp) - total(tm)) / (2 * h)
        worst = max(worst, abs(fd - g[p]) / max(1e-8, float(np.abs(g).max())))
    return "loss-gradient-vs-fd", worst < 1e-4, f"max rel err {worst:.2e}"


def check_selection_properties():
    rng = np.random.default_rng(6)
    ok = True
    detail = ""
    for _ in range(50):
        v = rng.normal(size=(10, 20))
        rhs = rng.normal(size=20)
        s = similarity_scores(v, rhs)
        if not (np.all(np.abs(s.values) <= 1 + 1e-12) and abs(np.max(np.abs(s.values)) - 1) < 1e-12):
            ok = False
            detail = "score bound violated"
            break
        s2 = similarity_scores(v, 3.7 * rhs)
        if not np.allclose(s.values, s2.values, rtol=1e-12):
            ok = False
            detail = "rhs scale invariance violated"
            break
    return "selection-score-properties", ok, detail or "bounds and invariance hold"


def check_kernel_identities():
    rng = np.random.default_rng(7)
    m = init_adaptive(5, 2, seed=8)
    x = rng.uniform(-1, 1, size=(7, 2))
    k = assemble_kernel(m, target="output", x=x)
    k.validate()
    kc, kt, kb = decompose_kernel(m, x)
    add = float(np.abs(kc + kt + kb - k.matrix).max()) / max(1.0, float(np.abs(k.matrix).max()))
    w, q = jacobi_eigh(k.matrix)
    resid = float(np.abs(k.matrix @ q - q * w[None, :]).max()) / max(1.0, float(np.abs(k.matrix).max()))
    ok = add < 1e-12 and resid < 1e-10
    return "kernel-identities", ok, f"additivity {add:.1e}, eig residual {resid:.1e}"


def check_exponent_transform():
    a = 1e9 ** (1.0 / 3.0)
    ok = abs(a - 1e3) < 1e-9
    rng = np.random.default_rng(9)
    for _ in range(200):
        b = float(rng.uniform(1, 1e5))
        aa = b * float(rng.uniform(1, 1e5))
        qq = int(rng.integers(1, 5))
        pp = qq + int(rng.integers(0, 5))
        if aa ** (1 / pp) / b ** (1 / qq) > aa / b + 1e-12:
            ok = False
            break
    return "exponent-transform", ok, "cube root and compression inequality"


def check_fdtd_invariants():
    grid = YeeGrid(nx=16, ny=16, dt=0.02)
    for _ in range(30):
        grid.step(None)
    zeros = bool(np.all(grid.hz == 0.0) and np.all(grid.ex == 0.0))
    pec = bool(
        np.all(grid.ex[:, 0] == 0) and np.all(grid.ey[0, :] == 0)
    )
    return "fdtd-invariants", zeros and pec, "zero-source and PEC exactness"


def check_lbfgs_oracles():
    def quad(x):
        return 0.5 * float(x @ x), x

    x, rep = lbfgs_minimize(quad, np.array([3.0, 4.0]))
    ok1 = np.linalg.norm(x) < 1e-10 and rep.iterations <= 2

    def rosen(x):
        f = (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2
        g = np.array(
            [-2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2), 200 * (x[1] - x[0] ** 2)]
        )
        return float(f), g

    _, rep2 = lbfgs_minimize(rosen, np.array([-1.2, 1.0]), LbfgsConfig(max_iters=200, grad_tol=1e-12))
    ok2 = rep2.final_loss < 1e-8
    return "lbfgs-oracles", ok1 and ok2, f"quadratic {rep.iterations} iters, rosenbrock {rep2.final_loss:.1e}"


ALL_CHECKS = [
    check_wavelet_derivatives,
    check_parameter_gradients,
    check_loss_gradient,
    check_selection_properties,
    check_kernel_identities,
    check_exponent_transform,
    check_fdtd_invariants,
    check_lbfgs_oracles,
]


def run_all(print_fn=print) -> bool:
    all_ok = True
    for fn in ALL_CHECKS:
        name, ok, detail = fn()
        print_fn(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        all_ok &= ok
    return all_ok
