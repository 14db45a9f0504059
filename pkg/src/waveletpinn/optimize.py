"""Optimizers and the two-stage training pipeline.

Stage 1 pre-trains the fixed-basis expansion with full-batch Adam (the
model is linear in its parameters, so operator matrices are precomputed
once when they fit the memory budget).  Stage 2 refines the transferred
adaptive units with L-BFGS (two-loop recursion, strong Wolfe line search)
until convergence.

Determinism: full-batch gradients, fixed reduction order, seeded inits;
the same seed and config reproduce parameters bit-exactly on the same
platform and worker count.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    DegenerateLossError,
    DivergenceError,
    ValidationError,
)
from .family import AxisSpec, build_family
from .loss import (
    LinearLossCache,
    LossBreakdown,
    LossWeights,
    loss_and_gradient,
    loss_breakdown,
)
from .model import ModelState, combined_params, init_fixed, with_combined_params
from .problems import PdeProblem, PointSet, sample_points
from .selection import ActiveSet, SelectionConfig, category_scores, select_active, transfer_model

# -- Adam ------------------------------------------------------------------------


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    """First/second moment accumulators with bias-corrected updates."""

    config: AdamConfig
    step: int
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def init(cls, n_params: int, config: AdamConfig | None = None) -> "AdamState":
        return cls(config or AdamConfig(), 0, np.zeros(n_params), np.zeros(n_params))


def adam_step(st: AdamState, params: np.ndarray, grad: np.ndarray):
    """One canonical Adam update; returns (new_params, state)."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != st.m.shape or params.shape != st.m.shape:
        raise ValidationError("parameter/gradient shape mismatch")
    if not np.isfinite(grad).all():
        raise DivergenceError("non-finite gradient", iteration=st.step)
    cfg = st.config
    st.step += 1
    st.m = cfg.beta1 * st.m + (1.0 - cfg.beta1) * grad
    st.v = cfg.beta2 * st.v + (1.0 - cfg.beta2) * grad * grad
    m_hat = st.m / (1.0 - cfg.beta1**st.step)
    v_hat = st.v / (1.0 - cfg.beta2**st.step)
    return params - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps), st


# -- L-BFGS with strong Wolfe line search -----------------------------------------


@dataclass
class LbfgsConfig:
    memory: int = 20
    c1: float = 1e-4
    c2: float = 0.9
    max_line_search: int = 50
    grad_tol: float = 1e-9
    rel_loss_tol: float = 1e-12
    patience: int = 10
    max_iters: int = 500


@dataclass
class LbfgsReport:
    reason: str
    iterations: int
    n_evals: int
    final_loss: float
    grad_norm: float


def curvature_ok(s: np.ndarray, y: np.ndarray) -> bool:
    """Accept an (s, y) pair only with meaningfully positive curvature."""
    return float(s @ y) > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(y))


def _strong_wolfe(phi, f0: float, d0: float, cfg: LbfgsConfig):
    """Strong Wolfe step along a descent direction.

    phi(a) -> (f, slope); d0 = phi'(0) < 0.  Non-finite values count as
    sufficient-decrease violations (step too long).  Returns
    (alpha, f, evals) or (None, None, evals) on failure.
    """
    evals = 0

    def is_bad(f):
        return not np.isfinite(f)

    def zoom(lo, f_lo, hi):
        nonlocal evals
        for _ in range(cfg.max_line_search):
            a = 0.5 * (lo + hi)
            f, g = phi(a)
            evals += 1
            if is_bad(f) or f > f0 + cfg.c1 * a * d0 or f >= f_lo:
                hi = a
            else:
                if abs(g) <= -cfg.c2 * d0:
                    return a, f
                if g * (hi - lo) >= 0:
                    hi = lo
                lo, f_lo = a, f
        return None, None

    a_prev, f_prev = 0.0, f0
    a = 1.0
    for i in range(cfg.max_line_search):
        f, g = phi(a)
        evals += 1
        if is_bad(f) or f > f0 + cfg.c1 * a * d0 or (i > 0 and f >= f_prev):
            alpha, fv = zoom(a_prev, f_prev, a)
            return alpha, fv, evals
        if abs(g) <= -cfg.c2 * d0:
            return a, f, evals
        if g >= 0:
            alpha, fv = zoom(a, f, a_prev)
            return alpha, fv, evals
        a_prev, f_prev = a, f
        a = min(2.0 * a, 1e10)
    return None, None, evals


def lbfgs_minimize(fun, x0: np.ndarray, config: LbfgsConfig | None = None, callback=None):
    """Minimize fun(x) -> (loss, grad) from x0.

    Accepted steps satisfy strong Wolfe conditions, so the loss sequence is
    non-increasing.  Stored (s, y) pairs must pass the curvature filter
    s.y > 1e-12 |s||y|.  On line-search failure the direction is reset to
    steepest descent once; a second failure terminates with that reason.
    """
    cfg = config or LbfgsConfig()
    x = np.asarray(x0, dtype=float).copy()
    f, g = fun(x)
    if not np.isfinite(f):
        raise DivergenceError("initial loss is not finite", iteration=0)
    n_evals = 1
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    rho_hist: list[float] = []
    recent = [f]
    reason = "max-iterations"
    it = 0

    gnorm = float(np.linalg.norm(g))
    if gnorm < cfg.grad_tol:
        return x, LbfgsReport("gradient-tolerance", 0, n_evals, float(f), gnorm)

    while it < cfg.max_iters:
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if s_hist:
            gamma = (s_hist[-1] @ y_hist[-1]) / (y_hist[-1] @ y_hist[-1])
            q *= gamma
        for (s, y, rho), a in zip(
            zip(s_hist, y_hist, rho_hist), reversed(alphas)
        ):
            b = rho * (y @ q)
            q += (a - b) * s
        d = -q
        if float(g @ d) >= 0:  # not a descent direction; reset
            d = -g

        cache = {}

        def do_line_search(direction):
            def phi(a):
                fv, gv = fun(x + a * direction)
                cache["f"], cache["g"] = fv, gv
                return fv, float(gv @ direction)

            return _strong_wolfe(phi, f, float(g @ direction), cfg)

        alpha, f_ls, evals = do_line_search(d)
        n_evals += evals
        if alpha is None and d is not None and not np.array_equal(d, -g):
            # retry once along steepest descent
            d = -g
            alpha, f_ls, evals = do_line_search(d)
            n_evals += evals
        if alpha is None:
            reason = "line-search-failure"
            break

        # the line search's last evaluation is the accepted point
        x_new = x + alpha * d
        f_new, g_new = cache["f"], cache["g"]
        if not np.isfinite(f_new):
            f_new, g_new = fun(x_new)
            n_evals += 1
        s = x_new - x
        y = g_new - g
        if curvature_ok(s, y):
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / float(s @ y))
            if len(s_hist) > cfg.memory:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)
        x, f, g = x_new, float(f_new), g_new
        it += 1
        gnorm = float(np.linalg.norm(g))
        if callback is not None:
            callback(it, f, gnorm, float(alpha))
        if gnorm < cfg.grad_tol:
            reason = "gradient-tolerance"
            break
        recent.append(f)
        if len(recent) > cfg.patience + 1:
            recent.pop(0)
            f_then = recent[0]
            denom = max(abs(f_then), 1e-300)
            if abs(f_then - f) / denom < cfg.rel_loss_tol:
                reason = "loss-plateau"
                break

    return x, LbfgsReport(reason, it, n_evals, float(f), gnorm)


# -- pipeline ----------------------------------------------------------------------


@dataclass
class TrainConfig:
    adam_iters: int = 1000
    adam: AdamConfig = field(default_factory=AdamConfig)
    lbfgs: LbfgsConfig = field(default_factory=LbfgsConfig)
    matrix_budget_mb: float = 512.0


@dataclass
class PipelineConfig:
    axes: tuple  # AxisSpec per coordinate
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    exponents: tuple | None = None
    n_res: int = 2000
    n_sup: int | dict = 200
    test_resolution: int | tuple = 64
    variant: str = "adaptive"  # "adaptive" | "wpinn"

    def __post_init__(self):
        if self.variant not in ("adaptive", "wpinn"):
            raise ValidationError(f"variant must be adaptive/wpinn, got {self.variant}")


@dataclass
class LogRow:
    iteration: int
    phase: str
    terms: dict
    total: float
    grad_norm: float
    step_size: float
    wall_clock: float


@dataclass
class PipelineResult:
    problem: PdeProblem
    config: PipelineConfig
    seed: int
    points: PointSet
    family_size: int
    pretrained: list  # fixed-basis ModelState per field
    active: list | None  # ActiveSet per field (None for wpinn variant)
    models: list  # final ModelState per field
    stage1_final: LossBreakdown
    stage1_restricted: LossBreakdown | None
    stage2_initial: LossBreakdown | None
    final: LossBreakdown
    lbfgs_report: LbfgsReport
    log: list  # LogRow sequence
    phase_seconds: dict


def _fallback_loss_grad(eval_fn, weighted_fn):
    """Exponent-mode evaluation that degrades to weighted on zero terms."""

    def inner(x):
        try:
            return eval_fn(x)
        except DegenerateLossError:
            return weighted_fn(x)

    return inner


def run_pipeline(problem: PdeProblem, cfg: PipelineConfig, seed: int) -> PipelineResult:
    """Pre-train, select, refine; returns models plus a full run record.

    With variant "wpinn" the fixed basis itself is polished by L-BFGS and
    no selection/transfer happens (the coefficients-only baseline).
    adam_iters = 0 skips straight from initialization to selection.
    """
    t_start = time.perf_counter()
    root = np.random.SeedSequence(seed)
    sample_seed, *init_seeds = [
        int(s.generate_state(1)[0]) for s in root.spawn(1 + problem.n_fields)
    ]
    pts = sample_points(problem, cfg.n_res, cfg.n_sup, cfg.test_resolution, sample_seed)
    family = build_family(cfg.axes)
    states = [init_fixed(family, init_seeds[f]) for f in range(problem.n_fields)]
    log: list[LogRow] = []
    phase_seconds: dict[str, float] = {}

    budget_entries = cfg.train.matrix_budget_mb * 1e6 / 8.0
    use_cache = (
        LinearLossCache.estimate_entries(problem, len(family), pts) <= budget_entries
    )
    cache = LinearLossCache(problem, family, pts) if use_cache else None

    def stage1_eval(vec, exponents):
        ms = with_combined_params(states, vec)
        if cache is not None:
            return cache.loss_and_gradient(ms, cfg.weights, exponents)
        return loss_and_gradient(problem, ms, pts, cfg.weights, exponents)

    def stage1_breakdown(ms, exponents=None):
        if cache is not None:
            return cache.loss_breakdown(ms, cfg.weights, exponents)
        return loss_breakdown(problem, ms, pts, cfg.weights, exponents)

    # Stage 1: Adam pre-training of the linear coefficients.
    t0 = time.perf_counter()
    vec = combined_params(states)
    adam = AdamState.init(vec.size, cfg.train.adam)
    for it in range(cfg.train.adam_iters):
        t_it = time.perf_counter()
        try:
            bk, grad = stage1_eval(vec, cfg.exponents)
        except DegenerateLossError:
            bk, grad = stage1_eval(vec, None)
        try:
            vec, adam = adam_step(adam, vec, grad)
        except DivergenceError as err:
            raise DivergenceError(
                f"Adam diverged during pre-training: {err}", iteration=it
            ) from err
        log.append(
            LogRow(
                iteration=it,
                phase="pretrain-adam",
                terms={"residual": bk.residual, **bk.supervised},
                total=bk.total,
                grad_norm=float(np.linalg.norm(grad)),
                step_size=cfg.train.adam.lr,
                wall_clock=time.perf_counter() - t_it,
            )
        )
    states = with_combined_params(states, vec)
    stage1_final = stage1_breakdown(states, cfg.exponents)
    phase_seconds["pretrain"] = time.perf_counter() - t0

    lbfgs_cfg = cfg.train.lbfgs

    def make_lbfgs_fun(eval_weighted, eval_requested):
        if cfg.exponents is None:
            return eval_weighted
        return _fallback_loss_grad(eval_requested, eval_weighted)

    def lbfgs_logger(phase):
        def callback(it, f, gnorm, step):
            log.append(
                LogRow(
                    iteration=it,
                    phase=phase,
                    terms={},
                    total=f,
                    grad_norm=gnorm,
                    step_size=step,
                    wall_clock=time.perf_counter() - t_start,
                )
            )

        return callback

    if cfg.variant == "wpinn":
        # Coefficients-only baseline: polish the fixed basis with L-BFGS.
        t0 = time.perf_counter()

        def fun_w(x):
            bk, g = stage1_eval(x, None)
            return bk.total, g

        def fun_e(x):
            bk, g = stage1_eval(x, cfg.exponents)
            return bk.total, g

        fun = make_lbfgs_fun(fun_w, fun_e)
        vec, report = lbfgs_minimize(
            fun, vec, lbfgs_cfg, callback=lbfgs_logger("wpinn-lbfgs")
        )
        states = with_combined_params(states, vec)
        final = stage1_breakdown(states, cfg.exponents)
        phase_seconds["lbfgs"] = time.perf_counter() - t0
        return PipelineResult(
            problem=problem,
            config=cfg,
            seed=seed,
            points=pts,
            family_size=len(family),
            pretrained=states,
            active=None,
            models=states,
            stage1_final=stage1_final,
            stage1_restricted=None,
            stage2_initial=None,
            final=final,
            lbfgs_report=report,
            log=log,
            phase_seconds=phase_seconds,
        )

    # Selection per field, then transfer.
    t0 = time.perf_counter()
    actives: list[ActiveSet] = []
    adaptive_states: list[ModelState] = []
    for f in range(problem.n_fields):
        scores = category_scores(
            problem,
            family,
            states[f].coeffs,
            pts,
            field_index=f,
            zero_rhs_tol=cfg.selection.zero_rhs_tol,
        )
        active = select_active(scores, states[f].coeffs, family, cfg.selection)
        actives.append(active)
        adaptive_states.append(transfer_model(family, states[f], active, cfg.selection))
    phase_seconds["selection"] = time.perf_counter() - t0

    # Hand-off bookkeeping: the restricted pre-trained model must match the
    # freshly initialized adaptive one.
    restricted = []
    for f in range(problem.n_fields):
        keep = np.zeros(len(family))
        keep[actives[f].indices] = states[f].coeffs[actives[f].indices]
        restricted.append(ModelState("fixed", keep, states[f].bias, family=family))
    stage1_restricted = loss_breakdown(problem, restricted, pts, cfg.weights, cfg.exponents)
    stage2_initial = loss_breakdown(problem, adaptive_states, pts, cfg.weights, cfg.exponents)

    # Stage 2: L-BFGS on all adaptive parameters.
    t0 = time.perf_counter()

    def fun_weighted(x):
        ms = with_combined_params(adaptive_states, x)
        bk, g = loss_and_gradient(problem, ms, pts, cfg.weights, None)
        return bk.total, g

    def fun_requested(x):
        ms = with_combined_params(adaptive_states, x)
        bk, g = loss_and_gradient(problem, ms, pts, cfg.weights, cfg.exponents)
        return bk.total, g

    fun = make_lbfgs_fun(fun_weighted, fun_requested)
    vec2, report = lbfgs_minimize(
        fun,
        combined_params(adaptive_states),
        lbfgs_cfg,
        callback=lbfgs_logger("adaptive-lbfgs"),
    )
    models = with_combined_params(adaptive_states, vec2)
    final = loss_breakdown(problem, models, pts, cfg.weights, cfg.exponents)
    phase_seconds["lbfgs"] = time.perf_counter() - t0

    return PipelineResult(
        problem=problem,
        config=cfg,
        seed=seed,
        points=pts,
        family_size=len(family),
        pretrained=states,
        active=actives,
        models=models,
        stage1_final=stage1_final,
        stage1_restricted=stage1_restricted,
        stage2_initial=stage2_initial,
        final=final,
        lbfgs_report=report,
        log=log,
        phase_seconds=phase_seconds,
    )
