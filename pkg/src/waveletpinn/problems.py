"""PDE problem declarations and the benchmark instances.

A problem is a box domain, one residual equation per output field block
(three coupled ones for the TEz Maxwell system, one otherwise), and a set
of supervised conditions on boundary/initial facets.  Operators are
recipes: linear combinations of per-field value / first / second
derivatives with coefficients that may depend on the evaluation point.
Recipes are data, so the loss can apply them to a whole model, the
selection stage can apply them to one scaled basis member at a time, and
tests can apply them to closed-form exact solutions.

Coordinate conventions: time, when present, is the last axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ValidationError
from .model import VALUE, grad_axis, hess_axis

Coeff = float | Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class OperatorTerm:
    """coeff(x) times one derivative of one output field."""

    field: int
    target: tuple[str, int]  # VALUE / grad_axis(n) / hess_axis(n)
    coeff: Coeff = 1.0

    def coeff_at(self, x: np.ndarray) -> np.ndarray:
        if callable(self.coeff):
            return np.asarray(self.coeff(x), dtype=float)
        return np.full(x.shape[0], float(self.coeff))


@dataclass(frozen=True)
class OperatorRecipe:
    """A linear differential operator as a list of terms."""

    terms: tuple[OperatorTerm, ...]

    def __post_init__(self):
        for t in self.terms:
            if t.target[0] == "hess" or t.target[0] in ("value", "grad"):
                continue
            raise ValidationError(f"unsupported derivative in recipe: {t.target}")

    @property
    def fields(self) -> tuple[int, ...]:
        return tuple(sorted({t.field for t in self.terms}))

    def max_order(self) -> int:
        orders = {"value": 0, "grad": 1, "hess": 2}
        return max(orders[t.target[0]] for t in self.terms)

    def apply_exact(self, exact: list["ExactSolution"], x: np.ndarray) -> np.ndarray:
        """Evaluate the operator on closed-form solutions at points x."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros(x.shape[0])
        for t in self.terms:
            sol = exact[t.field]
            kind, axis = t.target
            if kind == "value":
                vals = sol.value(x)
            else:
                vals = sol.derivative(x, axis, 1 if kind == "grad" else 2)
            out += t.coeff_at(x) * vals
        return out


def identity_recipe(field_index: int = 0) -> OperatorRecipe:
    return OperatorRecipe((OperatorTerm(field_index, VALUE, 1.0),))


@dataclass(frozen=True)
class Facet:
    """Axis-aligned facet of the domain box: coordinate `axis` pinned."""

    axis: int
    value: float


@dataclass(frozen=True)
class SupervisedCondition:
    """One boundary/initial condition: recipe == data on a facet."""

    name: str
    category: str  # "ic" or "bc"; selection thresholds key off this
    recipe: OperatorRecipe
    data: Callable[[np.ndarray], np.ndarray]
    facet: Facet

    def __post_init__(self):
        if self.category not in ("ic", "bc"):
            raise ValidationError(f"condition category must be ic/bc, got {self.category}")


@dataclass(frozen=True)
class ExactSolution:
    """Closed-form solution with the derivatives its operator needs."""

    value: Callable[[np.ndarray], np.ndarray]
    derivs: dict = field(default_factory=dict)  # (axis, order) -> callable

    def derivative(self, x: np.ndarray, axis: int, order: int) -> np.ndarray:
        key = (axis, order)
        if key not in self.derivs:
            raise ValidationError(f"exact solution has no derivative {key}")
        return self.derivs[key](np.atleast_2d(np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class PdeProblem:
    name: str
    domain: tuple[tuple[float, float], ...]
    n_fields: int
    equations: tuple[tuple[OperatorRecipe, Callable], ...]  # (operator, source)
    conditions: tuple[SupervisedCondition, ...]
    exact: tuple[ExactSolution, ...] | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        for lo, hi in self.domain:
            if not lo < hi:
                raise ValidationError(f"degenerate domain interval [{lo}, {hi}]")

    @property
    def dim(self) -> int:
        return len(self.domain)

    def exact_values(self, x: np.ndarray) -> np.ndarray:
        """(n_fields, n_points) exact solution values."""
        if self.exact is None:
            raise ValidationError(f"problem {self.name} has no closed-form solution")
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.stack([sol.value(x) for sol in self.exact])


# -- benchmark problems --------------------------------------------------------


def make_heat_conduction(eps: float) -> PdeProblem:
    """Transient heat conduction with an extreme localized-in-time source.

    u_t = u_xx + h on (-1,1) x (0,1), exact
    u(x,t) = (1 - x^2) exp(1 / ((2t-1)^2 + eps)).
    """
    if eps <= 0:
        raise ValidationError(f"eps must be positive, got {eps}")

    def bump(t):
        return np.exp(1.0 / ((2.0 * t - 1.0) ** 2 + eps))

    def u(x):
        return (1.0 - x[:, 0] ** 2) * bump(x[:, 1])

    def u_x(x):
        return -2.0 * x[:, 0] * bump(x[:, 1])

    def u_xx(x):
        return -2.0 * bump(x[:, 1])

    def u_t(x):
        s = 2.0 * x[:, 1] - 1.0
        d = s * s + eps
        return (1.0 - x[:, 0] ** 2) * bump(x[:, 1]) * (-4.0 * s / d**2)

    def source(x):
        s = 2.0 * x[:, 1] - 1.0
        d = s * s + eps
        return 2.0 * (1.0 + 2.0 * s * (x[:, 0] ** 2 - 1.0) / d**2) * bump(x[:, 1])

    exact = ExactSolution(u, {(0, 1): u_x, (0, 2): u_xx, (1, 1): u_t})
    operator = OperatorRecipe(
        (OperatorTerm(0, grad_axis(1), 1.0), OperatorTerm(0, hess_axis(0), -1.0))
    )
    ic_value = math.exp(1.0 / (1.0 + eps))
    conditions = (
        SupervisedCondition(
            "initial",
            "ic",
            identity_recipe(),
            lambda x: (1.0 - x[:, 0] ** 2) * ic_value,
            Facet(axis=1, value=0.0),
        ),
        SupervisedCondition(
            "left", "bc", identity_recipe(), lambda x: np.zeros(x.shape[0]), Facet(0, -1.0)
        ),
        SupervisedCondition(
            "right", "bc", identity_recipe(), lambda x: np.zeros(x.shape[0]), Facet(0, 1.0)
        ),
    )
    return PdeProblem(
        name="heat",
        domain=((-1.0, 1.0), (0.0, 1.0)),
        n_fields=1,
        equations=((operator, source),),
        conditions=conditions,
        exact=(exact,),
        params={"eps": eps},
    )


def make_poisson_localized(eps: float) -> PdeProblem:
    """2-D Poisson with a source localized in a thin vertical strip.

    u_xx + u_yy = f on (0,1)^2, exact
    u(x,y) = 1 + (y^2 + 1e3) exp(-(x-0.5)^2 / (2 eps^2)).
    """
    if eps <= 0:
        raise ValidationError(f"eps must be positive, got {eps}")
    big = 1.0e3

    def ridge(x):
        return np.exp(-((x - 0.5) ** 2) / (2.0 * eps**2))

    def u(x):
        return 1.0 + (x[:, 1] ** 2 + big) * ridge(x[:, 0])

    def u_x(x):
        return (x[:, 1] ** 2 + big) * ridge(x[:, 0]) * (-(x[:, 0] - 0.5) / eps**2)

    def u_xx(x):
        r = (x[:, 0] - 0.5) / eps**2
        return (x[:, 1] ** 2 + big) * ridge(x[:, 0]) * (r * r - 1.0 / eps**2)

    def u_y(x):
        return 2.0 * x[:, 1] * ridge(x[:, 0])

    def u_yy(x):
        return 2.0 * ridge(x[:, 0])

    def source(x):
        return u_xx(x) + u_yy(x)

    exact = ExactSolution(u, {(0, 1): u_x, (0, 2): u_xx, (1, 1): u_y, (1, 2): u_yy})
    operator = OperatorRecipe(
        (OperatorTerm(0, hess_axis(0), 1.0), OperatorTerm(0, hess_axis(1), 1.0))
    )
    edges = [
        ("left", Facet(0, 0.0)),
        ("right", Facet(0, 1.0)),
        ("bottom", Facet(1, 0.0)),
        ("top", Facet(1, 1.0)),
    ]
    conditions = tuple(
        SupervisedCondition(name, "bc", identity_recipe(), u, facet)
        for name, facet in edges
    )
    return PdeProblem(
        name="poisson",
        domain=((0.0, 1.0), (0.0, 1.0)),
        n_fields=1,
        equations=((operator, source),),
        conditions=conditions,
        exact=(exact,),
        params={"eps": eps},
    )


def make_flow(amplitude: float, t_s: float, boundary: str = "inflow") -> PdeProblem:
    """Linear advection with a rapidly oscillating source.

    u_t + u_x = A sin(2 pi t / T_s) on (-1,1) x (0,1), exact
    u(x,t) = sin(pi (x - t)) + (A T_s / 2 pi)(1 - cos(2 pi t / T_s)).

    boundary: "inflow" adds a Dirichlet condition at x = -1 from the exact
    solution (the transport problem is ill-posed without it); "none" keeps
    only the initial condition.
    """
    if amplitude <= 0 or t_s <= 0:
        raise ValidationError("amplitude and t_s must be positive")
    if boundary not in ("inflow", "none"):
        raise ValidationError(f"boundary must be inflow/none, got {boundary}")
    c_off = amplitude * t_s / (2.0 * math.pi)

    def u(x):
        return np.sin(np.pi * (x[:, 0] - x[:, 1])) + c_off * (
            1.0 - np.cos(2.0 * np.pi * x[:, 1] / t_s)
        )

    def u_x(x):
        return np.pi * np.cos(np.pi * (x[:, 0] - x[:, 1]))

    def u_t(x):
        return -np.pi * np.cos(np.pi * (x[:, 0] - x[:, 1])) + amplitude * np.sin(
            2.0 * np.pi * x[:, 1] / t_s
        )

    def source(x):
        return amplitude * np.sin(2.0 * np.pi * x[:, 1] / t_s)

    exact = ExactSolution(u, {(0, 1): u_x, (1, 1): u_t})
    operator = OperatorRecipe(
        (OperatorTerm(0, grad_axis(1), 1.0), OperatorTerm(0, grad_axis(0), 1.0))
    )
    conditions = [
        SupervisedCondition(
            "initial",
            "ic",
            identity_recipe(),
            lambda x: np.sin(np.pi * x[:, 0]),
            Facet(1, 0.0),
        )
    ]
    if boundary == "inflow":
        conditions.append(
            SupervisedCondition("inflow", "bc", identity_recipe(), u, Facet(0, -1.0))
        )
    return PdeProblem(
        name="flow",
        domain=((-1.0, 1.0), (0.0, 1.0)),
        n_fields=1,
        equations=((operator, source),),
        conditions=tuple(conditions),
        exact=(exact,),
        params={"amplitude": amplitude, "t_s": t_s, "boundary": boundary},
    )


def gaussian_pulse_source(
    tau: float, omega: float, sigma: float, center: tuple[float, float]
) -> Callable[[np.ndarray], np.ndarray]:
    """Point-source model: spatial Gaussian kernel times a temporal pulse."""
    x0, y0 = center
    peak = 1.0 / (2.0 * math.pi * sigma**2)

    def s(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r2 = (x[:, 0] - x0) ** 2 + (x[:, 1] - y0) ** 2
        return peak * np.exp(-r2 / (2.0 * sigma**2)) * np.exp(
            -(((x[:, 2] - tau) / omega) ** 2)
        )

    return s


def make_maxwell_tez(
    tau: float = 0.25,
    omega: float = 0.25,
    sigma: float = 0.01,
    center: tuple[float, float] = (0.5, 0.5),
    t_final: float = 0.5,
) -> PdeProblem:
    """TEz cavity with a pulsed point source, unit permittivity/permeability.

    Fields (E_x, E_y, H_z) on (0,1)^2 x (0, t_final]; the source enters the
    H_z equation; PEC walls pin tangential E; all fields start null.
    """
    if tau <= 0 or omega <= 0 or sigma <= 0:
        raise ValidationError("tau, omega, sigma must be positive")
    if not (0 < center[0] < 1 and 0 < center[1] < 1):
        raise ValidationError(f"source center {center} must lie inside (0,1)^2")
    if t_final <= 0:
        raise ValidationError("t_final must be positive")

    s = gaussian_pulse_source(tau, omega, sigma, center)
    zero = lambda x: np.zeros(np.atleast_2d(x).shape[0])

    ex, ey, hz = 0, 1, 2
    x_ax, y_ax, t_ax = 0, 1, 2
    equations = (
        # dEx/dt - dHz/dy = 0
        (
            OperatorRecipe(
                (OperatorTerm(ex, grad_axis(t_ax), 1.0), OperatorTerm(hz, grad_axis(y_ax), -1.0))
            ),
            zero,
        ),
        # dEy/dt + dHz/dx = 0
        (
            OperatorRecipe(
                (OperatorTerm(ey, grad_axis(t_ax), 1.0), OperatorTerm(hz, grad_axis(x_ax), 1.0))
            ),
            zero,
        ),
        # dHz/dt + dEy/dx - dEx/dy = -S
        (
            OperatorRecipe(
                (
                    OperatorTerm(hz, grad_axis(t_ax), 1.0),
                    OperatorTerm(ey, grad_axis(x_ax), 1.0),
                    OperatorTerm(ex, grad_axis(y_ax), -1.0),
                )
            ),
            lambda x: -s(x),
        ),
    )
    conditions = (
        SupervisedCondition("pec-left", "bc", identity_recipe(ey), zero, Facet(x_ax, 0.0)),
        SupervisedCondition("pec-right", "bc", identity_recipe(ey), zero, Facet(x_ax, 1.0)),
        SupervisedCondition("pec-bottom", "bc", identity_recipe(ex), zero, Facet(y_ax, 0.0)),
        SupervisedCondition("pec-top", "bc", identity_recipe(ex), zero, Facet(y_ax, 1.0)),
        SupervisedCondition("initial-ex", "ic", identity_recipe(ex), zero, Facet(t_ax, 0.0)),
        SupervisedCondition("initial-ey", "ic", identity_recipe(ey), zero, Facet(t_ax, 0.0)),
        SupervisedCondition("initial-hz", "ic", identity_recipe(hz), zero, Facet(t_ax, 0.0)),
    )
    return PdeProblem(
        name="maxwell",
        domain=((0.0, 1.0), (0.0, 1.0), (0.0, t_final)),
        n_fields=3,
        equations=equations,
        conditions=conditions,
        exact=None,
        params={
            "tau": tau,
            "omega": omega,
            "sigma": sigma,
            "center": tuple(center),
            "t_final": t_final,
        },
    )


PROBLEM_BUILDERS = {
    "heat": make_heat_conduction,
    "poisson": make_poisson_localized,
    "flow": make_flow,
    "maxwell": make_maxwell_tez,
}


# -- point sampling ------------------------------------------------------------


@dataclass(frozen=True)
class PointSet:
    """Sampled training/test points for one problem and seed."""

    residual: np.ndarray  # (n_res, d), strictly interior
    supervised: dict  # condition name -> (n, d) facet points
    test: np.ndarray  # (n_test, d) uniform lattice incl. endpoints
    test_shape: tuple[int, ...]
    seed: int

    @property
    def n_sup_total(self) -> int:
        return sum(v.shape[0] for v in self.supervised.values())

    def to_csv(self, path):
        d = self.residual.shape[1]
        with open(path, "w") as fh:
            fh.write("tag," + ",".join(f"x{n}" for n in range(d)) + "\n")
            for tag, arr in [("residual", self.residual), ("test", self.test)] + [
                (name, pts) for name, pts in self.supervised.items()
            ]:
                for row in arr:
                    fh.write(tag + "," + ",".join(repr(float(v)) for v in row) + "\n")


def _uniform_open(rng, lo, hi, size):
    """Uniform draws strictly inside (lo, hi)."""
    out = lo + (hi - lo) * rng.random(size)
    while True:
        on_edge = (out <= lo) | (out >= hi)
        if not on_edge.any():
            return out
        out[on_edge] = lo + (hi - lo) * rng.random(int(on_edge.sum()))


def sample_points(
    problem: PdeProblem,
    n_res: int,
    n_sup,
    test_resolution,
    seed: int,
) -> PointSet:
    """Draw the training point set for a problem, deterministically per seed.

    n_sup is either one count applied to every supervised condition or a
    mapping from condition name to count.  The test grid has
    test_resolution points per axis (int or per-axis tuple), endpoints
    included.
    """
    if n_res <= 0:
        raise ValidationError("n_res must be positive")
    d = problem.dim
    rng = np.random.default_rng(seed)

    residual = np.empty((n_res, d))
    for n, (lo, hi) in enumerate(problem.domain):
        residual[:, n] = _uniform_open(rng, lo, hi, n_res)

    supervised = {}
    for cond in problem.conditions:
        count = n_sup[cond.name] if isinstance(n_sup, dict) else int(n_sup)
        if count <= 0:
            raise ValidationError(f"condition {cond.name} needs a positive count")
        pts = np.empty((count, d))
        for n, (lo, hi) in enumerate(problem.domain):
            if n == cond.facet.axis:
                pts[:, n] = cond.facet.value
            else:
                pts[:, n] = rng.uniform(lo, hi, count)
        supervised[cond.name] = pts

    res = (
        tuple(test_resolution)
        if np.iterable(test_resolution)
        else (int(test_resolution),) * d
    )
    grids = [np.linspace(lo, hi, r) for (lo, hi), r in zip(problem.domain, res)]
    mesh = np.meshgrid(*grids, indexing="ij")
    test = np.stack([m.ravel() for m in mesh], axis=1)
    return PointSet(
        residual=residual,
        supervised=supervised,
        test=test,
        test_shape=res,
        seed=int(seed),
    )
