"""Trainable wavelet models and their closed-form derivatives.

Two kinds share one interface:

* fixed-basis: u(x) = sum_i c_i Psi_i(x) + bias over a FamilySet; only
  (c, bias) train.
* adaptive: u(x) = sum_i c_i prod_n psi(w_in x_n + b_in) + bias; every
  unit's scale w, shift b, its coefficient c, and the bias train.  Note
  the adaptive unit carries no 2^(j/2) normalization.

Everything the training loss needs -- model values, first/second spatial
derivatives, and exact gradients of each of those quantities with respect
to every parameter -- is closed-form.  The flat parameter vector layout is
fixed: [w row-major, b row-major, c, bias] for adaptive, [c, bias] for
fixed-basis.

Batched evaluation goes through EvalStacks, which shares the psi
derivative stacks between the residual and gradient passes of one loss
evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .family import AxisSpec, FamilySet, build_family
from .wavelet import psi_stack

VALUE = ("value", -1)


def grad_axis(n: int) -> tuple[str, int]:
    return ("grad", int(n))


def hess_axis(n: int) -> tuple[str, int]:
    return ("hess", int(n))


def _check_target(target, d: int):
    kind, axis = target
    if kind == "value":
        return 0
    if kind not in ("grad", "hess"):
        raise ValidationError(f"unknown gradient target {target!r}")
    if not 0 <= axis < d:
        raise ValidationError(f"target axis {axis} out of range for d={d}")
    return 1 if kind == "grad" else 2


@dataclass
class TermDerivatives:
    """Value and spatial derivatives of one unit/basis term at one point."""

    value: float
    grad_x: np.ndarray
    hess_diag: np.ndarray
    mixed: np.ndarray | None = None  # (d, d) when requested


@dataclass
class ModelState:
    """Parameters of a wavelet expansion model.

    For kind "fixed", `family` is set and (w, b) are None.  For kind
    "adaptive", w and b are (n_units, d) arrays.  coeffs is (n_units,)
    and bias a scalar in both cases.
    """

    kind: str
    coeffs: np.ndarray
    bias: float
    family: FamilySet | None = None
    w: np.ndarray | None = None
    b: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("fixed", "adaptive"):
            raise ValidationError(f"unknown model kind {self.kind!r}")
        self.coeffs = np.asarray(self.coeffs, dtype=float).reshape(-1)
        self.bias = float(self.bias)
        if self.kind == "fixed":
            if self.family is None:
                raise ValidationError("fixed-basis model needs a FamilySet")
            if len(self.coeffs) != len(self.family):
                raise ValidationError(
                    f"got {len(self.coeffs)} coefficients for a family of "
                    f"{len(self.family)}"
                )
        else:
            self.w = np.asarray(self.w, dtype=float)
            self.b = np.asarray(self.b, dtype=float)
            if self.w.shape != self.b.shape or self.w.ndim != 2:
                raise ValidationError("w and b must be (n_units, d) arrays")
            if len(self.coeffs) != self.w.shape[0]:
                raise ValidationError("one coefficient per unit is required")
        if not (
            np.isfinite(self.coeffs).all()
            and np.isfinite(self.bias)
            and (self.kind == "fixed" or (np.isfinite(self.w).all() and np.isfinite(self.b).all()))
        ):
            raise ValidationError("model parameters must be finite")

    @property
    def dim(self) -> int:
        return self.family.dim if self.kind == "fixed" else self.w.shape[1]

    @property
    def n_units(self) -> int:
        return len(self.coeffs)

    @property
    def n_params(self) -> int:
        if self.kind == "fixed":
            return self.n_units + 1
        return self.n_units * (2 * self.dim + 1) + 1

    # -- flat parameter vector ---------------------------------------------

    def param_vector(self) -> np.ndarray:
        if self.kind == "fixed":
            return np.concatenate([self.coeffs, [self.bias]])
        return np.concatenate(
            [self.w.ravel(), self.b.ravel(), self.coeffs, [self.bias]]
        )

    def with_params(self, vec: np.ndarray) -> "ModelState":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.n_params,):
            raise ValidationError(
                f"expected {self.n_params} parameters, got {vec.shape}"
            )
        if self.kind == "fixed":
            return ModelState(
                "fixed", vec[:-1].copy(), float(vec[-1]), family=self.family
            )
        n, d = self.n_units, self.dim
        return ModelState(
            "adaptive",
            vec[2 * n * d : 2 * n * d + n].copy(),
            float(vec[-1]),
            w=vec[: n * d].reshape(n, d).copy(),
            b=vec[n * d : 2 * n * d].reshape(n, d).copy(),
        )

    # -- evaluation ----------------------------------------------------------

    def stacks(self, x: np.ndarray, max_order: int = 2) -> "EvalStacks":
        return EvalStacks.build(self, x, max_order)

    def forward(self, x):
        """Model value at one point (d,) or a batch (n, d)."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        st = self.stacks(np.atleast_2d(x), max_order=0)
        out = st.unit_matrix(VALUE) @ self.coeffs + self.bias
        return float(out[0]) if single else out

    def spatial_derivative(self, x, axis: int, order: int):
        """d^order u / dx_axis^order at one point or a batch."""
        if order not in (1, 2):
            raise ValidationError(f"spatial order must be 1 or 2, got {order}")
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        st = self.stacks(np.atleast_2d(x), max_order=order)
        target = grad_axis(axis) if order == 1 else hess_axis(axis)
        out = st.unit_matrix(target) @ self.coeffs
        return float(out[0]) if single else out

    def unit_derivatives(self, i: int, x, mixed: bool = False) -> TermDerivatives:
        """Value, gradient, and diagonal Hessian of unit/basis term i."""
        if not 0 <= i < self.n_units:
            raise ValidationError(f"unit index {i} out of range")
        x = np.asarray(x, dtype=float)
        d = self.dim
        st = self.stacks(x[None, :], max_order=2)
        value = float(st.unit_matrix(VALUE)[0, i])
        g = np.array([float(st.unit_matrix(grad_axis(n))[0, i]) for n in range(d)])
        h = np.array([float(st.unit_matrix(hess_axis(n))[0, i]) for n in range(d)])
        mix = None
        if mixed:
            mix = np.empty((d, d))
            for a in range(d):
                mix[a, a] = h[a]
                for bb in range(a + 1, d):
                    mix[a, bb] = mix[bb, a] = float(st.unit_mixed(a, bb)[0, i])
        return TermDerivatives(value=value, grad_x=g, hess_diag=h, mixed=mix)

    def param_gradient(self, x, target) -> np.ndarray:
        """Exact gradient of a pointwise quantity w.r.t. every parameter.

        target is VALUE, grad_axis(n) or hess_axis(n); the quantity is the
        model value or its n-th first/second spatial derivative at x.
        """
        x = np.asarray(x, dtype=float)
        st = self.stacks(x[None, :], max_order=_check_target(target, self.dim) + 1)
        return st.weighted_param_sum(np.ones(1), target)

    def param_jacobian(self, x: np.ndarray, target) -> np.ndarray:
        """(n_points, n_params) Jacobian of the target quantity."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        st = self.stacks(x, max_order=_check_target(target, self.dim) + 1)
        return st.param_jacobian(target)


class EvalStacks:
    """Shared per-axis psi stacks for one (model, point batch) pair.

    psi[q][:, :, n] is the raw q-th wavelet derivative of unit i's axis-n
    argument at each point.  For adaptive models the argument is
    w_in x_n + b_in and chain factors w^q are applied lazily; for
    fixed-basis models the 2^(j q + j/2) prefactors are already folded in
    (only coefficients train there, so nothing needs the raw values back).
    """

    def __init__(self, state: ModelState, x: np.ndarray, psi: np.ndarray, max_order: int):
        self.state = state
        self.x = x
        self.psi = psi  # (max_order+1, n_points, n_units, d)
        self.max_order = max_order
        self._loo = None
        self._units: dict = {}

    @classmethod
    def build(cls, state: ModelState, x: np.ndarray, max_order: int) -> "EvalStacks":
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != state.dim:
            raise ValidationError(
                f"points have dimension {x.shape[1]}, model expects {state.dim}"
            )
        need = min(max_order, 3)
        if state.kind == "adaptive":
            z = x[:, None, :] * state.w[None, :, :] + state.b[None, :, :]
            psi = psi_stack(z, need)
        else:
            fac = state.family.factor_matrices(x, need)
            psi = np.stack(
                [np.stack([f[q] for f in fac], axis=-1) for q in range(need + 1)]
            )
        return cls(state, x, psi, need)

    def _chain(self, q: int) -> np.ndarray:
        """q-th x-derivative factor stacks, chain rule applied, (N, units, d)."""
        if q == 0 or self.state.kind == "fixed":
            return self.psi[q]
        return self.psi[q] * self.state.w[None, :, :] ** q

    @property
    def loo(self) -> np.ndarray:
        """Leave-one-out products prod_{m != n} psi0[:, :, m], (N, units, d)."""
        if self._loo is None:
            p0 = self.psi[0]
            d = p0.shape[2]
            if d == 1:
                self._loo = np.ones_like(p0)
            else:
                pre = np.ones_like(p0)
                suf = np.ones_like(p0)
                np.cumprod(p0[:, :, :-1], axis=2, out=pre[:, :, 1:])
                np.cumprod(p0[:, :, :0:-1], axis=2, out=suf[:, :, -2::-1])
                self._loo = pre * suf
        return self._loo

    def _pair_loo(self, a: int, n: int) -> np.ndarray:
        """prod over m not in {a, n} of psi0[:, :, m] (a != n)."""
        d = self.psi.shape[3]
        rest = [m for m in range(d) if m not in (a, n)]
        if not rest:
            return np.ones(self.psi.shape[1:3])
        return np.prod(self.psi[0][:, :, rest], axis=2)

    def unit_matrix(self, target) -> np.ndarray:
        """(n_points, n_units) of the target quantity per unit.

        This is also the coefficient block of the parameter gradient.
        Memoized: the residual and gradient passes share one build.
        """
        if target in self._units:
            return self._units[target]
        kind, axis = target
        if kind == "value":
            out = self.psi[0][:, :, 0] * self.loo[:, :, 0]
        else:
            order = _check_target(target, self.psi.shape[3])
            out = self._chain(order)[:, :, axis] * self.loo[:, :, axis]
        self._units[target] = out
        return out

    def unit_mixed(self, a: int, bb: int) -> np.ndarray:
        """(n_points, n_units) mixed second partial of each unit."""
        c1 = self._chain(1)
        return c1[:, :, a] * c1[:, :, bb] * self._pair_loo(a, bb)

    def weighted_param_sum(self, u: np.ndarray, target) -> np.ndarray:
        """sum_p u[p] * d(target quantity at x_p)/d(params), (n_params,).

        The point-indexed Jacobian is never materialized; contributions
        accumulate straight into the parameter-length buffer.
        """
        state = self.state
        u = np.asarray(u, dtype=float)
        gc = u @ self.unit_matrix(target)
        gbias = float(u.sum()) if target[0] == "value" else 0.0
        if state.kind == "fixed":
            return np.concatenate([gc, [gbias]])
        gw, gb = self._wb_gradient(u, target)
        return np.concatenate([gw.ravel(), gb.ravel(), gc, [gbias]])

    def _wb_cores(self, target):
        """Per-axis (w_core, b_core) arrays of shape (n_points, n_units).

        The parameter derivatives of the target quantity factor as
        dQ/dw_in = c_i * w_core_n[p, i] and dQ/db_in = c_i * b_core_n[p, i];
        w_core is b_core times the extra x_n chain factor.
        """
        x, w = self.x, self.state.w
        d = w.shape[1]
        kind, axis = target
        psi1 = self.psi[1]
        cores = [None] * d
        if kind == "value":
            for n in range(d):
                b_core = psi1[:, :, n] * self.loo[:, :, n]
                cores[n] = (x[:, n][:, None] * b_core, b_core)
            return cores

        a = axis
        psi2 = self.psi[2]
        la = self.loo[:, :, a]
        wa = w[None, :, a]
        xa = x[:, a][:, None]
        if kind == "grad":
            # per-unit quantity: w_a psi'(z_a) loo_a
            w_core_a = (psi1[:, :, a] + wa * xa * psi2[:, :, a]) * la
            b_core_a = wa * psi2[:, :, a] * la
            lead = wa * psi1[:, :, a]
        else:
            # per-unit quantity: w_a^2 psi''(z_a) loo_a
            psi3 = self.psi[3]
            w_core_a = (2.0 * wa * psi2[:, :, a] + wa**2 * xa * psi3[:, :, a]) * la
            b_core_a = wa**2 * psi3[:, :, a] * la
            lead = wa**2 * psi2[:, :, a]
        cores[a] = (w_core_a, b_core_a)
        for n in range(d):
            if n == a:
                continue
            cross = lead * psi1[:, :, n] * self._pair_loo(a, n)
            cores[n] = (x[:, n][:, None] * cross, cross)
        return cores

    def _wb_gradient(self, u, target):
        """(w, b) blocks of the weighted parameter sum, adaptive models."""
        n_units, d = self.state.w.shape
        c = self.state.coeffs
        gw = np.empty((n_units, d))
        gb = np.empty((n_units, d))
        for n, (w_core, b_core) in enumerate(self._wb_cores(target)):
            gw[:, n] = (u @ w_core) * c
            gb[:, n] = (u @ b_core) * c
        return gw, gb

    def param_jacobian(self, target) -> np.ndarray:
        """Full (n_points, n_params) Jacobian; only for diagnostics/kernels."""
        state = self.state
        n_pts = self.x.shape[0]
        unit = self.unit_matrix(target)
        bias_col = np.ones(n_pts) if target[0] == "value" else np.zeros(n_pts)
        if state.kind == "fixed":
            return np.column_stack([unit, bias_col])
        n_units, d = state.w.shape
        jw = np.empty((n_pts, n_units, d))
        jb = np.empty((n_pts, n_units, d))
        for n, (w_core, b_core) in enumerate(self._wb_cores(target)):
            jw[:, :, n] = w_core * state.coeffs[None, :]
            jb[:, :, n] = b_core * state.coeffs[None, :]
        return np.column_stack(
            [jw.reshape(n_pts, -1), jb.reshape(n_pts, -1), unit, bias_col]
        )


# -- multi-field parameter plumbing --------------------------------------------


def as_states(states) -> list[ModelState]:
    """Normalize a single model or a per-field sequence to a list."""
    if isinstance(states, ModelState):
        return [states]
    return list(states)


def combined_params(states) -> np.ndarray:
    return np.concatenate([s.param_vector() for s in as_states(states)])


def param_offsets(states) -> list[int]:
    """Start offset of each field's block in the combined vector."""
    offs = [0]
    for s in as_states(states):
        offs.append(offs[-1] + s.n_params)
    return offs


def with_combined_params(states, vec: np.ndarray) -> list[ModelState]:
    states = as_states(states)
    offs = param_offsets(states)
    if vec.shape != (offs[-1],):
        raise ValidationError(f"expected {offs[-1]} parameters, got {vec.shape}")
    return [s.with_params(vec[offs[i] : offs[i + 1]]) for i, s in enumerate(states)]


# -- construction -------------------------------------------------------------


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, size) -> np.ndarray:
    """Uniform Xavier/Glorot draw; variance 2/(fan_in + fan_out)."""
    if fan_in <= 0 or fan_out <= 0:
        raise ValidationError("fan_in and fan_out must be positive")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=size)


def init_fixed(family: FamilySet, seed: int) -> ModelState:
    """Fixed-basis model with Xavier coefficients and zero bias."""
    rng = np.random.default_rng(seed)
    c = xavier_uniform(rng, len(family), 1, len(family))
    return ModelState("fixed", c, 0.0, family=family)


def init_adaptive(n_units: int, d: int, seed: int) -> ModelState:
    """Randomly initialized adaptive model (no transfer available)."""
    if n_units <= 0 or d <= 0:
        raise ValidationError("n_units and d must be positive")
    rng = np.random.default_rng(seed)
    w = xavier_uniform(rng, d, n_units, (n_units, d))
    b = xavier_uniform(rng, d, n_units, (n_units, d))
    c = xavier_uniform(rng, n_units, 1, n_units)
    return ModelState("adaptive", c, 0.0, w=w, b=b)


def adaptive_from_family(
    family: FamilySet,
    coeffs: np.ndarray,
    bias: float,
    selected: np.ndarray,
    rescale_coefficients: bool = True,
) -> ModelState:
    """Adaptive model seeded from selected members of a fixed basis.

    Units get w = 2^j and b = -k.  The adaptive unit drops the fixed
    basis's 2^(j/2) normalization, so with rescaling on the transferred
    coefficients pick up 2^(sum_n j_n / 2) and the new model reproduces
    the restricted fixed-basis function exactly.
    """
    selected = np.asarray(selected, dtype=int)
    if selected.size == 0:
        raise ValidationError("cannot build an adaptive model from no units")
    j = family.j_table[selected].astype(float)
    k = family.k_table[selected].astype(float)
    c = np.asarray(coeffs, dtype=float)[selected].copy()
    if rescale_coefficients:
        c *= 2.0 ** (0.5 * j.sum(axis=1))
    return ModelState("adaptive", c, float(bias), w=2.0**j, b=-k)


# -- serialization -------------------------------------------------------------

_FORMAT_TAG = "waveletpinn-model v1"


def save_model(state: ModelState, path):
    """Versioned text checkpoint, one parameter per line."""
    lines = [_FORMAT_TAG, f"kind {state.kind}", f"d {state.dim}", f"units {state.n_units}"]
    if state.kind == "fixed":
        for ax in state.family.axes:
            levels = ",".join(str(j) for j in ax.levels)
            lines.append(f"axis {ax.lower!r} {ax.upper!r} {levels} {ax.gamma!r}")
        lines.append("layout c,bias")
    else:
        lines.append("layout w-rowmajor,b-rowmajor,c,bias")
    lines.append(f"params {state.n_params}")
    lines.extend(repr(float(v)) for v in state.param_vector())
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> ModelState:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != _FORMAT_TAG:
        raise ValidationError(f"not a {_FORMAT_TAG} checkpoint: {path}")
    kind = lines[1].split()[1]
    d = int(lines[2].split()[1])
    n_units = int(lines[3].split()[1])
    pos = 4
    axes = []
    while lines[pos].startswith("axis "):
        _, lo, hi, levels, gamma = lines[pos].split()
        axes.append(AxisSpec(float(lo), float(hi), tuple(int(v) for v in levels.split(",")), float(gamma)))
        pos += 1
    pos += 1  # layout line
    n_params = int(lines[pos].split()[1])
    pos += 1
    vec = np.array([float(v) for v in lines[pos : pos + n_params]])
    if vec.size != n_params:
        raise ValidationError("truncated checkpoint")
    if kind == "fixed":
        family = build_family(axes)
        template = ModelState("fixed", np.zeros(len(family)), 0.0, family=family)
    else:
        template = ModelState(
            "adaptive", np.zeros(n_units), 0.0, w=np.zeros((n_units, d)), b=np.zeros((n_units, d))
        )
    return template.with_params(vec)
