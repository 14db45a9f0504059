"""Empirical tangent-kernel diagnostics.

The tangent kernel of a model at a set of points is the Gram matrix of
parameter gradients, K = J J^T.  For the fixed-basis (linear) model the
gradient w.r.t. each coefficient is the basis value itself, so K is
parameter-independent and exactly constant along any training trajectory.
For adaptive models the kernel splits into the coefficient part K_c, the
scale/shift part K_theta, and a rank-one all-ones bias part; the split is
exact because the parameter blocks partition the Jacobian columns.

Spectra come from an in-house cyclic Jacobi eigensolver (dense symmetric,
desk-scale matrices); error-decay predictions apply Q exp(-Lambda t) Q^T
to an initial error vector.  The infinite-family Gaussian-process limit of
randomly initialized scaled models is validated by Monte Carlo: per-point
moments of the sampled field against an independently estimated limit
covariance sigma_c^2 E[W W'].
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError
from .loss import recipe_jacobian
from .model import VALUE, ModelState, as_states, param_offsets
from .problems import PdeProblem, PointSet
from .wavelet import psi_stack

DEFAULT_MAX_JACOBIAN_ENTRIES = 50_000_000


def _digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()[:16]


@dataclass
class KernelMatrix:
    """Dense symmetric empirical kernel with optional pp/pb/bb block tags."""

    matrix: np.ndarray
    n_residual_rows: int = 0  # 0 for output-only kernels
    provenance: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def block(self, name: str) -> np.ndarray:
        r = self.n_residual_rows
        if name == "pp":
            return self.matrix[:r, :r]
        if name == "pb":
            return self.matrix[:r, r:]
        if name == "bp":
            return self.matrix[r:, :r]
        if name == "bb":
            return self.matrix[r:, r:]
        raise ValidationError(f"unknown kernel block {name!r}")

    def validate(self, sym_tol: float = 1e-12, psd_tol: float = 1e-10):
        """Assert symmetry and positive semidefiniteness within tolerance."""
        k = self.matrix
        scale = float(np.abs(k).max()) or 1.0
        asym = float(np.abs(k - k.T).max())
        if asym > sym_tol * scale:
            raise NumericalError(f"kernel asymmetry {asym:.3e} exceeds tolerance")
        eigs = np.linalg.eigvalsh(0.5 * (k + k.T))
        if eigs.min() < -psd_tol * max(eigs.max(), 0.0):
            raise NumericalError(f"kernel has negative eigenvalue {eigs.min():.3e}")
        return self


def assemble_kernel(
    states,
    target: str = "output",
    x: np.ndarray | None = None,
    problem: PdeProblem | None = None,
    pts: PointSet | None = None,
    scaled: bool = False,
    max_entries: int = DEFAULT_MAX_JACOBIAN_ENTRIES,
) -> KernelMatrix:
    """Empirical kernel from analytic parameter Jacobians.

    target "output": K(x, x') = <grad u(x), grad u(x')> at points x.
    target "operator": rows stack the PDE operator's Jacobian at the
    residual points and each supervised operator's at its points, giving
    the pp/pb/bb block structure.

    scaled=True divides every non-bias Jacobian column by sqrt(n_units),
    matching the normalization under which the infinite-family limit is
    stated.  The guard on max_entries rejects Jacobians too large to hold.
    """
    states = as_states(states)
    n_params = param_offsets(states)[-1]

    if target == "output":
        if x is None:
            raise ValidationError("output kernel needs points x")
        if len(states) != 1:
            raise ValidationError("output kernel is defined for a scalar model")
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[0] * n_params > max_entries:
            raise ValidationError(
                f"Jacobian would hold {x.shape[0] * n_params} entries, "
                f"over the budget of {max_entries}"
            )
        st = states[0].stacks(x, max_order=1)
        rows = st.param_jacobian(VALUE)
        n_res_rows = 0
        prov_pts = x
    elif target == "operator":
        if problem is None or pts is None:
            raise ValidationError("operator kernel needs a problem and a PointSet")
        n_rows = len(problem.equations) * pts.residual.shape[0] + sum(
            p.shape[0] for p in pts.supervised.values()
        )
        if n_rows * n_params > max_entries:
            raise ValidationError(
                f"Jacobian would hold {n_rows * n_params} entries, "
                f"over the budget of {max_entries}"
            )
        blocks = []
        for recipe, _ in problem.equations:
            blocks.append(recipe_jacobian(states, recipe, pts.residual))
        n_res_rows = len(problem.equations) * pts.residual.shape[0]
        for cond in problem.conditions:
            blocks.append(recipe_jacobian(states, cond.recipe, pts.supervised[cond.name]))
        rows = np.vstack(blocks)
        prov_pts = pts.residual
    else:
        raise ValidationError(f"unknown kernel target {target!r}")

    if scaled:
        rows = rows.copy()
        col = 0
        for s in states:
            width = s.n_params
            rows[:, col : col + width - 1] /= np.sqrt(s.n_units)
            col += width
    k = rows @ rows.T
    return KernelMatrix(
        matrix=k,
        n_residual_rows=n_res_rows,
        provenance={
            "model": _digest(*[s.param_vector() for s in states]),
            "points": _digest(prov_pts),
            "target": target,
            "scaled": scaled,
        },
    )


def decompose_kernel(state: ModelState, x: np.ndarray, scaled: bool = False):
    """Split an adaptive model's output kernel into (K_c, K_theta, K_bias).

    The three add up to the full kernel exactly (the parameter blocks
    partition the Jacobian columns); K_bias is the all-ones rank-one block
    from the trainable offset, reported separately because the theory's
    model has no bias.
    """
    if state.kind != "adaptive":
        raise ValidationError("kernel decomposition applies to adaptive models")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    st = state.stacks(x, max_order=1)
    rows = st.param_jacobian(VALUE)
    if scaled:
        rows = rows.copy()
        rows[:, :-1] /= np.sqrt(state.n_units)
    n, d = state.n_units, state.dim
    j_theta = rows[:, : 2 * n * d]
    j_c = rows[:, 2 * n * d : 2 * n * d + n]
    j_bias = rows[:, -1:]
    return j_c @ j_c.T, j_theta @ j_theta.T, j_bias @ j_bias.T


# -- dense symmetric eigensolver ---------------------------------------------------


def jacobi_eigh(a: np.ndarray, tol: float = 1e-14, max_sweeps: int = 100):
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Returns (eigenvalues ascending, Q with eigenvector columns) such that
    a = Q diag(w) Q^T.  Designed for desk-scale kernels (n <= ~512).
    """
    a = np.array(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError("matrix must be square")
    scale = float(np.abs(a).max())
    if scale > 0 and float(np.abs(a - a.T).max()) > 1e-12 * scale:
        raise ValidationError("matrix must be symmetric")
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    q = np.eye(n)
    if n == 1:
        return a[0, 0:1].copy(), q
    fro = float(np.linalg.norm(a))
    if fro == 0.0:
        return np.zeros(n), q

    for sweep in range(max_sweeps):
        off = float(np.sqrt(np.sum(np.tril(a, -1) ** 2) * 2.0))
        if off <= tol * fro:
            break
        for p in range(n - 1):
            for r in range(p + 1, n):
                apr = a[p, r]
                if abs(apr) <= 1e-300:
                    continue
                tau = (a[r, r] - a[p, p]) / (2.0 * apr)
                t = np.sign(tau) / (abs(tau) + np.sqrt(1.0 + tau * tau)) if tau != 0 else 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                # A <- J^T A J with the (p, r) rotation
                col_p = a[:, p].copy()
                col_r = a[:, r].copy()
                a[:, p] = c * col_p - s * col_r
                a[:, r] = s * col_p + c * col_r
                row_p = a[p, :].copy()
                row_r = a[r, :].copy()
                a[p, :] = c * row_p - s * row_r
                a[r, :] = s * row_p + c * row_r
                a[p, r] = 0.0
                a[r, p] = 0.0
                qp = q[:, p].copy()
                qr = q[:, r].copy()
                q[:, p] = c * qp - s * qr
                q[:, r] = s * qp + c * qr
    else:
        raise NumericalError(
            f"Jacobi eigensolver did not converge in {max_sweeps} sweeps "
            f"(off-diagonal norm {off:.3e})"
        )
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], q[:, order]


def spectral_decay(kernel: KernelMatrix | np.ndarray, e0: np.ndarray, times) -> np.ndarray:
    """Predicted error trajectories Q exp(-Lambda t) Q^T e0 for each t.

    Larger kernel eigenvalues decay their error components faster; the
    output has one row per requested time.
    """
    k = kernel.matrix if isinstance(kernel, KernelMatrix) else np.asarray(kernel, dtype=float)
    e0 = np.asarray(e0, dtype=float)
    if e0.shape != (k.shape[0],):
        raise ValidationError("initial error length must match the kernel size")
    w, q = jacobi_eigh(k)
    if w.min() < -1e-10 * max(w.max(), 0.0):
        raise ValidationError("kernel must be positive semidefinite")
    coeffs = q.T @ e0
    times = np.atleast_1d(np.asarray(times, dtype=float))
    return np.stack([q @ (np.exp(-w * t) * coeffs) for t in times])


def constancy_check(states_sequence, x: np.ndarray) -> float:
    """Max output-kernel drift across a sequence of model checkpoints.

    Exactly zero (to roundoff) for fixed-basis models, whose kernel does
    not depend on the trainable parameters; generically nonzero for
    adaptive models.
    """
    states_sequence = list(states_sequence)
    if len(states_sequence) < 2:
        raise ValidationError("need at least two checkpoints")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    kernels = [assemble_kernel(s, target="output", x=x).matrix for s in states_sequence]
    drift = 0.0
    for a, b in zip(kernels, kernels[1:]):
        drift = max(drift, float(np.abs(a - b).max()))
    return drift


# -- Gaussian-process limit Monte Carlo --------------------------------------------


@dataclass
class GpUnitStats:
    """Monte Carlo statistics of the scaled random field at one width."""

    n_units: int
    mean: np.ndarray  # per probe point
    std_error: np.ndarray  # of the mean
    covariance: np.ndarray  # empirical, (m, m)
    skewness: np.ndarray  # per probe point
    excess_kurtosis: np.ndarray  # per probe point
    cov_discrepancy: float  # max-abs vs the independent kernel estimate


@dataclass
class GpCheckReport:
    probe: np.ndarray
    trials: int
    sigma_c: float
    sigma_theta: float
    kernel_estimate: np.ndarray  # sigma_c^2 E[W W'], independent samples
    kernel_samples: int
    per_width: list  # GpUnitStats, in requested width order


def _unit_values(w, b, probe):
    """prod_n psi(w_n x_n + b_n) at each probe point; (..., m)."""
    vals = []
    for row in probe:
        z = w * row[None, ...] if w.ndim == 2 else w * row[None, None, :]
        z = z + b
        vals.append(psi_stack(z, 0)[0].prod(axis=-1))
    return np.stack(vals, axis=-1)


def gp_limit_check(
    d: int,
    sigma_c: float,
    sigma_theta: float,
    n_units_list,
    probe: np.ndarray,
    trials: int,
    seed: int,
    kernel_samples: int = 200_000,
) -> GpCheckReport:
    """Sample the zero-bias scaled field u = sum c_i W_i / sqrt(n) at probe
    points over i.i.d. normal initializations and report per-point moments,
    the empirical covariance, and its discrepancy against an independent
    Monte Carlo estimate of the limit kernel.
    """
    if trials < 1000:
        raise ValidationError("at least 1000 trials are required")
    probe = np.atleast_2d(np.asarray(probe, dtype=float))
    if probe.shape[1] != d:
        raise ValidationError(f"probe points must have dimension {d}")
    m = probe.shape[0]
    root = np.random.SeedSequence(seed)
    kernel_ss, *field_ss = root.spawn(1 + len(list(n_units_list)))

    # Independent estimate of the limit kernel sigma_c^2 E[W W'].
    rng_k = np.random.default_rng(kernel_ss)
    wk = rng_k.normal(0.0, sigma_theta, size=(kernel_samples, d))
    bk = rng_k.normal(0.0, sigma_theta, size=(kernel_samples, d))
    wv = _unit_values(wk, bk, probe)  # (kernel_samples, m)
    kernel_est = sigma_c**2 * (wv.T @ wv) / kernel_samples

    per_width = []
    for n_units, ss in zip(n_units_list, field_ss):
        rng = np.random.default_rng(ss)
        w = rng.normal(0.0, sigma_theta, size=(trials, n_units, d))
        b = rng.normal(0.0, sigma_theta, size=(trials, n_units, d))
        c = rng.normal(0.0, sigma_c, size=(trials, n_units))
        unit_vals = _unit_values(w, b, probe)  # (trials, n_units, m)
        u = np.einsum("ti,tim->tm", c, unit_vals) / np.sqrt(n_units)

        mean = u.mean(axis=0)
        centered = u - mean
        var = centered.var(axis=0)
        std = np.sqrt(var)
        se = std / np.sqrt(trials)
        cov = (centered.T @ centered) / (trials - 1)
        m3 = (centered**3).mean(axis=0)
        m4 = (centered**4).mean(axis=0)
        skew = m3 / std**3
        kurt = m4 / var**2 - 3.0
        per_width.append(
            GpUnitStats(
                n_units=int(n_units),
                mean=mean,
                std_error=se,
                covariance=cov,
                skewness=skew,
                excess_kurtosis=kurt,
                cov_discrepancy=float(np.abs(cov - kernel_est).max()),
            )
        )
    return GpCheckReport(
        probe=probe,
        trials=int(trials),
        sigma_c=float(sigma_c),
        sigma_theta=float(sigma_theta),
        kernel_estimate=kernel_est,
        kernel_samples=int(kernel_samples),
        per_width=per_width,
    )
