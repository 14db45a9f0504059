import numpy as np
import pytest

from waveletpinn.errors import NumericalError, ValidationError
from waveletpinn.family import AxisSpec, build_family
from waveletpinn.loss import recipe_jacobian
from waveletpinn.model import VALUE, ModelState
from waveletpinn.ntk import (
    GpCheckReport,
    assemble_kernel,
    constancy_check,
    decompose_kernel,
    gp_limit_check,
    jacobi_eigh,
    spectral_decay,
)
from waveletpinn.problems import make_heat_conduction, sample_points


def adaptive(rng, n_units=5, d=2, zero_c=False):
    c = np.zeros(n_units) if zero_c else rng.normal(size=n_units)
    return ModelState(
        "adaptive",
        c,
        float(rng.normal()),
        w=rng.uniform(-2, 2, size=(n_units, d)),
        b=rng.uniform(-1, 1, size=(n_units, d)),
    )


def test_fixed_basis_kernel_closed_form():
    fs = build_family([AxisSpec(-1, 1, (0, 1), 0.2)])
    rng = np.random.default_rng(1)
    m = ModelState("fixed", rng.normal(size=len(fs)), 0.3, family=fs)
    x = rng.uniform(-1, 1, size=(7, 1))
    k = assemble_kernel(m, target="output", x=x)
    phi = np.array([[fs.eval_basis(i, row) for i in range(len(fs))] for row in x])
    expected = phi @ phi.T + 1.0  # the +1 comes from the trainable offset
    np.testing.assert_allclose(k.matrix, expected, rtol=1e-12, atol=1e-12)
    k.validate()


def test_zero_coefficients_kill_theta_kernel():
    rng = np.random.default_rng(2)
    m = adaptive(rng, zero_c=True)
    x = rng.uniform(-1, 1, size=(6, 2))
    k_c, k_theta, k_bias = decompose_kernel(m, x)
    np.testing.assert_array_equal(k_theta, np.zeros_like(k_theta))
    assert np.all(k_bias == 1.0)


def test_kernel_matches_independent_dot_products():
    rng = np.random.default_rng(3)
    m = adaptive(rng, n_units=4, d=2)
    x = rng.uniform(-1, 1, size=(5, 2))
    k = assemble_kernel(m, target="output", x=x)
    for i in range(5):
        gi = m.param_gradient(x[i], VALUE)
        for j in range(5):
            gj = m.param_gradient(x[j], VALUE)
            assert k.matrix[i, j] == pytest.approx(float(gi @ gj), rel=1e-12, abs=1e-12)


def test_decomposition_additivity():
    rng = np.random.default_rng(4)
    m = adaptive(rng, n_units=6, d=3)
    x = rng.uniform(-1, 1, size=(8, 3))
    k = assemble_kernel(m, target="output", x=x)
    k_c, k_theta, k_bias = decompose_kernel(m, x)
    total = k_c + k_theta + k_bias
    scale = np.abs(k.matrix).max()
    assert np.abs(total - k.matrix).max() <= 1e-12 * scale

    # with (w, b) frozen the kernel is just K_c plus the bias block
    st = m.stacks(x, 0)
    u = st.unit_matrix(VALUE)
    np.testing.assert_allclose(k_c, u @ u.T, rtol=1e-12, atol=1e-12)


def test_scaled_kernel_divides_by_width():
    rng = np.random.default_rng(5)
    m = adaptive(rng, n_units=4, d=1)
    x = rng.uniform(-1, 1, size=(3, 1))
    k = assemble_kernel(m, target="output", x=x)
    ks = assemble_kernel(m, target="output", x=x, scaled=True)
    # non-bias contribution scales by 1/n_units, the all-ones block stays
    np.testing.assert_allclose(
        ks.matrix - 1.0, (k.matrix - 1.0) / m.n_units, rtol=1e-12, atol=1e-12
    )


def test_operator_kernel_blocks():
    problem = make_heat_conduction(0.12)
    fs = build_family([AxisSpec(-1, 1, (0,), 0.2), AxisSpec(0, 1, (0,), 0.2)])
    rng = np.random.default_rng(6)
    m = ModelState("fixed", rng.normal(size=len(fs)), 0.0, family=fs)
    pts = sample_points(problem, 12, 4, 3, seed=7)
    k = assemble_kernel(m, target="operator", problem=problem, pts=pts)
    n_sup = sum(p.shape[0] for p in pts.supervised.values())
    assert k.matrix.shape == (12 + n_sup, 12 + n_sup)
    assert k.n_residual_rows == 12
    assert k.block("pp").shape == (12, 12)
    assert k.block("bb").shape == (n_sup, n_sup)
    k.validate()
    # spot-check one pp entry against explicit operator Jacobian rows
    recipe, _ = problem.equations[0]
    rows = recipe_jacobian([m], recipe, pts.residual[:2])
    assert k.matrix[0, 1] == pytest.approx(float(rows[0] @ rows[1]), rel=1e-12)


def test_memory_guard():
    rng = np.random.default_rng(8)
    m = adaptive(rng, n_units=10, d=2)
    x = rng.uniform(-1, 1, size=(50, 2))
    with pytest.raises(ValidationError):
        assemble_kernel(m, target="output", x=x, max_entries=100)


def test_jacobi_against_lapack_oracle():
    rng = np.random.default_rng(9)
    for n in (1, 2, 3, 10, 40):
        a = rng.normal(size=(n, n))
        a = a + a.T
        w, q = jacobi_eigh(a)
        scale = np.abs(a).max()
        assert np.abs(a @ q - q * w[None, :]).max() < 1e-10 * scale
        assert np.abs(q.T @ q - np.eye(n)).max() < 1e-10
        np.testing.assert_allclose(w, np.linalg.eigvalsh(a), rtol=1e-10, atol=1e-10 * scale)


def test_jacobi_rejects_asymmetric():
    with pytest.raises(ValidationError):
        jacobi_eigh(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_spectral_decay_scalar_and_identity():
    traj = spectral_decay(np.array([[2.0]]), np.array([3.0]), [0.0, 1.0, 2.0])
    np.testing.assert_allclose(traj[:, 0], 3.0 * np.exp(-2.0 * np.array([0.0, 1.0, 2.0])))
    eye = np.eye(4)
    e0 = np.array([1.0, -2.0, 0.5, 4.0])
    traj = spectral_decay(eye, e0, [0.7])
    np.testing.assert_allclose(traj[0], e0 * np.exp(-0.7), rtol=1e-12)


def test_spectral_decay_rate_separation():
    k = np.diag([1.0, 100.0])
    e0 = np.array([1.0, 1.0])
    t_fast = np.log(1e6) / 100.0
    t_slow = np.log(1e6) / 1.0
    traj = spectral_decay(k, e0, [t_fast, t_slow])
    assert abs(traj[0, 1]) <= 1e-6 + 1e-12  # fast mode done at t_fast
    assert abs(traj[0, 0]) > 0.5  # slow mode barely moved
    assert abs(traj[1, 0]) <= 1e-6 + 1e-12  # slow mode done 100x later
    assert t_slow / t_fast == pytest.approx(100.0)


def test_constancy_fixed_vs_adaptive():
    fs = build_family([AxisSpec(-1, 1, (0, 1), 0.2)])
    rng = np.random.default_rng(10)
    x = rng.uniform(-1, 1, size=(9, 1))
    # any coefficient trajectory leaves the fixed-basis kernel untouched
    checkpoints = [
        ModelState("fixed", rng.normal(size=len(fs)), float(rng.normal()), family=fs)
        for _ in range(4)
    ]
    assert constancy_check(checkpoints, x) < 1e-12

    base = adaptive(rng, n_units=5, d=1)
    moved = ModelState(
        "adaptive", base.coeffs, base.bias, w=base.w + 0.2, b=base.b - 0.1
    )
    assert constancy_check([base, moved], x) > 1e-6

    with pytest.raises(ValidationError):
        constancy_check([base], x)


def test_gp_limit_check_basics():
    probe = np.linspace(-1, 1, 4)[:, None]
    report = gp_limit_check(
        d=1,
        sigma_c=1.0,
        sigma_theta=1.0,
        n_units_list=[1, 64],
        probe=probe,
        trials=1500,
        seed=123,
        kernel_samples=50_000,
    )
    assert isinstance(report, GpCheckReport)
    assert [s.n_units for s in report.per_width] == [1, 64]
    for stats in report.per_width:
        # centered by construction: means within 4 standard errors of zero
        assert np.all(np.abs(stats.mean) <= 4.0 * stats.std_error)
    # a single unit is visibly non-Gaussian
    assert np.max(np.abs(report.per_width[0].excess_kurtosis)) > 0.3
    with pytest.raises(ValidationError):
        gp_limit_check(1, 1.0, 1.0, [4], probe, trials=10, seed=0)


def test_kernel_validate_catches_defects():
    from waveletpinn.ntk import KernelMatrix

    bad = np.array([[1.0, 2.0], [0.5, 1.0]])
    with pytest.raises(NumericalError):
        KernelMatrix(matrix=bad).validate()
    not_psd = np.array([[1.0, 0.0], [0.0, -1.0]])
    with pytest.raises(NumericalError):
        KernelMatrix(matrix=not_psd).validate()
