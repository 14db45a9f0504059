import math

import numpy as np
import pytest

from waveletpinn.errors import ValidationError
from waveletpinn.family import AxisSpec, FamilyIndex, build_family
from waveletpinn.model import (
    VALUE,
    ModelState,
    adaptive_from_family,
    grad_axis,
    hess_axis,
    init_adaptive,
    init_fixed,
    load_model,
    save_model,
    xavier_uniform,
)
from waveletpinn.wavelet import eval_psi


def random_adaptive(rng, n_units, d):
    return ModelState(
        "adaptive",
        rng.normal(size=n_units),
        float(rng.normal()),
        w=rng.uniform(-3, 3, size=(n_units, d)),
        b=rng.uniform(-2, 2, size=(n_units, d)),
    )


def small_family(d=2):
    return build_family([AxisSpec(-1, 1, (0, 1), 0.2) for _ in range(d)])


def test_forward_bias_only():
    m = ModelState("adaptive", np.zeros(3), 7.5, w=np.ones((3, 2)), b=np.zeros((3, 2)))
    for x in ([0.0, 0.0], [1.3, -2.0], [10.0, 4.0]):
        assert m.forward(x) == 7.5


def test_forward_single_unit():
    m = ModelState("adaptive", [1.0], 0.0, w=[[1.0]], b=[[0.0]])
    assert m.forward([1.0]) == pytest.approx(-math.exp(-0.5), rel=1e-14)


def test_adaptive_transfer_has_no_sqrt2_prefactor():
    # unit seeded from (j, k) = (1, 0) evaluates psi(2x), not 2^(1/2) psi(2x)
    m = ModelState("adaptive", [1.0], 0.0, w=[[2.0]], b=[[0.0]])
    assert m.forward([0.5]) == pytest.approx(eval_psi(1.0, 0), rel=1e-14)


def test_unit_derivatives_closed_form():
    m = ModelState("adaptive", [1.0], 0.0, w=[[1.0]], b=[[0.0]])
    td = m.unit_derivatives(0, np.array([0.0]))
    assert td.value == 0.0
    assert td.grad_x[0] == -1.0
    assert td.hess_diag[0] == 0.0


def test_unit_derivatives_match_fixed_basis_partials():
    fs = small_family()
    rng = np.random.default_rng(2)
    m = ModelState("fixed", rng.normal(size=len(fs)), 0.0, family=fs)
    for _ in range(20):
        i = int(rng.integers(0, len(fs)))
        x = rng.uniform(-1, 1, size=2)
        td = m.unit_derivatives(i, x, mixed=True)
        assert td.value == fs.eval_basis(i, x)
        for n in range(2):
            assert td.grad_x[n] == fs.eval_basis_partial(i, x, n, 1)
            assert td.hess_diag[n] == fs.eval_basis_partial(i, x, n, 2)
        assert td.mixed[0, 1] == fs.eval_basis_mixed(i, x, 0, 1)


def test_unit_gradient_matches_forward_fd():
    rng = np.random.default_rng(5)
    for _ in range(50):
        d = int(rng.integers(1, 4))
        m = random_adaptive(rng, int(rng.integers(1, 5)), d)
        x = rng.uniform(-1, 1, size=d)
        n = int(rng.integers(0, d))
        h = 1e-6

        def f(t):
            xx = x.copy()
            xx[n] = t
            return m.forward(xx)

        approx = (f(x[n] + h) - f(x[n] - h)) / (2 * h)
        exact = m.spatial_derivative(x, n, 1)
        assert abs(approx - exact) <= 1e-5 * max(1e-3, abs(exact))


def test_forward_linear_in_coefficients():
    rng = np.random.default_rng(7)
    m = random_adaptive(rng, 6, 2)
    x = rng.uniform(-1, 1, size=(10, 2))
    alpha = 3.7
    scaled = ModelState("adaptive", alpha * m.coeffs, alpha * m.bias, w=m.w, b=m.b)
    np.testing.assert_allclose(scaled.forward(x), alpha * m.forward(x), rtol=1e-14)
    other = random_adaptive(rng, 6, 2)
    other = ModelState("adaptive", other.coeffs, other.bias, w=m.w, b=m.b)
    summed = ModelState(
        "adaptive", m.coeffs + other.coeffs, m.bias + other.bias, w=m.w, b=m.b
    )
    np.testing.assert_allclose(
        summed.forward(x), m.forward(x) + other.forward(x), rtol=1e-15, atol=1e-15
    )


def test_param_gradient_trivial_entries():
    rng = np.random.default_rng(9)
    m = random_adaptive(rng, 4, 2)
    x = rng.uniform(-1, 1, size=2)
    g = m.param_gradient(x, VALUE)
    st = m.stacks(x[None, :], 0)
    np.testing.assert_allclose(g[-5:-1], st.unit_matrix(VALUE)[0], rtol=1e-14)
    assert g[-1] == 1.0
    for target in (grad_axis(0), hess_axis(1)):
        assert m.param_gradient(x, target)[-1] == 0.0


@pytest.mark.parametrize("kind", ["adaptive", "fixed"])
def test_param_gradient_matches_finite_differences(kind):
    rng = np.random.default_rng(11)
    checked = 0
    while checked < 200:
        if kind == "adaptive":
            d = int(rng.integers(1, 4))
            m = random_adaptive(rng, int(rng.integers(1, 4)), d)
        else:
            d = 2
            fs = small_family(d)
            m = ModelState("fixed", rng.normal(size=len(fs)), float(rng.normal()), family=fs)
        x = rng.uniform(-1, 1, size=d)
        targets = [VALUE, grad_axis(int(rng.integers(0, d))), hess_axis(int(rng.integers(0, d)))]
        for target in targets:
            kind_t, axis = target
            exact = m.param_gradient(x, target)
            theta = m.param_vector()
            approx = np.empty_like(exact)
            h = 1e-6
            for p in range(theta.size):
                tp = theta.copy()
                tp[p] += h
                tm = theta.copy()
                tm[p] -= h

                def q(vec):
                    mm = m.with_params(vec)
                    if kind_t == "value":
                        return mm.forward(x)
                    return mm.spatial_derivative(x, axis, 1 if kind_t == "grad" else 2)

                approx[p] = (q(tp) - q(tm)) / (2 * h)
            scale = np.maximum(np.abs(exact), 1e-2 * max(1.0, np.abs(exact).max()))
            assert np.max(np.abs(approx - exact) / scale) < 1e-5
            checked += 1


def test_degenerate_zero_scale_unit_is_finite():
    m = ModelState("adaptive", [2.0], 0.0, w=[[0.0, 1.0]], b=[[0.5, 0.0]])
    x = np.array([0.3, 0.4])
    # constant factor psi(0.5) in axis 0
    assert m.forward(x) == pytest.approx(2.0 * eval_psi(0.5) * eval_psi(0.4), rel=1e-14)
    for target in (VALUE, grad_axis(0), grad_axis(1), hess_axis(0), hess_axis(1)):
        assert np.isfinite(m.param_gradient(x, target)).all()
    # d/dw_0 of psi(w x + b) at w=0 is x * psi'(b), not zero
    g = m.param_gradient(x, VALUE)
    assert g[0] == pytest.approx(2.0 * 0.3 * eval_psi(0.5, 1) * eval_psi(0.4), rel=1e-12)


def test_transfer_consistency_random_indices():
    rng = np.random.default_rng(13)
    fs = small_family(2)
    coeffs = rng.normal(size=len(fs))
    bias = 0.8
    sel = rng.choice(len(fs), size=5, replace=False)
    adaptive = adaptive_from_family(fs, coeffs, bias, sel, rescale_coefficients=True)
    np.testing.assert_array_equal(adaptive.w, 2.0 ** fs.j_table[sel].astype(float))
    np.testing.assert_array_equal(adaptive.b, -fs.k_table[sel].astype(float))

    restricted = np.zeros(len(fs))
    restricted[sel] = coeffs[sel]
    fixed = ModelState("fixed", restricted, bias, family=fs)
    x = rng.uniform(-1, 1, size=(200, 2))
    np.testing.assert_allclose(adaptive.forward(x), fixed.forward(x), rtol=1e-12, atol=1e-12)


def test_transfer_without_rescaling_differs_by_prefactor():
    fs = build_family([AxisSpec(0, 1, (2,), 0.0)])
    i = fs.position(FamilyIndex((2,), (1,)))
    coeffs = np.zeros(len(fs))
    coeffs[i] = 1.0
    raw = adaptive_from_family(fs, coeffs, 0.0, [i], rescale_coefficients=False)
    x = np.array([0.4])
    assert raw.forward(x) == pytest.approx(fs.eval_basis(i, x) / 2.0, rel=1e-12)


def test_param_vector_roundtrip_layout():
    rng = np.random.default_rng(17)
    m = random_adaptive(rng, 3, 2)
    vec = m.param_vector()
    assert vec.size == 3 * (2 * 2 + 1) + 1
    np.testing.assert_array_equal(vec[:6], m.w.ravel())
    np.testing.assert_array_equal(vec[6:12], m.b.ravel())
    np.testing.assert_array_equal(vec[12:15], m.coeffs)
    assert vec[15] == m.bias
    m2 = m.with_params(vec)
    np.testing.assert_array_equal(m2.param_vector(), vec)


def test_xavier_determinism_and_bounds():
    fs = small_family(1)
    a = init_fixed(fs, seed=42)
    b = init_fixed(fs, seed=42)
    np.testing.assert_array_equal(a.param_vector(), b.param_vector())
    bound = math.sqrt(6.0 / (len(fs) + 1))
    assert np.all(np.abs(a.coeffs) <= bound)
    assert a.bias == 0.0

    c = init_adaptive(5, 2, seed=0)
    d = init_adaptive(5, 2, seed=0)
    np.testing.assert_array_equal(c.param_vector(), d.param_vector())


def test_xavier_variance():
    rng = np.random.default_rng(123)
    fan_in, fan_out = 30, 1
    draws = xavier_uniform(rng, fan_in, fan_out, 100_000)
    target = 2.0 / (fan_in + fan_out)
    assert abs(draws.var() - target) / target < 0.05
    assert np.all(np.abs(draws) <= math.sqrt(6.0 / (fan_in + fan_out)))


def test_serialization_roundtrip(tmp_path):
    rng = np.random.default_rng(19)
    m = random_adaptive(rng, 4, 3)
    p = tmp_path / "model.txt"
    save_model(m, p)
    m2 = load_model(p)
    assert m2.kind == "adaptive"
    np.testing.assert_array_equal(m2.param_vector(), m.param_vector())

    fs = small_family(2)
    fixed = ModelState("fixed", rng.normal(size=len(fs)), 1.25, family=fs)
    p2 = tmp_path / "fixed.txt"
    save_model(fixed, p2)
    back = load_model(p2)
    assert back.kind == "fixed"
    assert len(back.family) == len(fs)
    np.testing.assert_array_equal(back.param_vector(), fixed.param_vector())
    x = rng.uniform(-1, 1, size=(5, 2))
    np.testing.assert_array_equal(back.forward(x), fixed.forward(x))


def test_validation_errors():
    with pytest.raises(ValidationError):
        ModelState("fixed", np.zeros(3), 0.0)  # no family
    with pytest.raises(ValidationError):
        ModelState("adaptive", [1.0], 0.0, w=[[np.inf]], b=[[0.0]])
    fs = small_family(1)
    with pytest.raises(ValidationError):
        ModelState("fixed", np.zeros(len(fs) + 1), 0.0, family=fs)
    m = init_adaptive(2, 2, 0)
    with pytest.raises(ValidationError):
        m.param_gradient(np.zeros(2), ("grad", 5))
    with pytest.raises(ValidationError):
        m.with_params(np.zeros(3))
