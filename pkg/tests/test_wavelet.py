import math

import numpy as np
import pytest

from waveletpinn.errors import ValidationError
from waveletpinn.wavelet import MotherWavelet, eval_psi, eval_scaled, psi_stack

EXP_HALF = math.exp(-0.5)


def central_diff(f, x, h):
    return (f(x + h) - f(x - h)) / (2.0 * h)


def test_closed_form_values():
    assert eval_psi(0.0, 0) == 0.0
    assert eval_psi(1.0, 0) == pytest.approx(-EXP_HALF, rel=1e-12)  # -0.6065307
    assert eval_psi(0.0, 1) == -1.0
    assert eval_psi(0.0, 3) == 3.0


def test_oddness_at_random_points():
    rng = np.random.default_rng(7)
    x = rng.uniform(-8, 8, size=100)
    np.testing.assert_allclose(eval_psi(-x, 0), -eval_psi(x, 0), rtol=0, atol=0)


def test_derivatives_match_finite_differences():
    # psi^(n+1) vs central difference of psi^(n), |x| <= 5, step 1e-5.
    rng = np.random.default_rng(11)
    x = rng.uniform(-5, 5, size=600)
    h = 1e-5
    for n in range(3):
        exact = eval_psi(x, n + 1)
        approx = central_diff(lambda t: eval_psi(t, n), x, h)
        scale = np.maximum(np.abs(exact), 1e-3)
        assert np.max(np.abs(approx - exact) / scale) < 1e-6


def test_rejects_bad_order():
    with pytest.raises(ValidationError):
        eval_psi(0.0, 4)
    with pytest.raises(ValidationError):
        eval_psi(0.0, -1)
    with pytest.raises(ValidationError):
        eval_scaled(0, 0, 0.0, 5)


def test_underflow_is_exact_zero():
    assert eval_psi(45.0, 0) == 0.0
    assert eval_psi(-45.0, 2) == 0.0


def test_scaled_examples():
    # sqrt(2) * psi(1)
    assert eval_scaled(1, 0, 0.5, 0) == pytest.approx(-math.sqrt(2) * EXP_HALF, rel=1e-12)
    # 2^2 * 2^1 * psi'(0) = -8
    assert eval_scaled(2, 1, 0.25, 1) == pytest.approx(-8.0, rel=1e-14)


def test_scaled_identity_at_unit_scale():
    rng = np.random.default_rng(3)
    for x in rng.uniform(-4, 4, size=50):
        assert eval_scaled(0, 0, x, 0) == eval_psi(x, 0)


def test_dilation_identity():
    rng = np.random.default_rng(17)
    for _ in range(1000):
        j = int(rng.integers(-6, 7))
        k = int(rng.integers(-10, 11))
        x = float(rng.uniform(-3, 3))
        lhs = eval_scaled(j, k, x, 0)
        rhs = 2.0 ** (0.5 * j) * eval_psi((2.0**j) * x - k, 0)
        assert lhs == pytest.approx(rhs, rel=1e-14, abs=1e-300)


def test_scaled_derivative_chain():
    rng = np.random.default_rng(23)
    for _ in range(300):
        j = int(rng.integers(-4, 5))
        k = int(rng.integers(-4, 5))
        # keep the argument in a region where psi derivatives are not tiny
        x = float((rng.uniform(-2, 2) + k) / 2.0**j)
        h = 1e-5 * 2.0**-j
        for n in range(3):
            exact = eval_scaled(j, k, x, n + 1)
            approx = central_diff(lambda t: eval_scaled(j, k, t, n), x, h)
            denom = max(abs(exact), 1e-6 * 2.0 ** (j * (n + 1) + 0.5 * j))
            assert abs(approx - exact) / denom < 1e-5


def test_psi_stack_matches_eval_psi():
    rng = np.random.default_rng(31)
    z = rng.uniform(-6, 6, size=(40, 3))
    stack = psi_stack(z, 3)
    for q in range(4):
        np.testing.assert_array_equal(stack[q], eval_psi(z, q))


def test_mother_wavelet_wrapper():
    mw = MotherWavelet()
    assert mw(1.0) == eval_psi(1.0, 0)
    assert mw.scaled(1, 0, 0.5) == eval_scaled(1, 0, 0.5, 0)
    assert np.isfinite(mw(np.linspace(-50, 50, 101), 3)).all()
