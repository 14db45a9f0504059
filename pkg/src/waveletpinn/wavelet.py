"""Mother wavelet and its dyadically scaled/translated versions.

The mother wavelet is the (negated, unnormalized) first derivative of the
standard Gaussian,

    psi(x) = -x * exp(-x^2 / 2),

with closed-form derivatives up to third order.  Third order is needed
because parameter gradients of second-order PDE operators chain one more
derivative through the unit's scale parameter.

All evaluators accept scalars or numpy arrays and are pure functions.
For |x| beyond ~40 the Gaussian factor underflows and the result is an
exact 0.0, which is the correct limit.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

MAX_DERIVATIVE_ORDER = 3


def eval_psi(x, order: int = 0):
    """Evaluate psi or one of its derivatives, order in 0..3."""
    if order not in (0, 1, 2, 3):
        raise ValidationError(f"derivative order must be in 0..3, got {order}")
    x = np.asarray(x, dtype=float)
    g = np.exp(-0.5 * x * x)
    if order == 0:
        out = -x * g
    elif order == 1:
        out = (x * x - 1.0) * g
    elif order == 2:
        out = x * (3.0 - x * x) * g
    else:
        x2 = x * x
        out = (x2 * x2 - 6.0 * x2 + 3.0) * g
    return out if out.ndim else float(out)


def eval_scaled(j: int, k: int, x, order: int = 0):
    """d^order/dx^order of 2^(j/2) psi(2^j x - k).

    The chain rule pulls out a 2^(j*order) prefactor on top of the L2
    normalization 2^(j/2).
    """
    if order not in (0, 1, 2, 3):
        raise ValidationError(f"derivative order must be in 0..3, got {order}")
    arg = np.ldexp(np.asarray(x, dtype=float), j) - k
    pref = 2.0 ** (j * order + 0.5 * j)
    out = pref * eval_psi(arg, order)
    return out if np.ndim(out) else float(out)


class WaveletKind(enum.Enum):
    GAUSSIAN_FIRST_DERIVATIVE = "gaussian_first_derivative"


@dataclass(frozen=True)
class MotherWavelet:
    """A mother wavelet with derivatives up to order 3.

    Only the Gaussian first derivative is implemented; the kind tag exists
    so alternative families can slot in without touching call sites.
    """

    kind: WaveletKind = WaveletKind.GAUSSIAN_FIRST_DERIVATIVE

    def __call__(self, x, order: int = 0):
        return eval_psi(x, order)

    def scaled(self, j: int, k: int, x, order: int = 0):
        return eval_scaled(j, k, x, order)


def psi_stack(z: np.ndarray, orders: int = 3) -> np.ndarray:
    """Stack psi^(0..orders) of z along a new leading axis.

    Shares the single exp() evaluation across orders and works in-place;
    this is the hot path for batched model/basis evaluation.
    """
    if not 0 <= orders <= MAX_DERIVATIVE_ORDER:
        raise ValidationError(f"orders must be in 0..3, got {orders}")
    z = np.asarray(z, dtype=float)
    out = np.empty((orders + 1,) + z.shape, dtype=float)
    z2 = np.multiply(z, z, out=out[0] if orders == 0 else np.empty_like(z))
    g = np.multiply(z2, -0.5, out=np.empty_like(z))
    np.exp(g, out=g)
    if orders >= 1:
        np.subtract(z2, 1.0, out=out[1])
        out[1] *= g
    if orders >= 2:
        np.subtract(3.0, z2, out=out[2])
        out[2] *= z
        out[2] *= g
    if orders >= 3:
        np.multiply(z2, z2, out=out[3])
        z2 *= 6.0
        out[3] -= z2
        out[3] += 3.0
        out[3] *= g
    np.multiply(z, g, out=out[0])
    np.negative(out[0], out=out[0])
    return out
