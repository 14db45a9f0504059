"""Fixed multiresolution wavelet family over a box domain.

Each axis carries a finite set of resolution levels; each level j covers
the axis with integer translates k in

    floor((a - gamma) * 2^j) <= k <= ceil((b + gamma) * 2^j),

where gamma >= 0 widens the covered interval so boundary behaviour is
representable.  The d-dimensional family is the Cartesian product of the
per-axis (j, k) pairs; members are separable tensor products

    Psi(x) = prod_n 2^(j_n/2) psi(2^(j_n) x_n - k_n).

Flat ordering is lexicographic with axis 0 outermost and, within an axis,
level-position-major then translate (ORDERING_VERSION tags serialized
manifests so a change in convention is detectable).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .wavelet import eval_psi, psi_stack

ORDERING_VERSION = "lex-v1"


def translation_range(a: float, b: float, gamma: float, j: int) -> tuple[int, int]:
    """Inclusive integer translate range covering [a, b] at level j."""
    if not a < b:
        raise ValidationError(f"axis interval requires a < b, got [{a}, {b}]")
    if gamma < 0:
        raise ValidationError(f"translation margin must be >= 0, got {gamma}")
    scale = 2.0**j
    k_min = math.floor((a - gamma) * scale)
    k_max = math.ceil((b + gamma) * scale)
    return k_min, k_max


@dataclass(frozen=True)
class AxisSpec:
    """One coordinate axis: interval, resolution levels, translation margin."""

    lower: float
    upper: float
    levels: tuple[int, ...]
    gamma: float = 0.0

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValidationError(
                f"axis requires lower < upper, got [{self.lower}, {self.upper}]"
            )
        if self.gamma < 0:
            raise ValidationError(f"gamma must be >= 0, got {self.gamma}")
        levels = tuple(int(j) for j in self.levels)
        if not levels:
            raise ValidationError("axis needs at least one resolution level")
        if len(set(levels)) != len(levels):
            raise ValidationError(f"duplicate resolution levels: {levels}")
        object.__setattr__(self, "levels", levels)

    def pairs(self) -> list[tuple[int, int]]:
        """All admissible (j, k) pairs on this axis, in flat order."""
        out = []
        for j in self.levels:
            k_min, k_max = translation_range(self.lower, self.upper, self.gamma, j)
            out.extend((j, k) for k in range(k_min, k_max + 1))
        return out


@dataclass(frozen=True)
class FamilyIndex:
    """Per-axis scales j and translates k of one family member."""

    j: tuple[int, ...]
    k: tuple[int, ...]

    def __post_init__(self):
        if len(self.j) != len(self.k):
            raise ValidationError("j and k must have equal length")
        object.__setattr__(self, "j", tuple(int(v) for v in self.j))
        object.__setattr__(self, "k", tuple(int(v) for v in self.k))


@dataclass(frozen=True, eq=False)
class FamilySet:
    """Enumerated multi-index family with a flat bijection.

    j_table/k_table hold the per-member scale/translate integers as
    (n_members, d) arrays so batched evaluation avoids Python loops.
    """

    axes: tuple[AxisSpec, ...]
    j_table: np.ndarray
    k_table: np.ndarray
    _position: dict = field(repr=False, compare=False, default_factory=dict)

    @property
    def dim(self) -> int:
        return len(self.axes)

    def __len__(self) -> int:
        return self.j_table.shape[0]

    def index(self, i: int) -> FamilyIndex:
        """Flat position -> multi-index (inverse of position())."""
        self._check_flat(i)
        return FamilyIndex(tuple(self.j_table[i]), tuple(self.k_table[i]))

    def position(self, idx: FamilyIndex) -> int:
        """Multi-index -> flat position."""
        key = (idx.j, idx.k)
        if key not in self._position:
            raise ValidationError(f"index {idx} is not a member of this family")
        return self._position[key]

    def _check_flat(self, i: int):
        if not 0 <= i < len(self):
            raise ValidationError(f"flat index {i} out of range [0, {len(self)})")

    # -- evaluation ---------------------------------------------------------

    def eval_basis(self, i: int, x) -> float:
        """Psi_i(x) for one member at one point."""
        self._check_flat(i)
        x = np.asarray(x, dtype=float)
        val = 1.0
        for n in range(self.dim):
            j, k = int(self.j_table[i, n]), int(self.k_table[i, n])
            val *= 2.0 ** (0.5 * j) * eval_psi(np.ldexp(x[n], j) - k, 0)
        return float(val)

    def eval_basis_partial(self, i: int, x, axis: int, order: int) -> float:
        """d^order/dx_axis^order Psi_i(x), order 1 or 2."""
        if order not in (1, 2):
            raise ValidationError(f"partial order must be 1 or 2, got {order}")
        self._check_flat(i)
        if not 0 <= axis < self.dim:
            raise ValidationError(f"axis {axis} out of range for d={self.dim}")
        x = np.asarray(x, dtype=float)
        val = 1.0
        for n in range(self.dim):
            j, k = int(self.j_table[i, n]), int(self.k_table[i, n])
            arg = np.ldexp(x[n], j) - k
            if n == axis:
                val *= 2.0 ** (j * order + 0.5 * j) * eval_psi(arg, order)
            else:
                val *= 2.0 ** (0.5 * j) * eval_psi(arg, 0)
        return float(val)

    def eval_basis_mixed(self, i: int, x, axis_a: int, axis_b: int) -> float:
        """Mixed second partial d^2/dx_a dx_b Psi_i(x), a != b."""
        if axis_a == axis_b:
            return self.eval_basis_partial(i, x, axis_a, 2)
        self._check_flat(i)
        x = np.asarray(x, dtype=float)
        val = 1.0
        for n in range(self.dim):
            j, k = int(self.j_table[i, n]), int(self.k_table[i, n])
            arg = np.ldexp(x[n], j) - k
            order = 1 if n in (axis_a, axis_b) else 0
            val *= 2.0 ** (j * order + 0.5 * j) * eval_psi(arg, order)
        return float(val)

    def factor_matrices(self, x: np.ndarray, max_order: int) -> list[np.ndarray]:
        """Per-member, per-axis factor stacks at a batch of points.

        Returns one (max_order+1, n_points, n_members) array per axis,
        where entry [q, p, i] is d^q/dz^q of 2^(j/2) psi(2^j x - k) for
        member i's (j, k) on that axis, including the 2^(j*q) chain factor.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = []
        for n in range(self.dim):
            j = self.j_table[:, n]
            k = self.k_table[:, n]
            z = np.ldexp(x[:, n][:, None], j[None, :]) - k[None, :]
            stack = psi_stack(z, max_order)
            for q in range(max_order + 1):
                stack[q] *= 2.0 ** (j * q + 0.5 * j)[None, :]
            out.append(stack)
        return out

    # -- serialization ------------------------------------------------------

    def manifest(self) -> str:
        """Text manifest: axis specs, member count, ordering version."""
        lines = [f"family ordering={ORDERING_VERSION} d={self.dim} count={len(self)}"]
        for n, ax in enumerate(self.axes):
            levels = ",".join(str(j) for j in ax.levels)
            lines.append(
                f"axis {n} lower={ax.lower!r} upper={ax.upper!r} "
                f"levels={levels} gamma={ax.gamma!r}"
            )
        return "\n".join(lines) + "\n"


def build_family(axes) -> FamilySet:
    """Enumerate the full multi-index family over the given axes."""
    axes = tuple(axes)
    if not axes:
        raise ValidationError("at least one axis is required")
    per_axis = [ax.pairs() for ax in axes]
    counts = [len(p) for p in per_axis]
    total = int(np.prod(counts))

    d = len(axes)
    j_table = np.empty((total, d), dtype=np.int64)
    k_table = np.empty((total, d), dtype=np.int64)
    # Axis-0-outermost lexicographic enumeration via mixed-radix strides.
    rep = total
    for n, pairs in enumerate(per_axis):
        rep //= counts[n]
        col = np.repeat(np.tile(np.arange(counts[n]), total // (counts[n] * rep)), rep)
        arr = np.asarray(pairs, dtype=np.int64)
        j_table[:, n] = arr[col, 0]
        k_table[:, n] = arr[col, 1]

    position = {
        (tuple(j_table[i]), tuple(k_table[i])): i for i in range(total)
    }
    return FamilySet(axes=axes, j_table=j_table, k_table=k_table, _position=position)
