import math

import numpy as np
import pytest

from waveletpinn.errors import ValidationError
from waveletpinn.family import (
    AxisSpec,
    FamilyIndex,
    build_family,
    translation_range,
)
from waveletpinn.wavelet import eval_psi, eval_scaled


def random_axes(rng, d):
    axes = []
    for _ in range(d):
        a = float(rng.uniform(-2, 1))
        b = a + float(rng.uniform(0.5, 2.5))
        n_levels = int(rng.integers(1, 4))
        lo = int(rng.integers(-3, 2))
        levels = tuple(range(lo, lo + n_levels))
        gamma = float(rng.uniform(0, 0.5))
        axes.append(AxisSpec(a, b, levels, gamma))
    return axes


def test_translation_range_examples():
    assert translation_range(0, 1, 0, 0) == (0, 1)
    assert translation_range(-1, 1, 0.3, 2) == (-6, 6)
    assert translation_range(-1, 1, 0.3, -1) == (-1, 1)


def test_translation_range_rejects_bad_interval():
    with pytest.raises(ValidationError):
        translation_range(1, 1, 0.0, 0)
    with pytest.raises(ValidationError):
        translation_range(2, 1, 0.0, 0)


def test_build_family_counts():
    fs = build_family([AxisSpec(0, 1, (0,), 0.0)])
    assert len(fs) == 2
    fs2 = build_family([AxisSpec(0, 1, (0,), 0.0), AxisSpec(0, 1, (0,), 0.0)])
    assert len(fs2) == 4
    fs3 = build_family([AxisSpec(-1, 1, (-1, 0, 1), 0.0)])
    assert len(fs3) == 3 + 3 + 5


def test_count_formula_random_configs():
    rng = np.random.default_rng(5)
    for _ in range(50):
        axes = random_axes(rng, int(rng.integers(1, 4)))
        fs = build_family(axes)
        expect = 1
        for ax in axes:
            per = 0
            for j in ax.levels:
                k_min, k_max = translation_range(ax.lower, ax.upper, ax.gamma, j)
                per += k_max - k_min + 1
            expect *= per
        assert len(fs) == expect


def test_flat_order_is_lexicographic():
    fs = build_family(
        [AxisSpec(0, 1, (0, 1), 0.0), AxisSpec(0, 1, (0,), 0.0)]
    )
    seen = [(tuple(fs.j_table[i]), tuple(fs.k_table[i])) for i in range(len(fs))]
    # axis 0 pairs: (0,0),(0,1),(1,0),(1,1),(1,2); axis 1 pairs: (0,0),(0,1)
    assert seen[0] == ((0, 0), (0, 0))
    assert seen[1] == ((0, 0), (0, 1))
    assert seen[2] == ((0, 0), (1, 0))
    assert seen[-1] == ((1, 0), (2, 1))


def test_bijection_roundtrip():
    rng = np.random.default_rng(9)
    for _ in range(20):
        fs = build_family(random_axes(rng, int(rng.integers(1, 3))))
        for i in range(len(fs)):
            assert fs.position(fs.index(i)) == i
        # and the reverse direction on a sample of explicit indices
        for i in rng.integers(0, len(fs), size=10):
            idx = fs.index(int(i))
            assert fs.index(fs.position(idx)) == idx


def test_coverage_of_translated_centers():
    rng = np.random.default_rng(13)
    for _ in range(20):
        axes = random_axes(rng, 2)
        for ax in axes:
            for j in ax.levels:
                k_min, k_max = translation_range(ax.lower, ax.upper, ax.gamma, j)
                centers = np.arange(k_min, k_max + 1) / 2.0**j
                assert centers[0] <= ax.lower - ax.gamma + 2.0**-j
                assert centers[-1] >= ax.upper + ax.gamma - 2.0**-j


def test_eval_basis_examples():
    fs1 = build_family([AxisSpec(0, 1, (0,), 0.0)])
    i = fs1.position(FamilyIndex((0,), (0,)))
    assert fs1.eval_basis(i, [0.0]) == 0.0

    fs2 = build_family([AxisSpec(0, 2, (0,), 0.0), AxisSpec(0, 2, (0,), 0.0)])
    i = fs2.position(FamilyIndex((0, 0), (0, 0)))
    assert fs2.eval_basis(i, [1.0, 1.0]) == pytest.approx(math.exp(-1.0), rel=1e-12)

    fs3 = build_family([AxisSpec(0, 1, (1,), 0.0)])
    i = fs3.position(FamilyIndex((1,), (0,)))
    assert fs3.eval_basis(i, [0.5]) == pytest.approx(eval_scaled(1, 0, 0.5, 0), rel=1e-14)


def test_eval_basis_rejects_out_of_range():
    fs = build_family([AxisSpec(0, 1, (0,), 0.0)])
    with pytest.raises(ValidationError):
        fs.eval_basis(len(fs), [0.5])
    with pytest.raises(ValidationError):
        fs.eval_basis_partial(0, [0.5], 0, 3)


def test_partial_examples():
    fs = build_family([AxisSpec(-1, 3, (0,), 0.0), AxisSpec(-1, 3, (0,), 0.0)])
    i = fs.position(FamilyIndex((0, 0), (0, 0)))
    x, y = 0.7, -0.4
    assert fs.eval_basis_partial(i, [x, y], 0, 1) == pytest.approx(
        eval_psi(x, 1) * eval_psi(y, 0), rel=1e-13
    )

    fs1 = build_family([AxisSpec(0, 1, (2,), 0.1)])
    i = fs1.position(FamilyIndex((2,), (1,)))
    assert fs1.eval_basis_partial(i, [0.25], 0, 1) == pytest.approx(-8.0, rel=1e-13)


def test_partials_match_finite_differences():
    rng = np.random.default_rng(21)
    checked = 0
    while checked < 500:
        axes = random_axes(rng, int(rng.integers(1, 3)))
        fs = build_family(axes)
        for _ in range(25):
            i = int(rng.integers(0, len(fs)))
            m = int(rng.integers(0, fs.dim))
            order = int(rng.integers(1, 3))
            # sample near the member's support so values are not all ~0
            x = []
            for n, ax in enumerate(axes):
                j, k = fs.j_table[i, n], fs.k_table[i, n]
                x.append(float((k + rng.uniform(-1.5, 1.5)) / 2.0**j))
            x = np.array(x)
            h = 1e-5 * 2.0 ** -float(fs.j_table[i, m])

            def f(t):
                xx = x.copy()
                xx[m] = t
                if order == 1:
                    return fs.eval_basis(i, xx)
                return fs.eval_basis_partial(i, xx, m, 1)

            approx = (f(x[m] + h) - f(x[m] - h)) / (2 * h)
            exact = fs.eval_basis_partial(i, x, m, order)
            pref = 2.0 ** float(
                sum(fs.j_table[i]) * 0.5 + fs.j_table[i, m] * order
            )
            denom = max(abs(exact), 1e-4 * pref)
            assert abs(approx - exact) / denom < 1e-5
            checked += 1


def test_mixed_partial_matches_finite_differences():
    rng = np.random.default_rng(29)
    fs = build_family([AxisSpec(0, 1, (1,), 0.2), AxisSpec(0, 1, (0, 1), 0.2)])
    for _ in range(50):
        i = int(rng.integers(0, len(fs)))
        x = rng.uniform(0, 1, size=2)
        h = 1e-4

        def g(t):
            return fs.eval_basis_partial(i, [t, x[1]], 1, 1)

        def g_at(t0, t1):
            return fs.eval_basis_partial(i, [t0, t1], 1, 1)

        approx = (g_at(x[0] + h, x[1]) - g_at(x[0] - h, x[1])) / (2 * h)
        exact = fs.eval_basis_mixed(i, x, 0, 1)
        assert abs(approx - exact) <= 1e-4 * max(1.0, abs(exact))


def test_factor_matrices_consistency():
    rng = np.random.default_rng(33)
    fs = build_family([AxisSpec(-1, 1, (0, 1), 0.1), AxisSpec(0, 1, (1,), 0.3)])
    pts = rng.uniform(-1, 1, size=(6, 2))
    fac = fs.factor_matrices(pts, max_order=2)
    for p in range(6):
        for i in range(len(fs)):
            val = fac[0][0, p, i] * fac[1][0, p, i]
            assert val == pytest.approx(fs.eval_basis(i, pts[p]), rel=1e-12, abs=1e-300)
            d1 = fac[0][1, p, i] * fac[1][0, p, i]
            assert d1 == pytest.approx(
                fs.eval_basis_partial(i, pts[p], 0, 1), rel=1e-12, abs=1e-300
            )


def test_manifest_contents():
    fs = build_family([AxisSpec(0, 1, (0, 1), 0.25)])
    text = fs.manifest()
    assert "ordering=lex-v1" in text
    assert f"count={len(fs)}" in text
    assert "gamma=0.25" in text


def test_rejects_empty_levels():
    with pytest.raises(ValidationError):
        AxisSpec(0, 1, (), 0.0)
