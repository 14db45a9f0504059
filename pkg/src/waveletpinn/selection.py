"""Family selection after pre-training: scores, thresholds, top-k, transfer.

Each pre-trained family member induces response vectors: the PDE operator
applied to its scaled term c_i Psi_i at the residual points, and the
supervised operator applied at the condition points.  Alignment with the
problem's right-hand side gives per-member similarity scores

    score_i = <V_i, rhs> / max_j |<V_j, rhs>|,

in [-1, 1] with at least one member attaining |1|.  A condition whose
right-hand side is identically zero makes that quotient meaningless; the
fallback score is then mean(|V_i|) / max_j max-abs-entry(V_j), where LOWER
response magnitude marks the physically relevant members (they are the
ones not fighting a homogeneous condition).

Scores are computed per condition category ("pde", "ic", "bc"),
concatenating the points of same-category conditions, which is how the
per-category threshold presets are stated.  The active set is the union
of every category's threshold survivors and the top-k percent of members
by coefficient magnitude.  Active members hand their dyadic (j, k) to the
adaptive model as continuous initial values w = 2^j, b = -k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptySelectionError, ValidationError
from .loss import _block_size, _map_blocks, default_workers, fixed_target_matrix
from .model import ModelState, adaptive_from_family, as_states
from .problems import PdeProblem, PointSet


@dataclass(frozen=True)
class Threshold:
    """Score cutoff with an explicit comparison direction."""

    value: float
    direction: str  # "greater" | "less"

    def __post_init__(self):
        if self.direction not in ("greater", "less"):
            raise ValidationError(f"direction must be greater/less, got {self.direction}")
        if not math.isfinite(self.value):
            raise ValidationError("threshold value must be finite")

    def mask(self, scores: np.ndarray) -> np.ndarray:
        if self.direction == "greater":
            return scores > self.value
        return scores < self.value


@dataclass(frozen=True)
class SelectionConfig:
    """Per-category thresholds plus the coefficient-magnitude keep rate."""

    thresholds: dict = field(default_factory=dict)  # category -> Threshold
    top_kappa_percent: float = 5.0
    zero_rhs_tol: float = 1e-12
    rescale_coefficients: bool = True

    def __post_init__(self):
        if not 0.0 < self.top_kappa_percent <= 100.0:
            raise ValidationError(
                f"top_kappa_percent must be in (0, 100], got {self.top_kappa_percent}"
            )
        for cat in self.thresholds:
            if cat not in ("pde", "ic", "bc"):
                raise ValidationError(f"unknown threshold category {cat!r}")


@dataclass
class Scores:
    """Per-member scores for one category."""

    values: np.ndarray
    lower_is_better: bool  # True when the zero-rhs fallback was used


@dataclass
class ActiveSet:
    """Members surviving selection, with their adaptive initialization."""

    indices: np.ndarray  # sorted flat indices into the family
    j: np.ndarray  # (n, d)
    k: np.ndarray  # (n, d)
    w: np.ndarray  # 2^j
    b: np.ndarray  # -k
    coeffs: np.ndarray  # transferred (optionally rescaled) coefficients
    from_threshold: dict = field(default_factory=dict)  # category -> index array
    from_top_coeffs: np.ndarray | None = None

    def __post_init__(self):
        if self.indices.size == 0:
            raise EmptySelectionError(
                "selection produced an empty active set; relax thresholds or raise kappa"
            )
        if len(np.unique(self.indices)) != self.indices.size:
            raise ValidationError("active set contains duplicate indices")

    def __len__(self) -> int:
        return int(self.indices.size)

    def manifest_lines(self) -> list[str]:
        lines = [f"active-set count={len(self)}"]
        for n in range(len(self)):
            lines.append(
                f"member index={int(self.indices[n])} "
                f"j={','.join(str(int(v)) for v in self.j[n])} "
                f"k={','.join(str(int(v)) for v in self.k[n])} "
                f"w={','.join(repr(float(v)) for v in self.w[n])} "
                f"b={','.join(repr(float(v)) for v in self.b[n])} "
                f"c={float(self.coeffs[n])!r}"
            )
        return lines


# -- response vectors and scores -------------------------------------------------


def response_vectors(
    problem: PdeProblem,
    family,
    coeffs: np.ndarray,
    pts: PointSet,
    field_index: int = 0,
    workers: int | None = None,
):
    """Full response matrices of every scaled member c_i Psi_i.

    Returns (R, B): R is (n_family, n_relevant_equations * n_res) with the
    PDE operator's field_index terms applied to each member, rows stacked
    over equations; B maps condition name -> (n_family, n_cond) for the
    conditions whose operator touches field_index.  Small-scale/diagnostic
    use; the training pipeline computes score reductions blockwise instead.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    r_rows = []
    for recipe, _ in problem.equations:
        terms = [t for t in recipe.terms if t.field == field_index]
        if not terms:
            continue
        a = np.zeros((pts.residual.shape[0], len(family)))
        for t in terms:
            u = fixed_target_matrix(family, pts.residual, t.target, workers=workers)
            a += t.coeff_at(pts.residual)[:, None] * u
        r_rows.append(a.T * coeffs[:, None])
    if not r_rows:
        raise ValidationError(f"no equation references field {field_index}")
    r = np.concatenate(r_rows, axis=1)

    b = {}
    for cond in problem.conditions:
        terms = [t for t in cond.recipe.terms if t.field == field_index]
        if not terms:
            continue
        x = pts.supervised[cond.name]
        a = np.zeros((x.shape[0], len(family)))
        for t in terms:
            u = fixed_target_matrix(family, x, t.target, workers=workers)
            a += t.coeff_at(x)[:, None] * u
        b[cond.name] = a.T * coeffs[:, None]
    return r, b


def similarity_scores(v: np.ndarray, rhs: np.ndarray, zero_rhs_tol: float = 1e-12) -> Scores:
    """Scores of response rows v (n_members, n_points) against rhs values."""
    v = np.asarray(v, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if v.shape[1] != rhs.shape[0]:
        raise ValidationError(
            f"responses have {v.shape[1]} points, rhs has {rhs.shape[0]}"
        )
    if np.max(np.abs(rhs), initial=0.0) <= zero_rhs_tol:
        denom = np.max(np.abs(v), initial=0.0)
        if denom == 0.0:
            raise EmptySelectionError("all response vectors are zero; nothing to rank")
        return Scores(values=np.mean(np.abs(v), axis=1) / denom, lower_is_better=True)
    dots = v @ rhs
    denom = np.max(np.abs(dots))
    if denom == 0.0:
        raise EmptySelectionError("all responses are orthogonal to the right-hand side")
    return Scores(values=dots / denom, lower_is_better=False)


def _streamed_stats(family, x, terms, rhs, workers):
    """Blockwise (dot, abs-sum, abs-max) of A columns, A = sum coeff * U."""
    n_fam = len(family)
    block = _block_size(n_fam)
    workers = default_workers() if workers is None else workers

    def one(s, t):
        a = np.zeros((t - s, n_fam))
        for term in terms:
            u = fixed_target_matrix(family, x[s:t], term.target, workers=1)
            a += term.coeff_at(x[s:t])[:, None] * u
        return rhs[s:t] @ a, np.abs(a).sum(axis=0), np.abs(a).max(axis=0)

    dot = np.zeros(n_fam)
    abs_sum = np.zeros(n_fam)
    abs_max = np.zeros(n_fam)
    for d_, s_, m_ in _map_blocks(one, x.shape[0], block, workers):
        dot += d_
        abs_sum += s_
        abs_max = np.maximum(abs_max, m_)
    return dot, abs_sum, abs_max


def category_scores(
    problem: PdeProblem,
    family,
    coeffs: np.ndarray,
    pts: PointSet,
    field_index: int = 0,
    zero_rhs_tol: float = 1e-12,
    workers: int | None = None,
) -> dict:
    """Scores per category without materializing response matrices.

    "pde" stacks every equation touching the field over the residual
    points; "ic"/"bc" stack their same-category conditions.  Numerically
    identical to running similarity_scores on the full response_vectors
    output (cross-checked in tests).
    """
    coeffs = np.asarray(coeffs, dtype=float)
    groups: dict[str, list] = {}
    for recipe, source in problem.equations:
        terms = [t for t in recipe.terms if t.field == field_index]
        if terms:
            groups.setdefault("pde", []).append((pts.residual, terms, source(pts.residual)))
    for cond in problem.conditions:
        terms = [t for t in cond.recipe.terms if t.field == field_index]
        if terms:
            x = pts.supervised[cond.name]
            groups.setdefault(cond.category, []).append((x, terms, cond.data(x)))

    out = {}
    for cat, parts in groups.items():
        dot = np.zeros(len(family))
        abs_sum = np.zeros(len(family))
        abs_max = np.zeros(len(family))
        n_total = 0
        rhs_max = 0.0
        for x, terms, rhs in parts:
            d_, s_, m_ = _streamed_stats(family, x, terms, rhs, workers)
            dot += d_
            abs_sum += s_
            abs_max = np.maximum(abs_max, m_)
            n_total += x.shape[0]
            rhs_max = max(rhs_max, float(np.max(np.abs(rhs), initial=0.0)))
        if rhs_max <= zero_rhs_tol:
            denom = float(np.max(np.abs(coeffs) * abs_max, initial=0.0))
            if denom == 0.0:
                raise EmptySelectionError(
                    f"category {cat!r}: all response vectors are zero"
                )
            out[cat] = Scores(np.abs(coeffs) * abs_sum / n_total / denom, lower_is_better=True)
        else:
            dots = coeffs * dot
            denom = float(np.max(np.abs(dots)))
            if denom == 0.0:
                raise EmptySelectionError(
                    f"category {cat!r}: responses orthogonal to the right-hand side"
                )
            out[cat] = Scores(dots / denom, lower_is_better=False)
    return out


# -- active-set assembly ----------------------------------------------------------


def top_coefficient_indices(coeffs: np.ndarray, kappa_percent: float) -> np.ndarray:
    """Indices of the ceil(kappa% * n) largest |c_i|; ties break low-index."""
    coeffs = np.asarray(coeffs, dtype=float)
    count = math.ceil(kappa_percent / 100.0 * coeffs.size)
    order = np.lexsort((np.arange(coeffs.size), -np.abs(coeffs)))
    return np.sort(order[:count])


def select_active(
    scores: dict,
    coeffs: np.ndarray,
    family,
    cfg: SelectionConfig,
) -> ActiveSet:
    """Union of threshold survivors (per category) and top-kappa members."""
    if not scores:
        raise ValidationError("at least one scored category is required")
    coeffs = np.asarray(coeffs, dtype=float)
    keep = np.zeros(len(family), dtype=bool)
    from_threshold = {}
    for cat, th in cfg.thresholds.items():
        if cat not in scores:
            continue
        mask = th.mask(scores[cat].values)
        from_threshold[cat] = np.flatnonzero(mask)
        keep |= mask
    top = top_coefficient_indices(coeffs, cfg.top_kappa_percent)
    keep[top] = True

    indices = np.flatnonzero(keep)
    if indices.size == 0:
        raise EmptySelectionError(
            "no member passed any threshold and kappa selected none; relax the config"
        )
    j = family.j_table[indices].astype(float)
    k = family.k_table[indices].astype(float)
    c = coeffs[indices].copy()
    if cfg.rescale_coefficients:
        c *= 2.0 ** (0.5 * j.sum(axis=1))
    return ActiveSet(
        indices=indices,
        j=j.astype(int),
        k=k.astype(int),
        w=2.0**j,
        b=-k,
        coeffs=c,
        from_threshold=from_threshold,
        from_top_coeffs=top,
    )


def transfer_model(family, state: ModelState, active: ActiveSet, cfg: SelectionConfig) -> ModelState:
    """Adaptive model seeded from one pre-trained field's active members."""
    state = as_states(state)[0]
    return adaptive_from_family(
        family,
        state.coeffs,
        state.bias,
        active.indices,
        rescale_coefficients=cfg.rescale_coefficients,
    )
