"""Dirichlet / Dirichlet-multinomial probability primitives.

Everything here is a pure function of its inputs (random sources are passed
in explicitly), built on log-gamma throughout; no raw factorials appear
anywhere. The marginal likelihood is the sequence (exchangeable) probability,
i.e. it carries no multinomial coefficient.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from .errors import DomainError

# Floor applied to every concentration component after a fixed-point step;
# all-zero counts would otherwise drive components to 0 and out of the
# Dirichlet domain.
ALPHA_FLOOR = 1e-6

# Inner fixed-point loop defaults.
INNER_TOL = 1e-6
INNER_MAX_ITER = 200

# Dirichlet samples are clamped away from exact zero so downstream log-density
# evaluations stay finite.
SAMPLE_FLOOR = 1e-300

SIMPLEX_TOL = 1e-9


def _check_concentration(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 1 or a.size < 2:
        raise ValueError("concentration must be a vector of length >= 2")
    if not np.all(a > 0):
        raise ValueError("concentration entries must be strictly positive")
    return a


def _check_simplex(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise ValueError("simplex point must be a vector")
    if np.any(p < 0):
        raise ValueError("simplex point entries must be non-negative")
    if abs(p.sum() - 1.0) > SIMPLEX_TOL:
        raise ValueError(f"simplex point sums to {p.sum()!r}, not 1")
    return p


def dirichlet_log_pdf(p, a) -> float:
    """Log-density of Dirichlet(a) at the simplex point p.

    Zero coordinates are handled per the density's true behavior: a_l > 1
    gives -inf (density vanishes), a_l == 1 contributes nothing, and a_l < 1
    is a DomainError (the density diverges at that face).
    """
    p = _check_simplex(p)
    a = _check_concentration(a)
    if p.size != a.size:
        raise ValueError(f"dimension mismatch: p has {p.size}, a has {a.size}")

    zero = p == 0.0
    if np.any(zero):
        if np.any(a[zero] < 1.0):
            raise DomainError("Dirichlet density diverges: p_l = 0 with a_l < 1")
        if np.any(a[zero] > 1.0):
            return float("-inf")
    norm = gammaln(a.sum()) - gammaln(a).sum()
    with np.errstate(divide="ignore"):
        terms = np.where(zero, 0.0, (a - 1.0) * np.log(np.where(zero, 1.0, p)))
    return float(norm + terms.sum())


def dirichlet_log_pdf_rows(points: np.ndarray, alphas: np.ndarray) -> np.ndarray:
    """Log-densities for a batch of strictly positive simplex points.

    points: (n, d), alphas: (K, d); returns (n, K). No zero handling: callers
    must clamp coordinates away from zero first.
    """
    points = np.asarray(points, dtype=float)
    alphas = np.atleast_2d(np.asarray(alphas, dtype=float))
    norm = gammaln(alphas.sum(axis=1)) - gammaln(alphas).sum(axis=1)  # (K,)
    return np.log(points) @ (alphas - 1.0).T + norm


def dirmult_log_marginal(counts, a) -> float:
    """Log-probability of an observation sequence with the given counts under
    a Dirichlet(a) prior on the multinomial parameter (Polya urn law;
    sequence form, no multinomial coefficient)."""
    counts = np.asarray(counts, dtype=float)
    a = _check_concentration(a)
    if counts.ndim != 1 or counts.size != a.size:
        raise ValueError("dimension mismatch between counts and concentration")
    if np.any(counts < 0):
        raise ValueError("counts must be non-negative")
    n = counts.sum()
    A = a.sum()
    return float(gammaln(A) - gammaln(n + A) + (gammaln(counts + a) - gammaln(a)).sum())


def dirmult_log_marginal_rows(counts: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Vectorized marginal over rows of a count matrix. counts: (n, d)."""
    counts = np.asarray(counts, dtype=float)
    a = np.asarray(a, dtype=float)
    n = counts.sum(axis=1)
    A = a.sum()
    return gammaln(A) - gammaln(n + A) + (gammaln(counts + a) - gammaln(a)).sum(axis=1)


def sample_dirichlet(a, rng: np.random.Generator) -> np.ndarray:
    """One draw from Dirichlet(a) via normalized Gamma(a_l, 1) draws."""
    return sample_dirichlet_many(a, 1, rng)[0]


def sample_dirichlet_many(a, n: int, rng: np.random.Generator) -> np.ndarray:
    """(n, d) matrix of Dirichlet(a) draws, each row clamped into the open
    simplex interior (coordinates >= SAMPLE_FLOOR)."""
    a = _check_concentration(a)
    g = rng.gamma(a, size=(n, a.size))
    g = np.maximum(g, SAMPLE_FLOOR)
    return g / g.sum(axis=1, keepdims=True)


def _safe_ratio_sum(counts: np.ndarray, a, weights: np.ndarray | None = None):
    """sum_i w_i * c_il / (c_il - 1 + a_l) with zero counts contributing 0."""
    positive = counts > 0
    denom = np.where(positive, counts - 1.0 + a, 1.0)
    ratio = np.where(positive, counts / denom, 0.0)
    if weights is None:
        return ratio.sum(axis=0)
    return weights @ ratio


def fixed_point_step(
    counts: np.ndarray,
    totals: np.ndarray,
    a: np.ndarray,
    weights: np.ndarray | None = None,
) -> tuple[np.ndarray, bool]:
    """One application of the maximum-likelihood fixed-point update for a
    Dirichlet-multinomial concentration, with optional row weights (used when
    identical count rows are collapsed).

    Returns (new_a, stalled). A non-positive denominator sum means the member
    set carries no observations; the input is returned unchanged with the
    stall flag set.
    """
    num = _safe_ratio_sum(counts, a, weights)
    den = _safe_ratio_sum(totals[:, None], np.array([a.sum()]), weights)[0]
    if den <= 0.0:
        return a, True
    return np.maximum(a * num / den, ALPHA_FLOOR), False


def fixed_point_update(a, member_counts) -> tuple[np.ndarray, bool]:
    """Public single-step form over a list/array of member count vectors."""
    a = _check_concentration(a)
    counts = np.asarray(member_counts, dtype=float)
    if counts.ndim == 1:
        counts = counts[None, :]
    if counts.shape[0] == 0:
        raise ValueError("member_counts must be non-empty")
    if counts.shape[1] != a.size:
        raise ValueError("dimension mismatch between member counts and a")
    return fixed_point_step(counts, counts.sum(axis=1), a)


def weighted_marginal_sum(
    counts: np.ndarray,
    totals: np.ndarray,
    a: np.ndarray,
    weights: np.ndarray | None = None,
) -> float:
    """sum_i w_i * dirmult_log_marginal(counts_i, a), vectorized."""
    A = a.sum()
    per_row = gammaln(A) - gammaln(totals + A) + (gammaln(counts + a) - gammaln(a)).sum(axis=1)
    if weights is None:
        return float(per_row.sum())
    return float(weights @ per_row)


class CountValueStats:
    """Weighted value-count tables for a set of count vectors.

    The fixed-point numerator/denominator and the summed marginal likelihood
    only depend on how often each integer count value occurs per component,
    so collapsing to value tables makes every inner iteration independent of
    the member count.
    """

    def __init__(self, counts: np.ndarray, totals: np.ndarray, weights: np.ndarray | None = None):
        counts = np.asarray(counts).astype(np.int64)
        totals = np.asarray(totals).astype(np.int64)
        d = counts.shape[1]
        vmax = int(counts.max(initial=0))
        self.per_component = np.stack(
            [np.bincount(counts[:, l], weights=weights, minlength=vmax + 1) for l in range(d)]
        )  # (d, vmax + 1)
        self.per_total = np.bincount(totals, weights=weights, minlength=int(totals.max(initial=0)) + 1)
        self.values = np.arange(vmax + 1, dtype=float)
        self.total_values = np.arange(len(self.per_total), dtype=float)

    def fixed_point(self, a: np.ndarray) -> tuple[np.ndarray, bool]:
        """One update; zero counts contribute 0 to the numerator, zero totals
        contribute 0 to the denominator."""
        c = self.values[1:]
        num = (self.per_component[:, 1:] * (c / (c - 1.0 + a[:, None]))).sum(axis=1)
        n = self.total_values[1:]
        den = float((self.per_total[1:] * (n / (n - 1.0 + a.sum()))).sum())
        if den <= 0.0:
            return a, True
        return np.maximum(a * num / den, ALPHA_FLOOR), False

    def marginal_sum(self, a: np.ndarray) -> float:
        A = a.sum()
        out = float((self.per_total * (gammaln(A) - gammaln(self.total_values + A))).sum())
        out += float(
            (self.per_component * (gammaln(self.values + a[:, None]) - gammaln(a)[:, None])).sum()
        )
        return out


try:
    from numba import njit as _njit
except ImportError:  # pragma: no cover - numba is a soft dependency
    _njit = None


def _batch_marginal_py(tables, total_tables, a):
    A = a.sum(axis=1)
    vals = np.arange(total_tables.shape[1], dtype=float)
    out = (total_tables * (gammaln(A)[:, None] - gammaln(vals + A[:, None]))).sum(axis=1)
    full = np.arange(tables.shape[2], dtype=float)
    out += (tables * (gammaln(full + a[..., None]) - gammaln(a)[..., None])).sum(axis=(1, 2))
    return out


def _batch_fixed_point_py(tables, total_tables, a0, tol, max_iter, floor):
    a = a0.copy()
    K = tables.shape[0]
    c = np.arange(1, tables.shape[2], dtype=float)
    n = np.arange(1, total_tables.shape[1], dtype=float)
    active = np.ones(K, dtype=bool)
    for _ in range(max_iter):
        num = (tables[:, :, 1:] * (c / (c - 1.0 + a[..., None]))).sum(axis=2)
        den = (total_tables[:, 1:] * (n / (n - 1.0 + a.sum(axis=1)[:, None]))).sum(axis=1)
        stalled = den <= 0.0
        new_a = np.where(
            (active & ~stalled)[:, None],
            np.maximum(a * num / np.where(stalled, 1.0, den)[:, None], floor),
            a,
        )
        rel = np.max(np.abs(new_a - a) / np.maximum(np.abs(a), floor), axis=1)
        a = new_a
        active &= (rel >= tol) & ~stalled
        if not active.any():
            break
    return a


if _njit is not None:
    import math

    @_njit(cache=True)
    def _batch_fixed_point_jit(tables, total_tables, a0, tol, max_iter, floor):  # pragma: no cover
        K, d, V = tables.shape
        N = total_tables.shape[1]
        a = a0.copy()
        for k in range(K):
            for _ in range(max_iter):
                A = 0.0
                for l in range(d):
                    A += a[k, l]
                den = 0.0
                for v in range(1, N):
                    t = total_tables[k, v]
                    if t > 0.0:
                        den += t * v / (v - 1.0 + A)
                if den <= 0.0:
                    break
                rel = 0.0
                for l in range(d):
                    num = 0.0
                    for v in range(1, V):
                        t = tables[k, l, v]
                        if t > 0.0:
                            num += t * v / (v - 1.0 + a[k, l])
                    na = a[k, l] * num / den
                    if na < floor:
                        na = floor
                    scale = abs(a[k, l])
                    if scale < floor:
                        scale = floor
                    r = abs(na - a[k, l]) / scale
                    if r > rel:
                        rel = r
                    a[k, l] = na
                if rel < tol:
                    break
        return a

else:  # pragma: no cover
    _batch_fixed_point_jit = None


def fit_dirmult_concentration_batch(
    tables: np.ndarray,
    total_tables: np.ndarray,
    a0: np.ndarray,
    tol: float = INNER_TOL,
    max_iter: int = INNER_MAX_ITER,
) -> np.ndarray:
    """Run the fixed-point loop for several clusters at once.

    tables: (K, d, V) weighted value counts per cluster/component;
    total_tables: (K, N) weighted value counts of member totals; a0: (K, d).
    Stalled clusters (no observations) keep their input, and any cluster whose
    final iterate lowers its member likelihood reverts to its start.
    """
    a0 = np.asarray(a0, dtype=float)
    if _batch_fixed_point_jit is not None:
        a = _batch_fixed_point_jit(
            np.ascontiguousarray(tables),
            np.ascontiguousarray(total_tables),
            a0.copy(),
            tol,
            max_iter,
            ALPHA_FLOOR,
        )
    else:
        a = _batch_fixed_point_py(tables, total_tables, a0, tol, max_iter, ALPHA_FLOOR)
    revert = _batch_marginal_py(tables, total_tables, a) < _batch_marginal_py(
        tables, total_tables, a0
    )
    if revert.any():
        a[revert] = a0[revert]
    return a


def fit_dirmult_concentration(
    counts: np.ndarray,
    totals: np.ndarray,
    a0: np.ndarray,
    weights: np.ndarray | None = None,
    tol: float = INNER_TOL,
    max_iter: int = INNER_MAX_ITER,
) -> np.ndarray:
    """Iterate the fixed-point update until the max relative change per
    component drops below tol or max_iter is hit.

    The final iterate is only accepted if it does not decrease the member
    likelihood relative to the start; this keeps the outer hill climb
    monotone even if a clamped step overshoots.
    """
    stats = CountValueStats(counts, totals, weights)
    a = np.asarray(a0, dtype=float).copy()
    start_ll = stats.marginal_sum(a)
    for _ in range(max_iter):
        new_a, stalled = stats.fixed_point(a)
        if stalled:
            break
        rel = np.max(np.abs(new_a - a) / np.maximum(np.abs(a), ALPHA_FLOOR))
        a = new_a
        if rel < tol:
            break
    if stats.marginal_sum(a) < start_ll:
        return np.asarray(a0, dtype=float).copy()
    return a
