"""Mixture fitting: hard-assignment hill climbing over Dirichlet-multinomial
clusters on the rating and temporal histograms jointly, BIC model selection,
and conjugate per-user posteriors.

Users are processed in sorted-user_id order internally, and the random
initialization is keyed to user identity (not list position), so permuting
the input order changes nothing. Identical count rows are collapsed with
multiplicities, which keeps per-iteration cost linear in the number of users
with tiny constants.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .ingest import Histograms


@dataclass
class FitLimits:
    """Iteration/tolerance knobs for the outer hill climb and inner
    fixed-point loop."""

    max_outer: int = 100
    tol: float = 1e-5
    inner_max: int = kernels.INNER_MAX_ITER
    inner_tol: float = kernels.INNER_TOL
    restarts: int = 5


@dataclass
class ClusterParams:
    pi: float
    alpha: np.ndarray
    beta: np.ndarray


@dataclass
class BirdModel:
    """A fitted mixture. Cluster indices are 1-based externally (assignments
    values lie in 1..K)."""

    K: int
    clusters: list[ClusterParams]
    user_ids: list[str]
    assignments: np.ndarray          # (m,) int, 1-based
    posterior_rating: np.ndarray     # (m, s): alpha_{z_i} + rating counts
    posterior_temporal: np.ndarray   # (m, d): beta_{z_i} + temporal counts
    total_log_likelihood: float
    bic: float
    trace: list[float] = field(default_factory=list)
    trace_breaks: list[int] = field(default_factory=list)
    n_outer_iterations: int = 0

    @property
    def pis(self) -> np.ndarray:
        return np.array([c.pi for c in self.clusters])

    @property
    def alphas(self) -> np.ndarray:
        return np.array([c.alpha for c in self.clusters])

    @property
    def betas(self) -> np.ndarray:
        return np.array([c.beta for c in self.clusters])

    def cluster_of(self, user_id: str) -> int:
        return int(self.assignments[self.user_ids.index(user_id)])


def _stable_user_hash(user_id: str) -> int:
    return zlib.crc32(user_id.encode("utf-8"))


def _init_assignments(user_ids: list[str], K: int, seed: int, restart: int) -> np.ndarray:
    """Uniform-ish initial cluster per user, keyed to the user's identity so
    the same (seed, restart) gives the same start regardless of input order."""
    mix = (seed * 0x9E3779B97F4A7C15 + restart * 0xC2B2AE3D27D4EB4F) & 0xFFFFFFFFFFFFFFFF
    z = np.fromiter(
        ((_stable_user_hash(uid) * 0x100000001B3 + mix) % (2**61 - 1) % K for uid in user_ids),
        dtype=np.int64,
        count=len(user_ids),
    )
    return z


class _CompressedSide:
    """Unique count rows with an inverse index, for one side (rating or
    temporal) of the population."""

    def __init__(self, counts: np.ndarray):
        rows, inverse = np.unique(counts, axis=0, return_inverse=True)
        self.rows_int = rows.astype(np.int64)
        self.rows = rows.astype(np.float64)
        self.totals_int = self.rows_int.sum(axis=1)
        self.totals = self.totals_int.astype(np.float64)
        self.inverse = np.asarray(inverse).ravel()
        self.vmax = int(self.rows_int.max(initial=0))
        self.nmax = int(self.totals_int.max(initial=0))

    def member_weights(self, member_mask: np.ndarray) -> np.ndarray:
        return np.bincount(self.inverse[member_mask], minlength=len(self.rows)).astype(float)

    def cluster_tables(self, z: np.ndarray, K: int) -> tuple[np.ndarray, np.ndarray]:
        """Per-cluster weighted value-count tables: (K, d, vmax+1) over
        component counts and (K, nmax+1) over member totals."""
        d = self.rows_int.shape[1]
        tables = np.zeros((K, d, self.vmax + 1))
        total_tables = np.zeros((K, self.nmax + 1))
        for k in range(K):
            w = self.member_weights(z == k)
            for l in range(d):
                tables[k, l] = np.bincount(
                    self.rows_int[:, l], weights=w, minlength=self.vmax + 1
                )
            total_tables[k] = np.bincount(
                self.totals_int, weights=w, minlength=self.nmax + 1
            )
        return tables, total_tables

    def marginal_table(self, a: np.ndarray) -> np.ndarray:
        """Per-unique-row dirmult log-marginal under concentration a."""
        return kernels.dirmult_log_marginal_rows(self.rows, a)


def _score_matrix(
    x: _CompressedSide, d: _CompressedSide, pis: np.ndarray,
    alphas: np.ndarray, betas: np.ndarray,
) -> np.ndarray:
    """(m, K) per-user log pi_k + log marginal_x + log marginal_d."""
    K = len(pis)
    with np.errstate(divide="ignore"):
        log_pi = np.log(pis)
    cols = []
    for k in range(K):
        cols.append(
            log_pi[k]
            + x.marginal_table(alphas[k])[x.inverse]
            + d.marginal_table(betas[k])[d.inverse]
        )
    return np.column_stack(cols)


def _fit_once(
    user_ids: list[str],
    x: _CompressedSide,
    d: _CompressedSide,
    K: int,
    seed: int,
    restart: int,
    limits: FitLimits,
):
    m = len(user_ids)
    s = x.rows.shape[1]
    dim_d = d.rows.shape[1]
    z = _init_assignments(user_ids, K, seed, restart)
    alphas = np.ones((K, s))
    betas = np.ones((K, dim_d))
    pis = np.bincount(z, minlength=K).astype(float) / m

    trace: list[float] = []
    breaks: list[int] = []
    scores = _score_matrix(x, d, pis, alphas, betas)

    def current_ll() -> float:
        return float(scores[np.arange(m), z].sum())

    prev_ll = -np.inf
    n_iter = 0
    for n_iter in range(1, limits.max_outer + 1):
        # Reseed any empty cluster with the worst-explained user before pi is
        # recomputed (an empty cluster would pin log pi at -inf forever).
        sizes = np.bincount(z, minlength=K)
        reseeded = False
        for k in np.flatnonzero(sizes == 0):
            per_user = scores[np.arange(m), z]
            worst = int(np.argmin(per_user))
            z[worst] = k
            reseeded = True
        if reseeded:
            breaks.append(len(trace))

        # (a) cluster proportions
        pis = np.bincount(z, minlength=K).astype(float) / m
        scores = _score_matrix(x, d, pis, alphas, betas)
        trace.append(current_ll())

        # (b) per-cluster concentration updates, batched across clusters
        tx, tnx = x.cluster_tables(z, K)
        alphas = kernels.fit_dirmult_concentration_batch(
            tx, tnx, alphas, limits.inner_tol, limits.inner_max
        )
        td, tnd = d.cluster_tables(z, K)
        betas = kernels.fit_dirmult_concentration_batch(
            td, tnd, betas, limits.inner_tol, limits.inner_max
        )
        scores = _score_matrix(x, d, pis, alphas, betas)
        trace.append(current_ll())

        # (c) reassignment; argmax ties resolve to the lowest cluster index
        new_z = np.argmax(scores, axis=1)
        changed = int(np.count_nonzero(new_z != z))
        z = new_z
        ll = current_ll()
        trace.append(ll)

        if changed == 0 and ll - prev_ll < limits.tol:
            prev_ll = ll
            break
        prev_ll = ll

    return z, pis, alphas, betas, prev_ll, trace, breaks, n_iter


def _num_free_params(K: int, s: int, dim_d: int) -> int:
    return (K - 1) + K * (s + dim_d)


def fit_bird(
    histograms: Histograms,
    K: int,
    seed: int = 0,
    limits: FitLimits | None = None,
) -> BirdModel:
    """Fit a K-cluster model with random restarts, keeping the best joint
    log-likelihood."""
    limits = limits or FitLimits()
    if K < 1:
        raise ValueError("K must be >= 1")
    if K > len(histograms):
        raise ValueError(f"K={K} exceeds the number of users ({len(histograms)})")

    order = np.argsort(np.array(histograms.user_ids, dtype=object))
    user_ids = [histograms.user_ids[i] for i in order]
    rating = histograms.rating[order]
    temporal = histograms.temporal[order]
    x = _CompressedSide(rating)
    d = _CompressedSide(temporal)

    best = None
    n_restarts = max(1, limits.restarts) if K > 1 else 1
    for r in range(n_restarts):
        result = _fit_once(user_ids, x, d, K, seed, r, limits)
        if best is None or result[4] > best[4]:
            best = result
    z, pis, alphas, betas, ll, trace, breaks, n_iter = best

    m = len(user_ids)
    bic = -2.0 * ll + _num_free_params(K, rating.shape[1], temporal.shape[1]) * np.log(m)
    return BirdModel(
        K=K,
        clusters=[ClusterParams(float(pis[k]), alphas[k].copy(), betas[k].copy()) for k in range(K)],
        user_ids=user_ids,
        assignments=z + 1,
        posterior_rating=alphas[z] + rating,
        posterior_temporal=betas[z] + temporal,
        total_log_likelihood=float(ll),
        bic=float(bic),
        trace=trace,
        trace_breaks=breaks,
        n_outer_iterations=n_iter,
    )


def select_k(
    histograms: Histograms,
    k_range,
    seed: int = 0,
    limits: FitLimits | None = None,
) -> BirdModel:
    """Fit every K in k_range and return the model minimizing BIC (ties go to
    the smaller K)."""
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise ValueError("k_range is empty")
    best = None
    for k in ks:
        model = fit_bird(histograms, k, seed=seed, limits=limits)
        if best is None or model.bic < best.bic:
            best = model
    return best


def log_joint(model: BirdModel, histograms: Histograms) -> float:
    """sum_i log pi_{z_i} + log marginal of the user's rating counts under
    alpha_{z_i} + the same for temporal counts."""
    index = {uid: i for i, uid in enumerate(histograms.user_ids)}
    rows = np.array([index[uid] for uid in model.user_ids])
    rating = histograms.rating[rows].astype(float)
    temporal = histograms.temporal[rows].astype(float)
    z = model.assignments - 1
    total = 0.0
    for k in range(model.K):
        mask = z == k
        if not np.any(mask):
            continue
        total += mask.sum() * np.log(model.clusters[k].pi)
        total += kernels.dirmult_log_marginal_rows(rating[mask], model.clusters[k].alpha).sum()
        total += kernels.dirmult_log_marginal_rows(temporal[mask], model.clusters[k].beta).sum()
    return float(total)


def model_to_dict(model: BirdModel, bucketing: dict | None = None) -> dict:
    doc = {
        "K": model.K,
        "clusters": [
            {"pi": c.pi, "alpha": list(map(float, c.alpha)), "beta": list(map(float, c.beta))}
            for c in model.clusters
        ],
        "assignments": {uid: int(k) for uid, k in zip(model.user_ids, model.assignments)},
        "bic": model.bic,
        "log_likelihood": model.total_log_likelihood,
    }
    if bucketing is not None:
        doc["bucketing"] = bucketing
    return doc


def model_from_dict(doc: dict) -> BirdModel:
    clusters = [
        ClusterParams(float(c["pi"]), np.array(c["alpha"], float), np.array(c["beta"], float))
        for c in doc["clusters"]
    ]
    user_ids = sorted(doc["assignments"])
    z = np.array([doc["assignments"][uid] for uid in user_ids], dtype=np.int64)
    s = len(clusters[0].alpha)
    dim_d = len(clusters[0].beta)
    # Posteriors need the histograms; loaders re-attach them via
    # attach_posteriors when data is available.
    m = len(user_ids)
    return BirdModel(
        K=int(doc["K"]),
        clusters=clusters,
        user_ids=user_ids,
        assignments=z,
        posterior_rating=np.zeros((m, s)),
        posterior_temporal=np.zeros((m, dim_d)),
        total_log_likelihood=float(doc["log_likelihood"]),
        bic=float(doc["bic"]),
    )


def attach_posteriors(model: BirdModel, histograms: Histograms) -> None:
    """Recompute conjugate posteriors (prior + counts) from histograms, e.g.
    after loading a serialized model."""
    index = {uid: i for i, uid in enumerate(histograms.user_ids)}
    rows = np.array([index[uid] for uid in model.user_ids])
    z = model.assignments - 1
    model.posterior_rating = model.alphas[z] + histograms.rating[rows]
    model.posterior_temporal = model.betas[z] + histograms.temporal[rows]


def save_model(model: BirdModel, path, bucketing: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(model_to_dict(model, bucketing), f, indent=2)
        f.write("\n")


def load_model(path) -> tuple[BirdModel, dict | None]:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    return model_from_dict(doc), doc.get("bucketing")
