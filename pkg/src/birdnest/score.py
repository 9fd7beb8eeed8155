"""Suspiciousness scoring: global mixture densities over the simplex,
per-user expected surprise via Monte Carlo over the conjugate posterior, and
the combined normalized score with a deterministic ranking.

Per-user randomness is sub-seeded from (global seed, a stable hash of the
user_id, side), so scores do not depend on user iteration order or on any
parallel schedule.
"""

from __future__ import annotations

import csv
import json
import logging
import zlib
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DomainError
from .fit import BirdModel
from .ingest import Histograms

log = logging.getLogger(__name__)

DEFAULT_N_SAMPLES = 128

RATING_SIDE = "rating"
TEMPORAL_SIDE = "temporal"
_SIDE_CODE = {RATING_SIDE: 1, TEMPORAL_SIDE: 2}


@dataclass(frozen=True)
class SuspiciousnessRecord:
    user_id: str
    s_x: float
    s_delta: float
    nest: float
    rank: int
    cluster: int
    n_ratings: int


def _side_params(model: BirdModel, side: str) -> np.ndarray:
    if side == RATING_SIDE:
        return model.alphas
    if side == TEMPORAL_SIDE:
        return model.betas
    raise ValueError(f"unknown side {side!r}")


def log_global_density(p, model: BirdModel, side: str) -> float:
    """log sum_k pi_k * Dirichlet(p; params_k), via log-sum-exp."""
    p = kernels._check_simplex(np.asarray(p, dtype=float))
    params = _side_params(model, side)
    if p.size != params.shape[1]:
        raise ValueError(
            f"point has dimension {p.size}, {side} side expects {params.shape[1]}"
        )
    terms = np.array(
        [
            np.log(c.pi) + kernels.dirichlet_log_pdf(p, a)
            for c, a in zip(model.clusters, params)
        ]
    )
    return _logsumexp(terms)


def _logsumexp(terms: np.ndarray) -> float:
    hi = np.max(terms)
    if not np.isfinite(hi):
        return float(hi)  # all -inf (or an inf spike) dominates
    return float(hi + np.log(np.exp(terms - hi).sum()))


def _log_global_density_rows(points: np.ndarray, model: BirdModel, side: str) -> np.ndarray:
    """Vectorized log F over (n, dim) strictly positive simplex points."""
    params = _side_params(model, side)
    with np.errstate(divide="ignore"):
        log_pi = np.log(model.pis)
    terms = kernels.dirichlet_log_pdf_rows(points, params) + log_pi  # (n, K)
    hi = terms.max(axis=1)
    out = np.where(
        np.isfinite(hi),
        hi + np.log(np.exp(terms - hi[:, None]).sum(axis=1)),
        hi,
    )
    return out


def _user_rng(seed: int, user_id: str, side: str) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed), zlib.crc32(user_id.encode("utf-8")), _SIDE_CODE[side]])
    return np.random.default_rng(ss)


def expected_surprise(
    posterior,
    model: BirdModel,
    side: str,
    n_samples: int,
    rng: np.random.Generator,
) -> float:
    """Monte Carlo mean of -log F over draws from the user's posterior
    Dirichlet. Draws where the mixture density underflows to zero are
    excluded (logged); if every draw is excluded this raises."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    draws = kernels.sample_dirichlet_many(posterior, n_samples, rng)
    log_f = _log_global_density_rows(draws, model, side)
    finite = np.isfinite(log_f)
    excluded = int(n_samples - finite.sum())
    if excluded == n_samples:
        raise DomainError("all Monte Carlo draws had zero mixture density")
    if excluded:
        log.warning("excluded %d of %d draws with zero mixture density", excluded, n_samples)
    return float(-log_f[finite].mean())


def nest_scores(
    model: BirdModel,
    histograms: Histograms,
    n_samples: int = DEFAULT_N_SAMPLES,
    seed: int = 0,
) -> list[SuspiciousnessRecord]:
    """Per-user expected surprises on both sides, normalized by the
    population standard deviation of each side, summed, and ranked
    descending (ties broken by user_id)."""
    index = {uid: i for i, uid in enumerate(histograms.user_ids)}
    rows = [index[uid] for uid in model.user_ids]
    n_ratings = histograms.n_ratings

    m = len(model.user_ids)
    s_x = np.empty(m)
    s_d = np.empty(m)
    for i, uid in enumerate(model.user_ids):
        s_x[i] = expected_surprise(
            model.posterior_rating[i], model, RATING_SIDE,
            n_samples, _user_rng(seed, uid, RATING_SIDE),
        )
        s_d[i] = expected_surprise(
            model.posterior_temporal[i], model, TEMPORAL_SIDE,
            n_samples, _user_rng(seed, uid, TEMPORAL_SIDE),
        )

    sigma_x = float(np.std(s_x))
    sigma_d = float(np.std(s_d))
    nest = np.zeros(m)
    if sigma_x > 0:
        nest += s_x / sigma_x
    else:
        log.warning("rating-side surprises are constant; side contributes 0")
    if sigma_d > 0:
        nest += s_d / sigma_d
    else:
        log.warning("temporal-side surprises are constant; side contributes 0")

    order = sorted(range(m), key=lambda i: (-nest[i], model.user_ids[i]))
    records = []
    for rank, i in enumerate(order, start=1):
        records.append(
            SuspiciousnessRecord(
                user_id=model.user_ids[i],
                s_x=float(s_x[i]),
                s_delta=float(s_d[i]),
                nest=float(nest[i]),
                rank=rank,
                cluster=int(model.assignments[i]),
                n_ratings=int(n_ratings[rows[i]]),
            )
        )
    return records


SCORE_FIELDS = ["rank", "user_id", "nest", "s_x", "s_delta", "cluster", "n_ratings"]


def write_scores_csv(records: list[SuspiciousnessRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SCORE_FIELDS)
        for r in records:
            writer.writerow(
                [r.rank, r.user_id, repr(r.nest), repr(r.s_x), repr(r.s_delta), r.cluster, r.n_ratings]
            )


def write_scores_json(records: list[SuspiciousnessRecord], path) -> None:
    doc = [
        {
            "rank": r.rank,
            "user_id": r.user_id,
            "nest": r.nest,
            "s_x": r.s_x,
            "s_delta": r.s_delta,
            "cluster": r.cluster,
            "n_ratings": r.n_ratings,
        }
        for r in records
    ]
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
