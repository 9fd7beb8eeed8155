"""Seeded sampling of whole rating populations from the generative model,
with an optional injected fraud cohort, plus event materialization whose
timestamp gaps round-trip exactly through ingestion.

The fraud cohort is a held-out extra component, not one of the mixture's K
clusters: detection rests on fraud deviating from the fitted population.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .ingest import BucketingConfig, Histograms, RatingEvent


@dataclass
class FraudSpec:
    count: int
    alpha: np.ndarray
    beta: np.ndarray
    ratings_per_user: int | tuple[int, int] = (20, 60)


@dataclass
class SynthSpec:
    """Ground-truth generative parameters for one sampled population."""

    m: int
    pi: np.ndarray
    alphas: np.ndarray  # (K, s)
    betas: np.ndarray   # (K, num_buckets)
    ratings_per_user: int | tuple[int, int] = 20
    fraud: FraudSpec | None = None
    seed: int = 0

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=float)
        self.alphas = np.atleast_2d(np.asarray(self.alphas, dtype=float))
        self.betas = np.atleast_2d(np.asarray(self.betas, dtype=float))
        if abs(self.pi.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must sum to 1")
        if len(self.pi) != self.alphas.shape[0] or len(self.pi) != self.betas.shape[0]:
            raise ValueError("pi, alphas, betas disagree on the number of clusters")
        if np.any(self.alphas <= 0) or np.any(self.betas <= 0):
            raise ValueError("Dirichlet parameters must be strictly positive")

    @property
    def K(self) -> int:
        return len(self.pi)

    @classmethod
    def from_json(cls, source) -> "SynthSpec":
        """Build a spec from an already-parsed mapping or a JSON file path."""
        if isinstance(source, dict):
            doc = source
        else:
            with open(source, "r", encoding="utf-8") as f:
                doc = json.load(f)
        fraud = None
        if doc.get("fraud"):
            fd = doc["fraud"]
            fraud = FraudSpec(
                count=int(fd["count"]),
                alpha=np.array(fd["alpha"], float),
                beta=np.array(fd["beta"], float),
                ratings_per_user=_rpu_from_json(fd.get("ratings_per_user", (20, 60))),
            )
        return cls(
            m=int(doc["m"]),
            pi=np.array(doc["pi"], float),
            alphas=np.array(doc["alphas"], float),
            betas=np.array(doc["betas"], float),
            ratings_per_user=_rpu_from_json(doc.get("ratings_per_user", 20)),
            fraud=fraud,
            seed=int(doc.get("seed", 0)),
        )


def _rpu_from_json(value):
    if isinstance(value, (list, tuple)):
        return (int(value[0]), int(value[1]))
    return int(value)


@dataclass
class GroundTruth:
    """Per-user generative labels, aligned with the returned histograms."""

    cluster: np.ndarray    # (m,) 1-based; 0 for fraud users
    is_fraud: np.ndarray   # (m,) bool
    rating_dist: np.ndarray
    temporal_dist: np.ndarray


def _draw_counts(rng, spec) -> np.ndarray:
    total = spec.m + (spec.fraud.count if spec.fraud else 0)
    if isinstance(spec.ratings_per_user, tuple):
        lo, hi = spec.ratings_per_user
        n = rng.integers(lo, hi + 1, size=total)
    else:
        n = np.full(total, int(spec.ratings_per_user))
    if spec.fraud:
        rpu = spec.fraud.ratings_per_user
        if isinstance(rpu, tuple):
            n[spec.m :] = rng.integers(rpu[0], rpu[1] + 1, size=spec.fraud.count)
        else:
            n[spec.m :] = int(rpu)
    return n


def generate(spec: SynthSpec) -> tuple[Histograms, GroundTruth]:
    """Sample the population: per user draw a cluster, rating and temporal
    distributions from the cluster's Dirichlets, n_i ratings and n_i - 1
    temporal buckets. Fraud users bypass the mixture."""
    rng = np.random.default_rng(spec.seed)
    n_fraud = spec.fraud.count if spec.fraud else 0
    total = spec.m + n_fraud
    s = spec.alphas.shape[1]
    dim_d = spec.betas.shape[1]

    z = rng.choice(spec.K, size=spec.m, p=spec.pi)
    conc_x = np.vstack([spec.alphas[z]] + ([np.tile(spec.fraud.alpha, (n_fraud, 1))] if n_fraud else []))
    conc_d = np.vstack([spec.betas[z]] + ([np.tile(spec.fraud.beta, (n_fraud, 1))] if n_fraud else []))

    gx = rng.gamma(conc_x)
    p = gx / gx.sum(axis=1, keepdims=True)
    gd = rng.gamma(conc_d)
    q = gd / gd.sum(axis=1, keepdims=True)

    n = _draw_counts(rng, spec)
    rating = rng.multinomial(n, p)
    temporal = rng.multinomial(np.maximum(n - 1, 0), q)

    width = len(str(max(total - 1, 1)))
    ids = [f"u{i:0{width}d}" for i in range(spec.m)]
    ids += [f"u{spec.m + i:0{width}d}" for i in range(n_fraud)]

    cluster = np.concatenate([z + 1, np.zeros(n_fraud, dtype=np.int64)])
    is_fraud = np.concatenate([np.zeros(spec.m, bool), np.ones(n_fraud, bool)])
    truth = GroundTruth(cluster=cluster, is_fraud=is_fraud, rating_dist=p, temporal_dist=q)
    return Histograms(ids, rating.astype(np.int64), temporal.astype(np.int64)), truth


def _bucket_gap_ranges(cfg: BucketingConfig) -> list[tuple[int, int]]:
    """Integer gap range [lo, hi] realizing each bucket index; raises if some
    bucket contains no integer gap."""
    ranges = []
    for j in range(cfg.num_buckets):
        approx_lo = int(np.floor(cfg.base ** j))
        lo = None
        for g in range(max(cfg.min_gap, approx_lo - 2), approx_lo + 4):
            if g >= 1 and cfg.bucket_index(g) == j:
                lo = g
                break
        if lo is None:
            raise DataError(
                f"bucket {j} of base-{cfg.base:g} config contains no integer gap"
            )
        if j == cfg.num_buckets - 1:
            hi = max(lo, int(np.floor(cfg.base ** (j + 1))))  # top bucket is open-ended
        else:
            approx_hi = int(np.ceil(cfg.base ** (j + 1)))
            hi = lo
            for g in range(approx_hi + 2, lo - 1, -1):
                if cfg.bucket_index(g) == j:
                    hi = g
                    break
        ranges.append((lo, hi))
    return ranges


def generate_events(spec: SynthSpec, bucketing: BucketingConfig) -> list[RatingEvent]:
    """Materialize the population of generate(spec) as timestamped events.
    Gaps are drawn uniformly among the integers realizing the drawn bucket, so
    re-ingesting the events reproduces the drawn histograms exactly."""
    histograms, _ = generate(spec)
    if histograms.num_buckets != bucketing.num_buckets:
        raise ValueError(
            f"spec has {histograms.num_buckets} temporal buckets, "
            f"bucketing config has {bucketing.num_buckets}"
        )
    ranges = _bucket_gap_ranges(bucketing)
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x5EED]))
    events: list[RatingEvent] = []
    for i, h in enumerate(histograms):
        stars = np.repeat(np.arange(1, histograms.num_stars + 1), h.rating_counts)
        rng.shuffle(stars)
        buckets = np.repeat(np.arange(histograms.num_buckets), h.temporal_counts)
        rng.shuffle(buckets)
        t = int(i)  # distinct start per user; only gaps matter
        for j, star in enumerate(stars):
            if j > 0:
                lo, hi = ranges[buckets[j - 1]]
                t += int(rng.integers(lo, hi + 1))
            events.append(
                RatingEvent(h.user_id, f"p{rng.integers(0, 1000):04d}", int(star), t)
            )
    return events


def write_events_csv(events: list[RatingEvent], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("user_id,product_id,stars,timestamp\n")
        for ev in events:
            f.write(f"{ev.user_id},{ev.product_id},{ev.stars},{ev.timestamp}\n")


def write_labels_csv(histograms: Histograms, truth: GroundTruth, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("user_id,cluster,is_fraud\n")
        for uid, c, fr in zip(histograms.user_ids, truth.cluster, truth.is_fraud):
            f.write(f"{uid},{int(c)},{int(fr)}\n")
