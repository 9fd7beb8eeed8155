"""Rating-log ingestion: CSV parsing, log-bucketing of inter-rating gaps, and
per-user histogram construction.

Input format (UTF-8 CSV, one event per line):
    user_id,product_id,stars,unix_timestamp_seconds
An optional header line is detected by a non-numeric stars field.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DataError, DegenerateModelError

MALFORMED_ABORT_FRACTION = 0.01


@dataclass(frozen=True)
class RatingEvent:
    """One timestamped star rating by a user for a product."""

    user_id: str
    product_id: str
    stars: int
    timestamp: int


@dataclass(frozen=True)
class BucketingConfig:
    """Logarithmic bucketing of inter-rating gaps in seconds."""

    base: float
    num_buckets: int
    min_gap: int = 1

    def __post_init__(self):
        if self.base <= 1.0:
            raise ValueError(f"log base must exceed 1, got {self.base}")
        if self.num_buckets < 2:
            raise ValueError("need at least 2 temporal buckets")
        if self.min_gap < 1:
            raise ValueError("min_gap must be a positive number of seconds")

    def bucket_index(self, gap: int) -> int:
        """Bucket of a gap in seconds: integer part of log_base(gap), with the
        gap clamped below at min_gap and the index clamped to the top bucket.

        The small nudge guards against floor(log) landing one below an exact
        power of the base due to rounding.
        """
        gap = max(int(gap), self.min_gap)
        j = int(math.floor(math.log(gap) / math.log(self.base) + 1e-9))
        return min(max(j, 0), self.num_buckets - 1)


@dataclass(frozen=True)
class UserHistogram:
    """Per-user count vectors over star levels and temporal buckets."""

    user_id: str
    rating_counts: np.ndarray
    temporal_counts: np.ndarray

    @property
    def n_ratings(self) -> int:
        return int(self.rating_counts.sum())


class Histograms:
    """A population of user histograms stored as two count matrices.

    Iterating yields per-user UserHistogram views; the matrix form is what
    fitting and scoring operate on directly.
    """

    def __init__(self, user_ids: Sequence[str], rating: np.ndarray, temporal: np.ndarray):
        rating = np.asarray(rating)
        temporal = np.asarray(temporal)
        if len(user_ids) != rating.shape[0] or len(user_ids) != temporal.shape[0]:
            raise ValueError("user_ids and count matrices disagree on user count")
        self.user_ids = list(user_ids)
        self.rating = rating
        self.temporal = temporal

    @property
    def num_stars(self) -> int:
        return self.rating.shape[1]

    @property
    def num_buckets(self) -> int:
        return self.temporal.shape[1]

    @property
    def n_ratings(self) -> np.ndarray:
        return self.rating.sum(axis=1)

    def __len__(self) -> int:
        return len(self.user_ids)

    def __getitem__(self, i: int) -> UserHistogram:
        return UserHistogram(self.user_ids[i], self.rating[i], self.temporal[i])

    def __iter__(self) -> Iterator[UserHistogram]:
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_list(cls, histograms: Iterable[UserHistogram]) -> "Histograms":
        histograms = list(histograms)
        return cls(
            [h.user_id for h in histograms],
            np.array([h.rating_counts for h in histograms]),
            np.array([h.temporal_counts for h in histograms]),
        )


@dataclass
class ParseReport:
    """Rejected rows, one (line_number, reason, raw_line) triple each."""

    rejected: list[tuple[int, str, str]] = field(default_factory=list)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for line_no, reason, raw in self.rejected:
                f.write(f"line {line_no}: {reason}: {raw}\n")


def _open_source(source):
    if isinstance(source, (str, os.PathLike)):
        return open(source, "r", encoding="utf-8", newline=""), True
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8")), True
    if isinstance(source, io.RawIOBase) or isinstance(source, io.BufferedIOBase):
        return io.TextIOWrapper(source, encoding="utf-8", newline=""), False
    return source, False  # assume text file object


def parse_ratings(source, s: int = 5) -> tuple[list[RatingEvent], ParseReport]:
    """Parse a rating-event CSV; returns (events, report of rejected rows).

    Row order is preserved. The run aborts (DataError) if more than 1% of
    data rows are malformed; otherwise bad rows are skipped and reported.
    """
    stream, owned = _open_source(source)
    events: list[RatingEvent] = []
    report = ParseReport()
    total_rows = 0
    try:
        reader = csv.reader(stream)
        for line_no, row in enumerate(reader, start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            raw = ",".join(row)
            if len(row) != 4:
                total_rows += 1
                report.rejected.append((line_no, f"expected 4 fields, got {len(row)}", raw))
                continue
            user_id, product_id, stars_s, ts_s = (c.strip() for c in row)
            if line_no == 1 and not _is_int(stars_s):
                continue  # header line
            total_rows += 1
            if not _is_int(stars_s) or not _is_int(ts_s):
                report.rejected.append((line_no, "non-integer stars or timestamp", raw))
                continue
            stars, ts = int(stars_s), int(ts_s)
            if not (1 <= stars <= s):
                report.rejected.append((line_no, f"stars {stars} outside [1, {s}]", raw))
                continue
            if ts < 0:
                report.rejected.append((line_no, "negative timestamp", raw))
                continue
            if not user_id:
                report.rejected.append((line_no, "empty user_id", raw))
                continue
            events.append(RatingEvent(user_id, product_id, stars, ts))
    finally:
        if owned:
            stream.close()
    if total_rows > 0 and len(report.rejected) > MALFORMED_ABORT_FRACTION * total_rows:
        raise DataError(
            f"{len(report.rejected)} of {total_rows} rows malformed "
            f"(>{MALFORMED_ABORT_FRACTION:.0%}); aborting"
        )
    return events, report


def _is_int(text: str) -> bool:
    try:
        int(text)
        return True
    except ValueError:
        return False


def _gaps_by_user(events: Sequence[RatingEvent], min_gap: int) -> dict[str, list[int]]:
    by_user: dict[str, list[int]] = {}
    for ev in events:
        by_user.setdefault(ev.user_id, []).append(ev.timestamp)
    gaps: dict[str, list[int]] = {}
    for uid, stamps in by_user.items():
        stamps = sorted(stamps)  # Python sort is stable: ties keep input order
        gaps[uid] = [max(b - a, min_gap) for a, b in zip(stamps, stamps[1:])]
    return gaps


def choose_base(
    events: Sequence[RatingEvent], target_buckets: int = 20, min_gap: int = 1
) -> BucketingConfig:
    """Pick the log base so the largest observed gap lands in bucket
    target_buckets, giving target_buckets + 1 buckets indexed from 0."""
    if target_buckets < 1:
        raise ValueError("target_buckets must be positive")
    all_gaps = [g for gaps in _gaps_by_user(events, min_gap).values() for g in gaps]
    if not all_gaps:
        raise DegenerateModelError("no user has >= 2 events; temporal model inapplicable")
    max_gap = max(all_gaps)
    if max_gap <= min_gap:
        raise DegenerateModelError(
            f"all gaps clamp to {min_gap}s; no temporal spread to bucket"
        )
    base = max_gap ** (1.0 / target_buckets)
    return BucketingConfig(base=base, num_buckets=target_buckets + 1, min_gap=min_gap)


def build_histograms(
    events: Sequence[RatingEvent], cfg: BucketingConfig, s: int = 5
) -> Histograms:
    """Group events per user (timestamp order, input order on ties) and tally
    star and gap-bucket counts. A user's first event yields no gap."""
    order: list[str] = []
    by_user: dict[str, list[RatingEvent]] = {}
    for ev in events:
        if ev.user_id not in by_user:
            order.append(ev.user_id)
            by_user[ev.user_id] = []
        by_user[ev.user_id].append(ev)

    m = len(order)
    rating = np.zeros((m, s), dtype=np.int64)
    temporal = np.zeros((m, cfg.num_buckets), dtype=np.int64)
    for i, uid in enumerate(order):
        user_events = sorted(by_user[uid], key=lambda ev: ev.timestamp)
        for ev in user_events:
            rating[i, ev.stars - 1] += 1
        for prev, cur in zip(user_events, user_events[1:]):
            temporal[i, cfg.bucket_index(cur.timestamp - prev.timestamp)] += 1
    return Histograms(order, rating, temporal)
