"""Exhaustive descriptor retrieval, ground-truth predicates and recall@N."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


@dataclass(frozen=True)
class Pose:
    easting: float
    northing: float
    heading: float
    frame: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.heading < 360.0:
            raise ValueError(f"heading must lie in [0, 360), got {self.heading}")
        if not (math.isfinite(self.easting) and math.isfinite(self.northing)):
            raise ValueError("pose coordinates must be finite")

    @classmethod
    def from_json(cls, doc: dict) -> "Pose":
        return cls(doc["easting"], doc["northing"], doc["heading"], doc.get("frame"))


@dataclass(frozen=True)
class Geo:
    """Position/heading tolerance.

    With ``fov_overlap`` the combined score dist/radius + dtheta/angle must be
    below 1; otherwise both gates apply separately.
    """

    radius_m: float = 25.0
    angle_deg: float = 40.0
    fov_overlap: bool = False

    def __post_init__(self):
        if self.radius_m <= 0 or self.angle_deg <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class Frames:
    k: int = 2

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("frame tolerance must be nonnegative")


EVAL_TOLERANCE = Geo()
TRAIN_TOLERANCE = Geo(fov_overlap=True)


def heading_diff(a: float, b: float) -> float:
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def is_positive(pq: Pose, pr: Pose, tol=EVAL_TOLERANCE) -> bool:
    if isinstance(tol, Frames):
        if pq.frame is None or pr.frame is None:
            raise ValueError("frame tolerance needs frame indices")
        return abs(pq.frame - pr.frame) <= tol.k
    dist = math.hypot(pq.easting - pr.easting, pq.northing - pr.northing)
    dtheta = heading_diff(pq.heading, pr.heading)
    if tol.fov_overlap:
        return dist / tol.radius_m + dtheta / tol.angle_deg < 1.0
    return dist < tol.radius_m and dtheta < tol.angle_deg


class KindMismatchError(ValueError):
    pass


def squared_distances(q: np.ndarray, db: np.ndarray) -> np.ndarray:
    """Exact squared L2 distances by direct differences (identical rows give identical values)."""
    q = np.atleast_2d(q)
    if q.shape[1] != db.shape[1]:
        raise KindMismatchError(f"descriptor length mismatch: {q.shape[1]} vs {db.shape[1]}")
    out = np.empty((q.shape[0], db.shape[0]))
    for i, row in enumerate(q):
        diff = db - row
        out[i] = np.einsum("ij,ij->i", diff, diff)
    return out


def ranked_ids(dist_row: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """Ids ordered by ascending distance, ties by ascending id."""
    order = np.lexsort((ids, dist_row))
    return ids[order]


def knn(q: np.ndarray, db: np.ndarray, db_ids, k: int, q_kind: str | None = None,
        db_kind: str | None = None) -> list:
    if q_kind is not None and db_kind is not None and q_kind != db_kind:
        raise KindMismatchError(f"query kind {q_kind} vs database kind {db_kind}")
    ids = np.asarray(db_ids)
    d = squared_distances(q, db)[0]
    return [int(i) for i in ranked_ids(d, ids)[:k]]


def rank_of(q: np.ndarray, target_id: int, db: np.ndarray, db_ids) -> int:
    """1-based position of ``target_id`` in the full ranked list."""
    ids = np.asarray(db_ids)
    where = np.flatnonzero(ids == target_id)
    if where.size == 0:
        raise KeyError(f"target id {target_id} not in database")
    d = squared_distances(q, db)[0]
    t = where[0]
    # count entries strictly ahead of the target under (distance, id) order
    ahead = (d < d[t]) | ((d == d[t]) & (ids < target_id))
    return int(ahead.sum()) + 1


@dataclass
class RecallReport:
    ns: list[int]
    recall: dict[int, float]
    n_queries: int
    n_excluded: int
    topk: dict[int, list[int]] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "ns": self.ns,
            "recall": {str(n): self.recall[n] for n in self.ns},
            "n_queries": self.n_queries,
            "n_excluded": self.n_excluded,
            "topk": {str(q): ids for q, ids in sorted(self.topk.items())},
        }


def recall_at_n(q_desc: np.ndarray, q_ids, db_desc: np.ndarray, db_ids,
                is_gt: Callable[[int, int], bool], ns: Sequence[int] = (1, 5, 10)) -> RecallReport:
    """Fraction of queries with a ground-truth match among the top N.

    Queries without any ground-truth candidate in the database are excluded
    and counted in ``n_excluded``.
    """
    if len(db_ids) == 0:
        raise ValueError("empty database")
    ns = sorted(int(n) for n in ns)
    db_ids = np.asarray(db_ids)
    kmax = min(max(ns), len(db_ids))
    hits = {n: 0 for n in ns}
    counted = excluded = 0
    topk = {}
    dists = squared_distances(q_desc, db_desc)
    for row, qid in enumerate(q_ids):
        gt = np.array([is_gt(int(qid), int(r)) for r in db_ids])
        if not gt.any():
            excluded += 1
            continue
        counted += 1
        order = np.lexsort((db_ids, dists[row]))
        top = db_ids[order[:kmax]]
        topk[int(qid)] = [int(i) for i in top]
        first = np.flatnonzero(gt[order[:kmax]])
        for n in ns:
            if first.size and first[0] < n:
                hits[n] += 1
    recall = {n: (hits[n] / counted if counted else 0.0) for n in ns}
    return RecallReport(ns, recall, counted, excluded, topk)
