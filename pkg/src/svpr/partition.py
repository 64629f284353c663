"""Offline group partition of (query, positive) training pairs."""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .losses import GROUPS, Phi, classify_group
from .retrieval import squared_distances

GPS_GROUPS = ("S1", "S2")
GPR_GROUPS = ("R1", "R2")
CSV_FIELDS = ("query_id", "positive_id", "x", "y", "group", "weight")


@dataclass(frozen=True)
class SamplePair:
    query_id: int
    positive_id: int
    x: int | None = None
    y: int | None = None
    group: str | None = None
    weight: float | None = None


def compute_ranks(q_desc: np.ndarray, q_ids, db_desc: np.ndarray, db_ids,
                  pairs: Sequence[tuple[int, int]]) -> list[int]:
    """Rank of each pair's positive in its query's full recall list (1-based).

    Ties are ordered by ascending database id.
    """
    q_row = {int(q): i for i, q in enumerate(q_ids)}
    db_ids = np.asarray(db_ids)
    db_col = {int(d): i for i, d in enumerate(db_ids)}
    needed = sorted({q for q, _ in pairs})
    missing = [q for q in needed if q not in q_row] + [p for _, p in pairs if p not in db_col]
    if missing:
        raise KeyError(f"missing descriptors for ids {missing[:5]}")
    dist = {}
    for start in range(0, len(needed), 64):
        chunk = needed[start : start + 64]
        block = squared_distances(q_desc[[q_row[q] for q in chunk]], db_desc)
        for q, row in zip(chunk, block):
            dist[q] = row
    ranks = []
    for q, p in pairs:
        d = dist[q]
        t = db_col[p]
        ahead = (d < d[t]) | ((d == d[t]) & (db_ids < p))
        ranks.append(int(ahead.sum()) + 1)
    return ranks


def partition_gpd(pairs: Sequence[SamplePair], n_t: int, scheme=None) -> list[SamplePair]:
    _check_nt(n_t)
    scheme = scheme or Phi(n_t=n_t)
    out = []
    for s in pairs:
        out.append(replace(s, group=classify_group(s.x, s.y, n_t), weight=float(scheme.weight(s.x, s.y))))
    return out


def partition_gps(pairs: Sequence[SamplePair], n_t: int, scheme=None) -> list[SamplePair]:
    _check_nt(n_t)
    out = []
    for s in pairs:
        g = "S1" if s.x <= n_t else "S2"
        w = float(scheme.weight(s.x, s.y)) if scheme is not None else float(g == "S1")
        out.append(replace(s, group=g, weight=w))
    return out


def partition_gpr(pairs: Sequence[SamplePair], n_t: int) -> list[SamplePair]:
    _check_nt(n_t)
    return [replace(s, group="R1" if s.y <= n_t else "R2", weight=float(s.y <= n_t)) for s in pairs]


def _check_nt(n_t) -> None:
    if not (n_t >= 1):
        raise ValueError("N_t must be at least 1 (ranks start at 1)")


@dataclass
class PartitionReport:
    strategy: str
    n_t: float
    n_m: int | None
    counts: dict[str, int]
    ratios: dict[str, float]
    total: int

    def to_json(self) -> dict:
        n_t = self.n_t if math.isfinite(self.n_t) else "inf"
        return {"strategy": self.strategy, "n_t": n_t, "n_m": self.n_m, "total": self.total,
                "counts": self.counts, "ratios": self.ratios}


def build_report(pairs: Sequence[SamplePair], strategy: str, n_t, n_m=None) -> PartitionReport:
    names = {"GP-D": GROUPS, "GP-S": GPS_GROUPS, "GP-R": GPR_GROUPS}[strategy]
    counts = Counter(s.group for s in pairs)
    total = len(pairs)
    c = {g: int(counts.get(g, 0)) for g in names}
    r = {g: (c[g] / total if total else 0.0) for g in names}
    return PartitionReport(strategy, n_t, n_m, c, r, total)


def ratio_sweep(pairs: Sequence[SamplePair], n_ts: Sequence) -> list[dict]:
    """Group ratios for each N_t (ranks already attached to ``pairs``)."""
    rows = []
    for n_t in n_ts:
        _check_nt(n_t)
        total = len(pairs)
        groups = Counter(classify_group(s.x, s.y, n_t) for s in pairs)
        s1 = sum(1 for s in pairs if s.x <= n_t)
        row = {"n_t": n_t, "ratio_s1": s1 / total, "ratio_s2": 1 - s1 / total}
        for g in GROUPS:
            row[f"ratio_{g.lower()}"] = groups.get(g, 0) / total
        rows.append(row)
    return rows


def _fmt_weight(w: float) -> str:
    return repr(float(w))


def pairs_to_csv(pairs: Sequence[SamplePair]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for s in pairs:
        w.writerow([s.query_id, s.positive_id, s.x, s.y, s.group, _fmt_weight(s.weight)])
    return buf.getvalue()


def write_partition_csv(pairs: Sequence[SamplePair], path) -> None:
    Path(path).write_text(pairs_to_csv(pairs))


def read_partition_csv(path) -> list[SamplePair]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [SamplePair(int(r["query_id"]), int(r["positive_id"]), int(r["x"]), int(r["y"]),
                       r["group"], float(r["weight"])) for r in rows]
