"""Independent brute-force references used by the retrieval and partition tests.

These deliberately avoid the package's vectorised code paths: distances are
plain Python sums and ordering is a full ``sorted`` on (distance, id).
"""

from __future__ import annotations


def sq_dist(a, b) -> float:
    return sum((float(x) - float(y)) ** 2 for x, y in zip(a, b))


def full_ranking(q, db, db_ids) -> list[int]:
    keyed = sorted((sq_dist(q, d), int(i)) for d, i in zip(db, db_ids))
    return [i for _, i in keyed]


def rank_oracle(q, target, db, db_ids) -> int:
    return full_ranking(q, db, db_ids).index(int(target)) + 1


def recall_oracle(q_desc, q_ids, db_desc, db_ids, is_gt, ns):
    counted = 0
    hits = {n: 0 for n in ns}
    for q, qid in zip(q_desc, q_ids):
        gt = {int(d) for d in db_ids if is_gt(int(qid), int(d))}
        if not gt:
            continue
        counted += 1
        order = full_ranking(q, db_desc, db_ids)
        for n in ns:
            if any(i in gt for i in order[:n]):
                hits[n] += 1
    return {n: (hits[n] / counted if counted else 0.0) for n in ns}


def group_oracle(x: int, y: int, n_t) -> str:
    seg_ok, rgb_ok = x <= n_t, y <= n_t
    if not seg_ok:
        return "D4"
    if not rgb_ok:
        return "D1"
    return "D2" if x <= y else "D3"
