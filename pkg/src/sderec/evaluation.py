"""Full-rank top-K evaluation: Recall@K and NDCG@K with binary gains."""

import math
from dataclasses import dataclass

import numpy as np


def rank_items(user_vec, item_vecs, exclude, k: int):
    """Top-k item indices by inner-product score, excluded items removed,
    ties broken toward the smaller item index."""
    item_vecs = np.asarray(item_vecs, dtype=np.float64)
    user_vec = np.asarray(user_vec, dtype=np.float64)
    m = item_vecs.shape[0]
    exclude = set(int(i) for i in exclude)
    if k > m - len(exclude):
        raise ValueError(f"k={k} exceeds the {m - len(exclude)} rankable items")
    scores = item_vecs @ user_vec
    if exclude:
        scores[sorted(exclude)] = -np.inf
    order = np.argsort(-scores, kind="stable")
    return [int(i) for i in order[:k]]


def recall_at_k(topk, relevant) -> float:
    relevant = set(relevant)
    if not relevant:
        raise ValueError("recall needs a nonempty relevant set")
    return len(set(topk) & relevant) / len(relevant)


def ndcg_at_k(topk, relevant, k: int | None = None) -> float:
    """Binary-gain NDCG; DCG sums 1/log2(rank+1) over hit ranks (1-based),
    the ideal places min(|relevant|, k) hits at the top."""
    relevant = set(relevant)
    if not relevant:
        raise ValueError("ndcg needs a nonempty relevant set")
    if k is None:
        k = len(topk)
    dcg = sum(
        1.0 / math.log2(rank + 1)
        for rank, item in enumerate(topk[:k], start=1)
        if item in relevant
    )
    idcg = sum(1.0 / math.log2(r + 1) for r in range(1, min(len(relevant), k) + 1))
    return dcg / idcg


@dataclass(frozen=True)
class RankingResult:
    ks: tuple
    phase: str
    user_ids: list  # users that were evaluated, ascending
    topk: dict  # user -> top-max(ks) item list
    per_user: dict  # user -> {k: (recall, ndcg)}
    means: dict  # k -> (recall, ndcg)

    def to_csv_lines(self, per_user: bool = False):
        lines = ["scope,user,k,recall,ndcg"]
        if per_user:
            for u in self.user_ids:
                for k in self.ks:
                    r, n = self.per_user[u][k]
                    lines.append(f"user,{u},{k},{r:.17g},{n:.17g}")
        for k in self.ks:
            r, n = self.means[k]
            lines.append(f"mean,,{k},{r:.17g},{n:.17g}")
        return lines


def evaluate(
    user_vecs, item_vecs, ds, ks=(5, 10), phase: str = "val"
) -> RankingResult:
    """Rank every candidate item per user and aggregate Recall/NDCG.

    Exclusion is the user's training items; the test phase additionally
    excludes validation items. Users with no interactions in the phase are
    skipped, not scored zero.
    """
    if phase not in ("val", "test"):
        raise ValueError(f"unknown phase: {phase!r}")
    ks = tuple(sorted(int(k) for k in ks))
    user_vecs = np.asarray(user_vecs, dtype=np.float64)
    item_vecs = np.asarray(item_vecs, dtype=np.float64)
    relevant_sets = ds.user_phase_sets(phase)
    exclude_sets = ds.user_train_sets()
    if phase == "test":
        for u, i in ds.val:
            exclude_sets[int(u)].add(int(i))
    k_max = ks[-1]
    user_ids, topk_map, per_user = [], {}, {}
    totals = {k: [0.0, 0.0] for k in ks}
    for u in range(ds.n_users):
        relevant = relevant_sets[u]
        if not relevant:
            continue
        topk = rank_items(user_vecs[u], item_vecs, exclude_sets[u], k_max)
        user_ids.append(u)
        topk_map[u] = topk
        per_user[u] = {}
        for k in ks:
            r = recall_at_k(topk[:k], relevant)
            n = ndcg_at_k(topk, relevant, k)
            per_user[u][k] = (r, n)
            totals[k][0] += r
            totals[k][1] += n
    count = len(user_ids)
    means = {
        k: (totals[k][0] / count, totals[k][1] / count) if count else (0.0, 0.0)
        for k in ks
    }
    return RankingResult(ks, phase, user_ids, topk_map, per_user, means)
