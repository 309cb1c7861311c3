"""Seeded synthetic datasets with planted preference clusters.

Users and items are partitioned into matching clusters; most interactions
stay inside a user's own item block and most social ties connect users of
the same cluster, so a recommender that exploits either signal beats random
ranking by a wide margin. Output comes as raw rating/trust records so the
full ingest path can be exercised.
"""

import numpy as np

from .data import RatingRecord, SocialEdge, preprocess, split


def make_clustered_records(
    n_users: int = 500,
    m_items: int = 300,
    n_clusters: int = 5,
    interactions_per_user: int = 16,
    social_per_user: int = 8,
    intra_item_p: float = 0.85,
    intra_social_p: float = 0.9,
    seed: int = 0,
):
    """Returns (rating records, trust edges) with planted structure."""
    rng = np.random.default_rng([seed, 17])
    block = m_items // n_clusters
    ratings = []
    for u in range(n_users):
        c = u % n_clusters
        lo, hi = c * block, (c + 1) * block
        chosen = set()
        while len(chosen) < interactions_per_user:
            if rng.random() < intra_item_p:
                item = int(rng.integers(lo, hi))
            else:
                item = int(rng.integers(0, m_items))
            chosen.add(item)
        for item in sorted(chosen):
            rating = int(rng.integers(4, 6))
            ratings.append(RatingRecord(f"u{u:04d}", f"i{item:04d}", rating))
        # a few low ratings that the implicit threshold will discard
        for _ in range(2):
            item = int(rng.integers(0, m_items))
            ratings.append(RatingRecord(f"u{u:04d}", f"i{item:04d}", int(rng.integers(1, 4))))
    edges = set()
    for u in range(n_users):
        c = u % n_clusters
        same = [v for v in range(c, n_users, n_clusters) if v != u]
        for _ in range(social_per_user):
            if rng.random() < intra_social_p:
                v = int(same[int(rng.integers(0, len(same)))])
            else:
                v = int(rng.integers(0, n_users))
            if v != u:
                edges.add((min(u, v), max(u, v)))
    trust = [SocialEdge(f"u{a:04d}", f"u{b:04d}") for a, b in sorted(edges)]
    return ratings, trust


def write_raw_files(ratings, trust, ratings_path, trust_path):
    with open(ratings_path, "w") as fh:
        fh.write("# user item rating\n")
        for r in ratings:
            fh.write(f"{r.user} {r.item} {r.rating}\n")
    with open(trust_path, "w") as fh:
        fh.write("# source target\n")
        for e in trust:
            fh.write(f"{e.source} {e.target}\n")


def make_clustered_split(seed: int = 0, **kwargs):
    """Convenience: records -> preprocess -> split, all under one seed."""
    ratings, trust = make_clustered_records(seed=seed, **kwargs)
    pre = preprocess(ratings, trust)
    return split(pre, seed=seed)
