"""Dataset pipeline: raw text ingestion, implicit-feedback conversion,
degree filtering, dense reindexing, seeded splitting, and statistics."""

from collections import Counter
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class RatingRecord(NamedTuple):
    user: str
    item: str
    rating: int


class SocialEdge(NamedTuple):
    source: str
    target: str


class MalformedLine(NamedTuple):
    line_no: int
    reason: str


@dataclass(frozen=True)
class PreprocessResult:
    """Filtered, densely reindexed implicit data (pre-split)."""

    n_users: int
    m_items: int
    interactions: np.ndarray  # (k, 2) int64 (user_idx, item_idx), unique
    social: np.ndarray  # (e, 2) int64 undirected canonical pairs u < v
    user_ids: list  # external id per user index
    item_ids: list


@dataclass(frozen=True)
class SplitDataset:
    n_users: int
    m_items: int
    train: np.ndarray  # (k, 2) int64 pairs
    val: np.ndarray
    test: np.ndarray
    social: np.ndarray  # (e, 2) undirected canonical pairs
    user_ids: list
    item_ids: list

    def user_train_sets(self):
        sets = [set() for _ in range(self.n_users)]
        for u, i in self.train:
            sets[u].add(int(i))
        return sets

    def user_phase_sets(self, phase: str):
        src = {"train": self.train, "val": self.val, "test": self.test}[phase]
        sets = [set() for _ in range(self.n_users)]
        for u, i in src:
            sets[u].add(int(i))
        return sets


@dataclass(frozen=True)
class DatasetStats:
    n_users: int
    m_items: int
    n_interactions: int
    n_relations: int
    interaction_density: float
    relation_density: float
    substitute_homophily: float

    def to_lines(self):
        return [
            f"n_users = {self.n_users}",
            f"m_items = {self.m_items}",
            f"n_interactions = {self.n_interactions}",
            f"n_relations = {self.n_relations}",
            f"interaction_density = {self.interaction_density:.10g}",
            f"relation_density = {self.relation_density:.10g}",
            f"substitute_homophily = {self.substitute_homophily:.10g}",
        ]


def _data_lines(path):
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            yield line_no, line


def ingest_ratings(path):
    """Parse `<user> <item> <rating>` lines.

    Returns (records, malformed). Bad lines never abort the run; each is
    reported with its line number. An unreadable file raises OSError.
    """
    records = []
    malformed = []
    for line_no, line in _data_lines(path):
        fields = line.split()
        if len(fields) < 3:
            malformed.append(MalformedLine(line_no, "expected 3 fields"))
            continue
        user, item, rating_text = fields[0], fields[1], fields[2]
        try:
            rating = int(rating_text)
        except ValueError:
            malformed.append(MalformedLine(line_no, f"non-integer rating {rating_text!r}"))
            continue
        if not 1 <= rating <= 5:
            malformed.append(MalformedLine(line_no, f"rating {rating} outside [1, 5]"))
            continue
        records.append(RatingRecord(user, item, rating))
    return records, malformed


def ingest_trust(path):
    """Parse `<source> <target>` lines; self-loops are dropped here,
    duplicates survive until preprocessing."""
    edges = []
    for _line_no, line in _data_lines(path):
        fields = line.split()
        if len(fields) < 2:
            continue
        if fields[0] == fields[1]:
            continue
        edges.append(SocialEdge(fields[0], fields[1]))
    return edges


def preprocess(
    ratings,
    edges=(),
    rating_threshold: int = 3,
    min_interactions: int = 3,
) -> PreprocessResult:
    """Implicit conversion and cleanup.

    Keeps interactions rated strictly above the threshold, deduplicates
    repeated (user, item) pairs, then alternately removes users and items
    with fewer than `min_interactions` interactions until a fixed point.
    Surviving entities are reindexed densely in sorted external-id order;
    social edges are restricted to surviving users, symmetrized, and stored
    once as canonical (min, max) index pairs.
    """
    pairs = {(r.user, r.item) for r in ratings if r.rating > rating_threshold}
    while True:
        user_deg = Counter(u for u, _ in pairs)
        item_deg = Counter(i for _, i in pairs)
        kept = {
            (u, i)
            for (u, i) in pairs
            if user_deg[u] >= min_interactions and item_deg[i] >= min_interactions
        }
        if kept == pairs:
            break
        pairs = kept
    if not pairs:
        raise ValueError("degenerate dataset: nothing survives preprocessing")
    user_ids = sorted({u for u, _ in pairs})
    item_ids = sorted({i for _, i in pairs})
    u_index = {u: k for k, u in enumerate(user_ids)}
    i_index = {i: k for k, i in enumerate(item_ids)}
    inter = np.array(
        sorted((u_index[u], i_index[i]) for u, i in pairs), dtype=np.int64
    )
    social_pairs = set()
    for e in edges:
        if e.source in u_index and e.target in u_index and e.source != e.target:
            a, b = u_index[e.source], u_index[e.target]
            social_pairs.add((min(a, b), max(a, b)))
    social = np.array(sorted(social_pairs), dtype=np.int64).reshape(-1, 2)
    return PreprocessResult(
        len(user_ids), len(item_ids), inter, social, user_ids, item_ids
    )


def split(
    pre: PreprocessResult, ratios=(0.8, 0.1, 0.1), seed: int = 0
) -> SplitDataset:
    """Seeded global shuffle, contiguous cut into train/val/test, then a
    repair pass guaranteeing every user at least one training interaction.

    Repair visits violating users in ascending index order, takes their first
    val/test pair (val scanned before test, in position order), and swaps it
    with the last training pair whose owner keeps >= 2 training interactions.
    If no such donor exists the pair is moved without a swap.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(pre.interactions.shape[0])
    shuffled = pre.interactions[order]
    total = shuffled.shape[0]
    n_train = int(np.floor(ratios[0] * total))
    n_val = int(np.floor(ratios[1] * total))
    train = [tuple(p) for p in shuffled[:n_train]]
    val = [tuple(p) for p in shuffled[n_train : n_train + n_val]]
    test = [tuple(p) for p in shuffled[n_train + n_val :]]

    train_count = Counter(u for u, _ in train)
    holdout_users = {u for u, _ in val} | {u for u, _ in test}
    for user in sorted(u for u in holdout_users if train_count[u] == 0):
        source = None
        for bucket in (val, test):
            for pos, (u, _i) in enumerate(bucket):
                if u == user:
                    source = (bucket, pos)
                    break
            if source:
                break
        if source is None:
            continue
        bucket, pos = source
        donor = None
        for tpos in range(len(train) - 1, -1, -1):
            if train_count[train[tpos][0]] >= 2:
                donor = tpos
                break
        incoming = bucket[pos]
        if donor is None:
            del bucket[pos]
            train.append(incoming)
        else:
            outgoing = train[donor]
            train[donor] = incoming
            bucket[pos] = outgoing
            train_count[outgoing[0]] -= 1
        train_count[user] += 1

    def as_array(pairs):
        return np.array(pairs, dtype=np.int64).reshape(-1, 2)

    return SplitDataset(
        pre.n_users,
        pre.m_items,
        as_array(train),
        as_array(val),
        as_array(test),
        pre.social.copy(),
        list(pre.user_ids),
        list(pre.item_ids),
    )


def stats(ds: SplitDataset) -> DatasetStats:
    """Density statistics plus a homophily proxy: the mean, over social
    edges, of the Jaccard similarity of the endpoints' training-item sets."""
    n_inter = int(ds.train.shape[0] + ds.val.shape[0] + ds.test.shape[0])
    n_rel = int(ds.social.shape[0])
    train_sets = ds.user_train_sets()
    sims = []
    for u, v in ds.social:
        a, b = train_sets[int(u)], train_sets[int(v)]
        union = len(a | b)
        sims.append(len(a & b) / union if union else 0.0)
    homophily = float(np.mean(sims)) if sims else 0.0
    return DatasetStats(
        n_users=ds.n_users,
        m_items=ds.m_items,
        n_interactions=n_inter,
        n_relations=n_rel,
        interaction_density=n_inter / (ds.n_users * ds.m_items),
        relation_density=n_rel / (ds.n_users**2),
        substitute_homophily=homophily,
    )
