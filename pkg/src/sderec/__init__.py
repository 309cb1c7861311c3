"""Score-based denoising of social embeddings for top-K recommendation.

The package wires five stages together: dataset ingestion and splitting,
sparse graph construction with curriculum sparsification, dual GCN encoders,
a conditional SDE diffusion model over social embeddings, and a contrastive
plus BPR training objective evaluated by full-rank Recall/NDCG.
"""

from .config import TrainConfig
from .data import ingest_ratings, ingest_trust, preprocess, split, stats
from .evaluation import evaluate, ndcg_at_k, rank_items, recall_at_k
from .graphs import SparseMatrix, sym_normalize
from .sgm import ScoreNetwork, SdeSpec, diffusion_loss, pc_sample
from .training import Model, train

__version__ = "0.1.0"

__all__ = [
    "TrainConfig",
    "ingest_ratings",
    "ingest_trust",
    "preprocess",
    "split",
    "stats",
    "evaluate",
    "ndcg_at_k",
    "rank_items",
    "recall_at_k",
    "SparseMatrix",
    "sym_normalize",
    "ScoreNetwork",
    "SdeSpec",
    "diffusion_loss",
    "pc_sample",
    "Model",
    "train",
]
