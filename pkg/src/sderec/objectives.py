"""Loss surface: cross-domain InfoNCE, BPR ranking, and the weighted joint."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .encoders import init_embedding


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 0.1
    tau: float = 0.1

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be nonnegative")


class ProjectionHead:
    """Two-layer perceptron in_dim -> hidden -> out_dim with LeakyReLU between."""

    def __init__(self, in_dim: int, out_dim: int, rng, prefix: str = "", slope=0.01):
        hidden = out_dim
        self.slope = slope
        self.params = {
            f"{prefix}w1": ad.param(init_embedding(in_dim, hidden, rng)),
            f"{prefix}b1": ad.param(np.zeros(hidden)),
            f"{prefix}w2": ad.param(init_embedding(hidden, out_dim, rng)),
            f"{prefix}b2": ad.param(np.zeros(out_dim)),
        }
        self._prefix = prefix

    def apply(self, x) -> ad.Tensor:
        x = x if isinstance(x, ad.Tensor) else ad.const(x)
        p = self._prefix
        h = ad.leaky_relu(
            ad.add(ad.matmul(x, self.params[f"{p}w1"]), self.params[f"{p}b1"]),
            self.slope,
        )
        return ad.add(ad.matmul(h, self.params[f"{p}w2"]), self.params[f"{p}b2"])


def infonce(social_rows, collab_rows, social_head, collab_head, tau: float):
    """In-batch contrastive loss on cosine similarity of projected rows.

    Anchor u's positive is row u of the other view; the remaining batch rows
    are its negatives. Zero-norm projections get cosine 0 for every pairing.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    e = social_head.apply(social_rows)
    p = collab_head.apply(collab_rows)
    if e.value.shape != p.value.shape or e.value.shape[0] < 1:
        raise ValueError("views must share a nonempty batch shape")
    dots = ad.matmul(e, ad.transpose(p))
    e_norm = ad.sqrt(ad.row_sum(ad.mul(e, e)))
    p_norm = ad.sqrt(ad.row_sum(ad.mul(p, p)))
    denom = ad.matmul(e_norm, ad.transpose(p_norm))
    cos = ad.mul(dots, ad.masked_recip(denom))
    logits = ad.scale(cos, 1.0 / tau)
    lse = ad.logsumexp_rows(logits)
    pos = ad.take_diag(logits)
    return ad.mean_all(ad.sub(lse, pos))


def predict_score(user_vec, item_vec) -> float:
    user_vec = np.asarray(user_vec, dtype=np.float64)
    item_vec = np.asarray(item_vec, dtype=np.float64)
    if user_vec.shape != item_vec.shape:
        raise ValueError("user and item vectors must share a dimension")
    return float(user_vec @ item_vec)


def bpr(pos_scores, neg_scores):
    """Pairwise ranking loss mean(-log sigmoid(pos - neg)) = mean(softplus(neg - pos))."""
    pos = pos_scores if isinstance(pos_scores, ad.Tensor) else ad.const(pos_scores)
    neg = neg_scores if isinstance(neg_scores, ad.Tensor) else ad.const(neg_scores)
    if pos.value.shape != neg.value.shape:
        raise ValueError("score batches must have equal shape")
    return ad.mean_all(ad.softplus(ad.sub(neg, pos)))


def joint_loss(l_diff, l_bpr, l_cl, weights: LossWeights):
    ld = l_diff if isinstance(l_diff, ad.Tensor) else ad.const(l_diff)
    lb = l_bpr if isinstance(l_bpr, ad.Tensor) else ad.const(l_bpr)
    lc = l_cl if isinstance(l_cl, ad.Tensor) else ad.const(l_cl)
    return ad.add(ld, ad.add(ad.scale(lb, weights.lambda1), ad.scale(lc, weights.lambda2)))
