"""End-to-end training loop: curriculum refresh, batch sampling, loss
assembly across ablation modes, Adam updates, checkpointing, and logging.

Determinism contract: every random draw comes from a named PCG64 stream
derived from (config seed, purpose, epoch), reductions run in a fixed
sequential order, and parameters are kept on the float32 grid (values are
round-tripped through float32 after init and after every optimizer step)
so checkpoint files reproduce in-memory parameters bit for bit.
"""

import math
import os
import resource
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import evaluation, sgm
from .config import TrainConfig
from .encoders import collab_encode, init_embedding, social_encode
from .graphs import (
    CurriculumState,
    SparseMatrix,
    build_bipartite_adjacency,
    build_interaction_matrix,
    build_social_adjacency,
    curriculum_step,
    sparsify_random,
    sym_normalize,
)
from .objectives import ProjectionHead, bpr, infonce, joint_loss

CHECKPOINT_VERSION = 1


class TrainingDivergence(Exception):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class CompatibilityError(Exception):
    pass


def _rng(*key):
    return np.random.default_rng(list(key))


def _snap_f32(value: np.ndarray) -> np.ndarray:
    """Project onto the float32 grid while keeping float64 compute dtype."""
    return value.astype(np.float32).astype(np.float64)


class Adam:
    def __init__(self, params: dict, lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2, self.eps = b1, b2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        for name in sorted(self.params):
            p = self.params[name]
            g = p.grad if p.grad is not None else np.zeros_like(p.value)
            self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.value = _snap_f32(p.value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))


class Model:
    """All trainable state plus the forward pieces the losses are built from."""

    def __init__(self, cfg: TrainConfig, n_users: int, m_items: int):
        self.cfg = cfg
        self.n_users = n_users
        self.m_items = m_items
        rng = _rng(cfg.seed, 0)
        d = cfg.dim
        self.params = {
            "p_s": ad.param(init_embedding(n_users, d, rng)),
            "p_r": ad.param(init_embedding(n_users, d, rng)),
            "q": ad.param(init_embedding(m_items, d, rng)),
        }
        for layer in range(cfg.layers):
            self.params[f"soc.w{layer}"] = ad.param(init_embedding(d, d, rng))
        self.score_net = sgm.ScoreNetwork(
            dim=d,
            cond_dim=d,
            time_embed_dim=cfg.net.time_embed_dim,
            hidden_dims=cfg.net.hidden_dims,
            rng=rng,
            prefix="score.",
        )
        self.params.update(self.score_net.params)
        self.head_social = ProjectionHead(d, d, rng, prefix="head_s.")
        self.head_collab = ProjectionHead(d, d, rng, prefix="head_c.")
        self.params.update(self.head_social.params)
        self.params.update(self.head_collab.params)
        self.fusion = None
        if cfg.ablations.no_ssl:
            self.fusion = ProjectionHead(2 * d, d, rng, prefix="fusion.")
            self.params.update(self.fusion.params)
        for p in self.params.values():
            p.value = _snap_f32(p.value)
        self.optimizer = Adam(self.params, cfg.learning_rate)

    def social_layer_weights(self):
        return [self.params[f"soc.w{l}"] for l in range(self.cfg.layers)]

    def social_forward(self, adj_norm: SparseMatrix) -> ad.Tensor:
        return social_encode(
            self.params["p_s"], adj_norm, self.social_layer_weights()
        )

    def collab_forward(self, adj_bip: SparseMatrix):
        return collab_encode(
            self.params["p_r"], self.params["q"], adj_bip, self.cfg.layers
        )

    def denoise_rows(self, e_s_rows, c_rows, rng):
        return sgm.denoise_social(
            e_s_rows, c_rows, self.score_net, self.cfg.sde, rng, self.cfg.t_start
        )

    def ranking_vectors(self, adj_social_norm, adj_bip, rng):
        """Evaluation-time user/item vectors (plain arrays) for the active mode."""
        users_t, items_t = self.collab_forward(adj_bip)
        users, items = users_t.value, items_t.value
        cfg = self.cfg
        if cfg.ablations.no_ssl or cfg.bpr_use_denoised:
            e_s = self.social_forward(adj_social_norm).value
            if cfg.ablations.no_sgm:
                denoised = e_s
            else:
                denoised = self.denoise_rows(e_s, users, rng)
            if cfg.ablations.no_ssl:
                fused = self.fusion.apply(
                    ad.hconcat([ad.const(users), ad.const(denoised)])
                )
                users = fused.value
            else:
                users = users + denoised
        return users, items

    def param_values(self):
        return {name: p.value.copy() for name, p in self.params.items()}

    def load_param_values(self, values: dict):
        for name, p in self.params.items():
            if name not in values:
                raise CompatibilityError(f"checkpoint is missing parameter {name!r}")
            if values[name].shape != p.value.shape:
                raise CompatibilityError(
                    f"parameter {name!r} has shape {values[name].shape}, "
                    f"model expects {p.value.shape}"
                )
            p.value = values[name].astype(np.float64)


def sample_batch(train_pairs, user_train_sets, m_items: int, batch_size: int, rng):
    """Uniform positives with one rejection-sampled negative per positive."""
    if train_pairs.shape[0] == 0:
        raise ValueError("empty training set")
    idx = rng.integers(0, train_pairs.shape[0], size=batch_size)
    users = train_pairs[idx, 0].copy()
    pos = train_pairs[idx, 1].copy()
    negs = np.empty(batch_size, dtype=np.int64)
    for row, u in enumerate(users):
        seen = user_train_sets[int(u)]
        if len(seen) >= m_items:
            raise ValueError(f"degenerate user {u}: interacted with every item")
        while True:
            j = int(rng.integers(0, m_items))
            if j not in seen:
                negs[row] = j
                break
    return users, pos, negs


def _edge_drop_view(social: SparseMatrix, keep: float, seed: int) -> SparseMatrix:
    return sym_normalize(sparsify_random(social, keep, seed))


def _batch_losses(model: Model, graphs, users, pos, negs, rng):
    """Assemble the mode-appropriate loss components for one batch.

    Returns (l_diff, l_bpr, l_cl) as graph tensors. Condition vectors and
    denoised rows enter as constants: gradients reach the collaborative
    encoder only through BPR and the contrastive branch.
    """
    cfg = model.cfg
    flags = cfg.ablations
    e_r_users, e_r_items = model.collab_forward(graphs["bipartite"])
    zero = ad.const(0.0)

    l_diff = zero
    denoised = None
    if not flags.no_sgm:
        e_s_cur = model.social_forward(graphs["active"])
        x0_bar = ad.gather_rows(e_s_cur, users)
        cond = e_r_users.value[users]
        l_diff = sgm.diffusion_loss(
            model.score_net, x0_bar, cond, cfg.sde, rng, cfg.t_eps
        )
        e_s_raw = model.social_forward(graphs["raw"]).value
        denoised = model.denoise_rows(e_s_raw[users], cond, rng)

    l_cl = zero
    if not flags.no_ssl:
        if flags.no_sgm:
            keep = 1.0 - cfg.aug_drop_rate
            seed1 = int(rng.integers(2**63))
            seed2 = int(rng.integers(2**63))
            view1 = model.social_forward(
                _edge_drop_view(graphs["social"], keep, seed1)
            )
            view2 = model.social_forward(
                _edge_drop_view(graphs["social"], keep, seed2)
            )
            l_cl = infonce(
                ad.gather_rows(view1, users),
                ad.gather_rows(view2, users),
                model.head_social,
                model.head_collab,
                cfg.weights.tau,
            )
        else:
            l_cl = infonce(
                ad.const(denoised),
                ad.gather_rows(e_r_users, users),
                model.head_social,
                model.head_collab,
                cfg.weights.tau,
            )

    user_vec = ad.gather_rows(e_r_users, users)
    if flags.no_ssl and model.fusion is not None:
        if denoised is None:
            e_s_raw = model.social_forward(graphs["raw"]).value
            denoised = e_s_raw[users] if flags.no_sgm else model.denoise_rows(
                e_s_raw[users], e_r_users.value[users], rng
            )
        user_vec = model.fusion.apply(ad.hconcat([user_vec, ad.const(denoised)]))
    elif cfg.bpr_use_denoised and denoised is not None:
        user_vec = ad.add(user_vec, ad.const(denoised))
    pos_scores = ad.rowdot(user_vec, ad.gather_rows(e_r_items, pos))
    neg_scores = ad.rowdot(user_vec, ad.gather_rows(e_r_items, negs))
    l_bpr = bpr(pos_scores, neg_scores)
    return l_diff, l_bpr, l_cl


def train_epoch(model: Model, ds, graphs, curric, epoch: int):
    """One full pass: optional curriculum refresh, then fixed-count batches.

    Returns (curriculum state, epoch log dict of loss means).
    """
    cfg = model.cfg
    if cfg.ablations.no_curriculum:
        graphs["active"] = graphs["raw"]
    else:
        user_emb = model.collab_forward(graphs["bipartite"])[0].value
        curric = curriculum_step(curric, epoch, graphs["social"], user_emb)
        graphs["active"] = curric.active
    rng = _rng(cfg.seed, 1, epoch)
    adam = model.optimizer
    train_sets = graphs["train_sets"]
    n_batches = max(1, math.ceil(ds.train.shape[0] / cfg.batch_size))
    sums = {"l_diff": 0.0, "l_bpr": 0.0, "l_cl": 0.0, "joint": 0.0}
    for batch_no in range(n_batches):
        users, pos, negs = sample_batch(
            ds.train, train_sets, ds.m_items, cfg.batch_size, rng
        )
        l_diff, l_bpr, l_cl = _batch_losses(model, graphs, users, pos, negs, rng)
        total = joint_loss(l_diff, l_bpr, l_cl, cfg.weights)
        values = {
            "l_diff": float(l_diff.value),
            "l_bpr": float(l_bpr.value),
            "l_cl": float(l_cl.value),
            "joint": float(total.value),
        }
        if not all(np.isfinite(v) for v in values.values()):
            raise TrainingDivergence(
                f"non-finite loss at epoch {epoch} batch {batch_no}: {values}",
                diagnostics={"epoch": epoch, "batch": batch_no, **values},
            )
        ad.backward(total)
        adam.step()
        ad.zero_grads(model.params.values())
        for key, v in values.items():
            sums[key] += v
    return curric, {k: v / n_batches for k, v in sums.items()}


@dataclass
class TrainResult:
    history: list
    model: Model
    best_epoch: int
    best_val_recall: float
    best_params: dict
    epochs_csv: list
    runtime_csv: list


def build_graph_caches(ds):
    social = build_social_adjacency(ds.social, ds.n_users)
    interactions = build_interaction_matrix(ds.train, ds.n_users, ds.m_items)
    return {
        "social": social,
        "raw": sym_normalize(social),
        "bipartite": build_bipartite_adjacency(interactions),
        "train_sets": ds.user_train_sets(),
        "active": None,
    }


def train(cfg: TrainConfig, ds, out_dir=None, log=None) -> TrainResult:
    """Run the full loop and (optionally) persist logs and the best checkpoint."""
    graphs = build_graph_caches(ds)
    model = Model(cfg, ds.n_users, ds.m_items)
    curric = CurriculumState(
        n_topk=cfg.curriculum.n_topk,
        m_random=cfg.curriculum.m_random,
        rho=cfg.curriculum.rho,
        rho_hat=cfg.curriculum.rho_hat,
        seed=cfg.seed,
        scope=cfg.curriculum.scope,
    )
    history = []
    epochs_csv = ["epoch,l_diff,l_bpr,l_cl,joint,recall10_val,ndcg10_val"]
    runtime_csv = ["epoch,wall_clock_s,peak_alloc_bytes"]
    best_recall = -1.0
    best_epoch = -1
    best_metrics = {}
    best_params = model.param_values()
    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        curric, losses = train_epoch(model, ds, graphs, curric, epoch)
        recall10 = ndcg10 = float("nan")
        if epoch % cfg.eval_every == 0:
            user_vecs, item_vecs = model.ranking_vectors(
                graphs["raw"], graphs["bipartite"], _rng(cfg.seed, 2, epoch)
            )
            result = evaluation.evaluate(user_vecs, item_vecs, ds, (10,), "val")
            recall10, ndcg10 = result.means[10]
            if recall10 > best_recall:
                best_recall = recall10
                best_epoch = epoch
                best_metrics = {"val_recall10": recall10, "val_ndcg10": ndcg10}
                best_params = model.param_values()
        row = {
            "epoch": epoch,
            **losses,
            "recall10_val": recall10,
            "ndcg10_val": ndcg10,
        }
        history.append(row)
        epochs_csv.append(
            f"{epoch},{losses['l_diff']:.17g},{losses['l_bpr']:.17g},"
            f"{losses['l_cl']:.17g},{losses['joint']:.17g},"
            f"{recall10:.17g},{ndcg10:.17g}"
        )
        wall = time.perf_counter() - started
        peak = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024
        runtime_csv.append(f"{epoch},{wall:.6f},{peak}")
        if log is not None:
            log(
                f"epoch {epoch}: joint={losses['joint']:.5f} "
                f"l_diff={losses['l_diff']:.5f} l_bpr={losses['l_bpr']:.5f} "
                f"l_cl={losses['l_cl']:.5f} recall10={recall10:.5f}"
            )
        if cfg.patience > 0 and best_epoch >= 0 and epoch - best_epoch >= cfg.patience:
            break
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "epochs.csv"), "w") as fh:
            fh.write("\n".join(epochs_csv) + "\n")
        with open(os.path.join(out_dir, "runtime.csv"), "w") as fh:
            fh.write("\n".join(runtime_csv) + "\n")
        save_checkpoint(
            os.path.join(out_dir, "best"),
            best_params,
            cfg,
            epoch=best_epoch,
            metrics=best_metrics,
            n_users=ds.n_users,
            m_items=ds.m_items,
        )
    return TrainResult(
        history, model, best_epoch, best_recall, best_params, epochs_csv, runtime_csv
    )


# ---------------------------------------------------------------------------
# Gradient verification


def gradient_check(loss_thunk, params: dict, probe_count: int = 80, eps: float = 1e-6, seed: int = 0):
    """Max relative error between reverse-mode and central-difference gradients.

    Probes `probe_count` scalar parameters chosen uniformly across all arrays.
    The relative error denominator is floored at 0.01 so that finite-difference
    roundoff on near-zero gradients is not misread as an adjoint bug; any real
    adjoint error still shows up far above the 1e-4 acceptance line.
    """
    root = loss_thunk()
    ad.backward(root)
    grads = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.value))
        for name, p in params.items()
    }
    ad.zero_grads(params.values())
    names = sorted(params)
    sizes = np.array([params[n].value.size for n in names])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    chosen = rng.choice(total, size=min(probe_count, total), replace=False)
    bounds = np.cumsum(sizes)
    worst = 0.0
    for flat in sorted(int(i) for i in chosen):
        slot = int(np.searchsorted(bounds, flat, side="right"))
        offset = flat - (0 if slot == 0 else int(bounds[slot - 1]))
        name = names[slot]
        p = params[name]
        theta = float(p.value.flat[offset])
        h = eps * max(1.0, abs(theta))
        p.value.flat[offset] = theta + h
        loss_hi = float(loss_thunk().value)
        p.value.flat[offset] = theta - h
        loss_lo = float(loss_thunk().value)
        p.value.flat[offset] = theta
        fd = (loss_hi - loss_lo) / (2.0 * h)
        an = float(grads[name].flat[offset])
        rel = abs(an - fd) / max(abs(an) + abs(fd), 1e-2)
        worst = max(worst, rel)
    return worst


def make_gradcheck_fixture(seed: int = 7):
    """Fixed 8-user / 12-item problem with d=8 used by the verification suite."""
    from .config import (
        AblationFlags,
        CurriculumConfig,
        NetConfig,
        TrainConfig,
    )

    cfg = TrainConfig(
        dim=8,
        layers=2,
        epochs=1,
        batch_size=8,
        learning_rate=1e-3,
        seed=seed,
        net=NetConfig(time_embed_dim=8, hidden_dims=(16, 16)),
        curriculum=CurriculumConfig(n_topk=3, m_random=2, rho=0.8, rho_hat=0.8),
        ablations=AblationFlags(),
    )
    train_pairs = np.array(
        [
            [0, 0], [0, 1], [0, 2],
            [1, 1], [1, 3], [1, 4],
            [2, 2], [2, 4], [2, 5],
            [3, 5], [3, 6], [3, 0],
            [4, 6], [4, 7], [4, 8],
            [5, 8], [5, 9], [5, 1],
            [6, 9], [6, 10], [6, 3],
            [7, 10], [7, 11], [7, 7],
        ],
        dtype=np.int64,
    )
    social = np.array(
        [[0, 1], [1, 2], [2, 3], [3, 4], [4, 5], [5, 6], [6, 7], [0, 7], [0, 4], [2, 6]],
        dtype=np.int64,
    )
    model = Model(cfg, 8, 12)
    adj_social = sym_normalize(build_social_adjacency(social, 8))
    adj_bip = build_bipartite_adjacency(build_interaction_matrix(train_pairs, 8, 12))
    users = np.arange(8, dtype=np.int64)
    pos = train_pairs[::3, 1].copy()
    negs = np.array([5, 7, 0, 2, 1, 4, 6, 3], dtype=np.int64)
    cond = model.collab_forward(adj_bip)[0].value[users]
    e_s0 = model.social_forward(adj_social).value
    denoised = model.denoise_rows(e_s0[users], cond, _rng(seed, 3))
    return {
        "cfg": cfg,
        "model": model,
        "adj_social": adj_social,
        "adj_bip": adj_bip,
        "users": users,
        "pos": pos,
        "negs": negs,
        "cond": cond,
        "denoised": denoised,
    }


def gradcheck_suite(probe_count: int = 80, seed: int = 7):
    """Finite-difference verification of every loss component on the fixture.

    Conditions and denoised rows are frozen constants so each thunk is a
    deterministic, differentiable-everywhere function of the parameters.
    Returns {loss name: max relative error}.
    """
    fx = make_gradcheck_fixture(seed)
    model, cfg = fx["model"], fx["cfg"]
    users, pos, negs = fx["users"], fx["pos"], fx["negs"]

    def diff_thunk():
        e_s = model.social_forward(fx["adj_social"])
        x0 = ad.gather_rows(e_s, users)
        return sgm.diffusion_loss(
            model.score_net, x0, fx["cond"], cfg.sde, _rng(seed, 10), cfg.t_eps
        )

    def bpr_thunk():
        e_r_users, e_r_items = model.collab_forward(fx["adj_bip"])
        uv = ad.gather_rows(e_r_users, users)
        return bpr(
            ad.rowdot(uv, ad.gather_rows(e_r_items, pos)),
            ad.rowdot(uv, ad.gather_rows(e_r_items, negs)),
        )

    def cl_thunk():
        e_r_users, _ = model.collab_forward(fx["adj_bip"])
        return infonce(
            ad.const(fx["denoised"]),
            ad.gather_rows(e_r_users, users),
            model.head_social,
            model.head_collab,
            cfg.weights.tau,
        )

    def joint_thunk():
        return joint_loss(diff_thunk(), bpr_thunk(), cl_thunk(), cfg.weights)

    thunks = {
        "l_diff": diff_thunk,
        "l_bpr": bpr_thunk,
        "l_cl": cl_thunk,
        "joint": joint_thunk,
    }
    return {
        name: gradient_check(thunk, model.params, probe_count, seed=seed + k)
        for k, (name, thunk) in enumerate(thunks.items())
    }


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(path, param_values: dict, cfg: TrainConfig, epoch: int,
                    metrics: dict, n_users: int, m_items: int):
    """Directory checkpoint: human-readable manifest plus one little-endian
    float32 row-major `.f32` file per named parameter."""
    os.makedirs(path, exist_ok=True)
    lines = [
        f"version = {CHECKPOINT_VERSION}",
        f"epoch = {epoch}",
        f"n_users = {n_users}",
        f"m_items = {m_items}",
    ]
    for key in sorted(metrics):
        lines.append(f"metric.{key} = {metrics[key]:.17g}")
    lines.extend(f"config.{line}" for line in cfg.to_lines())
    for name in sorted(param_values):
        shape = ",".join(str(s) for s in param_values[name].shape)
        lines.append(f"param.{name} = {shape}")
    with open(os.path.join(path, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    for name, value in param_values.items():
        with open(os.path.join(path, f"{name}.f32"), "wb") as fh:
            fh.write(np.ascontiguousarray(value, dtype="<f4").tobytes())


@dataclass(frozen=True)
class CheckpointData:
    epoch: int
    metrics: dict
    config_lines: list
    n_users: int
    m_items: int
    params: dict


def load_checkpoint(path) -> CheckpointData:
    """Parse and fully validate a checkpoint before returning any state."""
    manifest = os.path.join(path, "manifest.txt")
    entries = []
    with open(manifest, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            entries.append((key.strip(), value.strip()))
    table = dict(entries)
    version = table.get("version")
    if version != str(CHECKPOINT_VERSION):
        raise CompatibilityError(
            f"checkpoint version {version} is not the supported version "
            f"{CHECKPOINT_VERSION}"
        )
    shapes = {}
    for key, value in entries:
        if key.startswith("param."):
            name = key[len("param.") :]
            shapes[name] = tuple(int(s) for s in value.split(",") if s)
    params = {}
    for name, shape in shapes.items():
        file_path = os.path.join(path, f"{name}.f32")
        expected = int(np.prod(shape, dtype=np.int64)) * 4
        with open(file_path, "rb") as fh:
            blob = fh.read()
        if len(blob) != expected:
            raise ValueError(
                f"checkpoint file {file_path} holds {len(blob)} bytes, "
                f"expected {expected}"
            )
        params[name] = (
            np.frombuffer(blob, dtype="<f4").astype(np.float64).reshape(shape)
        )
    config_lines = [
        f"{k[len('config.'):]} = {v}" for k, v in entries if k.startswith("config.")
    ]
    metrics = {
        k[len("metric.") :]: float(v) for k, v in entries if k.startswith("metric.")
    }
    return CheckpointData(
        epoch=int(table.get("epoch", "-1")),
        metrics=metrics,
        config_lines=config_lines,
        n_users=int(table.get("n_users", "0")),
        m_items=int(table.get("m_items", "0")),
        params=params,
    )
