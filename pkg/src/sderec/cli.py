"""Command-line surface: ingest, stats, train, evaluate, denoise, gradcheck.

Exit codes: 0 ok, 1 usage, 2 I/O, 3 numeric failure, 4 compatibility,
5 verification failure.
"""

import argparse
import os
import sys

import numpy as np

from . import data as dataset
from . import evaluation, sgm, training
from .config import TrainConfig, load_config, parse_config_lines
from .graphs import build_bipartite_adjacency, build_interaction_matrix, build_social_adjacency, sym_normalize

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERIC = 3
EXIT_COMPAT = 4
EXIT_VERIFY = 5


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _write_lines(path, lines):
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _save_split(ds, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    for name, pairs in (("train", ds.train), ("val", ds.val), ("test", ds.test)):
        _write_lines(
            os.path.join(out_dir, f"{name}.tsv"),
            [f"{u}\t{i}" for u, i in pairs] or [""],
        )
    _write_lines(
        os.path.join(out_dir, "social.tsv"),
        [f"{u}\t{v}" for u, v in ds.social] or [""],
    )
    idmap = [f"U\t{ext}\t{idx}" for idx, ext in enumerate(ds.user_ids)]
    idmap += [f"I\t{ext}\t{idx}" for idx, ext in enumerate(ds.item_ids)]
    _write_lines(os.path.join(out_dir, "idmap.tsv"), idmap)


def load_split_dir(path) -> dataset.SplitDataset:
    def read_pairs(name):
        rows = []
        with open(os.path.join(path, name), "r") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    a, b = line.split("\t")
                    rows.append((int(a), int(b)))
        return np.array(rows, dtype=np.int64).reshape(-1, 2)

    user_ids, item_ids = [], []
    with open(os.path.join(path, "idmap.tsv"), "r") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            kind, ext, idx = line.split("\t")
            (user_ids if kind == "U" else item_ids).append((int(idx), ext))
    user_ids = [ext for _, ext in sorted(user_ids)]
    item_ids = [ext for _, ext in sorted(item_ids)]
    return dataset.SplitDataset(
        n_users=len(user_ids),
        m_items=len(item_ids),
        train=read_pairs("train.tsv"),
        val=read_pairs("val.tsv"),
        test=read_pairs("test.tsv"),
        social=read_pairs("social.tsv"),
        user_ids=user_ids,
        item_ids=item_ids,
    )


def _stats_csv_lines(st):
    return [
        "key,value",
        f"n_users,{st.n_users}",
        f"m_items,{st.m_items}",
        f"n_interactions,{st.n_interactions}",
        f"n_relations,{st.n_relations}",
        f"interaction_density,{st.interaction_density:.10g}",
        f"relation_density,{st.relation_density:.10g}",
        f"substitute_homophily,{st.substitute_homophily:.10g}",
    ]


def cmd_ingest(args) -> int:
    ratings, malformed = dataset.ingest_ratings(args.ratings)
    for bad in malformed:
        print(f"warning: line {bad.line_no} rejected ({bad.reason})", file=sys.stderr)
    trust = dataset.ingest_trust(args.trust)
    pre = dataset.preprocess(ratings, trust)
    ds = dataset.split(pre, ratios=tuple(args.ratios), seed=args.seed)
    _save_split(ds, args.out)
    st = dataset.stats(ds)
    _write_lines(os.path.join(args.out, "stats.txt"), st.to_lines())
    _write_lines(os.path.join(args.out, "stats.csv"), _stats_csv_lines(st))
    print("\n".join(st.to_lines()))
    print(f"wrote split files to {args.out}")
    return EXIT_OK


def cmd_stats(args) -> int:
    ds = load_split_dir(args.data)
    st = dataset.stats(ds)
    print("\n".join(st.to_lines()))
    if args.out:
        _write_lines(args.out, _stats_csv_lines(st))
    return EXIT_OK


def _load_train_config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        updates["epochs"] = args.epochs
    if updates:
        from dataclasses import replace

        cfg = replace(cfg, **updates)
    for name in getattr(args, "ablation", None) or []:
        from dataclasses import replace

        from .config import AblationFlags

        flags = {
            "no_curriculum": cfg.ablations.no_curriculum,
            "no_sgm": cfg.ablations.no_sgm,
            "no_ssl": cfg.ablations.no_ssl,
        }
        if name not in flags:
            raise ValueError(f"unknown ablation: {name}")
        flags[name] = True
        cfg = replace(cfg, ablations=AblationFlags(**flags))
    return cfg


def cmd_train(args) -> int:
    cfg = _load_train_config(args)
    ds = load_split_dir(args.data)
    log = None if args.quiet else (lambda msg: print(msg, flush=True))
    result = training.train(cfg, ds, out_dir=args.out, log=log)
    print(
        f"best epoch {result.best_epoch}: val recall@10 = "
        f"{result.best_val_recall:.6f}"
    )
    return EXIT_OK


def _rebuild_model(ckpt: training.CheckpointData, ds) -> training.Model:
    cfg = parse_config_lines(ckpt.config_lines)
    if ckpt.n_users != ds.n_users or ckpt.m_items != ds.m_items:
        raise training.CompatibilityError(
            f"checkpoint is for {ckpt.n_users} users / {ckpt.m_items} items, "
            f"dataset has {ds.n_users} / {ds.m_items}"
        )
    model = training.Model(cfg, ds.n_users, ds.m_items)
    model.load_param_values(ckpt.params)
    return model


def cmd_evaluate(args) -> int:
    ds = load_split_dir(args.data)
    ckpt = training.load_checkpoint(args.checkpoint)
    model = _rebuild_model(ckpt, ds)
    graphs = training.build_graph_caches(ds)
    seed = args.seed if args.seed is not None else model.cfg.seed
    user_vecs, item_vecs = model.ranking_vectors(
        graphs["raw"], graphs["bipartite"], np.random.default_rng([seed, 2, 0])
    )
    ks = tuple(int(k) for k in args.ks.split(","))
    result = evaluation.evaluate(user_vecs, item_vecs, ds, ks, args.phase)
    lines = result.to_csv_lines(per_user=args.per_user)
    print("\n".join(lines))
    if args.out:
        _write_lines(args.out, lines)
    return EXIT_OK


def cmd_denoise(args) -> int:
    ds = load_split_dir(args.data)
    ckpt = training.load_checkpoint(args.checkpoint)
    model = _rebuild_model(ckpt, ds)
    graphs = training.build_graph_caches(ds)
    seed = args.seed if args.seed is not None else model.cfg.seed
    rng = np.random.default_rng([seed, 99])
    e_s = model.social_forward(graphs["raw"]).value
    e_r = model.collab_forward(graphs["bipartite"])[0].value
    denoised = sgm.denoise_social(
        e_s, e_r, model.score_net, model.cfg.sde, rng, model.cfg.t_start
    )
    lines = [
        str(u) + "\t" + "\t".join(f"{x:.17g}" for x in row)
        for u, row in enumerate(denoised)
    ]
    _write_lines(args.out, lines)
    print(f"wrote {denoised.shape[0]} denoised rows to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    report = training.gradcheck_suite(probe_count=args.probes)
    failed = False
    for name, err in report.items():
        status = "ok" if err < 1e-4 else "FAIL"
        print(f"{name}: max rel err = {err:.3e} [{status}]")
        failed = failed or err >= 1e-4
    return EXIT_VERIFY if failed else EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="sderec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse raw files, filter, split, report stats")
    p.add_argument("--ratings", required=True)
    p.add_argument("--trust", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--ratios",
        type=lambda s: [float(x) for x in s.split(",")],
        default=[0.8, 0.1, 0.1],
    )
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("stats", help="recompute statistics for an ingested dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="run the training loop")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--ablation", action="append", metavar="FLAG")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="full-rank metrics from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--phase", choices=("val", "test"), default="val")
    p.add_argument("--ks", default="5,10")
    p.add_argument("--per-user", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("denoise", help="write denoised social embeddings")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--probes", type=int, default=80)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except training.CompatibilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPAT
    except training.TrainingDivergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, IsADirectoryError, PermissionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
