"""Command-line pipeline: synthesize data, train, encode, index, retrieve,
evaluate, and export embeddings.

Exit codes: 0 success, 2 usage/configuration problems (bad flags, missing or
malformed files, dimension mismatches), 1 unexpected runtime failures. All
numeric results print with six decimals so runs diff cleanly.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import autodiff as ad
from . import config as cfgmod
from . import hashing
from . import losses as ls
from . import networks as nets
from . import training
from .datasets import Dataset, ShiftSpec, load_csv, load_idx, make_synthetic_pair
from .fileio import FormatError, atomic_write_text


def _load_dataset(args, needs_labels: bool) -> Dataset:
    if getattr(args, "format", "csv") == "idx":
        if not args.labels_file:
            raise ValueError("idx input needs --labels-file")
        limit = args.limit if args.limit > 0 else None
        return load_idx(args.data, args.labels_file, limit)
    has_labels = not getattr(args, "no_labels", False)
    if needs_labels and not has_labels:
        raise ValueError("this command needs labeled data; drop --no-labels")
    return load_csv(args.data, has_labels=has_labels)


def _load_encoder(model_dir: str) -> nets.ParameterSet:
    return nets.load_params(os.path.join(model_dir, "encoder.params"), name="encoder")


def _load_classifier(model_dir: str) -> nets.ParameterSet:
    return nets.load_params(os.path.join(model_dir, "classifier.params"),
                            name="classifier")


def _check_feature_width(pset: nets.ParameterSet, dataset: Dataset) -> None:
    if dataset.feature_dim != pset.input_dim:
        raise ValueError(
            f"data feature width {dataset.feature_dim} does not match model "
            f"input width {pset.input_dim}")


def cmd_train(args) -> int:
    run = cfgmod.load_config(args.config)
    if args.seed is not None:
        run.hp.seed = args.seed
    source, target = cfgmod.build_datasets(run.data, run.hp.seed)
    run.hp.validate(source.n_classes)

    state = training.new_state(source.feature_dim, source.n_classes, run.hp,
                               run.sizes)
    training.pretrain_source(state, source)
    os.makedirs(args.out, exist_ok=True)
    metrics_path = os.path.join(args.out, "metrics.csv")
    training.run_stages(state, source, target, eval_target=target,
                        metrics_path=metrics_path, checkpoint_dir=args.out)
    state.model.save(os.path.join(args.out, "final"))

    last = state.history[-1]
    print(f"src_acc={last.src_acc:.6f}")
    if not np.isnan(last.tgt_acc):
        print(f"tgt_acc={last.tgt_acc:.6f}")
    print(f"confident_frac={last.confident_frac:.6f}")
    return 0


def cmd_encode(args) -> int:
    encoder = _load_encoder(args.model)
    dataset = _load_dataset(args, needs_labels=False)
    _check_feature_width(encoder, dataset)
    u = nets.encode_array(encoder, dataset.features)
    codes = hashing.binarize(u)
    labels = dataset.labels if dataset.labels is not None \
        else np.full(len(dataset), -1, dtype=np.int64)
    index = hashing.RetrievalIndex(d=u.shape[1], codes=codes, labels=labels,
                                   ids=np.arange(len(dataset), dtype=np.uint64))
    hashing.save_codes(args.out, index)
    print(f"encoded {len(index)} items at {u.shape[1]} bits")
    return 0


def cmd_build_index(args) -> int:
    parts = [hashing.load_codes(path) for path in args.codes]
    d = parts[0].d
    for path, part in zip(args.codes, parts):
        if part.d != d:
            raise ValueError(
                f"code length mismatch: {args.codes[0]} has d={d}, "
                f"{path} has d={part.d}")
    ids = np.concatenate([p.ids for p in parts])
    if len(np.unique(ids)) != len(ids):
        raise ValueError("duplicate ids across input code files")
    merged = hashing.RetrievalIndex(
        d=d,
        codes=np.concatenate([p.codes for p in parts]),
        labels=np.concatenate([p.labels for p in parts]),
        ids=ids)
    hashing.save_codes(args.out, merged)
    print(f"indexed {len(merged)} items at {d} bits")
    return 0


def _load_index_and_queries(args) -> tuple[hashing.RetrievalIndex, hashing.RetrievalIndex]:
    index = hashing.load_codes(args.index)
    queries = hashing.load_codes(args.queries)
    if index.d != queries.d:
        raise ValueError(
            f"code length mismatch: index d={index.d}, queries d={queries.d}")
    return index, queries


def cmd_query(args) -> int:
    index, queries = _load_index_and_queries(args)
    for q in range(len(queries)):
        hits = hashing.knn(index, queries.codes[q], args.k)
        for rank, (hit_id, dist) in enumerate(hits, start=1):
            print(f"{int(queries.ids[q])} {rank} {hit_id} {dist}")
    return 0


def cmd_eval_map(args) -> int:
    index, queries = _load_index_and_queries(args)
    value = hashing.mean_average_precision(
        index, queries.codes, queries.labels, query_ids=queries.ids,
        exclude_self=not args.include_self,
        cutoff=args.map_cutoff)
    print(f"MAP={value:.6f}")
    return 0


def cmd_eval_acc(args) -> int:
    encoder = _load_encoder(args.model)
    classifier = _load_classifier(args.model)
    dataset = _load_dataset(args, needs_labels=True)
    if dataset.labels is None:
        raise ValueError("accuracy evaluation needs labeled data")
    _check_feature_width(encoder, dataset)
    acc = training.evaluate_accuracy(encoder, classifier, dataset.features,
                                     dataset.labels)
    print(f"ACC={acc:.6f}")
    return 0


def cmd_grad_check(args) -> int:
    rng = np.random.default_rng(args.seed)
    n_classes = 3
    feature_dim = 4
    batch = args.batch
    sizes = training.ModelSizes(encoder_hidden=(args.width,),
                                generator_hidden=(args.width,),
                                discriminator_hidden=(args.width,),
                                classifier_hidden=())
    hp = ls.Hyperparams(code_bits=4, batch_size=batch, seed=args.seed)
    model = training.ModelParams.build(feature_dim, n_classes, hp.code_bits,
                                       sizes, args.seed)
    x_src = rng.uniform(-2, 2, size=(batch, feature_dim))
    x_tgt = rng.uniform(-2, 2, size=(batch, feature_dim))
    y_src = rng.integers(0, n_classes, size=batch)
    y_tgt = rng.integers(-1, n_classes, size=batch)

    def combined() -> ad.Node:
        u_src = nets.encode(model.encoder, ad.leaf(x_src))
        u_tgt = nets.encode(model.encoder, ad.leaf(x_tgt))
        class_loss = ls.classification_loss(
            nets.classify(model.classifier, u_src), y_src,
            nets.classify(model.classifier, u_tgt), y_tgt, hp.pseudo_weight)
        hash_loss = ls.pairwise_hash_loss(u_src, ls.similarity_matrix(y_src),
                                          hp.quant_weight)
        centroid = ls.centroid_alignment_loss(u_src, y_src, u_tgt, y_tgt, n_classes)
        recon_src = nets.reconstruct(model.gen_src, u_src)
        recon_tgt = nets.reconstruct(model.gen_tgt, u_tgt)
        recon = ls.reconstruction_l1_loss(ad.leaf(x_src), recon_src,
                                          ad.leaf(x_tgt), recon_tgt)
        adv = ls.generator_adversarial_loss(
            nets.discriminate(model.disc_tgt, nets.reconstruct(model.gen_tgt, u_src)),
            y_src,
            nets.discriminate(model.disc_src, nets.reconstruct(model.gen_src, u_tgt)),
            y_tgt, n_classes)
        return ls.combined_model_loss(class_loss, adv, hash_loss, centroid,
                                      recon, hp)

    leaves = []
    for pset in model.all_sets().values():
        leaves.extend(pset.leaves())
    err = ad.grad_check(combined, leaves, step=args.step)
    print(f"max_rel_err={err:.6e}")
    if err > args.tol:
        print(f"error: gradient check failed tolerance {args.tol}", file=sys.stderr)
        return 1
    return 0


def cmd_export_embeddings(args) -> int:
    encoder = _load_encoder(args.model)
    dataset = _load_dataset(args, needs_labels=False)
    _check_feature_width(encoder, dataset)
    u = nets.encode_array(encoder, dataset.features)
    d = u.shape[1]
    labels = dataset.labels if dataset.labels is not None \
        else np.full(len(dataset), -1, dtype=np.int64)
    lines = ["id,label," + ",".join(f"u_{j + 1}" for j in range(d))]
    for i in range(len(dataset)):
        coords = ",".join(f"{v:.6f}" for v in u[i])
        lines.append(f"{i},{int(labels[i])},{coords}")
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    print(f"exported {len(dataset)} embeddings of width {d}")
    return 0


def cmd_make_synthetic(args) -> int:
    shift = ShiftSpec(rotation=np.deg2rad(args.rotation_deg),
                      translation=tuple(args.translate),
                      scale=args.scale,
                      noise_sigma=args.noise_sigma)
    source, target = make_synthetic_pair(args.classes, args.per_class, args.dim,
                                         shift, args.seed,
                                         cluster_sigma=args.cluster_sigma,
                                         radius=args.radius)
    os.makedirs(args.out, exist_ok=True)
    for name, ds in (("source.csv", source), ("target.csv", target)):
        rows = []
        for i in range(len(ds)):
            feats = ",".join(repr(v) for v in ds.features[i])
            rows.append(f"{feats},{int(ds.labels[i])}")
        atomic_write_text(os.path.join(args.out, name), "\n".join(rows) + "\n")
    print(f"wrote {len(source)} source and {len(target)} target rows to {args.out}")
    return 0


def _add_data_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--data", required=True, help="CSV path (or IDX images path)")
    sub.add_argument("--format", choices=("csv", "idx"), default="csv")
    sub.add_argument("--labels-file", default="", help="IDX labels path")
    sub.add_argument("--no-labels", action="store_true",
                     help="CSV rows carry no trailing label column")
    sub.add_argument("--limit", type=int, default=0, help="IDX row cap (0 = all)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adahash",
        description="Domain-adaptive hashing: train, encode, search, evaluate.")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("train", help="run the staged training schedule")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override train.seed")
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("encode", help="embed a dataset and write packed codes")
    p.add_argument("--model", required=True, help="checkpoint directory")
    _add_data_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = subs.add_parser("build-index", help="merge code files into one index")
    p.add_argument("--codes", required=True, nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_index)

    p = subs.add_parser("query", help="k-nearest-neighbor lookups")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=cmd_query)

    p = subs.add_parser("eval-map", help="mean average precision of an index")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--map-cutoff", type=int, default=None)
    p.add_argument("--include-self", action="store_true",
                   help="keep queries' own index entries in their rankings")
    p.set_defaults(func=cmd_eval_map)

    p = subs.add_parser("eval-acc", help="classification accuracy on labeled data")
    p.add_argument("--model", required=True)
    _add_data_flags(p)
    p.set_defaults(func=cmd_eval_acc)

    p = subs.add_parser("grad-check", help="finite-difference check of the objective")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--batch", type=int, default=6)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_grad_check)

    p = subs.add_parser("export-embeddings", help="dump embeddings as CSV")
    p.add_argument("--model", required=True)
    _add_data_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_embeddings)

    p = subs.add_parser("make-synthetic", help="write the two-domain benchmark as CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--rotation-deg", type=float, default=50.0)
    p.add_argument("--translate", type=float, nargs="*", default=[0.3, -0.2])
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--cluster-sigma", type=float, default=0.15)
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_synthetic)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
