"""Command-line front end: synth, stats, embed, tree, train, encode, graph,
quality, rerank."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import data as dat
from . import export as ex
from . import fusion as fu
from . import hierarchy as hi
from . import quantizer as rq
from . import trainer as tr
from .gse import GseConfig
from .gsr import GsrConfig


def _load_dataset(args):
    return dat.load_triples(args.train_file, args.valid_file, args.test_file,
                            delimiter=args.delimiter)


def _add_dataset_args(p):
    p.add_argument("--train-file", required=True)
    p.add_argument("--valid-file")
    p.add_argument("--test-file")
    p.add_argument("--delimiter", default="\t")


def cmd_synth(args):
    ds, feats, labels = dat.synth_hier_kg(args.seed, args.n_super, args.n_sub,
                                          args.per_leaf, args.dim,
                                          splits=tuple(args.splits))
    dat.save_triples(ds, args.out_prefix + ".train.tsv",
                     args.out_prefix + ".valid.tsv", args.out_prefix + ".test.tsv")
    feats.save(args.out_prefix + ".features.bin")
    with open(args.out_prefix + ".labels.json", "w", encoding="utf-8") as fh:
        json.dump({k: v.tolist() for k, v in labels.items()}, fh)
    print(json.dumps(ds.stats()))


def cmd_stats(args):
    print(json.dumps(_load_dataset(args).stats()))


def cmd_embed(args):
    ds = _load_dataset(args)
    struct = fu.train_struct(ds, backbone=args.backbone, d=args.dim,
                             steps=args.steps, seed=args.seed, lr=args.lr)
    if args.text_features:
        text = dat.FeatureFile.load(args.text_features)
        fused = fu.fuse(struct, text, args.rho)
    else:
        fused = fu.fuse(struct, struct.entity_vecs, 1.0)
    dat.FeatureFile(fused.vectors).save(args.out)
    rel_out = args.out + ".relations.bin"
    dat.FeatureFile(np.atleast_2d(struct.relation_vecs)).save(rel_out)
    print(json.dumps({"entities": fused.vectors.shape[0],
                      "dim": fused.vectors.shape[1],
                      "final_loss": struct.loss_trace[-1],
                      "relations_out": rel_out}))


def cmd_tree(args):
    feats = dat.FeatureFile.load(args.features)
    tree = hi.build_tree(feats.vectors, linkage=args.linkage,
                         n_levels=args.levels, leaf_count=args.leaf_count)
    tree.to_json(args.out)
    print(json.dumps({"levels": tree.n_levels, "nodes": len(tree.nodes)}))


def _train_config(args):
    return tr.TrainConfig(
        steps=args.steps, batch_size=args.batch_size, lr=args.lr, seed=args.seed,
        alpha=args.alpha, m=args.levels, K=args.codebook_size,
        encoder_hidden=tuple(args.encoder_hidden),
        gse=GseConfig(tau=args.tau, lambda1=args.lambda1, lambda2=args.lambda2,
                      n_max=args.n_max),
        gsr=GsrConfig(n_queries=args.parent_recon + 1, n_layers=args.recon_layers,
                      n_heads=args.recon_heads, lambda_s=args.lambda_s,
                      lambda_h=args.lambda_h),
        eval_every=args.eval_every, checkpoint_dir=args.checkpoint_dir,
        use_l1=not args.no_l1, use_l2=not args.no_l2, use_gsr=not args.no_gsr,
        dead_code_reset=not args.no_dead_reset)


def cmd_train(args):
    feats = dat.FeatureFile.load(args.features)
    tree = hi.HierarchyTree.from_json(args.tree)
    config = _train_config(args)
    state, log, selected = tr.run(config, feats.vectors, tree,
                                  log_csv=args.entropy_csv)
    print(json.dumps({"selected_checkpoint": str(selected),
                      "final_entropy": log.mean_entropy[-1],
                      "best_entropy": max(log.mean_entropy)}))


def _codes_from_checkpoint(checkpoint, features):
    codebooks, params, step, entropy = rq.load_checkpoint(checkpoint)
    z = rq.encode(features.vectors, params)
    return rq.quantize(z, codebooks, count_usage=False).codes, codebooks


def cmd_encode(args):
    feats = dat.FeatureFile.load(args.features)
    codes, codebooks = _codes_from_checkpoint(args.checkpoint, feats)
    names = [f"e{i:05d}" for i in range(feats.count)]
    if args.entity_names:
        with open(args.entity_names, encoding="utf-8") as fh:
            names = [line.rstrip("\n") for line in fh if line.strip()]
    ex.export_codes(codes, names, codebooks.K, path=args.out)
    print(json.dumps({"entities": len(names), "levels": codebooks.m}))


def cmd_graph(args):
    feats = dat.FeatureFile.load(args.features)
    codes, _ = _codes_from_checkpoint(args.checkpoint, feats)
    graph = ex.export_layer_graph(codes)
    graph.to_dot(args.out)
    if args.json_out:
        graph.to_json(args.json_out)
    print(json.dumps({"nodes": len(graph.nodes), "edges": len(graph.edges)}))


def cmd_quality(args):
    feats = dat.FeatureFile.load(args.features)
    codes, codebooks = _codes_from_checkpoint(args.checkpoint, feats)
    tree = hi.HierarchyTree.from_json(args.tree)
    planted = None
    if args.labels:
        with open(args.labels, encoding="utf-8") as fh:
            planted = {k: np.asarray(v) for k, v in json.load(fh).items()}
    print(json.dumps(ex.code_quality(codes, tree, k=codebooks.K,
                                     planted_labels=planted)))


def cmd_rerank(args):
    ds = _load_dataset(args)
    ent = dat.FeatureFile.load(args.entity_vectors).vectors
    rel = dat.FeatureFile.load(args.relation_vectors).vectors
    k_list = [int(k) for k in args.k.split(",")]
    rep = ex.filtered_ranking(ds, ent, rel, args.backbone, split=args.split,
                              k_list=k_list)
    print(json.dumps(rep))


def build_parser():
    p = argparse.ArgumentParser(prog="kgcodes",
                                description="hierarchical discrete codes for "
                                            "knowledge-graph entities")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("synth", help="generate a planted hierarchical dataset")
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--n-super", type=int, default=4)
    s.add_argument("--n-sub", type=int, default=4)
    s.add_argument("--per-leaf", type=int, default=50)
    s.add_argument("--dim", type=int, default=16)
    s.add_argument("--splits", type=float, nargs=3, default=[0.9, 0.05, 0.05])
    s.add_argument("--out-prefix", required=True)
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("stats", help="dataset statistics")
    _add_dataset_args(s)
    s.set_defaults(fn=cmd_stats)

    s = sub.add_parser("embed", help="train structural embeddings and fuse")
    _add_dataset_args(s)
    s.add_argument("--backbone", choices=fu.BACKBONES, default="translate")
    s.add_argument("--dim", type=int, default=16)
    s.add_argument("--rho", type=float, default=0.5)
    s.add_argument("--steps", type=int, default=500)
    s.add_argument("--lr", type=float, default=1e-2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--text-features")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_embed)

    s = sub.add_parser("tree", help="agglomerative hierarchy over embeddings")
    s.add_argument("--features", required=True)
    s.add_argument("--linkage", choices=hi.LINKAGES, default="average")
    s.add_argument("--levels", type=int, default=3)
    s.add_argument("--leaf-count", type=int, default=16)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_tree)

    s = sub.add_parser("train", help="train the quantizer jointly")
    s.add_argument("--features", required=True)
    s.add_argument("--tree", required=True)
    s.add_argument("--steps", type=int, default=300)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float, default=1e-4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--alpha", type=float, default=0.25)
    s.add_argument("--levels", type=int, default=3)
    s.add_argument("--codebook-size", type=int, default=64)
    s.add_argument("--encoder-hidden", type=int, nargs="*", default=[32, 32])
    s.add_argument("--tau", type=float, default=0.07)
    s.add_argument("--lambda1", type=float, default=0.8)
    s.add_argument("--lambda2", type=float, default=0.4)
    s.add_argument("--n-max", type=int, default=5)
    s.add_argument("--parent-recon", type=int, default=5)
    s.add_argument("--recon-layers", type=int, default=2)
    s.add_argument("--recon-heads", type=int, default=4)
    s.add_argument("--lambda-s", type=float, default=1.0)
    s.add_argument("--lambda-h", type=float, default=1.0)
    s.add_argument("--eval-every", type=int, default=100)
    s.add_argument("--checkpoint-dir", required=True)
    s.add_argument("--entropy-csv")
    s.add_argument("--no-l1", action="store_true")
    s.add_argument("--no-l2", action="store_true")
    s.add_argument("--no-gsr", action="store_true")
    s.add_argument("--no-dead-reset", action="store_true")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("encode", help="export token codes for all entities")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--entity-names")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_encode)

    s = sub.add_parser("graph", help="layer-distribution graph export")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--json-out")
    s.set_defaults(fn=cmd_graph)

    s = sub.add_parser("quality", help="code-quality metrics")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--tree", required=True)
    s.add_argument("--labels")
    s.set_defaults(fn=cmd_quality)

    s = sub.add_parser("rerank", help="filtered MRR / Hits@k evaluation")
    _add_dataset_args(s)
    s.add_argument("--entity-vectors", required=True)
    s.add_argument("--relation-vectors", required=True)
    s.add_argument("--backbone", choices=fu.BACKBONES, default="translate")
    s.add_argument("--split", default="test")
    s.add_argument("--k", default="1,3,10")
    s.set_defaults(fn=cmd_rerank)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
