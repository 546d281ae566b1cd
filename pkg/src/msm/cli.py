"""Command-line driver: ``msm synth|split|walk|train|eval|embed-unseen|amazon|export``.

Exit codes: 0 ok, 2 usage, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from typing import List, Optional

import numpy as np

from . import __version__
from .evaluate import EvalSplit, evaluate, split_edges
from .graph import GraphError, HeterogeneousGraph
from .inductive import embed_unseen
from .io import (CheckpointError, ConfigError, amazon_schemas, check_registries, export_embeddings,
                 format_config, load_amazon, load_checkpoint, parse_value, read_config, read_schemas,
                 save_checkpoint)
from .metapath import SchemaSyntaxError, generate_corpus, parse_schema
from .synthgen import (SynthSpec, SynthSpecError, balanced_preset, generate, inductive_preset,
                       unbalanced_preset)
from .trainer import NumericalError, TrainConfig, train

log = logging.getLogger("msm")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

# reference MSM-T link-prediction numbers on Amazon
AMAZON_REFERENCE = {"roc_auc": 0.871, "pr_auc": 0.842, "f1": 0.790}

PRESETS = {"balanced": balanced_preset, "unbalanced": unbalanced_preset,
           "inductive": inductive_preset, "default": lambda seed=0: SynthSpec(seed=seed)}


def _digest(path: str) -> Optional[str]:
    if not path or not os.path.exists(path):
        return None
    h = hashlib.sha256()
    paths = [path]
    if os.path.isdir(path):
        paths = [os.path.join(path, p) for p in sorted(os.listdir(path))
                 if os.path.isfile(os.path.join(path, p))]
    for p in paths:
        h.update(os.path.basename(p).encode())
        with open(p, "rb") as f:
            h.update(f.read())
    return h.hexdigest()


def write_run_manifest(path: str, command: str, inputs: dict, started: float,
                       config: Optional[TrainConfig] = None, seed: Optional[int] = None) -> None:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "seed": seed if seed is not None else (config.seed if config else None),
        "config": dataclasses.asdict(config) if config else None,
        "inputs": {k: {"path": v, "sha256": _digest(v)} for k, v in inputs.items() if v},
        "timings": {"seconds": round(time.time() - started, 3)},
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


# ----------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    t0 = time.time()
    spec = PRESETS[args.preset](seed=args.seed)
    if args.noise is not None:
        spec.noise = args.noise
    sg = generate(spec)
    sg.write(args.out)
    with open(os.path.join(args.out, "schemas.txt"), "w", encoding="utf-8") as f:
        f.write("\n".join(spec.schemas()) + "\n")
    write_run_manifest(os.path.join(args.out, "manifest.json"), "synth", {}, t0, seed=args.seed)
    print(json.dumps(sg.graph.stats()))
    return 0


def cmd_split(args) -> int:
    t0 = time.time()
    graph = HeterogeneousGraph.read(args.graph_dir)
    split, train_graph = split_edges(graph, args.valid_frac, args.test_frac, args.seed)
    train_graph.write(os.path.join(args.out, "train"))
    split.write(args.out, graph)
    write_run_manifest(os.path.join(args.out, "manifest.json"), "split",
                       {"graph_dir": args.graph_dir}, t0, seed=args.seed)
    print(json.dumps(train_graph.stats()))
    return 0


def cmd_walk(args) -> int:
    t0 = time.time()
    graph = HeterogeneousGraph.read(args.graph_dir)
    schemas = [parse_schema(s, graph) for s in read_schemas(args.schemas)]
    corpus = generate_corpus(graph, schemas, args.walks_per_node, args.max_length, args.seed,
                             args.threads)
    corpus.write(args.out, graph)
    write_run_manifest(args.out + ".manifest.json", "walk",
                       {"graph_dir": args.graph_dir, "schemas": args.schemas}, t0, seed=args.seed)
    print(f"{len(corpus)} walks")
    return 0


_CONFIG_SKIP = {"schemas"}


def _config_from_args(args) -> TrainConfig:
    config = read_config(args.config) if args.config else TrainConfig()
    overrides = {}
    for f in dataclasses.fields(TrainConfig):
        if f.name in _CONFIG_SKIP:
            continue
        val = getattr(args, f.name, None)
        if val is not None:
            overrides[f.name] = val
    for k in ("alpha", "beta"):
        if k in overrides:
            overrides[k] = parse_value(k, overrides[k], None, 0)
    if args.deterministic:
        overrides["deterministic"] = True
    elif overrides.get("threads", 1) > 1:
        overrides["deterministic"] = False
    if args.schemas:
        overrides["schemas"] = read_schemas(args.schemas)
    try:
        return dataclasses.replace(config, **overrides)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def cmd_train(args) -> int:
    t0 = time.time()
    config = _config_from_args(args)
    graph = HeterogeneousGraph.read(args.graph_dir)
    if not config.schemas:
        raise ConfigError("no metapath schemas given (use --schemas or 'schema =' config lines)")
    os.makedirs(args.out, exist_ok=True)
    result = train(graph, config.schemas, config)
    ckpt = os.path.join(args.out, "checkpoint.bin")
    save_checkpoint(result.params, ckpt, graph)
    result.write_loss_trace(os.path.join(args.out, "loss.csv"))
    with open(os.path.join(args.out, "config.txt"), "w", encoding="utf-8") as f:
        f.write(format_config(config))
    write_run_manifest(os.path.join(args.out, "manifest.json"), "train",
                       {"graph_dir": args.graph_dir, "config": args.config,
                        "schemas": args.schemas}, t0, config=config)
    for epoch, loss, lr in result.loss_trace:
        print(f"epoch {epoch}: mean loss {loss:.5f} (lr {lr:.3g})")
    return 0


def cmd_eval(args) -> int:
    t0 = time.time()
    graph = HeterogeneousGraph.read(args.graph_dir)
    check_registries(args.checkpoint, graph)
    params = load_checkpoint(args.checkpoint)
    if params.dims.num_nodes != graph.num_nodes:
        raise CheckpointError(
            f"checkpoint has {params.dims.num_nodes} nodes, graph has {graph.num_nodes}")
    split = EvalSplit.read(args.split_dir, graph)
    report = evaluate(graph, params, split)
    reference = AMAZON_REFERENCE if args.reference == "amazon" else None
    table = report.table(reference)
    print(table)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as f:
            f.write(table + "\n")
        with open(os.path.join(args.out, "report.csv"), "w", encoding="utf-8") as f:
            f.write(report.to_csv())
        if args.json:
            with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as f:
                f.write(report.to_json() + "\n")
        write_run_manifest(os.path.join(args.out, "manifest.json"), "eval",
                           {"checkpoint": args.checkpoint, "graph_dir": args.graph_dir,
                            "split_dir": args.split_dir}, t0)
    elif args.json:
        print(report.to_json())
    return 0


def cmd_embed_unseen(args) -> int:
    graph = HeterogeneousGraph.read(args.graph_dir)
    check_registries(args.checkpoint, graph)
    params = load_checkpoint(args.checkpoint)
    if params.kind != "i":
        raise CheckpointError("embed-unseen needs an inductive (MSMI) checkpoint")
    new_nodes = {}
    with open(args.nodes, encoding="utf-8") as f:
        for line in f:
            if not line.strip() or line.startswith("#"):
                continue
            name, ntype, vals = line.rstrip("\n").split("\t")
            new_nodes[name] = (ntype, [float(x) for x in vals.split(",")], [])
    if args.edges:
        with open(args.edges, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                if not line.strip() or line.startswith("#"):
                    continue
                name, other, etype = line.rstrip("\n").split("\t")
                if name not in new_nodes:
                    raise GraphError(f"{args.edges}:{lineno}: {name!r} is not a new node")
                v = graph.nodes.get(other)
                if v is None:
                    raise GraphError(f"{args.edges}:{lineno}: unknown neighbor {other!r}")
                new_nodes[name][2].append((v, graph.edge_types.id(etype)))
    etypes = [args.edge_type] if args.edge_type else graph.edge_types.names
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for name, (ntype, x, edges) in new_nodes.items():
            for e in etypes:
                vec = embed_unseen(graph, params, ntype, x, edges, e)
                out.write(f"{name}\t{e}\t" + ",".join("%.9g" % v for v in vec.astype(np.float32)) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_amazon(args) -> int:
    t0 = time.time()
    graph, report = load_amazon(args.movies, args.books)
    graph.write(args.out)
    with open(os.path.join(args.out, "schemas.txt"), "w", encoding="utf-8") as f:
        f.write("\n".join(amazon_schemas(graph)) + "\n")
    write_run_manifest(os.path.join(args.out, "manifest.json"), "amazon",
                       {"movies": args.movies, "books": args.books}, t0)
    print(report)
    print(json.dumps(graph.stats()))
    return 0


def cmd_export(args) -> int:
    graph = HeterogeneousGraph.read(args.graph_dir)
    check_registries(args.checkpoint, graph)
    params = load_checkpoint(args.checkpoint)
    export_embeddings(params, graph, args.edge_type, args.out, binary=args.binary)
    return 0


# ----------------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    for f in dataclasses.fields(TrainConfig):
        if f.name in _CONFIG_SKIP or f.name in ("deterministic",):
            continue
        flag = "--" + f.name.replace("_", "-")
        kind = {"int": int, "float": float}.get(str(f.type), str)
        p.add_argument(flag, dest=f.name, type=kind, default=None,
                       help=f"override config key '{f.name}' (default {f.default!r})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a planted-community graph")
    p.add_argument("--preset", choices=sorted(PRESETS), default="balanced")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="hold out validation/test edges")
    p.add_argument("--graph-dir", required=True)
    p.add_argument("--valid-frac", type=float, default=0.05)
    p.add_argument("--test-frac", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("walk", help="write a metapath walk corpus")
    p.add_argument("--graph-dir", required=True)
    p.add_argument("--schemas", required=True)
    p.add_argument("--walks-per-node", type=int, default=TrainConfig.walks_per_node)
    p.add_argument("--max-length", type=int, default=TrainConfig.max_walk_length)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_walk)

    p = sub.add_parser("train", help="train MSM-T or MSM-I")
    p.add_argument("--graph-dir", required=True)
    p.add_argument("--config")
    p.add_argument("--schemas")
    p.add_argument("--out", required=True)
    p.add_argument("--deterministic", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="link-prediction metrics for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--graph-dir", required=True, help="training graph the checkpoint was fit on")
    p.add_argument("--split-dir", required=True)
    p.add_argument("--out")
    p.add_argument("--json", action="store_true")
    p.add_argument("--reference", choices=["amazon"], default=None,
                   help="print the reference MSM-T numbers and the difference")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("embed-unseen", help="embed new nodes with an inductive checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--graph-dir", required=True)
    p.add_argument("--nodes", required=True, help="name<TAB>node_type<TAB>v1,v2,...")
    p.add_argument("--edges", help="new_name<TAB>existing_name<TAB>edge_type")
    p.add_argument("--edge-type")
    p.add_argument("--out")
    p.set_defaults(func=cmd_embed_unseen)

    p = sub.add_parser("amazon", help="convert Amazon movie/book reviews to a graph directory")
    p.add_argument("--movies")
    p.add_argument("--books")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_amazon)

    p = sub.add_parser("export", help="export overall embeddings for one edge type")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--graph-dir", required=True)
    p.add_argument("--edge-type", required=True)
    p.add_argument("--binary", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as e:
        print(f"msm: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (GraphError, ConfigError, CheckpointError, SchemaSyntaxError, SynthSpecError,
            ValueError, KeyError, OSError) as e:
        print(f"msm: error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
