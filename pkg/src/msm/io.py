"""Amazon review loader, run configs, checkpoints and embedding export."""
from __future__ import annotations

import csv
import dataclasses
import gzip
import hashlib
import json
import os
import struct
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from .graph import HeterogeneousGraph
from .inductive import InductiveParams
from .trainer import TrainConfig
from .transductive import ModelDims, ModelParams, TransductiveParams, embedding_matrix

# ----------------------------------------------------------------------
# Amazon reviews

AMAZON_BINS = {1: "dislike", 2: "dislike", 3: "like", 4: "like", 5: "very_like"}


def amazon_edge_type(score: int, item_type: str) -> str:
    """Edge type name for a review score, e.g. ``(5, "M") -> "very_like_UM"``."""
    return f"{AMAZON_BINS[score]}_U{item_type}"


@dataclass
class LoadReport:
    records: int = 0
    malformed: int = 0
    bad_score: int = 0
    duplicates: int = 0

    def __str__(self):
        return (f"{self.records} records, {self.malformed} malformed skipped, "
                f"{self.bad_score} out-of-range scores skipped, {self.duplicates} duplicates collapsed")


def _open_text(path):
    if path.endswith(".gz"):
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, encoding="utf-8")


def read_reviews(path: str, report: LoadReport) -> Iterator[Tuple[str, str, float]]:
    """Yield ``(user, item, score)`` from a JSON-lines review dump or a ratings CSV.

    JSON lines use the public ``reviewerID`` / ``asin`` / ``overall`` keys;
    CSV rows are ``user,item,rating[,timestamp]``.
    """
    with _open_text(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            report.records += 1
            try:
                if line.startswith("{"):
                    rec = json.loads(line)
                    user, item, score = rec["reviewerID"], rec["asin"], float(rec["overall"])
                else:
                    row = next(csv.reader([line]))
                    user, item, score = row[0], row[1], float(row[2])
            except (ValueError, KeyError, IndexError, StopIteration):
                report.malformed += 1
                continue
            if not user or not item:
                report.malformed += 1
                continue
            yield user, item, score


def load_amazon(reviews_movies: Optional[str], reviews_books: Optional[str]
                ) -> Tuple[HeterogeneousGraph, LoadReport]:
    """Build the U/M/B graph with six score-binned edge types.

    Repeated reviews of one item by one user collapse to the highest-score bin.
    """
    report = LoadReport()
    best: Dict[Tuple[str, str, str], int] = {}
    for path, item_type in ((reviews_movies, "M"), (reviews_books, "B")):
        if path is None:
            continue
        for user, item, score in read_reviews(path, report):
            if score != int(score) or int(score) not in AMAZON_BINS:
                report.bad_score += 1
                continue
            key = (user, item, item_type)
            if key in best:
                report.duplicates += 1
                best[key] = max(best[key], int(score))
            else:
                best[key] = int(score)
    g = HeterogeneousGraph()
    for t in ("U", "M", "B"):
        g.node_types.add(t)
    for item_type in ("M", "B"):
        for b in ("dislike", "like", "very_like"):
            g.add_edge_type(f"{b}_U{item_type}")
    for (user, item, item_type), score in best.items():
        u = g.add_node(f"U:{user}", "U")
        i = g.add_node(f"{item_type}:{item}", item_type)
        g.add_edge(u, i, amazon_edge_type(score, item_type))
    return g.freeze(), report


def amazon_schemas(graph: HeterogeneousGraph) -> List[str]:
    """Default metapath schemas for a graph built by :func:`load_amazon`.

    Each non-empty edge type gets a two-hop cycle from both endpoint types,
    plus user-side cycles that return through another score bin of the same
    item type.
    """
    present = [e for e in graph.edge_types.names if graph.num_edges(e) > 0]
    out = []
    for e in present:
        t = e[-1]
        out.append(f"U -{e}-> {t} -{e}-> U @ {e}")
        out.append(f"{t} -{e}-> U -{e}-> {t} @ {e}")
        for o in present:
            if o != e and o[-1] == t:
                out.append(f"U -{e}-> {t} -{o}-> U @ {e}")
    return out


# ----------------------------------------------------------------------
# config files


class ConfigError(ValueError):
    pass


def parse_value(name: str, raw: str, kind, lineno: int):
    raw = raw.strip()
    try:
        if name in ("alpha", "beta"):
            if ":" in raw:
                out = {}
                for part in raw.split(","):
                    k, v = part.split(":")
                    out[k.strip()] = float(v)
                return out
            return float(raw)
        if kind in (bool, "bool"):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {raw!r} for {name}") from None


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(TrainConfig)}


def parse_config(lines, source: str = "<config>") -> TrainConfig:
    values: dict = {}
    schemas: List[str] = []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if key == "schema":
            schemas.append(raw.strip())
            continue
        if key not in _FIELD_TYPES or key == "schemas":
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = parse_value(key, raw, _FIELD_TYPES[key], lineno)
    if schemas:
        values["schemas"] = schemas
    try:
        return TrainConfig(**values)
    except ValueError as e:
        raise ConfigError(f"{source}: {e}") from None


def read_config(path: str) -> TrainConfig:
    with open(path, encoding="utf-8") as f:
        return parse_config(f, path)


def format_config(config: TrainConfig) -> str:
    lines = []
    for name in TrainConfig.keys():
        value = getattr(config, name)
        if name == "schemas":
            lines.extend(f"schema = {s}" for s in value)
        elif isinstance(value, dict):
            lines.append(f"{name} = " + ",".join(f"{k}:{v!r}" for k, v in value.items()))
        elif isinstance(value, bool):
            lines.append(f"{name} = {'true' if value else 'false'}")
        elif isinstance(value, float):
            lines.append(f"{name} = {value!r}")
        else:
            lines.append(f"{name} = {value}")
    return "\n".join(lines) + "\n"


def write_config(config: TrainConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_config(config))


def read_schemas(path: str) -> List[str]:
    with open(path, encoding="utf-8") as f:
        return [ln.strip() for ln in f if ln.strip() and not ln.lstrip().startswith("#")]


# ----------------------------------------------------------------------
# checkpoints


class CheckpointError(ValueError):
    pass


VERSION = 1
_T_ORDER = ("base", "edge0", "agg_weights", "attn_vec", "attn_mat", "transform")


def _inductive_order(params: InductiveParams) -> List[str]:
    names = ["agg_weights", "attn_vec", "attn_mat", "transform"]
    tail = []
    for z in range(len(params.attr_dims)):
        tail += InductiveParams.layer_names(f"h.{z}", params.hidden)
        tail.append(f"O.{z}")
        for r in range(params.dims.num_edge_types):
            tail += InductiveParams.layer_names(f"g.{z}.{r}", params.hidden)
    return names, tail


def graph_digest(graph: HeterogeneousGraph) -> str:
    h = hashlib.sha256()
    for v, name in enumerate(graph.nodes.names):
        h.update(f"{name}\t{graph.node_types.name(graph.node_type(v))}\n".encode())
    return h.hexdigest()


def _f32(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def save_checkpoint(params: ModelParams, path: str, graph: Optional[HeterogeneousGraph] = None) -> None:
    """Binary little-endian f32 container plus a ``.manifest.json`` sidecar."""
    d = params.dims
    dims = (d.num_nodes, d.dim, d.edge_dim, d.att_dim, d.num_edge_types, d.levels)
    with open(path, "wb") as f:
        if params.kind == "t":
            f.write(struct.pack("<4sI6I", b"MSMT", VERSION, *dims))
            for name in _T_ORDER:
                f.write(_f32(params.tensors[name]))
            f.write(_f32(params.alpha))
            f.write(_f32(params.tensors["context"]))
        else:
            z = len(params.attr_dims)
            f.write(struct.pack("<4sI8I", b"MSMI", VERSION, *dims, z, params.hidden))
            f.write(struct.pack(f"<{z}I", *params.attr_dims))
            head, tail = _inductive_order(params)
            for name in head:
                f.write(_f32(params.tensors[name]))
            f.write(_f32(params.alpha))
            f.write(_f32(params.beta))
            f.write(_f32(params.tensors["context"]))
            for name in tail:
                f.write(_f32(params.tensors[name]))
    manifest = {
        "format": "MSMT" if params.kind == "t" else "MSMI",
        "version": VERSION,
        "activation": params.activation,
        "neighbor_cap": params.neighbor_cap or 0,
    }
    if params.kind == "i":
        manifest["attr_dims"] = params.attr_dims
    if graph is not None:
        manifest.update(node_types=graph.node_types.names, edge_types=graph.edge_types.names,
                        num_nodes=graph.num_nodes, graph_digest=graph_digest(graph))
    with open(path + ".manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_manifest(path: str) -> dict:
    mpath = path + ".manifest.json"
    if not os.path.exists(mpath):
        return {}
    with open(mpath, encoding="utf-8") as f:
        return json.load(f)


def check_registries(path: str, graph: HeterogeneousGraph) -> None:
    """Raise :class:`CheckpointError` if the checkpoint was trained on another graph."""
    m = load_manifest(path)
    if not m:
        return
    problems = []
    if m.get("node_types") != graph.node_types.names:
        problems.append(f"node types {m.get('node_types')} vs {graph.node_types.names}")
    if m.get("edge_types") != graph.edge_types.names:
        problems.append(f"edge types {m.get('edge_types')} vs {graph.edge_types.names}")
    if m.get("graph_digest") not in (None, graph_digest(graph)):
        problems.append("node registry differs")
    if problems:
        raise CheckpointError("checkpoint/graph registry mismatch: " + "; ".join(problems))


def load_checkpoint(path: str) -> ModelParams:
    """Read a checkpoint written by :func:`save_checkpoint` (values come back as float64)."""
    manifest = load_manifest(path)
    with open(path, "rb") as f:
        buf = f.read()
    try:
        return _parse_checkpoint(path, buf, manifest)
    except struct.error:
        raise CheckpointError(f"{path}: truncated checkpoint header") from None


def _parse_checkpoint(path: str, buf: bytes, manifest: dict) -> ModelParams:
    magic = buf[:4]
    off = 0

    def take(shape):
        nonlocal off
        n = int(np.prod(shape))
        if off + 4 * n > len(buf):
            raise CheckpointError(f"{path}: truncated checkpoint")
        a = np.frombuffer(buf, dtype="<f4", count=n, offset=off).astype(np.float64).reshape(shape)
        off += 4 * n
        return a

    def check(version):
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")

    def done(params):
        if off != len(buf):
            raise CheckpointError(f"{path}: {len(buf) - off} trailing bytes")
        return params

    activation = manifest.get("activation", "tanh")
    cap = manifest.get("neighbor_cap") or None
    if len(buf) < 8:
        raise CheckpointError(f"{path}: file too short for a checkpoint header")
    if magic == b"MSMT":
        _, version, n, d, s, da, m, k = struct.unpack_from("<4sI6I", buf)
        check(version)
        off = struct.calcsize("<4sI6I")
        dims = ModelDims(n, d, s, da, m, k)
        shapes = {"base": (n, d), "edge0": (n, m, s), "agg_weights": (k, s, s),
                  "attn_vec": (m, da), "attn_mat": (m, da, s), "transform": (m, s, d)}
        tensors = {name: take(shapes[name]) for name in _T_ORDER}
        alpha = take((m,))
        tensors["context"] = take((n, d))
        return done(TransductiveParams(dims, tensors, alpha, activation, cap))
    if magic == b"MSMI":
        _, version, n, d, s, da, m, k, z, hidden = struct.unpack_from("<4sI8I", buf)
        check(version)
        off = struct.calcsize("<4sI8I")
        attr_dims = list(struct.unpack_from(f"<{z}I", buf, off))
        off += 4 * z
        dims = ModelDims(n, d, s, da, m, k)
        shell = InductiveParams.init(dims, attr_dims, hidden=hidden)
        head, tail = _inductive_order(shell)
        tensors = {name: take(shell.tensors[name].shape) for name in head}
        alpha, beta = take((m,)), take((m,))
        tensors["context"] = take((n, d))
        for name in tail:
            tensors[name] = take(shell.tensors[name].shape)
        return done(InductiveParams(dims, tensors, alpha, beta, attr_dims, hidden, activation, cap))
    raise CheckpointError(f"{path}: unknown checkpoint magic {magic!r}")


# ----------------------------------------------------------------------
# embedding export


def export_embeddings(params: ModelParams, graph: HeterogeneousGraph, r, path: str,
                      binary: bool = False) -> np.ndarray:
    """Write overall embeddings on edge type ``r`` for every node, ordered by id.

    Text lines are ``name<TAB>v1,...,vd`` with float32 values; the binary
    variant is an ``MSME`` container (``magic, version, N, d`` then f32 rows).
    """
    if isinstance(r, str):
        r = graph.edge_types.id(r)
    emb = embedding_matrix(graph, params, r).astype(np.float32)
    if binary:
        with open(path, "wb") as f:
            f.write(struct.pack("<4sI2I", b"MSME", VERSION, *emb.shape))
            f.write(_f32(emb))
    else:
        with open(path, "w", encoding="utf-8") as f:
            for name, row in zip(graph.nodes.names, emb):
                f.write(name + "\t" + ",".join("%.9g" % x for x in row.tolist()) + "\n")
    return emb


def read_embeddings(path: str) -> Tuple[List[str], np.ndarray]:
    """Read an export; binary files carry no names (an empty list is returned)."""
    with open(path, "rb") as f:
        head = f.read(4)
    if head == b"MSME":
        with open(path, "rb") as f:
            buf = f.read()
        _, _, n, d = struct.unpack_from("<4sI2I", buf)
        arr = np.frombuffer(buf, dtype="<f4", count=n * d, offset=struct.calcsize("<4sI2I"))
        return [], arr.reshape(n, d).astype(np.float32)
    names, rows = [], []
    with open(path, encoding="utf-8") as f:
        for line in f:
            name, vals = line.rstrip("\n").split("\t")
            names.append(name)
            rows.append(np.array(vals.split(","), dtype=np.float32))
    return names, np.stack(rows)
