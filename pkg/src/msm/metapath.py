"""Multi-semantic metapath schemas, schema-guided random walks and skip-gram pairs.

Schema DSL::

    NodeType (-EdgeType-> NodeType)+ [@ TargetEdgeType]

e.g. ``U -watched_video-> V -conversion-> I @ click_item``.  Every step fixes
both the edge type and the node type of the next hop.
"""
from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, List, Sequence, Tuple

import numpy as np

from .graph import HeterogeneousGraph, UnknownTypeError


class SchemaSyntaxError(ValueError):
    def __init__(self, message: str, text: str, pos: int):
        super().__init__(f"{message} at position {pos}: {text!r}")
        self.pos = pos


@dataclass(frozen=True)
class MetapathSchema:
    node_types: Tuple[int, ...]
    edge_types: Tuple[int, ...]
    target_edge_type: int
    text: str = ""

    def __post_init__(self):
        if len(self.node_types) < 2 or len(self.edge_types) != len(self.node_types) - 1:
            raise ValueError("schema needs l >= 2 node types and l - 1 edge types")

    @property
    def cyclic(self) -> bool:
        return self.node_types[0] == self.node_types[-1]


_TOKEN = re.compile(r"\s*(?:(?P<arrow>->)|(?P<dash>-)|(?P<at>@)|(?P<name>[^\s\-@>]+))")


def _tokenize(text: str):
    pos = 0
    tokens = []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise SchemaSyntaxError("unexpected character", text, pos)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


def parse_schema(text: str, graph: HeterogeneousGraph) -> MetapathSchema:
    """Parse a schema string against ``graph``'s type registries."""
    tokens = _tokenize(text)
    i = 0

    def expect(kind):
        nonlocal i
        tk, val, pos = tokens[i]
        if tk != kind:
            what = {"name": "a type name", "dash": "'-'", "arrow": "'->'"}.get(kind, kind)
            raise SchemaSyntaxError(f"expected {what}, found {val or 'end of input'!r}", text, pos)
        i += 1
        return val, pos

    def lookup(registry, val, pos, what):
        idx = registry.get(val)
        if idx is None:
            raise UnknownTypeError(f"unknown {what} {val!r} at position {pos} in {text!r}")
        return idx

    name, pos = expect("name")
    node_types = [lookup(graph.node_types, name, pos, "node type")]
    edge_types: List[int] = []
    while tokens[i][0] == "dash":
        i += 1
        name, pos = expect("name")
        edge_types.append(lookup(graph.edge_types, name, pos, "edge type"))
        expect("arrow")
        name, pos = expect("name")
        node_types.append(lookup(graph.node_types, name, pos, "node type"))
    if not edge_types:
        tk, val, pos = tokens[i]
        raise SchemaSyntaxError("schema needs at least one '-edge->' step", text, pos)
    target = edge_types[0]
    if tokens[i][0] == "at":
        i += 1
        name, pos = expect("name")
        target = lookup(graph.edge_types, name, pos, "edge type")
    tk, val, pos = tokens[i]
    if tk != "end":
        raise SchemaSyntaxError(f"unexpected token {val!r}", text, pos)
    return MetapathSchema(tuple(node_types), tuple(edge_types), target, text.strip())


def format_schema(schema: MetapathSchema, graph: HeterogeneousGraph) -> str:
    parts = [graph.node_types.name(schema.node_types[0])]
    for r, t in zip(schema.edge_types, schema.node_types[1:]):
        parts.append(f"-{graph.edge_types.name(r)}-> {graph.node_types.name(t)}")
    return " ".join(parts) + f" @ {graph.edge_types.name(schema.target_edge_type)}"


@dataclass
class WalkCorpus:
    """Walks (node-id arrays), each tagged with its schema's target edge type."""

    walks: List[np.ndarray] = field(default_factory=list)
    edge_types: List[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.walks)

    def extend(self, other: "WalkCorpus") -> None:
        self.walks.extend(other.walks)
        self.edge_types.extend(other.edge_types)

    def write(self, path: str, graph: HeterogeneousGraph) -> None:
        names = graph.nodes.names
        with open(path, "w", encoding="utf-8") as f:
            for walk, r in zip(self.walks, self.edge_types):
                f.write(f"r={graph.edge_types.name(r)};" + " ".join(names[v] for v in walk) + "\n")

    @classmethod
    def read(cls, path: str, graph: HeterogeneousGraph) -> "WalkCorpus":
        corpus = cls()
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                head, sep, body = line.partition(";")
                if not sep or not head.startswith("r="):
                    raise ValueError(f"{path}:{lineno}: expected 'r=<edge_type>;' prefix")
                r = graph.edge_types.id(head[2:].strip())
                corpus.walks.append(np.array([graph.nodes.id(x) for x in body.split()], dtype=np.int64))
                corpus.edge_types.append(r)
        return corpus


@dataclass(frozen=True)
class TrainingSample:
    center: int
    context: int
    edge_type: int


def _walk_from(graph, schema, start, rng, max_length, steps):
    walk = [start]
    cur = start
    n_steps = len(schema.edge_types)
    limit = max_length if schema.cyclic else min(max_length, n_steps + 1)
    t = 0
    while len(walk) < limit:
        indptr, indices = steps[t % n_steps]
        lo, hi = indptr[cur], indptr[cur + 1]
        if hi == lo:
            break
        cur = int(indices[lo + int(rng.random() * (hi - lo))])
        walk.append(cur)
        t += 1
    return walk


def generate_walks(graph: HeterogeneousGraph, schema: MetapathSchema, walks_per_node: int,
                   max_length: int, seed: int = 0, schema_index: int = 0,
                   threads: int = 1) -> WalkCorpus:
    """Schema-conforming uniform random walks from every node of the first type.

    Each start node draws from its own RNG stream seeded by
    ``(seed, schema_index, node)``, so the corpus does not depend on
    ``threads``.
    """
    if walks_per_node < 1 or max_length < 2:
        raise ValueError("walks_per_node must be >= 1 and max_length >= 2")
    graph.freeze()
    for t in schema.node_types:
        if t >= len(graph.node_types):
            raise UnknownTypeError(f"schema node type id {t} not in graph")
    for r in schema.edge_types + (schema.target_edge_type,):
        if r >= graph.num_edge_types:
            raise UnknownTypeError(f"schema edge type id {r} not in graph")
    steps = [graph.typed_csr(r, t) for r, t in zip(schema.edge_types, schema.node_types[1:])]
    starts = graph.nodes_of_type(schema.node_types[0])

    def run(start):
        rng = np.random.default_rng([seed, schema_index, int(start)])
        out = []
        for _ in range(walks_per_node):
            walk = _walk_from(graph, schema, int(start), rng, max_length, steps)
            if len(walk) >= 2:
                out.append(np.asarray(walk, dtype=np.int64))
        return out

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, starts))
    else:
        results = [run(s) for s in starts]
    corpus = WalkCorpus()
    for walks in results:
        corpus.walks.extend(walks)
        corpus.edge_types.extend([schema.target_edge_type] * len(walks))
    return corpus


def generate_corpus(graph: HeterogeneousGraph, schemas: Sequence[MetapathSchema],
                    walks_per_node: int, max_length: int, seed: int = 0,
                    threads: int = 1) -> WalkCorpus:
    corpus = WalkCorpus()
    for k, schema in enumerate(schemas):
        corpus.extend(generate_walks(graph, schema, walks_per_node, max_length, seed, k, threads))
    return corpus


_OFFSETS_CACHE = {}


def _window_offsets(length: int, window: int):
    key = (length, window)
    if key not in _OFFSETS_CACHE:
        i, j = np.meshgrid(np.arange(length), np.arange(length), indexing="ij")
        mask = (i != j) & (np.abs(i - j) <= window)
        _OFFSETS_CACHE[key] = (i[mask], j[mask])
    return _OFFSETS_CACHE[key]


def context_pair_arrays(corpus: WalkCorpus, window: int):
    """All skip-gram pairs as ``(centers, contexts, edge_types)`` int arrays.

    Pairs whose two positions hold the same node (a walk revisiting its
    center) are dropped.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    centers, contexts, rtypes = [], [], []
    for walk, r in zip(corpus.walks, corpus.edge_types):
        i, j = _window_offsets(len(walk), window)
        c, x = walk[i], walk[j]
        keep = c != x
        centers.append(c[keep])
        contexts.append(x[keep])
        rtypes.append(np.full(int(keep.sum()), r, dtype=np.int64))
    if not centers:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty
    return np.concatenate(centers), np.concatenate(contexts), np.concatenate(rtypes)


def context_pairs(corpus: WalkCorpus, window: int) -> Iterator[TrainingSample]:
    centers, contexts, rtypes = context_pair_arrays(corpus, window)
    for c, x, r in zip(centers.tolist(), contexts.tolist(), rtypes.tolist()):
        yield TrainingSample(c, x, r)
