"""Planted-community generator for attributed multiplex heterogeneous graphs.

Each node type is split round-robin into ``communities`` groups; community
``c`` of one node type is affiliated with community ``c`` of every other type.
Every edge type links a pair of node types with independent Bernoulli edges
whose probability depends on community co-membership.  Attributes are a
per-(node type, community) centroid on the unit sphere plus isotropic
Gaussian noise.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from .graph import HeterogeneousGraph


class SynthSpecError(ValueError):
    pass


@dataclass(frozen=True)
class EdgeSpec:
    name: str
    src: str
    dst: str
    p_intra: float
    p_inter: float


@dataclass
class SynthSpec:
    node_counts: Dict[str, int] = field(default_factory=lambda: {"U": 200, "I": 400})
    communities: int = 2
    edge_types: List[EdgeSpec] = field(default_factory=lambda: [
        EdgeSpec("click", "U", "I", 0.05, 0.005),
        EdgeSpec("buy", "U", "I", 0.05, 0.005),
    ])
    attr_dims: Dict[str, int] = field(default_factory=lambda: {"U": 16, "I": 16})
    noise: float = 0.5
    planted: bool = True
    seed: int = 0

    def validate(self) -> None:
        if self.communities < 1:
            raise SynthSpecError("communities must be >= 1")
        for t, n in self.node_counts.items():
            if n < 0:
                raise SynthSpecError(f"negative node count for {t!r}")
        if self.noise < 0:
            raise SynthSpecError("noise scale must be >= 0")
        for e in self.edge_types:
            for t in (e.src, e.dst):
                if t not in self.node_counts:
                    raise SynthSpecError(f"edge type {e.name!r} references unknown node type {t!r}")
            for p in (e.p_intra, e.p_inter):
                if not 0.0 <= p <= 1.0:
                    raise SynthSpecError(f"edge type {e.name!r}: probability {p} outside [0, 1]")
            if self.planted and not e.p_intra > e.p_inter:
                raise SynthSpecError(f"planted spec needs p_intra > p_inter for {e.name!r}")
        for t in self.attr_dims:
            if t not in self.node_counts:
                raise SynthSpecError(f"attribute dims for unknown node type {t!r}")

    def schemas(self) -> List[str]:
        """Metapath schemas suited to this spec.

        For every edge type and each of its endpoint types, a single-relation
        schema plus one multi-semantic schema per other edge type joining the
        same pair of node types.  Starting from both endpoints keeps the walk
        corpus from ignoring the smaller side of a skewed graph.
        """
        out = []
        for e in self.edge_types:
            starts = [(e.src, e.dst)] if e.src == e.dst else [(e.src, e.dst), (e.dst, e.src)]
            for a, b in starts:
                out.append(f"{a} -{e.name}-> {b} -{e.name}-> {a} @ {e.name}")
                for o in self.edge_types:
                    if o is not e and {o.src, o.dst} == {a, b} and a != b:
                        out.append(f"{a} -{e.name}-> {b} -{o.name}-> {a} @ {e.name}")
        return out


def balanced_preset(seed: int = 0) -> SynthSpec:
    """Equal node counts per type: 300 users, 300 items, two U-I relations."""
    return SynthSpec(node_counts={"U": 300, "I": 300}, seed=seed)


def unbalanced_preset(seed: int = 0) -> SynthSpec:
    """Ten times more items than users, same edge probabilities as the balanced preset."""
    return SynthSpec(node_counts={"U": 100, "I": 1000}, seed=seed)


def inductive_preset(seed: int = 0) -> SynthSpec:
    """Four communities with sharper contrast (0.1 / 0.001), 300 users and 300 items.

    Used for held-out node experiments, where a node is placed from its
    attributes and a handful of edges.
    """
    edges = [EdgeSpec("click", "U", "I", 0.1, 0.001), EdgeSpec("buy", "U", "I", 0.1, 0.001)]
    return SynthSpec(node_counts={"U": 300, "I": 300}, communities=4, edge_types=edges, seed=seed)


@dataclass
class SynthGraph:
    graph: HeterogeneousGraph
    labels: np.ndarray  # community per node id
    centroids: Dict[Tuple[str, int], np.ndarray]

    def write(self, directory: str) -> None:
        self.graph.write(directory)
        with open(os.path.join(directory, "labels.tsv"), "w", encoding="utf-8") as f:
            for v, name in enumerate(self.graph.nodes.names):
                f.write(f"{name}\t{int(self.labels[v])}\n")


def _unit_sphere(rng, dim):
    x = rng.standard_normal(dim)
    return x / np.linalg.norm(x)


def generate(spec: SynthSpec) -> SynthGraph:
    """Generate the graph, ground-truth community labels and centroids."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    g = HeterogeneousGraph()
    ids: Dict[str, np.ndarray] = {}
    comm: Dict[str, np.ndarray] = {}
    labels = []
    for t, count in spec.node_counts.items():
        ids[t] = np.array([g.add_node(f"{t.lower()}{k}", t) for k in range(count)], dtype=np.int64)
        comm[t] = np.arange(count) % spec.communities
        labels.extend(comm[t].tolist())
    for e in spec.edge_types:
        g.add_edge_type(e.name)

    # centroids then unit noise, drawn in a fixed order so that the noise
    # realization does not depend on the noise scale
    centroids = {}
    noise = {}
    for t, dim in spec.attr_dims.items():
        for c in range(spec.communities):
            centroids[(t, c)] = _unit_sphere(rng, dim)
        noise[t] = rng.standard_normal((spec.node_counts[t], dim))
    for t, dim in spec.attr_dims.items():
        for k, v in enumerate(ids[t]):
            g.set_attributes(int(v), centroids[(t, int(comm[t][k]))] + spec.noise * noise[t][k])

    for e in spec.edge_types:
        a, b = ids[e.src], ids[e.dst]
        same = comm[e.src][:, None] == comm[e.dst][None, :]
        p = np.where(same, e.p_intra, e.p_inter)
        hit = rng.random(p.shape) < p
        if e.src == e.dst:
            hit = np.triu(hit, k=1)
        for i, j in zip(*np.nonzero(hit)):
            g.add_edge(int(a[i]), int(b[j]), e.name)
    return SynthGraph(g.freeze(), np.asarray(labels, dtype=np.int64), centroids)


def compatible_pairs(spec: SynthSpec, edge: EdgeSpec) -> Tuple[int, int]:
    """Number of (intra-community, inter-community) candidate pairs for ``edge``."""
    ca = np.arange(spec.node_counts[edge.src]) % spec.communities
    cb = np.arange(spec.node_counts[edge.dst]) % spec.communities
    same = ca[:, None] == cb[None, :]
    if edge.src == edge.dst:
        same = same[np.triu_indices(len(ca), k=1)]
        total = len(ca) * (len(ca) - 1) // 2
    else:
        total = same.size
    intra = int(same.sum())
    return intra, total - intra
