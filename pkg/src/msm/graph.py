"""Attributed multiplex heterogeneous graph.

Nodes carry a node type and an optional dense attribute vector; edges are
undirected and stored per edge type.  After :meth:`HeterogeneousGraph.freeze`
the graph is immutable and exposes CSR adjacency and row-normalized mean
operators used by the embedding models.
"""
from __future__ import annotations

import os
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp


class GraphError(ValueError):
    """Base class for graph construction / lookup errors."""


class TypeConflictError(GraphError):
    pass


class UnknownNodeError(GraphError):
    pass


class UnknownTypeError(GraphError):
    pass


class SelfLoopError(GraphError):
    pass


class FrozenGraphError(GraphError):
    pass


class MissingAttributesError(GraphError):
    pass


class Registry:
    """Bijection between string names and dense integer ids."""

    def __init__(self, names: Iterable[str] = ()):
        self.names: List[str] = []
        self._ids: Dict[str, int] = {}
        for name in names:
            self.add(name)

    def add(self, name: str) -> int:
        idx = self._ids.get(name)
        if idx is None:
            idx = len(self.names)
            self._ids[name] = idx
            self.names.append(name)
        return idx

    def id(self, name: str) -> int:
        try:
            return self._ids[name]
        except KeyError:
            raise UnknownTypeError(f"unknown name {name!r}") from None

    def get(self, name: str) -> Optional[int]:
        return self._ids.get(name)

    def name(self, idx: int) -> str:
        return self.names[idx]

    def __contains__(self, name: str) -> bool:
        return name in self._ids

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def __eq__(self, other) -> bool:
        return isinstance(other, Registry) and self.names == other.names


class HeterogeneousGraph:
    """Typed nodes, per-edge-type undirected adjacency and attribute store."""

    def __init__(self):
        self.node_types = Registry()
        self.edge_types = Registry()
        self.nodes = Registry()
        self._node_type: List[int] = []
        self._adj: List[List[set]] = []  # edge type -> node -> neighbor set
        self.attributes: Dict[int, np.ndarray] = {}
        self._attr_dim: Dict[int, int] = {}
        self.frozen = False
        self._csr: List[Tuple[np.ndarray, np.ndarray]] = []
        self._typed_csr: Dict[Tuple[int, int], Tuple[np.ndarray, np.ndarray]] = {}
        self._mean_ops: Dict[Tuple[int, Optional[int], int], sp.csr_matrix] = {}

    # ------------------------------------------------------------------
    # construction

    def _check_mutable(self):
        if self.frozen:
            raise FrozenGraphError("graph is frozen")

    def add_node(self, name: str, node_type: str) -> int:
        """Register ``name`` under ``node_type`` and return its dense id.

        Re-adding an existing name returns the same id; a different node type
        for an existing name raises :class:`TypeConflictError`.
        """
        existing = self.nodes.get(name)
        if existing is not None:
            if self.node_types.name(self._node_type[existing]) != node_type:
                raise TypeConflictError(
                    f"node {name!r} already registered with type "
                    f"{self.node_types.name(self._node_type[existing])!r}, not {node_type!r}"
                )
            return existing
        self._check_mutable()
        t = self.node_types.add(node_type)
        idx = self.nodes.add(name)
        self._node_type.append(t)
        for adj in self._adj:
            adj.append(set())
        return idx

    def add_edge_type(self, edge_type: str) -> int:
        if edge_type not in self.edge_types:
            self._check_mutable()
            self._adj.append([set() for _ in range(self.num_nodes)])
        return self.edge_types.add(edge_type)

    def add_edge(self, u: int, v: int, edge_type: str) -> None:
        self._check_mutable()
        n = self.num_nodes
        for x in (u, v):
            if not (0 <= x < n):
                raise UnknownNodeError(f"node id {x} is not registered")
        if u == v:
            raise SelfLoopError(f"self-loop on node {u} ({edge_type})")
        r = self.add_edge_type(edge_type)
        self._adj[r][u].add(v)
        self._adj[r][v].add(u)

    def set_attributes(self, node: int, values) -> None:
        self._check_mutable()
        if not (0 <= node < self.num_nodes):
            raise UnknownNodeError(f"node id {node} is not registered")
        x = np.asarray(values, dtype=np.float64).ravel()
        t = self._node_type[node]
        dim = self._attr_dim.setdefault(t, x.size)
        if dim != x.size:
            raise GraphError(
                f"attribute dimension {x.size} for node {self.nodes.name(node)!r} "
                f"differs from {dim} used by node type {self.node_types.name(t)!r}"
            )
        self.attributes[node] = x

    def freeze(self) -> "HeterogeneousGraph":
        """Make the graph immutable and build CSR adjacency.  Idempotent."""
        if self.frozen:
            return self
        self._csr = []
        for adj in self._adj:
            counts = np.fromiter((len(s) for s in adj), dtype=np.int64, count=len(adj))
            indptr = np.zeros(len(adj) + 1, dtype=np.int64)
            np.cumsum(counts, out=indptr[1:])
            indices = np.empty(indptr[-1], dtype=np.int64)
            for i, s in enumerate(adj):
                if s:
                    indices[indptr[i]:indptr[i + 1]] = sorted(s)
            self._csr.append((indptr, indices))
        self._node_type_arr = np.asarray(self._node_type, dtype=np.int64)
        self.frozen = True
        return self

    # ------------------------------------------------------------------
    # queries

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edge_types(self) -> int:
        return len(self.edge_types)

    def node_type(self, v: int) -> int:
        return self._node_type[v]

    @property
    def node_type_array(self) -> np.ndarray:
        if self.frozen:
            return self._node_type_arr
        return np.asarray(self._node_type, dtype=np.int64)

    def nodes_of_type(self, t: int) -> np.ndarray:
        return np.flatnonzero(self.node_type_array == t)

    def _edge_type_id(self, r) -> int:
        if isinstance(r, str):
            return self.edge_types.id(r)
        if not (0 <= r < self.num_edge_types):
            raise UnknownTypeError(f"unknown edge type id {r}")
        return int(r)

    def neighbors(self, v: int, r) -> List[int]:
        r = self._edge_type_id(r)
        if self.frozen:
            indptr, indices = self._csr[r]
            return indices[indptr[v]:indptr[v + 1]].tolist()
        return sorted(self._adj[r][v])

    def typed_neighbors(self, v: int, r, t) -> List[int]:
        if isinstance(t, str):
            t = self.node_types.get(t)
            if t is None:
                return []
        return [u for u in self.neighbors(v, r) if self._node_type[u] == t]

    def has_edge(self, u: int, v: int, r) -> bool:
        r = self._edge_type_id(r)
        if self.frozen:
            indptr, indices = self._csr[r]
            row = indices[indptr[u]:indptr[u + 1]]
            k = np.searchsorted(row, v)
            return bool(k < row.size and row[k] == v)
        return v in self._adj[r][u]

    def degree(self, v: int, r) -> int:
        r = self._edge_type_id(r)
        if self.frozen:
            indptr, _ = self._csr[r]
            return int(indptr[v + 1] - indptr[v])
        return len(self._adj[r][v])

    def edges(self, r) -> np.ndarray:
        """All edges of type ``r`` as an (E, 2) array with ``u < v``."""
        r = self._edge_type_id(r)
        out = [(u, v) for u in range(self.num_nodes) for v in self.neighbors(u, r) if u < v]
        return np.asarray(out, dtype=np.int64).reshape(-1, 2)

    def num_edges(self, r) -> int:
        r = self._edge_type_id(r)
        if self.frozen:
            return int(self._csr[r][0][-1]) // 2
        return sum(len(s) for s in self._adj[r]) // 2

    def stats(self) -> dict:
        counts = np.bincount(self.node_type_array, minlength=len(self.node_types))
        nodes = {name: int(c) for name, c in zip(self.node_types.names, counts)}
        edges = {name: self.num_edges(r) for r, name in enumerate(self.edge_types.names)}
        return {
            "nodes": nodes,
            "edges": edges,
            "total_nodes": int(sum(nodes.values())),
            "total_edges": int(sum(edges.values())),
        }

    def attr_dim(self, t: int) -> Optional[int]:
        return self._attr_dim.get(t)

    def has_all_attributes(self) -> bool:
        return len(self.attributes) == self.num_nodes

    def require_attributes(self, nodes: Optional[Iterable[int]] = None) -> None:
        nodes = range(self.num_nodes) if nodes is None else nodes
        missing = [v for v in nodes if v not in self.attributes]
        if missing:
            names = ", ".join(self.nodes.name(v) for v in missing[:5])
            raise MissingAttributesError(
                f"{len(missing)} node(s) lack attribute vectors (e.g. {names})"
            )

    # ------------------------------------------------------------------
    # frozen-graph operators

    def _require_frozen(self):
        if not self.frozen:
            raise GraphError("graph must be frozen first")

    def csr(self, r: int) -> Tuple[np.ndarray, np.ndarray]:
        self._require_frozen()
        return self._csr[r]

    def typed_csr(self, r: int, t: int) -> Tuple[np.ndarray, np.ndarray]:
        """CSR adjacency of edge type ``r`` restricted to neighbors of type ``t``."""
        self._require_frozen()
        key = (r, t)
        if key not in self._typed_csr:
            indptr, indices = self._csr[r]
            keep = self._node_type_arr[indices] == t
            kept_before = np.concatenate([[0], np.cumsum(keep, dtype=np.int64)])
            self._typed_csr[key] = (kept_before[indptr], indices[keep])
        return self._typed_csr[key]

    def mean_operator(self, r: int, cap: Optional[int] = None, seed: int = 0) -> sp.csr_matrix:
        """Row-normalized neighbor-mean operator for edge type ``r``.

        Rows of isolated nodes hold a single 1 on the diagonal so the mean
        falls back to the node's own vector.  ``cap`` keeps at most that many
        uniformly chosen neighbors per row.
        """
        self._require_frozen()
        key = (r, cap, seed if cap else 0)
        op = self._mean_ops.get(key)
        if op is not None:
            return op
        indptr, indices = self._csr[r]
        n = self.num_nodes
        rng = np.random.default_rng([seed, r]) if cap else None
        rows_ptr = [0]
        cols: List[np.ndarray] = []
        data: List[np.ndarray] = []
        for i in range(n):
            nb = indices[indptr[i]:indptr[i + 1]]
            if nb.size == 0:
                nb = np.array([i], dtype=np.int64)
            elif cap and nb.size > cap:
                nb = np.sort(rng.choice(nb, size=cap, replace=False))
            cols.append(nb)
            data.append(np.full(nb.size, 1.0 / nb.size))
            rows_ptr.append(rows_ptr[-1] + nb.size)
        op = sp.csr_matrix(
            (np.concatenate(data), np.concatenate(cols), np.asarray(rows_ptr)), shape=(n, n)
        )
        self._mean_ops[key] = op
        return op

    def attribute_rows(self, nodes: np.ndarray) -> np.ndarray:
        """Attribute matrix for ``nodes``, which must all share one node type."""
        self._require_frozen()
        if not hasattr(self, "_attr_pos"):
            pos = np.full(self.num_nodes, -1, dtype=np.int64)
            mats = {}
            for t in range(len(self.node_types)):
                members = self.nodes_of_type(t)
                have = [v for v in members if v in self.attributes]
                if len(have) == len(members) and len(members):
                    pos[members] = np.arange(len(members))
                    mats[t] = np.stack([self.attributes[v] for v in members])
            self._attr_pos, self._attr_mats = pos, mats
        nodes = np.asarray(nodes, dtype=np.int64)
        p = self._attr_pos[nodes]
        if nodes.size and (p < 0).any():
            self.require_attributes(nodes[p < 0].tolist())
            raise MissingAttributesError("node type has incomplete attributes")
        if nodes.size == 0:
            return np.zeros((0, 0))
        return self._attr_mats[self._node_type_arr[nodes[0]]][p]

    # ------------------------------------------------------------------
    # derived graphs

    def copy(self, drop_edges: Optional[Dict[int, Iterable[Tuple[int, int]]]] = None,
             drop_nodes: Iterable[int] = ()) -> "HeterogeneousGraph":
        """Unfrozen copy with the same registries (node ids are preserved).

        ``drop_edges`` maps edge type id to edges to leave out; ``drop_nodes``
        keeps the nodes registered but removes all their incident edges.
        """
        g = HeterogeneousGraph()
        for name in self.node_types:
            g.node_types.add(name)
        for v, name in enumerate(self.nodes.names):
            g.add_node(name, self.node_types.name(self._node_type[v]))
        for name in self.edge_types:
            g.add_edge_type(name)
        dropped_nodes = set(drop_nodes)
        for r in range(self.num_edge_types):
            skip = set()
            for u, v in (drop_edges or {}).get(r, ()):
                skip.add((min(u, v), max(u, v)))
            for u in range(self.num_nodes):
                if u in dropped_nodes:
                    continue
                for v in self.neighbors(u, r):
                    if u < v and v not in dropped_nodes and (u, v) not in skip:
                        g._adj[r][u].add(v)
                        g._adj[r][v].add(u)
        for v, x in self.attributes.items():
            g.set_attributes(v, x)
        return g

    # ------------------------------------------------------------------
    # file formats

    def write(self, directory: str, write_attributes: bool = True) -> None:
        """Write ``nodes.tsv``, ``edges.tsv`` and (if any) ``attributes.tsv``."""
        os.makedirs(directory, exist_ok=True)
        names = self.nodes.names
        with open(os.path.join(directory, "nodes.tsv"), "w", encoding="utf-8") as f:
            for v, name in enumerate(names):
                f.write(f"{name}\t{self.node_types.name(self._node_type[v])}\n")
        with open(os.path.join(directory, "edges.tsv"), "w", encoding="utf-8") as f:
            for r, ename in enumerate(self.edge_types.names):
                for u, v in self.edges(r):
                    f.write(f"{names[u]}\t{names[v]}\t{ename}\n")
        if write_attributes and self.attributes:
            with open(os.path.join(directory, "attributes.tsv"), "w", encoding="utf-8") as f:
                for v in sorted(self.attributes):
                    vals = ",".join(repr(float(x)) for x in self.attributes[v])
                    f.write(f"{names[v]}\t{vals}\n")

    @classmethod
    def read(cls, directory: str) -> "HeterogeneousGraph":
        """Load a graph directory written by :meth:`write`.  Returns it frozen."""
        g = cls()
        for fields, lineno in _records(os.path.join(directory, "nodes.tsv"), 2):
            g.add_node(fields[0], fields[1])
        for fields, lineno in _records(os.path.join(directory, "edges.tsv"), 3):
            u, v = (g.nodes.get(x) for x in fields[:2])
            if u is None or v is None:
                raise UnknownNodeError(f"edges.tsv:{lineno}: unknown node in {fields[:2]}")
            g.add_edge(u, v, fields[2])
        path = os.path.join(directory, "attributes.tsv")
        if os.path.exists(path):
            for fields, lineno in _records(path, 2):
                v = g.nodes.get(fields[0])
                if v is None:
                    raise UnknownNodeError(f"attributes.tsv:{lineno}: unknown node {fields[0]!r}")
                g.set_attributes(v, [float(x) for x in fields[1].split(",")])
        return g.freeze()


def _records(path: str, nfields: int):
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != nfields:
                raise GraphError(
                    f"{os.path.basename(path)}:{lineno}: expected {nfields} tab-separated "
                    f"fields, got {len(fields)}"
                )
            yield fields, lineno
