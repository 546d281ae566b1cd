"""Inductive MSM model: embeddings computed from node attributes.

Base embeddings come from a per-node-type transform ``h_z`` and level-0 edge
embeddings from per-(node type, edge type) transforms ``g_{z,r}``; the overall
embedding adds an attribute term ``beta_r * O_z^T x``.  No per-node table is
read by the forward pass, so unseen nodes can be embedded.
"""
from __future__ import annotations

from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .graph import MissingAttributesError, UnknownNodeError
from .transductive import (ModelDims, ModelParams, forward_batch, overall_embedding,
                           xavier)


def _mlp_forward(layers: Sequence[np.ndarray], x: np.ndarray):
    if len(layers) == 2:
        w, b = layers
        return x @ w + b, None
    w1, b1, w2, b2 = layers
    h = np.tanh(x @ w1 + b1)
    return h @ w2 + b2, h


def _mlp_backward(layers, x, hidden, grad) -> List[np.ndarray]:
    if len(layers) == 2:
        return [x.T @ grad, grad.sum(axis=0)]
    w1, b1, w2, b2 = layers
    dh = (grad @ w2.T) * (1.0 - hidden * hidden)
    return [x.T @ dh, dh.sum(axis=0), hidden.T @ grad, grad.sum(axis=0)]


class InductiveParams(ModelParams):
    """Attribute transforms ``h_z``, ``g_{z,r}`` and ``O_z`` plus the shared tensors.

    Transforms are affine by default; ``hidden > 0`` switches them to a
    one-hidden-layer tanh perceptron of that width.
    """

    kind = "i"
    row_tables = ("context",)

    def __init__(self, dims, tensors, alpha, beta, attr_dims: Sequence[int], hidden: int = 0,
                 activation="tanh", neighbor_cap=None):
        super().__init__(dims, tensors, alpha, activation, neighbor_cap)
        self.beta = np.broadcast_to(np.asarray(beta, dtype=np.float64),
                                    (dims.num_edge_types,)).copy()
        self.attr_dims = list(attr_dims)
        self.hidden = hidden

    @staticmethod
    def layer_names(prefix: str, hidden: int) -> List[str]:
        if hidden:
            return [f"{prefix}.W1", f"{prefix}.b1", f"{prefix}.W2", f"{prefix}.b2"]
        return [f"{prefix}.W", f"{prefix}.b"]

    @classmethod
    def init(cls, dims: ModelDims, attr_dims: Sequence[int], seed: int = 0, alpha=1.0, beta=0.1,
             hidden: int = 0, activation="tanh", neighbor_cap=None) -> "InductiveParams":
        rng = np.random.default_rng(seed)
        n, d, s, da, m, k = (dims.num_nodes, dims.dim, dims.edge_dim, dims.att_dim,
                             dims.num_edge_types, dims.levels)
        tensors = {
            "agg_weights": xavier(rng, (k, s, s), s, s),
            "attn_vec": rng.uniform(-0.1, 0.1, size=(m, da)),
            "attn_mat": xavier(rng, (m, da, s), s, da),
            "transform": xavier(rng, (m, s, d), s, d),
            "context": np.zeros((n, d)),
        }

        def add_transform(prefix, fan_in, out):
            names = cls.layer_names(prefix, hidden)
            if hidden:
                shapes = [(fan_in, hidden), (hidden,), (hidden, out), (out,)]
                fans = [(fan_in, hidden), None, (hidden, out), None]
            else:
                shapes, fans = [(fan_in, out), (out,)], [(fan_in, out), None]
            for name, shape, fan in zip(names, shapes, fans):
                tensors[name] = xavier(rng, shape, *fan) if fan else np.zeros(shape)

        for z, a in enumerate(attr_dims):
            add_transform(f"h.{z}", a, d)
            for r in range(m):
                add_transform(f"g.{z}.{r}", a, s)
            tensors[f"O.{z}"] = xavier(rng, (a, d), a, d)
        return cls(dims, tensors, alpha, beta, attr_dims, hidden, activation, neighbor_cap)

    def _layers(self, prefix):
        return [self.tensors[n] for n in self.layer_names(prefix, self.hidden)]

    def _groups(self, graph, nodes):
        types = graph.node_type_array[nodes]
        for z in np.unique(types):
            mask = np.flatnonzero(types == z)
            yield int(z), mask, graph.attribute_rows(nodes[mask])

    def _apply(self, prefix, x):
        x = np.asarray(x, dtype=np.float64)
        out, _ = _mlp_forward(self._layers(prefix), np.atleast_2d(x))
        return out[0] if x.ndim == 1 else out

    def h(self, z: int, x: np.ndarray) -> np.ndarray:
        """``h_z`` applied to one attribute vector or a stack of them."""
        return self._apply(f"h.{z}", x)

    def g(self, z: int, r: int, x: np.ndarray) -> np.ndarray:
        """``g_{z,r}`` applied to one attribute vector or a stack of them."""
        return self._apply(f"g.{z}.{r}", x)

    def initial_edge(self, graph, nodes, r):
        out = np.empty((nodes.size, self.dims.edge_dim))
        cache = []
        for z, mask, x in self._groups(graph, nodes):
            out[mask], hid = _mlp_forward(self._layers(f"g.{z}.{r}"), x)
            cache.append((f"g.{z}.{r}", mask, x, hid))
        return out, cache

    def initial_edge_backward(self, cache, grad, grads):
        for prefix, mask, x, hid in cache:
            parts = _mlp_backward(self._layers(prefix), x, hid, grad[mask])
            for name, g in zip(self.layer_names(prefix, self.hidden), parts):
                grads.add_dense(name, g)

    def base_term(self, graph, nodes, rs):
        out = np.empty((nodes.size, self.dims.dim))
        cache = []
        for z, mask, x in self._groups(graph, nodes):
            h, hid = _mlp_forward(self._layers(f"h.{z}"), x)
            beta = self.beta[rs[mask]][:, None]
            out[mask] = h + beta * (x @ self.tensors[f"O.{z}"])
            cache.append((z, mask, x, hid, beta))
        return out, cache

    def base_backward(self, cache, grad, grads):
        for z, mask, x, hid, beta in cache:
            g = grad[mask]
            parts = _mlp_backward(self._layers(f"h.{z}"), x, hid, g)
            for name, p in zip(self.layer_names(f"h.{z}", self.hidden), parts):
                grads.add_dense(name, p)
            grads.add_dense(f"O.{z}", x.T @ (beta * g))


def overall_embedding_i(graph, params: InductiveParams, node: int, r: int) -> np.ndarray:
    return overall_embedding(graph, params, node, r)


class _SplicedGraph:
    """Read-only view of a frozen graph plus one extra node.

    The new node sees its given neighbors; existing nodes keep the snapshot's
    neighborhoods, so their embeddings are unchanged by the splice.
    """

    def __init__(self, graph, node_type: int, attributes: np.ndarray,
                 edges: Dict[int, List[int]]):
        self.graph = graph
        self.new_id = graph.num_nodes
        self.num_nodes = graph.num_nodes + 1
        self.num_edge_types = graph.num_edge_types
        self.node_type_array = np.append(graph.node_type_array, node_type)
        self.new_attributes = np.asarray(attributes, dtype=np.float64)
        self.edges = {r: sorted(set(v)) for r, v in edges.items()}
        self._ops = {}

    def mean_operator(self, r, cap=None, seed=0):
        if r in self._ops:
            return self._ops[r]
        base = self.graph.mean_operator(r, cap, seed)
        n = self.num_nodes
        padded = sp.csr_matrix((base.data, base.indices, base.indptr), shape=(n - 1, n))
        nb = np.asarray(self.edges.get(r, []), dtype=np.int64)
        if nb.size == 0:
            nb = np.array([self.new_id])
        elif cap and nb.size > cap:
            rng = np.random.default_rng([seed, r, self.new_id])
            nb = np.sort(rng.choice(nb, size=cap, replace=False))
        row = sp.csr_matrix((np.full(nb.size, 1.0 / nb.size), nb, [0, nb.size]), shape=(1, n))
        op = sp.vstack([padded, row], format="csr")
        self._ops[r] = op
        return op

    def attribute_rows(self, nodes):
        nodes = np.asarray(nodes, dtype=np.int64)
        is_new = nodes == self.new_id
        if not is_new.any():
            return self.graph.attribute_rows(nodes)
        out = np.empty((nodes.size, self.new_attributes.size))
        out[is_new] = self.new_attributes
        if (~is_new).any():
            out[~is_new] = self.graph.attribute_rows(nodes[~is_new])
        return out


def embed_unseen(graph, params: InductiveParams, node_type, attributes,
                 edges: Iterable[Tuple[int, int]], r) -> np.ndarray:
    """Embed a node that was not in the training graph.

    Args:
        graph: frozen snapshot the model was trained on.
        params: trained inductive parameters (not modified).
        node_type: node type id or name of the new node.
        attributes: its attribute vector.
        edges: ``(existing node id, edge type id)`` pairs linking it into the graph.
        r: edge type id of the requested embedding.
    """
    if isinstance(node_type, str):
        node_type = graph.node_types.id(node_type)
    if isinstance(r, str):
        r = graph.edge_types.id(r)
    if attributes is None:
        raise MissingAttributesError("unseen node needs an attribute vector")
    x = np.asarray(attributes, dtype=np.float64).ravel()
    if x.size != params.attr_dims[node_type]:
        raise MissingAttributesError(
            f"attribute dimension {x.size} != {params.attr_dims[node_type]} for node type "
            f"{graph.node_types.name(node_type)!r}")
    by_type: Dict[int, List[int]] = {}
    for v, et in edges:
        if isinstance(et, str):
            et = graph.edge_types.id(et)
        if not 0 <= v < graph.num_nodes:
            raise UnknownNodeError(f"unknown neighbor id {v}")
        by_type.setdefault(int(et), []).append(int(v))
    view = _SplicedGraph(graph, node_type, x, by_type)
    v, _ = forward_batch(view, params, [view.new_id], [r])
    return v[0]
