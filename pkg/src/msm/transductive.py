"""Transductive MSM model and the batched forward/backward engine.

For a batch of (node, edge type) queries the engine computes

* K levels of neighbor-mean aggregation of edge embeddings per edge type,
  touching only the K-hop neighborhoods of the queried nodes,
* self-attention over the m edge-type embeddings of each node,
* the overall embedding ``base + alpha_r * M_r^T U_i a_ir`` (plus whatever
  extra term the parameter object contributes),

and the exact reverse-mode gradient of any downstream scalar w.r.t. every
trainable tensor, returned as sparse row updates for per-node tables.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

ACTIVATIONS = {
    "tanh": (np.tanh, lambda y: 1.0 - y * y),
    "identity": (lambda z: z, lambda y: np.ones_like(y)),
}


@dataclass(frozen=True)
class ModelDims:
    num_nodes: int
    dim: int = 200
    edge_dim: int = 10
    att_dim: int = 20
    num_edge_types: int = 1
    levels: int = 2


def xavier(rng, shape, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def segment_sum(idx: np.ndarray, vals: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Sum rows of ``vals`` sharing the same ``idx``; returns ``(unique idx, sums)``."""
    uniq, inv = np.unique(idx, return_inverse=True)
    gather = sp.csr_matrix((np.ones(idx.size), (inv, np.arange(idx.size))),
                           shape=(uniq.size, idx.size))
    return uniq, gather @ vals


class Gradients:
    """Dense gradients for shared tensors, row-sparse ones for per-node tables."""

    def __init__(self):
        self.dense: Dict[str, np.ndarray] = {}
        self._rows: Dict[str, List[Tuple[np.ndarray, np.ndarray]]] = {}
        self._merged: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}

    def add_dense(self, name: str, g: np.ndarray) -> None:
        if name in self.dense:
            self.dense[name] = self.dense[name] + g
        else:
            self.dense[name] = np.array(g, dtype=np.float64)

    def add_rows(self, name: str, idx: np.ndarray, vals: np.ndarray) -> None:
        self._rows.setdefault(name, []).append((np.asarray(idx, dtype=np.int64), vals))
        self._merged.pop(name, None)

    @property
    def rows(self) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
        """Per-table ``(unique row ids, summed row gradients)``."""
        for name, parts in self._rows.items():
            if name not in self._merged:
                idx = np.concatenate([p[0] for p in parts])
                vals = np.concatenate([p[1] for p in parts])
                self._merged[name] = segment_sum(idx, vals)
        return self._merged

    def names(self):
        return set(self.dense) | set(self._rows)


class ModelParams:
    """Common container: a flat dict of trainable tensors plus hyper-parameters.

    Subclasses supply the base term, the initial (level-0) edge embeddings and
    their backward passes.
    """

    kind = "?"
    row_tables: Tuple[str, ...] = ()

    def __init__(self, dims: ModelDims, tensors: Dict[str, np.ndarray], alpha, activation="tanh",
                 neighbor_cap: Optional[int] = None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.dims = dims
        self.tensors = tensors
        self.alpha = np.broadcast_to(np.asarray(alpha, dtype=np.float64),
                                     (dims.num_edge_types,)).copy()
        self.activation = activation
        self.neighbor_cap = neighbor_cap

    def __getattr__(self, name):
        tensors = self.__dict__.get("tensors")
        if tensors is not None and name in tensors:
            return tensors[name]
        raise AttributeError(name)

    def trainable(self) -> Dict[str, np.ndarray]:
        return self.tensors

    def row_view(self, name: str) -> np.ndarray:
        t = self.tensors[name]
        return t.reshape(-1, t.shape[-1])

    def copy(self):
        new = object.__new__(type(self))
        new.__dict__.update(self.__dict__)
        new.tensors = {k: v.copy() for k, v in self.tensors.items()}
        new.alpha = self.alpha.copy()
        if hasattr(self, "beta"):
            new.beta = self.beta.copy()
        return new

    # hooks -------------------------------------------------------------
    def initial_edge(self, graph, nodes: np.ndarray, r: int):
        raise NotImplementedError

    def initial_edge_backward(self, cache, grad: np.ndarray, grads: Gradients) -> None:
        raise NotImplementedError

    def base_term(self, graph, nodes: np.ndarray, rs: np.ndarray):
        raise NotImplementedError

    def base_backward(self, cache, grad: np.ndarray, grads: Gradients) -> None:
        raise NotImplementedError


class TransductiveParams(ModelParams):
    """Free per-node base embeddings and level-0 edge embeddings."""

    kind = "t"
    row_tables = ("base", "edge0", "context")

    @classmethod
    def init(cls, dims: ModelDims, seed: int = 0, alpha=1.0, activation="tanh",
             neighbor_cap=None) -> "TransductiveParams":
        rng = np.random.default_rng(seed)
        n, d, s, da, m, k = (dims.num_nodes, dims.dim, dims.edge_dim, dims.att_dim,
                             dims.num_edge_types, dims.levels)
        tensors = {
            "base": rng.uniform(-0.5 / d, 0.5 / d, size=(n, d)),
            "edge0": rng.uniform(-0.5 / s, 0.5 / s, size=(n, m, s)),
            "agg_weights": xavier(rng, (k, s, s), s, s),
            "attn_vec": rng.uniform(-0.1, 0.1, size=(m, da)),
            "attn_mat": xavier(rng, (m, da, s), s, da),
            "transform": xavier(rng, (m, s, d), s, d),
            "context": np.zeros((n, d)),
        }
        return cls(dims, tensors, alpha, activation, neighbor_cap)

    def initial_edge(self, graph, nodes, r):
        return self.tensors["edge0"][nodes, r], (nodes, r)

    def initial_edge_backward(self, cache, grad, grads):
        nodes, r = cache
        grads.add_rows("edge0", nodes * self.dims.num_edge_types + r, grad)

    def base_term(self, graph, nodes, rs):
        return self.tensors["base"][nodes], nodes

    def base_backward(self, cache, grad, grads):
        grads.add_rows("base", cache, grad)


# ----------------------------------------------------------------------
# engine


def _restrict(op: sp.csr_matrix, rows: np.ndarray):
    """Rows of ``op`` with columns compacted to the columns they touch."""
    sub = op[rows]
    cols = np.unique(sub.indices)
    local = sp.csr_matrix((sub.data, np.searchsorted(cols, sub.indices), sub.indptr),
                          shape=(rows.size, cols.size))
    return local, cols


def edge_levels(graph, params: ModelParams, targets: np.ndarray, r: int, levels: int):
    """Aggregated edge embeddings of edge type ``r`` for sorted unique ``targets``.

    Returns ``(X, cache)`` where ``X[i]`` is the level-``levels`` embedding of
    ``targets[i]`` and ``cache`` holds what :func:`edge_levels_backward` needs.
    """
    op = graph.mean_operator(r, params.neighbor_cap)
    node_sets = [targets]
    subs = []
    for _ in range(levels):
        sub, cols = _restrict(op, node_sets[-1])
        subs.append(sub)
        node_sets.append(cols)
    subs.reverse()
    node_sets.reverse()
    x, init_cache = params.initial_edge(graph, node_sets[0], r)
    act = ACTIVATIONS[params.activation][0]
    weights = params.tensors["agg_weights"]
    hidden = []
    outs = [x]
    for k in range(levels):
        y = subs[k] @ x
        x = act(y @ weights[k].T)
        hidden.append(y)
        outs.append(x)
    return x, (subs, hidden, outs, init_cache)


def edge_levels_backward(params: ModelParams, cache, grad: np.ndarray, grads: Gradients) -> None:
    subs, hidden, outs, init_cache = cache
    dact = ACTIVATIONS[params.activation][1]
    weights = params.tensors["agg_weights"]
    levels = len(subs)
    if levels:
        dw = np.zeros_like(weights)
    for k in range(levels - 1, -1, -1):
        dz = grad * dact(outs[k + 1])
        dw[k] += dz.T @ hidden[k]
        grad = subs[k].T @ (dz @ weights[k])
    if levels:
        grads.add_dense("agg_weights", dw)
    params.initial_edge_backward(init_cache, grad, grads)


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def attention_forward(params: ModelParams, U: np.ndarray, r: int):
    """Coefficients for a stack ``U`` of shape (B, s, m) under edge type ``r``."""
    pre = np.matmul(params.tensors["attn_mat"][r], U)
    th = np.tanh(pre)
    scores = np.einsum("a,bam->bm", params.tensors["attn_vec"][r], th)
    return softmax(scores, axis=1), th


def forward_batch(graph, params: ModelParams, nodes, rs):
    """Overall embeddings ``v_{nodes[b], rs[b]}`` as a (B, d) array, plus a cache."""
    nodes = np.asarray(nodes, dtype=np.int64)
    rs = np.asarray(rs, dtype=np.int64)
    m = params.dims.num_edge_types
    targets, pos = np.unique(nodes, return_inverse=True)
    level_caches = []
    U = np.empty((nodes.size, params.dims.edge_dim, m))
    for r in range(m):
        x, cache = edge_levels(graph, params, targets, r, params.dims.levels)
        U[:, :, r] = x[pos]
        level_caches.append(cache)
    v, base_cache = params.base_term(graph, nodes, rs)
    v = np.array(v, dtype=np.float64)
    groups = []
    for r in np.unique(rs):
        idx = np.flatnonzero(rs == r)
        a, th = attention_forward(params, U[idx], r)
        e = np.einsum("bsm,bm->bs", U[idx], a)
        v[idx] += params.alpha[r] * (e @ params.tensors["transform"][r])
        groups.append((r, idx, a, th, e))
    return v, (targets, pos, U, level_caches, base_cache, groups)


def backward_batch(params: ModelParams, cache, dv: np.ndarray, grads: Optional[Gradients] = None
                   ) -> Gradients:
    grads = Gradients() if grads is None else grads
    targets, pos, U, level_caches, base_cache, groups = cache
    params.base_backward(base_cache, dv, grads)
    t = params.tensors
    dU = np.zeros_like(U)
    d_transform = np.zeros_like(t["transform"])
    d_attn_vec = np.zeros_like(t["attn_vec"])
    d_attn_mat = np.zeros_like(t["attn_mat"])
    for r, idx, a, th, e in groups:
        alpha = params.alpha[r]
        g = dv[idx]
        Ur = U[idx]
        d_transform[r] += alpha * (e.T @ g)
        de = alpha * (g @ t["transform"][r].T)
        da = np.einsum("bsm,bs->bm", Ur, de)
        dUr = np.einsum("bs,bm->bsm", de, a)
        dscore = a * (da - (a * da).sum(axis=1, keepdims=True))
        d_attn_vec[r] += np.einsum("bam,bm->a", th, dscore)
        dpre = np.einsum("a,bm->bam", t["attn_vec"][r], dscore) * (1.0 - th * th)
        d_attn_mat[r] += np.tensordot(dpre, Ur, axes=([0, 2], [0, 2]))
        dUr += np.matmul(t["attn_mat"][r].T, dpre)
        dU[idx] += dUr
    grads.add_dense("transform", d_transform)
    grads.add_dense("attn_vec", d_attn_vec)
    grads.add_dense("attn_mat", d_attn_mat)
    for r, lcache in enumerate(level_caches):
        # pos covers every target, so segment sums align with targets
        _, dx = segment_sum(pos, dU[:, :, r])
        edge_levels_backward(params, lcache, dx, grads)
    return grads


# ----------------------------------------------------------------------
# single-query operations


def aggregate_edge_embedding(graph, params: ModelParams, node: int, r: int, level: int) -> np.ndarray:
    """Edge embedding of ``node`` on edge type ``r`` after ``level`` aggregation steps."""
    if not 0 <= level <= params.dims.levels:
        raise ValueError(f"level must be in [0, {params.dims.levels}]")
    x, _ = edge_levels(graph, params, np.array([node]), r, level)
    return x[0]


def attention_coefficients(params: ModelParams, U_i: np.ndarray, r: int) -> np.ndarray:
    """Attention weights over the m columns of the (s, m) matrix ``U_i``."""
    U_i = np.asarray(U_i, dtype=np.float64)
    s, m = params.dims.edge_dim, params.dims.num_edge_types
    if U_i.shape != (s, m):
        raise ValueError(f"expected U_i of shape {(s, m)}, got {U_i.shape}")
    a, _ = attention_forward(params, U_i[None], r)
    return a[0]


def edge_matrix(graph, params: ModelParams, node: int) -> np.ndarray:
    """``U_i``: the (s, m) stack of fully aggregated edge embeddings of ``node``."""
    cols = [aggregate_edge_embedding(graph, params, node, r, params.dims.levels)
            for r in range(params.dims.num_edge_types)]
    return np.stack(cols, axis=1)


def overall_embedding(graph, params: ModelParams, node: int, r: int) -> np.ndarray:
    v, _ = forward_batch(graph, params, [node], [r])
    return v[0]


def overall_embedding_t(graph, params: TransductiveParams, node: int, r: int) -> np.ndarray:
    return overall_embedding(graph, params, node, r)


def embedding_matrix(graph, params: ModelParams, r: int, nodes=None, batch_size: int = 4096) -> np.ndarray:
    """Overall embeddings on edge type ``r`` for ``nodes`` (default: all nodes)."""
    nodes = np.arange(graph.num_nodes) if nodes is None else np.asarray(nodes, dtype=np.int64)
    out = np.empty((nodes.size, params.dims.dim))
    for lo in range(0, nodes.size, batch_size):
        chunk = nodes[lo:lo + batch_size]
        out[lo:lo + chunk.size], _ = forward_batch(graph, params, chunk, np.full(chunk.size, r))
    return out
