"""Skip-gram training with negative sampling over metapath walk corpora."""
from __future__ import annotations

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .graph import HeterogeneousGraph
from .inductive import InductiveParams
from .metapath import (MetapathSchema, TrainingSample, context_pair_arrays, generate_corpus,
                       parse_schema)
from .transductive import (Gradients, ModelDims, ModelParams, TransductiveParams, backward_batch,
                           forward_batch)

log = logging.getLogger(__name__)


class NumericalError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    model: str = "t"
    dim: int = 200
    edge_dim: int = 10
    att_dim: int = 20
    levels: int = 2
    window: int = 5
    negatives: int = 5
    learning_rate: float = 0.05
    min_learning_rate: float = 1e-4
    epochs: int = 1
    batch_size: int = 256
    walks_per_node: int = 2
    max_walk_length: int = 10
    alpha: Union[float, Dict[str, float]] = 1.0
    beta: Union[float, Dict[str, float]] = 0.1
    activation: str = "tanh"
    hidden: int = 0
    neighbor_cap: int = 0
    neg_exponent: float = 0.75
    seed: int = 0
    threads: int = 1
    deterministic: bool = True
    valid_frac: float = 0.05
    test_frac: float = 0.1
    schemas: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.window < 1 or self.negatives < 1 or self.learning_rate <= 0:
            raise ValueError("need window >= 1, negatives >= 1 and learning_rate > 0")
        if self.model not in ("t", "i"):
            raise ValueError(f"model must be 't' or 'i', not {self.model!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.threads < 1:
            raise ValueError("need epochs >= 0, batch_size >= 1, threads >= 1")
        if self.levels < 0:
            raise ValueError("levels must be >= 0")

    def dims(self, graph: HeterogeneousGraph) -> ModelDims:
        return ModelDims(graph.num_nodes, self.dim, self.edge_dim, self.att_dim,
                         graph.num_edge_types, self.levels)

    def per_edge_type(self, value, graph: HeterogeneousGraph) -> np.ndarray:
        """Resolve a scalar or ``{edge type name: value}`` setting to an (m,) array."""
        if isinstance(value, dict):
            out = np.ones(graph.num_edge_types)
            for name, x in value.items():
                out[graph.edge_types.id(name)] = x
            return out
        return np.full(graph.num_edge_types, float(value))

    @classmethod
    def keys(cls) -> List[str]:
        return [f.name for f in fields(cls)]


class AliasTable:
    """Vose alias table for O(1) sampling from a discrete distribution."""

    def __init__(self, weights):
        w = np.asarray(weights, dtype=np.float64)
        n = w.size
        if n == 0 or w.sum() <= 0:
            raise ValueError("alias table needs a positive total weight")
        scaled = w * (n / w.sum())
        self.prob = np.ones(n)
        self.alias = np.arange(n)
        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        while small and large:
            s, l = small.pop(), large.pop()
            self.prob[s] = scaled[s]
            self.alias[s] = l
            scaled[l] = scaled[l] + scaled[s] - 1.0
            (small if scaled[l] < 1.0 else large).append(l)
        self.distribution = w / w.sum()

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        idx = rng.integers(0, self.prob.size, size=size)
        flip = rng.random(size=size) >= self.prob[idx]
        return np.where(flip, self.alias[idx], idx)


class NegativeTable:
    """Per-node-type alias tables over ``frequency ** exponent``."""

    def __init__(self, node_types: np.ndarray, frequencies, exponent: float = 0.75):
        node_types = np.asarray(node_types, dtype=np.int64)
        freq = np.asarray(frequencies, dtype=np.float64)
        self.exponent = exponent
        self.members: Dict[int, np.ndarray] = {}
        self.tables: Dict[int, AliasTable] = {}
        for t in np.unique(node_types):
            members = np.flatnonzero(node_types == t)
            w = np.maximum(freq[members], 0.0) ** exponent
            if w.sum() <= 0:
                w = np.ones(members.size)
            self.members[int(t)] = members
            self.tables[int(t)] = AliasTable(w)

    @classmethod
    def from_graph(cls, graph: HeterogeneousGraph, exponent: float = 0.75) -> "NegativeTable":
        degree = np.zeros(graph.num_nodes)
        for r in range(graph.num_edge_types):
            degree += np.diff(graph.csr(r)[0])
        return cls(graph.node_type_array, degree, exponent)

    def sample(self, node_type: int, count, rng: np.random.Generator) -> np.ndarray:
        return self.members[node_type][self.tables[node_type].sample(rng, count)]


def sample_negatives(table: NegativeTable, node_type: int, count: int,
                     rng: np.random.Generator) -> np.ndarray:
    return table.sample(node_type, count, rng)


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def batch_loss_and_gradients(graph, params: ModelParams, centers, contexts, rs, negatives,
                             with_grad: bool = True) -> Tuple[np.ndarray, Optional[Gradients]]:
    """Per-sample negative-sampling losses and the gradient of their sum."""
    centers = np.asarray(centers, dtype=np.int64)
    contexts = np.asarray(contexts, dtype=np.int64)
    negatives = np.asarray(negatives, dtype=np.int64).reshape(centers.size, -1)
    v, cache = forward_batch(graph, params, centers, rs)
    ctx = params.tensors["context"]
    c_pos = ctx[contexts]
    c_neg = ctx[negatives]
    pos = np.einsum("bd,bd->b", c_pos, v)
    neg = np.matmul(c_neg, v[:, :, None])[:, :, 0]
    losses = -_log_sigmoid(pos) - _log_sigmoid(-neg).sum(axis=1)
    if not with_grad:
        return losses, None
    d_pos = -np.exp(_log_sigmoid(-pos))  # sigma(pos) - 1
    d_neg = np.exp(_log_sigmoid(neg))    # sigma(neg)
    dv = d_pos[:, None] * c_pos + np.matmul(d_neg[:, None, :], c_neg)[:, 0]
    grads = Gradients()
    grads.add_rows("context", contexts, d_pos[:, None] * v)
    grads.add_rows("context", negatives.ravel(),
                   (d_neg[:, :, None] * v[:, None, :]).reshape(-1, v.shape[1]))
    backward_batch(params, cache, dv, grads)
    return losses, grads


def pair_loss(graph, params: ModelParams, sample: TrainingSample, negatives) -> float:
    losses, _ = batch_loss_and_gradients(graph, params, [sample.center], [sample.context],
                                         [sample.edge_type], [negatives], with_grad=False)
    return float(losses[0])


def pair_gradients(graph, params: ModelParams, sample: TrainingSample, negatives) -> Gradients:
    _, grads = batch_loss_and_gradients(graph, params, [sample.center], [sample.context],
                                        [sample.edge_type], [negatives])
    return grads


def apply_gradients(params: ModelParams, grads: Gradients, lr: float, batch_size: int = 1) -> None:
    """SGD step.  Per-node rows take the summed gradient; shared tensors take
    the batch mean, since every sample in the batch touches them."""
    for name, (idx, vals) in grads.rows.items():
        params.row_view(name)[idx] -= lr * vals
    for name, g in grads.dense.items():
        params.tensors[name] -= (lr / batch_size) * g


def init_params(graph: HeterogeneousGraph, config: TrainConfig) -> ModelParams:
    dims = config.dims(graph)
    alpha = config.per_edge_type(config.alpha, graph)
    cap = config.neighbor_cap or None
    if config.model == "t":
        return TransductiveParams.init(dims, config.seed, alpha, config.activation, cap)
    graph.require_attributes()
    attr_dims = [graph.attr_dim(z) for z in range(len(graph.node_types))]
    beta = config.per_edge_type(config.beta, graph)
    return InductiveParams.init(dims, attr_dims, config.seed, alpha, beta, config.hidden,
                                config.activation, cap)


@dataclass
class TrainResult:
    params: ModelParams
    loss_trace: List[Tuple[int, float, float]]
    num_samples: int

    def write_loss_trace(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write("epoch,mean_loss,learning_rate\n")
            for epoch, loss, lr in self.loss_trace:
                f.write(f"{epoch},{loss!r},{lr!r}\n")


def train(graph: HeterogeneousGraph, schemas: Sequence[Union[str, MetapathSchema]],
          config: TrainConfig, params: Optional[ModelParams] = None,
          on_epoch: Optional[Callable[[int, float], None]] = None) -> TrainResult:
    """Initialize, generate walk samples, then run SGD epochs over shuffled pairs."""
    graph.freeze()
    schemas = [parse_schema(s, graph) if isinstance(s, str) else s for s in schemas]
    if not schemas:
        raise ValueError("at least one metapath schema is required")
    params = init_params(graph, config) if params is None else params
    threads = 1 if config.deterministic else config.threads

    corpus = generate_corpus(graph, schemas, config.walks_per_node, config.max_walk_length,
                             config.seed, threads)
    centers, contexts, rtypes = context_pair_arrays(corpus, config.window)
    n = centers.size
    log.info("%d walks, %d training pairs", len(corpus), n)
    if n == 0:
        raise ValueError("walk corpus produced no training pairs")
    table = NegativeTable.from_graph(graph, config.neg_exponent)
    node_type = graph.node_type_array
    bs = config.batch_size
    batches_per_epoch = -(-n // bs)
    total_steps = max(1, config.epochs * batches_per_epoch)
    lr0, lr_min = config.learning_rate, min(config.min_learning_rate, config.learning_rate)
    rng = np.random.default_rng([config.seed, 1])
    trace: List[Tuple[int, float, float]] = []

    def run_batch(sel, step, brng):
        lr = lr0 - (lr0 - lr_min) * step / total_steps
        c, x, r = centers[sel], contexts[sel], rtypes[sel]
        negs = np.empty((sel.size, config.negatives), dtype=np.int64)
        ctx_types = node_type[x]
        for t in np.unique(ctx_types):
            rows = np.flatnonzero(ctx_types == t)
            negs[rows] = table.sample(int(t), (rows.size, config.negatives), brng)
        # overflow shows up as a non-finite loss, reported below
        with np.errstate(over="ignore", invalid="ignore"):
            losses, grads = batch_loss_and_gradients(graph, params, c, x, r, negs)
        total = float(losses.sum())
        if not np.isfinite(total):
            raise NumericalError(
                f"non-finite loss at step {step} (lr={lr:.3g}); centers={c[:5].tolist()}")
        apply_gradients(params, grads, lr, sel.size)
        return total, lr

    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        starts = range(0, n, bs)
        base_step = epoch * batches_per_epoch
        if threads == 1:
            results = [run_batch(perm[lo:lo + bs], base_step + k, rng)
                       for k, lo in enumerate(starts)]
        else:
            # lock-free shared-parameter updates; only row conflicts race
            lock = threading.Lock()
            results = []

            def worker(w):
                wrng = np.random.default_rng([config.seed, 2, epoch, w])
                out = [run_batch(perm[lo:lo + bs], base_step + k, wrng)
                       for k, lo in enumerate(starts) if k % threads == w]
                with lock:
                    results.extend(out)

            with ThreadPoolExecutor(threads) as pool:
                list(pool.map(worker, range(threads)))
        mean_loss = sum(r[0] for r in results) / n
        lr = lr0 - (lr0 - lr_min) * min(total_steps, base_step + batches_per_epoch) / total_steps
        trace.append((epoch + 1, mean_loss, lr))
        log.info("epoch %d mean loss %.5f lr %.3g", epoch + 1, mean_loss, lr)
        if on_epoch:
            on_epoch(epoch + 1, mean_loss)
    return TrainResult(params, trace, n)
