"""Link-prediction evaluation: edge splits, cosine scoring and ranking metrics."""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.stats import rankdata

from .graph import HeterogeneousGraph
from .transductive import ModelParams, embedding_matrix


class SplitError(ValueError):
    pass


class DegenerateLabelsError(ValueError):
    pass


# ----------------------------------------------------------------------
# splits


@dataclass
class EdgeSet:
    """Labelled node pairs of one edge type."""

    pairs: np.ndarray   # (n, 2)
    labels: np.ndarray  # (n,) 1 for true edge, 0 for sampled non-edge


@dataclass
class EvalSplit:
    valid: Dict[int, EdgeSet] = field(default_factory=dict)
    test: Dict[int, EdgeSet] = field(default_factory=dict)

    def write(self, directory: str, graph: HeterogeneousGraph) -> None:
        os.makedirs(directory, exist_ok=True)
        names = graph.nodes.names
        for part in ("valid", "test"):
            with open(os.path.join(directory, f"{part}.tsv"), "w", encoding="utf-8") as f:
                for r, es in sorted(getattr(self, part).items()):
                    ename = graph.edge_types.name(r)
                    for (u, v), y in zip(es.pairs, es.labels):
                        f.write(f"{names[u]}\t{names[v]}\t{ename}\t{int(y)}\n")

    @classmethod
    def read(cls, directory: str, graph: HeterogeneousGraph) -> "EvalSplit":
        split = cls()
        for part in ("valid", "test"):
            rows: Dict[int, Tuple[list, list]] = {}
            with open(os.path.join(directory, f"{part}.tsv"), encoding="utf-8") as f:
                for line in f:
                    if not line.strip() or line.startswith("#"):
                        continue
                    u, v, e, y = line.rstrip("\n").split("\t")
                    pairs, labels = rows.setdefault(graph.edge_types.id(e), ([], []))
                    pairs.append((graph.nodes.id(u), graph.nodes.id(v)))
                    labels.append(int(y))
            getattr(split, part).update({
                r: EdgeSet(np.asarray(p, dtype=np.int64).reshape(-1, 2), np.asarray(y))
                for r, (p, y) in rows.items()})
        return split


def _sample_non_edges(graph, r, type_pairs, count, exclude, rng):
    """``count`` distinct type-compatible pairs that are not ``r``-edges in ``graph``."""
    members = {t: graph.nodes_of_type(t) for t in set(np.ravel(type_pairs).tolist())}
    out = []
    seen = set(exclude)
    attempts = 0
    while len(out) < count:
        attempts += 1
        if attempts > 1000 * count + 1000:
            raise SplitError(f"could not sample {count} non-edges for edge type "
                             f"{graph.edge_types.name(r)!r}")
        ta, tb = type_pairs[rng.integers(len(type_pairs))]
        u = int(members[ta][rng.integers(members[ta].size)])
        v = int(members[tb][rng.integers(members[tb].size)])
        key = (min(u, v), max(u, v))
        if u == v or key in seen or graph.has_edge(u, v, r):
            continue
        seen.add(key)
        out.append((u, v))
    return out


def split_edges(graph: HeterogeneousGraph, valid_frac: float = 0.05, test_frac: float = 0.1,
                seed: int = 0) -> Tuple[EvalSplit, HeterogeneousGraph]:
    """Hold out random positives per edge type and pair them with sampled non-edges.

    Returns the split and the reduced (frozen) training graph.
    """
    for name, frac in (("valid_frac", valid_frac), ("test_frac", test_frac)):
        if not 0.0 < frac <= 0.5:
            raise SplitError(f"{name} must be in (0, 0.5], got {frac}")
    graph.freeze()
    rng = np.random.default_rng(seed)
    split = EvalSplit()
    removed: Dict[int, List[Tuple[int, int]]] = {}
    types = graph.node_type_array
    for r, ename in enumerate(graph.edge_types.names):
        edges = graph.edges(r)
        if len(edges) < 10:
            raise SplitError(f"edge type {ename!r} has only {len(edges)} edges (need >= 10)")
        n_test = int(round(test_frac * len(edges)))
        n_valid = int(round(valid_frac * len(edges)))
        perm = rng.permutation(len(edges))
        test_pos = edges[perm[:n_test]]
        valid_pos = edges[perm[n_test:n_test + n_valid]]
        removed[r] = [tuple(e) for e in np.concatenate([test_pos, valid_pos]).tolist()]
        type_pairs = np.unique(np.sort(types[edges], axis=1), axis=0)
        negs = _sample_non_edges(graph, r, type_pairs, n_test + n_valid, (), rng)
        for part, pos, neg in (("test", test_pos, negs[:n_test]),
                               ("valid", valid_pos, negs[n_test:])):
            pairs = np.concatenate([pos, np.asarray(neg, dtype=np.int64).reshape(-1, 2)])
            labels = np.concatenate([np.ones(len(pos), dtype=np.int64),
                                     np.zeros(len(neg), dtype=np.int64)])
            getattr(split, part)[r] = EdgeSet(pairs, labels)
    return split, graph.copy(drop_edges=removed).freeze()


# ----------------------------------------------------------------------
# scoring and metrics


def cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cosine similarity; pairs involving a zero vector score 0."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    num = np.einsum("ij,ij->i", a, b)
    den = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def score_pair(embeddings, u: int, v: int, r: Optional[int] = None, graph=None) -> float:
    """Cosine score of ``u`` and ``v`` on edge type ``r``.

    ``embeddings`` is either an (N, d) embedding matrix for edge type ``r`` or
    a parameter object (then ``graph`` and ``r`` are required).
    """
    if isinstance(embeddings, ModelParams):
        emb = embedding_matrix(graph, embeddings, r, nodes=[u, v])
        return float(cosine(emb[0], emb[1])[0])
    emb = np.asarray(embeddings)
    return float(cosine(emb[u], emb[v])[0])


def _check_labels(labels):
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise DegenerateLabelsError("need at least one positive and one negative label")
    return labels, n_pos, labels.size - n_pos


def roc_auc(scores, labels) -> float:
    """Mann-Whitney rank statistic; tied scores count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels, n_pos, n_neg = _check_labels(labels)
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _pr_steps(scores, labels):
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]  # end of each tie group
    tp = np.cumsum(y)[last].astype(np.float64)
    fp = (last + 1) - tp
    return tp, fp, s[last]


def pr_auc(scores, labels) -> float:
    """Average precision: sum over thresholds of recall increment times precision."""
    scores = np.asarray(scores, dtype=np.float64)
    labels, n_pos, _ = _check_labels(labels)
    tp, fp, _ = _pr_steps(scores, labels)
    d_recall = np.diff(np.r_[0.0, tp]) / n_pos
    precision = tp / (tp + fp)
    return math.fsum((d_recall * precision).tolist())


def best_f1_threshold(scores, labels) -> Tuple[float, float]:
    """Threshold maximizing F1 when predicting ``score >= threshold`` positive."""
    scores = np.asarray(scores, dtype=np.float64)
    labels, n_pos, _ = _check_labels(labels)
    tp, fp, thr = _pr_steps(scores, labels)
    f1 = 2 * tp / (tp + fp + n_pos)
    k = int(np.argmax(f1))
    return float(thr[k]), float(f1[k])


def f1_score(scores, labels, threshold: float) -> float:
    pred = np.asarray(scores) >= threshold
    y = np.asarray(labels).astype(bool)
    tp = float((pred & y).sum())
    denom = pred.sum() + y.sum()
    return 2 * tp / denom if denom else 0.0


def f1_at_best_threshold(scores_valid, labels_valid, scores_test, labels_test) -> Tuple[float, float]:
    threshold, _ = best_f1_threshold(scores_valid, labels_valid)
    return threshold, f1_score(scores_test, labels_test, threshold)


# ----------------------------------------------------------------------
# reports


@dataclass
class EdgeTypeMetrics:
    edge_type: str
    roc_auc: float
    pr_auc: float
    f1: float
    threshold: float


@dataclass
class EvalReport:
    per_type: List[EdgeTypeMetrics]

    @property
    def roc_auc(self) -> float:
        return float(np.mean([m.roc_auc for m in self.per_type]))

    @property
    def pr_auc(self) -> float:
        return float(np.mean([m.pr_auc for m in self.per_type]))

    @property
    def f1(self) -> float:
        return float(np.mean([m.f1 for m in self.per_type]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["edge_type", "roc_auc", "pr_auc", "f1", "threshold"])
        for m in self.per_type:
            w.writerow([m.edge_type, f"{m.roc_auc:.6f}", f"{m.pr_auc:.6f}", f"{m.f1:.6f}",
                        f"{m.threshold:.6f}"])
        w.writerow(["average", f"{self.roc_auc:.6f}", f"{self.pr_auc:.6f}", f"{self.f1:.6f}", ""])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"per_edge_type": [asdict(m) for m in self.per_type],
                "average": {"roc_auc": self.roc_auc, "pr_auc": self.pr_auc, "f1": self.f1}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table(self, reference: Optional[Dict[str, float]] = None) -> str:
        lines = [f"{'edge type':<20} {'ROC-AUC':>8} {'PR-AUC':>8} {'F1':>8}"]
        for m in self.per_type:
            lines.append(f"{m.edge_type:<20} {m.roc_auc:8.3f} {m.pr_auc:8.3f} {m.f1:8.3f}")
        lines.append(f"{'average':<20} {self.roc_auc:8.3f} {self.pr_auc:8.3f} {self.f1:8.3f}")
        if reference:
            ref = [reference.get(k, float("nan")) for k in ("roc_auc", "pr_auc", "f1")]
            lines.append(f"{'reference':<20} {ref[0]:8.3f} {ref[1]:8.3f} {ref[2]:8.3f}")
            lines.append(f"{'difference':<20} {self.roc_auc - ref[0]:+8.3f} "
                         f"{self.pr_auc - ref[1]:+8.3f} {self.f1 - ref[2]:+8.3f}")
        return "\n".join(lines)


def evaluate_embeddings(embeddings: Dict[int, np.ndarray], split: EvalSplit,
                        graph: HeterogeneousGraph) -> EvalReport:
    """Metrics from precomputed per-edge-type embedding matrices."""
    out = []
    for r in sorted(split.test):
        emb = embeddings[r]
        test, valid = split.test[r], split.valid.get(r)
        s_test = cosine(emb[test.pairs[:, 0]], emb[test.pairs[:, 1]])
        if valid is not None and len(valid.labels):
            s_valid = cosine(emb[valid.pairs[:, 0]], emb[valid.pairs[:, 1]])
            thr, f1 = f1_at_best_threshold(s_valid, valid.labels, s_test, test.labels)
        else:
            thr, f1 = best_f1_threshold(s_test, test.labels)
        out.append(EdgeTypeMetrics(graph.edge_types.name(r), roc_auc(s_test, test.labels),
                                   pr_auc(s_test, test.labels), f1, thr))
    return EvalReport(out)


def evaluate(graph: HeterogeneousGraph, params: ModelParams, split: EvalSplit) -> EvalReport:
    """Per-edge-type metrics with the edge-type-specific embeddings, plus uniform averages."""
    embeddings = {r: embedding_matrix(graph, params, r) for r in split.test}
    return evaluate_embeddings(embeddings, split, graph)


def label_oracle_auc(split: EvalSplit, labels: np.ndarray) -> float:
    """Averaged test ROC-AUC of a scorer that only knows ground-truth communities.

    A pair scores 1 when both endpoints share a community and 0 otherwise.
    On a planted graph with independent edges this is the best any ranker
    can do in expectation, so it bounds what an embedding can reach.
    """
    labels = np.asarray(labels)
    aucs = [roc_auc((labels[es.pairs[:, 0]] == labels[es.pairs[:, 1]]).astype(float), es.labels)
            for _, es in sorted(split.test.items())]
    return float(np.mean(aucs))


def holdout_nodes(graph: HeterogeneousGraph, count: int, seed: int = 0
                  ) -> Tuple[np.ndarray, HeterogeneousGraph]:
    """Pick ``count`` random nodes and return them with a frozen copy lacking their edges."""
    graph.freeze()
    rng = np.random.default_rng([seed, 7])
    held = np.sort(rng.choice(graph.num_nodes, count, replace=False))
    return held, graph.copy(drop_nodes=held.tolist()).freeze()


def unseen_node_auc(graph: HeterogeneousGraph, reduced: HeterogeneousGraph, params,
                    held: np.ndarray, seed: int = 0) -> float:
    """ROC-AUC of held-out nodes embedded as if unseen.

    For each held-out node and edge type ``r`` the node is embedded from its
    attributes and its edges of the other edge types (never its ``r``-edges),
    then its true ``r``-links to training nodes are ranked against an equal
    number of sampled type-compatible non-links.  Scores from all nodes and
    edge types are pooled.
    """
    from .inductive import embed_unseen

    rng = np.random.default_rng([seed, 8])
    hs = set(int(u) for u in held)
    types = graph.node_type_array
    scores, labels = [], []
    for r in range(graph.num_edge_types):
        emb = embedding_matrix(reduced, params, r)
        pairs = {tuple(p) for p in np.sort(types[graph.edges(r)], axis=1).tolist()}
        free = np.array([w not in hs for w in range(graph.num_nodes)])
        for u in (int(u) for u in held):
            pos = [w for w in graph.neighbors(u, r) if w not in hs]
            if not pos:
                continue
            given = [(w, o) for o in range(graph.num_edge_types) if o != r
                     for w in graph.neighbors(u, o) if w not in hs]
            v = embed_unseen(reduced, params, int(types[u]), graph.attributes[u], given, r)
            ok = np.array([(min(types[u], t), max(types[u], t)) in pairs for t in types])
            ok &= free
            ok[u] = False
            ok[graph.neighbors(u, r)] = False
            cand = np.flatnonzero(ok)
            neg = rng.choice(cand, min(len(pos), cand.size), replace=False)
            others = np.concatenate([np.asarray(pos, dtype=np.int64), neg])
            scores.append(cosine(np.broadcast_to(v, (others.size, v.size)), emb[others]))
            labels.append(np.r_[np.ones(len(pos)), np.zeros(neg.size)])
    return roc_auc(np.concatenate(scores), np.concatenate(labels))
