"""Slow, straight-line reference implementations used as test oracles.

Nothing here shares code with the package beyond reading graph adjacency
through ``neighbors`` and attribute dicts.  Loops and scalars on purpose.
"""
import math

import numpy as np


def act_fn(name):
    return math.tanh if name == "tanh" else (lambda z: z)


def ref_edge_embedding(graph, level0, W, activation, node, r, k):
    """u_{node,r}^{(k)} by direct recursion over neighbor lists.

    ``level0(v)`` returns the level-0 vector of node ``v`` on edge type ``r``.
    Isolated nodes average over themselves.
    """
    if k == 0:
        return [float(x) for x in level0(node)]
    nbrs = graph.neighbors(node, r) or [node]
    prev = [ref_edge_embedding(graph, level0, W, activation, j, r, k - 1) for j in nbrs]
    s = len(prev[0])
    mean = [sum(p[i] for p in prev) / len(prev) for i in range(s)]
    f = act_fn(activation)
    Wk = W[k - 1]
    return [f(sum(Wk[i][j] * mean[j] for j in range(s))) for i in range(len(Wk))]


def ref_attention(w, Wr, U):
    """softmax over columns of U (s x m) of w . tanh(Wr u_col)."""
    s, m = len(U), len(U[0])
    scores = []
    for c in range(m):
        col = [U[i][c] for i in range(s)]
        hid = [math.tanh(sum(Wr[a][i] * col[i] for i in range(s))) for a in range(len(Wr))]
        scores.append(sum(w[a] * hid[a] for a in range(len(w))))
    top = max(scores)
    ex = [math.exp(x - top) for x in scores]
    tot = sum(ex)
    return [e / tot for e in ex]


def ref_overall(base, U, a, alpha, M):
    """b + alpha * M^T U a, with M of shape (s, d)."""
    s, m = len(U), len(U[0])
    e = [sum(U[i][c] * a[c] for c in range(m)) for i in range(s)]
    return [base[j] + alpha * sum(M[i][j] * e[i] for i in range(s)) for j in range(len(base))]


def ref_affine(W, b, x):
    """x W + b for W of shape (in, out)."""
    return [b[j] + sum(x[i] * W[i][j] for i in range(len(x))) for j in range(len(b))]


def ref_mlp(layers, x):
    if len(layers) == 2:
        return ref_affine(layers[0], layers[1], x)
    hid = [math.tanh(z) for z in ref_affine(layers[0], layers[1], x)]
    return ref_affine(layers[2], layers[3], hid)


def _lists(params, prefix):
    names = [n for n in params.tensors if n.startswith(prefix + ".")]
    order = ["W", "b"] if len(names) == 2 else ["W1", "b1", "W2", "b2"]
    return [params.tensors[f"{prefix}.{k}"].tolist() for k in order]


def ref_embedding_t(graph, params, node, r):
    """Overall transductive embedding assembled from the references above."""
    t = params.tensors
    m = params.dims.num_edge_types
    W = t["agg_weights"].tolist()
    cols = []
    for q in range(m):
        cols.append(ref_edge_embedding(graph, lambda v, q=q: t["edge0"][v, q], W,
                                       params.activation, node, q, params.dims.levels))
    U = [[cols[q][i] for q in range(m)] for i in range(len(cols[0]))]
    a = ref_attention(t["attn_vec"][r].tolist(), t["attn_mat"][r].tolist(), U)
    return ref_overall(t["base"][node].tolist(), U, a, float(params.alpha[r]),
                       t["transform"][r].tolist())


def ref_embedding_i(graph, params, node, r):
    """Overall inductive embedding: h_z(x) + beta_r x O_z + alpha_r M_r^T U a."""
    t = params.tensors
    m = params.dims.num_edge_types
    W = t["agg_weights"].tolist()

    def level0(q):
        def f(v):
            z = graph.node_type(v)
            return ref_mlp(_lists(params, f"g.{z}.{q}"), graph.attributes[v].tolist())
        return f

    cols = [ref_edge_embedding(graph, level0(q), W, params.activation, node, q,
                               params.dims.levels) for q in range(m)]
    U = [[cols[q][i] for q in range(m)] for i in range(len(cols[0]))]
    a = ref_attention(t["attn_vec"][r].tolist(), t["attn_mat"][r].tolist(), U)
    z = graph.node_type(node)
    x = graph.attributes[node].tolist()
    h = ref_mlp(_lists(params, f"h.{z}"), x)
    O = t[f"O.{z}"].tolist()
    beta = float(params.beta[r])
    base = [h[j] + beta * sum(x[i] * O[i][j] for i in range(len(x))) for j in range(len(h))]
    return ref_overall(base, U, a, float(params.alpha[r]), t["transform"][r].tolist())


def ref_pair_loss(v, c_pos, c_negs):
    """-log sigma(c.v) - sum log sigma(-c_n.v), written with log1p."""
    def softplus(z):
        return z + math.log1p(math.exp(-z)) if z > 0 else math.log1p(math.exp(z))
    dot = sum(a * b for a, b in zip(c_pos, v))
    loss = softplus(-dot)
    for c in c_negs:
        loss += softplus(sum(a * b for a, b in zip(c, v)))
    return loss


def brute_roc_auc(scores, labels):
    """Fraction of (positive, negative) pairs ordered correctly, ties count half."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            wins += 1.0 if p > n else 0.5 if p == n else 0.0
    return wins / (len(pos) * len(neg))


def brute_average_precision(scores, labels):
    """Step integration of precision over recall, thresholding at each distinct score."""
    total_pos = sum(labels)
    ap = 0.0
    prev_recall = 0.0
    for thr in sorted(set(scores), reverse=True):
        sel = [y for s, y in zip(scores, labels) if s >= thr]
        tp = sum(sel)
        recall = tp / total_pos
        precision = tp / len(sel)
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def numeric_gradient(f, arr, h=1e-5):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``arr`` (in place)."""
    g = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


def relative_error(analytic, numeric, floor=1e-7):
    """Max elementwise |a - n| / max(|a|, |n|); entries where both are below
    ``floor`` are compared on the absolute scale of ``floor`` instead."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    den = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / den)) if a.size else 0.0


def walk_violations(graph, schema, walk):
    """Transitions of ``walk`` that break the schema's (type, edge, type) triples."""
    n = len(schema.edge_types)
    bad = []
    if graph.node_type(int(walk[0])) != schema.node_types[0]:
        bad.append((0, "start type"))
    for t in range(len(walk) - 1):
        s = t % n
        u, v = int(walk[t]), int(walk[t + 1])
        ok = (graph.node_type(u) == schema.node_types[s]
              and graph.node_type(v) == schema.node_types[s + 1]
              and graph.has_edge(u, v, schema.edge_types[s]))
        if not ok:
            bad.append((t, (u, v)))
    return bad


def next_hop_chi_square(graph, schema, walks, min_expected=5.0):
    """Pooled chi-square of next-hop counts against uniform over the allowed hops.

    Contexts are (current node, schema step); only contexts whose expected
    count per candidate reaches ``min_expected`` are pooled.  Returns
    ``(statistic, degrees of freedom, contexts used)``.
    """
    n = len(schema.edge_types)
    counts = {}
    for walk in walks:
        for t in range(len(walk) - 1):
            key = (int(walk[t]), t % n)
            d = counts.setdefault(key, {})
            d[int(walk[t + 1])] = d.get(int(walk[t + 1]), 0) + 1
    stat, dof, used = 0.0, 0, 0
    for (u, s), hits in counts.items():
        allowed = graph.typed_neighbors(u, schema.edge_types[s], schema.node_types[s + 1])
        total = sum(hits.values())
        expected = total / len(allowed)
        if len(allowed) < 2 or expected < min_expected:
            continue
        stat += sum((hits.get(w, 0) - expected) ** 2 / expected for w in allowed)
        dof += len(allowed) - 1
        used += 1
    return stat, dof, used


def random_schema_text(graph, rng, max_steps=3):
    """Random DSL string whose every step is realizable in ``graph``."""
    present = []
    for r in range(graph.num_edge_types):
        for u, v in graph.edges(r).tolist():
            present.append((graph.node_type(u), r, graph.node_type(v)))
            present.append((graph.node_type(v), r, graph.node_type(u)))
    present = sorted(set(present))
    a, r, b = present[rng.integers(len(present))]
    node_types, edge_types = [a, b], [r]
    for _ in range(rng.integers(0, max_steps)):
        options = [p for p in present if p[0] == node_types[-1]]
        _, r, b = options[rng.integers(len(options))]
        edge_types.append(r)
        node_types.append(b)
    parts = [graph.node_types.name(node_types[0])]
    for r, t in zip(edge_types, node_types[1:]):
        parts.append(f"-{graph.edge_types.name(r)}-> {graph.node_types.name(t)}")
    return " ".join(parts)


def walk_conformance_run(total_walks=10000, seed=0):
    """Walks over random graphs and schemas until ``total_walks`` are collected.

    Returns ``(walks checked, violating transitions, pooled chi-square p-value)``.
    """
    from scipy.stats import chi2

    from msm.graph import HeterogeneousGraph
    from msm.metapath import generate_walks, parse_schema

    rng = np.random.default_rng(seed)
    checked = bad = 0
    stat = dof = 0.0
    k = 0
    while checked < total_walks:
        g = HeterogeneousGraph()
        for v in range(24):
            g.add_node(f"n{v}", "PQR"[rng.integers(3)])
        for r in ("e0", "e1", "e2"):
            g.add_edge_type(r)
            for u in range(24):
                for v in range(u + 1, 24):
                    if rng.random() < 0.25:
                        g.add_edge(u, v, r)
        g.freeze()
        schema = parse_schema(random_schema_text(g, rng), g)
        corpus = generate_walks(g, schema, walks_per_node=60, max_length=12, seed=k)
        k += 1
        for w in corpus.walks:
            bad += len(walk_violations(g, schema, w))
        s, d, _ = next_hop_chi_square(g, schema, corpus.walks)
        stat += s
        dof += d
        checked += len(corpus.walks)
    return checked, bad, float(chi2.sf(stat, dof))


def analytic_dense(params, grads):
    """Expand a sparse/dense gradient object into full arrays per tensor."""
    full = {name: np.zeros_like(t) for name, t in params.tensors.items()}
    for name, (idx, vals) in grads.rows.items():
        full[name].reshape(-1, full[name].shape[-1])[idx] += vals
    for name, g in grads.dense.items():
        full[name] += g
    return full


def gradient_check(graph, params, sample, negatives, h=1e-5):
    """Per-tensor max relative error between analytic and central-difference gradients."""
    from msm.trainer import pair_gradients, pair_loss

    analytic = analytic_dense(params, pair_gradients(graph, params, sample, negatives))
    errors = {}
    for name, t in params.tensors.items():
        num = numeric_gradient(lambda: pair_loss(graph, params, sample, negatives), t, h)
        errors[name] = relative_error(analytic[name], num)
    return errors
