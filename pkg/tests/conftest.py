import numpy as np
import pytest

from msm.graph import HeterogeneousGraph
from msm.inductive import InductiveParams
from msm.transductive import ModelDims, TransductiveParams


def random_graph(seed=0, n_a=5, n_b=5, p=0.4, attr=(3, 4), edge_types=("x", "y"),
                 same_type_edges=True):
    """Small two-type multiplex graph; every node gets attributes."""
    rng = np.random.default_rng(seed)
    g = HeterogeneousGraph()
    for k in range(n_a):
        g.add_node(f"a{k}", "A")
    for k in range(n_b):
        g.add_node(f"b{k}", "B")
    for e in edge_types:
        g.add_edge_type(e)
    n = n_a + n_b
    for e in edge_types:
        for u in range(n):
            for v in range(u + 1, n):
                if not same_type_edges and g.node_type(u) == g.node_type(v):
                    continue
                if rng.random() < p:
                    g.add_edge(u, v, e)
    for v in range(n):
        g.set_attributes(v, rng.normal(size=attr[g.node_type(v)]))
    return g.freeze()


def random_t_params(graph, seed=0, d=8, s=4, da=4, levels=2, activation="tanh", alpha=None):
    dims = ModelDims(graph.num_nodes, d, s, da, graph.num_edge_types, levels)
    rng = np.random.default_rng([seed, 99])
    alpha = rng.uniform(0.5, 1.5, graph.num_edge_types) if alpha is None else alpha
    p = TransductiveParams.init(dims, seed, alpha, activation)
    # spread everything out so no gradient is trivially tiny
    for name, t in p.tensors.items():
        t[...] = rng.normal(scale=0.5, size=t.shape)
    return p


def random_i_params(graph, seed=0, d=8, s=4, da=4, levels=2, hidden=0, activation="tanh",
                    alpha=None, beta=None):
    dims = ModelDims(graph.num_nodes, d, s, da, graph.num_edge_types, levels)
    rng = np.random.default_rng([seed, 98])
    m = graph.num_edge_types
    alpha = rng.uniform(0.5, 1.5, m) if alpha is None else alpha
    beta = rng.uniform(0.1, 0.5, m) if beta is None else beta
    attr_dims = [graph.attr_dim(z) for z in range(len(graph.node_types))]
    p = InductiveParams.init(dims, attr_dims, seed, alpha, beta, hidden, activation)
    for name, t in p.tensors.items():
        t[...] = rng.normal(scale=0.5, size=t.shape)
    return p


@pytest.fixture
def tiny_graph():
    return random_graph(0)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE = {}


def record_criterion(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
