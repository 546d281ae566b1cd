import math

import numpy as np
import pytest

from msm.metapath import parse_schema
from msm.synthgen import (EdgeSpec, SynthSpec, SynthSpecError, balanced_preset, compatible_pairs,
                          generate, inductive_preset, unbalanced_preset)


def test_edge_counts_within_three_sigma():
    spec = SynthSpec(seed=5)
    g = generate(spec).graph
    for e in spec.edge_types:
        intra, inter = compatible_pairs(spec, e)
        mean = intra * e.p_intra + inter * e.p_inter
        sd = math.sqrt(intra * e.p_intra * (1 - e.p_intra) + inter * e.p_inter * (1 - e.p_inter))
        assert abs(g.num_edges(e.name) - mean) < 3 * sd


def test_compatible_pairs_counts():
    spec = SynthSpec(node_counts={"U": 4, "I": 6}, communities=2)
    assert compatible_pairs(spec, spec.edge_types[0]) == (12, 12)
    same = SynthSpec(node_counts={"U": 4}, edge_types=[EdgeSpec("f", "U", "U", 0.5, 0.1)],
                     attr_dims={"U": 2})
    assert compatible_pairs(same, same.edge_types[0]) == (2, 4)


def test_intra_edges_dominate():
    sg = generate(balanced_preset(1))
    g = sg.graph
    for r in range(g.num_edge_types):
        e = g.edges(r)
        intra = (sg.labels[e[:, 0]] == sg.labels[e[:, 1]]).mean()
        assert intra > 0.85  # expected 10 / 11


def test_zero_noise_gives_centroids():
    sg = generate(SynthSpec(noise=0.0, seed=2))
    g = sg.graph
    for v in range(g.num_nodes):
        t = g.node_types.name(g.node_type(v))
        assert (g.attributes[v] == sg.centroids[(t, int(sg.labels[v]))]).all()
        assert np.linalg.norm(g.attributes[v]) == pytest.approx(1.0)


def test_noise_scale_does_not_change_structure():
    a = generate(SynthSpec(noise=0.1, seed=3))
    b = generate(SynthSpec(noise=2.0, seed=3))
    for r in range(2):
        assert (a.graph.edges(r) == b.graph.edges(r)).all()
    # attributes differ only by the scale of one fixed noise draw
    v = 10
    t = a.graph.node_types.name(a.graph.node_type(v))
    c = a.centroids[(t, int(a.labels[v]))]
    np.testing.assert_allclose((b.graph.attributes[v] - c) / 2.0,
                               (a.graph.attributes[v] - c) / 0.1)


def test_generation_deterministic():
    a, b, c = (generate(SynthSpec(seed=s)) for s in (4, 4, 5))
    assert a.graph.stats() == b.graph.stats()
    assert all((a.graph.edges(r) == b.graph.edges(r)).all() for r in range(2))
    assert all((a.graph.attributes[v] == b.graph.attributes[v]).all() for v in range(600))
    assert not all(len(a.graph.edges(r)) == len(c.graph.edges(r)) and
                   (a.graph.edges(r) == c.graph.edges(r)).all() for r in range(2))


@pytest.mark.parametrize("preset,counts", [(balanced_preset, {"U": 300, "I": 300}),
                                           (unbalanced_preset, {"U": 100, "I": 1000}),
                                           (inductive_preset, {"U": 300, "I": 300})])
def test_presets(preset, counts):
    spec = preset(0)
    stats = generate(spec).graph.stats()
    assert stats["nodes"] == counts
    assert all(n > 0 for n in stats["edges"].values())
    assert len(stats["edges"]) == 2


def test_unbalanced_preset_matches_balanced_density():
    # same number of U-I pairs (90k balanced, 100k unbalanced) and the same probabilities
    b, u = balanced_preset(0), unbalanced_preset(0)
    assert [(e.p_intra, e.p_inter) for e in b.edge_types] == \
        [(e.p_intra, e.p_inter) for e in u.edge_types]


def test_schemas_parse_and_start_from_both_sides():
    spec = SynthSpec()
    g = generate(spec).graph
    schemas = [parse_schema(s, g) for s in spec.schemas()]
    starts = {g.node_types.name(s.node_types[0]) for s in schemas}
    assert starts == {"U", "I"}
    assert all(s.cyclic for s in schemas)
    # one schema per edge type mixes in the other relation
    assert any(len(set(s.edge_types)) == 2 for s in schemas)


@pytest.mark.parametrize("bad", [
    dict(communities=0),
    dict(noise=-1.0),
    dict(node_counts={"U": -1, "I": 3}),
    dict(edge_types=[EdgeSpec("e", "U", "X", 0.1, 0.01)]),
    dict(edge_types=[EdgeSpec("e", "U", "I", 1.5, 0.01)]),
    dict(edge_types=[EdgeSpec("e", "U", "I", 0.01, 0.1)]),
])
def test_invalid_specs(bad):
    with pytest.raises(SynthSpecError):
        generate(SynthSpec(**bad))


def probe_accuracy(noise, seed=0):
    """Held-out accuracy of a least-squares linear probe predicting community from attributes."""
    sg = generate(SynthSpec(node_counts={"U": 400, "I": 400}, communities=4, noise=noise,
                            seed=seed))
    g = sg.graph
    users = g.nodes_of_type(g.node_types.id("U"))
    X = np.stack([g.attributes[int(v)] for v in users])
    X = np.hstack([X, np.ones((len(X), 1))])
    y = sg.labels[users]
    Y = np.eye(4)[y]
    train, test = slice(0, 300), slice(300, None)
    W, *_ = np.linalg.lstsq(X[train], Y[train], rcond=None)
    return float((np.argmax(X[test] @ W, axis=1) == y[test]).mean())


def test_linear_probe_degrades_with_noise():
    acc = [probe_accuracy(s) for s in (0.05, 0.3, 1.0, 3.0)]
    assert acc[0] == 1.0
    assert all(a >= b for a, b in zip(acc, acc[1:])), acc
    assert acc[-1] < 0.6


def test_write_labels(tmp_path):
    sg = generate(SynthSpec(node_counts={"U": 5, "I": 5}, seed=0,
                            edge_types=[EdgeSpec("e", "U", "I", 0.9, 0.1)]))
    sg.write(str(tmp_path))
    rows = (tmp_path / "labels.tsv").read_text().splitlines()
    assert rows[0] == "u0\t0" and rows[1] == "u1\t1" and len(rows) == 10
