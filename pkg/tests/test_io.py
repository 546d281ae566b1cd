import gzip
import json
import struct

import numpy as np
import pytest

from conftest import random_graph, random_i_params, random_t_params
from msm.io import (CheckpointError, ConfigError, amazon_edge_type, check_registries,
                    export_embeddings, format_config, load_amazon, load_checkpoint, parse_config,
                    read_config, read_embeddings, save_checkpoint, write_config)
from msm.trainer import TrainConfig
from msm.transductive import embedding_matrix


@pytest.mark.parametrize("score,name", [(1, "dislike_UM"), (2, "dislike_UM"), (3, "like_UM"),
                                        (4, "like_UM"), (5, "very_like_UM")])
def test_amazon_binning(score, name):
    assert amazon_edge_type(score, "M") == name
    assert amazon_edge_type(score, "B") == name.replace("UM", "UB")


def test_load_amazon(tmp_path):
    movies = tmp_path / "movies.json"
    movies.write_text("\n".join([
        json.dumps({"reviewerID": "A", "asin": "m1", "overall": 5.0}),
        json.dumps({"reviewerID": "A", "asin": "m1", "overall": 2.0}),  # duplicate, keep max
        json.dumps({"reviewerID": "B", "asin": "m1", "overall": 3.0}),
        json.dumps({"reviewerID": "B", "asin": "m2", "overall": 7.0}),  # out of range
        '{"reviewerID": "C"}',                                           # malformed
        "not json, nor csv",
    ]) + "\n")
    books = tmp_path / "books.csv.gz"
    with gzip.open(books, "wt") as f:
        f.write("A,b1,1,1400000000\nC,b1,4\n")
    g, rep = load_amazon(str(movies), str(books))
    assert rep.records == 8 and rep.duplicates == 1 and rep.bad_score == 1 and rep.malformed == 2
    assert g.stats()["nodes"] == {"U": 3, "M": 1, "B": 1}
    u_a, m1, b1 = g.nodes.id("U:A"), g.nodes.id("M:m1"), g.nodes.id("B:b1")
    assert g.has_edge(u_a, m1, "very_like_UM") and not g.has_edge(u_a, m1, "dislike_UM")
    assert g.has_edge(u_a, b1, "dislike_UB")
    assert g.has_edge(g.nodes.id("U:C"), b1, "like_UB")
    assert g.num_edge_types == 6


def test_config_round_trip(tmp_path):
    cfg = TrainConfig(model="i", dim=32, alpha={"click": 0.5, "buy": 1.5}, beta=0.25,
                      deterministic=False, schemas=["U -click-> I -click-> U",
                                                    "I -buy-> U -buy-> I @ buy"])
    path = tmp_path / "run.conf"
    write_config(cfg, str(path))
    assert read_config(str(path)) == cfg
    assert parse_config(format_config(cfg).splitlines()) == cfg


def test_config_defaults_for_missing_keys():
    cfg = parse_config(["# only one key", "dim = 16", ""])
    assert cfg == TrainConfig(dim=16)


@pytest.mark.parametrize("lines,match", [
    (["dim = 16", "colour = red"], "2: unknown key 'colour'"),
    (["dim: 16"], "1: expected 'key = value'"),
    (["epochs = two"], "line 1: bad value 'two' for epochs"),
    (["deterministic = maybe"], "bad value"),
    (["window = 0"], "window"),
])
def test_config_errors(lines, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(lines, "run.conf")


def assert_params_close(a, b, atol):
    assert a.kind == b.kind and a.dims == b.dims
    assert set(a.tensors) == set(b.tensors)
    for k in a.tensors:
        np.testing.assert_allclose(a.tensors[k], b.tensors[k], atol=atol, rtol=0)
    np.testing.assert_allclose(a.alpha, b.alpha, atol=atol)


@pytest.mark.parametrize("kind,hidden", [("t", 0), ("i", 0), ("i", 3)])
def test_checkpoint_round_trip(tmp_path, tiny_graph, kind, hidden):
    if kind == "t":
        p = random_t_params(tiny_graph, activation="identity")
    else:
        p = random_i_params(tiny_graph, hidden=hidden)
    path = str(tmp_path / "model.bin")
    save_checkpoint(p, path, tiny_graph)
    with open(path, "rb") as f:
        assert f.read(4) == (b"MSMT" if kind == "t" else b"MSMI")
    q = load_checkpoint(path)
    assert_params_close(p, q, atol=1e-6)
    assert q.activation == p.activation
    if kind == "i":
        assert q.attr_dims == p.attr_dims and q.hidden == hidden
        np.testing.assert_allclose(q.beta, p.beta, atol=1e-7)
    # float32 storage: a second save of the loaded model is byte-identical
    save_checkpoint(q, path + "2", tiny_graph)
    assert open(path, "rb").read() == open(path + "2", "rb").read()


def test_checkpoint_header_layout(tmp_path, tiny_graph):
    p = random_t_params(tiny_graph, d=8, s=4, da=4, levels=2)
    path = str(tmp_path / "m.bin")
    save_checkpoint(p, path)
    head = struct.unpack_from("<4sI6I", open(path, "rb").read())
    assert head == (b"MSMT", 1, 10, 8, 4, 4, 2, 2)
    n_floats = sum(t.size for t in p.tensors.values()) + 2
    assert len(open(path, "rb").read()) == struct.calcsize("<4sI6I") + 4 * n_floats


def test_checkpoint_corruption(tmp_path, tiny_graph):
    p = random_t_params(tiny_graph)
    path = str(tmp_path / "m.bin")
    save_checkpoint(p, path)
    data = open(path, "rb").read()
    for bad, match in [(data[:-4], "truncated"), (data + b"\0\0\0\0", "trailing"),
                       (b"XXXX" + data[4:], "magic"), (data[:10], "header"),
                       (data[:4] + struct.pack("<I", 9) + data[8:], "version")]:
        open(path, "wb").write(bad)
        with pytest.raises(CheckpointError, match=match):
            load_checkpoint(path)


def test_registry_mismatch_detected(tmp_path, tiny_graph):
    p = random_t_params(tiny_graph)
    path = str(tmp_path / "m.bin")
    save_checkpoint(p, path, tiny_graph)
    check_registries(path, tiny_graph)
    other = random_graph(0, edge_types=("x", "z"))
    with pytest.raises(CheckpointError, match="edge types"):
        check_registries(path, other)


@pytest.mark.parametrize("binary", [False, True])
def test_export_round_trip(tmp_path, tiny_graph, binary):
    p = random_t_params(tiny_graph)
    path = str(tmp_path / ("emb.bin" if binary else "emb.txt"))
    export_embeddings(p, tiny_graph, "y", path, binary=binary)
    names, emb = read_embeddings(path)
    ref = embedding_matrix(tiny_graph, p, 1)
    np.testing.assert_allclose(emb, ref, atol=1e-6, rtol=0)
    if not binary:
        assert names == tiny_graph.nodes.names
        assert len(open(path).read().splitlines()) == tiny_graph.num_nodes
