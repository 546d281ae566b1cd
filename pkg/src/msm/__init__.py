"""Multi-semantic metapath embeddings for attributed multiplex heterogeneous graphs."""

__version__ = "0.1.0"

from .graph import HeterogeneousGraph
from .metapath import MetapathSchema, WalkCorpus, generate_walks, parse_schema
from .transductive import ModelDims, TransductiveParams
from .inductive import InductiveParams, embed_unseen
from .trainer import TrainConfig, train
from .evaluate import EvalReport, evaluate, split_edges

__all__ = [
    "HeterogeneousGraph", "MetapathSchema", "WalkCorpus", "generate_walks", "parse_schema",
    "ModelDims", "TransductiveParams", "InductiveParams", "embed_unseen", "TrainConfig", "train",
    "EvalReport", "evaluate", "split_edges",
]
