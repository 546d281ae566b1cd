"""
Embedding nodes that were never seen in training
================================================

The inductive model builds every embedding from node attributes, so a node
that arrives after training can be embedded from its attribute vector plus
whatever edges it already has.  Here 50 nodes lose all their edges before
training and come back afterwards.
"""

import numpy as np

from msm.evaluate import cosine, holdout_nodes, unseen_node_auc
from msm.inductive import embed_unseen
from msm.synthgen import generate, inductive_preset
from msm.trainer import TrainConfig, train
from msm.transductive import embedding_matrix

spec = inductive_preset(seed=0)
sg = generate(spec)
g = sg.graph
print("graph:", g.stats())

held, reduced = holdout_nodes(g, 50, seed=0)
print("held out:", held[:10], "...")

result = train(reduced, spec.schemas(), TrainConfig(model="i", seed=0))
params = result.params

###############################################################################
# Link ranking for the returning nodes
#
# For each edge type r a held-out node is embedded without its r-edges, and
# its true r-links must outrank sampled non-links.

print("unseen-node ROC-AUC: %.3f" % unseen_node_auc(g, reduced, params, held, seed=0))

###############################################################################
# Which community does a returning node look like?

hs = set(held.tolist())
others = np.array([v for v in range(g.num_nodes) if v not in hs])
emb = embedding_matrix(reduced, params, 0)
hits = 0
for u in held.tolist():
    given = [(w, r) for r in range(g.num_edge_types) for w in g.neighbors(u, r) if w not in hs]
    v = embed_unseen(reduced, params, g.node_type(u), g.attributes[u], given, 0)
    sim = cosine(np.broadcast_to(v, (others.size, v.size)), emb[others])
    per_comm = [sim[sg.labels[others] == c].mean() for c in range(spec.communities)]
    hits += int(np.argmax(per_comm)) == sg.labels[u]
print(f"closest community is the true one for {hits} of {held.size} held-out nodes")
