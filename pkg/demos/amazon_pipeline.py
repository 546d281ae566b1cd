"""
The Amazon reviews pipeline from the command line
=================================================

Review dumps (JSON lines with reviewerID / asin / overall, or CSV rows
user,item,rating) become a user/movie/book graph with six edge types: the
review score is binned into dislike (1-2), like (3-4) and very_like (5) for
movies and books separately.

The public dumps are large, so this walkthrough writes a small synthetic
file in the same layout.  Point --movies / --books at the real files (after
whatever k-core filtering you prefer) to run the same steps on them.
"""

import json
import os
import tempfile

import numpy as np

from msm.cli import main as msm

work = tempfile.mkdtemp(prefix="msm_amazon_")
rng = np.random.default_rng(0)

# users and items fall into two taste clusters
for kind in ("movies", "books"):
    with open(os.path.join(work, f"{kind}.json"), "w") as f:
        for u in range(120):
            w = np.where(np.arange(60) % 2 == u % 2, 6.0, 1.0)
            for i in rng.choice(60, 14, replace=False, p=w / w.sum()):
                score = rng.choice([3, 4, 5] if i % 2 == u % 2 else [1, 2, 3])
                f.write(json.dumps({"reviewerID": f"A{u}", "asin": f"{kind[0]}{i}",
                                    "overall": float(score)}) + "\n")

###############################################################################
# convert, split, train, evaluate

graph, split, model = (os.path.join(work, d) for d in ("graph", "split", "model"))
msm(["amazon", "--movies", os.path.join(work, "movies.json"),
     "--books", os.path.join(work, "books.json"), "--out", graph])
# the converter also writes default metapath schemas for the edge types it found
print(open(os.path.join(graph, "schemas.txt")).read())

msm(["split", "--graph-dir", graph, "--out", split])
msm(["train", "--graph-dir", os.path.join(split, "train"), "--schemas",
     os.path.join(graph, "schemas.txt"), "--threads", "1", "--deterministic", "--out", model])

# --reference amazon prints the reference transductive row next to ours
msm(["eval", "--checkpoint", os.path.join(model, "checkpoint.bin"),
     "--graph-dir", os.path.join(split, "train"), "--split-dir", split,
     "--reference", "amazon", "--out", os.path.join(work, "eval")])
print("artifacts in", work)
