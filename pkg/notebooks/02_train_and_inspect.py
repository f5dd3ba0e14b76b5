"""
Training a small tagger and looking inside it
=============================================

Train the mixture-of-experts tagger on a handful of generated pages, then
check per-task scores, the router's mean weights per language and a 2-D
projection of the expert representations.

Takes a couple of minutes on one core. Run with
``python3 notebooks/02_train_and_inspect.py``.
"""

# %%
import logging

import numpy as np

from heed.evalkit import evaluate, expert_labels, export_representations, router_profile
from heed.model import ModelConfig
from heed.pagegen import GenConfig, generate_page
from heed.trainer import TrainConfig, train

logging.basicConfig(level=logging.INFO, format="%(message)s")
records = [generate_page(7, i, GenConfig(seed=7))[1] for i in range(90)]
train_set, dev_set, test_set = records[:70], records[70:80], records[80:]

# %%
result = train(train_set, dev_set, ModelConfig(d_model=32, n_layers=1, n_experts=2),
               TrainConfig(lr=1e-3, epochs=12, batch_size=8, seed=0))
print("best epoch", result.best_epoch, "dev F1 %.2f" % result.best_dev_f1)

# %%
report = evaluate(result.model, test_set)
for row in report.rows():
    if row["language"] == "all":
        print(f"{row['task']:>8}  P {row['P']:6.2f}  R {row['R']:6.2f}  F1 {row['F1']:6.2f}")

# %%
# mean routing weight per expert, experts listed M, T, V
labels = expert_labels(result.model.config)
for lang, vec in router_profile(result.model, test_set, "price").items():
    print(lang, " ".join(f"{l}={v:.2f}" for l, v in zip(labels, vec)))

# %%
reprs = export_representations(result.model, test_set[:2], "price")
for mod in np.unique(reprs.modality):
    pts = reprs.pca[reprs.modality == mod]
    print(f"modality {mod}: PCA centroid ({pts[:, 0].mean():+.2f}, {pts[:, 1].mean():+.2f})")
