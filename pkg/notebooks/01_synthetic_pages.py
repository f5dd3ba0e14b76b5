"""
Synthetic product pages and the extractor
=========================================

Generate a few pages, read them back through the HTML extractor and look
at what the 20-slot feature vectors say about the entities.

Run with ``python3 notebooks/01_synthetic_pages.py``.
"""

# %%
import numpy as np

from heed.core import TASKS, FEATURE_CATEGORIES
from heed.extractor import extract_record
from heed.pagegen import GenConfig, generate_page

cfg = GenConfig(seed=0)
pages = [generate_page(0, i, cfg) for i in range(20)]
html, gold = pages[0]
print(gold.page_id, gold.language, len(gold.tokens), "tokens")
print(html[:400])

# %%
# the extractor sees only the HTML; tokens and features must come back unchanged
got = extract_record(html, page_id=gold.page_id, language=gold.language, source_url=gold.source_url)
print("tokens equal:", got.tokens == gold.tokens, " features equal:", got.features == gold.features)

# %%
# entity tokens stand out on font size (slot 0) and the image flag (slot 14)
for task in TASKS:
    (span,) = gold.spans_for(task)
    words = " ".join(gold.tokens[span.start:span.end + 1])
    print(f"{task.value:>6}: {words[:60]!r}  font={gold.features[span.start][0]}  image={gold.features[span.start][14]}")

# %%
feats = np.array([f for _, g in pages for f in g.features])
for name, idx in FEATURE_CATEGORIES.items():
    block = feats[:, list(idx)]
    print(f"{name:>24}: slots {idx[0]}-{idx[-1]}, distinct rows {len(np.unique(block, axis=0))}")

# %%
lengths = [len(g.tokens) for _, g in pages]
print("page length mean %.0f, min %d, max %d" % (np.mean(lengths), min(lengths), max(lengths)))
