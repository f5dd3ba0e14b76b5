import json
from pathlib import Path

import numpy as np
import pytest

from heed.core import EntitySpan, PageRecord
from heed.model import ModelConfig
from heed.pagegen import GenConfig, generate_page

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def reference_scores():
    return json.loads((DATA / "reference_scores.json").read_text())


@pytest.fixture(scope="session")
def pages():
    """A dozen generated (html, gold) pairs shared across tests."""
    cfg = GenConfig(seed=3)
    return [generate_page(3, i, cfg) for i in range(12)]


@pytest.fixture(scope="session")
def records(pages):
    return [gold for _, gold in pages]


@pytest.fixture
def tiny_config():
    return ModelConfig(d_model=8, n_layers=1, n_heads=2, ff_dim=16, max_len=16, n_experts=2,
                       text_vocab_size=11)


def random_inputs(config, n, seed=0):
    rng = np.random.default_rng(seed)
    ids = rng.integers(0, config.text_vocab_size, n)
    feats = np.stack([rng.integers(0, s, n) for s in config.feature_vocab_sizes], axis=1)
    return ids, feats


def small_record(n=5, page_id="p", language="en", spans=()):
    feats = [[16, 4, 0, 0, 0, 255] + [0] * 8 + [0, 0, 1, 0, 0, 1] for _ in range(n)]
    return PageRecord(page_id, language, [f"t{i}" for i in range(n)], feats,
                      [s if isinstance(s, EntitySpan) else EntitySpan(*s) for s in spans])


# acceptance criteria report: one line per criterion at the end of the run
ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, name: str, passed: bool, detail: str = "") -> bool:
    ACCEPTANCE[number] = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
    print(ACCEPTANCE[number])
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
