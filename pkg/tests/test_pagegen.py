import json

import numpy as np
import pytest

from heed.core import TASKS, Task, read_records, record_to_json, validate_record
from heed.extractor import extract_record, parse_html
from heed.pagegen import GenConfig, format_price, generate_corpus, generate_page, LEXICONS, split_sizes


def strip_spans(rec):
    return record_to_json(rec.__class__(rec.page_id, rec.language, rec.tokens, rec.features, (), rec.source_url))


def test_deterministic():
    cfg = GenConfig(seed=5)
    assert generate_page(5, 3, cfg) == generate_page(5, 3, cfg)
    assert generate_page(5, 3, cfg)[0] != generate_page(5, 4, cfg)[0]


def test_roundtrip_matches_extractor(pages):
    for html, gold in pages:
        got = extract_record(html, page_id=gold.page_id, language=gold.language, source_url=gold.source_url)
        assert strip_spans(got) == strip_spans(gold)


def test_gold_has_every_entity(records):
    for rec in records:
        assert validate_record(rec) == []
        for t in TASKS:
            assert len(rec.spans_for(t)) == 1
        (img,) = rec.spans_for(Task.IMAGE)
        assert img.start == img.end and rec.features[img.start][14] == 1
        assert "/main/" in rec.tokens[img.start]


def test_price_is_the_accented_large_one(records):
    for rec in records:
        (price,) = rec.spans_for(Task.PRICE)
        f = rec.features[price.start]
        assert f[0] >= 22
        assert any(ch.isdigit() for ch in rec.entity_text(price))


def test_decoy_prices_exist_and_are_unlabeled(records):
    # related items always repeat the currency format with body styling
    for rec in records:
        (price,) = rec.spans_for(Task.PRICE)
        smaller = [i for i, f in enumerate(rec.features) if f[0] == 14 and any(c.isdigit() for c in rec.tokens[i])]
        assert smaller and price.start not in smaller


def test_bias_one_puts_entities_early():
    cfg = GenConfig(seed=1, entity_position_bias=1.0)
    for i in range(15):
        _, gold = generate_page(1, i, cfg)
        assert all(s.start < 200 for s in gold.spans)


def test_bias_zero_puts_entities_late():
    cfg = GenConfig(seed=1, entity_position_bias=0.0)
    for i in range(5):
        _, gold = generate_page(1, i, cfg)
        assert all(s.start >= 200 for s in gold.spans)


def test_length_profile():
    cfg = GenConfig(seed=2)
    lengths = [len(generate_page(2, i, cfg)[1].tokens) for i in range(60)]
    assert min(lengths) >= 400 and max(lengths) <= 1000
    assert abs(np.mean(lengths) - 750) < 75


def test_html_parses_cleanly(pages):
    html, _ = pages[0]
    assert parse_html(html).find_all("html")


@pytest.mark.parametrize("lang, value, text", [
    ("en", 1234.5, "$1,234.50"),
    ("de", 1234.5, "1.234,50 €"),
    ("fr", 1234.5, "1234,50 €"),
])
def test_price_formats(lang, value, text):
    assert format_price(value, LEXICONS[lang]) == text


def test_config_validation():
    with pytest.raises(ValueError):
        GenConfig(language_mix={"en": 0.5})
    with pytest.raises(ValueError):
        GenConfig(entity_position_bias=1.5)
    with pytest.raises(ValueError):
        GenConfig(language_mix={"xx": 1.0})


def test_split_sizes():
    assert split_sizes(10) == (8, 1, 1)
    assert split_sizes(0) == (0, 0, 0)
    assert sum(split_sizes(1003)) == 1003


def test_corpus(tmp_path):
    cfg = GenConfig(seed=9, n_pages=10)
    m1 = generate_corpus(cfg, tmp_path / "a")
    m2 = generate_corpus(cfg, tmp_path / "b")
    assert m1["hash"] == m2["hash"]
    assert m1["counts"] == {"train": 8, "dev": 1, "test": 1}
    ids = [set(m1["splits"][s]) for s in ("train", "dev", "test")]
    assert not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])
    assert len(read_records(tmp_path / "a" / "train.jsonl")) == 8
    assert len(list((tmp_path / "a" / "html").glob("*.html"))) == 10
    saved = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert saved["hash"] == m1["hash"]


def test_empty_corpus_writes_nothing(tmp_path):
    m = generate_corpus(GenConfig(seed=1, n_pages=0), tmp_path / "e")
    assert m["counts"] == {"train": 0, "dev": 0, "test": 0}
    assert not (tmp_path / "e").exists()
