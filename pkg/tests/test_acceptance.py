"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is repeated in the terminal summary.
The learnability run (criterion 8) trains on 800 generated pages and takes
several minutes on one core.
"""
import itertools
import time
from dataclasses import replace

import numpy as np
import pytest

from heed import autograd as ag
from heed.core import EntitySpan, FEATURE_CATEGORIES, record_to_json
from heed.evalkit import (
    AblationSpec, ablation_config, decode_spans, evaluate, f1_from_pr, mean_abs_pr_diff,
)
from heed.extractor import extract_record
from heed.llm_baseline import OracleClient, StaticClient, prompt_chunks, run_baseline
from heed.model import MoEEF, ModelConfig, gold_matrix, ortho_loss, param_count, soft_vote
from heed.pagegen import GenConfig, generate_page
from heed.trainer import TrainConfig, train

from conftest import random_inputs, record_criterion

SYSTEMS = ("base_t", "base_tv", "moeef")


def cells(reference, system):
    return [c for c in reference["cells"] if c["system"] == system]


def test_criterion_01_mean_abs_pr_diff(reference_scores):
    start = time.perf_counter()
    got = {s: mean_abs_pr_diff((c["P"], c["R"]) for c in cells(reference_scores, s)) for s in SYSTEMS}
    elapsed = time.perf_counter() - start
    want = reference_scores["mean_abs_pr_diff"]
    ok = all(abs(got[s] - want[s]) <= 0.01 for s in SYSTEMS) and elapsed < 1.0
    detail = ", ".join(f"{s} {got[s]:.4f} vs {want[s]}" for s in SYSTEMS)
    assert record_criterion(1, "mean |P-R| matches reference values", ok, detail)


def test_criterion_02_f1_consistency(reference_scores):
    all_cells = reference_scores["cells"]
    worst = max(abs(f1_from_pr(c["P"], c["R"]) - c["F1"]) for c in all_cells)
    ok = len(all_cells) >= 5 and worst <= 0.01
    assert record_criterion(2, "F1 recomputed from reference P/R", ok, f"{len(all_cells)} cells, max dev {worst:.4f}")


def test_criterion_03_gradient_check():
    cfg = ModelConfig(d_model=8, n_layers=1, n_heads=2, ff_dim=16, max_len=6, n_experts=2, text_vocab_size=11)
    model = MoEEF(cfg, seed=1, dtype=np.float64)
    ids, feats = random_inputs(cfg, 6, seed=2)
    gold = gold_matrix([EntitySpan("price", 0, 1), EntitySpan("name", 2, 3), EntitySpan("image", 5, 5)], 6)
    start = time.perf_counter()
    worst = {}
    for w in (0.0, 0.5):
        rep = ag.finite_diff_check(lambda: model.losses(model.forward(ids, feats), gold, ortho_weight=w).total,
                                   model.params, max_checks=40)
        worst[w] = rep.worst
    elapsed = time.perf_counter() - start
    errs = {w: v[1] for w, v in worst.items()}
    ok = max(errs.values()) <= 1e-4 and elapsed < 60
    detail = f"max rel err {errs[0.0]:.1e} plain, {errs[0.5]:.1e} with ortho, {elapsed:.1f}s"
    assert record_criterion(3, "finite differences on the full model", ok, detail)


def test_criterion_04_moe_algebra():
    cfg = ModelConfig(d_model=8, n_layers=1, n_heads=2, ff_dim=16, max_len=16, n_experts=2, text_vocab_size=11)
    rng = np.random.default_rng(0)
    worst_alpha = worst_final = 0.0
    exact = True
    with ag.no_grad():
        for i in range(1000):
            if i % 100 == 0:
                model = MoEEF(cfg, seed=i, dtype=np.float64)
            ids, feats = random_inputs(cfg, int(rng.integers(1, 17)), seed=i)
            fwd = model.forward(ids, feats)
            worst_alpha = max(worst_alpha, np.abs(fwd.alpha.data.sum(-1) - 1).max())
            worst_final = max(worst_final, np.abs(fwd.p_final.data.sum(-1) - 1).max())
            q, k = int(rng.integers(3)), int(rng.integers(6))
            one_hot = np.zeros_like(fwd.alpha.data[q])
            one_hot[:, k] = 1.0
            voted = soft_vote(ag.Tensor(one_hot), ag.Tensor(fwd.expert_probs.data[q])).data
            exact &= np.array_equal(voted, fwd.expert_probs.data[q, k])
    ok = worst_alpha <= 1e-6 and worst_final <= 1e-6 and exact
    detail = f"alpha dev {worst_alpha:.1e}, P_final dev {worst_final:.1e}, one-hot exact {exact}"
    assert record_criterion(4, "routing and voting are distributions", ok, detail)


def test_criterion_05_ortho_closed_forms():
    rng = np.random.default_rng(0)
    q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    orthonormal = np.stack([np.stack([q[:, l] for _ in range(5)]) for l in range(3)])   # (3, 5, 6)
    v = rng.normal(size=(5, 6))
    v /= np.linalg.norm(v, axis=-1, keepdims=True)
    identical = np.stack([v, v])
    zero = float(ortho_loss(ag.Tensor(orthonormal)).data)
    root2 = float(ortho_loss(ag.Tensor(identical)).data)
    ok = abs(zero) <= 1e-6 and abs(root2 - np.sqrt(2)) <= 1e-6
    assert record_criterion(5, "orthogonality loss closed forms", ok, f"{zero:.1e} and {root2:.8f}")


def _without_spans(rec):
    return record_to_json(rec.__class__(rec.page_id, rec.language, rec.tokens, rec.features, (), rec.source_url))


def test_criterion_06_extractor_roundtrip():
    start = time.perf_counter()
    mismatches = []
    for seed in range(1000):
        html, gold = generate_page(seed, 0, GenConfig(seed=seed))
        got = extract_record(html, page_id=gold.page_id, language=gold.language, source_url=gold.source_url)
        if _without_spans(got) != _without_spans(gold):
            mismatches.append(seed)
    elapsed = time.perf_counter() - start
    ok = not mismatches and elapsed < 120
    detail = f"{len(mismatches)} mismatches, {elapsed:.1f}s"
    assert record_criterion(6, "extractor reproduces generator records for 1000 seeds", ok, detail)


def test_criterion_07_decoder_oracle():
    def runs(bits):
        out, start = [], None
        for i, b in enumerate(list(bits) + [0]):
            if b and start is None:
                start = i
            elif not b and start is not None:
                out.append((start, i - 1))
                start = None
        return out

    bad = 0
    for bits in itertools.product((0, 1), repeat=12):
        p = np.array([[1 - b, b] for b in bits], dtype=float)
        bad += decode_spans(p) != runs(bits)
    assert record_criterion(7, "span decoder matches exhaustive run finding", bad == 0, f"{bad}/4096 disagree")


@pytest.fixture(scope="module")
def synthetic_1000():
    return [generate_page(11, i, GenConfig(seed=11))[1] for i in range(1000)]


@pytest.mark.slow
def test_criterion_08_learnability(synthetic_1000):
    mc = ModelConfig(d_model=64, n_layers=2, n_experts=2)
    start = time.perf_counter()
    small = train(synthetic_1000[:64], None, mc,
                  TrainConfig(lr=1e-3, batch_size=8, epochs=200, seed=0, target_train_f1=100.0))
    small_f1 = evaluate(small.model, synthetic_1000[:64]).overall.f1
    big = train(synthetic_1000[:800], synthetic_1000[800:900], mc, TrainConfig(lr=1e-3, batch_size=8, epochs=2, seed=0))
    test_f1 = evaluate(big.model, synthetic_1000[900:]).overall.f1
    elapsed = time.perf_counter() - start
    ok = small_f1 == 100.0 and test_f1 >= 90.0 and elapsed < 20 * 60
    detail = (f"64 pages: train F1 {small_f1:.2f} after {small.epochs_run} epochs; "
              f"800 pages: test F1 {test_f1:.2f}; {elapsed / 60:.1f} min")
    assert record_criterion(8, "tiny model learns the synthetic task", ok, detail)


def test_criterion_09_ablation_plumbing():
    base = ModelConfig(n_experts=2, text_vocab_size=30)
    font = ablation_config(AblationSpec("features", "font-style"), base)
    a, b = MoEEF(base, seed=0), MoEEF(font, seed=0)
    ids, feats = random_inputs(base, 12, seed=1)
    feats[:, :6] = np.maximum(feats[:, :6], 1)          # make sure the dropped slots are non-zero
    zeroed = feats.copy()
    zeroed[:, :6] = 0
    drops_exact = np.array_equal(b.embed(ids, feats)[1].data, a.embed(ids, zeroed)[1].data)
    keeps_rest = font.dropped_features == FEATURE_CATEGORIES["font-style"] == (0, 1, 2, 3, 4, 5)
    widths = []
    for mod in "tmv":
        cfg = ablation_config(AblationSpec("modality", mod), base)
        widths.append(MoEEF(cfg).params["router.w2"].shape[-1] == 2 * base.n_experts)
    counts = []
    for L in ("1", "3", "6", "9"):
        cfg = ablation_config(AblationSpec("experts", L), base)
        counts.append(MoEEF(cfg).n_parameters() == param_count(cfg))
    ok = drops_exact and keeps_rest and all(widths) and all(counts)
    detail = f"font drop exact {drops_exact}, router widths {all(widths)}, param counts {all(counts)}"
    assert record_criterion(9, "ablation plumbing", ok, detail)


def test_criterion_10_determinism(synthetic_1000, tmp_path):
    mc = ModelConfig(d_model=16, n_layers=1, n_heads=2, ff_dim=32, n_experts=2)
    tc = TrainConfig(lr=1e-3, epochs=2, batch_size=4, seed=3)
    train(synthetic_1000[:8], synthetic_1000[8:10], mc, tc, out_dir=tmp_path / "a")
    train(synthetic_1000[:8], synthetic_1000[8:10], mc, tc, out_dir=tmp_path / "b")
    a = (tmp_path / "a" / "metrics.csv").read_bytes()
    b = (tmp_path / "b" / "metrics.csv").read_bytes()
    assert record_criterion(10, "identical seeds give identical metrics logs", a == b, f"{len(a)} bytes")


def test_criterion_11_llm_mocks(records, tmp_path):
    recs = records[:4]
    oracle = run_baseline(recs, OracleClient.from_records(recs), transcript_path=tmp_path / "o.jsonl")
    empty = run_baseline(recs, StaticClient("[]"), transcript_path=tmp_path / "e.jsonl")
    expected = sum(len(prompt_chunks(r, False)) for r in recs) * 3
    complete = all(len((tmp_path / f).read_text().splitlines()) == expected for f in ("o.jsonl", "e.jsonl"))
    complete &= not oracle.incomplete and not empty.incomplete
    o = oracle.report.overall
    ok = (o.precision, o.recall, o.f1) == (100.0, 100.0, 100.0) and empty.report.overall.recall == 0.0 and complete
    detail = f"oracle P/R/F1 {o.precision:.0f}/{o.recall:.0f}/{o.f1:.0f}, empty R {empty.report.overall.recall:.0f}"
    assert record_criterion(11, "LLM baseline with mock clients", ok, detail)
