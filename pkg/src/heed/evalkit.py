"""Span decoding, scoring, router profiles, representation export, ablations.

Scores are percentages. A predicted span is a true positive only if both
endpoints equal a gold span of the same task; ``granularity="token"``
scores inside-tokens instead.
"""
from __future__ import annotations

import csv
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import autograd as ag
from .core import FEATURE_CATEGORIES, TASKS, PageRecord, Task
from .model import MODALITY_LABELS, MoEEF, ModelConfig, chunk_bounds, gold_matrix, param_count

log = logging.getLogger(__name__)

Span = tuple[int, int]
GRANULARITIES = ("span", "token")


# -- decoding ----------------------------------------------------------------

def mask_to_spans(mask) -> list[Span]:
    """Maximal runs of ones as inclusive ``(start, end)`` pairs."""
    m = np.asarray(mask, dtype=np.int8).reshape(-1)
    if m.size == 0:
        return []
    edges = np.diff(np.concatenate([[0], m, [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    return [(int(s), int(e)) for s, e in zip(starts, ends)]


def spans_to_mask(spans: Iterable[Span], n: int) -> np.ndarray:
    mask = np.zeros(n, dtype=np.int8)
    for s, e in spans:
        mask[max(s, 0):min(e, n - 1) + 1] = 1
    return mask


def decode_spans(p_final) -> list[Span]:
    """Argmax per token (a 0.5/0.5 tie goes to class 0), then runs of class 1."""
    p = np.asarray(p_final)
    if p.ndim != 2 or p.shape[1] != 2:
        raise ValueError(f"decode_spans expects (n, 2) probabilities, got {p.shape}")
    return mask_to_spans(p[:, 1] > p[:, 0])


# -- scoring -----------------------------------------------------------------

def f1_from_pr(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def precision(self) -> float:
        n = self.tp + self.fp
        return 100.0 * self.tp / n if n else 0.0

    @property
    def recall(self) -> float:
        n = self.tp + self.fn
        return 100.0 * self.tp / n if n else 0.0

    @property
    def f1(self) -> float:
        return f1_from_pr(self.precision, self.recall)

    @property
    def undefined(self) -> list[str]:
        """Which of P/R had a zero denominator (reported as 0)."""
        out = []
        if self.tp + self.fp == 0:
            out.append("precision")
        if self.tp + self.fn == 0:
            out.append("recall")
        return out

    def to_dict(self) -> dict:
        return {"P": self.precision, "R": self.recall, "F1": self.f1,
                "TP": self.tp, "FP": self.fp, "FN": self.fn, "undefined": self.undefined}


def score(pred: Iterable[Span], gold: Iterable[Span], granularity: str = "span") -> Counts:
    """Match ``pred`` against ``gold`` spans of one task on one page."""
    if granularity == "span":
        p, g = set(map(tuple, pred)), set(map(tuple, gold))
    elif granularity == "token":
        p = {i for s, e in pred for i in range(s, e + 1)}
        g = {i for s, e in gold for i in range(s, e + 1)}
    else:
        raise ValueError(f"granularity must be one of {GRANULARITIES}")
    tp = len(p & g)
    return Counts(tp, len(p) - tp, len(g) - tp)


def mean_abs_pr_diff(pairs: Iterable[tuple[float, float]]) -> float:
    """Mean of ``|P - R|`` over (precision, recall) pairs."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("mean_abs_pr_diff needs at least one (P, R) pair")
    return float(np.mean([abs(p - r) for p, r in pairs]))


@dataclass
class EvalReport:
    cells: dict[tuple[Task, str], Counts] = field(default_factory=dict)
    granularity: str = "span"
    loss: dict[str, float] | None = None

    def add(self, task, language: str, counts: Counts):
        key = (Task(task), language)
        self.cells[key] = self.cells.get(key, Counts()) + counts

    def counts(self, task=None, language: str | None = None) -> Counts:
        total = Counts()
        for (t, lang), c in self.cells.items():
            if (task is None or t == Task(task)) and (language is None or lang == language):
                total = total + c
        return total

    @property
    def overall(self) -> Counts:
        """Micro over every task and language."""
        return self.counts()

    @property
    def tasks(self) -> list[Task]:
        present = {t for t, _ in self.cells}
        return [t for t in TASKS if t in present]

    @property
    def languages(self) -> list[str]:
        return sorted({lang for _, lang in self.cells})

    def rows(self) -> list[dict]:
        """Flat rows: each (task, language), per-task totals and overall."""
        out = []
        for (t, lang) in sorted(self.cells, key=lambda k: (TASKS.index(k[0]), k[1])):
            out.append({"task": t.value, "language": lang, **self.cells[(t, lang)].to_dict()})
        for t in self.tasks:
            out.append({"task": t.value, "language": "all", **self.counts(t).to_dict()})
        out.append({"task": "overall", "language": "all", **self.overall.to_dict()})
        return out

    def to_dict(self) -> dict:
        d = {"granularity": self.granularity, "overall": self.overall.to_dict(),
             "tasks": {t.value: self.counts(t).to_dict() for t in self.tasks},
             "cells": self.rows()}
        if self.loss is not None:
            d["loss"] = self.loss
        return d

    def write(self, path: str | Path):
        """``path`` gets the JSON report; a sibling ``.csv`` gets the rows."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        write_csv(self.rows(), path.with_suffix(".csv"),
                  ["task", "language", "P", "R", "F1", "TP", "FP", "FN"])


def write_csv(rows: Sequence[dict], path: str | Path, columns: Sequence[str]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})


# -- model evaluation --------------------------------------------------------

def _chunk_inputs(model: MoEEF, record: PageRecord, lo: int, hi: int):
    ids = model.vocab.encode(record.tokens[lo:hi]) if model.vocab is not None else np.zeros(hi - lo, np.int64)
    return ids, np.asarray(record.features[lo:hi], dtype=np.int64)


def page_probabilities(model: MoEEF, record: PageRecord, max_len: int | None = None,
                       class_weights=None) -> tuple[np.ndarray, np.ndarray]:
    """Page-level ``P_final`` ``(tasks, n, 2)`` and per-task losses summed over chunks.

    Chunks are predicted independently and their outputs concatenated, so a
    span cut by a chunk boundary decodes as one span again.
    """
    max_len = max_len or model.config.max_len
    tasks = model.config.tasks
    parts, loss = [], np.zeros(len(tasks))
    with ag.no_grad():
        for lo, hi in chunk_bounds(len(record.tokens), max_len):
            fwd = model.forward(*_chunk_inputs(model, record, lo, hi))
            gold = gold_matrix(record.spans, hi - lo, tasks, offset=lo)
            loss += model.losses(fwd, gold, class_weights=class_weights).task.data
            parts.append(fwd.p_final.data)
    return np.concatenate(parts, axis=1), loss


def predict_record(model: MoEEF, record: PageRecord, max_len: int | None = None) -> dict[Task, list[Span]]:
    probs, _ = page_probabilities(model, record, max_len)
    return {t: decode_spans(probs[q]) for q, t in enumerate(model.config.tasks)}


def evaluate(model: MoEEF, records: Sequence[PageRecord], max_len: int | None = None,
             granularity: str = "span", class_weights=None) -> EvalReport:
    """Score ``model`` on ``records``; ``report.loss`` holds mean chunk losses."""
    report = EvalReport(granularity=granularity)
    tasks = model.config.tasks
    loss_sum, n_chunks = np.zeros(len(tasks)), 0
    for rec in records:
        probs, loss = page_probabilities(model, rec, max_len, class_weights)
        loss_sum += loss
        n_chunks += len(chunk_bounds(len(rec.tokens), max_len or model.config.max_len))
        for q, t in enumerate(tasks):
            gold = [(s.start, s.end) for s in rec.spans_for(t)]
            report.add(t, rec.language, score(decode_spans(probs[q]), gold, granularity))
    if n_chunks:
        mean = loss_sum / n_chunks
        report.loss = {t.value: float(v) for t, v in zip(tasks, mean)}
        report.loss["total"] = float(mean.sum())
    return report


# -- router profile ----------------------------------------------------------

PROFILE_MODALITY_ORDER = ("m", "t", "v")


def expert_labels(config: ModelConfig, order: Sequence[str] = PROFILE_MODALITY_ORDER) -> list[str]:
    return [f"{MODALITY_LABELS[o]}{l + 1}" for o in order if o in config.modalities
            for l in range(config.n_experts)]


def _profile_permutation(config: ModelConfig) -> np.ndarray:
    L = config.n_experts
    return np.array([config.modalities.index(o) * L + l for o in PROFILE_MODALITY_ORDER
                     if o in config.modalities for l in range(L)])


def router_profile(model: MoEEF, records: Sequence[PageRecord], task,
                   languages: Sequence[str] | None = None, max_len: int | None = None) -> dict[str, np.ndarray]:
    """Mean routing distribution per language, experts ordered M, T, V.

    Each page contributes the mean of its per-token routing weights; a
    language's profile is the mean over its pages.
    """
    q = model.config.tasks.index(Task(task))
    max_len = max_len or model.config.max_len
    by_lang: dict[str, list[np.ndarray]] = defaultdict(list)
    with ag.no_grad():
        for rec in records:
            alphas = []
            for lo, hi in chunk_bounds(len(rec.tokens), max_len):
                alphas.append(model.forward(*_chunk_inputs(model, rec, lo, hi)).alpha.data[q])
            by_lang[rec.language].append(np.concatenate(alphas).mean(axis=0))
    perm = _profile_permutation(model.config)
    out = {}
    for lang in (languages if languages is not None else sorted(by_lang)):
        if not by_lang.get(lang):
            log.warning("router_profile: no pages for language %r, skipped", lang)
            continue
        out[lang] = np.mean(by_lang[lang], axis=0)[perm]
    return out


def profile_rows(profile: dict[str, np.ndarray], config: ModelConfig) -> list[dict]:
    labels = expert_labels(config)
    return [{"language": lang, "expert": lab, "alpha": float(v)}
            for lang, vec in profile.items() for lab, v in zip(labels, vec)]


# -- representation export ---------------------------------------------------

def pca_2d(X) -> np.ndarray:
    """Project rows of ``X`` onto their first two principal components.

    Signs are fixed so the largest-magnitude loading of each component is
    positive; missing or zero-variance components come out as zeros.
    """
    X = np.asarray(X, dtype=np.float64)
    out = np.zeros((X.shape[0], 2))
    if X.shape[0] == 0:
        return out
    Xc = X - X.mean(axis=0)
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    tol = s.max() * max(X.shape) * np.finfo(float).eps if s.size else 0.0
    for k in range(min(2, len(s))):
        if s[k] <= tol or s[k] == 0:
            continue
        v = vt[k]
        v = v * np.sign(v[np.argmax(np.abs(v))])
        out[:, k] = Xc @ v
    return out


@dataclass
class ReprExport:
    features: np.ndarray     # (rows, d)
    modality: np.ndarray     # (rows,) str
    expert: np.ndarray       # (rows,) int, 0-based
    label: np.ndarray        # (rows,) gold class of the token
    page_id: np.ndarray
    position: np.ndarray
    pca: np.ndarray          # (rows, 2)

    def __len__(self):
        return len(self.features)

    def save(self, out_dir: str | Path):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        np.savez_compressed(out_dir / "representations.npz", features=self.features, modality=self.modality,
                            expert=self.expert, label=self.label, page_id=self.page_id,
                            position=self.position, pca=self.pca)
        rows = [{"modality": MODALITY_LABELS[m], "expert": int(e) + 1, "page_id": p, "position": int(i),
                 "label": int(y), "pc1": float(a), "pc2": float(b)}
                for m, e, p, i, y, (a, b) in zip(self.modality, self.expert, self.page_id,
                                                 self.position, self.label, self.pca)]
        write_csv(rows, out_dir / "pca.csv", ["modality", "expert", "page_id", "position", "label", "pc1", "pc2"])


def export_representations(model: MoEEF, records: Sequence[PageRecord], task,
                           max_len: int | None = None) -> ReprExport:
    """Every expert's dedicated representation of every token, plus a joint 2-D PCA."""
    c = model.config
    q = c.tasks.index(Task(task))
    max_len = max_len or c.max_len
    feats, mods, experts, labels, pages, positions = [], [], [], [], [], []
    with ag.no_grad():
        for rec in records:
            gold = gold_matrix(rec.spans, len(rec.tokens), c.tasks)[q, :, 1]
            for lo, hi in chunk_bounds(len(rec.tokens), max_len):
                proj = model.forward(*_chunk_inputs(model, rec, lo, hi)).projected.data[q]  # (Mo, L, n, d)
                n = hi - lo
                for o, mod in enumerate(c.modalities):
                    for l in range(c.n_experts):
                        feats.append(proj[o, l])
                        mods += [mod] * n
                        experts += [l] * n
                        labels.append(gold[lo:hi])
                        pages += [rec.page_id] * n
                        positions.append(np.arange(lo, hi))
    if feats:
        X = np.concatenate(feats).astype(np.float64)
        label, pos = np.concatenate(labels), np.concatenate(positions)
    else:
        X, label, pos = np.zeros((0, c.d_model)), np.zeros(0, np.int64), np.zeros(0, np.int64)
    return ReprExport(X, np.array(mods, dtype=str), np.array(experts, dtype=np.int64), label,
                      np.array(pages, dtype=str), pos, pca_2d(X))


# -- ablations ---------------------------------------------------------------

ABLATION_AXES = {
    "features": tuple(FEATURE_CATEGORIES),
    "modality": ("t", "m", "v"),
    "experts": ("1", "3", "6", "9"),
}


def _norm_category(name: str) -> str:
    key = name.strip().lower().replace("&", "-").replace(" ", "-").replace("_", "-")
    while "--" in key:
        key = key.replace("--", "-")
    return key


@dataclass(frozen=True)
class AblationSpec:
    axis: str
    name: str

    def __post_init__(self):
        if self.axis not in ABLATION_AXES:
            raise ValueError(f"unknown ablation axis {self.axis!r}; valid axes: "
                             + "; ".join(f"{a} ({', '.join(v)})" for a, v in ABLATION_AXES.items()))
        name = _norm_category(str(self.name)) if self.axis == "features" else str(self.name).strip().lower()
        if name not in ABLATION_AXES[self.axis]:
            raise ValueError(f"unknown {self.axis} ablation {self.name!r}; valid: {', '.join(ABLATION_AXES[self.axis])}")
        object.__setattr__(self, "name", name)

    @property
    def label(self) -> str:
        return f"{self.axis}:{self.name}"


def ablation_config(spec: AblationSpec, config: ModelConfig) -> ModelConfig:
    if spec.axis == "features":
        dropped = set(config.dropped_features) | set(FEATURE_CATEGORIES[spec.name])
        return replace(config, dropped_features=tuple(sorted(dropped)))
    if spec.axis == "modality":
        kept = tuple(m for m in config.modalities if m != spec.name)
        return replace(config, modalities=kept)
    return replace(config, n_experts=int(spec.name))


@dataclass
class AblationResult:
    spec: AblationSpec
    baseline: EvalReport
    variant: EvalReport
    baseline_params: int
    variant_params: int

    def rows(self) -> list[dict]:
        out = []
        for t in [*self.baseline.tasks, None]:
            b = self.baseline.counts(t)
            v = self.variant.counts(t)
            out.append({"ablation": self.spec.label, "task": t.value if t else "overall",
                        "P": v.precision, "R": v.recall, "F1": v.f1,
                        "dP": v.precision - b.precision, "dR": v.recall - b.recall, "dF1": v.f1 - b.f1})
        return out

    def to_dict(self) -> dict:
        return {"ablation": self.spec.label, "baseline_params": self.baseline_params,
                "variant_params": self.variant_params, "baseline": self.baseline.to_dict(),
                "variant": self.variant.to_dict(), "table": self.rows()}


def run_ablation(spec: AblationSpec, train_set, dev_set, test_set, model_config: ModelConfig,
                 train_config, baseline: EvalReport | None = None) -> AblationResult:
    """Retrain with the ablated config under the same seed and compare on ``test_set``."""
    from .trainer import train  # trainer depends on this module

    run = train(train_set, dev_set, ablation_config(spec, model_config), train_config)
    variant = evaluate(run.model, test_set, train_config.max_len)
    if baseline is None:
        base_run = train(train_set, dev_set, model_config, train_config)
        baseline = evaluate(base_run.model, test_set, train_config.max_len)
    vocab_size = run.model.config.text_vocab_size
    base_params = param_count(replace(model_config, text_vocab_size=vocab_size))
    return AblationResult(spec, baseline, variant, base_params, run.model.n_parameters())
