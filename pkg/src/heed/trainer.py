"""Multi-task training: chunking, AdamW, dev-based checkpoint selection."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from .core import PageRecord, Task
from .evalkit import EvalReport, evaluate, write_csv
from .model import MoEEF, ModelConfig, Vocab, chunk_bounds, gold_matrix, save_checkpoint

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-4
    weight_decay: float = 0.01
    epochs: int = 5
    batch_size: int = 8          # chunks per optimizer step
    seed: int = 0
    max_len: int = 512
    ortho: bool = False
    ortho_weight: float = 0.1
    eval_every: int = 1          # epochs between dev evaluations
    eval_train: bool = False     # also score the training set each evaluation
    target_train_f1: float | None = None  # stop once train micro-F1 reaches this
    class_weights: tuple[float, float] | None = None
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    max_grad_norm: float | None = None
    vocab_min_count: int = 1

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1 or self.max_len < 1 or self.eval_every < 1:
            raise ValueError("batch_size, max_len and eval_every must be >= 1")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        for key in ("class_weights", "betas"):
            if getattr(self, key) is not None:
                object.__setattr__(self, key, tuple(float(x) for x in getattr(self, key)))

    @classmethod
    def finetune_preset(cls, **overrides) -> "TrainConfig":
        """Settings for fine-tuning a pretrained backbone (lr 1e-5)."""
        return cls(**{"lr": 1e-5, **overrides})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


# -- chunking ----------------------------------------------------------------

@dataclass(frozen=True)
class ChunkSpan:
    """A gold span clipped to a chunk, in chunk-local coordinates."""
    task: Task
    start: int
    end: int
    split: bool = False


@dataclass(frozen=True)
class Chunk:
    page_id: str
    language: str
    offset: int
    tokens: tuple[str, ...]
    features: tuple[tuple[int, ...], ...]
    spans: tuple[ChunkSpan, ...]

    def __len__(self):
        return len(self.tokens)


def chunk_record(record: PageRecord, max_len: int = 512) -> list[Chunk]:
    """Cut a page into contiguous ``max_len`` windows.

    A gold span crossing a boundary becomes one sub-span per chunk, each
    flagged ``split``; ``offset`` maps chunk positions back to the page.
    """
    out = []
    for lo, hi in chunk_bounds(len(record.tokens), max_len):
        spans = []
        for s in record.spans:
            a, b = max(s.start, lo), min(s.end, hi - 1)
            if a <= b:
                spans.append(ChunkSpan(s.task, a - lo, b - lo, split=(a, b) != (s.start, s.end)))
        out.append(Chunk(record.page_id, record.language, lo, record.tokens[lo:hi],
                         record.features[lo:hi], tuple(spans)))
    return out


# -- optimizer ---------------------------------------------------------------

@dataclass
class AdamWState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(params: dict[str, ag.Tensor], grads: dict[str, np.ndarray], state: AdamWState,
                   config: TrainConfig):
    """One AdamW update in place; weight decay acts on the weights, not the gradients."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in tensor {name!r}")
    b1, b2 = config.betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if config.weight_decay:
            p.data *= 1.0 - config.lr * config.weight_decay
        p.data -= config.lr * (m / c1) / (np.sqrt(v / c2) + config.eps)


# -- training ----------------------------------------------------------------

METRIC_COLUMNS = ["epoch", "split", "task", "P", "R", "F1", "loss"]


@dataclass
class TrainResult:
    model: MoEEF              # parameters of the selected epoch
    best_epoch: int
    best_dev_f1: float | None
    log: list[dict]
    epochs_run: int
    dev_reports: list[EvalReport] = field(default_factory=list)

    def write_log(self, path: str | Path):
        write_csv(self.log, path, METRIC_COLUMNS)


def _report_rows(epoch: int, split: str, report: EvalReport) -> list[dict]:
    rows = []
    for t in report.tasks:
        c = report.counts(t)
        loss = report.loss.get(t.value) if report.loss else None
        rows.append({"epoch": epoch, "split": split, "task": t.value,
                     "P": c.precision, "R": c.recall, "F1": c.f1, "loss": loss})
    o = report.overall
    rows.append({"epoch": epoch, "split": split, "task": "overall", "P": o.precision, "R": o.recall,
                 "F1": o.f1, "loss": report.loss.get("total") if report.loss else None})
    return rows


def _encode_chunk(model: MoEEF, chunk: Chunk):
    ids = model.vocab.encode(chunk.tokens)
    feats = np.asarray(chunk.features, dtype=np.int64)
    return ids, feats, gold_matrix(chunk.spans, len(chunk), model.config.tasks)


def train(train_set: Sequence[PageRecord], dev_set: Sequence[PageRecord] | None,
          model_config: ModelConfig, train_config: TrainConfig, vocab: Vocab | None = None,
          out_dir: str | Path | None = None) -> TrainResult:
    """Train and return the epoch with the best dev micro-F1 (earliest on ties).

    Without a dev set the last epoch is returned. With ``out_dir`` the best
    checkpoint and ``metrics.csv`` are written there.
    """
    if not train_set:
        raise ValueError("train: empty training set")
    tc = train_config
    vocab = vocab or Vocab.build(train_set, min_count=tc.vocab_min_count)
    config = replace(model_config, text_vocab_size=len(vocab), max_len=max(model_config.max_len, tc.max_len))
    model = MoEEF(config, vocab=vocab, seed=tc.seed)
    chunks = [c for r in train_set for c in chunk_record(r, tc.max_len)]
    encoded = [_encode_chunk(model, c) for c in chunks]
    rng = np.random.default_rng(np.random.SeedSequence([tc.seed, 1]))
    state = AdamWState()
    params = model.params
    ortho_weight = tc.ortho_weight if tc.ortho else 0.0

    rows: list[dict] = []
    dev_reports: list[EvalReport] = []
    best = (None, -1.0, {k: p.data.copy() for k, p in params.items()})
    epoch = 0
    for epoch in range(1, tc.epochs + 1):
        order = rng.permutation(len(encoded))
        task_loss = np.zeros(len(config.tasks))
        for start in range(0, len(order), tc.batch_size):
            batch = order[start:start + tc.batch_size]
            ag.zero_grads(params.values())
            for i in batch:
                ids, feats, gold = encoded[i]
                losses = model.losses(model.forward(ids, feats), gold, ortho_weight, tc.class_weights)
                ag.backward(ag.mul_scalar(losses.total, 1.0 / len(batch)))
                task_loss += losses.task.data
            grads = {k: p.grad for k, p in params.items() if p.grad is not None}
            if tc.max_grad_norm:
                norm = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values())))
                if norm > tc.max_grad_norm:
                    grads = {k: g * (tc.max_grad_norm / norm) for k, g in grads.items()}
            optimizer_step(params, grads, state, tc)
        mean_loss = task_loss / len(encoded)
        for t, v in zip(config.tasks, mean_loss):
            rows.append({"epoch": epoch, "split": "train", "task": t.value, "P": None, "R": None,
                         "F1": None, "loss": float(v)})
        rows.append({"epoch": epoch, "split": "train", "task": "overall", "P": None, "R": None,
                     "F1": None, "loss": float(mean_loss.sum())})
        log.info("epoch %d train loss %.5f", epoch, mean_loss.sum())

        if epoch % tc.eval_every and epoch != tc.epochs:
            continue
        train_f1 = None
        if tc.eval_train or tc.target_train_f1 is not None:
            rep = evaluate(model, train_set, tc.max_len, class_weights=tc.class_weights)
            train_f1 = rep.overall.f1
            rows.extend(_report_rows(epoch, "train-eval", rep))
            log.info("epoch %d train micro-F1 %.2f", epoch, train_f1)
        if dev_set:
            rep = evaluate(model, dev_set, tc.max_len, class_weights=tc.class_weights)
            dev_reports.append(rep)
            rows.extend(_report_rows(epoch, "dev", rep))
            f1 = rep.overall.f1
            log.info("epoch %d dev micro-F1 %.2f", epoch, f1)
            if f1 > best[1]:
                best = (epoch, f1, {k: p.data.copy() for k, p in params.items()})
        if tc.target_train_f1 is not None and train_f1 is not None and train_f1 >= tc.target_train_f1:
            log.info("train micro-F1 target %.2f reached at epoch %d", tc.target_train_f1, epoch)
            break

    if best[0] is None:
        best_epoch, best_f1 = epoch, None
    else:
        best_epoch, best_f1 = best[0], best[1]
        for k, p in params.items():
            p.data[...] = best[2][k]
    for p in params.values():
        p.grad = None
    result = TrainResult(model, best_epoch, best_f1, rows, epoch, dev_reports)
    if out_dir is not None:
        out_dir = Path(out_dir)
        save_checkpoint(model, out_dir / "checkpoint",
                        extra={"best_epoch": best_epoch, "best_dev_f1": best_f1,
                               "train_config": tc.to_dict()})
        result.write_log(out_dir / "metrics.csv")
    return result
