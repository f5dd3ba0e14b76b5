"""The mixture-of-experts tagger.

Three input streams are built from one page chunk: text embeddings ``E``,
hypertext embeddings ``R`` (sum of 20 per-feature tables) and their sum
``M``. A shared transformer encoder turns each into ``H_t``, ``H_m``,
``H_v``. For every task and every (modality, expert) pair a projector MLP
yields a dedicated representation and an expert MLP a token-level binary
distribution. A per-task router scores all experts per token from the
concatenated encodings, and the final prediction is the router-weighted
average of the expert distributions.

All per-(task, modality, expert) weights are stored stacked with leading
axes ``(task, modality, expert)`` so one batched matmul serves all heads.
"""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .core import FEATURE_VOCAB_SIZES, N_FEATURES, TASKS, PageRecord, Task

MODALITIES = ("t", "m", "v")
MODALITY_LABELS = {"t": "T", "m": "M", "v": "V"}
CHECKPOINT_FORMAT = "heed-moeef"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ff_dim: int = 256
    max_len: int = 512
    n_experts: int = 6
    tasks: tuple[Task, ...] = TASKS
    modalities: tuple[str, ...] = MODALITIES
    text_vocab_size: int = 2
    feature_vocab_sizes: tuple[int, ...] = FEATURE_VOCAB_SIZES
    beta1: float = 0.8
    beta2: float = 0.2
    dropped_features: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(Task(t) for t in self.tasks))
        object.__setattr__(self, "modalities", tuple(self.modalities))
        object.__setattr__(self, "feature_vocab_sizes", tuple(self.feature_vocab_sizes))
        object.__setattr__(self, "dropped_features", tuple(sorted(set(self.dropped_features))))
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.n_experts < 1:
            raise ValueError("n_experts must be >= 1")
        if self.beta1 < 0 or self.beta2 < 0:
            raise ValueError("loss coefficients must be non-negative")
        if not self.modalities or set(self.modalities) - set(MODALITIES) or len(set(self.modalities)) != len(self.modalities):
            raise ValueError(f"modalities must be a non-empty subset of {MODALITIES}")
        if len(self.feature_vocab_sizes) != N_FEATURES:
            raise ValueError("need one vocabulary size per feature")
        if any(not 0 <= i < N_FEATURES for i in self.dropped_features):
            raise ValueError("dropped feature index out of range")
        if not self.tasks:
            raise ValueError("at least one task required")

    @property
    def expert_hidden(self) -> int:
        return self.d_model // 2

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def n_routes(self) -> int:
        return len(self.modalities) * self.n_experts

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tasks"] = [t.value for t in self.tasks]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("tasks", "modalities", "feature_vocab_sizes", "dropped_features"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f, L = config.d_model, config.ff_dim, config.n_experts
    T, Mo = len(config.tasks), len(config.modalities)
    nh, dk, eh = config.n_heads, config.head_dim, config.expert_hidden
    shapes = {
        "text_emb": (config.text_vocab_size, d),
        "feat_emb": (sum(config.feature_vocab_sizes), d),
        "pos_emb": (config.max_len, d),
        "emb_ln.g": (d,), "emb_ln.b": (d,),
    }
    for i in range(config.n_layers):
        p = f"layer{i}."
        for w in ("q", "k", "v"):
            shapes[p + f"w{w}"] = (nh, d, dk)
        # no key bias: it shifts every score of a query equally and softmax drops it
        shapes[p + "bq"] = (nh, 1, dk)
        shapes[p + "bv"] = (nh, 1, dk)
        shapes[p + "wo"] = (nh, dk, d)
        shapes[p + "bo"] = (d,)
        shapes[p + "ln1.g"] = (d,)
        shapes[p + "ln1.b"] = (d,)
        shapes[p + "ff.w1"] = (d, f)
        shapes[p + "ff.b1"] = (f,)
        shapes[p + "ff.w2"] = (f, d)
        shapes[p + "ff.b2"] = (d,)
        shapes[p + "ln2.g"] = (d,)
        shapes[p + "ln2.b"] = (d,)
    heads = (T, Mo, L)
    shapes.update({
        "proj.w1": heads + (d, d), "proj.b1": heads + (1, d),
        "proj.w2": heads + (d, d), "proj.b2": heads + (1, d),
        "expert.w1": heads + (d, eh), "expert.b1": heads + (1, eh),
        "expert.w2": heads + (eh, 2), "expert.b2": heads + (1, 2),
        "router.w1": (T, Mo * d, d), "router.b1": (T, 1, d),
        "router.w2": (T, d, Mo * L), "router.b2": (T, 1, Mo * L),
    })
    return shapes


def param_count(config: ModelConfig) -> int:
    """Closed-form trainable parameter count."""
    d, f, L = config.d_model, config.ff_dim, config.n_experts
    T, Mo = len(config.tasks), len(config.modalities)
    eh = config.expert_hidden
    embeddings = (config.text_vocab_size + sum(config.feature_vocab_sizes) + config.max_len) * d + 2 * d
    layer = 4 * d * d + 2 * d + d + 2 * 2 * d + (d * f + f) + (f * d + d)
    projector = 2 * (d * d + d)
    expert = d * eh + eh + eh * 2 + 2
    router = (Mo * d * d + d) + (d * Mo * L + Mo * L)
    return embeddings + config.n_layers * layer + T * Mo * L * (projector + expert) + T * router


_ONES_INIT = ("ln", ".g")


def init_params(config: ModelConfig, seed: int = 0, dtype=np.float32) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if name.endswith(".g"):
            arr = np.ones(shape)
        elif leaf.startswith("b"):
            arr = np.zeros(shape)
        elif name.endswith("_emb"):
            arr = rng.normal(0.0, 0.02, size=shape)
        else:
            fan_in, fan_out = shape[-2], shape[-1]
            arr = rng.normal(0.0, math.sqrt(2.0 / (fan_in + fan_out)), size=shape)
        params[name] = Tensor(arr.astype(dtype), requires_grad=True, name=name)
    return params


# -- vocabulary --------------------------------------------------------------

UNK = "<unk>"


@dataclass
class Vocab:
    tokens: list[str] = field(default_factory=lambda: [UNK])

    def __post_init__(self):
        if not self.tokens or self.tokens[0] != UNK:
            self.tokens = [UNK] + [t for t in self.tokens if t != UNK]
        self._index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    @classmethod
    def build(cls, records: Iterable[PageRecord], min_count: int = 1, max_size: int | None = None) -> "Vocab":
        counts = Counter(t for r in records for t in r.tokens)
        items = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
        if max_size is not None:
            items = items[: max_size - 1]
        return cls([UNK] + items)

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        return np.fromiter((self._index.get(t, 0) for t in tokens), dtype=np.int64, count=len(tokens))


# -- standalone pieces of the decoder ----------------------------------------

def soft_vote(alpha: Tensor, preds: Tensor) -> Tensor:
    """Router-weighted average of expert predictions.

    ``alpha`` is ``(..., n, K)``, ``preds`` is ``(..., K, n, 2)``; returns
    ``(..., n, 2)``.
    """
    if alpha.shape[-1] != preds.shape[-3] or alpha.shape[-2] != preds.shape[-2]:
        raise ValueError(f"soft_vote: {alpha.shape[-1]} routing weights for "
                         f"{preds.shape[-3]} experts (alpha {alpha.shape}, preds {preds.shape})")
    k, n = preds.shape[-3], preds.shape[-2]
    weights = ag.reshape(ag.transpose_last_two(alpha), alpha.shape[:-2] + (k, n, 1))
    return ag.sum(ag.mul(preds, weights), axis=-3)


def check_one_hot(gold: np.ndarray):
    gold = np.asarray(gold)
    if gold.shape[-1] != 2 or not np.all((gold == 0) | (gold == 1)) or not np.all(gold.sum(-1) == 1):
        raise ValueError("gold labels must be one-hot over 2 classes")


def loss_task(gold, preds: Tensor, p_final: Tensor, beta1: float = 0.8, beta2: float = 0.2,
              class_weights: Sequence[float] | None = None) -> tuple[Tensor, Tensor, Tensor]:
    """Expert loss, final-prediction loss and their weighted sum.

    ``gold`` is one-hot ``(..., n, 2)``; ``preds`` stacks the expert
    distributions ``(..., K, n, 2)``. Cross-entropies are averaged over
    tokens (and over experts for the first term).
    """
    gold = np.asarray(gold, dtype=p_final.dtype)
    check_one_hot(gold)
    target = gold if class_weights is None else gold * np.asarray(class_weights, dtype=gold.dtype)
    expert_ce = ag.cross_entropy_rows(target[..., None, :, :], preds)
    l1 = ag.mean(expert_ce, axis=(-2, -1))
    l2 = ag.mean(ag.cross_entropy_rows(target, p_final), axis=-1)
    return l1, l2, ag.add(ag.mul_scalar(l1, beta1), ag.mul_scalar(l2, beta2))


def loss_total(task_losses: dict, tasks: Sequence[Task] = TASKS) -> Tensor:
    missing = [t for t in tasks if Task(t) not in {Task(k) for k in task_losses}]
    if missing:
        raise ValueError(f"loss_total: missing task losses for {[t.value for t in missing]}")
    losses = {Task(k): v for k, v in task_losses.items()}
    total = losses[Task(tasks[0])]
    for t in tasks[1:]:
        total = ag.add(total, losses[Task(t)])
    return total


def ortho_loss(stack: Tensor) -> Tensor:
    """Orthogonality penalty over expert representations of one modality.

    ``stack`` holds ``L`` representations ``(..., L, n, d)``. Each token's
    ``L x d`` block is row-normalized; the result is the token mean of
    ``||H H^T - I||_F``, shape ``(...)``.
    """
    if stack.ndim < 3 or stack.shape[-3] == 0:
        raise ValueError("ortho_loss needs at least one representation")
    nd = stack.ndim
    lead = list(range(nd - 3))
    per_token = ag.permute(stack, lead + [nd - 2, nd - 3, nd - 1])
    unit = ag.l2_normalize_last_dim(per_token)
    gram = ag.matmul(unit, ag.transpose_last_two(unit))
    eye = np.eye(stack.shape[-3], dtype=stack.dtype)
    return ag.mean(ag.frobenius_norm(ag.add(gram, -eye)), axis=-1)


# -- the model ---------------------------------------------------------------

@dataclass
class Forward:
    E: Tensor
    R: Tensor
    M: Tensor
    H: Tensor            # (modalities, n, d)
    projected: Tensor    # (tasks, modalities, experts, n, d)
    expert_probs: Tensor  # (tasks, modalities * experts, n, 2)
    alpha: Tensor        # (tasks, n, modalities * experts)
    p_final: Tensor      # (tasks, n, 2)


@dataclass
class Losses:
    expert: Tensor   # (tasks,)
    final: Tensor    # (tasks,)
    task: Tensor     # (tasks,)
    total: Tensor    # scalar
    ortho: Tensor | None = None


class MoEEF:
    def __init__(self, config: ModelConfig, params: dict[str, Tensor] | None = None,
                 vocab: Vocab | None = None, seed: int = 0, dtype=np.float32):
        if vocab is not None and len(vocab) != config.text_vocab_size:
            config = replace(config, text_vocab_size=len(vocab))
        self.config = config
        self.vocab = vocab
        self.params = params if params is not None else init_params(config, seed, dtype)
        offsets = np.concatenate([[0], np.cumsum(config.feature_vocab_sizes)[:-1]])
        self._feature_offsets = offsets.astype(np.int64)

    @property
    def dtype(self):
        return self.params["text_emb"].dtype

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def _p(self, name: str) -> Tensor:
        return self.params[name]

    # -- encoding ------------------------------------------------------------

    def embed(self, token_ids, features) -> tuple[Tensor, Tensor, Tensor]:
        token_ids = np.asarray(token_ids, dtype=np.int64)
        features = np.array(features, dtype=np.int64).reshape(-1, N_FEATURES)
        n = len(token_ids)
        if features.shape[0] != n:
            raise ValueError(f"embed: {n} tokens but {features.shape[0]} feature rows")
        if n > self.config.max_len:
            raise ValueError(f"embed: {n} tokens exceed max_len {self.config.max_len}")
        bad = np.flatnonzero((token_ids < 0) | (token_ids >= self.config.text_vocab_size))
        if bad.size:
            raise IndexError(f"token id {int(token_ids[bad[0]])} at position {int(bad[0])} outside vocabulary")
        sizes = np.asarray(self.config.feature_vocab_sizes)
        bad = np.argwhere((features < 0) | (features >= sizes))
        if bad.size:
            i, j = (int(x) for x in bad[0])
            raise IndexError(f"feature {j} value {int(features[i, j])} at position {i} outside vocabulary of {sizes[j]}")
        if self.config.dropped_features:
            features = features.copy()
            features[:, list(self.config.dropped_features)] = 0
        E = ag.embedding_lookup(self._p("text_emb"), token_ids)
        R = ag.sum(ag.embedding_lookup(self._p("feat_emb"), features + self._feature_offsets), axis=1)
        M = ag.add(E, R)
        return E, R, M

    def encode(self, X: Tensor) -> Tensor:
        """Shared encoder; ``X`` is ``(n, d)`` or ``(B, n, d)``."""
        n, d = X.shape[-2], X.shape[-1]
        if n > self.config.max_len:
            raise ValueError(f"encode: sequence length {n} exceeds max_len {self.config.max_len}")
        single = X.ndim == 2
        if single:
            X = ag.reshape(X, (1, n, d))
        pos = ag.embedding_lookup(self._p("pos_emb"), np.arange(n))
        h = ag.layer_norm(ag.add(X, pos), self._p("emb_ln.g"), self._p("emb_ln.b"))
        for i in range(self.config.n_layers):
            h = self._layer(h, f"layer{i}.")
        return ag.reshape(h, (n, d)) if single else h

    def _layer(self, h: Tensor, p: str) -> Tensor:
        B, n, d = h.shape
        nh, dk = self.config.n_heads, self.config.head_dim
        hx = ag.reshape(h, (B, 1, n, d))
        q = ag.add(ag.matmul(hx, self._p(p + "wq")), self._p(p + "bq"))
        k = ag.matmul(hx, self._p(p + "wk"))
        v = ag.add(ag.matmul(hx, self._p(p + "wv")), self._p(p + "bv"))
        scores = ag.mul_scalar(ag.matmul(q, ag.transpose_last_two(k)), 1.0 / math.sqrt(dk))
        ctx = ag.matmul(ag.softmax_last_dim(scores), v)                     # (B, nh, n, dk)
        attn = ag.add(ag.sum(ag.matmul(ctx, self._p(p + "wo")), axis=1), self._p(p + "bo"))
        h = ag.layer_norm(ag.add(h, attn), self._p(p + "ln1.g"), self._p(p + "ln1.b"))
        ff = ag.gelu(ag.add(ag.matmul(h, self._p(p + "ff.w1")), self._p(p + "ff.b1")))
        ff = ag.add(ag.matmul(ff, self._p(p + "ff.w2")), self._p(p + "ff.b2"))
        return ag.layer_norm(ag.add(h, ff), self._p(p + "ln2.g"), self._p(p + "ln2.b"))

    def encode_modalities(self, E: Tensor, M: Tensor, R: Tensor) -> Tensor:
        streams = {"t": E, "m": M, "v": R}
        return self.encode(ag.stack([streams[o] for o in self.config.modalities]))

    # -- decoding ------------------------------------------------------------

    def _task_index(self, task) -> int:
        task = Task(task)
        if task not in self.config.tasks:
            raise ValueError(f"unknown task {task}")
        return self.config.tasks.index(task)

    def project(self, H: Tensor) -> Tensor:
        Mo, n, d = H.shape
        hx = ag.reshape(H, (1, Mo, 1, n, d))
        a = ag.gelu(ag.add(ag.matmul(hx, self._p("proj.w1")), self._p("proj.b1")))
        return ag.add(ag.matmul(a, self._p("proj.w2")), self._p("proj.b2"))

    def classify(self, projected: Tensor) -> Tensor:
        a = ag.gelu(ag.add(ag.matmul(projected, self._p("expert.w1")), self._p("expert.b1")))
        return ag.softmax_last_dim(ag.add(ag.matmul(a, self._p("expert.w2")), self._p("expert.b2")))

    def expert_predict(self, H_o: Tensor, task, modality: str, l: int) -> Tensor:
        """Single expert ``l`` (0-based) of ``modality`` for ``task``: ``(n, 2)``."""
        if not 0 <= l < self.config.n_experts:
            raise IndexError(f"expert {l} out of range for {self.config.n_experts} experts")
        q, o = self._task_index(task), self.config.modalities.index(modality)
        sel = (q, o, l)
        a = ag.gelu(ag.add(ag.matmul(H_o, ag.getitem(self._p("proj.w1"), sel)), ag.getitem(self._p("proj.b1"), sel)))
        h = ag.add(ag.matmul(a, ag.getitem(self._p("proj.w2"), sel)), ag.getitem(self._p("proj.b2"), sel))
        z = ag.gelu(ag.add(ag.matmul(h, ag.getitem(self._p("expert.w1"), sel)), ag.getitem(self._p("expert.b1"), sel)))
        return ag.softmax_last_dim(ag.add(ag.matmul(z, ag.getitem(self._p("expert.w2"), sel)),
                                          ag.getitem(self._p("expert.b2"), sel)))

    def _route_all(self, H: Tensor) -> Tensor:
        Mo, n, d = H.shape
        cat = ag.concat_last_dim([ag.getitem(H, o) for o in range(Mo)])      # (n, Mo*d)
        hidden = ag.gelu(ag.add(ag.matmul(ag.reshape(cat, (1, n, Mo * d)), self._p("router.w1")),
                                self._p("router.b1")))
        return ag.softmax_last_dim(ag.add(ag.matmul(hidden, self._p("router.w2")), self._p("router.b2")))

    def route(self, encodings: Sequence[Tensor], task) -> Tensor:
        """Per-token distribution over all experts for ``task``: ``(n, Mo*L)``.

        ``encodings`` are the per-modality encodings in config order.
        """
        if len(encodings) != len(self.config.modalities):
            raise ValueError(f"route: expected {len(self.config.modalities)} encodings, got {len(encodings)}")
        q = self._task_index(task)
        cat = ag.concat_last_dim(list(encodings))
        hidden = ag.gelu(ag.add(ag.matmul(cat, ag.getitem(self._p("router.w1"), q)),
                                ag.getitem(self._p("router.b1"), q)))
        return ag.softmax_last_dim(ag.add(ag.matmul(hidden, ag.getitem(self._p("router.w2"), q)),
                                          ag.getitem(self._p("router.b2"), q)))

    def forward(self, token_ids, features) -> Forward:
        E, R, M = self.embed(token_ids, features)
        H = self.encode_modalities(E, M, R)
        projected = self.project(H)
        probs = self.classify(projected)
        T, Mo, L, n, _ = probs.shape
        expert_probs = ag.reshape(probs, (T, Mo * L, n, 2))
        alpha = self._route_all(H)
        return Forward(E, R, M, H, projected, expert_probs, alpha, soft_vote(alpha, expert_probs))

    def losses(self, fwd: Forward, gold: np.ndarray, ortho_weight: float = 0.0,
               class_weights: Sequence[float] | None = None) -> Losses:
        """``gold`` is one-hot ``(tasks, n, 2)``."""
        c = self.config
        l1, l2, lq = loss_task(gold, fwd.expert_probs, fwd.p_final, c.beta1, c.beta2, class_weights)
        total = ag.sum(lq)
        ortho = None
        if ortho_weight:
            ortho = ag.sum(ortho_loss(fwd.projected))
            total = ag.add(total, ag.mul_scalar(ortho, ortho_weight))
        return Losses(l1, l2, lq, total, ortho)

    def predict(self, token_ids, features) -> np.ndarray:
        """Final distributions ``(tasks, n, 2)`` without building a graph."""
        with ag.no_grad():
            return self.forward(token_ids, features).p_final.data.copy()


def chunk_bounds(n: int, max_len: int) -> list[tuple[int, int]]:
    """Contiguous non-overlapping ``[lo, hi)`` windows of at most ``max_len``."""
    if max_len < 1:
        raise ValueError("max_len must be positive")
    return [(lo, min(lo + max_len, n)) for lo in range(0, n, max_len)]


def gold_matrix(spans, n: int, tasks: Sequence[Task] = TASKS, offset: int = 0) -> np.ndarray:
    """One-hot token labels ``(tasks, n, 2)``: class 1 inside any span of the task."""
    mask = np.zeros((len(tasks), n), dtype=np.int64)
    for s in spans:
        task = Task(s.task)
        if task in tasks:
            lo, hi = max(s.start - offset, 0), min(s.end - offset, n - 1)
            if lo <= hi:
                mask[tasks.index(task), lo:hi + 1] = 1
    return np.stack([1 - mask, mask], axis=-1)


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(model: MoEEF, directory: str | Path, extra: dict | None = None) -> Path:
    """Write ``model.json`` (manifest) and ``model.bin`` (little-endian float32)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index, offset = [], 0
    with (directory / "model.bin").open("wb") as fh:
        for name, p in model.params.items():
            blob = np.ascontiguousarray(p.data, dtype="<f4").tobytes()
            index.append({"name": name, "shape": list(p.shape), "offset": offset, "nbytes": len(blob)})
            fh.write(blob)
            offset += len(blob)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dtype": "<f4",
        "config": model.config.to_dict(),
        "vocab": model.vocab.tokens if model.vocab is not None else None,
        "tensors": index,
        "extra": extra or {},
    }
    path = directory / "model.json"
    path.write_text(json.dumps(manifest, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def load_checkpoint(directory: str | Path, dtype=np.float32) -> MoEEF:
    directory = Path(directory)
    manifest = json.loads((directory / "model.json").read_text(encoding="utf-8"))
    if manifest.get("format") != CHECKPOINT_FORMAT or "version" not in manifest:
        raise ValueError(f"{directory}: not a model checkpoint")
    if manifest["version"] > CHECKPOINT_VERSION:
        raise ValueError(f"{directory}: checkpoint version {manifest['version']} is newer than supported")
    blob = (directory / "model.bin").read_bytes()
    params = {}
    for entry in manifest["tensors"]:
        arr = np.frombuffer(blob, dtype="<f4", count=int(np.prod(entry["shape"])), offset=entry["offset"])
        params[entry["name"]] = Tensor(arr.reshape(entry["shape"]).astype(dtype), requires_grad=True,
                                       name=entry["name"])
    config = ModelConfig.from_dict(manifest["config"])
    expected = param_shapes(config)
    for name, shape in expected.items():
        if name not in params or params[name].shape != shape:
            raise ValueError(f"{directory}: tensor {name} missing or misshapen")
    vocab = Vocab(manifest["vocab"]) if manifest.get("vocab") else None
    return MoEEF(config, params, vocab)
