"""Desk-scale embedding network around a statistics pooling layer.

Three stages: a per-frame affine+ReLU stack, the configured pooling layer,
and one segment-level affine layer whose pre-activation output is the
embedding. A class-weight matrix on top turns embeddings into cosine
logits for the additive-angular-margin softmax loss used in training:

    loss = cross-entropy over  s * cos(theta_j + m * [j == label])

with both the embedding and the class rows used in unit-normalized form.
Training is plain seeded minibatch gradient descent; every gradient here
is hand-derived and checked against central finite differences in the
test suite.

Checkpoints are ``.npz`` containers (format version 1) holding the config
and every parameter tensor; a round-trip reproduces embeddings bitwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import pooling
from .moments import FrameSequence
from .pooling import PoolingConfig

CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    """Raised when optimization produces a non-finite loss."""


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    frame_hidden: tuple
    pooling: PoolingConfig
    embed_dim: int
    num_classes: int
    arcface_scale: float = 30.0
    arcface_margin: float = 0.2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "frame_hidden", tuple(int(w) for w in self.frame_hidden))
        if self.input_dim < 1 or self.embed_dim < 1:
            raise ValueError("input_dim and embed_dim must be >= 1")
        if any(w < 1 for w in self.frame_hidden):
            raise ValueError("all frame-level widths must be >= 1")
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if not self.arcface_scale > 0:
            raise ValueError("arcface_scale must be positive")
        if not 0.0 <= self.arcface_margin <= 0.5:
            raise ValueError("arcface_margin must lie in [0, 0.5]")

    @property
    def frame_out_dim(self) -> int:
        return self.frame_hidden[-1] if self.frame_hidden else self.input_dim

    @property
    def pooled_dim(self) -> int:
        return pooling.output_width(self.pooling, self.frame_out_dim)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "frame_hidden": list(self.frame_hidden),
            "pooling": {"stats": [s.value for s in self.pooling.stats], "eps": self.pooling.eps},
            "embed_dim": self.embed_dim,
            "num_classes": self.num_classes,
            "arcface_scale": self.arcface_scale,
            "arcface_margin": self.arcface_margin,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        pool = PoolingConfig(
            tuple(pooling.Statistic(s) for s in d["pooling"]["stats"]),
            eps=d["pooling"]["eps"],
        )
        return cls(
            input_dim=d["input_dim"],
            frame_hidden=tuple(d["frame_hidden"]),
            pooling=pool,
            embed_dim=d["embed_dim"],
            num_classes=d["num_classes"],
            arcface_scale=d["arcface_scale"],
            arcface_margin=d["arcface_margin"],
            seed=d["seed"],
        )


@dataclass
class ModelState:
    """All trainable parameters plus the per-epoch mean loss record."""

    config: EncoderConfig
    frame_weights: list
    frame_biases: list
    seg_weight: np.ndarray
    seg_bias: np.ndarray
    class_weight: np.ndarray
    loss_history: list = field(default_factory=list)

    def copy(self) -> "ModelState":
        return ModelState(
            config=self.config,
            frame_weights=[w.copy() for w in self.frame_weights],
            frame_biases=[b.copy() for b in self.frame_biases],
            seg_weight=self.seg_weight.copy(),
            seg_bias=self.seg_bias.copy(),
            class_weight=self.class_weight.copy(),
            loss_history=list(self.loss_history),
        )


@dataclass
class TrainBatch:
    """A minibatch: frame sequences with their class labels."""

    sequences: list
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.sequences) == 0:
            raise ValueError("batch must be non-empty")
        if self.labels.shape != (len(self.sequences),):
            raise ValueError("labels must align with sequences")
        if np.any(self.labels < 0):
            raise ValueError("labels must be non-negative")

    def __len__(self) -> int:
        return len(self.sequences)


def _glorot(rng, fan_in: int, fan_out: int, shape) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, shape)


def init_model(cfg: EncoderConfig) -> ModelState:
    """Seeded Glorot-uniform parameters; biases start at zero.

    Each tensor draws from its own named substream, so two configs that
    share a seed and agree on a tensor's shape also agree on its initial
    values (frame layers and class weights match across pooling choices).
    """
    frame_w, frame_b = [], []
    win = cfg.input_dim
    for i, wout in enumerate(cfg.frame_hidden):
        rng = np.random.default_rng([cfg.seed, 1, i])
        frame_w.append(_glorot(rng, win, wout, (win, wout)))
        frame_b.append(np.zeros(wout))
        win = wout
    rng = np.random.default_rng([cfg.seed, 2])
    seg_w = _glorot(rng, cfg.pooled_dim, cfg.embed_dim, (cfg.pooled_dim, cfg.embed_dim))
    seg_b = np.zeros(cfg.embed_dim)
    rng = np.random.default_rng([cfg.seed, 3])
    cls_w = _glorot(rng, cfg.embed_dim, cfg.num_classes, (cfg.num_classes, cfg.embed_dim))
    return ModelState(cfg, frame_w, frame_b, seg_w, seg_b, cls_w)


def _frame_stack_forward(model: ModelState, frames: np.ndarray, caches=None):
    h = frames
    for w, b in zip(model.frame_weights, model.frame_biases):
        z = h @ w + b
        if caches is not None:
            caches.append((h, z))
        h = np.maximum(z, 0.0)
    return h


def _embed_from_frames(model: ModelState, seqs, caches=None):
    """Shared forward path: frame stack, pooling per utterance, segment layer."""
    cfg = model.config
    lengths = []
    for s in seqs:
        if s.D != cfg.input_dim:
            raise ValueError(f"utterance has D={s.D}, model expects {cfg.input_dim}")
        lengths.append(s.T)
    if not seqs:
        return np.zeros((0, cfg.embed_dim)), None, None
    frames = np.concatenate([s.data for s in seqs], axis=0)
    h = _frame_stack_forward(model, frames, caches)
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    pooled = np.empty((len(seqs), cfg.pooled_dim))
    pooled_seqs = []
    for i in range(len(seqs)):
        seg = FrameSequence(h[offsets[i] : offsets[i + 1]])
        pooled_seqs.append(seg)
        pooled[i] = pooling.forward(cfg.pooling, seg)
    emb = pooled @ model.seg_weight + model.seg_bias
    return emb, pooled, (offsets, pooled_seqs)


def forward_embed(model: ModelState, x: FrameSequence) -> np.ndarray:
    """Embedding of one utterance: segment-layer pre-activation output."""
    emb, _, _ = _embed_from_frames(model, [x])
    return emb[0]


def extract_all(model: ModelState, utts) -> list:
    """Embeddings for a list of utterances, order preserved."""
    return [forward_embed(model, x) for x in utts]


def _normalize_rows(m: np.ndarray):
    norms = np.maximum(np.linalg.norm(m, axis=1, keepdims=True), 1e-12)
    return m / norms, norms


def _margin_logits_grad(cos_t: np.ndarray, margin: float):
    """cos(theta + m) for the target column, and its d/dcos."""
    if margin == 0.0:
        return cos_t, np.ones_like(cos_t)
    c = np.clip(cos_t, -1.0 + 1e-12, 1.0 - 1e-12)
    sin_t = np.sqrt(1.0 - c * c)
    phi = c * np.cos(margin) - sin_t * np.sin(margin)
    dphi = np.cos(margin) + np.sin(margin) * c / sin_t
    return phi, dphi


def _arcface_batch(class_weight: np.ndarray, emb: np.ndarray, labels: np.ndarray,
                   scale: float, margin: float):
    """Mean margin-softmax loss over a batch, with gradients for the
    embeddings and the class-weight matrix."""
    b = emb.shape[0]
    rows = np.arange(b)
    emb_n, emb_norm = _normalize_rows(emb)
    cls_n, cls_norm = _normalize_rows(class_weight)
    cos = np.clip(emb_n @ cls_n.T, -1.0, 1.0)
    phi, dphi = _margin_logits_grad(cos[rows, labels], margin)
    logits = scale * cos
    logits[rows, labels] = scale * phi

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.sum(np.exp(shifted), axis=1))
    loss = float(np.mean(log_z - shifted[rows, labels]))

    p = np.exp(shifted - log_z[:, None])
    dlogits = p / b
    dlogits[rows, labels] -= 1.0 / b
    dcos = scale * dlogits
    dcos[rows, labels] *= dphi

    demb_n = dcos @ cls_n
    dcls_n = dcos.T @ emb_n
    demb = (demb_n - emb_n * np.sum(demb_n * emb_n, axis=1, keepdims=True)) / emb_norm
    dcls = (dcls_n - cls_n * np.sum(dcls_n * cls_n, axis=1, keepdims=True)) / cls_norm
    return loss, demb, dcls


def arcface_loss(model: ModelState, emb, label: int, scale: float, margin: float) -> float:
    """Margin-softmax loss of a single embedding against the class rows."""
    e = np.asarray(emb, dtype=np.float64).reshape(1, -1)
    loss, _, _ = _arcface_batch(model.class_weight, e, np.array([label]), scale, margin)
    return loss


def loss_and_grads(model: ModelState, batch: TrainBatch):
    """Mean batch loss and gradients for every parameter tensor."""
    cfg = model.config
    if np.any(batch.labels >= cfg.num_classes):
        raise ValueError("batch labels exceed num_classes")
    caches = []
    emb, pooled, (offsets, pooled_seqs) = _embed_from_frames(model, batch.sequences, caches)
    loss, demb, dcls = _arcface_batch(
        model.class_weight, emb, batch.labels, cfg.arcface_scale, cfg.arcface_margin
    )
    dseg_w = pooled.T @ demb
    dseg_b = demb.sum(axis=0)
    dpooled = demb @ model.seg_weight.T

    dh = np.empty((offsets[-1], cfg.frame_out_dim))
    for i, seq in enumerate(pooled_seqs):
        dh[offsets[i] : offsets[i + 1]] = pooling.backward(cfg.pooling, seq, dpooled[i])

    dframe_w = [None] * len(model.frame_weights)
    dframe_b = [None] * len(model.frame_biases)
    for l in range(len(model.frame_weights) - 1, -1, -1):
        h_in, z = caches[l]
        dz = dh * (z > 0.0)
        dframe_w[l] = h_in.T @ dz
        dframe_b[l] = dz.sum(axis=0)
        dh = dz @ model.frame_weights[l].T
    return loss, {
        "frame_weights": dframe_w,
        "frame_biases": dframe_b,
        "seg_weight": dseg_w,
        "seg_bias": dseg_b,
        "class_weight": dcls,
    }


def train(cfg: EncoderConfig, data, epochs: int, lr: float) -> ModelState:
    """Seeded minibatch gradient descent over pre-formed batches.

    Batch order is reshuffled every epoch from the config seed; the mean
    per-utterance loss of each epoch lands in ``loss_history``. A
    non-finite loss aborts with the offending step index.
    """
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    data = list(data)
    if not data:
        raise ValueError("no training batches")
    for batch in data:
        if np.any(batch.labels >= cfg.num_classes):
            raise ValueError("training labels exceed num_classes")
    model = init_model(cfg)
    shuffle_rng = np.random.default_rng([cfg.seed, 4])
    step = 0
    for _ in range(epochs):
        order = shuffle_rng.permutation(len(data))
        weighted = 0.0
        count = 0
        for bi in order:
            batch = data[int(bi)]
            loss, grads = loss_and_grads(model, batch)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at step {step}")
            for w, g in zip(model.frame_weights, grads["frame_weights"]):
                w -= lr * g
            for b, g in zip(model.frame_biases, grads["frame_biases"]):
                b -= lr * g
            model.seg_weight -= lr * grads["seg_weight"]
            model.seg_bias -= lr * grads["seg_bias"]
            model.class_weight -= lr * grads["class_weight"]
            weighted += loss * len(batch)
            count += len(batch)
            step += 1
        model.loss_history.append(weighted / count)
    return model


def predict_classes(model: ModelState, utts) -> np.ndarray:
    """Argmax cosine class for each utterance (margin-free scoring)."""
    if not utts:
        return np.zeros(0, dtype=np.int64)
    emb = np.stack(extract_all(model, utts))
    emb_n, _ = _normalize_rows(emb)
    cls_n, _ = _normalize_rows(model.class_weight)
    return np.argmax(emb_n @ cls_n.T, axis=1)


def save_model(path, model: ModelState) -> None:
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "loss_history": model.loss_history,
        "num_frame_layers": len(model.frame_weights),
    }
    arrays = {
        "seg_weight": model.seg_weight,
        "seg_bias": model.seg_bias,
        "class_weight": model.class_weight,
    }
    for i, (w, b) in enumerate(zip(model.frame_weights, model.frame_biases)):
        arrays[f"frame_weight_{i}"] = w
        arrays[f"frame_bias_{i}"] = b
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_model(path) -> ModelState:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('format_version')!r}")
        cfg = EncoderConfig.from_dict(meta["config"])
        n_layers = meta["num_frame_layers"]
        model = ModelState(
            config=cfg,
            frame_weights=[data[f"frame_weight_{i}"] for i in range(n_layers)],
            frame_biases=[data[f"frame_bias_{i}"] for i in range(n_layers)],
            seg_weight=data["seg_weight"],
            seg_bias=data["seg_bias"],
            class_weight=data["class_weight"],
            loss_history=list(meta["loss_history"]),
        )
    return model
