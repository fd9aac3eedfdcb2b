"""Probing classifiers: how much meta-information do embeddings carry?

Each probe is a single-hidden-layer MLP (ReLU, hidden width 500 by
default) trained with seeded minibatch gradient descent on frozen
embeddings; accuracy is always reported on a held-out split. The word
task trains one shared ReLU trunk with an independent sigmoid head per
word and reports the average of the per-word held-out accuracies.

The reported ``chance`` level is the majority-class share of the training
labels, which is what a probe converges to when labels carry no signal.

Report lines are ``pooling task accuracy chance n_train n_test``; the
same rows are also emitted as a JSON array for plotting.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import encoder as enc
from . import synthdata

TASK_NAMES = ("speaker_id", "gender", "cluster", "rate", "nuisance", "word_presence")

_FLOAT_FMT = "%.17g"


@dataclass(frozen=True)
class ProbeConfig:
    hidden_width: int = 500
    activation: str = "relu"
    epochs: int = 50
    lr: float = 0.1
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.hidden_width < 1:
            raise ValueError("hidden_width must be >= 1")
        if self.activation != "relu":
            raise ValueError("only the rectifier activation is supported")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass(frozen=True)
class ProbeReport:
    task: str
    pooling: str
    accuracy: float
    chance: float
    n_train: int
    n_test: int


@dataclass
class ProbeModel:
    """Trained MLP plus the label values its output indices map to."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    classes: np.ndarray


def _as_matrix(pairs):
    xs, ys = [], []
    for e, label in pairs:
        xs.append(np.asarray(e, dtype=np.float64))
        ys.append(label)
    return np.stack(xs), ys


def init_probe_params(cfg: ProbeConfig, input_dim: int, n_out: int):
    """Seeded Glorot-uniform init; exposed so controlled experiments can
    hand ``train_probe`` a transformed copy."""
    rng1 = np.random.default_rng([cfg.seed, 1])
    a1 = np.sqrt(6.0 / (input_dim + cfg.hidden_width))
    w1 = rng1.uniform(-a1, a1, (input_dim, cfg.hidden_width))
    rng2 = np.random.default_rng([cfg.seed, 2])
    a2 = np.sqrt(6.0 / (cfg.hidden_width + n_out))
    w2 = rng2.uniform(-a2, a2, (cfg.hidden_width, n_out))
    return w1, np.zeros(cfg.hidden_width), w2, np.zeros(n_out)


def _minibatches(rng, n: int, batch_size: int):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_probe(pairs, cfg: ProbeConfig, init=None) -> ProbeModel:
    """Train a softmax MLP on (embedding, label) pairs.

    Labels may be any hashable values; they are mapped to output indices
    in sorted order. Raises if fewer than two classes are present.
    """
    x, ys = _as_matrix(pairs)
    classes = sorted(set(ys), key=repr)
    if len(classes) < 2:
        raise ValueError("probe training data contains a single class")
    index = {c: i for i, c in enumerate(classes)}
    y = np.array([index[v] for v in ys], dtype=np.int64)

    w1, b1, w2, b2 = init if init is not None else init_probe_params(cfg, x.shape[1], len(classes))
    w1, b1, w2, b2 = w1.copy(), b1.copy(), w2.copy(), b2.copy()
    rng = np.random.default_rng([cfg.seed, 3])
    for _ in range(cfg.epochs):
        for idx in _minibatches(rng, len(y), cfg.batch_size):
            xb, yb = x[idx], y[idx]
            z1 = xb @ w1 + b1
            h = np.maximum(z1, 0.0)
            logits = h @ w2 + b2
            shifted = logits - logits.max(axis=1, keepdims=True)
            p = np.exp(shifted)
            p /= p.sum(axis=1, keepdims=True)
            dlogits = p
            dlogits[np.arange(len(yb)), yb] -= 1.0
            dlogits /= len(yb)
            dw2 = h.T @ dlogits
            db2 = dlogits.sum(axis=0)
            dh = dlogits @ w2.T
            dz1 = dh * (z1 > 0.0)
            dw1 = xb.T @ dz1
            db1 = dz1.sum(axis=0)
            w1 -= cfg.lr * dw1
            b1 -= cfg.lr * db1
            w2 -= cfg.lr * dw2
            b2 -= cfg.lr * db2
    return ProbeModel(w1, b1, w2, b2, np.array(classes, dtype=object))


def predict(model: ProbeModel, x) -> list:
    x = np.asarray(x, dtype=np.float64)
    h = np.maximum(x @ model.w1 + model.b1, 0.0)
    idx = np.argmax(h @ model.w2 + model.b2, axis=1)
    return [model.classes[i] for i in idx]


def accuracy(model: ProbeModel, pairs) -> float:
    x, ys = _as_matrix(pairs)
    pred = predict(model, x)
    return float(np.mean([p == t for p, t in zip(pred, ys)]))


def majority_share(labels) -> float:
    """Share of the most frequent label: the no-signal probe accuracy."""
    labels = list(labels)
    values, counts = np.unique(np.array(labels, dtype=object), return_counts=True)
    return float(np.max(counts) / len(labels))


@dataclass(frozen=True)
class WordProbeResult:
    """Per-word presence accuracies plus their average.

    ``skipped`` lists words whose training labels were single-class
    (never or always present); they are excluded from the average.
    """

    average_accuracy: float
    per_word: dict
    skipped: tuple
    chance: float


def word_presence_probe(train_pairs, test_pairs, cfg: ProbeConfig,
                        lexicon_size: int) -> WordProbeResult:
    """Train per-word presence detectors that share one ReLU trunk.

    ``*_pairs`` hold (embedding, word bitmask). Each word gets its own
    sigmoid head over the shared hidden layer; a word with single-class
    training labels is skipped and reported. Raises when no word is
    trainable at all.
    """
    if lexicon_size < 1:
        raise ValueError("lexicon_size must be >= 1")
    x_tr, masks_tr = _as_matrix(train_pairs)
    x_te, masks_te = _as_matrix(test_pairs)
    y_tr = _multi_hot(masks_tr, lexicon_size)
    y_te = _multi_hot(masks_te, lexicon_size)

    present = y_tr.sum(axis=0)
    trainable = (present > 0) & (present < len(y_tr))
    skipped = tuple(int(w) for w in np.flatnonzero(~trainable))
    if not np.any(trainable):
        raise ValueError("every word has single-class training labels; nothing to probe")

    w1, b1, w2, b2 = init_probe_params(cfg, x_tr.shape[1], lexicon_size)
    rng = np.random.default_rng([cfg.seed, 3])
    active = trainable.astype(np.float64)
    for _ in range(cfg.epochs):
        for idx in _minibatches(rng, len(y_tr), cfg.batch_size):
            xb, yb = x_tr[idx], y_tr[idx]
            z1 = xb @ w1 + b1
            h = np.maximum(z1, 0.0)
            logits = h @ w2 + b2
            p = 1.0 / (1.0 + np.exp(-logits))
            # per-head BCE, mean over the batch, summed across trainable
            # heads (keeps per-head gradients independent of head count)
            dlogits = (p - yb) * active / len(yb)
            dw2 = h.T @ dlogits
            db2 = dlogits.sum(axis=0)
            dh = dlogits @ w2.T
            dz1 = dh * (z1 > 0.0)
            w1 -= cfg.lr * (xb.T @ dz1)
            b1 -= cfg.lr * dz1.sum(axis=0)
            w2 -= cfg.lr * dw2
            b2 -= cfg.lr * db2

    h_te = np.maximum(x_te @ w1 + b1, 0.0)
    pred = (h_te @ w2 + b2) > 0.0
    per_word = {}
    chances = []
    for w in np.flatnonzero(trainable):
        per_word[int(w)] = float(np.mean(pred[:, w] == (y_te[:, w] > 0.5)))
        share = float(np.mean(y_tr[:, w]))
        chances.append(max(share, 1.0 - share))
    avg = float(np.mean(list(per_word.values())))
    return WordProbeResult(avg, per_word, skipped, float(np.mean(chances)))


def _multi_hot(masks, lexicon_size: int) -> np.ndarray:
    out = np.zeros((len(masks), lexicon_size))
    for i, mask in enumerate(masks):
        mask = int(mask)
        for w in range(lexicon_size):
            if mask >> w & 1:
                out[i, w] = 1.0
    return out


_LABEL_FNS = {
    "speaker_id": lambda u: u.speaker,
    "gender": lambda u: u.gender,
    "rate": lambda u: u.rate,
    "nuisance": lambda u: u.nuisance,
}


def task_labels(task: str, utts, cluster_map=None) -> list:
    """Label list for one probing task over a corpus."""
    if task in _LABEL_FNS:
        fn = _LABEL_FNS[task]
        return [fn(u) for u in utts]
    if task == "cluster":
        if cluster_map is None:
            raise ValueError("cluster task needs a speaker -> cluster map")
        return [cluster_map[u.speaker] for u in utts]
    if task == "word_presence":
        return [u.words for u in utts]
    raise ValueError(f"unknown probe task {task!r}")


def _job_seed(base: int, *parts) -> int:
    digest = hashlib.sha256(("|".join(str(p) for p in parts) + f"|{base}").encode()).digest()
    return int.from_bytes(digest[:8], "big")


def run_matrix(utts, systems, tasks, cfg: ProbeConfig, *, cluster_map=None,
               lexicon_size=None, train_frac: float = 0.8, seed: int = 0):
    """Full cross product of (pooling system, probing task).

    ``systems`` is a sequence of (name, ModelState). Embeddings are
    extracted once per system; each task gets a seeded 80/20 split shared
    across systems (stratified by the task's own label where that is
    well-defined), then a freshly seeded probe. Reports come back in
    (system, task) order but each job's result depends only on its own
    derived seed, never on evaluation order.
    """
    utts = list(utts)
    reports = []
    for name, model in systems:
        embs = [np.asarray(e) for e in enc.extract_all(model, [u.frames for u in utts])]
        for task in tasks:
            labels = task_labels(task, utts, cluster_map=cluster_map)
            split_seed = _job_seed(seed, "split", task)
            stratify = task != "word_presence"
            tr, te = synthdata.split_indices(labels, train_frac, seed=split_seed,
                                             stratify=stratify)
            job_cfg = ProbeConfig(
                hidden_width=cfg.hidden_width,
                activation=cfg.activation,
                epochs=cfg.epochs,
                lr=cfg.lr,
                batch_size=cfg.batch_size,
                seed=_job_seed(seed, "probe", name, task),
            )
            train_pairs = [(embs[i], labels[i]) for i in tr]
            test_pairs = [(embs[i], labels[i]) for i in te]
            if task == "word_presence":
                if lexicon_size is None:
                    raise ValueError("word_presence task needs lexicon_size")
                result = word_presence_probe(train_pairs, test_pairs, job_cfg, lexicon_size)
                acc, chance = result.average_accuracy, result.chance
            else:
                model_p = train_probe(train_pairs, job_cfg)
                acc = accuracy(model_p, test_pairs)
                chance = majority_share([labels[i] for i in tr])
            reports.append(ProbeReport(task, name, acc, chance, len(tr), len(te)))
    return reports


def save_reports(path, reports) -> None:
    with open(path, "w") as fh:
        for r in reports:
            fh.write(
                f"{r.pooling} {r.task} {_FLOAT_FMT % r.accuracy} "
                f"{_FLOAT_FMT % r.chance} {r.n_train} {r.n_test}\n"
            )


def save_reports_json(path, reports) -> None:
    rows = [
        {
            "pooling": r.pooling,
            "task": r.task,
            "accuracy": r.accuracy,
            "chance": r.chance,
            "n_train": r.n_train,
            "n_test": r.n_test,
        }
        for r in reports
    ]
    with open(path, "w") as fh:
        json.dump(rows, fh, indent=1)
        fh.write("\n")


def load_reports_json(path):
    with open(path) as fh:
        rows = json.load(fh)
    return [
        ProbeReport(r["task"], r["pooling"], r["accuracy"], r["chance"],
                    r["n_train"], r["n_test"])
        for r in rows
    ]
