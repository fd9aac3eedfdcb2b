"""Verification back-end: cosine scoring, EER, minimum DCF, score fusion.

The error rates are computed by an exhaustive sweep over every distinct
score value (decision rule: accept iff score >= threshold), with virtual
-inf / +inf endpoints:

* ``eer`` returns the rate at the FAR = FRR crossing, linearly
  interpolating between adjacent sweep points when the sign of FAR - FRR
  changes between them.
* ``min_dcf`` returns the minimum normalized detection cost over the same
  sweep; the endpoints cap it at 1 (the best do-nothing decision).

Because the sweep visits score *values* and only rank order decides the
counts, both metrics are exactly invariant under any strictly increasing
transform of the scores.

File formats (whitespace-delimited decimal text, floats at 17 significant
digits so they round-trip exactly):

* score file: ``enroll_id test_id score label`` per trial
* embeddings file: ``id dim v1 ... vD`` per utterance
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TARGET = "target"
NONTARGET = "nontarget"

_FLOAT_FMT = "%.17g"


@dataclass(frozen=True)
class Trial:
    """Enroll/test utterance pair with its ground-truth label."""

    enroll_id: int
    test_id: int
    label: str

    def __post_init__(self):
        if self.enroll_id == self.test_id:
            raise ValueError("trial must pair two distinct utterances")
        if self.label not in (TARGET, NONTARGET):
            raise ValueError(f"label must be {TARGET!r} or {NONTARGET!r}, got {self.label!r}")

    @property
    def is_target(self) -> bool:
        return self.label == TARGET


class ScoreSet:
    """Aligned trials and scores for one system."""

    __slots__ = ("trials", "scores", "name")

    def __init__(self, trials, scores, name: str) -> None:
        self.trials = tuple(trials)
        arr = np.asarray(scores, dtype=np.float64)
        if arr.ndim != 1 or len(arr) != len(self.trials):
            raise ValueError("scores must be a 1-D array aligned with trials")
        if not np.all(np.isfinite(arr)):
            raise ValueError("scores contain NaN or Inf")
        self.scores = arr
        self.name = name

    def __len__(self) -> int:
        return len(self.trials)

    def labels(self) -> np.ndarray:
        """1 for target trials, 0 for nontarget."""
        return np.array([1 if t.is_target else 0 for t in self.trials], dtype=np.int64)


@dataclass(frozen=True)
class DcfParams:
    """Detection cost weights: miss cost, false-alarm cost, target prior."""

    c_miss: float = 1.0
    c_fa: float = 1.0
    p_target: float = 0.01

    def __post_init__(self):
        if not self.c_miss > 0 or not self.c_fa > 0:
            raise ValueError("costs must be positive")
        if not 0.0 < self.p_target < 1.0:
            raise ValueError("p_target must lie in (0, 1)")
        if min(self.c_miss * self.p_target, self.c_fa * (1.0 - self.p_target)) <= 0:
            raise ValueError("degenerate DCF normalizer")


def cosine_score(a, b) -> float:
    """Cosine similarity of two embeddings; rejects zero-norm inputs."""
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape or va.ndim != 1:
        raise ValueError(f"embedding shapes differ: {va.shape} vs {vb.shape}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine score undefined for zero-norm embedding")
    return float(np.dot(va, vb) / (na * nb))


def _sweep(scores: np.ndarray, labels: np.ndarray):
    """FAR/FRR at thresholds [-inf, distinct scores ascending, +inf].

    FAR(t) = fraction of nontargets with score >= t,
    FRR(t) = fraction of targets with score < t.
    """
    n_tgt = int(np.sum(labels == 1))
    n_non = int(np.sum(labels == 0))
    if n_tgt == 0 or n_non == 0:
        raise ValueError("need at least one target and one nontarget trial")
    tgt = np.sort(scores[labels == 1])
    non = np.sort(scores[labels == 0])
    uniq = np.unique(scores)
    far = np.empty(len(uniq) + 2)
    frr = np.empty(len(uniq) + 2)
    # counts strictly below each threshold value
    far[1:-1] = (n_non - np.searchsorted(non, uniq, side="left")) / n_non
    frr[1:-1] = np.searchsorted(tgt, uniq, side="left") / n_tgt
    far[0], frr[0] = 1.0, 0.0    # t = -inf: accept everything
    far[-1], frr[-1] = 0.0, 1.0  # t = +inf: reject everything
    return far, frr


def eer(scores: ScoreSet) -> float:
    """Equal error rate: FAR = FRR crossing of the threshold sweep."""
    far, frr = _sweep(scores.scores, scores.labels())
    diff = far - frr
    k = int(np.flatnonzero(diff <= 0.0)[0])  # diff is non-increasing, starts at +1
    if diff[k] == 0.0:
        return float(far[k])
    d_hi = diff[k - 1]
    d_lo = diff[k]
    a = d_hi / (d_hi - d_lo)
    return float(far[k - 1] + a * (far[k] - far[k - 1]))


def min_dcf(scores: ScoreSet, params: DcfParams = DcfParams()) -> float:
    """Minimum normalized detection cost over the threshold sweep."""
    far, frr = _sweep(scores.scores, scores.labels())
    cost = params.c_miss * params.p_target * frr + params.c_fa * (1.0 - params.p_target) * far
    norm = min(params.c_miss * params.p_target, params.c_fa * (1.0 - params.p_target))
    return float(np.min(cost) / norm)


def fuse(systems) -> ScoreSet:
    """Equal-weight score fusion: per-trial arithmetic mean.

    All systems must cover the identical trial list in identical order;
    a mismatch raises instead of silently intersecting. The fused name
    composes the inputs, e.g. ``(mean-std)(+)(mean-std-skew)`` written
    with the circled-plus sign.
    """
    systems = list(systems)
    if not systems:
        raise ValueError("nothing to fuse")
    base = systems[0]
    for other in systems[1:]:
        if other.trials != base.trials:
            raise ValueError(
                f"trial lists of {base.name!r} and {other.name!r} do not match"
            )
    if len(systems) == 1:
        return ScoreSet(base.trials, base.scores.copy(), base.name)
    stacked = np.stack([s.scores for s in systems])
    name = "⊕".join(f"({s.name})" for s in systems)
    return ScoreSet(base.trials, np.mean(stacked, axis=0), name)


def save_scores(path, scores: ScoreSet) -> None:
    with open(path, "w") as fh:
        for trial, value in zip(scores.trials, scores.scores):
            fh.write(
                f"{trial.enroll_id} {trial.test_id} {_FLOAT_FMT % value} {trial.label}\n"
            )


def load_scores(path, name: str) -> ScoreSet:
    trials = []
    values = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise ValueError(f"malformed score line: {line!r}")
            trials.append(Trial(int(parts[0]), int(parts[1]), parts[3]))
            values.append(float(parts[2]))
    return ScoreSet(trials, values, name)


def save_trials(path, trials) -> None:
    with open(path, "w") as fh:
        for t in trials:
            fh.write(f"{t.enroll_id} {t.test_id} {t.label}\n")


def load_trials(path):
    out = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise ValueError(f"malformed trial line: {line!r}")
            out.append(Trial(int(parts[0]), int(parts[1]), parts[2]))
    return out


def save_embeddings(path, embeddings: dict) -> None:
    """Write ``{id: vector}`` as ``id dim v1 ... vD`` lines."""
    with open(path, "w") as fh:
        for uid, vec in embeddings.items():
            arr = np.asarray(vec, dtype=np.float64)
            row = " ".join(_FLOAT_FMT % v for v in arr)
            fh.write(f"{uid} {arr.shape[0]} {row}\n")


def load_embeddings(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            uid = int(parts[0])
            dim = int(parts[1])
            if len(parts) != 2 + dim:
                raise ValueError(f"embedding line for id {uid} has wrong arity")
            out[uid] = np.array([float(v) for v in parts[2:]], dtype=np.float64)
    return out
