"""Deterministic synthetic speaker world for desk-scale pooling studies.

Each utterance is a frame sequence

    frames = speaker centroid + nuisance offset
             + (noise scale * nuisance multiplier * gender shape) * N(0, I)
             + spliced word bursts

so the controllable factors map onto distinct statistical channels:

* speaker centroid (drawn around one of a few cluster means, the
  nationality-like group label) moves the per-dimension mean;
* frame noise is i.i.d. uniform (bounded, unit variance before scaling),
  so the running maximum of clean frames concentrates tightly and word
  bursts stand out to a peak detector;
* gender selects one of two per-dimension noise-scale profiles, a
  dispersion channel invisible to mean pooling;
* the nuisance class (``0`` = clean) adds a per-class offset vector plus
  extra frame noise, an utterance-level channel effect;
* the rate class rescales only the frame count T, never the frame
  distribution;
* word bursts add a fixed random direction (unit norm, scaled by the
  burst amplitude) to a few consecutive frames: easy prey for a peak
  detector, nearly invisible to means over the whole utterance, and not
  separable from the speaker subspace, so encoders cannot simply null
  the burst directions away.

Nuisance and rate classes are assigned by a shuffled balanced cycle per
speaker, so the empirical association between speaker identity and either
factor is negligible at any corpus size.

Everything is a pure function of (spec, seed): same spec, same corpus,
bit for bit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .moments import FrameSequence
from .scoring import NONTARGET, TARGET, Trial

_FLOAT_FMT = "%.17g"

# half-width of the unit-variance uniform frame-noise distribution
_UNIFORM_HALF_WIDTH = float(np.sqrt(3.0))


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic speaker world."""

    num_speakers: int = 50
    input_dim: int = 16
    frames_per_utt: int = 40
    utts_per_speaker: int = 20
    speaker_scale: float = 1.0
    noise_scale: float = 1.0
    nuisance_types: int = 4
    rate_classes: tuple = (0.9, 1.0, 1.1)
    lexicon_size: int = 25
    bursts_per_utt: int = 3
    seed: int = 0
    num_clusters: int = 8
    cluster_scale: float = 1.0
    gender_shape: float = 0.35
    nuisance_offset_scale: float = 0.5
    nuisance_noise_boost: float = 0.15
    burst_len: int = 1
    burst_amplitude: float = 8.0

    def __post_init__(self):
        if self.num_speakers < 2:
            raise ValueError("need at least 2 speakers")
        if self.input_dim < 1 or self.frames_per_utt < 1 or self.utts_per_speaker < 1:
            raise ValueError("dimensions and counts must be >= 1")
        if not self.speaker_scale > 0 or not self.cluster_scale > 0:
            raise ValueError("speaker and cluster scales must be positive")
        if self.noise_scale < 0:
            raise ValueError("noise scale must be non-negative")
        if self.nuisance_types < 1 or self.num_clusters < 1:
            raise ValueError("nuisance_types and num_clusters must be >= 1")
        if not self.rate_classes or any(r <= 0 for r in self.rate_classes):
            raise ValueError("rate classes must be positive")
        if not 0 <= self.gender_shape < 1:
            raise ValueError("gender_shape must lie in [0, 1)")
        if self.lexicon_size < 0 or self.bursts_per_utt < 0:
            raise ValueError("lexicon_size and bursts_per_utt must be >= 0")
        if self.bursts_per_utt > self.lexicon_size:
            raise ValueError("bursts_per_utt cannot exceed lexicon_size")
        if self.bursts_per_utt > 0:
            if self.burst_len < 1:
                raise ValueError("burst_len must be >= 1")
            t_min = min(_frame_count(r, self.frames_per_utt) for r in self.rate_classes)
            if self.burst_len > t_min:
                raise ValueError("burst_len exceeds the shortest utterance")
        object.__setattr__(self, "rate_classes", tuple(float(r) for r in self.rate_classes))


@dataclass(frozen=True)
class SpeakerProfile:
    """Per-speaker latent factors, drawn once from the seeded generator."""

    centroid: np.ndarray
    gender: int
    cluster: int


@dataclass(frozen=True)
class LabeledUtterance:
    """One utterance with every factor label it was generated from."""

    uid: int
    frames: FrameSequence
    speaker: int
    gender: int
    nuisance: int
    rate: int          # index into spec.rate_classes
    words: int         # bitmask over the lexicon

    def words_present(self) -> tuple:
        return tuple(i for i in range(self.words.bit_length()) if self.words >> i & 1)


def _frame_count(rate: float, base: int) -> int:
    return int(round(rate * base))


class _World:
    """Latent structure shared by all utterances of one spec."""

    def __init__(self, spec: SynthSpec):
        rng = np.random.default_rng(spec.seed)
        d = spec.input_dim
        self.cluster_means = rng.normal(0.0, spec.cluster_scale, (spec.num_clusters, d))
        self.gender_scales = rng.uniform(
            1.0 - spec.gender_shape, 1.0 + spec.gender_shape, (2, d)
        )
        self.nuisance_offsets = np.zeros((spec.nuisance_types, d))
        if spec.nuisance_types > 1:
            self.nuisance_offsets[1:] = rng.normal(
                0.0, spec.nuisance_offset_scale, (spec.nuisance_types - 1, d)
            )
        self.nuisance_noise = 1.0 + spec.nuisance_noise_boost * np.arange(spec.nuisance_types)
        # dense unit-norm directions, same subspace as the speaker centroids
        raw = rng.normal(0.0, 1.0, (spec.lexicon_size, spec.burst_len, d))
        norms = np.maximum(np.linalg.norm(raw, axis=2, keepdims=True), 1e-12)
        self.templates = spec.burst_amplitude * raw / norms
        self.profiles = []
        for _ in range(spec.num_speakers):
            cluster = int(rng.integers(spec.num_clusters))
            gender = int(rng.integers(2))
            centroid = self.cluster_means[cluster] + rng.normal(0.0, spec.speaker_scale, d)
            self.profiles.append(SpeakerProfile(centroid, gender, cluster))
        self.rng = rng  # positioned after all latent draws


def speaker_profiles(spec: SynthSpec):
    """The per-speaker latent factors for a spec (same draws as generate)."""
    return list(_World(spec).profiles)


def _balanced_classes(rng, n_items: int, n_classes: int) -> np.ndarray:
    """Shuffled near-balanced class assignment: counts differ by at most 1."""
    reps = -(-n_items // n_classes)
    arr = np.tile(np.arange(n_classes), reps)[:n_items]
    rng.shuffle(arr)
    return arr


def generate(spec: SynthSpec):
    """Produce the full corpus for a spec, deterministically."""
    world = _World(spec)
    rng = world.rng
    utts = []
    uid = 0
    for s, profile in enumerate(world.profiles):
        nuisances = _balanced_classes(rng, spec.utts_per_speaker, spec.nuisance_types)
        rates = _balanced_classes(rng, spec.utts_per_speaker, len(spec.rate_classes))
        for j in range(spec.utts_per_speaker):
            nu = int(nuisances[j])
            rate_idx = int(rates[j])
            t = _frame_count(spec.rate_classes[rate_idx], spec.frames_per_utt)
            words = 0
            placements = []
            if spec.bursts_per_utt > 0:
                chosen = rng.choice(spec.lexicon_size, spec.bursts_per_utt, replace=False)
                positions = rng.integers(0, t - spec.burst_len + 1, spec.bursts_per_utt)
                for w, pos in zip(chosen, positions):
                    words |= 1 << int(w)
                    placements.append((int(w), int(pos)))
            noise = rng.uniform(-_UNIFORM_HALF_WIDTH, _UNIFORM_HALF_WIDTH, (t, spec.input_dim))
            scale = (
                spec.noise_scale
                * world.nuisance_noise[nu]
                * world.gender_scales[profile.gender]
            )
            frames = profile.centroid + world.nuisance_offsets[nu] + noise * scale
            for w, pos in placements:
                frames[pos : pos + spec.burst_len] += world.templates[w]
            utts.append(
                LabeledUtterance(
                    uid=uid,
                    frames=FrameSequence(frames),
                    speaker=s,
                    gender=profile.gender,
                    nuisance=nu,
                    rate=rate_idx,
                    words=words,
                )
            )
            uid += 1
    return utts


def split_indices(labels, train_frac: float, seed: int = 0, stratify: bool = True):
    """Seeded train/test index split; stratified keeps >= 1 item of every
    class on each side (classes with a single item are an error)."""
    if not 0.0 < train_frac < 1.0:
        raise ValueError("train_frac must lie in (0, 1)")
    labels = list(labels)
    n = len(labels)
    if n < 2:
        raise ValueError("need at least 2 items to split")
    rng = np.random.default_rng(seed)
    if not stratify:
        order = rng.permutation(n)
        cut = min(max(int(round(train_frac * n)), 1), n - 1)
        return sorted(order[:cut].tolist()), sorted(order[cut:].tolist())
    groups = {}
    for idx, lab in enumerate(labels):
        groups.setdefault(lab, []).append(idx)
    train, test = [], []
    for lab in sorted(groups, key=repr):
        members = np.array(groups[lab])
        if len(members) < 2:
            raise ValueError(f"label class {lab!r} has fewer than 2 utterances")
        order = rng.permutation(len(members))
        cut = min(max(int(round(train_frac * len(members))), 1), len(members) - 1)
        train.extend(members[order[:cut]].tolist())
        test.extend(members[order[cut:]].tolist())
    return sorted(train), sorted(test)


def split(data, train_frac: float, label_fn=None, seed: int = 0):
    """Stratified utterance-level split into (train, test) lists.

    ``label_fn`` extracts the stratification label (speaker id by
    default). The two sides are disjoint and exhaust the input.
    """
    if label_fn is None:
        label_fn = lambda u: u.speaker
    labels = [label_fn(u) for u in data]
    tr, te = split_indices(labels, train_frac, seed=seed, stratify=True)
    return [data[i] for i in tr], [data[i] for i in te]


def build_trials(data, num_target: int, num_nontarget: int, seed: int = 0):
    """Sample unique same-speaker and cross-speaker utterance pairs.

    Sampling is without replacement from the exhaustive pair enumeration;
    asking for more pairs than exist raises.
    """
    if num_target < 0 or num_nontarget < 0:
        raise ValueError("trial counts must be >= 0")
    if num_target == 0 or num_nontarget == 0:
        warnings.warn(
            "trial list lacks a class: EER/minDCF will be undefined downstream",
            stacklevel=2,
        )
    same, cross = [], []
    items = [(u.uid, u.speaker) for u in data]
    for i in range(len(items)):
        for j in range(i + 1, len(items)):
            if items[i][1] == items[j][1]:
                same.append((items[i][0], items[j][0]))
            else:
                cross.append((items[i][0], items[j][0]))
    if num_target > len(same):
        raise ValueError(f"requested {num_target} target trials, only {len(same)} pairs exist")
    if num_nontarget > len(cross):
        raise ValueError(
            f"requested {num_nontarget} nontarget trials, only {len(cross)} pairs exist"
        )
    rng = np.random.default_rng(seed)
    trials = []
    if num_target:
        for k in rng.choice(len(same), num_target, replace=False):
            a, b = same[int(k)]
            trials.append(Trial(a, b, TARGET))
    if num_nontarget:
        for k in rng.choice(len(cross), num_nontarget, replace=False):
            a, b = cross[int(k)]
            trials.append(Trial(a, b, NONTARGET))
    return trials


def save_corpus(path, utts) -> None:
    """Write the corpus: per utterance a header line
    ``id speaker gender nuisance rate T D words:<hex>`` followed by T
    frame rows. Round-trips bit-exactly."""
    with open(path, "w") as fh:
        for u in utts:
            fh.write(
                f"{u.uid} {u.speaker} {u.gender} {u.nuisance} {u.rate} "
                f"{u.frames.T} {u.frames.D} words:{u.words:x}\n"
            )
            for row in u.frames.data:
                fh.write(" ".join(_FLOAT_FMT % v for v in row) + "\n")


def load_corpus(path):
    utts = []
    with open(path) as fh:
        lines = [ln for ln in (l.strip() for l in fh) if ln]
    pos = 0
    while pos < len(lines):
        head = lines[pos].split()
        if len(head) != 8 or not head[7].startswith("words:"):
            raise ValueError(f"malformed corpus header: {lines[pos]!r}")
        uid, speaker, gender, nuisance, rate, t, d = (int(v) for v in head[:7])
        words = int(head[7][len("words:"):], 16)
        rows = np.array(
            [[float(v) for v in lines[pos + 1 + i].split()] for i in range(t)]
        )
        if rows.shape != (t, d):
            raise ValueError(f"utterance {uid}: expected {t}x{d} frames, got {rows.shape}")
        utts.append(
            LabeledUtterance(
                uid=uid,
                frames=FrameSequence(rows),
                speaker=speaker,
                gender=gender,
                nuisance=nuisance,
                rate=rate,
                words=words,
            )
        )
        pos += 1 + t
    return utts
