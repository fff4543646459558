"""CAS baseline classifier and initial seed extraction."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import numerics as nx
from .corpus import Corpus, FeatureSequence, VideoRecord, shot_change_signal

UNLABELED = -1


class SeedError(ValueError):
    pass


def glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_out, fan_in))


@dataclass
class SeedLabelMap:
    """Per-segment label state: -1 unlabeled, 0 background, 1..C action classes."""

    state: np.ndarray
    num_classes: int

    @classmethod
    def empty(cls, n: int, num_classes: int) -> "SeedLabelMap":
        return cls(np.full(n, UNLABELED, dtype=np.int64), num_classes)

    @classmethod
    def from_sets(cls, n: int, num_classes: int, sets: Mapping[int, Sequence[int]]) -> "SeedLabelMap":
        lm = cls.empty(n, num_classes)
        for c, idx in sets.items():
            idx = np.asarray(idx, dtype=np.int64)
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise SeedError(f"seed index outside [0, {n}) for class {c}")
            if np.any(lm.state[idx] != UNLABELED):
                raise SeedError(f"class {c} seeds overlap another class")
            lm.state[idx] = c
        return lm

    def copy(self) -> "SeedLabelMap":
        return SeedLabelMap(self.state.copy(), self.num_classes)

    @property
    def n(self) -> int:
        return self.state.shape[0]

    def indices(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.state == c)

    def sets(self) -> dict[int, list[int]]:
        return {c: self.indices(c).tolist() for c in range(self.num_classes + 1)}

    @property
    def n_labeled(self) -> int:
        return int((self.state != UNLABELED).sum())


# ---------------------------------------------------------------------------
# CAS baseline


@dataclass
class CasBaselineParams:
    W: np.ndarray  # C x K class weights
    b: np.ndarray  # C x 1
    wa: np.ndarray  # 1 x K attention weights
    ba: np.ndarray  # 1 x 1
    adam: nx.AdamState | None = None

    def arrays(self) -> list[np.ndarray]:
        return [self.W, self.b, self.wa, self.ba]

    @classmethod
    def init(cls, rng: np.random.Generator, k: int, num_classes: int) -> "CasBaselineParams":
        return cls(glorot(rng, num_classes, k), np.zeros((num_classes, 1)), glorot(rng, 1, k), np.zeros((1, 1)))


def multi_hot_target(labels: Sequence[int], num_classes: int) -> np.ndarray:
    """Video label target over classes 1..C, normalized to sum 1 (C x 1)."""
    if not labels:
        raise SeedError("empty label set")
    y = np.zeros((num_classes, 1))
    for c in labels:
        y[c - 1, 0] = 1.0
    return y / y.sum()


def _baseline_graph(leaves, X: nx.Tensor):
    W, b, wa, ba = leaves
    logits = nx.pointwise_affine(W, b, X)  # C x N
    att = nx.softmax(nx.pointwise_affine(wa, ba, X), axis=1)  # 1 x N
    video_logits = nx.matmul(logits, nx.transpose(att))  # C x 1
    return logits, att, video_logits


def baseline_loss(leaves, fs: FeatureSequence, labels: Sequence[int], num_classes: int) -> nx.Tensor:
    X = nx.const(fs.values.T)
    _, _, video_logits = _baseline_graph(leaves, X)
    y = multi_hot_target(labels, num_classes)
    return nx.scale(nx.dot_const(nx.log_softmax(video_logits, axis=0), y), -1.0)


def train_cas_baseline(
    corpus: Corpus, stream: str, epochs: int = 30, lr: float = 1e-3, seed: int = 0, history: list | None = None
) -> CasBaselineParams:
    """Train the attention-pooled linear classifier on the train split.

    One video per update; video order is reshuffled each epoch from ``seed``.
    Mean per-epoch loss is appended to ``history`` when given.
    """
    videos = corpus.split("train")
    if not videos:
        raise SeedError("training split is empty")
    C, K = corpus.num_classes, videos[0].k_dims
    params = CasBaselineParams.init(np.random.default_rng(seed), K, C)
    state = nx.AdamState.zeros_like(params.arrays(), lr=lr)
    arrays = params.arrays()
    for epoch in range(epochs):
        order = np.random.default_rng([seed, epoch]).permutation(len(videos))
        total = 0.0
        for i in order:
            v = videos[i]
            leaves = [nx.param(a) for a in arrays]
            loss = baseline_loss(leaves, v.streams[stream], v.labels, C)
            grads = nx.backward(loss, leaves)
            arrays, state = nx.adam_update(arrays, grads, state)
            total += loss.value[0, 0]
        if history is not None:
            history.append(total / len(videos))
    return CasBaselineParams(*arrays, adam=state)


def _minmax_rows(x: np.ndarray) -> np.ndarray:
    lo = x.min(axis=1, keepdims=True)
    span = x.max(axis=1, keepdims=True) - lo
    out = np.zeros_like(x)
    ok = span[:, 0] > 0
    out[ok] = (x[ok] - lo[ok]) / span[ok]
    return out


def cas_logits(params: CasBaselineParams, fs: FeatureSequence) -> np.ndarray:
    return params.W @ fs.values.T + params.b


def compute_cas(params: CasBaselineParams, fs: FeatureSequence) -> np.ndarray:
    """Per-class activation sequence (C x N), each row min-max scaled to [0, 1].

    Rows that are constant over the video map to all zeros.
    """
    return _minmax_rows(cas_logits(params, fs))


def baseline_video_probs(params: CasBaselineParams, fs: FeatureSequence) -> np.ndarray:
    leaves = [nx.const(a) for a in params.arrays()]
    _, _, video_logits = _baseline_graph(leaves, nx.const(fs.values.T))
    return nx.softmax(video_logits, axis=0).value[:, 0]


# ---------------------------------------------------------------------------
# seed extraction


def extract_foreground_seeds(cas: np.ndarray, labels: Sequence[int], theta_seed: float = 0.9) -> dict[int, np.ndarray]:
    """Peaks of the labeled classes' CAS rows at or above ``theta_seed``.

    ``cas`` is C x N with class c in row c-1. A location picked by several
    classes goes to the larger CAS value, ties to the smaller class id.
    """
    C, N = cas.shape
    labels = sorted(set(labels))
    cand = np.zeros((C, N), dtype=bool)
    for c in labels:
        cand[c - 1] = cas[c - 1] >= theta_seed
    # per location, winner among candidate classes (argmax picks the first on ties)
    scores = np.where(cand, cas, -np.inf)
    winner = scores.argmax(axis=0) + 1
    any_cand = cand.any(axis=0)
    return {c: np.flatnonzero(any_cand & (winner == c)) if c in labels else np.array([], dtype=np.int64)
            for c in range(1, C + 1)}


def extract_background_seeds(
    saliency: np.ndarray,
    cas: np.ndarray,
    theta_bg_sal: float = 0.8,
    theta_bg_cas: float = 0.2,
    foreground: Mapping[int, np.ndarray] | None = None,
    classes: Sequence[int] | None = None,
) -> np.ndarray:
    """Strong shot changes with weak action evidence, minus foreground seeds.

    Action evidence is the max CAS over ``classes`` (default: every class).
    Rows of classes absent from the video are stretched noise after per-video
    normalization, so callers that know the video labels should pass them.
    """
    rows = cas if classes is None else cas[[c - 1 for c in sorted(set(classes))]]
    pick = (np.asarray(saliency) >= theta_bg_sal) & (rows.max(axis=0) <= theta_bg_cas)
    if foreground:
        for idx in foreground.values():
            pick[np.asarray(idx, dtype=np.int64)] = False
    return np.flatnonzero(pick)


def seed_video(
    params: CasBaselineParams,
    video: VideoRecord,
    stream: str,
    num_classes: int,
    theta_seed: float = 0.9,
    theta_bg_sal: float = 0.8,
    theta_bg_cas: float = 0.2,
) -> SeedLabelMap:
    fs = video.streams[stream]
    cas = compute_cas(params, fs)
    fg = extract_foreground_seeds(cas, video.labels, theta_seed)
    bg = extract_background_seeds(shot_change_signal(fs), cas, theta_bg_sal, theta_bg_cas, fg, video.labels)
    return SeedLabelMap.from_sets(fs.n_segments, num_classes, {0: bg, **fg})


def write_seeds(path, video_id: str, stream: str, labels: SeedLabelMap) -> None:
    doc = {"video_id": video_id, "stream": stream,
           "seeds": {str(c): idx for c, idx in labels.sets().items()}}
    Path(path).write_text(json.dumps(doc))


def read_seeds(path, n: int, num_classes: int) -> tuple[str, str, SeedLabelMap]:
    doc = json.loads(Path(path).read_text())
    sets = {int(c): idx for c, idx in doc["seeds"].items()}
    return doc["video_id"], doc["stream"], SeedLabelMap.from_sets(n, num_classes, sets)
