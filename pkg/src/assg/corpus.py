"""Video records, synthetic corpus generation, and feature file I/O."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

STREAMS = ("rgb", "flow")
FEATURE_MAGIC = b"ASSGFEAT"
_HEADER = struct.Struct("<8sII")


class FormatError(ValueError):
    """A feature file or manifest does not follow the on-disk format."""


class GenerationError(ValueError):
    pass


@dataclass
class FeatureSequence:
    """N x K per-segment features of one stream (row t is segment t)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"feature sequence must be N x K with N, K >= 1, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature sequence contains non-finite values")
        self.values = v

    @property
    def n_segments(self) -> int:
        return self.values.shape[0]

    @property
    def k_dims(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Segment:
    cls: int
    start: int
    end: int  # inclusive


@dataclass
class VideoRecord:
    id: str
    streams: dict[str, FeatureSequence]
    labels: tuple[int, ...]
    ground_truth: list[Segment] = field(default_factory=list)
    split: str = "train"

    @property
    def n_segments(self) -> int:
        return self.streams["rgb"].n_segments

    @property
    def k_dims(self) -> int:
        return self.streams["rgb"].k_dims

    def validate(self, num_classes: int) -> None:
        rgb, flow = self.streams["rgb"], self.streams["flow"]
        if rgb.values.shape != flow.values.shape:
            raise ValueError(f"{self.id}: rgb/flow shapes differ")
        if not self.labels:
            raise ValueError(f"{self.id}: empty label set")
        if any(not 1 <= c <= num_classes for c in self.labels):
            raise ValueError(f"{self.id}: label outside 1..{num_classes}")
        n = self.n_segments
        for s in self.ground_truth:
            if not 0 <= s.start <= s.end < n:
                raise ValueError(f"{self.id}: ground truth {s} outside [0, {n})")
            if s.cls not in self.labels:
                raise ValueError(f"{self.id}: ground truth class {s.cls} not among labels")


@dataclass
class Corpus:
    videos: list[VideoRecord]
    num_classes: int

    def split(self, name: str) -> list[VideoRecord]:
        return [v for v in self.videos if v.split == name]

    def by_id(self) -> dict[str, VideoRecord]:
        return {v.id: v for v in self.videos}


@dataclass
class GenConfig:
    seed: int = 0
    num_classes: int = 5
    n_segments: int = 100
    k_dims: int = 32
    train_videos: int = 200
    test_videos: int = 50
    instances_per_video: tuple[int, int] = (1, 3)  # inclusive range, uniform
    labels_per_video: tuple[int, int] = (1, 2)
    length_fraction: tuple[float, float] = (0.08, 0.25)  # instance length as fraction of N
    sigma: float = 0.5
    separation: float = 1.0
    # amplitude of the class prototype on the outer edge_fraction of each
    # instance (each side); 1.0 keeps instances uniform
    edge_strength: float = 1.0
    edge_fraction: float = 0.0

    def validate(self) -> None:
        for name in ("num_classes", "n_segments", "k_dims", "train_videos"):
            if getattr(self, name) < 1:
                raise GenerationError(f"{name} must be positive")
        if self.test_videos < 0 or self.sigma < 0 or self.separation <= 0:
            raise GenerationError("test_videos, sigma must be >= 0 and separation > 0")
        lo, hi = self.instances_per_video
        if not 1 <= lo <= hi:
            raise GenerationError("instances_per_video must satisfy 1 <= lo <= hi")
        lo, hi = self.labels_per_video
        if not 1 <= lo <= hi <= self.num_classes:
            raise GenerationError("labels_per_video must satisfy 1 <= lo <= hi <= C")
        lo, hi = self.length_fraction
        if not 0 < lo <= hi < 1:
            raise GenerationError("length_fraction must lie in (0, 1)")
        if not 0 <= self.edge_fraction < 0.5 or not 0 <= self.edge_strength <= 1:
            raise GenerationError("edge_fraction in [0, 0.5), edge_strength in [0, 1]")


def _unit(rng: np.random.Generator, k: int) -> np.ndarray:
    v = rng.standard_normal(k)
    return v / np.linalg.norm(v)


def _place_instances(rng, n, classes, lengths) -> list[Segment]:
    """Place non-overlapping intervals, one per (class, length), with gaps >= 1."""
    total = sum(lengths) + len(lengths) - 1
    if total > n:
        raise GenerationError(f"cannot pack instances of lengths {lengths} into N={n}")
    slack = n - total
    # distribute the slack into len+1 gaps
    cuts = np.sort(rng.integers(0, slack + 1, size=len(lengths)))
    gaps = np.diff(np.concatenate([[0], cuts]))
    segs, pos = [], 0
    for c, length, gap in zip(classes, lengths, gaps):
        pos += int(gap)
        segs.append(Segment(int(c), pos, pos + length - 1))
        pos += length + 1
    return segs


def _profile(length: int, edge_fraction: float, edge_strength: float) -> np.ndarray:
    w = np.ones(length)
    if edge_fraction <= 0 or length < 3:
        return w
    e = min(int(round(edge_fraction * length)), (length - 1) // 2)
    if e > 0:
        w[:e] = edge_strength
        w[length - e:] = edge_strength
    return w


def generate_corpus(cfg: GenConfig) -> Corpus:
    """Draw a corpus of two-stream videos with known action intervals.

    Each class and each stream gets its own unit prototype, plus one background
    prototype per stream. An action segment emits ``separation * prototype``
    (scaled down to ``edge_strength`` near its ends when ``edge_fraction > 0``) plus
    isotropic Gaussian noise of scale ``sigma``; the two streams use disjoint
    prototypes and independent noise.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    C, N, K = cfg.num_classes, cfg.n_segments, cfg.k_dims
    protos = {s: np.stack([_unit(rng, K) for _ in range(C + 1)]) * cfg.separation for s in STREAMS}

    videos = []
    plan = [("train", i) for i in range(cfg.train_videos)] + [("test", i) for i in range(cfg.test_videos)]
    for split, i in plan:
        n_labels = int(rng.integers(cfg.labels_per_video[0], cfg.labels_per_video[1] + 1))
        labels = np.sort(rng.choice(np.arange(1, C + 1), size=n_labels, replace=False))
        n_inst = max(n_labels, int(rng.integers(cfg.instances_per_video[0], cfg.instances_per_video[1] + 1)))
        classes = list(labels) + list(rng.choice(labels, size=n_inst - n_labels))
        classes = list(rng.permutation(classes))
        lo, hi = cfg.length_fraction
        lengths = [max(1, int(round(rng.uniform(lo, hi) * N))) for _ in classes]
        gt = _place_instances(rng, N, classes, lengths)

        # mixing weight of the class prototype per segment; class index per segment
        weight = np.zeros(N)
        owner = np.zeros(N, dtype=int)
        for s in gt:
            weight[s.start:s.end + 1] = _profile(s.end - s.start + 1, cfg.edge_fraction, cfg.edge_strength)
            owner[s.start:s.end + 1] = s.cls

        streams = {}
        for s in STREAMS:
            P = protos[s]
            clean = np.where((owner > 0)[:, None], weight[:, None] * P[owner], P[0])
            noise = rng.standard_normal((N, K)) * cfg.sigma
            streams[s] = FeatureSequence(clean + noise)
        vid = VideoRecord(
            id=f"{split}_{i:04d}",
            streams=streams,
            labels=tuple(int(c) for c in labels),
            ground_truth=sorted(gt, key=lambda g: g.start),
            split=split,
        )
        vid.validate(C)
        videos.append(vid)
    return Corpus(videos=videos, num_classes=C)


# ---------------------------------------------------------------------------
# feature files


def write_features(path, fs: FeatureSequence) -> None:
    n, k = fs.values.shape
    payload = np.ascontiguousarray(fs.values, dtype="<f4").tobytes()
    Path(path).write_bytes(_HEADER.pack(FEATURE_MAGIC, n, k) + payload)


def read_features(path) -> FeatureSequence:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header at offset {len(raw)} (need {_HEADER.size} bytes)")
    magic, n, k = _HEADER.unpack_from(raw, 0)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at offset 0")
    expected = n * k * 4
    got = len(raw) - _HEADER.size
    if got < expected:
        raise FormatError(f"{path}: truncated payload at offset {len(raw)}; header N={n} K={k} needs {expected} bytes")
    if got > expected:
        raise FormatError(f"{path}: {got - expected} trailing bytes at offset {_HEADER.size + expected}; N*K mismatch")
    values = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(n, k).astype(np.float64)
    return FeatureSequence(values)


def write_corpus(corpus: Corpus, root) -> Path:
    """Write feature files plus ``manifest.json`` under ``root``."""
    root = Path(root)
    (root / "features").mkdir(parents=True, exist_ok=True)
    entries = []
    for v in corpus.videos:
        paths = {}
        for s in STREAMS:
            rel = f"features/{v.id}_{s}.feat"
            write_features(root / rel, v.streams[s])
            paths[s] = rel
        entries.append({
            "id": v.id,
            "n_segments": v.n_segments,
            "k_dims": v.k_dims,
            "labels": list(v.labels),
            "ground_truth": [{"class": g.cls, "start": g.start, "end": g.end} for g in v.ground_truth],
            "features": paths,
            "split": v.split,
        })
    manifest = root / "manifest.json"
    manifest.write_text(json.dumps({"num_classes": corpus.num_classes, "videos": entries}, indent=1))
    return manifest


def read_corpus(manifest) -> Corpus:
    manifest = Path(manifest)
    try:
        doc = json.loads(manifest.read_text())
        C = int(doc["num_classes"])
        videos = []
        for e in doc["videos"]:
            streams = {s: read_features(manifest.parent / e["features"][s]) for s in STREAMS}
            for s, fs in streams.items():
                if fs.values.shape != (e["n_segments"], e["k_dims"]):
                    raise FormatError(f"{e['id']}/{s}: features {fs.values.shape} disagree with manifest")
            v = VideoRecord(
                id=e["id"],
                streams=streams,
                labels=tuple(int(c) for c in e["labels"]),
                ground_truth=[Segment(int(g["class"]), int(g["start"]), int(g["end"])) for g in e["ground_truth"]],
                split=e["split"],
            )
            v.validate(C)
            videos.append(v)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{manifest}: malformed manifest ({exc})") from exc
    return Corpus(videos=videos, num_classes=C)


def shot_change_signal(fs: FeatureSequence) -> np.ndarray:
    """Consecutive-segment feature distance, min-max scaled to [0, 1].

    Stands in for a saliency detector: ``s[t] = ||x_t - x_{t-1}||`` with
    ``s[0] = 0``. A flat signal maps to all zeros.
    """
    x = fs.values
    s = np.zeros(x.shape[0])
    if x.shape[0] > 1:
        s[1:] = np.linalg.norm(np.diff(x, axis=0), axis=1)
    lo, hi = s.min(), s.max()
    if hi - lo <= 0:
        return np.zeros_like(s)
    return (s - lo) / (hi - lo)
