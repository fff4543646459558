"""Alternating seed-growing / erasing-classifier training for one stream."""
from __future__ import annotations

import io
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import numerics as nx
from .adversarial import AGGREGATIONS, classification_loss, classify, erase
from .corpus import Corpus
from .seeding import SeedLabelMap
from .ssg import HIDDEN, Leaves, SsgParams, class_thresholds, grow_step, seeding_loss, ssg_forward

log = logging.getLogger(__name__)

CKPT_MAGIC = b"ASSGCKPT"
CKPT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class CheckpointFormatError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-4
    theta_gf: float = 0.99
    theta_gb: float = 0.99
    theta_a: float = 0.4
    seed: int = 0
    stream: str = "rgb"
    hidden: int = HIDDEN
    aggregation: str = "sap"
    use_classifier: bool = True

    def validate(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        for name in ("theta_gf", "theta_gb"):
            if not 0 < getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")
        if not 0 < self.theta_a < 1:
            raise ValueError("theta_a must lie in (0, 1)")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")


@dataclass
class EpochStats:
    epoch: int
    l_seed: float
    l_class: float
    labeled_fraction: float


@dataclass
class TrainState:
    config: TrainConfig
    params: SsgParams
    adam: nx.AdamState
    labels: dict[str, SeedLabelMap]
    epoch: int = 0
    history: list[EpochStats] = field(default_factory=list)

    def labeled_fraction(self) -> float:
        total = sum(lm.n for lm in self.labels.values())
        return sum(lm.n_labeled for lm in self.labels.values()) / max(total, 1)


def init_state(corpus: Corpus, seeds: Mapping[str, SeedLabelMap], cfg: TrainConfig) -> TrainState:
    cfg.validate()
    videos = corpus.split("train")
    if not videos:
        raise TrainingError("training split is empty")
    labels = {}
    for v in videos:
        if v.id not in seeds:
            raise TrainingError(f"no seeds for video {v.id}")
        lm = seeds[v.id]
        if lm.n != v.n_segments:
            raise TrainingError(f"seeds for {v.id} cover {lm.n} segments, video has {v.n_segments}")
        if lm.n_labeled == 0:
            raise TrainingError(f"video {v.id} has zero seeds")
        labels[v.id] = lm.copy()
    params = SsgParams.init(np.random.default_rng(cfg.seed), videos[0].k_dims, corpus.num_classes, cfg.hidden)
    return TrainState(cfg, params, nx.AdamState.zeros_like(params.arrays(), lr=cfg.lr), labels)


def _check_finite(loss: nx.Tensor, what: str, vid: str, epoch: int) -> float:
    value = float(loss.value[0, 0])
    if not np.isfinite(value):
        raise TrainingError(f"non-finite {what} ({value}) on video {vid} at epoch {epoch}")
    return value


def train_stream(
    corpus: Corpus,
    seeds: Mapping[str, SeedLabelMap] | None,
    cfg: TrainConfig,
    resume: TrainState | None = None,
) -> TrainState:
    """Train one stream until ``cfg.epochs`` epochs are complete.

    Per video, in a per-epoch shuffled order: forward, one growing sweep on
    that video's label map, an Adam step on the seeding loss, then a fresh
    forward, erasing, pooling, and an Adam step on the classification loss.
    Passing ``resume`` continues a previous state bit-exactly.
    """
    state = resume if resume is not None else init_state(corpus, seeds, cfg)
    cfg.validate()
    videos = corpus.split("train")
    stream = cfg.stream
    thresholds = class_thresholds(corpus.num_classes, cfg.theta_gf, cfg.theta_gb)
    # the state's arrays are updated in place
    arrays = state.params.arrays()
    adam = state.adam

    while state.epoch < cfg.epochs:
        epoch = state.epoch
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(videos))
        seed_sum = class_sum = 0.0
        for i in order:
            v = videos[i]
            fs = v.streams[stream]

            leaves = Leaves.of(SsgParams.from_arrays(arrays))
            cache = ssg_forward(leaves, fs)
            state.labels[v.id], _ = grow_step(cache.heatmap, state.labels[v.id], thresholds)
            loss = seeding_loss(cache.log_H, state.labels[v.id])
            seed_sum += _check_finite(loss, "seeding loss", v.id, epoch)
            grads = nx.backward(loss, leaves.as_list())
            nx.adam_update_inplace(arrays, grads, adam)

            if cfg.use_classifier:
                leaves = Leaves.of(SsgParams.from_arrays(arrays))
                cache = ssg_forward(leaves, fs)
                out = classify(cache, erase(cache, cfg.theta_a), cfg.aggregation)
                loss = classification_loss(out, v.labels)
                class_sum += _check_finite(loss, "classification loss", v.id, epoch)
                grads = nx.backward(loss, leaves.as_list())
                nx.adam_update_inplace(arrays, grads, adam)

        state.params = SsgParams.from_arrays(arrays)
        state.adam = adam
        state.epoch += 1
        stats = EpochStats(state.epoch, seed_sum / len(videos), class_sum / len(videos), state.labeled_fraction())
        state.history.append(stats)
        log.info("%s epoch %d: l_seed=%.4f l_class=%.4f labeled=%.3f",
                 stream, stats.epoch, stats.l_seed, stats.l_class, stats.labeled_fraction)
    return state


def predict_heatmap(params: SsgParams, fs) -> np.ndarray:
    return ssg_forward(Leaves.of(params, trainable=False), fs).heatmap


# ---------------------------------------------------------------------------
# checkpoint files
#
# magic(8) | u32 version | u32 meta length | meta JSON | u32 section count |
# per section: u16 name length, name, u32 rows, u32 cols | f64 LE payloads in table order


def write_blob(path, meta: dict, arrays: Mapping[str, np.ndarray]) -> None:
    buf = io.BytesIO()
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<II", CKPT_VERSION, len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(arrays)))
    for name, a in arrays.items():
        nb = name.encode()
        rows, cols = np.asarray(a).reshape(a.shape[0], -1).shape
        buf.write(struct.pack("<H", len(nb)) + nb + struct.pack("<II", rows, cols))
    for a in arrays.values():
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def read_blob(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointFormatError(f"{path}: truncated at offset {pos} (wanted {n} bytes)")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    if take(8) != CKPT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic")
    version, meta_len = struct.unpack("<II", take(8))
    if version != CKPT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version}")
    try:
        meta = json.loads(take(meta_len))
    except json.JSONDecodeError as exc:
        raise CheckpointFormatError(f"{path}: corrupt metadata ({exc})") from exc
    (count,) = struct.unpack("<I", take(4))
    table = []
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode()
        rows, cols = struct.unpack("<II", take(8))
        table.append((name, rows, cols))
    arrays = {}
    for name, rows, cols in table:
        arrays[name] = np.frombuffer(take(rows * cols * 8), dtype="<f8").reshape(rows, cols).astype(np.float64)
    if pos != len(raw):
        raise CheckpointFormatError(f"{path}: {len(raw) - pos} trailing bytes at offset {pos}")
    return meta, arrays


def save_checkpoint(state: TrainState, path) -> None:
    names = SsgParams.names()
    arrays = {}
    for n, a in zip(names, state.params.arrays()):
        arrays[f"param.{n}"] = a
    for n, a in zip(names, state.adam.m):
        arrays[f"adam_m.{n}"] = a
    for n, a in zip(names, state.adam.v):
        arrays[f"adam_v.{n}"] = a
    a = state.adam
    meta = {
        "kind": "assg-train-state",
        "config": asdict(state.config),
        "epoch": state.epoch,
        "history": [asdict(h) for h in state.history],
        "adam": {"t": a.t, "lr": a.lr, "beta1": a.beta1, "beta2": a.beta2, "eps": a.eps},
        "num_classes": state.params.num_classes,
        "labels": {vid: lm.state.tolist() for vid, lm in state.labels.items()},
    }
    write_blob(path, meta, arrays)


def load_checkpoint(path) -> TrainState:
    meta, arrays = read_blob(path)
    if meta.get("kind") != "assg-train-state":
        raise CheckpointFormatError(f"{path}: not a training checkpoint")
    names = SsgParams.names()
    try:
        params = SsgParams.from_arrays([arrays[f"param.{n}"] for n in names])
        ad = meta["adam"]
        adam = nx.AdamState([arrays[f"adam_m.{n}"] for n in names], [arrays[f"adam_v.{n}"] for n in names],
                            ad["t"], ad["lr"], ad["beta1"], ad["beta2"], ad["eps"])
        C = meta["num_classes"]
        labels = {vid: SeedLabelMap(np.asarray(s, dtype=np.int64), C) for vid, s in meta["labels"].items()}
        history = [EpochStats(**h) for h in meta["history"]]
        cfg = TrainConfig(**meta["config"])
    except (KeyError, TypeError) as exc:
        raise CheckpointFormatError(f"{path}: missing field {exc}") from exc
    return TrainState(cfg, params, adam, labels, meta["epoch"], history)


def history_csv(state: TrainState) -> str:
    lines = ["epoch,l_seed,l_class,labeled_fraction"]
    lines += [f"{h.epoch},{h.l_seed!r},{h.l_class!r},{h.labeled_fraction!r}" for h in state.history]
    return "\n".join(lines) + "\n"
