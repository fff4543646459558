"""Run configuration and the on-disk pipeline stages behind the CLI.

Layout under ``output_dir``::

    corpus/manifest.json, corpus/features/*.feat
    baseline/<stream>.ckpt, baseline/cas/<video>_<stream>.csv
    seeds/<stream>/<video>.json
    train/<stream>.ckpt, train/<stream>_history.csv
    detect/detections.json
    eval/report.json, eval/report.csv
    plots/<video>.csv, plots/<video>.svg
    ablate/<which>.json, ablate/<which>.csv, ablate/runs/<fingerprint>.json
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import zlib
from dataclasses import asdict
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from . import seeding
from .corpus import STREAMS, Corpus, GenConfig, generate_corpus, read_corpus, write_corpus
from .detector import DetectConfig, detect_video, fuse_heatmaps
from .evaluator import THUMOS_THRESHOLDS, Detection, EvalReport, evaluate
from .seeding import CasBaselineParams, SeedLabelMap
from .ssg import heatmap_csv
from .trainer import (
    CheckpointFormatError, TrainConfig, load_checkpoint, predict_heatmap, read_blob, save_checkpoint, train_stream,
    write_blob, history_csv,
)

log = logging.getLogger(__name__)

SEED_ENV = "ASSG_SEED"


class PipelineError(RuntimeError):
    """A stage cannot run; ``kind`` is a short machine-readable tag."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


# ---------------------------------------------------------------------------
# configuration


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GenSection(_Section):
    num_classes: int = 5
    n_segments: int = 100
    k_dims: int = 32
    train_videos: int = 200
    test_videos: int = 50
    instances_per_video: tuple[int, int] = (1, 3)
    labels_per_video: tuple[int, int] = (1, 2)
    length_fraction: tuple[float, float] = (0.08, 0.25)
    sigma: float = 0.3
    separation: float = 2.0
    edge_strength: float = 0.4
    edge_fraction: float = 0.3


class SeedSection(_Section):
    baseline_epochs: int = 30
    baseline_lr: float = 1e-3
    theta_seed: float = 0.9
    theta_bg_sal: float = 0.8
    theta_bg_cas: float = 0.2


class TrainSection(_Section):
    epochs: int = 100
    lr: float = 1e-4
    theta_gf: float = 0.99
    theta_gb: float = 0.99
    theta_a: float = 0.4
    hidden: int = 128
    aggregation: Literal["sap", "gmp", "gap"] = "sap"
    use_classifier: bool = True


class TrainStreams(_Section):
    rgb: TrainSection = Field(default_factory=TrainSection)
    flow: TrainSection = Field(default_factory=TrainSection)


class DetectSection(_Section):
    fusion_ratio: float = 0.3
    thresholds: list[float] = Field(default_factory=lambda: [round(0.1 * i, 1) for i in range(1, 10)])
    nms_iou: float = 0.5
    min_length: int = 1


class EvalSection(_Section):
    thresholds: list[float] = Field(default_factory=lambda: list(THUMOS_THRESHOLDS))


class RunConfig(_Section):
    rng_seed: int = 0
    output_dir: str = "runs/desk"
    gen: GenSection = Field(default_factory=GenSection)
    seed: SeedSection = Field(default_factory=SeedSection)
    train: TrainStreams = Field(default_factory=TrainStreams)
    detect: DetectSection = Field(default_factory=DetectSection)
    eval: EvalSection = Field(default_factory=EvalSection)

    @classmethod
    def load(cls, path=None, env=None) -> "RunConfig":
        """Parse a JSON config (defaults when ``path`` is None); ``ASSG_SEED`` overrides ``rng_seed``.

        A relative ``output_dir`` is resolved against the config file's directory.
        """
        env = os.environ if env is None else env
        if path is None:
            cfg, base = cls(), Path.cwd()
        else:
            path = Path(path)
            if not path.is_file():
                raise PipelineError("missing-input", f"config file not found: {path}")
            try:
                doc = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise PipelineError("bad-config", f"{path}: invalid JSON ({exc})") from exc
            cfg, base = cls.model_validate(doc), path.resolve().parent
        if env.get(SEED_ENV):
            try:
                cfg.rng_seed = int(env[SEED_ENV])
            except ValueError as exc:
                raise PipelineError("bad-config", f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from exc
        out = Path(cfg.output_dir)
        cfg.output_dir = str((out if out.is_absolute() else base / out).resolve())
        return cfg

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def gen_config(self) -> GenConfig:
        return GenConfig(seed=derive_seed(self.rng_seed, "gen"), **self.gen.model_dump())

    def train_config(self, stream: str, **overrides) -> TrainConfig:
        section = getattr(self.train, stream).model_dump()
        section.update(overrides)
        return TrainConfig(seed=derive_seed(self.rng_seed, f"train/{stream}"), stream=stream, **section)

    def detect_config(self, **overrides) -> DetectConfig:
        d = self.detect.model_dump()
        d.update(overrides)
        cfg = DetectConfig(**d)
        cfg.validate()
        return cfg


def derive_seed(rng_seed: int, tag: str) -> int:
    """Independent, reproducible per-stage seed from the run seed."""
    return int(np.random.SeedSequence([rng_seed, zlib.crc32(tag.encode())]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# shared loaders


def _need(path: Path, stage: str) -> Path:
    if not path.exists():
        raise PipelineError("missing-input", f"{path} not found; run `assg {stage}` first")
    return path


def load_corpus(cfg: RunConfig) -> Corpus:
    return read_corpus(_need(cfg.out / "corpus" / "manifest.json", "gen"))


def baseline_path(cfg: RunConfig, stream: str) -> Path:
    return cfg.out / "baseline" / f"{stream}.ckpt"


def load_baseline(cfg: RunConfig, stream: str) -> CasBaselineParams:
    meta, arrays = read_blob(_need(baseline_path(cfg, stream), "train-baseline"))
    if meta.get("kind") != "cas-baseline":
        raise CheckpointFormatError(f"{baseline_path(cfg, stream)}: not a baseline checkpoint")
    return CasBaselineParams(arrays["W"], arrays["b"], arrays["wa"], arrays["ba"])


def load_seeds(cfg: RunConfig, corpus: Corpus, stream: str) -> dict[str, SeedLabelMap]:
    root = cfg.out / "seeds" / stream
    out = {}
    for v in corpus.split("train"):
        vid, s, lm = seeding.read_seeds(_need(root / f"{v.id}.json", "seed"), v.n_segments, corpus.num_classes)
        if vid != v.id or s != stream:
            raise PipelineError("bad-input", f"{root / (v.id + '.json')} is for {vid}/{s}, expected {v.id}/{stream}")
        out[v.id] = lm
    return out


def checkpoint_path(cfg: RunConfig, stream: str) -> Path:
    return cfg.out / "train" / f"{stream}.ckpt"


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


# ---------------------------------------------------------------------------
# stages


def cmd_gen(cfg: RunConfig) -> Path:
    corpus = generate_corpus(cfg.gen_config())
    manifest = write_corpus(corpus, cfg.out / "corpus")
    log.info("wrote %d videos to %s", len(corpus.videos), manifest)
    return manifest


def cas_csv(cas: np.ndarray) -> str:
    lines = [",".join(["t"] + [f"class_{c}" for c in range(1, cas.shape[0] + 1)])]
    lines += [",".join([str(t)] + [repr(float(x)) for x in cas[:, t]]) for t in range(cas.shape[1])]
    return "\n".join(lines) + "\n"


def cmd_train_baseline(cfg: RunConfig) -> dict[str, CasBaselineParams]:
    corpus = load_corpus(cfg)
    out = {}
    for stream in STREAMS:
        hist: list[float] = []
        params = seeding.train_cas_baseline(corpus, stream, cfg.seed.baseline_epochs, cfg.seed.baseline_lr,
                                            derive_seed(cfg.rng_seed, f"baseline/{stream}"), hist)
        path = baseline_path(cfg, stream)
        path.parent.mkdir(parents=True, exist_ok=True)
        write_blob(path, {"kind": "cas-baseline", "stream": stream, "history": hist},
                   {"W": params.W, "b": params.b, "wa": params.wa, "ba": params.ba})
        for v in corpus.videos:
            _write(cfg.out / "baseline" / "cas" / f"{v.id}_{stream}.csv",
                   cas_csv(seeding.compute_cas(params, v.streams[stream])))
        log.info("%s baseline: loss %.4f -> %.4f", stream, hist[0] if hist else float("nan"),
                 hist[-1] if hist else float("nan"))
        out[stream] = params
    return out


def cmd_seed(cfg: RunConfig) -> dict[str, dict[str, SeedLabelMap]]:
    corpus = load_corpus(cfg)
    s = cfg.seed
    out = {}
    for stream in STREAMS:
        params = load_baseline(cfg, stream)
        maps = {}
        for v in corpus.split("train"):
            lm = seeding.seed_video(params, v, stream, corpus.num_classes, s.theta_seed, s.theta_bg_sal, s.theta_bg_cas)
            path = cfg.out / "seeds" / stream / f"{v.id}.json"
            path.parent.mkdir(parents=True, exist_ok=True)
            seeding.write_seeds(path, v.id, stream, lm)
            maps[v.id] = lm
        empty = [vid for vid, lm in maps.items() if lm.n_labeled == 0]
        if empty:
            log.warning("%s: %d videos have no seeds (first: %s)", stream, len(empty), empty[0])
        log.info("%s: %d seeded locations", stream, sum(lm.n_labeled for lm in maps.values()))
        out[stream] = maps
    return out


def cmd_train(cfg: RunConfig, stream: str, resume: bool = False):
    if stream not in STREAMS:
        raise PipelineError("bad-argument", f"unknown stream {stream!r}; expected one of {STREAMS}")
    corpus = load_corpus(cfg)
    tcfg = cfg.train_config(stream)
    ckpt = checkpoint_path(cfg, stream)
    if resume and ckpt.exists():
        state = load_checkpoint(ckpt)
        state.config = tcfg
        state = train_stream(corpus, None, tcfg, resume=state)
    else:
        state = train_stream(corpus, load_seeds(cfg, corpus, stream), tcfg)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(state, ckpt)
    _write(cfg.out / "train" / f"{stream}_history.csv", history_csv(state))
    return state


def stream_heatmaps(cfg: RunConfig, corpus: Corpus, split: str = "test") -> dict[str, dict[str, np.ndarray]]:
    maps = {}
    for stream in STREAMS:
        params = load_checkpoint(_need(checkpoint_path(cfg, stream), f"train --stream {stream}")).params
        maps[stream] = {v.id: predict_heatmap(params, v.streams[stream]) for v in corpus.split(split)}
    return maps


def detect_all(corpus: Corpus, maps: dict[str, dict[str, np.ndarray]], dcfg: DetectConfig,
               split: str = "test") -> list[Detection]:
    dets = []
    for v in corpus.split(split):
        fused = fuse_heatmaps(maps["rgb"][v.id], maps["flow"][v.id], dcfg.fusion_ratio)
        dets += [Detection(v.id, p.cls, p.start, p.end, p.score) for p in detect_video(fused, dcfg)]
    return sort_detections(dets)


def sort_detections(dets) -> list[Detection]:
    return sorted(dets, key=lambda d: (d.video_id, -d.score, d.cls, d.start, d.end))


def detections_json(dets) -> str:
    return json.dumps([d.to_json() for d in dets], indent=1) + "\n"


def read_detections(path) -> list[Detection]:
    path = Path(path)
    if not path.is_file():
        raise PipelineError("missing-input", f"{path} not found; run `assg detect` first")
    try:
        return [Detection.from_json(d) for d in json.loads(path.read_text())]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise PipelineError("bad-input", f"{path}: malformed detections ({exc})") from exc


def cmd_detect(cfg: RunConfig) -> Path:
    corpus = load_corpus(cfg)
    dets = detect_all(corpus, stream_heatmaps(cfg, corpus), cfg.detect_config())
    path = _write(cfg.out / "detect" / "detections.json", detections_json(dets))
    log.info("wrote %d detections to %s", len(dets), path)
    return path


def cmd_eval(cfg: RunConfig, detections=None) -> EvalReport:
    corpus = load_corpus(cfg)
    path = Path(detections) if detections else cfg.out / "detect" / "detections.json"
    report = evaluate(read_detections(path), corpus.split("test"), cfg.eval.thresholds)
    _write(cfg.out / "eval" / "report.json", report.dumps() + "\n")
    _write(cfg.out / "eval" / "report.csv", report.to_csv())
    return report


# ---------------------------------------------------------------------------
# plots

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"]


def heatmap_svg(H: np.ndarray, ground_truth, detections, title: str = "") -> str:
    """Line plot of every heatmap row with ground-truth and detection bands underneath."""
    n_cls, N = H.shape
    width, plot_h, band_h, pad = 900, 240, 14, 40
    C = n_cls - 1
    height = pad + plot_h + 2 * (C * band_h) + 3 * pad
    sx = (width - 2 * pad) / max(N - 1, 1)

    def x(t):
        return pad + t * sx

    def y(v):
        return pad + plot_h * (1.0 - v)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" '
             f'font-size="11">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{pad}" y="20" font-size="13">{title}</text>',
             f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{plot_h}" fill="none" stroke="#999"/>']
    for v in (0.0, 0.5, 1.0):
        parts.append(f'<text x="{pad - 28}" y="{y(v) + 4:.1f}">{v:.1f}</text>')
    for c in range(n_cls):
        color = "#777777" if c == 0 else _COLORS[(c - 1) % len(_COLORS)]
        dash = ' stroke-dasharray="4 3"' if c == 0 else ""
        pts = " ".join(f"{x(t):.2f},{y(float(H[c, t])):.2f}" for t in range(N))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{pts}"/>')
        label = "bg" if c == 0 else f"class {c}"
        parts.append(f'<text x="{width - pad + 4}" y="{pad + 14 * (c + 1)}" fill="{color}">{label}</text>')
    top = pad + plot_h + pad
    parts.append(f'<text x="{pad}" y="{top - 6}">ground truth</text>')
    for g in ground_truth:
        color = _COLORS[(g.cls - 1) % len(_COLORS)]
        parts.append(f'<rect x="{x(g.start) - sx / 2:.2f}" y="{top + (g.cls - 1) * band_h}" '
                     f'width="{(g.end - g.start + 1) * sx:.2f}" height="{band_h - 2}" fill="{color}" '
                     f'fill-opacity="0.8"/>')
    top += C * band_h + pad
    parts.append(f'<text x="{pad}" y="{top - 6}">detections</text>')
    for d in detections:
        color = _COLORS[(d.cls - 1) % len(_COLORS)]
        parts.append(f'<rect x="{x(d.start) - sx / 2:.2f}" y="{top + (d.cls - 1) * band_h}" '
                     f'width="{(d.end - d.start + 1) * sx:.2f}" height="{band_h - 2}" fill="{color}" '
                     f'fill-opacity="{0.15 + 0.75 * min(max(d.score, 0.0), 1.0):.3f}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_plot(cfg: RunConfig, video_id: str) -> tuple[Path, Path]:
    corpus = load_corpus(cfg)
    videos = corpus.by_id()
    if video_id not in videos:
        raise PipelineError("bad-argument", f"unknown video {video_id!r}")
    v = videos[video_id]
    maps = {}
    for stream in STREAMS:
        params = load_checkpoint(_need(checkpoint_path(cfg, stream), f"train --stream {stream}")).params
        maps[stream] = predict_heatmap(params, v.streams[stream])
    dcfg = cfg.detect_config()
    fused = fuse_heatmaps(maps["rgb"], maps["flow"], dcfg.fusion_ratio)
    dets = detect_video(fused, dcfg)
    csv_path = _write(cfg.out / "plots" / f"{video_id}.csv", heatmap_csv(fused))
    svg_path = _write(cfg.out / "plots" / f"{video_id}.svg", heatmap_svg(fused, v.ground_truth, dets, video_id))
    return csv_path, svg_path


# ---------------------------------------------------------------------------
# ablations

ABLATIONS = ("aggregation", "thresholds", "modules")
THETA_A_SWEEP = (0.3, 0.4, 0.5, 0.6, 0.7)
THETA_G_SWEEP = (0.8, 0.9, 0.95, 0.99)


def _fingerprint(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def cas_baseline_heatmap(params: CasBaselineParams, fs) -> np.ndarray:
    """Detection map for the baseline: normalized CAS times video probability, empty background row."""
    cas = seeding.compute_cas(params, fs)
    probs = seeding.baseline_video_probs(params, fs)
    return np.vstack([np.zeros((1, cas.shape[1])), cas * probs[:, None]])


def run_variant(cfg: RunConfig, corpus: Corpus, name: str, overrides: dict | None) -> EvalReport:
    """Train both streams with ``overrides`` (None = CAS baseline), detect, and evaluate; cached on disk."""
    doc = {"gen": cfg.gen.model_dump(), "seed": cfg.seed.model_dump(), "rng_seed": cfg.rng_seed,
           "detect": cfg.detect.model_dump(), "eval": cfg.eval.model_dump()}
    if overrides is None:
        doc["variant"] = "cas-baseline"
    else:
        doc["train"] = {s: asdict(cfg.train_config(s, **overrides)) for s in STREAMS}
    cache = cfg.out / "ablate" / "runs" / f"{_fingerprint(doc)}.json"
    if cache.exists():
        log.info("%s: cached (%s)", name, cache.name)
        return _report_from_json(json.loads(cache.read_text()))
    test = corpus.split("test")
    maps = {}
    for stream in STREAMS:
        if overrides is None:
            params = load_baseline(cfg, stream)
            maps[stream] = {v.id: cas_baseline_heatmap(params, v.streams[stream]) for v in test}
        else:
            state = train_stream(corpus, load_seeds(cfg, corpus, stream), cfg.train_config(stream, **overrides))
            maps[stream] = {v.id: predict_heatmap(state.params, v.streams[stream]) for v in test}
    report = evaluate(detect_all(corpus, maps, cfg.detect_config()), test, cfg.eval.thresholds)
    _write(cache, json.dumps({"name": name, "config": doc, "report": report.to_json()}, indent=1) + "\n")
    log.info("%s: ave-mAP %.4f", name, report.ave_map)
    return report


def _report_from_json(doc: dict) -> EvalReport:
    r = doc["report"]
    thresholds = [float(t) for t in r["thresholds"]]
    return EvalReport(
        thresholds,
        {float(t): {int(c): v for c, v in row.items()} for t, row in r["ap"].items()},
        {float(t): v for t, v in r["map"].items()},
        r["ave_map"],
    )


def ablation_variants(which: str) -> list[tuple[str, dict | None]]:
    if which == "aggregation":
        return [("GMP", {"aggregation": "gmp"}), ("GAP", {"aggregation": "gap"}), ("SAP", {"aggregation": "sap"})]
    if which == "modules":
        return [("CAS-baseline", None), ("SSG", {"use_classifier": False}), ("ASSG", {})]
    if which == "thresholds":
        rows: list[tuple[str, dict | None]] = [(f"theta_a={a}", {"theta_a": a}) for a in THETA_A_SWEEP]
        rows += [(f"theta_g={g}", {"theta_gf": g, "theta_gb": g}) for g in THETA_G_SWEEP]
        return rows
    raise PipelineError("bad-argument", f"unknown ablation {which!r}; expected one of {ABLATIONS}")


def cmd_ablate(cfg: RunConfig, which: str) -> list[tuple[str, EvalReport]]:
    variants = ablation_variants(which)
    corpus = load_corpus(cfg)
    rows = [(name, run_variant(cfg, corpus, name, ov)) for name, ov in variants]
    thresholds = cfg.eval.thresholds
    header = ["method"] + [f"map@{t}" for t in thresholds] + ["ave_map"]
    lines = [",".join(header)]
    for name, r in rows:
        lines.append(",".join([name] + [repr(r.map[t]) for t in thresholds] + [repr(r.ave_map)]))
    _write(cfg.out / "ablate" / f"{which}.csv", "\n".join(lines) + "\n")
    table = [{"method": name, "map": {repr(t): r.map[t] for t in thresholds}, "ave_map": r.ave_map}
             for name, r in rows]
    _write(cfg.out / "ablate" / f"{which}.json", json.dumps(table, indent=1) + "\n")
    return rows


def format_table(rows: list[tuple[str, EvalReport]], thresholds) -> str:
    head = f"{'method':<16}" + "".join(f"{'@' + str(t):>8}" for t in thresholds) + f"{'avg':>8}"
    lines = [head]
    for name, r in rows:
        lines.append(f"{name:<16}" + "".join(f"{100 * r.map[t]:8.1f}" for t in thresholds) + f"{100 * r.ave_map:8.1f}")
    return "\n".join(lines)
