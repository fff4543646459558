"""Two-stream fusion, threshold-run proposals, interval scoring, and per-class NMS."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

DEFAULT_THRESHOLDS = tuple(round(0.1 * i, 1) for i in range(1, 10))


@dataclass(frozen=True)
class Proposal:
    cls: int
    start: int
    end: int  # inclusive
    score: float = 0.0

    @property
    def length(self) -> int:
        return self.end - self.start + 1


@dataclass
class DetectConfig:
    fusion_ratio: float = 0.3  # weight of the RGB stream
    thresholds: Sequence[float] = field(default_factory=lambda: list(DEFAULT_THRESHOLDS))
    nms_iou: float = 0.5
    min_length: int = 1

    def validate(self) -> None:
        if not 0 <= self.fusion_ratio <= 1:
            raise ValueError("fusion_ratio must lie in [0, 1]")
        if not self.thresholds or any(not 0 < t < 1 for t in self.thresholds):
            raise ValueError("detection thresholds must be a non-empty list in (0, 1)")
        if self.min_length < 1:
            raise ValueError("min_length must be >= 1")


def fuse_heatmaps(h_rgb: np.ndarray, h_flow: np.ndarray, ratio: float) -> np.ndarray:
    """Convex combination ``ratio * rgb + (1 - ratio) * flow``."""
    h_rgb, h_flow = np.asarray(h_rgb), np.asarray(h_flow)
    if h_rgb.shape != h_flow.shape:
        raise ValueError(f"heatmap shapes differ: {h_rgb.shape} vs {h_flow.shape}")
    if ratio == 1:
        return h_rgb.copy()
    if ratio == 0:
        return h_flow.copy()
    return ratio * h_rgb + (1.0 - ratio) * h_flow


def runs_above(row: np.ndarray, threshold: float) -> list[tuple[int, int]]:
    """Maximal runs of consecutive indices with ``row >= threshold``, inclusive ends."""
    on = np.concatenate([[False], np.asarray(row) >= threshold, [False]])
    edges = np.flatnonzero(on[1:] != on[:-1])
    return [(int(s), int(e) - 1) for s, e in zip(edges[::2], edges[1::2])]


def generate_proposals(fused: np.ndarray, cfg: DetectConfig) -> list[Proposal]:
    """Unscored intervals for every action class (rows 1..C) and threshold, de-duplicated."""
    seen: set[tuple[int, int, int]] = set()
    out = []
    for c in range(1, fused.shape[0]):
        for th in cfg.thresholds:
            for s, e in runs_above(fused[c], th):
                if e - s + 1 >= cfg.min_length and (c, s, e) not in seen:
                    seen.add((c, s, e))
                    out.append(Proposal(c, s, e))
    return out


def score_proposal(fused: np.ndarray, p: Proposal) -> float:
    """Mean fused probability of the proposal's class over its interval."""
    return float(fused[p.cls, p.start:p.end + 1].sum() / (p.end - p.start + 1))


def temporal_iou(a, b) -> float:
    """IoU of inclusive segment intervals ``(start, end)``, counted in segments."""
    inter = min(a[1], b[1]) - max(a[0], b[0]) + 1
    if inter <= 0:
        return 0.0
    union = (a[1] - a[0] + 1) + (b[1] - b[0] + 1) - inter
    return inter / union


def nms(proposals: Iterable[Proposal], iou_threshold: float = 0.5) -> list[Proposal]:
    """Greedy per-class suppression.

    Within a class, proposals are visited by score (descending), then earlier
    start, then smaller end; one is kept iff its IoU with every proposal
    already kept for that class is below ``iou_threshold``.
    """
    by_class: dict[int, list[Proposal]] = {}
    for p in proposals:
        by_class.setdefault(p.cls, []).append(p)
    kept = []
    for c in sorted(by_class):
        items = sorted(by_class[c], key=lambda p: (-p.score, p.start, p.end))
        s = np.array([p.start for p in items])
        e = np.array([p.end for p in items])
        alive = np.ones(len(items), dtype=bool)
        for i in range(len(items)):
            if not alive[i]:
                continue
            kept.append(items[i])
            inter = np.minimum(e, e[i]) - np.maximum(s, s[i]) + 1
            inter = np.maximum(inter, 0)
            union = (e - s + 1) + (e[i] - s[i] + 1) - inter
            alive &= ~(inter / union >= iou_threshold)
            alive[: i + 1] = False
    return kept


def detect_video(fused: np.ndarray, cfg: DetectConfig) -> list[Proposal]:
    scored = [Proposal(p.cls, p.start, p.end, score_proposal(fused, p)) for p in generate_proposals(fused, cfg)]
    return nms(scored, cfg.nms_iou)
