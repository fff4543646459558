"""Temporal detection metrics: AP per class, mAP@IoU, and average mAP."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .corpus import VideoRecord
from .detector import temporal_iou

THUMOS_THRESHOLDS = (0.1, 0.2, 0.3, 0.4, 0.5)


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class Detection:
    video_id: str
    cls: int
    start: int
    end: int
    score: float

    def to_json(self) -> dict:
        return {"video_id": self.video_id, "class": self.cls, "start": self.start, "end": self.end,
                "score": self.score}

    @classmethod
    def from_json(cls, d: dict) -> "Detection":
        return cls(str(d["video_id"]), int(d["class"]), int(d["start"]), int(d["end"]), float(d["score"]))


def average_precision(predictions: Sequence, ground_truths: Sequence, iou_threshold: float) -> float:
    """Area under the precision/recall curve for one class.

    ``predictions`` are ``(video_id, start, end, score)`` and ``ground_truths``
    ``(video_id, start, end)``. Predictions are visited by descending score
    (stable), each matched to the unmatched ground truth of highest IoU in the
    same video; it counts as a hit when that IoU reaches the threshold.
    Raises if there are no ground truths, since AP is then undefined.
    """
    if not ground_truths:
        raise EvaluationError("average precision is undefined without ground truth")
    per_video: dict[str, list[int]] = {}
    for j, g in enumerate(ground_truths):
        per_video.setdefault(g[0], []).append(j)
    used = [False] * len(ground_truths)
    order = sorted(range(len(predictions)), key=lambda i: -predictions[i][3])

    hits = 0
    ap = 0.0
    for rank, i in enumerate(order, start=1):
        vid, s, e, _ = predictions[i]
        best, best_j = -1.0, -1
        for j in per_video.get(vid, ()):
            if used[j]:
                continue
            iou = temporal_iou((s, e), ground_truths[j][1:3])
            if iou > best:
                best, best_j = iou, j
        if best_j >= 0 and best >= iou_threshold:
            used[best_j] = True
            hits += 1
            ap += hits / rank
    return ap / len(ground_truths)


@dataclass
class EvalReport:
    thresholds: list[float]
    ap: dict[float, dict[int, float]] = field(default_factory=dict)
    map: dict[float, float] = field(default_factory=dict)
    ave_map: float = 0.0

    def to_json(self) -> dict:
        return {
            "thresholds": self.thresholds,
            "ap": {repr(t): {str(c): v for c, v in row.items()} for t, row in self.ap.items()},
            "map": {repr(t): v for t, v in self.map.items()},
            "ave_map": self.ave_map,
        }

    def to_csv(self) -> str:
        lines = ["threshold,class,ap"]
        for t in self.thresholds:
            lines += [f"{t!r},{c},{v!r}" for c, v in self.ap[t].items()]
        lines.append("threshold,map")
        lines += [f"{t!r},{self.map[t]!r}" for t in self.thresholds]
        lines.append("ave_map")
        lines.append(repr(self.ave_map))
        return "\n".join(lines) + "\n"

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1)


def evaluate(detections: Iterable[Detection], videos: Sequence[VideoRecord],
             thresholds: Sequence[float] = THUMOS_THRESHOLDS) -> EvalReport:
    """AP per (class, threshold) pooled over ``videos``; mAP over classes with ground truth."""
    known = {v.id for v in videos}
    dets = list(detections)
    for d in dets:
        if d.video_id not in known:
            raise EvaluationError(f"detection references unknown video {d.video_id!r}")
    gts: dict[int, list[tuple[str, int, int]]] = {}
    for v in videos:
        for g in v.ground_truth:
            gts.setdefault(g.cls, []).append((v.id, g.start, g.end))
    preds: dict[int, list[tuple[str, int, int, float]]] = {}
    for d in dets:
        preds.setdefault(d.cls, []).append((d.video_id, d.start, d.end, d.score))

    report = EvalReport(thresholds=[float(t) for t in thresholds])
    for t in report.thresholds:
        row = {c: average_precision(preds.get(c, []), gts[c], t) for c in sorted(gts)}
        report.ap[t] = row
        report.map[t] = sum(row.values()) / len(row) if row else 0.0
    report.ave_map = sum(report.map.values()) / len(report.map) if report.map else 0.0
    return report
