"""Erasing classifier branch: erase confident regions, pool what is left, classify."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nx
from .seeding import multi_hot_target
from .ssg import SsgForwardCache

AGGREGATIONS = ("sap", "gmp", "gap")


@dataclass
class ErasedFeatures:
    F_erased: nx.Tensor  # H x N, relu(F) with erased columns zeroed
    erased_mask: np.ndarray  # N booleans
    regions: dict[int, np.ndarray]  # class c -> erased locations U_c


@dataclass
class SapOutput:
    attention: nx.Tensor | None  # 1 x N; None for GMP/GAP
    segment_logits: nx.Tensor  # C x N
    video_logits: nx.Tensor  # C x 1

    @property
    def video_probs(self) -> np.ndarray:
        return nx.softmax(nx.const(self.video_logits.value), axis=0).value[:, 0]


def erase(cache: SsgForwardCache, theta_a: float = 0.4) -> ErasedFeatures:
    """Zero every column where some action class has ``H[c, t] > theta_a``.

    Background (row 0) is never used for erasing. The mask is a constant of
    the graph; gradients reach F only through the kept columns.
    """
    if not 0 < theta_a < 1:
        raise ValueError("theta_a must lie in (0, 1)")
    H = cache.heatmap
    hot = H[1:] > theta_a
    regions = {c: np.flatnonzero(hot[c - 1]) for c in range(1, H.shape[0])}
    mask = hot.any(axis=0)
    return ErasedFeatures(nx.mask_columns(cache.F_pos, ~mask), mask, regions)


def sap_attention(erased: ErasedFeatures | nx.Tensor) -> nx.Tensor:
    """Softmax over time of the channel sum of the erased feature map (1 x N)."""
    F = erased.F_erased if isinstance(erased, ErasedFeatures) else erased
    return nx.softmax(nx.sum_rows(F), axis=1)


def segment_logits(cache: SsgForwardCache, erased: ErasedFeatures | nx.Tensor) -> nx.Tensor:
    F = erased.F_erased if isinstance(erased, ErasedFeatures) else erased
    return nx.pointwise_affine(cache.leaves.Wf, cache.leaves.bf, F)


def sap_aggregate(seg: nx.Tensor, attention: nx.Tensor) -> SapOutput:
    if attention.shape != (1, seg.shape[1]):
        raise nx.DimensionError(f"attention {attention.shape} vs segment logits {seg.shape}")
    return SapOutput(attention, seg, nx.matmul(seg, nx.transpose(attention)))


def aggregate_gmp(seg: nx.Tensor) -> SapOutput:
    return SapOutput(None, seg, nx.max_cols(seg))


def aggregate_gap(seg: nx.Tensor) -> SapOutput:
    return SapOutput(None, seg, nx.mean_cols(seg))


def classify(cache: SsgForwardCache, erased: ErasedFeatures, aggregation: str = "sap") -> SapOutput:
    """Video-level prediction from the erased features, using only the SSG's own weights."""
    seg = segment_logits(cache, erased)
    if aggregation == "sap":
        return sap_aggregate(seg, sap_attention(erased))
    if aggregation == "gmp":
        return aggregate_gmp(seg)
    if aggregation == "gap":
        return aggregate_gap(seg)
    raise ValueError(f"unknown aggregation {aggregation!r}; expected one of {AGGREGATIONS}")


def classification_loss(out: SapOutput, labels: Sequence[int]) -> nx.Tensor:
    """Cross-entropy between the normalized multi-hot target and the video softmax."""
    y = multi_hot_target(labels, out.video_logits.shape[0])
    return nx.scale(nx.dot_const(nx.log_softmax(out.video_logits, axis=0), y), -1.0)
