"""Seeded sequence growing network: backbone, heatmap head, growth rule, seeding loss."""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from . import numerics as nx
from .corpus import FeatureSequence
from .seeding import UNLABELED, SeedLabelMap, glorot

HIDDEN = 512


@dataclass
class SsgParams:
    """Two kernel-1 temporal conv layers plus the opposite-ReLU heatmap head."""

    W1: np.ndarray  # H x K
    b1: np.ndarray  # H x 1
    W2: np.ndarray  # H x H
    b2: np.ndarray  # H x 1
    Wf: np.ndarray  # C x H, foreground head on relu(F)
    bf: np.ndarray  # C x 1
    Wb: np.ndarray  # 1 x H, background head on relu(-F)
    bb: np.ndarray  # 1 x 1

    @classmethod
    def names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, n) for n in self.names()]

    @classmethod
    def from_arrays(cls, arrays: Sequence[np.ndarray]) -> "SsgParams":
        return cls(*arrays)

    @classmethod
    def init(cls, rng: np.random.Generator, k: int, num_classes: int, hidden: int = HIDDEN) -> "SsgParams":
        return cls(
            glorot(rng, hidden, k), np.zeros((hidden, 1)),
            glorot(rng, hidden, hidden), np.zeros((hidden, 1)),
            glorot(rng, num_classes, hidden), np.zeros((num_classes, 1)),
            glorot(rng, 1, hidden), np.zeros((1, 1)),
        )

    @property
    def k_dims(self) -> int:
        return self.W1.shape[1]

    @property
    def num_classes(self) -> int:
        return self.Wf.shape[0]

    @property
    def n_weights(self) -> int:
        return sum(a.size for a in self.arrays())


@dataclass
class Leaves:
    """Graph leaves for one forward pass, in ``SsgParams.names()`` order."""

    W1: nx.Tensor
    b1: nx.Tensor
    W2: nx.Tensor
    b2: nx.Tensor
    Wf: nx.Tensor
    bf: nx.Tensor
    Wb: nx.Tensor
    bb: nx.Tensor

    @classmethod
    def of(cls, params: SsgParams, trainable: bool = True) -> "Leaves":
        make = nx.param if trainable else nx.const
        return cls(*[make(a) for a in params.arrays()])

    def as_list(self) -> list[nx.Tensor]:
        return [getattr(self, n) for n in SsgParams.names()]


@dataclass
class SsgForwardCache:
    F: nx.Tensor  # H x N shared pre-activation map
    F_pos: nx.Tensor  # relu(F), foreground features
    F_neg: nx.Tensor  # relu(-F), background features
    logits: nx.Tensor  # (C+1) x N, row 0 background
    log_H: nx.Tensor
    H: nx.Tensor
    leaves: Leaves

    @property
    def heatmap(self) -> np.ndarray:
        return self.H.value


def ssg_forward(params: SsgParams | Leaves, fs: FeatureSequence | np.ndarray) -> SsgForwardCache:
    """Run the backbone and heatmap head on one video.

    ``F = W2 relu(W1 X + b1) + b2`` stays pre-activation; the foreground head
    reads ``relu(F)`` and the background head reads ``relu(-F)``.
    """
    leaves = params if isinstance(params, Leaves) else Leaves.of(params)
    x = fs.values if isinstance(fs, FeatureSequence) else np.asarray(fs)
    if x.shape[1] != leaves.W1.shape[1]:
        raise nx.DimensionError(f"features have K={x.shape[1]}, network expects {leaves.W1.shape[1]}")
    X = nx.const(x.T)
    A1 = nx.relu(nx.pointwise_affine(leaves.W1, leaves.b1, X))
    F = nx.pointwise_affine(leaves.W2, leaves.b2, A1)
    F_pos = nx.relu(F)
    F_neg = nx.relu(nx.neg(F))
    fg = nx.pointwise_affine(leaves.Wf, leaves.bf, F_pos)
    bg = nx.pointwise_affine(leaves.Wb, leaves.bb, F_neg)
    logits = nx.vstack([bg, fg])
    return SsgForwardCache(F, F_pos, F_neg, logits, nx.log_softmax(logits, axis=0),
                           nx.softmax_columns(logits), leaves)


def class_thresholds(num_classes: int, theta_fg: float, theta_bg: float) -> np.ndarray:
    th = np.full(num_classes + 1, float(theta_fg))
    th[0] = theta_bg
    return th


def grow_step(H: np.ndarray, labels: SeedLabelMap, thresholds) -> tuple[SeedLabelMap, int]:
    """One synchronous growing sweep.

    An unlabeled location t takes class c when a neighbour (t-1 or t+1) held c
    at sweep start, ``H[c, t] >= thresholds[c]``, and c is the column argmax of
    H (ties to the smaller id). Existing labels never change.
    """
    H = np.asarray(H)
    n_cls, N = H.shape
    th = np.broadcast_to(np.asarray(thresholds, dtype=np.float64), (n_cls,))
    if np.any(th <= 0) or np.any(th > 1):
        raise ValueError("growing thresholds must lie in (0, 1]")
    state = labels.state
    onehot = state[None, :] == np.arange(n_cls)[:, None]
    near = np.zeros_like(onehot)
    near[:, 1:] |= onehot[:, :-1]
    near[:, :-1] |= onehot[:, 1:]
    winner = H.argmax(axis=0)
    grow = near & (H >= th[:, None]) & (winner[None, :] == np.arange(n_cls)[:, None]) & (state == UNLABELED)[None, :]
    new = state.copy()
    cls_idx, t_idx = np.nonzero(grow)
    new[t_idx] = cls_idx
    return SeedLabelMap(new, labels.num_classes), int(t_idx.size)


def seeding_loss(log_H: nx.Tensor, labels: SeedLabelMap) -> nx.Tensor:
    """Mean negative log-probability over labeled locations; unlabeled ones are ignored."""
    t_idx = np.flatnonzero(labels.state != UNLABELED)
    if t_idx.size == 0:
        raise ValueError("seeding loss needs at least one labeled location")
    picked = nx.pick(log_H, labels.state[t_idx], t_idx)
    return nx.scale(nx.sum_all(picked), -1.0 / t_idx.size)


def heatmap_csv(H: np.ndarray) -> str:
    """``t,bg,class_1..class_C`` rows for one video's heatmap."""
    n_cls, N = H.shape
    head = ",".join(["t", "bg"] + [f"class_{c}" for c in range(1, n_cls)])
    rows = [head] + [",".join([str(t)] + [repr(float(v)) for v in H[:, t]]) for t in range(N)]
    return "\n".join(rows) + "\n"
