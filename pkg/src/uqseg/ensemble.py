"""Fusing (p, q) prediction pairs from several models into one probability map.

Averaging raw probabilities ignores each model's own flip-risk estimate: two
maximally confident models that disagree would average to 0.5 with no trace
of the conflict. Fusing each pair first maps every prediction onto the common
"probability the true label is 1" scale, after which plain averaging works.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .volumes import Axis, Volume3D, flip_axis, require_same_dims


@dataclass
class PredictionPair:
    """Probability volume p in [0,1] and flip-probability volume q in [0,0.5]."""

    p: Volume3D
    q: Volume3D

    def __post_init__(self):
        require_same_dims(self.p, self.q)
        if self.p.data.min() < 0.0 or self.p.data.max() > 1.0:
            raise ValueError("p values must lie in [0, 1]")
        if self.q.data.min() < 0.0 or self.q.data.max() > 0.5:
            raise ValueError("q values must lie in [0, 0.5]")


def fuse_single(p, q):
    """Combine prediction and flip-probability into P(label = 1).

    Returns q where p <= 0.5 and 1 - q where p > 0.5: a prediction of 0 with
    flip-probability q believes the label is 1 with probability q, and a
    prediction of 1 believes it with probability 1 - q. The tie p = 0.5
    resolves to the negative branch (elsewhere "positive" means p > 0.5).
    """
    return np.where(np.asarray(p) > 0.5, 1.0 - np.asarray(q), np.asarray(q))


def ensemble_mean(preds: Sequence[PredictionPair]) -> Volume3D:
    """Voxelwise mean of the fused predictions."""
    if not preds:
        raise ValueError("cannot ensemble an empty prediction list")
    require_same_dims(*[pair.p for pair in preds])
    acc = np.zeros_like(preds[0].p.data)
    for pair in preds:
        acc += fuse_single(pair.p.data, pair.q.data)
    return Volume3D(acc / len(preds), preds[0].p.spacing)


def ensemble_with_flips(preds: Sequence[PredictionPair], flip_axes: Iterable[Axis] = ()) -> Volume3D:
    """Ensemble mean that also folds in axis-flipped test-time views.

    For every pair and every requested axis, the pair is taken to be the
    model's output on the axis-flipped input; mirroring the fused volume back
    aligns it with the original frame before it joins the mean. With no flip
    axes this is exactly :func:`ensemble_mean`.
    """
    if not preds:
        raise ValueError("cannot ensemble an empty prediction list")
    require_same_dims(*[pair.p for pair in preds])
    axes = sorted(set(flip_axes), key=lambda a: a.value)
    acc = np.zeros_like(preds[0].p.data)
    for pair in preds:
        fused = Volume3D(fuse_single(pair.p.data, pair.q.data), pair.p.spacing)
        acc += fused.data
        for axis in axes:
            acc += flip_axis(fused, axis).data
    n_views = len(preds) * (1 + len(axes))
    return Volume3D(acc / n_views, preds[0].p.spacing)
