"""Voxelwise certainty maps (challenge scale: 100 = certain) and their scoring.

Three conversions are provided: one from the model's own flip-probability q,
one symmetric formula for any sigmoid output, and one that treats positive
predictions as fully certain. Scoring removes voxels below a certainty
threshold and tracks how Dice and the filtered true-positive/true-negative
ratios evolve as the threshold rises.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .refine import RegionLabel
from .volumes import Mask3D, Volume3D, require_same_dims

DEFAULT_THRESHOLDS = (0.0, 25.0, 50.0, 75.0, 100.0)


@dataclass
class CertaintyMap:
    """Per-region certainty channels on the 0..100 scale."""

    channels: dict[RegionLabel, Volume3D]

    def __post_init__(self):
        for region, vol in self.channels.items():
            if vol.data.min() < 0.0 or vol.data.max() > 100.0:
                raise ValueError(f"certainty for {region.value} outside [0, 100]")


def certainty_from_q(q: Volume3D) -> Volume3D:
    """100 * (1 - 2q): flip-probability 0 is fully certain, 0.5 fully uncertain."""
    return Volume3D(100.0 * (1.0 - 2.0 * q.data), q.spacing)


def symmetric_uncertainty_raw(x: Volume3D) -> Volume3D:
    """The raw symmetric uncertainty 100 * (1 - 2|0.5 - x|).

    Peaks at 100 on the decision boundary (x = 0.5) and falls to 0 at the
    extremes; it scores *uncertainty*, not challenge-scale certainty.
    """
    return Volume3D(100.0 * (1.0 - 2.0 * np.abs(0.5 - x.data)), x.spacing)


def certainty_symmetric(x: Volume3D) -> Volume3D:
    """Symmetric certainty 200 * |0.5 - x| on the 100-is-certain scale.

    The complement of :func:`symmetric_uncertainty_raw`. For a fused single
    prediction this reduces to the flip-probability score 100 * (1 - 2q).
    """
    return Volume3D(200.0 * np.abs(0.5 - x.data), x.spacing)


def negative_only_uncertainty_raw(x: Volume3D) -> Volume3D:
    """The raw negative-only uncertainty 200 * max(0.5 - x, 0).

    This is an *uncertainty* assigned to negative predictions only; positive
    predictions get 0. See :func:`certainty_negative_only` for the same
    quantity on the 100-is-certain challenge scale.
    """
    return Volume3D(200.0 * np.maximum(0.5 - x.data, 0.0), x.spacing)


def certainty_negative_only(x: Volume3D) -> Volume3D:
    """Negative-only certainty: 100 for positives, 100 - 200*(0.5 - x) below."""
    return Volume3D(100.0 - negative_only_uncertainty_raw(x).data, x.spacing)


@dataclass
class UncertaintyEvalCurve:
    thresholds: tuple[float, ...]
    dice_at: tuple[float, ...]
    ftp_at: tuple[float, ...]
    ftn_at: tuple[float, ...]
    dice_auc: float
    ftp_auc: float
    ftn_auc: float


def evaluate_uncertainty(
    seg: Mask3D,
    gt: Mask3D,
    cert: Volume3D,
    thresholds=DEFAULT_THRESHOLDS,
) -> UncertaintyEvalCurve:
    """Filtered-Dice evaluation of a certainty map.

    At each threshold tau, voxels with certainty < tau are removed from
    scoring; Dice is computed on the remainder (1.0 when nothing remains on
    either side). ftp/ftn are the fractions of true positives / true
    negatives that were filtered out. AUCs use the trapezoidal rule over
    tau/100.
    """
    require_same_dims(seg, gt, cert)
    taus = tuple(float(t) for t in thresholds)
    if not taus or any(t < 0.0 or t > 100.0 for t in taus):
        raise ValueError(f"thresholds must be non-empty and within [0, 100], got {taus}")
    if any(b < a for a, b in zip(taus, taus[1:])):
        raise ValueError("thresholds must be ascending")

    s, g, c = seg.data, gt.data, cert.data
    tp = s & g
    tn = ~s & ~g
    tp_total = int(tp.sum())
    tn_total = int(tn.sum())

    dice_at, ftp_at, ftn_at = [], [], []
    for tau in taus:
        kept = c >= tau
        inter = int((tp & kept).sum())
        denom = int((s & kept).sum()) + int((g & kept).sum())
        dice_at.append(1.0 if denom == 0 else 2.0 * inter / denom)
        ftp_at.append(0.0 if tp_total == 0 else int((tp & ~kept).sum()) / tp_total)
        ftn_at.append(0.0 if tn_total == 0 else int((tn & ~kept).sum()) / tn_total)

    grid = np.asarray(taus) / 100.0
    return UncertaintyEvalCurve(
        thresholds=taus,
        dice_at=tuple(dice_at),
        ftp_at=tuple(ftp_at),
        ftn_at=tuple(ftn_at),
        dice_auc=float(np.trapezoid(dice_at, grid)),
        ftp_auc=float(np.trapezoid(ftp_at, grid)),
        ftn_auc=float(np.trapezoid(ftn_at, grid)),
    )
