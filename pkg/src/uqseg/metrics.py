"""Overlap and surface-distance metrics for binary masks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

_FACE_STRUCTURE = ndimage.generate_binary_structure(3, 1)


@dataclass
class MetricResult:
    dice: float
    hd95: float | None
    both_empty: bool = False
    one_empty: bool = False


def dice(a, b) -> float:
    """2|A n B| / (|A| + |B|); two empty masks agree perfectly (1.0)."""
    if a.dims != b.dims:
        raise ValueError(f"dimension mismatch: {a.dims} vs {b.dims}")
    na = int(a.data.sum())
    nb = int(b.data.sum())
    if na + nb == 0:
        return 1.0
    inter = int((a.data & b.data).sum())
    return 2.0 * inter / (na + nb)


def surface(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with at least one background face-neighbour.

    Positions outside the array count as background, so foreground touching
    the array boundary is part of the surface.
    """
    eroded = ndimage.binary_erosion(mask, structure=_FACE_STRUCTURE, border_value=0)
    return mask & ~eroded


def hausdorff95(a, b, empty_sentinel: float | None = None) -> float:
    """95th-percentile symmetric surface distance in millimetres.

    Each direction takes the 95th percentile (linear interpolation) of the
    Euclidean distances from one mask's surface voxels to the nearest surface
    voxel of the other; the result is the larger of the two. Two empty masks
    give 0. One empty mask raises unless ``empty_sentinel`` is set, in which
    case that sentinel is returned (challenge-compatibility mode).
    """
    if a.dims != b.dims:
        raise ValueError(f"dimension mismatch: {a.dims} vs {b.dims}")
    if a.spacing != b.spacing:
        raise ValueError(f"spacing mismatch: {a.spacing} vs {b.spacing}")
    a_empty = not a.data.any()
    b_empty = not b.data.any()
    if a_empty and b_empty:
        return 0.0
    if a_empty or b_empty:
        if empty_sentinel is None:
            raise ValueError("hausdorff95 undefined: exactly one mask is empty")
        return float(empty_sentinel)

    surf_a = surface(a.data)
    surf_b = surface(b.data)
    # Distance from every voxel to the nearest surface voxel of each mask.
    dist_to_b = ndimage.distance_transform_edt(~surf_b, sampling=a.spacing)
    dist_to_a = ndimage.distance_transform_edt(~surf_a, sampling=a.spacing)
    p_ab = np.percentile(dist_to_b[surf_a], 95)
    p_ba = np.percentile(dist_to_a[surf_b], 95)
    return float(max(p_ab, p_ba))


def compare_masks(a, b, hd95_empty_sentinel: float | None = None) -> MetricResult:
    """Dice plus HD95 with empty-mask bookkeeping, for per-case result rows."""
    a_empty = not a.data.any()
    b_empty = not b.data.any()
    d = dice(a, b)
    if a_empty and b_empty:
        return MetricResult(dice=d, hd95=0.0, both_empty=True)
    if a_empty or b_empty:
        return MetricResult(dice=d, hd95=hd95_empty_sentinel, one_empty=True)
    return MetricResult(dice=d, hd95=hausdorff95(a, b))
