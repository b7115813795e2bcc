"""Distance-dependent Pearson correlation of filter weights."""
import logging
from collections import defaultdict
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

from corrinit.models import CorrelationProfile, DistanceCorrelation, LayerTensor


class UndefinedCorrelationError(ValueError):
    """Pearson's coefficient is undefined because a series is constant."""


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Sample Pearson product-moment coefficient, clamped to [-1, 1]."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"series must be 1-d and of equal length, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise ValueError("need at least two observations")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(np.dot(dx, dx)), float(np.dot(dy, dy))
    if sxx == 0 or syy == 0:
        raise UndefinedCorrelationError("correlation is undefined for a constant series")
    return float(np.clip(np.dot(dx, dy) / np.sqrt(sxx * syy), -1.0, 1.0))


def affine_invariance_check(
    xs: Sequence[float], ys: Sequence[float],
    a_x: float, b_x: float, a_y: float, b_y: float,
) -> float:
    """|rho(a_x x + b_x, a_y y + b_y) - rho(x, y)|; zero up to rounding for positive scales."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    return abs(pearson(a_x * x + b_x, a_y * y + b_y) - pearson(x, y))


def _distance_key(d: float) -> float:
    return round(d, 9)


def distance_profile(layer: LayerTensor) -> CorrelationProfile:
    """
    Mean Pearson coefficient per grid-index distance.

    For every unordered position pair (p, q) of the k x k grid the
    coefficient is taken over the (w_p, w_q) values of all (filter, channel)
    slots of the layer; pairs involving a constant position are skipped.
    """
    log = logging.getLogger(__name__)
    k, slots = layer.k, layer.n_slots
    if slots < 2:
        raise ValueError(f"need at least two filter slots, got {slots}")

    weights = layer.array.reshape(slots, k * k)
    centered = weights - weights.mean(axis=0)
    sums = np.einsum("ij,ij->j", centered, centered)
    defined = (np.ptp(weights, axis=0) > 0) & (sums > 0)
    norms = np.sqrt(np.where(defined, sums, 1.0))
    corr = np.clip((centered.T @ centered) / np.outer(norms, norms), -1.0, 1.0)

    grouped: Dict[float, List[float]] = defaultdict(list)
    skipped = 0
    for p in range(k * k):
        for q in range(p + 1, k * k):
            if not (defined[p] and defined[q]):
                skipped += 1
                continue
            (px, py), (qx, qy) = divmod(p, k), divmod(q, k)
            grouped[_distance_key(np.hypot(px - qx, py - qy))].append(float(corr[p, q]))

    if skipped:
        log.warning(f"Skipped {skipped} position pairs with constant weights")
    entries = [
        DistanceCorrelation(distance=d, mean_pearson=float(np.clip(np.mean(v), -1.0, 1.0)), n_pairs=len(v))
        for d, v in sorted(grouped.items())
    ]
    return CorrelationProfile(entries=entries, skipped_pairs=skipped, n_slots=slots)


def profile_frame(profile: CorrelationProfile) -> pd.DataFrame:
    return pd.DataFrame(
        [e.model_dump() for e in profile.entries],
        columns=["distance", "mean_pearson", "n_pairs"],
    )


def compare_profiles(profiles: Dict[str, CorrelationProfile]) -> pd.DataFrame:
    """Wide table: one row per distance, one mean-coefficient column per named profile."""
    table = pd.DataFrame({"distance": sorted({e.distance for p in profiles.values() for e in p.entries})})
    for name, profile in profiles.items():
        table[name] = [profile.at(d) for d in table["distance"]]
    return table
