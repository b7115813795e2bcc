"""
Correlated and uncorrelated initialization of k x k spatial filters.

Draw order for one correlated filter (fixed so that runs are reproducible
from a seed): representation center index, then strength s, then the k x k
noise matrix in row-major order.
"""
import logging
import math
from typing import Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from corrinit.models import (
    DecayProfile, FilterKernel, InitSpec, LayerTensor, LocationStrategy,
    Scaling, StrengthDraw,
)
from corrinit.utils import spawn_generators

DISTANCE_TOL = 1e-9

# Var(s) / s_m^2 for each strength law on [-s_m, s_m]
STRENGTH_VARIANCE = {
    StrengthDraw.UNIFORM: 1.0 / 3.0,
    StrengthDraw.TWO_POINT: 1.0,
}


def decay_value(profile: DecayProfile, d: float) -> float:
    """g(d): 1 at the center, the tabulated factor at the tabulated distances, a_other elsewhere."""
    if d < 0:
        raise ValueError(f"distance must be non-negative, got {d}")
    if d <= DISTANCE_TOL:
        return profile.a0
    for distance, factor in profile.table().items():
        if abs(d - distance) <= DISTANCE_TOL:
            return factor
    return profile.a_other


def correlated_template(k: int, center: Tuple[int, int], decay: DecayProfile) -> np.ndarray:
    """M_c for strength 1: g of the index distance from center, on the k x k grid."""
    xs, ys = np.indices((k, k))
    distances = np.sqrt((xs - center[0]) ** 2 + (ys - center[1]) ** 2)
    return np.vectorize(lambda d: decay_value(decay, d), otypes=[np.float64])(distances)


def center_variance_factor(profile: DecayProfile, k: int = 3) -> float:
    """
    Var(w) / Var(w_center) for the center strategy with alpha = 0.

    Every weight is w_center * g(d), so the covariance double sum over all
    position pairs collapses to (sum of g over the grid)^2. For k = 3 this is
    1 + 8g(1) + 8g(sqrt2) + 16g(1)^2 + 32g(1)g(sqrt2) + 16g(sqrt2)^2.
    """
    if k < 1 or k % 2 == 0:
        raise ValueError(f"filter size k must be odd and positive, got {k}")
    template = correlated_template(k, (k // 2, k // 2), profile).reshape(-1)
    return float(np.outer(template, template).sum())


def location_variance_factor(
    profile: DecayProfile,
    k: int,
    strategy: LocationStrategy,
    alpha: float = 0.0,
    strength: StrengthDraw = StrengthDraw.UNIFORM,
) -> float:
    """
    var_w for scaling_constant: Var(sum of one filter) / s_m^2.

    Centers are equiprobable over L; the noise matrix adds k^2 independent
    uniforms. For the center strategy with alpha = 0 and a uniform strength
    this is center_variance_factor / 3.
    """
    locations = strategy.resolve(k)
    template_sums = [correlated_template(k, loc, profile).sum() for loc in locations]
    correlated = float(np.mean(np.square(template_sums)))
    return (1 - alpha) ** 2 * STRENGTH_VARIANCE[strength] * correlated + alpha ** 2 * k * k / 3.0


def scaling_constant(k: int, n_l: int, var_w: float) -> float:
    """s_m = k / sqrt(n_l * Var(w))."""
    if var_w <= 0:
        raise ValueError(f"var_w must be positive, got {var_w}")
    return k / math.sqrt(n_l * var_w)


def strength_bound(spec: InitSpec) -> float:
    if spec.scaling == Scaling.AS_WRITTEN:
        return 1.0 / math.sqrt(spec.n_l)
    var_w = location_variance_factor(spec.decay, spec.k, spec.strategy, spec.alpha, spec.strength)
    return scaling_constant(spec.k, spec.n_l, var_w)


def _templates(spec: InitSpec) -> List[np.ndarray]:
    locations = spec.strategy.resolve(spec.k)
    if not locations:
        raise ValueError("location set L is empty")
    return [correlated_template(spec.k, loc, spec.decay) for loc in locations]


def _draw_kernel(spec: InitSpec, rng: np.random.Generator, templates: List[np.ndarray], s_m: float) -> np.ndarray:
    template = templates[int(rng.integers(len(templates)))]
    if spec.strength == StrengthDraw.TWO_POINT:
        s = s_m if rng.random() < 0.5 else -s_m
    else:
        s = rng.uniform(-s_m, s_m)
    noise = rng.uniform(-s_m, s_m, size=(spec.k, spec.k))
    return (1 - spec.alpha) * (s * template) + spec.alpha * noise


def single_filter_corr_init(spec: InitSpec, rng: Optional[np.random.Generator] = None) -> FilterKernel:
    """
    One correlated k x k filter: (1 - alpha) * s * g(distance to center) + alpha * uniform noise.

    Without rng the draws come from stream 0 of spec.seed, the stream layer_init gives filter 0.
    """
    # re-validate, an InitSpec built with model_construct skips its validators
    spec = InitSpec.model_validate(spec.model_dump())
    if rng is None:
        rng = spawn_generators(spec.seed, 1)[0]
    values = _draw_kernel(spec, rng, _templates(spec), strength_bound(spec))
    return FilterKernel(k=spec.k, values=values)


def uncorrelated_init(k: int, n_l: int, rng: np.random.Generator) -> FilterKernel:
    """Independent U(-1/sqrt(n_l), 1/sqrt(n_l)) entries."""
    if k < 1:
        raise ValueError(f"filter size k must be >= 1, got {k}")
    if n_l < k * k:
        raise ValueError(f"n_l={n_l} is smaller than one {k}x{k} filter")
    bound = 1.0 / math.sqrt(n_l)
    return FilterKernel(k=k, values=rng.uniform(-bound, bound, size=(k, k)))


def _slot_generators(n_filters: int, seed: int, rng: Optional[np.random.Generator]) -> List[np.random.Generator]:
    # with an explicit generator every slot draws from it in (filter, channel) order;
    # otherwise filter f owns the f-th child stream of the seed
    if rng is not None:
        return [rng] * n_filters
    return spawn_generators(seed, n_filters)


def layer_init(
    n_filters: int,
    in_channels: int,
    spec: InitSpec,
    rng: Optional[np.random.Generator] = None,
) -> LayerTensor:
    """Correlated initialization of a (n_filters, in_channels, k, k) conv layer, one independent filter per slot."""
    log = logging.getLogger(__name__)
    if n_filters < 1 or in_channels < 1:
        raise ValueError(f"layer needs at least one filter and channel, got ({n_filters}, {in_channels})")
    expected = n_filters * in_channels * spec.k * spec.k
    if spec.n_l != expected:
        raise ValueError(f"spec.n_l={spec.n_l} does not match layer shape ({n_filters}, {in_channels}, {spec.k}, {spec.k}) = {expected}")

    templates = _templates(spec)
    s_m = strength_bound(spec)
    generators = _slot_generators(n_filters, spec.seed, rng)
    values = np.empty((n_filters, in_channels, spec.k, spec.k))
    for f in tqdm(range(n_filters), desc="Initializing filters", disable=n_filters < 256, leave=False):
        for c in range(in_channels):
            values[f, c] = _draw_kernel(spec, generators[f], templates, s_m)
    log.debug(f"Initialized layer {values.shape} with strategy={spec.strategy.variant.value}, s_m={s_m:.6g}")
    return LayerTensor.from_array(values, seed=spec.seed, spec=spec)


def uncorrelated_layer_init(
    n_filters: int,
    in_channels: int,
    k: int,
    seed: int = 0,
    rng: Optional[np.random.Generator] = None,
) -> LayerTensor:
    """Uncorrelated layer with the same per-filter stream layout as layer_init."""
    n_l = n_filters * in_channels * k * k
    generators = _slot_generators(n_filters, seed, rng)
    values = np.empty((n_filters, in_channels, k, k))
    for f in range(n_filters):
        for c in range(in_channels):
            values[f, c] = uncorrelated_init(k, n_l, generators[f]).values
    return LayerTensor.from_array(values, seed=seed)


def empirical_layer_variance(t: LayerTensor) -> float:
    """Unbiased sample variance of all weights of the layer."""
    if t.values.size < 2:
        raise ValueError("need at least two weights for a sample variance")
    return float(np.var(t.values, ddof=1))


def layer_response_variance(t: LayerTensor) -> float:
    """
    Variance of the layer's summed response to a constant unit input.

    Estimated as n_slots times the sample variance of the per-slot kernel
    sums; variance-corrected scaling makes this 1 in expectation.
    """
    if t.n_slots < 2:
        raise ValueError("need at least two filter slots to estimate the response variance")
    sums = t.array.reshape(t.n_slots, -1).sum(axis=1)
    return float(t.n_slots * np.var(sums, ddof=1))


def summary_stats(t: LayerTensor) -> Dict[str, float]:
    stats = {
        "n_values": float(t.values.size),
        "variance": empirical_layer_variance(t),
        "min": float(t.values.min()),
        "max": float(t.values.max()),
    }
    if t.n_slots >= 2:
        stats["response_variance"] = layer_response_variance(t)
    return stats
