"""
Expected output magnitude E[|c^l|] after l layers of width-k 1D convolution
on a constant input, for perfectly correlated and for independent weights.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from fractions import Fraction
from typing import Dict, Iterable, List, Optional

import numpy as np
import pandas as pd
from scipy import integrate
from scipy.special import comb
from tqdm import tqdm

from corrinit.models import (
    ClosedFormVariant, Estimator, PropagationConfig, PropagationMode, PropagationReport,
)
from corrinit.utils import derive_seed, spawn_generators

MAX_EXACT_K = 12


def sample_output_magnitude(k: int, l: int, u: float, mode: PropagationMode, rng: np.random.Generator) -> float:
    """One draw of |c^l| = prod over layers of |sum_j w_j|, starting from c^0 = 1."""
    magnitude = 1.0
    for _ in range(l):
        if mode == PropagationMode.CORRELATED:
            magnitude *= abs(k * rng.uniform(-u, u))
        else:
            magnitude *= abs(float(np.sum(rng.uniform(-u, u, size=k))))
    return magnitude


def _layer_factors(config: PropagationConfig, rng: np.random.Generator, n: int) -> np.ndarray:
    # (n, l) array of per-layer |sum_j w_j|; draws are consumed trial by trial, layer by layer
    k, l, u = config.k, config.l, config.u
    if config.mode == PropagationMode.CORRELATED:
        return np.abs(k * rng.uniform(-u, u, size=(n, l)))
    return np.abs(rng.uniform(-u, u, size=(n, l, k)).sum(axis=2))


def _chunk_sizes(trials: int, chunk_size: int) -> List[int]:
    full, rest = divmod(trials, chunk_size)
    return [chunk_size] * full + ([rest] if rest else [])


def _mc_factors(config: PropagationConfig) -> np.ndarray:
    sizes = _chunk_sizes(config.trials, config.chunk_size)
    generators = spawn_generators(config.seed, len(sizes))
    results: Dict[int, np.ndarray] = {}
    if config.workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as executor:
            future_to_chunk = {
                executor.submit(_layer_factors, config, generators[i], n): i for i, n in enumerate(sizes)
            }
            for future in tqdm(as_completed(future_to_chunk), total=len(sizes), desc="Monte Carlo chunks", leave=False):
                results[future_to_chunk[future]] = future.result()
    else:
        for i, n in enumerate(tqdm(sizes, desc="Monte Carlo chunks", leave=False, disable=len(sizes) < 4)):
            results[i] = _layer_factors(config, generators[i], n)
    # chunk order, not completion order, so serial and threaded runs agree bit for bit
    return np.concatenate([results[i] for i in range(len(sizes))], axis=0)


def monte_carlo_expectation(config: PropagationConfig) -> PropagationReport:
    """Mean and standard error of |c^l| over config.trials seeded draws, next to both closed forms."""
    log = logging.getLogger(__name__)
    factors = _mc_factors(config)
    n = config.trials

    if config.estimator == Estimator.PRODUCT:
        samples = np.prod(factors, axis=1)
        estimate = float(samples.mean())
        stderr = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    else:
        # independent layers: E[prod] = prod E[factor]; delta-method error
        means = factors.mean(axis=0)
        estimate = float(np.prod(means))
        if n > 1 and config.l > 0:
            rel = factors.std(axis=0, ddof=1) / (np.sqrt(n) * means)
            stderr = float(estimate * math.sqrt(float(np.sum(rel ** 2))))
        else:
            stderr = 0.0

    trace = [float(v) for v in np.cumprod(factors, axis=1).mean(axis=0)] if config.l > 0 else []
    exact = None
    if config.mode == PropagationMode.CORRELATED:
        exact = closed_form(config.k, config.l, config.u, config.mode, ClosedFormVariant.CORRECTED)
    elif config.k <= MAX_EXACT_K:
        exact = exact_abs_sum_expectation(config.k, config.u) ** config.l

    report = PropagationReport(
        config=config,
        mc_estimate=estimate,
        mc_stderr=stderr,
        stderr_defined=n > 1,
        closed_form_as_printed=closed_form(config.k, config.l, config.u, config.mode, ClosedFormVariant.AS_PRINTED),
        closed_form_corrected=closed_form(config.k, config.l, config.u, config.mode, ClosedFormVariant.CORRECTED),
        exact=exact,
        layer_trace=trace,
    )
    log.info(f"k={config.k} l={config.l} {config.mode.value}: E|c^l| ~ {estimate:.6g} +- {stderr:.2g}")
    return report


def closed_form(k: int, l: int, u: float, mode: PropagationMode, variant: ClosedFormVariant = ClosedFormVariant.CORRECTED) -> float:
    """
    Correlated: (k u / 2)^l, exact in both variants.
    Uncorrelated: half-normal approximation sigma * sqrt(2 / pi) per layer,
    with sigma^2 = k u^2 / 3 (corrected) or k u^2 / 12 (as printed).
    """
    if mode == PropagationMode.CORRELATED:
        return (k * u / 2) ** l
    if variant == ClosedFormVariant.AS_PRINTED:
        return math.sqrt(k * u * u / (6 * math.pi)) ** l
    return math.sqrt(2 * k * u * u / (3 * math.pi)) ** l


def _abs_irwin_hall_mean(k: int) -> Fraction:
    # E|T - k/2| for T ~ Irwin-Hall(k), from E[(c - T)+] = sum_j (-1)^j C(k,j) (c-j)+^(k+1) / (k+1)!
    half = Fraction(k, 2)
    total = sum(
        (-1) ** j * comb(k, j, exact=True) * (half - j) ** (k + 1)
        for j in range(k + 1) if j < half
    )
    return 2 * Fraction(total) / math.factorial(k + 1)


def exact_abs_sum_expectation(k: int, u: float = 1.0) -> float:
    """E[|S_k|] for S_k the sum of k independent U(-u, u), by exact piecewise-polynomial integration."""
    if not 1 <= k <= MAX_EXACT_K:
        raise ValueError(f"k must be in [1, {MAX_EXACT_K}], got {k}")
    return float(2 * _abs_irwin_hall_mean(k)) * u


def irwin_hall_pdf(x: float, k: int, u: float = 1.0) -> float:
    """Density of S_k = sum of k U(-u, u), via the Irwin-Hall density of the rescaled sum."""
    t = (x + k * u) / (2 * u)
    if not 0 <= t <= k:
        return 0.0
    total = sum((-1) ** j * comb(k, j, exact=True) * (t - j) ** (k - 1) for j in range(int(math.floor(t)) + 1))
    return abs(total) / math.factorial(k - 1) / (2 * u)


def quadrature_abs_sum_expectation(k: int, u: float = 1.0) -> float:
    """E[|S_k|] by adaptive quadrature of the density; an independent check on the exact value."""
    breakpoints = [2 * u * j - k * u for j in range(k + 1) if 0 < 2 * u * j - k * u < k * u]
    value, _ = integrate.quad(lambda x: x * irwin_hall_pdf(x, k, u), 0.0, k * u,
                              points=breakpoints or None, epsabs=1e-13, epsrel=1e-13, limit=200)
    return 2 * value


def mode_ratio(k: int, l: int, u: float = 1.0) -> float:
    """Correlated over (corrected) uncorrelated expected magnitude; grows like k^(l/2)."""
    return (closed_form(k, l, u, PropagationMode.CORRELATED)
            / closed_form(k, l, u, PropagationMode.UNCORRELATED, ClosedFormVariant.CORRECTED))


def sweep(
    ks: Iterable[int],
    ls: Iterable[int],
    modes: Iterable[PropagationMode] = tuple(PropagationMode),
    u: float = 1.0,
    trials: int = 100_000,
    seed: int = 0,
    estimator: Estimator = Estimator.PRODUCT,
    workers: int = 1,
) -> List[PropagationReport]:
    """
    Monte Carlo reports over a (k, l, mode) grid.

    Each cell seeds from (seed, k, l, mode), so a cell's numbers do not
    depend on which other cells are in the grid.
    """
    reports = []
    modes = list(modes)
    for k in ks:
        for l in ls:
            for mode_index, mode in enumerate(PropagationMode):
                if mode not in modes:
                    continue
                config = PropagationConfig(
                    k=k, l=l, u=u, mode=mode, trials=trials, estimator=estimator,
                    workers=workers, seed=derive_seed(seed, k, l, mode_index),
                )
                reports.append(monte_carlo_expectation(config))
    return reports


def sweep_frame(reports: List[PropagationReport]) -> pd.DataFrame:
    rows = []
    for r in reports:
        c = r.config
        rows.append({
            "k": c.k, "l": c.l, "mode": c.mode.value, "u": c.u, "trials": c.trials, "seed": c.seed,
            "estimate": r.mc_estimate, "stderr": r.mc_stderr, "stderr_defined": r.stderr_defined,
            "closed_form_as_printed": r.closed_form_as_printed, "closed_form_corrected": r.closed_form_corrected,
            "exact": r.exact,
            "deviation_stderr": deviation_in_stderr(r) if r.exact is not None else None,
        })
    return pd.DataFrame(rows)


def deviation_in_stderr(report: PropagationReport, reference: Optional[float] = None) -> float:
    """|estimate - reference| in units of the standard error (reference defaults to the exact value)."""
    reference = report.exact if reference is None else reference
    if reference is None:
        raise ValueError("no exact reference available for this configuration")
    if report.mc_stderr == 0:
        return 0.0 if report.mc_estimate == reference else math.inf
    return abs(report.mc_estimate - reference) / report.mc_stderr
