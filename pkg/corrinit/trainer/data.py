import logging
from typing import Optional

import numpy as np
from scipy import ndimage

from corrinit.models import InitMode, LossMode, SyntheticDataset, ToyNetConfig
from corrinit.trainer.network import build_network, forward

MIN_LAG1_AUTOCORRELATION = 0.2


def generate_correlated_field(h: int, w: int, c: int, smooth_len: float, rng: np.random.Generator,
                              normalize: bool = False) -> np.ndarray:
    """
    White noise smoothed with a normalized Gaussian kernel of width smooth_len, shape (c, h, w).

    Smoothing wraps around the borders so the field mean equals the noise mean.
    With normalize=True the field is divided by the kernel's L2 norm, which
    restores unit pixel variance without touching the correlation structure.
    """
    if smooth_len < 0:
        raise ValueError(f"smooth_len must be >= 0, got {smooth_len}")
    noise = rng.standard_normal((c, h, w))
    if smooth_len == 0:
        return noise
    sigma = (0.0, smooth_len, smooth_len)
    field = ndimage.gaussian_filter(noise, sigma=sigma, mode="wrap")
    if normalize:
        impulse = np.zeros((1, h, w))
        impulse[0, h // 2, w // 2] = 1.0
        field /= np.sqrt(np.sum(ndimage.gaussian_filter(impulse, sigma=sigma, mode="wrap") ** 2))
    return field


def lag1_autocorrelation(field: np.ndarray) -> float:
    """Pearson correlation of horizontally adjacent pixels, pooled over all leading axes."""
    left = field[..., :, :-1].reshape(-1)
    right = field[..., :, 1:].reshape(-1)
    return float(np.corrcoef(left, right)[0, 1])


def make_teacher_dataset(
    n: int,
    teacher: ToyNetConfig,
    rng: np.random.Generator,
    height: int = 12,
    width: int = 12,
    smooth_len: float = 1.5,
    loss: LossMode = LossMode.QUADRATIC,
    normalize_targets: bool = True,
) -> SyntheticDataset:
    """
    Inputs from generate_correlated_field, targets from a correlated-init teacher network.

    With normalize_targets each output is centered on its sample mean and
    the result is rescaled to unit standard deviation. The pooled ReLU
    features are non-negative, so raw teacher outputs carry an offset a
    bias-free student cannot represent.
    """
    log = logging.getLogger(__name__)
    if n < 2:
        raise ValueError(f"need at least two samples, got {n}")
    if teacher.init != InitMode.CORRELATED:
        raise ValueError("the teacher network must use correlated initialization")

    inputs = np.stack([
        generate_correlated_field(height, width, teacher.in_channels, smooth_len, rng, normalize=True)
        for _ in range(n)
    ])
    autocorrelation = lag1_autocorrelation(inputs)
    if autocorrelation <= MIN_LAG1_AUTOCORRELATION:
        raise ValueError(f"inputs are not spatially correlated enough (lag-1 autocorrelation {autocorrelation:.3f}); "
                         f"increase smooth_len")

    net = build_network(teacher)
    targets, _ = forward(net, inputs)
    scale = 1.0
    offset = np.zeros(targets.shape[1])
    if normalize_targets:
        offset = targets.mean(axis=0)
        targets = targets - offset
        spread = float(targets.std())
        if spread > 0:
            scale = 1.0 / spread
            targets = targets * scale

    labels: Optional[np.ndarray] = None
    if loss == LossMode.CROSS_ENTROPY:
        if teacher.n_outputs < 2:
            raise ValueError("classification needs a teacher with at least two outputs")
        labels = np.argmax(targets, axis=1)
    log.info(f"Teacher dataset: n={n}, inputs {inputs.shape[1:]}, lag-1 autocorrelation {autocorrelation:.3f}, "
             f"target offset {np.round(offset, 4).tolist()}, target std {float(targets.std()):.3g}")
    return SyntheticDataset(inputs=inputs, targets=targets, labels=labels, smooth_len=smooth_len,
                            teacher_seed=teacher.seed, target_scale=scale, target_offset=offset)
