"""
A small numpy CNN: [conv (valid, stride 1) -> ReLU] x L -> global average pool -> linear head.

No biases. Convolutions are matrix products over im2col patches; the
backward pass scatters patch gradients back with col2im.
"""
import logging
import math
from typing import List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, Field

from corrinit.init_core import layer_init, uncorrelated_layer_init
from corrinit.models import InitMode, InitSpec, LayerTensor, LossMode, ToyNetConfig
from corrinit.utils import central_difference, derive_seed

HEAD_STREAM = 1_000


class MissingCacheError(ValueError):
    """backward was called without the activations of a matching forward pass."""


class ToyNet(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    config: ToyNetConfig
    # one (F, C, k, k) array per conv layer
    conv: List[np.ndarray]
    # (n_outputs, F_last)
    head: np.ndarray

    def parameters(self) -> List[np.ndarray]:
        return [*self.conv, self.head]

    def layer_tensors(self) -> List[LayerTensor]:
        return [LayerTensor.from_array(w.copy(), seed=derive_seed(self.config.seed, i)) for i, w in enumerate(self.conv)]

    def min_input_size(self) -> int:
        return len(self.conv) * (self.config.k - 1) + 1


class ForwardCache(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    input_shapes: List[Tuple[int, ...]] = Field(default_factory=list)
    cols: List[np.ndarray] = Field(default_factory=list)
    pre_activations: List[np.ndarray] = Field(default_factory=list)
    pooled: Optional[np.ndarray] = None


class Gradients(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    conv: List[np.ndarray]
    head: np.ndarray

    def as_list(self) -> List[np.ndarray]:
        return [*self.conv, self.head]


def build_network(config: ToyNetConfig) -> ToyNet:
    """
    Conv layer i is seeded with derive_seed(config.seed, i) in both init
    modes; the head comes from its own stream and is identical across
    modes so that paired runs differ only in their conv init.
    """
    conv = []
    in_channels = config.in_channels
    for i, width in enumerate(config.widths):
        layer_seed = derive_seed(config.seed, i)
        if config.init == InitMode.CORRELATED:
            spec = InitSpec.model_validate({
                **config.init_spec.model_dump(),
                "k": config.k, "n_l": width * in_channels * config.k * config.k, "seed": layer_seed,
            })
            conv.append(layer_init(width, in_channels, spec).array.copy())
        else:
            conv.append(uncorrelated_layer_init(width, in_channels, config.k, seed=layer_seed).array.copy())
        in_channels = width
    rng = np.random.default_rng(derive_seed(config.seed, HEAD_STREAM))
    bound = 1.0 / math.sqrt(in_channels)
    head = rng.uniform(-bound, bound, size=(config.n_outputs, in_channels))
    return ToyNet(config=config, conv=conv, head=head)


def im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(N, C, H, W) -> (N, H-k+1, W-k+1, C*k*k) patches, channel-major inside a patch."""
    n, c, h, w = x.shape
    windows = sliding_window_view(x, (k, k), axis=(2, 3))
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n, h - k + 1, w - k + 1, c * k * k)


def col2im(cols: np.ndarray, input_shape: Tuple[int, ...], k: int) -> np.ndarray:
    """Adjoint of im2col: sums every patch entry back onto the pixel it was read from."""
    n, c, h, w = input_shape
    out_h, out_w = h - k + 1, w - k + 1
    patches = cols.reshape(n, out_h, out_w, c, k, k).transpose(0, 3, 1, 2, 4, 5)
    grad = np.zeros(input_shape)
    for i in range(k):
        for j in range(k):
            grad[:, :, i:i + out_h, j:j + out_w] += patches[..., i, j]
    return grad


def _check_input(net: ToyNet, x: np.ndarray):
    if x.ndim != 4:
        raise ValueError(f"input must be (N, C, H, W), got shape {x.shape}")
    if x.shape[1] != net.config.in_channels:
        raise ValueError(f"network expects {net.config.in_channels} input channels, got {x.shape[1]}")
    smallest = net.min_input_size()
    if x.shape[2] < smallest or x.shape[3] < smallest:
        raise ValueError(f"inputs must be at least {smallest}x{smallest} for {len(net.conv)} valid convolutions, "
                         f"got {x.shape[2]}x{x.shape[3]}")


def forward(net: ToyNet, x: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    """Predictions (N, n_outputs) and the activations backward needs."""
    _check_input(net, x)
    k = net.config.k
    cache = ForwardCache()
    a = np.asarray(x, dtype=np.float64)
    for w in net.conv:
        cols = im2col(a, k)
        z = (cols @ w.reshape(w.shape[0], -1).T).transpose(0, 3, 1, 2)
        cache.input_shapes.append(a.shape)
        cache.cols.append(cols)
        cache.pre_activations.append(z)
        a = np.maximum(z, 0.0)
    cache.pooled = a.mean(axis=(2, 3))
    return cache.pooled @ net.head.T, cache


def backward(net: ToyNet, cache: Optional[ForwardCache], loss_grad: np.ndarray) -> Gradients:
    """
    Exact gradients for dL/dprediction = loss_grad.

    A ReLU unit whose pre-activation is <= 0 passes no gradient, so
    weights feeding only dead units get exactly zero.
    """
    if cache is None or cache.pooled is None or len(cache.pre_activations) != len(net.conv):
        raise MissingCacheError("backward needs the cache of a forward pass through this network")
    if loss_grad.shape != (cache.pooled.shape[0], net.head.shape[0]):
        raise ValueError(f"loss gradient has shape {loss_grad.shape}, expected {(cache.pooled.shape[0], net.head.shape[0])}")

    k = net.config.k
    head_grad = loss_grad.T @ cache.pooled
    z_last = cache.pre_activations[-1]
    spatial = z_last.shape[2] * z_last.shape[3]
    upstream = np.broadcast_to((loss_grad @ net.head)[:, :, None, None] / spatial, z_last.shape)

    conv_grads: List[np.ndarray] = [np.empty(0)] * len(net.conv)
    for i in range(len(net.conv) - 1, -1, -1):
        w = net.conv[i]
        dz = (upstream * (cache.pre_activations[i] > 0)).transpose(0, 2, 3, 1)
        cols = cache.cols[i]
        conv_grads[i] = (dz.reshape(-1, w.shape[0]).T @ cols.reshape(-1, cols.shape[-1])).reshape(w.shape)
        if i > 0:
            upstream = col2im(dz @ w.reshape(w.shape[0], -1), cache.input_shapes[i], k)
    return Gradients(conv=conv_grads, head=head_grad)


def loss_value(prediction: np.ndarray, targets: np.ndarray, mode: LossMode) -> Tuple[float, np.ndarray]:
    """
    Batch loss and dL/dprediction.

    Quadratic: mean over samples of sum_o (pred - y)^2. Cross-entropy:
    mean negative log softmax probability of the integer label in targets.
    """
    n = prediction.shape[0]
    if mode == LossMode.QUADRATIC:
        residual = prediction - targets.reshape(prediction.shape)
        return float(np.sum(residual ** 2) / n), 2.0 * residual / n
    labels = np.asarray(targets, dtype=np.int64).reshape(-1)
    shifted = prediction - prediction.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -float(log_probs[np.arange(n), labels].mean())
    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def loss_and_grad(net: ToyNet, x: np.ndarray, targets: np.ndarray, mode: LossMode) -> Tuple[float, Gradients, ForwardCache]:
    prediction, cache = forward(net, x)
    loss, grad = loss_value(prediction, targets, mode)
    return loss, backward(net, cache, grad), cache


def accuracy(prediction: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(prediction, axis=1) == labels))


def gradient_check(
    net: ToyNet,
    x: np.ndarray,
    targets: np.ndarray,
    mode: LossMode = LossMode.QUADRATIC,
    probes: int = 100,
    eps: float = 1e-5,
    seed: int = 0,
) -> List[Tuple[int, Tuple[int, ...], float, float]]:
    """
    Compares backward against central differences at randomly chosen weights.

    Returns (parameter index, weight index, analytic, numeric) per probe.
    Probes where the +eps and -eps evaluations see different ReLU masks sit
    on a kink and are dropped.
    """
    log = logging.getLogger(__name__)
    _, grads, _ = loss_and_grad(net, x, targets, mode)
    params, analytic = net.parameters(), grads.as_list()
    rng = np.random.default_rng(seed)
    results = []

    def masks() -> List[np.ndarray]:
        return [z > 0 for z in forward(net, x)[1].pre_activations]

    for _ in range(probes):
        p = int(rng.integers(len(params)))
        index = tuple(int(rng.integers(s)) for s in params[p].shape)
        original = params[p][index]
        params[p][index] = original + eps
        plus = masks()
        params[p][index] = original - eps
        minus = masks()
        params[p][index] = original
        if any(not np.array_equal(a, b) for a, b in zip(plus, minus)):
            continue
        numeric = central_difference(lambda: loss_value(forward(net, x)[0], targets, mode)[0], params[p], index, eps)
        results.append((p, index, float(analytic[p][index]), numeric))
    log.debug(f"Gradient check: {len(results)} of {probes} probes away from ReLU kinks")
    return results


