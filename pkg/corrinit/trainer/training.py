import logging
import time
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from corrinit.correlation import distance_profile
from corrinit.models import (
    CorrelationProfile, InitMode, L2Targets, LayerTensor, LossMode,
    SyntheticDataset, ToyNetConfig, TrainConfig, TrainReport,
)
from corrinit.trainer.network import ToyNet, accuracy, build_network, forward, loss_and_grad, loss_value
from corrinit.utils import derive_seed

SPLIT_STREAM = 2_000
SHUFFLE_STREAM = 2_001


def learning_rate(config: TrainConfig, epoch: int) -> float:
    """Step schedule: the rate of 1-based epoch e is lr * factor^(number of decay epochs < e)."""
    drops = sum(1 for d in config.lr_decay_epochs if d < epoch)
    return config.lr * config.lr_decay_factor ** drops


def l2_mask(net: ToyNet, targets: L2Targets) -> List[bool]:
    """Which of net.parameters() receive weight decay."""
    conv = targets in (L2Targets.CONV, L2Targets.ALL)
    head = targets in (L2Targets.HEAD, L2Targets.ALL)
    return [conv] * len(net.conv) + [head]


def apply_update(
    params: Sequence[np.ndarray],
    velocity: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    lr: float,
    momentum: float,
    l2_lambda: float = 0.0,
    l2_mask: Optional[Sequence[bool]] = None,
):
    """
    In-place SGD step with momentum and update-time weight decay:

        v <- momentum * v + g
        w <- w - lr * v - lr * l2_lambda * w

    The decay term uses the weights from before the step and never enters
    the velocity. With g = 0 and v = 0 every decayed weight shrinks by
    exactly (1 - lr * l2_lambda).
    """
    mask = [True] * len(params) if l2_mask is None else list(l2_mask)
    for w, v, g, decayed in zip(params, velocity, grads, mask):
        v *= momentum
        v += g
        decay = lr * l2_lambda * w if decayed and l2_lambda > 0 else 0.0
        w -= lr * v + decay


def _profile(w: np.ndarray) -> Optional[CorrelationProfile]:
    log = logging.getLogger(__name__)
    try:
        return distance_profile(LayerTensor.from_array(w))
    except ValueError as e:
        log.warning(f"No correlation profile for layer {w.shape}: {e}")
        return None


def _targets(data: SyntheticDataset, loss: LossMode) -> np.ndarray:
    if loss == LossMode.CROSS_ENTROPY:
        if data.labels is None:
            raise ValueError("cross-entropy training needs a dataset with labels")
        return data.labels
    return data.targets


def _evaluate(net: ToyNet, x: np.ndarray, y: np.ndarray, loss: LossMode) -> Tuple[Optional[float], Optional[float]]:
    if len(x) == 0:
        return None, None
    prediction, _ = forward(net, x)
    value, _ = loss_value(prediction, y, loss)
    acc = accuracy(prediction, y) if loss == LossMode.CROSS_ENTROPY else None
    return value, acc


def _split(n: int, config: TrainConfig) -> Tuple[np.ndarray, np.ndarray]:
    order = np.random.default_rng(derive_seed(config.seed, SPLIT_STREAM)).permutation(n)
    n_eval = min(int(n * config.eval_fraction), n - 1)
    return order[n_eval:], order[:n_eval]


def _is_finite(net: ToyNet) -> bool:
    return all(np.all(np.isfinite(p)) for p in net.parameters())


def train(
    net_config: ToyNetConfig,
    data: SyntheticDataset,
    train_config: TrainConfig,
    progress_callback: Optional[Callable[[int, float], None]] = None,
) -> TrainReport:
    """
    Mini-batch SGD with momentum on the training split of data.

    Batches are visited in a seeded permutation per epoch; a batch gradient
    is the mean over its samples. After every epoch the full training and
    evaluation splits are re-scored and each conv layer's distance profile
    is recorded. A non-finite loss or weight stops training with
    status "diverged" and keeps only the completed epochs.
    """
    log = logging.getLogger(__name__)
    start = time.perf_counter()
    net = build_network(net_config)
    targets = _targets(data, train_config.loss)
    train_idx, eval_idx = _split(len(data), train_config)
    x_train, y_train = data.inputs[train_idx], targets[train_idx]
    x_eval, y_eval = data.inputs[eval_idx], targets[eval_idx]

    report = TrainReport(net_config=net_config, train_config=train_config)
    report.initial_profiles = [_profile(w) for w in net.conv]
    params = net.parameters()
    velocity = [np.zeros_like(p) for p in params]
    mask = l2_mask(net, train_config.l2_targets)
    shuffle_rng = np.random.default_rng(derive_seed(train_config.seed, SHUFFLE_STREAM))
    bs = train_config.batch_size

    epochs = tqdm(range(1, train_config.epochs + 1), desc=f"Training (seed {net_config.seed})",
                  disable=train_config.epochs < 2, leave=False)
    for epoch in epochs:
        lr = learning_rate(train_config, epoch)
        order = shuffle_rng.permutation(len(train_idx))
        ever_active = [np.zeros(w.shape[0], dtype=bool) for w in net.conv]
        dead_grad = [np.zeros(w.shape[0]) for w in net.conv]
        diverged = False
        for b in range(0, len(order), bs):
            batch = order[b:b + bs]
            loss, grads, cache = loss_and_grad(net, x_train[batch], y_train[batch], train_config.loss)
            if not np.isfinite(loss):
                diverged = True
                break
            for i, z in enumerate(cache.pre_activations):
                ever_active[i] |= (z > 0).any(axis=(0, 2, 3))
                dead_grad[i] += np.abs(grads.conv[i]).reshape(grads.conv[i].shape[0], -1).sum(axis=1)
            apply_update(params, velocity, grads.as_list(), lr, train_config.momentum,
                         train_config.l2_lambda, mask)

        train_loss, _ = _evaluate(net, x_train, y_train, train_config.loss)
        if diverged or not _is_finite(net) or not np.isfinite(train_loss):
            report.status = "diverged"
            log.error(f"Training diverged in epoch {epoch} (seed {net_config.seed}); keeping {epoch - 1} epochs")
            break

        eval_loss, eval_acc = _evaluate(net, x_eval, y_eval, train_config.loss)
        report.train_loss.append(train_loss)
        report.eval_loss.append(eval_loss)
        report.eval_accuracy.append(eval_acc)
        report.profiles.append([_profile(w) for w in net.conv])
        report.inactive_units.append([int((~active).sum()) for active in ever_active])
        report.inactive_unit_grad.append(float(sum(g[~a].sum() for g, a in zip(dead_grad, ever_active))))
        report.epochs_completed = epoch
        if progress_callback:
            progress_callback(epoch, train_loss)

    # weights of a diverged run may hold inf and cannot be snapshotted
    report.final_weights = net.layer_tensors() if _is_finite(net) else []
    report.wall_clock = time.perf_counter() - start
    log.info(f"Finished {report.epochs_completed}/{train_config.epochs} epochs "
             f"({net_config.init.value} init, seed {net_config.seed}, status {report.status})")
    return report


def l2_correlation_experiment(
    net_config: ToyNetConfig,
    data: SyntheticDataset,
    train_config: TrainConfig,
    lambdas: Sequence[float] = (0.0, 5e-3),
) -> List[TrainReport]:
    """
    One run per L2 strength from the same uncorrelated init, data and seeds.

    The default pair is (control, regularized); the final d=1 correlations
    of the returned reports are what the comparison looks at.
    """
    if net_config.init != InitMode.UNCORRELATED:
        raise ValueError("the L2 correlation experiment starts from uncorrelated weights")
    if not lambdas:
        raise ValueError("need at least one L2 strength")
    return [train(net_config, data, train_config.model_copy(update={"l2_lambda": float(lam)})) for lam in lambdas]


def compare_inits_experiment(
    net_config: ToyNetConfig,
    data: SyntheticDataset,
    train_config: TrainConfig,
) -> Tuple[TrainReport, TrainReport]:
    """Same data, seeds and head; correlated vs uncorrelated conv init. Returns (correlated, uncorrelated)."""
    correlated = train(net_config.model_copy(update={"init": InitMode.CORRELATED}), data, train_config)
    uncorrelated = train(net_config.model_copy(update={"init": InitMode.UNCORRELATED}), data, train_config)
    return correlated, uncorrelated


def epoch_loss(report: TrainReport, epoch: int) -> Optional[float]:
    """Train loss after 1-based epoch, or None if the run stopped before it."""
    if epoch < 1 or epoch > len(report.train_loss):
        return None
    return report.train_loss[epoch - 1]
