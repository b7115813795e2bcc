"""
Gradient descent of a single ReLU filter on the symmetric two-sample system.

Weights are plain (w0, w1) tuples. Three update rules are available:
the generic gradient (ground truth, with ReLU gating), the recurrence
derived for the all-active case, and the recurrence as originally printed,
whose cross term in w0 carries a flipped sign.
"""
import logging
import math
from typing import List, Sequence, Tuple

import pandas as pd

from corrinit.models import (
    DynamicsConfig, DynamicsMode, InitComparison, IterationRecord,
    Trajectory, TrajectorySummary, TwoSampleSystem, ZigzagCount,
)

Pair = Tuple[float, float]


def generic_gradient(w: Pair, sample: Pair, target: float) -> Pair:
    """Gradient of (target - max(w.X, 0))^2; zero when the unit is inactive (w.X <= 0)."""
    activation = w[0] * sample[0] + w[1] * sample[1]
    if activation <= 0:
        return (0.0, 0.0)
    residual = target - activation
    return (-2.0 * residual * sample[0], -2.0 * residual * sample[1])


def active_count(w: Pair, system: TwoSampleSystem) -> int:
    return sum(1 for x in system.samples() if w[0] * x[0] + w[1] * x[1] > 0)


def _targets(config: DynamicsConfig) -> List[float]:
    return [y + config.target_noise for y in config.system.targets()]


def _generic_step(w: Pair, config: DynamicsConfig) -> Pair:
    samples = config.system.samples()
    g0 = g1 = 0.0
    for sample, target in zip(samples, _targets(config)):
        d0, d1 = generic_gradient(w, sample, target)
        g0 += d0
        g1 += d1
    scale = config.lr / len(samples)
    return (w[0] - scale * g0, w[1] - scale * g1)


def _corrected_step(w: Pair, config: DynamicsConfig) -> Pair:
    s, lr = config.system, config.lr
    gap = s.w_star0 - w[0]
    if s.symmetric_extension:
        # the mirrored pair cancels the cross terms
        return (w[0] + 2 * lr * gap * (1 + s.d0 ** 2), w[1] - 2 * lr * w[1] * s.d1 ** 2)
    w0 = w[0] + 2 * lr * (gap * (1 + s.d0 ** 2) + w[1] * s.d1 * s.d0)
    w1 = w[1] - 2 * lr * (s.d0 * s.d1 * gap + w[1] * s.d1 ** 2)
    return (w0, w1)


def _uncorrected_step(w: Pair, config: DynamicsConfig) -> Pair:
    s, lr = config.system, config.lr
    gap = s.w_star0 - w[0]
    w0 = w[0] + 2 * lr * (s.d0 ** 2 * gap - s.d0 * s.d1 * w[1]) + 2 * lr * gap
    w1 = w[1] - 2 * lr * (s.d0 * s.d1 * gap + s.d1 ** 2 * w[1])
    return (w0, w1)


_STEPS = {
    DynamicsMode.GENERIC: _generic_step,
    DynamicsMode.CORRECTED: _corrected_step,
    DynamicsMode.UNCORRECTED: _uncorrected_step,
}


def step(w: Pair, config: DynamicsConfig) -> Pair:
    """One full-batch gradient-descent step under config.mode."""
    return _STEPS[config.mode](w, config)


def distance_to_optimum(w: Pair, system: TwoSampleSystem) -> float:
    return math.hypot(w[0] - system.w_star0, w[1])


def stability_bound(system: TwoSampleSystem) -> float:
    """1 / (2 max |X|^2): learning rates below it make the all-active iteration a contraction."""
    return 1.0 / (2 * max(x0 * x0 + x1 * x1 for x0, x1 in system.samples()))


def _sign(x: float) -> int:
    return (x > 0) - (x < 0)


def _count_flips(updates: Sequence[float]) -> Tuple[int, List[bool], int]:
    flips, flags, previous, nonzero = 0, [], 0, 0
    for u in updates:
        sign = _sign(u)
        flipped = sign != 0 and previous != 0 and sign != previous
        flags.append(flipped)
        if flipped:
            flips += 1
        if sign != 0:
            previous = sign
            nonzero += 1
    return flips, flags, nonzero


def zigzag_count(trajectory: Trajectory, coordinate: int) -> ZigzagCount:
    """Sign changes between successive nonzero updates of one coordinate."""
    if coordinate not in (0, 1):
        raise ValueError(f"coordinate must be 0 or 1, got {coordinate}")
    updates = [r.update0 if coordinate == 0 else r.update1 for r in trajectory.records[1:]]
    flips, _, nonzero = _count_flips(updates)
    if nonzero < 2:
        return ZigzagCount(flips=0, too_short=True)
    return ZigzagCount(flips=flips, too_short=False)


def run(config: DynamicsConfig) -> Trajectory:
    """
    Iterate step until |w - w*| < eps, max_iters, or a dead unit.

    Row i holds w^(i), the update w^(i) - w^(i-1) and the number of samples
    that were active when that update was computed (row 0: at w^(0)).
    """
    log = logging.getLogger(__name__)
    system = config.system
    w: Pair = (config.w0_init, config.w1_init)
    records = [IterationRecord(iter=0, w0=w[0], w1=w[1], update0=0.0, update1=0.0,
                               active_count=active_count(w, system))]
    trajectory = Trajectory(config=config)
    stalled = 0

    if distance_to_optimum(w, system) < config.convergence_eps:
        trajectory.converged, trajectory.iterations = True, 0
    else:
        for i in range(1, config.max_iters + 1):
            active = active_count(w, system)
            new_w = step(w, config)
            update = (new_w[0] - w[0], new_w[1] - w[1])
            records.append(IterationRecord(iter=i, w0=new_w[0], w1=new_w[1],
                                           update0=update[0], update1=update[1], active_count=active))
            stalled = stalled + 1 if active == 0 and new_w == w else 0
            w = new_w
            if stalled >= 2:
                trajectory.dead = True
                log.info(f"Dead unit at iteration {i}: no sample is active at w={w}")
                break
            if distance_to_optimum(w, system) < config.convergence_eps:
                trajectory.converged, trajectory.iterations = True, i
                break

    for coordinate in (0, 1):
        updates = [r.update0 if coordinate == 0 else r.update1 for r in records[1:]]
        _, flags, _ = _count_flips(updates)
        for record, flag in zip(records[1:], flags):
            setattr(record, f"flip{coordinate}", flag)
    trajectory.records = records
    z0, z1 = zigzag_count(trajectory, 0), zigzag_count(trajectory, 1)
    trajectory.zigzag0, trajectory.zigzag1 = z0.flips, z1.flips
    trajectory.zigzag_defined = not (z0.too_short or z1.too_short)
    if not trajectory.converged and not trajectory.dead:
        log.warning(f"No convergence within {config.max_iters} iterations (distance {distance_to_optimum(w, system):.3g})")
    return trajectory


def active_ratio(trajectory: Trajectory) -> List[float]:
    """r per row: active samples / |S|."""
    n = len(trajectory.config.system.samples())
    return [r.active_count / n for r in trajectory.records]


def compare_inits(
    system: TwoSampleSystem,
    aligned_init: Pair,
    orthogonal_init: Pair,
    lr: float,
    iters: int,
    eps: float = 1e-3,
    mode: DynamicsMode = DynamicsMode.GENERIC,
) -> InitComparison:
    """Runs an init parallel to w* against one with a large orthogonal component of (nearly) equal norm."""
    norm_a, norm_o = math.hypot(*aligned_init), math.hypot(*orthogonal_init)
    if not math.isclose(norm_a, norm_o, rel_tol=1e-3):
        raise ValueError(f"inits must have equal norm, got {norm_a:.6g} and {norm_o:.6g}")

    def _run(init: Pair) -> Trajectory:
        return run(DynamicsConfig(system=system, w0_init=init[0], w1_init=init[1], lr=lr,
                                  max_iters=iters, convergence_eps=eps, mode=mode))

    aligned, orthogonal = _run(aligned_init), _run(orthogonal_init)
    comparison = InitComparison(aligned=aligned, orthogonal=orthogonal)
    if aligned.converged and orthogonal.converged and aligned.iterations:
        comparison.ratio = orthogonal.iterations / aligned.iterations
        comparison.ratio_defined = True
    return comparison


def trajectory_frame(trajectory: Trajectory) -> pd.DataFrame:
    columns = ["iter", "w0", "w1", "update0", "update1", "active_count", "flip0", "flip1"]
    rows = [r.model_dump() for r in trajectory.records]
    return pd.DataFrame(rows, columns=columns)


def trajectory_summary(trajectory: Trajectory) -> TrajectorySummary:
    return TrajectorySummary(
        converged=trajectory.converged,
        iterations=trajectory.iterations,
        dead=trajectory.dead,
        zigzag0=trajectory.zigzag0,
        zigzag1=trajectory.zigzag1,
        final_w0=trajectory.final_w[0],
        final_w1=trajectory.final_w[1],
    )
