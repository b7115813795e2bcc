import hashlib
import json
import logging
from typing import Callable, List

import numpy as np


def setup_logging(level: int = logging.INFO):
    """
    Configures the root logger for persistent terminal output that works with tqdm.

    This uses the default StreamHandler which prints to the console and allows
    tqdm to manage its progress bars without overwriting the logs.
    """
    logging.basicConfig(
        level=level,
        format="[%(asctime)s - %(levelname)s - %(name)s] %(message)s",
        datefmt="%H:%M:%S"
    )


def spawn_generators(seed: int, n: int) -> List[np.random.Generator]:
    """
    Independent PCG64 streams derived from one seed.

    Stream i is always the i-th child of SeedSequence(seed), so the same
    (seed, index) pair gives the same draws whether streams are consumed
    serially or from several threads.
    """
    return [np.random.Generator(np.random.PCG64(child)) for child in np.random.SeedSequence(seed).spawn(n)]


def derive_seed(seed: int, *keys: int) -> int:
    """A reproducible 32-bit seed for a named sub-experiment (e.g. one cell of a sweep)."""
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def config_hash(payload: dict) -> str:
    """Short sha256 of the canonical JSON of a run's parameters."""
    stable = json.dumps(payload, ensure_ascii=False, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(stable.encode("utf-8")).hexdigest()[:12]


def central_difference(func: Callable[[], float], array: np.ndarray, index: tuple, eps: float = 1e-5) -> float:
    """
    Centered finite-difference derivative of func() w.r.t. array[index].

    The array is perturbed in place and restored before returning.
    """
    original = array[index]
    try:
        array[index] = original + eps
        f_plus = func()
        array[index] = original - eps
        f_minus = func()
    finally:
        array[index] = original
    return (f_plus - f_minus) / (2 * eps)
