# corrinit/models.py
import math
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# Distances (in grid indexes) that carry their own decay factor.
TABULATED_DISTANCES: Tuple[float, ...] = (1.0, math.sqrt(2), 2.0, math.sqrt(5), math.sqrt(8))


# --- init_core ---

class Strategy(str, Enum):
    ALL = "all"
    CENTER = "cen"
    NEIGHBOR = "nei"
    CUSTOM = "custom"


class Scaling(str, Enum):
    AS_WRITTEN = "as-written"
    VARIANCE_CORRECTED = "variance-corrected"


class StrengthDraw(str, Enum):
    UNIFORM = "uniform"
    TWO_POINT = "two-point"


class DecayProfile(BaseModel):
    """Decay factors g(d) by grid distance from the representation center. g(0) is always 1."""
    a1: float = Field(0.9, ge=0.0, le=1.0)
    a_sqrt2: float = Field(0.7, ge=0.0, le=1.0)
    a2: float = Field(0.5, ge=0.0, le=1.0)
    a_sqrt5: float = Field(0.0, ge=0.0, le=1.0)
    a_sqrt8: float = Field(0.0, ge=0.0, le=1.0)
    a_other: float = Field(0.0, ge=0.0, le=1.0)

    @property
    def a0(self) -> float:
        return 1.0

    def table(self) -> Dict[float, float]:
        factors = (self.a1, self.a_sqrt2, self.a2, self.a_sqrt5, self.a_sqrt8)
        return dict(zip(TABULATED_DISTANCES, factors))

    @classmethod
    def gaussian(cls, sigma: float) -> "DecayProfile":
        """Tabulates exp(-d^2 / (2 sigma^2)) at the tabulated distances; everything further decays to 0."""
        if sigma <= 0:
            raise ValueError(f"sigma must be positive, got {sigma}")
        a1, a_sqrt2, a2, a_sqrt5, a_sqrt8 = (math.exp(-d * d / (2 * sigma * sigma)) for d in TABULATED_DISTANCES)
        return cls(a1=a1, a_sqrt2=a_sqrt2, a2=a2, a_sqrt5=a_sqrt5, a_sqrt8=a_sqrt8, a_other=0.0)


class LocationStrategy(BaseModel):
    """Set L of candidate representation centers. Coordinates are (row, column)."""
    variant: Strategy = Strategy.NEIGHBOR
    locations: List[Tuple[int, int]] = Field(default_factory=list)

    def resolve(self, k: int) -> List[Tuple[int, int]]:
        c = k // 2
        if self.variant == Strategy.ALL:
            return [(x, y) for x in range(k) for y in range(k)]
        if self.variant == Strategy.CENTER:
            return [(c, c)]
        if self.variant == Strategy.NEIGHBOR:
            candidates = [(c, c - 1), (c, c + 1), (c - 1, c), (c + 1, c)]
            inside = [(x, y) for x, y in candidates if 0 <= x < k and 0 <= y < k]
            # a 1x1 grid has no neighbors; its only cell is the center
            return inside or [(c, c)]
        if not self.locations:
            raise ValueError("Custom location strategy needs at least one location.")
        for x, y in self.locations:
            if not (0 <= x < k and 0 <= y < k):
                raise ValueError(f"Location {(x, y)} lies outside the {k}x{k} grid.")
        return list(self.locations)


class InitSpec(BaseModel):
    """Full recipe for one correlated filter initialization."""
    k: int = Field(3, ge=1)
    n_l: int = Field(9, ge=1)
    strategy: LocationStrategy = Field(default_factory=LocationStrategy)
    decay: DecayProfile = Field(default_factory=DecayProfile)
    alpha: float = Field(0.05, ge=0.0, le=1.0)
    scaling: Scaling = Scaling.AS_WRITTEN
    strength: StrengthDraw = StrengthDraw.UNIFORM
    seed: int = 0

    @field_validator("k")
    @classmethod
    def _odd_k(cls, k: int) -> int:
        if k % 2 == 0:
            raise ValueError(f"filter size k must be odd, got {k}")
        return k

    @model_validator(mode="after")
    def _enough_weights(self) -> "InitSpec":
        if self.n_l < self.k * self.k:
            raise ValueError(f"n_l={self.n_l} is smaller than one {self.k}x{self.k} filter")
        return self


class FilterKernel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    k: int
    values: np.ndarray

    @model_validator(mode="after")
    def _check_values(self) -> "FilterKernel":
        if self.values.shape != (self.k, self.k):
            raise ValueError(f"expected a {self.k}x{self.k} grid, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("kernel contains non-finite values")
        return self


class LayerTensor(BaseModel):
    """Weights of one conv layer, stored flat in row-major (filter, channel, row, column) order."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    shape: Tuple[int, int, int, int]
    values: np.ndarray
    seed: Optional[int] = None
    spec: Optional[InitSpec] = None

    @model_validator(mode="after")
    def _check_values(self) -> "LayerTensor":
        self.values = np.ascontiguousarray(self.values, dtype=np.float64).reshape(-1)
        expected = int(np.prod(self.shape))
        if self.values.size != expected:
            raise ValueError(f"shape {self.shape} needs {expected} values, got {self.values.size}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("layer tensor contains non-finite values")
        return self

    @property
    def k(self) -> int:
        return self.shape[2]

    @property
    def n_slots(self) -> int:
        return self.shape[0] * self.shape[1]

    @property
    def array(self) -> np.ndarray:
        return self.values.reshape(self.shape)

    @classmethod
    def from_array(cls, array: np.ndarray, seed: Optional[int] = None, spec: Optional[InitSpec] = None) -> "LayerTensor":
        return cls(shape=tuple(array.shape), values=array.reshape(-1), seed=seed, spec=spec)


# --- dynamics ---

class DynamicsMode(str, Enum):
    GENERIC = "generic"
    CORRECTED = "corrected"
    UNCORRECTED = "uncorrected"


class TwoSampleSystem(BaseModel):
    """Samples X=(1+d0,-d1), X'=(1-d0,d1) around the optimum w*=(w_star0, 0)."""
    d0: float = Field(0.2, ge=0.0, le=1.0)
    d1: float = Field(0.2, ge=0.0, le=1.0)
    w_star0: float = 1.0
    symmetric_extension: bool = False

    @property
    def w_star(self) -> Tuple[float, float]:
        return (self.w_star0, 0.0)

    def samples(self) -> List[Tuple[float, float]]:
        samples = [(1 + self.d0, -self.d1), (1 - self.d0, self.d1)]
        if self.symmetric_extension:
            samples += [(1 + self.d0, self.d1), (1 - self.d0, -self.d1)]
        return samples

    def targets(self) -> List[float]:
        return [self.w_star0 * x0 for x0, _ in self.samples()]


class DynamicsConfig(BaseModel):
    system: TwoSampleSystem = Field(default_factory=TwoSampleSystem)
    w0_init: float = 0.3
    w1_init: float = 0.0
    # zero is accepted so that the degenerate "no step" runs can be expressed
    lr: float = Field(0.05, ge=0.0)
    max_iters: int = Field(10_000, ge=1)
    convergence_eps: float = Field(1e-3, gt=0.0)
    mode: DynamicsMode = DynamicsMode.GENERIC
    target_noise: float = 0.0

    @model_validator(mode="after")
    def _uncorrected_mode_two_samples(self) -> "DynamicsConfig":
        if self.mode == DynamicsMode.UNCORRECTED and self.system.symmetric_extension:
            raise ValueError("the printed recurrences only cover the two-sample system")
        return self


class IterationRecord(BaseModel):
    iter: int
    w0: float
    w1: float
    update0: float
    update1: float
    active_count: int
    flip0: bool = False
    flip1: bool = False


class Trajectory(BaseModel):
    config: DynamicsConfig
    records: List[IterationRecord] = Field(default_factory=list)
    converged: bool = False
    iterations: Optional[int] = None
    zigzag0: int = 0
    zigzag1: int = 0
    zigzag_defined: bool = False
    dead: bool = False

    @property
    def final_w(self) -> Tuple[float, float]:
        last = self.records[-1]
        return (last.w0, last.w1)


class TrajectorySummary(BaseModel):
    converged: bool
    iterations: Optional[int] = None
    dead: bool
    zigzag0: int
    zigzag1: int
    final_w0: float
    final_w1: float


class ZigzagCount(BaseModel):
    flips: int
    too_short: bool


class InitComparison(BaseModel):
    aligned: Trajectory
    orthogonal: Trajectory
    # orthogonal iterations / aligned iterations
    ratio: Optional[float] = None
    ratio_defined: bool = False


# --- propagation ---

class PropagationMode(str, Enum):
    CORRELATED = "correlated"
    UNCORRELATED = "uncorrelated"


class ClosedFormVariant(str, Enum):
    AS_PRINTED = "as-printed"
    CORRECTED = "corrected"


class Estimator(str, Enum):
    PRODUCT = "product"
    FACTORIZED = "factorized"


class PropagationConfig(BaseModel):
    k: int = Field(3, ge=1)
    # depth 0 is the empty product, c^0 = 1
    l: int = Field(1, ge=0)
    u: float = Field(1.0, gt=0.0)
    mode: PropagationMode = PropagationMode.CORRELATED
    trials: int = Field(100_000, ge=1)
    seed: int = 0
    estimator: Estimator = Estimator.PRODUCT
    chunk_size: int = Field(1 << 16, ge=1)
    workers: int = Field(1, ge=1)


class PropagationReport(BaseModel):
    config: PropagationConfig
    mc_estimate: float = Field(ge=0.0)
    mc_stderr: float = Field(ge=0.0)
    stderr_defined: bool = True
    closed_form_as_printed: float
    closed_form_corrected: float
    exact: Optional[float] = None
    layer_trace: List[float] = Field(default_factory=list)


# --- correlation ---

class DistanceCorrelation(BaseModel):
    distance: float
    mean_pearson: float = Field(ge=-1.0, le=1.0)
    n_pairs: int = Field(gt=0)


class CorrelationProfile(BaseModel):
    entries: List[DistanceCorrelation] = Field(default_factory=list)
    skipped_pairs: int = 0
    n_slots: int = 0

    def at(self, distance: float) -> Optional[float]:
        for entry in self.entries:
            if abs(entry.distance - distance) <= 1e-9:
                return entry.mean_pearson
        return None


# --- trainer ---

class InitMode(str, Enum):
    CORRELATED = "correlated"
    UNCORRELATED = "uncorrelated"


class LossMode(str, Enum):
    QUADRATIC = "quadratic"
    CROSS_ENTROPY = "cross-entropy"


class L2Targets(str, Enum):
    CONV = "conv"
    HEAD = "head"
    ALL = "all"


class ToyNetConfig(BaseModel):
    """conv (valid, stride 1) -> ReLU per layer, then global average pool and a linear head."""
    widths: List[int] = Field(default_factory=lambda: [8, 8], min_length=1, max_length=4)
    in_channels: int = Field(1, ge=1)
    k: int = Field(3, ge=1)
    n_outputs: int = Field(1, ge=1)
    init: InitMode = InitMode.CORRELATED
    init_spec: InitSpec = Field(default_factory=InitSpec)
    seed: int = 0

    @field_validator("widths")
    @classmethod
    def _positive_widths(cls, widths: List[int]) -> List[int]:
        if any(w < 1 for w in widths):
            raise ValueError(f"all layer widths must be >= 1, got {widths}")
        return widths


class SyntheticDataset(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    inputs: np.ndarray
    targets: np.ndarray
    labels: Optional[np.ndarray] = None
    smooth_len: float
    teacher_seed: int
    target_scale: float = 1.0
    # per-output mean removed from the raw teacher outputs
    target_offset: Optional[np.ndarray] = None

    @model_validator(mode="after")
    def _check_arrays(self) -> "SyntheticDataset":
        if self.inputs.ndim != 4:
            raise ValueError(f"inputs must be (n, C, H, W), got shape {self.inputs.shape}")
        if len(self.targets) != len(self.inputs):
            raise ValueError("inputs and targets differ in length")
        if not np.all(np.isfinite(self.inputs)):
            raise ValueError("inputs contain non-finite values")
        return self

    def __len__(self) -> int:
        return len(self.inputs)

    def subset(self, index: np.ndarray) -> "SyntheticDataset":
        return SyntheticDataset(
            inputs=self.inputs[index], targets=self.targets[index],
            labels=None if self.labels is None else self.labels[index],
            smooth_len=self.smooth_len, teacher_seed=self.teacher_seed, target_scale=self.target_scale,
            target_offset=self.target_offset,
        )


class TrainConfig(BaseModel):
    # zero epochs yields an empty report
    epochs: int = Field(10, ge=0)
    batch_size: int = Field(32, ge=1)
    lr: float = Field(0.05, ge=0.0)
    lr_decay_factor: float = Field(0.3, gt=0.0, le=1.0)
    lr_decay_epochs: List[int] = Field(default_factory=list)
    l2_lambda: float = Field(0.0, ge=0.0)
    l2_targets: L2Targets = L2Targets.CONV
    momentum: float = Field(0.9, ge=0.0, lt=1.0)
    loss: LossMode = LossMode.QUADRATIC
    eval_fraction: float = Field(0.2, ge=0.0, lt=1.0)
    seed: int = 0


class TrainReport(BaseModel):
    net_config: ToyNetConfig
    train_config: TrainConfig
    status: str = "ok"
    epochs_completed: int = 0
    train_loss: List[float] = Field(default_factory=list)
    eval_loss: List[Optional[float]] = Field(default_factory=list)
    eval_accuracy: List[Optional[float]] = Field(default_factory=list)
    initial_profiles: List[Optional[CorrelationProfile]] = Field(default_factory=list)
    profiles: List[List[Optional[CorrelationProfile]]] = Field(default_factory=list)
    inactive_units: List[List[int]] = Field(default_factory=list)
    inactive_unit_grad: List[float] = Field(default_factory=list)
    wall_clock: float = 0.0
    weight_files: List[str] = Field(default_factory=list)
    final_weights: List[LayerTensor] = Field(default_factory=list, exclude=True)

    def final_profile(self, layer: int = 0) -> Optional[CorrelationProfile]:
        if not self.profiles:
            return self.initial_profiles[layer] if self.initial_profiles else None
        return self.profiles[-1][layer]


# --- cli ---

class RunManifest(BaseModel):
    subcommand: str
    parameters: Dict[str, object] = Field(default_factory=dict)
    seed: Optional[int] = None
    tool_version: str
    outputs: List[str] = Field(default_factory=list)
    wall_clock: float = 0.0
    config_hash: str = ""
