import logging
from functools import partial
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from corrinit.correlation import distance_profile
from corrinit.models import (
    CorrelationProfile, InitMode, LossMode, SyntheticDataset, ToyNetConfig, TrainConfig, TrainReport,
)
from corrinit.storage import read_layer_tensor
from corrinit.trainer.data import make_teacher_dataset
from corrinit.trainer.training import compare_inits_experiment, epoch_loss, l2_correlation_experiment, train
from corrinit.utils import derive_seed

TEACHER_STREAM = 3_000
DATA_STREAM = 3_001

Job = Dict[str, Any]


class DataSettings(BaseModel):
    n_samples: int = Field(256, ge=2)
    height: int = Field(12, ge=1)
    width: int = Field(12, ge=1)
    smooth_len: float = Field(1.5, ge=0.0)


class TrainRun(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    label: str
    seed: int
    l2_lambda: float
    report: TrainReport


def run_jobs(jobs: Sequence[Job], progress_callback=None) -> Tuple[List[Tuple[str, Any]], List[str]]:
    """
    Runs each {"name", "func"} job in order.

    A failing job is logged and recorded in the error list; the remaining
    jobs still run. Returns ((name, result) for every successful job, errors).
    """
    log = logging.getLogger(__name__)
    results: List[Tuple[str, Any]] = []
    errors: List[str] = []
    for i, job in enumerate(jobs):
        name = job["name"]
        if progress_callback:
            progress_callback(i / len(jobs), f"Running {name}...")
        try:
            results.append((name, job["func"]()))
        except Exception as e:
            error_message = f"Failed to run {name}: {e}"
            log.error(error_message)
            errors.append(error_message)
    if progress_callback:
        progress_callback(1.0, "Done.")
    log.info(f"{len(results)} of {len(jobs)} jobs finished, {len(errors)} failed")
    return results, errors


def teacher_dataset(seed: int, student: ToyNetConfig, settings: DataSettings, loss: LossMode) -> SyntheticDataset:
    """The teacher shares the student's architecture and init recipe but has its own seed."""
    teacher = student.model_copy(update={"init": InitMode.CORRELATED, "seed": derive_seed(seed, TEACHER_STREAM)})
    rng = np.random.default_rng(derive_seed(seed, DATA_STREAM))
    return make_teacher_dataset(settings.n_samples, teacher, rng, height=settings.height, width=settings.width,
                                smooth_len=settings.smooth_len, loss=loss)


def _label(seed: int, init: InitMode, l2_lambda: Optional[float] = None) -> str:
    label = f"seed{seed}-{init.value}"
    return label if l2_lambda is None else f"{label}-l2={l2_lambda:g}"


def _seed_run(
    seed: int,
    net_config: ToyNetConfig,
    train_config: TrainConfig,
    settings: DataSettings,
    compare_init: bool,
    l2_sweep: Optional[Sequence[float]],
) -> List[TrainRun]:
    net = net_config.model_copy(update={"seed": seed})
    cfg = train_config.model_copy(update={"seed": seed})
    data = teacher_dataset(seed, net, settings, cfg.loss)
    if l2_sweep:
        net = net.model_copy(update={"init": InitMode.UNCORRELATED})
        reports = l2_correlation_experiment(net, data, cfg, lambdas=l2_sweep)
        return [TrainRun(label=_label(seed, net.init, lam), seed=seed, l2_lambda=lam, report=r)
                for lam, r in zip(l2_sweep, reports)]
    if compare_init:
        correlated, uncorrelated = compare_inits_experiment(net, data, cfg)
        return [TrainRun(label=_label(seed, r.net_config.init), seed=seed, l2_lambda=cfg.l2_lambda, report=r)
                for r in (correlated, uncorrelated)]
    return [TrainRun(label=_label(seed, net.init), seed=seed, l2_lambda=cfg.l2_lambda, report=train(net, data, cfg))]


def run_training_pipeline(
    net_config: ToyNetConfig,
    train_config: TrainConfig,
    seeds: Sequence[int],
    settings: Optional[DataSettings] = None,
    compare_init: bool = False,
    l2_sweep: Optional[Sequence[float]] = None,
    progress_callback=None,
) -> Tuple[List[TrainRun], List[str]]:
    """
    One job per seed: build that seed's teacher dataset, then train one run,
    a correlated/uncorrelated pair (compare_init) or one run per L2 strength
    (l2_sweep, from uncorrelated init).
    """
    log = logging.getLogger(__name__)
    settings = settings or DataSettings()
    log.info(f"Starting training pipeline: {len(seeds)} seeds, compare_init={compare_init}, l2_sweep={l2_sweep}")
    jobs = [
        {"name": f"seed {seed}",
         "func": partial(_seed_run, seed, net_config, train_config, settings, compare_init, l2_sweep)}
        for seed in seeds
    ]
    results, errors = run_jobs(jobs, progress_callback)
    runs = [run for _, seed_runs in results for run in seed_runs]
    return runs, errors


def _analyze(path: Path) -> CorrelationProfile:
    return distance_profile(read_layer_tensor(path))


def run_analysis_pipeline(paths: Sequence[Path], progress_callback=None) -> Tuple[Dict[str, CorrelationProfile], List[str]]:
    """distance_profile of every readable tensor file, keyed by file name."""
    jobs = [{"name": str(p), "func": partial(_analyze, p)} for p in paths]
    results, errors = run_jobs(jobs, progress_callback)
    return dict(results), errors


def summary_rows(runs: Sequence[TrainRun], loss_epoch: int = 5) -> List[dict]:
    rows = []
    for run in runs:
        r = run.report
        profile = r.final_profile(0)
        rows.append({
            "label": run.label,
            "seed": run.seed,
            "init": r.net_config.init.value,
            "l2_lambda": run.l2_lambda,
            "status": r.status,
            "epochs_completed": r.epochs_completed,
            f"epoch{loss_epoch}_train_loss": epoch_loss(r, loss_epoch),
            "final_train_loss": epoch_loss(r, r.epochs_completed),
            "final_eval_loss": r.eval_loss[-1] if r.eval_loss else None,
            "final_d1_correlation": profile.at(1.0) if profile else None,
        })
    return rows
