import numpy as np
import pytest

from corrinit.engine import (
    DataSettings, run_analysis_pipeline, run_jobs, run_training_pipeline, summary_rows, teacher_dataset,
)
from corrinit.init_core import uncorrelated_layer_init
from corrinit.models import InitMode, LossMode, ToyNetConfig, TrainConfig
from corrinit.storage import write_layer_tensor

TINY_NET = ToyNetConfig(widths=[2])
TINY_DATA = DataSettings(n_samples=16, height=6, width=6)
ONE_EPOCH = TrainConfig(epochs=1, batch_size=8)


def _fail():
    raise RuntimeError("boom")


def test_run_jobs_keeps_going_after_a_failure():
    progress = []
    results, errors = run_jobs(
        [{"name": "a", "func": lambda: 1}, {"name": "b", "func": _fail}, {"name": "c", "func": lambda: 3}],
        progress_callback=lambda fraction, message: progress.append(fraction),
    )
    assert results == [("a", 1), ("c", 3)]
    assert errors == ["Failed to run b: boom"]
    assert progress[0] == 0.0 and progress[-1] == 1.0


def test_teacher_dataset_depends_only_on_seed():
    a = teacher_dataset(3, TINY_NET, TINY_DATA, LossMode.QUADRATIC)
    b = teacher_dataset(3, TINY_NET.model_copy(update={"init": InitMode.UNCORRELATED}), TINY_DATA, LossMode.QUADRATIC)
    np.testing.assert_array_equal(a.inputs, b.inputs)
    np.testing.assert_array_equal(a.targets, b.targets)
    assert a.teacher_seed != 3
    assert not np.array_equal(a.inputs, teacher_dataset(4, TINY_NET, TINY_DATA, LossMode.QUADRATIC).inputs)


@pytest.mark.parametrize("seed", [4, 7])
def test_default_teacher_targets_have_zero_mean(seed):
    data = teacher_dataset(seed, ToyNetConfig(), DataSettings(), LossMode.QUADRATIC)
    assert abs(float(data.targets.mean())) < 1e-12
    assert data.targets.std() == pytest.approx(1.0)


def test_default_networks_keep_active_units():
    runs, errors = run_training_pipeline(ToyNetConfig(), TrainConfig(epochs=2), range(10), compare_init=True)
    assert errors == []
    assert len(runs) == 20
    for run in runs:
        report = run.report
        assert report.status == "ok"
        for inactive, width in zip(report.inactive_units[-1], report.net_config.widths):
            assert inactive < width, f"{run.label}: every unit of a layer is inactive"


def test_single_runs_per_seed():
    runs, errors = run_training_pipeline(TINY_NET, ONE_EPOCH, [0, 1], TINY_DATA)
    assert errors == []
    assert [r.label for r in runs] == ["seed0-correlated", "seed1-correlated"]
    assert [r.report.net_config.seed for r in runs] == [0, 1]
    assert [r.report.train_config.seed for r in runs] == [0, 1]


def test_compare_init_pairs():
    runs, _ = run_training_pipeline(TINY_NET, ONE_EPOCH, [5], TINY_DATA, compare_init=True)
    assert [r.label for r in runs] == ["seed5-correlated", "seed5-uncorrelated"]


def test_l2_sweep_labels():
    runs, _ = run_training_pipeline(TINY_NET, ONE_EPOCH, [2], TINY_DATA, l2_sweep=[0.0, 0.005])
    assert [r.label for r in runs] == ["seed2-uncorrelated-l2=0", "seed2-uncorrelated-l2=0.005"]
    assert [r.l2_lambda for r in runs] == [0.0, 0.005]


def test_failing_seed_is_reported():
    runs, errors = run_training_pipeline(TINY_NET, ONE_EPOCH, [0], TINY_DATA.model_copy(update={"smooth_len": 0.0}))
    assert runs == []
    assert len(errors) == 1 and "seed 0" in errors[0]


def test_summary_rows():
    runs, _ = run_training_pipeline(TINY_NET, TrainConfig(epochs=2, batch_size=8), [0], TINY_DATA, compare_init=True)
    rows = summary_rows(runs, loss_epoch=2)
    assert [row["init"] for row in rows] == ["correlated", "uncorrelated"]
    for row, run in zip(rows, runs):
        assert row["epoch2_train_loss"] == run.report.train_loss[1]
        assert row["final_train_loss"] == run.report.train_loss[-1]
        assert row["epochs_completed"] == 2
    assert summary_rows(runs)[0]["epoch5_train_loss"] is None


def test_analysis_pipeline(tmp_path):
    good = write_layer_tensor(uncorrelated_layer_init(8, 1, 3, seed=1), tmp_path / "good.tensor.json")
    bad = tmp_path / "bad.tensor.json"
    bad.write_text("{", encoding="utf-8")
    profiles, errors = run_analysis_pipeline([good, bad])
    assert list(profiles) == [str(good)]
    assert len(errors) == 1 and str(bad) in errors[0]


# --- desk-scale experiments ---

@pytest.mark.slow
def test_correlated_init_trains_faster():
    runs, errors = run_training_pipeline(ToyNetConfig(), TrainConfig(epochs=10), range(10), compare_init=True)
    assert errors == []
    pairs = [(runs[i].report, runs[i + 1].report) for i in range(0, len(runs), 2)]
    assert sum(c.train_loss[4] < u.train_loss[4] for c, u in pairs) >= 8
    assert sum(c.eval_loss[-1] < u.eval_loss[-1] for c, u in pairs) >= 7
    first = np.median([r.report.train_loss[0] for r in runs])
    last = np.median([r.report.train_loss[-1] for r in runs])
    assert last < first


@pytest.mark.slow
def test_l2_raises_neighbor_correlation():
    runs, errors = run_training_pipeline(ToyNetConfig(), TrainConfig(epochs=10), range(10), l2_sweep=[0.0, 5e-3])
    assert errors == []
    pairs = [(runs[i].report, runs[i + 1].report) for i in range(0, len(runs), 2)]
    assert sum(r.final_profile(0).at(1.0) > c.final_profile(0).at(1.0) for c, r in pairs) >= 7
