import os
import time
from enum import Enum
from pathlib import Path
from typing import List, Optional, Tuple

import pandas as pd
import typer
from dotenv import load_dotenv
from pydantic import BaseModel, TypeAdapter, ValidationError

from corrinit.correlation import compare_profiles, profile_frame
from corrinit.dynamics import run as run_dynamics, trajectory_frame, trajectory_summary
from corrinit.engine import DataSettings, run_analysis_pipeline, run_training_pipeline, summary_rows
from corrinit.init_core import layer_init, summary_stats, uncorrelated_layer_init
from corrinit.models import (
    DecayProfile, DynamicsConfig, DynamicsMode, Estimator, InitMode, InitSpec, L2Targets,
    LocationStrategy, LossMode, PropagationMode, PropagationReport, Scaling, Strategy, StrengthDraw,
    ToyNetConfig, TrainConfig, TwoSampleSystem,
)
from corrinit.propagation import sweep, sweep_frame
from corrinit.storage import (
    TENSOR_SUFFIX, build_manifest, manifest_path, read_manifest, write_csv, write_json, write_layer_tensor, write_manifest,
)
from corrinit.utils import setup_logging

# --- SETUP ---
load_dotenv()
setup_logging()

app = typer.Typer(
    name="corrinit",
    help="Correlated filter initialization: generate weights, simulate dynamics and propagation, analyze and train.",
    add_completion=False,
)

DEFAULT_OUTPUT_DIR = "runs"


def _output_dir() -> Path:
    return Path(os.getenv("CORRINIT_OUTPUT_DIR", DEFAULT_OUTPUT_DIR))


def _build(model: type, **fields) -> BaseModel:
    """Builds a config model; a validation failure becomes a usage error naming the flag."""
    try:
        return model(**fields)
    except ValidationError as e:
        error = e.errors()[0]
        field = str(error["loc"][0]) if error["loc"] else ""
        raise typer.BadParameter(error["msg"], param_hint=f"--{field.replace('_', '-')}" if field else None)


def _jsonable(value):
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def _parameters(ctx: typer.Context) -> dict:
    return {name: _jsonable(value) for name, value in ctx.params.items()}


def _parse_list(text: Optional[str], cast, flag: str) -> list:
    if not text:
        return []
    try:
        return [cast(item.strip()) for item in text.split(",") if item.strip()]
    except ValueError:
        raise typer.BadParameter(f"expected a comma-separated list, got {text!r}", param_hint=flag)


def _parse_locations(values: Optional[List[str]]) -> List[Tuple[int, int]]:
    locations = []
    for value in values or []:
        parts = _parse_list(value, int, "--location")
        if len(parts) != 2:
            raise typer.BadParameter(f"expected ROW,COL, got {value!r}", param_hint="--location")
        locations.append((parts[0], parts[1]))
    return locations


def _done(message: str):
    typer.echo(typer.style(f"✅ {message}", fg=typer.colors.GREEN))


# --- CLI COMMANDS ---
@app.command()
def init(
    ctx: typer.Context,
    strategy: Strategy = typer.Option(Strategy.NEIGHBOR, "--strategy", help="Representation centers: all, cen, nei, or custom (with --location)."),
    location: List[str] = typer.Option(None, "--location", help="ROW,COL of a custom center. Repeat for several."),
    k: int = typer.Option(3, "--k", min=1, help="Filter size (odd)."),
    filters: int = typer.Option(1, "--filters", min=1, help="Number of output filters."),
    channels: int = typer.Option(1, "--channels", min=1, help="Input channels per filter."),
    alpha: float = typer.Option(0.05, "--alpha", min=0.0, max=1.0, help="Weight of the independent noise matrix."),
    scaling: Scaling = typer.Option(Scaling.AS_WRITTEN, "--scaling", help="Strength bound: 1/sqrt(n_l) or variance-corrected."),
    strength: StrengthDraw = typer.Option(StrengthDraw.UNIFORM, "--strength", help="Law of the filter strength s."),
    a1: float = typer.Option(0.9, "--a1", min=0.0, max=1.0, help="g(1)."),
    a_sqrt2: float = typer.Option(0.7, "--a-sqrt2", min=0.0, max=1.0, help="g(sqrt 2)."),
    a2: float = typer.Option(0.5, "--a2", min=0.0, max=1.0, help="g(2)."),
    a_sqrt5: float = typer.Option(0.0, "--a-sqrt5", min=0.0, max=1.0, help="g(sqrt 5)."),
    a_sqrt8: float = typer.Option(0.0, "--a-sqrt8", min=0.0, max=1.0, help="g(sqrt 8)."),
    a_other: float = typer.Option(0.0, "--a-other", min=0.0, max=1.0, help="g at every other distance."),
    gaussian_sigma: Optional[float] = typer.Option(None, "--gaussian-sigma", help="Use a Gaussian decay of this width instead of the --a* factors."),
    uncorrelated: bool = typer.Option(False, "--uncorrelated", help="Independent U(-1/sqrt(n_l), 1/sqrt(n_l)) weights instead."),
    seed: int = typer.Option(0, "--seed"),
    output: Optional[Path] = typer.Option(None, "--output", "-o", help=f"Tensor file (default: <output dir>/init{TENSOR_SUFFIX})."),
):
    """Generate a (filters, channels, k, k) layer and write it as a LayerTensor file."""
    start = time.perf_counter()
    output = output or _output_dir() / f"init{TENSOR_SUFFIX}"
    if uncorrelated:
        tensor = uncorrelated_layer_init(filters, channels, k, seed=seed)
    else:
        if gaussian_sigma is not None:
            if gaussian_sigma <= 0:
                raise typer.BadParameter("must be positive", param_hint="--gaussian-sigma")
            decay = DecayProfile.gaussian(gaussian_sigma)
        else:
            decay = _build(DecayProfile, a1=a1, a_sqrt2=a_sqrt2, a2=a2, a_sqrt5=a_sqrt5, a_sqrt8=a_sqrt8, a_other=a_other)
        locations = _parse_locations(location)
        if strategy == Strategy.CUSTOM:
            if not locations:
                raise typer.BadParameter("the custom strategy needs at least one --location", param_hint="--strategy")
            if any(not (0 <= r < k and 0 <= c < k) for r, c in locations):
                raise typer.BadParameter(f"locations must lie on the {k}x{k} grid", param_hint="--location")
        spec = _build(
            InitSpec, k=k, n_l=filters * channels * k * k, strategy=LocationStrategy(variant=strategy, locations=locations),
            decay=decay, alpha=alpha, scaling=scaling, strength=strength, seed=seed,
        )
        tensor = layer_init(filters, channels, spec)

    write_layer_tensor(tensor, output)
    stats = summary_stats(tensor)
    manifest = build_manifest("init", _parameters(ctx), seed, [output], time.perf_counter() - start)
    write_manifest(manifest, output)
    typer.echo(f"Layer {tensor.shape}: variance {stats['variance']:.6g}, min {stats['min']:.6g}, max {stats['max']:.6g}")
    if "response_variance" in stats:
        typer.echo(f"Response variance to a constant input: {stats['response_variance']:.6g}")
    _done(f"Saved tensor to '{output.resolve()}'")


@app.command()
def dynamics(
    ctx: typer.Context,
    d0: float = typer.Option(0.2, "--d0", min=0.0, max=1.0),
    d1: float = typer.Option(0.2, "--d1", min=0.0, max=1.0),
    lr: float = typer.Option(0.05, "--lr", min=0.0, help="Learning rate (lambda)."),
    w0: float = typer.Option(0.3, "--w0", help="Initial w0."),
    w1: float = typer.Option(0.0, "--w1", help="Initial w1."),
    wstar0: float = typer.Option(1.0, "--wstar0", help="Optimum (wstar0, 0)."),
    mode: DynamicsMode = typer.Option(DynamicsMode.GENERIC, "--mode", help="Update rule."),
    max_iters: int = typer.Option(10_000, "--max-iters", min=1),
    eps: float = typer.Option(1e-3, "--eps", help="Convergence radius around the optimum."),
    symmetric: bool = typer.Option(False, "--symmetric", help="Add the two mirrored samples."),
    target_noise: float = typer.Option(0.0, "--target-noise", help="Additive offset on every target (generic mode)."),
    output: Optional[Path] = typer.Option(None, "--output", "-o", help="Trajectory CSV (default: <output dir>/dynamics.csv)."),
):
    """Gradient descent of one ReLU filter on the two-sample system; writes the trajectory."""
    start = time.perf_counter()
    output = output or _output_dir() / "dynamics.csv"
    system = _build(TwoSampleSystem, d0=d0, d1=d1, w_star0=wstar0, symmetric_extension=symmetric)
    try:
        config = DynamicsConfig(system=system, w0_init=w0, w1_init=w1, lr=lr, max_iters=max_iters,
                                convergence_eps=eps, mode=mode, target_noise=target_noise)
    except ValidationError as e:
        raise typer.BadParameter(e.errors()[0]["msg"])
    trajectory = run_dynamics(config)

    write_csv(trajectory_frame(trajectory), output)
    summary = trajectory_summary(trajectory)
    summary_path = output.with_suffix(".summary.json")
    write_json(summary, summary_path)
    write_manifest(build_manifest("dynamics", _parameters(ctx), None, [output, summary_path], time.perf_counter() - start), output)
    for key, value in summary.model_dump().items():
        typer.echo(f"  {key}: {value}")
    _done(f"Saved trajectory to '{output.resolve()}'")


@app.command()
def propagate(
    ctx: typer.Context,
    k: List[int] = typer.Option([3], "--k", min=1, help="Filter width. Repeat to sweep."),
    l: List[int] = typer.Option([1], "--l", min=0, help="Depth. Repeat to sweep."),
    mode: Optional[PropagationMode] = typer.Option(None, "--mode", help="Only this weight mode (default: both)."),
    u: float = typer.Option(1.0, "--u", help="Weights are U(-u, u)."),
    trials: int = typer.Option(100_000, "--trials", min=1),
    estimator: Estimator = typer.Option(Estimator.PRODUCT, "--estimator"),
    workers: int = typer.Option(1, "--workers", min=1, help="Threads for Monte Carlo chunks."),
    seed: int = typer.Option(0, "--seed"),
    output: Optional[Path] = typer.Option(None, "--output", "-o", help="Sweep CSV (default: <output dir>/propagate.csv)."),
    json_output: Optional[Path] = typer.Option(None, "--json", help="Also write the full reports as JSON."),
):
    """Monte Carlo E|c^l| on a (k, l) grid next to both closed forms."""
    start = time.perf_counter()
    output = output or _output_dir() / "propagate.csv"
    if u <= 0:
        raise typer.BadParameter("must be positive", param_hint="--u")
    modes = [mode] if mode else list(PropagationMode)
    reports = sweep(k, l, modes, u=u, trials=trials, seed=seed, estimator=estimator, workers=workers)
    frame = sweep_frame(reports)
    write_csv(frame, output)
    outputs = [output]
    if json_output:
        json_output.parent.mkdir(parents=True, exist_ok=True)
        json_output.write_bytes(TypeAdapter(List[PropagationReport]).dump_json(reports, indent=2))
        outputs.append(json_output)
    write_manifest(build_manifest("propagate", _parameters(ctx), seed, outputs, time.perf_counter() - start), output)
    typer.echo(frame[["k", "l", "mode", "estimate", "stderr", "closed_form_corrected", "exact", "deviation_stderr"]].to_string(index=False))
    _done(f"Saved sweep to '{output.resolve()}'")


@app.command()
def analyze(
    ctx: typer.Context,
    files: List[Path] = typer.Argument(..., help="LayerTensor files."),
    output: Optional[Path] = typer.Option(None, "--output", "-o", help="Profile CSV (default: <output dir>/profiles.csv)."),
    compare: Optional[Path] = typer.Option(None, "--compare", help="Also write a distance x file comparison table here."),
):
    """Distance-dependent Pearson correlation of the weights in each file."""
    start = time.perf_counter()
    output = output or _output_dir() / "profiles.csv"
    profiles, errors = run_analysis_pipeline(files)
    if errors:
        typer.echo("\n⚠️ The following errors occurred during the analysis:")
        for error in errors:
            typer.echo(f"  - {error}")
        raise typer.Exit(code=1)

    frames = []
    for name, profile in profiles.items():
        source = manifest_path(name)
        if source.exists():
            manifest = read_manifest(source)
            typer.echo(f"{name}: written by '{manifest.subcommand}' (seed {manifest.seed}, corrinit {manifest.tool_version})")
        frame = profile_frame(profile)
        frame.insert(0, "file", name)
        frame["skipped_pairs"] = profile.skipped_pairs
        frames.append(frame)
    table = pd.concat(frames, ignore_index=True)
    write_csv(table, output)
    outputs = [output]
    if compare:
        write_csv(compare_profiles(profiles), compare)
        outputs.append(compare)
    write_manifest(build_manifest("analyze", _parameters(ctx), None, outputs, time.perf_counter() - start), output)
    typer.echo(table.to_string(index=False))
    _done(f"Saved profiles to '{output.resolve()}'")


@app.command()
def train(
    ctx: typer.Context,
    seeds: int = typer.Option(1, "--seeds", min=1, help="Number of seeds, starting at --seed."),
    seed: int = typer.Option(0, "--seed"),
    compare_init: bool = typer.Option(False, "--compare-init", help="Train a correlated and an uncorrelated net per seed."),
    l2_sweep: Optional[str] = typer.Option(None, "--l2-sweep", help="Comma-separated L2 strengths, each trained from uncorrelated init."),
    init_mode: InitMode = typer.Option(InitMode.CORRELATED, "--init", help="Init of single runs."),
    widths: str = typer.Option("8,8", "--widths", help="Channels per conv layer, comma-separated (1 to 4 layers)."),
    epochs: int = typer.Option(10, "--epochs", min=0),
    batch_size: int = typer.Option(32, "--batch-size", min=1),
    lr: float = typer.Option(0.05, "--lr", min=0.0),
    lr_decay_factor: float = typer.Option(0.3, "--lr-decay-factor", min=0.0, max=1.0),
    lr_decay_epochs: Optional[str] = typer.Option(None, "--lr-decay-epochs", help="Comma-separated epochs after which the rate drops."),
    momentum: float = typer.Option(0.9, "--momentum", min=0.0, max=1.0),
    l2: float = typer.Option(0.0, "--l2", min=0.0, help="L2 strength of single and paired runs."),
    l2_targets: L2Targets = typer.Option(L2Targets.CONV, "--l2-targets"),
    loss: LossMode = typer.Option(LossMode.QUADRATIC, "--loss"),
    n_outputs: int = typer.Option(1, "--outputs", min=1, help="Teacher outputs (classes for cross-entropy)."),
    n_samples: int = typer.Option(256, "--samples", min=2),
    size: int = typer.Option(12, "--size", min=1, help="Input height and width."),
    smooth_len: float = typer.Option(1.5, "--smooth-len", min=0.0),
    eval_fraction: float = typer.Option(0.2, "--eval-fraction", min=0.0, max=1.0),
    output_dir: Optional[Path] = typer.Option(None, "--output-dir", help="Default: $CORRINIT_OUTPUT_DIR or ./runs."),
):
    """Teacher-student training runs; writes reports, loss curves, weight snapshots and a summary."""
    start = time.perf_counter()
    output_dir = output_dir or _output_dir()
    sweep_values = _parse_list(l2_sweep, float, "--l2-sweep")
    if any(v < 0 for v in sweep_values):
        raise typer.BadParameter("L2 strengths must be >= 0", param_hint="--l2-sweep")
    if loss == LossMode.CROSS_ENTROPY and n_outputs < 2:
        raise typer.BadParameter("cross-entropy needs at least two outputs", param_hint="--outputs")

    net_config = _build(ToyNetConfig, widths=_parse_list(widths, int, "--widths"), n_outputs=n_outputs,
                        init=init_mode, seed=seed)
    train_config = _build(
        TrainConfig, epochs=epochs, batch_size=batch_size, lr=lr, lr_decay_factor=lr_decay_factor,
        lr_decay_epochs=_parse_list(lr_decay_epochs, int, "--lr-decay-epochs"), l2_lambda=l2,
        l2_targets=l2_targets, momentum=momentum, loss=loss, eval_fraction=eval_fraction, seed=seed,
    )
    settings = _build(DataSettings, n_samples=n_samples, height=size, width=size, smooth_len=smooth_len)
    runs, errors = run_training_pipeline(net_config, train_config, list(range(seed, seed + seeds)), settings,
                                         compare_init=compare_init, l2_sweep=sweep_values or None)

    outputs = []
    for run in runs:
        report = run.report
        for i, tensor in enumerate(report.final_weights):
            path = write_layer_tensor(tensor, output_dir / "weights" / f"{run.label}.layer{i}{TENSOR_SUFFIX}")
            report.weight_files.append(str(path))
            outputs.append(path)
        curve = pd.DataFrame({
            "epoch": list(range(1, report.epochs_completed + 1)),
            "train_loss": report.train_loss,
            "eval_loss": report.eval_loss,
            "eval_acc": report.eval_accuracy,
        })
        outputs.append(write_csv(curve, output_dir / "curves" / f"{run.label}.csv"))
        outputs.append(write_json(report, output_dir / "reports" / f"{run.label}.json", exclude={"wall_clock"}))

    summary = pd.DataFrame(summary_rows(runs))
    summary_path = write_csv(summary, output_dir / "summary.csv")
    manifest = build_manifest("train", _parameters(ctx), seed, [summary_path, *outputs], time.perf_counter() - start)
    write_manifest(manifest, summary_path)

    if not summary.empty:
        typer.echo(summary.to_string(index=False))
    if errors:
        typer.echo("\n⚠️ The following errors occurred during training:")
        for error in errors:
            typer.echo(f"  - {error}")
        raise typer.Exit(code=1)
    _done(f"Saved {len(runs)} runs to '{output_dir.resolve()}'")


if __name__ == "__main__":
    app()
