"""
Command-line interface for PGN GAN Lab.
"""

import argparse
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from . import __version__
from .checkpoint import (
    Checkpoint,
    CheckpointError,
    CheckpointMismatchError,
    load_checkpoint,
    read_tensor_file,
    save_checkpoint,
)
from .datasets import DatasetError
from .export import ExportError, export_samples
from .log import configure_logging
from .metrics import (
    MetricsError,
    MetricsReport,
    evaluate_generator,
    evaluate_real_vs_real,
    generate,
)
from .nn import Activation, NetworkSpec, ParameterStore, kaiming_init
from .run_config import ConfigurationError, RunConfig, load_run_config
from .train import MetricsLog, TrainingDivergedError, eval_rng, train_pgn_gan
from .verification import VerifyReport, VerifySettings, run_verify

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DIVERGED = 2

METRICS_FILE = "metrics.csv"
FINAL_CHECKPOINT = "final.ckpt"
DIVERGED_CHECKPOINT = "diverged.ckpt"
EXPORT_SAMPLES = 1000
EVAL_SAMPLES = 10000

console = Console(stderr=True)


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports usage errors with exit code 1."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def print_banner() -> None:
    console.print(Panel.fit(f"[bold]PGN GAN LAB[/bold] [dim]v{__version__}[/dim]", border_style="cyan"))


def _error(kind: str, error: Exception) -> int:
    console.print(f"[red]{kind}:[/red] {error}")
    return EXIT_ERROR


def _samples_path(config: RunConfig, directory: Path) -> Path:
    return directory / ("samples" if config.task == "images" else "samples.csv")


def _check_generator(g_spec: NetworkSpec, params: ParameterStore) -> None:
    expected = kaiming_init(g_spec, 0).shapes()
    if params.shapes() != expected:
        raise CheckpointMismatchError(
            f"Generator parameters {params.shapes()} do not match the configured network {expected}"
        )


def cmd_train(config_path: str, resume: Optional[str] = None, out_dir: Optional[str] = None) -> int:
    """
    Train from a run config, writing metrics, checkpoints and samples.

    Returns:
        0 on completion, 1 on bad input, 2 if training diverged.
    """
    try:
        config = load_run_config(config_path)
        dataset = config.build_dataset()
        g_spec, d_spec = config.build_networks()
        resume_checkpoint = load_checkpoint(resume) if resume else None
    except ConfigurationError as e:
        return _error("Configuration error", e)
    except (DatasetError, CheckpointError) as e:
        return _error("Error", e)

    out = Path(out_dir or config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_config = config.train_config()
    start_step = resume_checkpoint.step if resume_checkpoint else 0

    metrics_log = None
    if train_config.total_steps > start_step:
        metrics_log = MetricsLog(out / METRICS_FILE)
        metrics_log.start(start_step)

    def on_checkpoint(checkpoint: Checkpoint) -> None:
        save_checkpoint(checkpoint, out / f"step_{checkpoint.step:06d}.ckpt")

    console.print(
        f"[cyan]Training[/cyan] {config.task} with {config.normalizer}/{config.loss} "
        f"for {config.steps} steps into [bold]{out}[/bold]"
    )
    try:
        result = train_pgn_gan(
            train_config,
            g_spec,
            d_spec,
            dataset,
            resume=resume_checkpoint,
            config_text=config.to_text(),
            on_metrics=metrics_log.append if metrics_log else None,
            on_checkpoint=on_checkpoint,
        )
    except CheckpointMismatchError as e:
        return _error("Checkpoint mismatch", e)
    except MetricsError as e:
        return _error("Metrics error", e)
    except TrainingDivergedError as e:
        path = save_checkpoint(e.checkpoint, out / DIVERGED_CHECKPOINT)
        console.print(f"[red]Training diverged:[/red] {e}")
        console.print(f"[dim]Last good state saved to {path}[/dim]")
        return EXIT_DIVERGED

    save_checkpoint(result.checkpoint, out / FINAL_CHECKPOINT)
    if result.g_updates:
        samples = generate(
            g_spec,
            result.checkpoint.ema,
            min(config.eval_samples, EXPORT_SAMPLES),
            eval_rng(config.seed, result.checkpoint.step),
        )
        export_samples(_samples_path(config, out), samples)

    summary = Table(title="Training Summary", show_header=False, box=None, padding=(0, 2))
    summary.add_column("Metric", style="bold")
    summary.add_column("Value", justify="right")
    summary.add_row("Final step", str(result.checkpoint.step))
    summary.add_row("Discriminator updates", str(result.d_updates))
    summary.add_row("Generator updates", str(result.g_updates))
    if result.metrics:
        last = result.metrics[-1]
        summary.add_row("Frechet", f"{last.frechet:.5f}")
        summary.add_row("Mode coverage", str(last.mode_coverage))
        summary.add_row("High-quality ratio", f"{last.high_quality_ratio:.4f}")
        summary.add_row("Max grad norm", f"{last.grad_norm_max:.6f}")
    console.print(summary)
    return EXIT_OK


def _apply_net_option(settings: VerifySettings, option: str) -> None:
    key, separator, value = option.partition("=")
    key = key.strip()
    if not separator:
        raise ConfigurationError(f"--net expects key=value, got '{option}'")
    try:
        if key == "d_hidden":
            settings.hidden = tuple(int(part) for part in value.split(",") if part.strip())
        elif key == "activation":
            activation = Activation.from_string(value)
            if activation is None or not activation.piecewise_linear:
                raise ConfigurationError(f"Invalid activation for --net: {value}")
            settings.activation = activation
        elif key == "leaky_slope":
            settings.slope = float(value)
        elif key == "input_dim":
            settings.input_dim = int(value)
        elif key == "width":
            settings.width = int(value)
        elif key == "n_nets":
            settings.n_nets = int(value)
        else:
            raise ConfigurationError(f"Unknown --net key: {key}")
    except ValueError as e:
        raise ConfigurationError(f"Invalid value for --net {key}: {value} ({e})") from None


def print_verify_report(report: VerifyReport) -> None:
    table = Table(title="Verification", padding=(0, 1))
    table.add_column("Check", style="bold")
    table.add_column("Samples", justify="right")
    table.add_column("Worst", justify="right")
    table.add_column("Tolerance", justify="right")
    table.add_column("Result", justify="center")
    for check in report.checks:
        status = "[green]PASS[/green]" if check.passed else "[red]FAIL[/red]"
        table.add_row(
            check.name, str(check.samples), f"{check.worst:.3e}", f"{check.tolerance:.0e}", status
        )
    console.print(table)
    for check in report.checks:
        if check.detail:
            console.print(f"[dim]{check.name}: {check.detail}[/dim]")


def cmd_verify(seed: int = 0, samples: int = 1000, net: Sequence[str] = ()) -> int:
    """Run the verification suite; 0 iff every check passes."""
    settings = VerifySettings(seed=seed, samples=max(0, samples))
    try:
        for option in net:
            _apply_net_option(settings, option)
    except ConfigurationError as e:
        return _error("Configuration error", e)

    with console.status("[cyan]Running verification checks...[/cyan]"):
        report = run_verify(settings)
    print_verify_report(report)
    if report.vacuous:
        console.print("[yellow]Warning:[/yellow] no samples were checked; the pass is vacuous.")
    if report.passed:
        console.print("[green]All checks passed.[/green]")
        return EXIT_OK
    console.print(f"[red]{len(report.failures())} check(s) failed.[/red]")
    return EXIT_ERROR


def cmd_sample(
    ckpt_path: str,
    n: int = EXPORT_SAMPLES,
    out: Optional[str] = None,
    use_ema: bool = True,
    seed: int = 0,
) -> int:
    """Write ``n`` generator samples from a checkpoint."""
    if n < 0:
        return _error("Error", ValueError(f"--n must be non-negative, got {n}"))
    try:
        checkpoint = load_checkpoint(ckpt_path)
        config = RunConfig.from_text(checkpoint.config_text)
        g_spec, _ = config.build_networks()
        params = checkpoint.ema if use_ema else checkpoint.generator
        _check_generator(g_spec, params)
    except ConfigurationError as e:
        return _error("Configuration error", e)
    except CheckpointError as e:
        return _error("Checkpoint error", e)

    samples = generate(g_spec, params, n, np.random.default_rng(seed))
    target = Path(out) if out else _samples_path(config, Path("."))
    try:
        export_samples(target, samples)
    except (ExportError, OSError) as e:
        return _error("Export error", e)
    console.print(f"[green]Wrote {n} sample(s) to[/green] [bold]{target}[/bold]")
    return EXIT_OK


def print_report_csv(report: MetricsReport) -> None:
    sys.stdout.write(",".join(MetricsReport.FIELDS) + "\n")
    sys.stdout.write(",".join(report.to_csv_fields()) + "\n")
    sys.stdout.flush()


def cmd_eval(
    ckpt_path: Optional[str],
    config_path: str,
    samples: int = EVAL_SAMPLES,
    seed: int = 0,
    real_vs_real: bool = False,
) -> int:
    """Print the MetricsReport of a checkpoint (or of the data against itself) as CSV."""
    try:
        config = load_run_config(config_path)
        dataset = config.build_dataset()
        rng = np.random.default_rng(seed)
        if real_vs_real:
            report = evaluate_real_vs_real(dataset, samples, rng)
        else:
            if ckpt_path is None:
                raise ConfigurationError("A checkpoint is required unless --real-vs-real is given")
            checkpoint = load_checkpoint(ckpt_path)
            g_spec, d_spec = config.build_networks()
            kind = config.normalizer_kind()
            checkpoint.check_compatible(
                kaiming_init(g_spec, 0), kaiming_init(d_spec, 0, spectral=kind.spectral)
            )
            report = evaluate_generator(
                g_spec,
                checkpoint.ema,
                d_spec,
                checkpoint.discriminator,
                kind,
                dataset,
                samples,
                rng,
            )
    except ConfigurationError as e:
        return _error("Configuration error", e)
    except CheckpointMismatchError as e:
        return _error("Dimension mismatch", e)
    except (CheckpointError, DatasetError) as e:
        return _error("Error", e)
    except MetricsError as e:
        return _error("Metrics error", e)

    print_report_csv(report)
    return EXIT_OK


def cmd_inspect_checkpoint(ckpt_path: str) -> int:
    """Show the step and every tensor name and shape of a tensor file."""
    try:
        step, records = read_tensor_file(ckpt_path)
    except (CheckpointError, OSError) as e:
        return _error("Checkpoint error", e)

    console.print(Panel.fit(f"[bold]{ckpt_path}[/bold]  step {step}", border_style="cyan"))
    table = Table(box=None, padding=(0, 2))
    table.add_column("Tensor", style="bold")
    table.add_column("Shape", justify="right")
    table.add_column("Elements", justify="right")
    for name, array in records:
        table.add_row(name, "x".join(str(e) for e in array.shape) or "scalar", str(array.size))
    console.print(table)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pgn-lab", description="Gradient-normalized GAN training and checks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--log-level", choices=["error", "info", "debug"], help="Overrides PGN_LOG_LEVEL."
    )
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="Train a GAN from a run config.")
    train.add_argument("config", help="key=value run config file.")
    train.add_argument("--resume", help="Checkpoint to continue from.")
    train.add_argument("--out", help="Output directory (default: out_dir from the config).")

    verify = commands.add_parser("verify", help="Run the gradient-bound verification suite.")
    verify.add_argument("--seed", type=int, default=0)
    verify.add_argument("--samples", type=int, default=1000, help="Inputs per network.")
    verify.add_argument(
        "--net",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Network option: d_hidden, activation, leaky_slope, input_dim, width, n_nets.",
    )

    sample = commands.add_parser("sample", help="Export generator samples from a checkpoint.")
    sample.add_argument("checkpoint")
    sample.add_argument("--n", type=int, default=EXPORT_SAMPLES)
    sample.add_argument("--out", help="CSV file (2-D) or directory (images).")
    sample.add_argument("--seed", type=int, default=0)
    sample.add_argument(
        "--use-ema",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="Sample from the averaged generator (default) or the raw one.",
    )

    evaluate = commands.add_parser("eval", help="Print evaluation metrics as CSV.")
    evaluate.add_argument("checkpoint", nargs="?")
    evaluate.add_argument("config")
    evaluate.add_argument("--samples", type=int, default=EVAL_SAMPLES)
    evaluate.add_argument("--seed", type=int, default=0)
    evaluate.add_argument(
        "--real-vs-real", action="store_true", help="Score the data against a second draw."
    )

    inspect = commands.add_parser("inspect-checkpoint", help="List the tensors of a checkpoint.")
    inspect.add_argument("checkpoint")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)

    if args.command == "train":
        print_banner()
        return cmd_train(args.config, args.resume, args.out)
    if args.command == "verify":
        print_banner()
        return cmd_verify(args.seed, args.samples, args.net)
    if args.command == "sample":
        return cmd_sample(args.checkpoint, args.n, args.out, args.use_ema, args.seed)
    if args.command == "eval":
        return cmd_eval(args.checkpoint, args.config, args.samples, args.seed, args.real_vs_real)
    return cmd_inspect_checkpoint(args.checkpoint)


if __name__ == "__main__":
    sys.exit(main())
