# CLI entrypoints

import functools
import shutil
import sys
from pathlib import Path
from typing import Any, Callable, List, Optional, Sequence

import click
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from mugak.core import pipeline
from mugak.core.config import PipelineConfig, load_config
from mugak.core.datamodel import EvalReport, write_report
from mugak.core.errors import InvalidInputError
from mugak.core.evaluator import evaluate_files
from mugak.core.manifest import WorkdirLayout
from mugak.core.synthgen import write_dataset
from mugak.core.telemetry import logger, setup_logging


def pipeline_options(func: Callable[..., Any]) -> Callable[..., Any]:
    """--config, --seed and --workdir shared by every pipeline command."""

    @click.option(
        "--config",
        "config_path",
        type=click.Path(exists=True, dir_okay=False, path_type=Path),
        help="TOML config file",
    )
    @click.option("--seed", type=int, default=None, help="Override the config seed")
    @click.option(
        "--workdir",
        type=click.Path(file_okay=False, path_type=Path),
        default=Path("."),
        show_default=True,
        help="Working directory holding data, checkpoints and reports",
    )
    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        return func(*args, **kwargs)

    return wrapper


def _config(config_path: Optional[Path], **overrides: Any) -> PipelineConfig:
    cfg = load_config(config_path, overrides)
    # an explicit --log-level wins over the config value
    if click.get_current_context().find_root().params.get("log_level") is None:
        setup_logging(cfg.log_level)
    return cfg


def _thresholds(value: Optional[str]) -> Optional[List[float]]:
    if not value:
        return None
    try:
        return [float(part) for part in value.split(",") if part.strip()]
    except ValueError as e:
        raise click.BadParameter(f"expected comma-separated numbers, got {value!r}") from e


def print_report(report: EvalReport, title: str = "Rel.Dis. evaluation") -> None:
    """Render the per-threshold rows as a table on stdout."""
    table = Table(title=title)
    for column in ("Rel.Dis.", "F1", "Precision", "Recall", "TP", "FP", "FN", "Macro F1"):
        table.add_column(column, justify="right")
    for row in report.rows:
        table.add_row(
            f"{row.threshold:.2f}",
            f"{row.f1:.4f}",
            f"{row.precision:.4f}",
            f"{row.recall:.4f}",
            str(row.tp),
            str(row.fp),
            str(row.fn),
            f"{row.macro_f1:.4f}",
        )
    console = Console(file=sys.stdout, width=120)
    console.print(table)
    console.print(f"Average F1: {report.avg_f1:.4f}")


@click.group()
@click.option("--log-level", default=None, help="Logging level", type=str)
def cli(log_level: Optional[str]) -> None:
    """Mugak - generic event boundary detection pipeline"""
    if log_level is not None:
        setup_logging(log_level)


@cli.command()
@pipeline_options
@click.option("--count", type=int, default=200, show_default=True, help="Number of videos")
@click.option("--split", default="train", show_default=True, help="Dataset split name")
@click.option(
    "--out",
    type=click.Path(file_okay=False, path_type=Path),
    help="Write the dataset here instead of <workdir>/data/<split>",
)
def gen(
    config_path: Optional[Path],
    seed: Optional[int],
    workdir: Path,
    count: int,
    split: str,
    out: Optional[Path],
) -> None:
    """Generate a synthetic dataset split."""
    cfg = _config(config_path, seed=seed)
    if out is not None:
        annotations = write_dataset(
            count,
            pipeline.dataset_distribution(cfg, id_prefix=split),
            cfg.seed,
            out,
            max_workers=cfg.max_concurrency,
        )
        target = out
    else:
        annotations = pipeline.generate_split(cfg, count, cfg.seed, workdir, split)
        target = WorkdirLayout(workdir).split_dir(split)
    boundaries = sum(len(a.boundaries) for a in annotations)
    click.echo(f"Generated {len(annotations)} videos ({boundaries} boundaries) in {target}")


def _copy_checkpoint(path: Path, out: Optional[Path]) -> None:
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(path, out)
        click.echo(f"Copied to {out}")


@cli.command("train-local")
@pipeline_options
@click.option("--split", default="train", show_default=True, help="Training split")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), help="Checkpoint copy")
def train_local(
    config_path: Optional[Path],
    seed: Optional[int],
    workdir: Path,
    split: str,
    out: Optional[Path],
) -> None:
    """Train the local context model."""
    cfg = _config(config_path, seed=seed)
    path = pipeline.run_train_local(cfg, workdir, split)
    click.echo(f"Local checkpoint written to {path}")
    _copy_checkpoint(path, out)


@cli.command()
@pipeline_options
@click.option("--split", default="train", show_default=True, help="Split to featurize")
@click.option(
    "--out",
    type=click.Path(file_okay=False, path_type=Path),
    help="Also copy the handoff files into this directory",
)
def featurize(
    config_path: Optional[Path],
    seed: Optional[int],
    workdir: Path,
    split: str,
    out: Optional[Path],
) -> None:
    """Write per-video confidences and representations for the decoder."""
    cfg = _config(config_path, seed=seed)
    paths = pipeline.featurize(cfg, workdir, split)
    click.echo(f"Featurized {len(paths)} videos")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        for path in paths:
            shutil.copyfile(path, out / path.name)
        click.echo(f"Copied handoff files to {out}")


@cli.command("train-decoder")
@pipeline_options
@click.option("--split", default="train", show_default=True, help="Training split")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), help="Checkpoint copy")
def train_decoder(
    config_path: Optional[Path],
    seed: Optional[int],
    workdir: Path,
    split: str,
    out: Optional[Path],
) -> None:
    """Train the boundary decoder on featurized videos."""
    cfg = _config(config_path, seed=seed)
    path = pipeline.run_train_decoder(cfg, workdir, split)
    click.echo(f"Decoder checkpoint written to {path}")
    _copy_checkpoint(path, out)


@cli.command()
@pipeline_options
@click.option("--split", default="heldout", show_default=True, help="Split to predict")
@click.option("--local-only", is_flag=True, default=False, help="Skip the decoder")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), help="Prediction file")
def infer(
    config_path: Optional[Path],
    seed: Optional[int],
    workdir: Path,
    split: str,
    local_only: bool,
    out: Optional[Path],
) -> None:
    """Predict boundaries for a split."""
    cfg = _config(config_path, seed=seed)
    path = pipeline.infer(cfg, workdir, split, local_only=local_only, out=out)
    click.echo(f"Predictions written to {path}")


@cli.command("eval")
@pipeline_options
@click.option("--pred", type=click.Path(dir_okay=False, path_type=Path), help="Prediction file")
@click.option("--ann", type=click.Path(dir_okay=False, path_type=Path), help="Annotation file")
@click.option("--split", default="heldout", show_default=True, help="Split (without --pred)")
@click.option("--thresholds", type=str, help="Comma-separated Rel.Dis. thresholds")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), help="Report file")
def eval_command(
    config_path: Optional[Path],
    seed: Optional[int],
    workdir: Path,
    pred: Optional[Path],
    ann: Optional[Path],
    split: str,
    thresholds: Optional[str],
    out: Optional[Path],
) -> None:
    """Score predictions against annotations at each Rel.Dis. threshold."""
    cfg = _config(config_path, seed=seed, rel_dis_thresholds=_thresholds(thresholds))
    if (pred is None) != (ann is None):
        raise click.UsageError("--pred and --ann must be given together")
    if pred is not None and ann is not None:
        report = evaluate_files(pred, ann, cfg.rel_dis_thresholds)
        out = out or pred.with_name(f"{pred.stem}_report.json")
    else:
        layout = WorkdirLayout(workdir)
        report = evaluate_files(
            layout.predictions(split), layout.annotations(split), cfg.rel_dis_thresholds
        )
        out = out or layout.report(split)
    write_report(report, out)
    print_report(report)
    click.echo(f"Report written to {out}")


@cli.command("run-all")
@pipeline_options
@click.option("--train-count", type=int, default=200, show_default=True)
@click.option("--heldout-count", type=int, default=50, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), help="Copy of the report")
def run_all(
    config_path: Optional[Path],
    seed: Optional[int],
    workdir: Path,
    train_count: int,
    heldout_count: int,
    out: Optional[Path],
) -> None:
    """Generate data, train both stages and evaluate on the held-out split."""
    cfg = _config(config_path, seed=seed)
    report = pipeline.run_all(cfg, workdir, train_count, heldout_count)
    if out is not None:
        write_report(report, out)
    print_report(report, title="Held-out evaluation")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run the CLI and map failures to exit codes (1 invalid input, 2 runtime)."""
    try:
        args = list(argv) if argv is not None else None
        rv = cli.main(args=args, prog_name="mugak", standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return 1
    except click.Abort:
        click.echo("Aborted!", err=True)
        return 1
    except (InvalidInputError, ValidationError, FileNotFoundError) as e:
        click.echo(f"Error: {e}", err=True)
        return 1
    except Exception as e:
        logger.exception("Unhandled failure")
        click.echo(f"Error: {e}", err=True)
        return 2
    return rv if isinstance(rv, int) else 0


if __name__ == "__main__":
    sys.exit(main())
