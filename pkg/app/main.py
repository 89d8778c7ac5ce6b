"""Command-line front end: configuration parsing and experiment execution."""

import os
from pathlib import Path
from typing import Dict, Optional, Tuple

import click
import numpy as np
import structlog
from pydantic import ValidationError

from app.config import Config
from app.errors import ConfigError, ConfigNotFoundError, HodgeWaveError, SolverError
from app.experiments import PRESETS
from app.graph import get_experiment_graph
from app.models import Experiment, ExperimentState, RunConfig
from app.utils import configure_logging

logger = structlog.get_logger(__name__)

LIST_KEYS = {"levels", "checkpoints"}
ALIASES = {"out": "out_dir"}

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_CHECK = 4


def _split_list(value):
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


def _read_config_file(path: Path) -> Tuple[Dict[str, str], Dict[str, int]]:
    """key=value lines; blank lines and '#' comments are skipped."""
    if not path.is_file():
        raise ConfigNotFoundError(f"config file not found: {path}")
    values, lines = {}, {}
    known = set(RunConfig.model_fields)
    for number, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key=value, got {raw.strip()!r}", line=number)
        key, value = (part.strip() for part in line.split("=", 1))
        key = ALIASES.get(key, key)
        if key not in known:
            raise ConfigError(f"unknown key {key!r}", line=number)
        if not value:
            raise ConfigError(f"empty value for {key!r}", line=number)
        values[key], lines[key] = value, number
    return values, lines


def parse_config(path: Optional[Path] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Merge preset defaults < config file < flags into a validated RunConfig."""
    file_values, file_lines = _read_config_file(Path(path)) if path is not None else ({}, {})
    overrides = {
        ALIASES.get(key, key): value for key, value in (overrides or {}).items() if value is not None
    }
    unknown = set(overrides) - set(RunConfig.model_fields)
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}")

    experiment = overrides.get("experiment", file_values.get("experiment"))
    if experiment is None:
        raise ConfigError("experiment is required")
    try:
        experiment = Experiment(experiment)
    except ValueError:
        choices = ", ".join(e.value for e in Experiment)
        raise ConfigError(
            f"unknown experiment {experiment!r}, expected one of {choices}",
            line=None if "experiment" in overrides else file_lines.get("experiment"),
        )

    merged = dict(PRESETS[experiment])
    merged.update(file_values)
    env_out_dir = os.getenv(Config.OUTPUT_DIR_ENV)
    if env_out_dir:
        merged["out_dir"] = env_out_dir
    merged.update(overrides)
    merged["experiment"] = experiment
    for key in LIST_KEYS & set(merged):
        merged[key] = _split_list(merged[key])

    try:
        return RunConfig(**merged)
    except ValidationError as exc:
        error = exc.errors()[0]
        field = str(error["loc"][0]) if error["loc"] else None
        line = file_lines.get(field) if field not in overrides else None
        prefix = f"{field}: " if field else ""
        raise ConfigError(f"{prefix}{error['msg']}", line=line) from exc


def run_experiment(cfg: RunConfig) -> int:
    """Run the experiment graph and map the outcome to an exit status."""
    configure_logging()
    log = logger.bind(experiment=cfg.experiment.value, case=cfg.case.value)
    try:
        graph = get_experiment_graph()
        initial_state = ExperimentState(settings=cfg)
        result = graph.invoke(initial_state.model_dump())
    except ConfigError as e:
        log.error("configuration rejected", error=str(e))
        return EXIT_CONFIG
    except HodgeWaveError as e:
        log.error("experiment failed", error=str(e), error_type=type(e).__name__)
        return EXIT_SOLVER
    except (np.linalg.LinAlgError, ArithmeticError, ValueError) as e:
        error = SolverError(f"numerical failure: {e}")
        log.error("experiment failed", error=str(error), error_type=type(e).__name__)
        return EXIT_SOLVER
    except OSError as e:
        log.error("could not write results", error=str(e))
        return EXIT_SOLVER

    violations = result.get("violations", [])
    if violations:
        log.error("self-check failed", violations=violations)
        return EXIT_CHECK
    log.info("experiment finished", files=result.get("files", []))
    return EXIT_OK


@click.command()
@click.option("--config", "config_path", type=click.Path(path_type=Path), help="key=value config file")
@click.option("--experiment", type=click.Choice([e.value for e in Experiment]))
@click.option("--case", type=click.Choice(["k0", "k1", "k2"]))
@click.option("--levels", help="Comma-separated mesh levels, h = 1/n")
@click.option("--dt", type=float)
@click.option("--T", "final_time", type=float, help="Final time")
@click.option("--tolerance", type=float)
@click.option("--out", "out_dir", type=click.Path(path_type=Path))
@click.option("--stride", type=int)
@click.option("--seed", type=int)
@click.option("--parallel/--sequential", default=None)
@click.option("--mean-correct/--no-mean-correct", default=None)
@click.option("--strong-trace/--natural-trace", default=None)
@click.option("--zero-source/--with-source", default=None)
@click.option("--checkpoints", help="Comma-separated extra report times")
@click.option("--check/--no-check", default=None, help="Self-check observed orders")
@click.option("--order-tolerance", type=float)
@click.pass_context
def cli(ctx, config_path, final_time, **flags):
    """Run a Hodge-wave experiment and write errors.csv, energies.csv and summary.txt."""
    flags["T"] = final_time
    try:
        cfg = parse_config(config_path, flags)
    except ConfigError as e:
        click.echo(f"config error: {e}", err=True)
        ctx.exit(EXIT_CONFIG)
    status = run_experiment(cfg)
    if status == EXIT_OK:
        click.echo(f"results written to {cfg.out_dir}")
    elif status == EXIT_CHECK:
        click.echo("self-check failed, see summary.txt", err=True)
    else:
        click.echo("experiment failed, see log output", err=True)
    ctx.exit(status)


if __name__ == "__main__":
    cli()
