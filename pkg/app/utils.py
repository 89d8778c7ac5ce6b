import csv
import logging
import sys
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np
import structlog

from app.config import Config


def configure_logging(level: str = None, fmt: str = None) -> None:
    """Configure structlog once for the process."""
    level = (level or Config.LOGGING_LEVEL).upper()
    fmt = fmt or Config.LOGGING_FORMAT
    renderer = (
        structlog.processors.JSONRenderer()
        if fmt == "json"
        else structlog.dev.ConsoleRenderer(colors=False)
    )
    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(
            logging.getLevelName(level)
        ),
        # stderr is looked up per logger so redirected streams are honoured
        logger_factory=lambda *args: structlog.PrintLogger(file=sys.stderr),
        cache_logger_on_first_use=False,
    )


def format_number(value: Union[float, int, str]) -> str:
    """Scientific notation with six significant digits; labels and counters pass through."""
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return f"{float(value):.5e}"


def write_csv(
    path: Path, header: Sequence[str], rows: Iterable[Sequence[Union[float, str]]]
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_number(value) for value in row])
    return path
