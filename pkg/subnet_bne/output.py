"""
output.py - Result files

metrics.csv (fixed header), summary.yml (final values, config digest, the full config
and versions), strategies.csv (side, type_index, theta_point, action_dim, value) and,
when type values are configured, trajectories.csv (tick, side, agent, theta, action_dim, value).
Floats are written with repr so reruns produce byte-identical files.
"""

import csv
import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence

import numpy as np
import yaml

from subnet_bne.discretization import BlockStrategy, DiscreteTypeModel, strategy_rows
from subnet_bne.engine import METRIC_COLUMNS, TRAJECTORY_COLUMNS, RunResult
from subnet_bne.errors import OutputError

log = logging.getLogger(__name__)

STRATEGY_COLUMNS = ("side", "type_index", "theta_point", "action_dim", "value")


@dataclass(frozen=True)
class OutputPaths:
    metrics: Path
    summary: Path
    strategies: Path
    trace: Optional[Path] = None
    trajectories: Optional[Path] = None

    @classmethod
    def in_directory(cls, directory: Path, trace: bool = False, trajectories: bool = False) -> "OutputPaths":
        directory = Path(directory)
        return cls(
            directory / "metrics.csv",
            directory / "summary.yml",
            directory / "strategies.csv",
            directory / "packets.log" if trace else None,
            directory / "trajectories.csv" if trajectories else None,
        )


def _cell(value) -> str:
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return "nan" if math.isnan(value) else repr(value)
    return str(int(value)) if isinstance(value, (int, np.integer)) else str(value)


def _plain(value):
    """Convert numpy scalars and containers to YAML-safe Python values"""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buffer.getvalue()


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OutputError(path, exc) from exc


def write_strategies(path: Path, model: DiscreteTypeModel, strategies: Sequence[BlockStrategy]) -> None:
    _write(path, csv_text(STRATEGY_COLUMNS, strategy_rows(model, *strategies)))


def summary_text(summary: Dict) -> str:
    return yaml.safe_dump(_plain(summary), sort_keys=False)


def write_summary(path: Path, summary: Dict) -> None:
    _write(path, summary_text(summary))


def emit(
    result: RunResult,
    paths: OutputPaths,
    model: DiscreteTypeModel,
    summary_extra: Optional[Dict] = None,
) -> None:
    """Write the metrics, summary and strategies of a run, plus the packet trace and trajectories when kept"""
    _write(paths.metrics, csv_text(METRIC_COLUMNS, result.metrics))
    summary = {"results": result.summary}
    summary.update(summary_extra or {})
    write_summary(paths.summary, summary)
    write_strategies(paths.strategies, model, result.mean_strategies)
    if paths.trace is not None and result.packet_trace:
        _write(paths.trace, "\n".join(["t, side, sender, receiver, d, first_index", *result.packet_trace]) + "\n")
    if paths.trajectories is not None:
        _write(paths.trajectories, csv_text(TRAJECTORY_COLUMNS, result.trajectories))
    log.info("results written to %s", paths.metrics.parent)
