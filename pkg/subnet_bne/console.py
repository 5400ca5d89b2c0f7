"""
console.py - Shared terminal output for the CLI
Rich console, emoji logger, panels/tables and the engine progress bar.
"""

import logging
from contextlib import contextmanager
from typing import Callable, Dict, Iterator, List, Sequence

from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.progress import BarColumn, Progress, ProgressColumn, SpinnerColumn, TextColumn
from rich.table import Table
from rich.text import Text

console = Console()


def setup_logging(level: str = "info") -> None:
    """Route library logging through a rich handler"""
    logging.basicConfig(
        level=level.upper(),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, rich_tracebacks=True, show_path=False)],
        force=True,
    )


class Logger:
    """User-facing messages with rich formatting"""

    def __init__(self, name: str = "subnet-bne"):
        self.name = name
        self.errors: List[str] = []

    def info(self, message: str):
        console.print(f"✅ {message}", style="green")

    def warn(self, message: str):
        console.print(f"⚠️  {message}", style="yellow")

    def error(self, message: str):
        console.print(f"❌ {message}", style="red")
        self.errors.append(message)

    def verbose(self, message: str, enabled: bool = True):
        if enabled:
            console.print(f"ℹ️  {message}", style="blue")

    def success(self, message: str):
        console.print(f"🎉 {message}", style="bold green")


class TickProgressColumn(ProgressColumn):
    """Renders engine progress as 'ticks done/total'."""

    def render(self, task) -> Text:
        return Text(f"{int(task.completed)}/{int(task.total)} ticks", style="progress.percentage")


def print_panel(content: str, title: str = "", style: str = ""):
    console.print(Panel(content, title=title, style=style))


def metrics_table(title: str, columns: Sequence[str], rows: Sequence[Sequence[object]]) -> Table:
    """Build a table with the first column highlighted"""
    table = Table(title=title)
    for position, name in enumerate(columns):
        table.add_column(name, style="cyan" if position == 0 else "", no_wrap=position == 0)
    for row in rows:
        table.add_row(*(_fmt(value) for value in row))
    return table


def summary_table(title: str, values: Dict[str, object]) -> Table:
    return metrics_table(title, ["Metric", "Value"], list(values.items()))


def _fmt(value: object) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


@contextmanager
def tick_progress(total: int, description: str) -> Iterator[Callable[[int], None]]:
    """Progress bar yielding a callback that takes the number of completed ticks"""
    with Progress(
        SpinnerColumn(),
        TextColumn("[bold blue]{task.description}"),
        BarColumn(),
        TickProgressColumn(),
        console=console,
        transient=True,
    ) as progress:
        task = progress.add_task(description, total=max(total, 1))

        def advance(done: int) -> None:
            progress.update(task, completed=done)

        yield advance


