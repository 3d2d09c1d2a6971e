import logging
import math
from typing import TYPE_CHECKING, Iterable, Optional, Sequence

import numpy as np
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from .homogenization.tensors import EffectiveTensors

if TYPE_CHECKING:
    from .pipeline import StageResult


def setup_logging(verbose: bool = False, console: Optional[Console] = None) -> None:
    """Route all log records through a rich handler on stderr."""
    handler = RichHandler(
        console=console or Console(stderr=True),
        show_path=False,
        rich_tracebacks=True,
    )
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[handler],
        force=True,
    )


STATUS_STYLE = {
    "passed": "[green]PASSED[/green]",
    "warning": "[yellow]WARNING[/yellow]",
    "failed": "[bold red]FAILED[/bold red]",
}


def stage_table(results: Iterable["StageResult"]) -> Table:
    table = Table(title="Pipeline Stages")
    table.add_column("Stage", style="blue")
    table.add_column("Status", style="bold")
    table.add_column("Time (s)", justify="right")
    table.add_column("Artifacts", justify="right")
    table.add_column("Message", style="dim")

    for result in results:
        message = result.message or ""
        if len(message) > 60:
            message = message[:60] + "..."
        table.add_row(
            result.stage,
            STATUS_STYLE.get(result.status.value, result.status.value),
            f"{result.execution_time:.2f}",
            str(len(result.artifacts)),
            message,
        )
    return table


def tensor_table(tensors: EffectiveTensors) -> Table:
    table = Table(title=f"Effective Tensors (porosity {tensors.porosity:.4f})")
    table.add_column("Tensor", style="blue")
    for label in ("11", "12", "21", "22"):
        table.add_column(label, justify="right")

    for name in ("D", "C", "M_phi", "M_w"):
        m = getattr(tensors, name)
        table.add_row(name, *(f"{m[i, k]:.6g}" for i in range(2) for k in range(2)))
    table.add_row(
        "v", f"{tensors.v[0]:.6g}", "", "", f"{tensors.v[1]:.6g}", style="dim"
    )
    return table


def _fmt(value: float) -> str:
    return "n/a" if math.isnan(value) else f"{value:.6g}"


def macro_table(columns: Sequence[str], rows: np.ndarray) -> Table:
    """Diagnostics series, one row per snapshot."""
    table = Table(title="Macro Run")
    for name in columns:
        table.add_column(name.replace("_", " "), justify="right")
    for row in rows:
        table.add_row(*(_fmt(value) for value in row))
    return table


def print_summary(console: Console, results: Iterable["StageResult"]) -> None:
    results = list(results)
    passed = len([r for r in results if r.status.value == "passed"])
    warned = len([r for r in results if r.status.value == "warning"])
    failed = len([r for r in results if r.status.value == "failed"])
    console.print(
        f"\n[bold]Summary:[/bold] {len(results)} stages - "
        f"[green]{passed} passed[/green], "
        f"[yellow]{warned} with warnings[/yellow], "
        f"[red]{failed} failed[/red]"
    )
