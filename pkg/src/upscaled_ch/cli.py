#!/usr/bin/env python3

"""
Command-line front end of upscaled-ch.

Each subcommand runs one pipeline stage from the configuration and the
artifacts already written to ``--out``; ``pipeline`` runs all of them.
"""

import argparse
import asyncio
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from rich.console import Console
from rich.progress import Progress, SpinnerColumn, TextColumn

from .config import PipelineConfig, load_config
from .const import (
    DEFAULT_OUTPUT_DIR,
    DIAGNOSTICS_CSV,
    EXIT_CONFIG,
    MACRO_DIR,
    TENSOR_DIR,
    TENSOR_REPORT,
)
from .homogenization.errors import ConfigError
from .output import (
    macro_table,
    print_summary,
    setup_logging,
    stage_table,
    tensor_table,
)
from .pipeline import STAGES, PipelineResult, StageStatus, run_pipeline
from .storage import read_table, read_tensor_report

logger = logging.getLogger(__name__)


def setup_argument_parser() -> argparse.ArgumentParser:
    """Setup and return the argument parser."""
    parser = argparse.ArgumentParser(
        prog="upscaled-ch",
        description="Upscaled phase-field model of two-phase flow in porous media",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  upscaled-ch cell --config run.toml --out out/      Reference cell and correctors
  upscaled-ch stokes --out out/                      Periodic cell flow
  upscaled-ch tensors --out out/                     Effective tensor report
  upscaled-ch macro --config run.toml --out out/     Macroscopic simulation
  upscaled-ch pipeline --config run.json --out out/  All stages in order
        """,
    )
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True

    help_text = {
        "cell": "build the reference cell and solve the corrector problems",
        "stokes": "solve the periodic Stokes problem on the cell",
        "tensors": "assemble the effective tensors into the tensor report",
        "macro": "integrate the upscaled Cahn-Hilliard equation",
        "pipeline": "run cell, stokes, tensors and macro in order",
    }
    for command in list(STAGES) + ["pipeline"]:
        sub = subparsers.add_parser(command, help=help_text[command])
        sub.add_argument(
            "--config",
            "-c",
            type=str,
            default=None,
            help="Configuration file (.toml or commented .json); defaults apply "
            "when omitted",
        )
        sub.add_argument(
            "--out",
            "-o",
            type=Path,
            default=DEFAULT_OUTPUT_DIR,
            help=f"Output directory (default: {DEFAULT_OUTPUT_DIR})",
        )
        sub.add_argument(
            "--verbose",
            "-v",
            action="store_true",
            help="Log solver iterations and residuals",
        )
    return parser


async def handle_stages(
    config: PipelineConfig, out: Path, stages: Sequence[str], console: Console
) -> PipelineResult:
    """Run ``stages`` behind a spinner and print the results."""
    with Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        console=console,
        transient=True,
    ) as progress:
        progress.add_task(f"Running {', '.join(stages)}...", total=None)
        result = await run_pipeline(config, out, stages)

    console.print(stage_table(result.results))
    for stage_result in result.results:
        for warning in stage_result.warnings:
            console.print(f"[yellow]{stage_result.stage}: {warning}[/yellow]")

    completed = {
        r.stage for r in result.results if r.status is not StageStatus.FAILED
    }
    if "tensors" in completed:
        tensors, _ = read_tensor_report(out / TENSOR_DIR / TENSOR_REPORT)
        console.print(tensor_table(tensors))
    if "macro" in completed:
        columns, rows = read_table(out / MACRO_DIR / DIAGNOSTICS_CSV)[1:]
        console.print(macro_table(columns, rows))
        macro = next(r for r in result.results if r.stage == "macro")
        console.print(
            f"[bold]Macro:[/bold] {macro.message}; "
            f"dominant front wavenumber {macro.report.get('dominant_wavenumber')}"
        )

    if result.error is not None:
        console.print(f"[bold red]Error:[/bold red] {result.error}")
        if result.error.report:
            for key, value in sorted(result.error.report.items()):
                console.print(f"  [dim]{key}[/dim] = {value}")
    print_summary(console, result.results)
    return result


async def run(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run the requested stages and return the exit status."""
    parser = setup_argument_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)
    console = Console()

    try:
        config = load_config(args.config)
    except ConfigError as exc:
        console.print(f"[bold red]Configuration error:[/bold red] {exc}")
        return EXIT_CONFIG

    stages = STAGES if args.command == "pipeline" else (args.command,)
    logger.debug("config hash %s", config.config_hash())
    result = await handle_stages(config, args.out, stages, console)
    return result.exit_status


def main() -> None:
    """Entry point of the script."""
    sys.exit(asyncio.run(run()))


if __name__ == "__main__":
    main()
