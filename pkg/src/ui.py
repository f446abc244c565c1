"""Terminal output using the Rich library: banners, summary tables, logging."""

import logging
from pathlib import Path
from typing import List, Sequence

from rich import box
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.table import Table
from rich.text import Text

from src.report import ALL_METRICS, ARMS, BASELINE, SIGNIFICANCE_METRICS, AuditReport


console = Console()

METRIC_LABELS = {
    "balanced_accuracy": "Bal. acc.",
    "equal_opportunity_difference": "Eq. opp.",
    "average_odds_difference": "Avg. odds",
    "equalized_odds": "Eq. odds",
}


def configure_logging(verbosity: int = 0) -> None:
    """Route all logging through a RichHandler on the shared console.

    Args:
        verbosity: 1 or more for DEBUG, 0 for INFO, negative for WARNING
    """
    if verbosity > 0:
        level = logging.DEBUG
    elif verbosity < 0:
        level = logging.WARNING
    else:
        level = logging.INFO
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, rich_tracebacks=True, show_path=False)],
        force=True,
    )


def display_banner(command: str) -> None:
    """Display the title panel."""
    title = Text()
    title.append("FAIRAUDIT", style="bold cyan")
    title.append("  real vs synthetic fairness audit", style="bold white")
    title.append(f"  [{command}]", style="dim")
    console.print()
    console.print(Panel(title, box=box.DOUBLE, border_style="cyan", padding=(1, 2)))
    console.print()


def display_error(message: str) -> None:
    """Display an error panel."""
    console.print(Panel(f"[bold red]{message}[/bold red]", title="Error", border_style="red"))


def display_validation(problems: Sequence[str]) -> None:
    """Display the outcome of config validation."""
    if not problems:
        console.print(Panel("[bold green]Config is valid[/bold green]", border_style="green"))
        return
    table = Table(title="Config problems", box=box.ROUNDED)
    table.add_column("#", style="cyan", justify="center")
    table.add_column("Problem", style="red")
    for i, problem in enumerate(problems, 1):
        table.add_row(str(i), problem)
    console.print(table)


def _mean_sd(summary: dict) -> str:
    return f"{summary['mean']:.3f} ± {summary['sd']:.3f}"


def display_results(report: AuditReport) -> None:
    """Mean ± sd on the real test split per technique and arm, with fair-band counts."""
    table = Table(title=f"Results over {len(report.records)} seed(s)", box=box.DOUBLE)
    table.add_column("Technique", style="bold")
    table.add_column("Arm", style="cyan")
    for metric in ALL_METRICS:
        table.add_column(METRIC_LABELS[metric], justify="center")
    table.add_column("Fair (EO)", style="green", justify="center")

    results = report.aggregate["results"]
    for technique in [BASELINE] + list(report.techniques):
        for arm in ARMS:
            fair = sum(r.result(technique, arm).test.bands["equalized_odds"] == "fair"
                       for r in report.records)
            style = "yellow" if technique == BASELINE else "white"
            table.add_row(
                Text(technique, style=style),
                arm,
                *(_mean_sd(results[technique][arm][m]) for m in ALL_METRICS),
                f"{fair}/{len(report.records)}",
            )
    console.print(table)
    console.print()


def display_prevalence(report: AuditReport) -> None:
    """Prevalence of each protected level, real vs synthetic."""
    table = Table(title="Prevalence (%)", box=box.ROUNDED)
    table.add_column("Group", style="bold")
    table.add_column("Real", justify="right")
    table.add_column("Synthetic", justify="right")
    table.add_column("Change", justify="right")
    table.add_column("p", justify="right")
    for group, entry in report.aggregate["prevalence"].items():
        change = "n/a" if entry["change_pct"] is None else f"{entry['change_pct']:+.2f}%"
        test = entry["t_test"]
        p = "n/a" if test is None else f"{test['p_value']:.2e}" + ("*" if test["significant"] else "")
        table.add_row(group, f"{entry['real_mean']:.2f}", f"{entry['synthetic_mean']:.2f}", change, p)
    console.print(table)
    console.print()


def display_significance(report: AuditReport) -> None:
    """Significance table; * marks p < 0.05."""
    if not report.significance:
        return
    table = Table(title="Paired t-test p-values", box=box.ROUNDED)
    table.add_column("Technique", style="bold")
    table.add_column("Arm", style="cyan")
    table.add_column("Compared to", style="dim")
    for metric in SIGNIFICANCE_METRICS:
        table.add_column(METRIC_LABELS[metric], justify="center")
    for row in report.significance:
        cells = []
        for metric in SIGNIFICANCE_METRICS:
            p = row[f"{metric}_p"]
            cells.append("n/a" if p is None else f"{p:.2e}{row[f'{metric}_sig']}")
        table.add_row(row["technique"], row["arm"], row["comparison"].replace("_", " "), *cells)
    console.print(table)
    console.print()


def display_summary(report: AuditReport) -> None:
    """Everything shown after run and report."""
    nnaa = report.aggregate["nnaa"]
    console.print(f"[bold]nnAA[/bold]: {_mean_sd(nnaa)} [dim](0.5 is indistinguishable)[/dim]")
    console.print()
    display_prevalence(report)
    display_results(report)
    display_significance(report)


def display_outputs(paths: List[Path]) -> None:
    """List the files written."""
    console.print(Panel("\n".join(str(p) for p in paths), title="Outputs", border_style="green"))
