"""Command-line front end for the CToMP simulator.

Reports go to stdout (rich tables, JSON or CSV); logs go to stderr.
Exit codes: 0 success, 2 scenario or argument error, 3 simulation error.
"""

import functools
import json
import sys
from typing import Optional

import click
from rich.console import Console
from rich.table import Table

from .config import settings
from .core.report_writer import ReportWriter
from .core.storage.factory import StorageFactory
from .models.base import SchemeVariant, Verdict
from .models.responses import Report
from .models.scenario import Scenario
from .services.experiment_service import ExperimentService
from .services.scenario_registry import ScenarioRegistry, load_scenario
from .utils.exceptions import CToMPError, ScenarioError
from .utils.logging_manager import LoggingManager

console = Console()
err_console = Console(stderr=True)

EXIT_VALIDATION = 2
EXIT_SIMULATION = 3

SCHEME_CHOICE = click.Choice([s.value for s in SchemeVariant])
FORMAT_CHOICE = click.Choice(["table", "json", "csv"])

VERDICT_STYLE = {
    Verdict.SUCCEEDED: "red",
    Verdict.BLOCKED_BY_PRIVILEGE: "green",
    Verdict.BLOCKED_BY_MPU: "green",
    Verdict.DEFEATED_BY_RANDOMIZATION: "yellow",
}


def handle_errors(func):
    """Map simulator errors onto exit codes"""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ScenarioError as e:
            err_console.print(f"[red]Scenario error:[/red] {e.message}")
            sys.exit(EXIT_VALIDATION)
        except CToMPError as e:
            err_console.print(f"[red]Simulation error:[/red] {e.message}")
            sys.exit(EXIT_SIMULATION)

    return wrapper


def scenario_options(func):
    func = click.option("--seed", type=int, default=None, help="Override the scenario seed")(func)
    func = click.option(
        "--scenario",
        "-s",
        default="ardupilot_like",
        show_default=True,
        help="Bundled scenario name or path to a TOML file",
    )(func)
    return func


def output_options(func):
    func = click.option(
        "--format",
        "fmt",
        type=FORMAT_CHOICE,
        default="table",
        show_default=True,
        help="Console table, or machine-readable JSON/CSV",
    )(func)
    func = click.option(
        "--out",
        type=click.Path(file_okay=False),
        default=None,
        help="Write report files into this directory instead of printing",
    )(func)
    return func


# -- rendering ---------------------------------------------------------------


def _fmt_hz(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.1f}"


def render_frequencies(report: Report) -> Table:
    table = Table(title=f"Task frequencies ({report.meta.scenario}, {report.meta.horizon} cycles)")
    table.add_column("Task", style="cyan")
    table.add_column("Prio", justify="right")
    table.add_column("ACI", justify="right")
    table.add_column("Expected Hz", justify="right")
    for scheme in report.schemes:
        table.add_column(f"{scheme.value} Hz", justify="right")
        table.add_column("ratio", justify="right", style="dim")
    for row in report.frequencies:
        cells = [row.task, str(row.priority), str(row.aci), _fmt_hz(row.expected_hz)]
        for scheme in report.schemes:
            ratio = row.ratio.get(scheme)
            style = "green" if ratio is not None and ratio >= 0.99 else "yellow"
            cells.append(f"[{style}]{_fmt_hz(row.measured_hz.get(scheme))}[/{style}]")
            cells.append("-" if ratio is None else f"{ratio:.0%}")
        table.add_row(*cells)
    return table


def render_overheads(report: Report) -> Table:
    table = Table(title="Protection overhead per cycle (us)")
    table.add_column("Scheme", style="cyan")
    for column in ("Model", "MPU", "Switch", "Stack", "SVC", "Measured mean", "Measured max", "Alloc mean", "Retries", "Degraded", "Max used", "Budget"):
        table.add_column(column, justify="right")
    for row in report.overheads:
        table.add_row(
            row.scheme.value,
            f"{row.model.total_us:.1f}",
            f"{row.model.mpu_us:.1f}",
            f"{row.model.switch_us:.1f}",
            f"{row.model.stack_us:.1f}",
            f"{row.model.svc_us:.1f}",
            f"{row.measured_mean_us:.1f}",
            f"{row.measured_max_us:.1f}",
            f"{row.alloc_mean_us:.2f}",
            f"{row.mean_retries:.3f}",
            str(row.degraded_cycles),
            f"{row.max_used_us:.1f}",
            f"{row.budget_us:.1f}",
        )
    return table


def render_attacks(report: Report) -> Table:
    table = Table(title=f"Attack matrix ({report.meta.scenario})")
    table.add_column("Case", style="cyan")
    table.add_column("Attack")
    for scheme in report.schemes:
        table.add_column(scheme.value)
    cells: dict[str, dict[SchemeVariant, str]] = {}
    names: dict[str, str] = {}
    for cell in report.attacks:
        names[cell.case] = cell.name
        style = VERDICT_STYLE[cell.verdict]
        text = f"[{style}]{cell.verdict.value}[/{style}]"
        if cell.success_rate is not None:
            text += f"\n{cell.success_rate:.5f} (k/N {cell.closed_form:.5f}, +/-{cell.ci_half_width:.5f})"
        cells.setdefault(cell.case, {})[cell.scheme] = text
    for case, by_scheme in cells.items():
        table.add_row(case, names[case], *(by_scheme.get(s, "-") for s in report.schemes))
    return table


def render_allocation(report: Report) -> Table:
    summary = report.allocation
    table = Table(
        title=f"Allocation order, pool {summary.pool_size} B, sizes {summary.sizes}"
    )
    table.add_column("Order", style="cyan")
    table.add_column("Trials", justify="right")
    table.add_column("Mean retries", justify="right")
    table.add_column("Failure rate", justify="right")
    table.add_column("Retry histogram")
    for row in summary.rows:
        table.add_row(
            row.order.value,
            str(row.trials),
            f"{row.mean_retries:.4f}",
            f"{row.failure_rate:.4%}",
            ", ".join(f"{k}:{v}" for k, v in row.retry_histogram.items()),
        )
    return table


def print_report(report: Report) -> None:
    if report.kind == "alloc_bench":
        console.print(render_allocation(report))
        summary = report.allocation
        console.print(
            f"Descending order improvement: [bold]{summary.relative_improvement:.1%}[/bold] "
            f"(reference figure {summary.reference_improvement:.1%})"
        )
    elif report.kind == "attack_matrix":
        console.print(render_attacks(report))
        for scheme in report.schemes:
            verdicts = report.verdicts(scheme).values()
            blocked = sum(1 for v in verdicts if v != Verdict.SUCCEEDED)
            console.print(f"{scheme.value}: {blocked}/{len(verdicts)} blocked")
    else:
        console.print(render_frequencies(report))
        console.print(render_overheads(report))
    for warning in report.warnings:
        console.print(f"[yellow]warning:[/yellow] {warning}")


def emit(report: Report, fmt: str, out: Optional[str], traces: bool = False, service: Optional[ExperimentService] = None) -> None:
    if out:
        writer = ReportWriter(StorageFactory.create_storage(base_dir=out))
        formats = ["json", "csv"] if fmt == "table" else [fmt]
        for each in formats:
            console.print(f"Saved {writer.save(report, each)}")
        if traces and service is not None:
            for trace in service.last_traces.values():
                console.print(f"Saved {writer.save_trace(trace, report.meta.scenario)}")
        return

    if fmt == "json":
        click.echo(ReportWriter.render_json(report), nl=False)
    elif fmt == "csv":
        click.echo(ReportWriter.render_csv(report), nl=False)
    else:
        print_report(report)


# -- commands ----------------------------------------------------------------


@click.group()
@click.version_option(settings.version, prog_name="ctomp")
@click.option("--log-level", default=None, help="Override the configured log level")
def main(log_level: Optional[str]):
    """Desk-scale simulator for cycle-oriented memory protection"""
    if log_level:
        LoggingManager.reset()
        LoggingManager.configure_logging(level=log_level.upper(), debug=settings.debug)


@main.command()
@scenario_options
@click.option("--scheme", type=SCHEME_CHOICE, default=None, help="Scheme; scenario default if omitted")
@click.option("--horizon", type=click.IntRange(min=0), default=None, help="Cycles to simulate")
@click.option("--trace", is_flag=True, help="Also write the per-cycle trace CSV (needs --out)")
@output_options
@handle_errors
def run(scenario, seed, scheme, horizon, trace, out, fmt):
    """Simulate one scheme and report task frequencies and overhead"""
    service = ExperimentService()
    report = service.cmd_run(
        load_scenario(scenario), SchemeVariant(scheme) if scheme else None, seed, horizon
    )
    emit(report, fmt, out, trace, service)


@main.command()
@scenario_options
@click.option(
    "--scheme",
    "schemes",
    type=SCHEME_CHOICE,
    multiple=True,
    help="Scheme to include (repeatable); all schemes by default",
)
@click.option("--horizon", type=click.IntRange(min=0), default=None, help="Cycles to simulate")
@click.option("--trace", is_flag=True, help="Also write per-cycle trace CSVs (needs --out)")
@output_options
@handle_errors
def compare(scenario, seed, schemes, horizon, trace, out, fmt):
    """Simulate several schemes side by side with the same seed"""
    variants = [SchemeVariant(s) for s in schemes] or list(SchemeVariant)
    if len(set(variants)) < 2:
        raise click.BadParameter("compare needs at least two distinct schemes", param_hint="--scheme")
    service = ExperimentService()
    report = service.cmd_compare(load_scenario(scenario), variants, seed, horizon)
    emit(report, fmt, out, trace, service)


@main.command("attack-matrix")
@scenario_options
@click.option("--scheme", "schemes", type=SCHEME_CHOICE, multiple=True, help="Scheme to include (repeatable)")
@click.option("--trials", type=click.IntRange(min=1), default=None, help="Cycles for probabilistic cases")
@output_options
@handle_errors
def attack_matrix(scenario, seed, schemes, trials, out, fmt):
    """Run every scripted attack under every scheme"""
    variants = [SchemeVariant(s) for s in schemes] or None
    report = ExperimentService().cmd_attack_matrix(load_scenario(scenario), variants, seed, trials)
    emit(report, fmt, out)


def _parse_sizes(ctx, param, value):
    if value is None:
        return None
    try:
        sizes = [int(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise click.BadParameter("expected comma-separated byte counts") from None
    if not sizes or any(size <= 0 for size in sizes):
        raise click.BadParameter("sizes must be positive")
    return sizes


@main.command("alloc-bench")
@click.option("--pool-size", type=click.IntRange(min=1), default=None, help="Pool bytes")
@click.option("--sizes", callback=_parse_sizes, default=None, help="Comma-separated request sizes")
@click.option("--trials", type=click.IntRange(min=1), default=None, help="Seeded trials per order")
@click.option("--seed", type=int, default=None)
@click.option("--alignment", type=click.IntRange(min=1), default=None)
@click.option("--retry-budget", type=click.IntRange(min=1), default=None)
@click.option("--max-allocate-num", type=click.IntRange(min=1), default=None)
@output_options
@handle_errors
def alloc_bench(pool_size, sizes, trials, seed, alignment, retry_budget, max_allocate_num, out, fmt):
    """Compare ascending and descending allocation order"""
    try:
        report = ExperimentService().cmd_alloc_bench(
            pool_size=pool_size,
            sizes=sizes,
            trials=trials,
            seed=seed,
            alignment=alignment,
            max_allocate_num=max_allocate_num,
            retry_budget=retry_budget,
        )
    except ValueError as e:
        raise click.BadParameter(str(e)) from e
    emit(report, fmt, out)


@main.command()
@click.option("--format", "fmt", type=click.Choice(["table", "json"]), default="table")
def scenarios(fmt):
    """List bundled scenarios"""
    available = ScenarioRegistry.get_all_scenarios()
    if fmt == "json":
        click.echo(json.dumps(available, indent=2, sort_keys=True))
        return

    table = Table(title="Bundled scenarios")
    table.add_column("Name", style="cyan")
    table.add_column("f_m", justify="right")
    table.add_column("Tasks")
    table.add_column("Default scheme")
    table.add_column("Attacks", justify="right")
    for name, info in sorted(available.items()):
        table.add_row(
            name,
            f"{info['f_m']:g}",
            ", ".join(info["tasks"]),
            info["default_scheme"],
            str(info["attacks"]),
        )
    console.print(table)


@main.command()
@click.option(
    "--document",
    type=click.Choice(["report", "scenario"]),
    default="report",
    show_default=True,
)
def schema(document):
    """Print the JSON schema of report or scenario documents"""
    model = Report if document == "report" else Scenario
    click.echo(json.dumps(model.model_json_schema(), indent=2, sort_keys=True))


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
@click.option("--reload", is_flag=True)
def serve(host, port, reload):
    """Serve the HTTP API"""
    import uvicorn

    uvicorn.run(
        "ctomp.main:app",
        host=host,
        port=port,
        reload=reload,
        log_level=settings.log_level.lower(),
    )


if __name__ == "__main__":
    main()
