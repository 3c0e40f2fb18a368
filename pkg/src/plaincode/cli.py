import importlib
import logging
import statistics
from collections.abc import Callable
from pathlib import Path
from typing import Any, NoReturn

import typer
from rich.console import Console
from rich.table import Table

from plaincode.analyzer import TypeRegistry, build_plan_database
from plaincode.config import Settings, load_settings
from plaincode.database import ReconstructionDatabase, summarize
from plaincode.exceptions import ConfigurationError, PlainCodeError
from plaincode.harness import ROUNDTRIP_REPORT, OutcomeStatus, check_generated, run_corpus
from plaincode.instrument import instrument, resolve_class
from plaincode.models import split_type_name
from plaincode.recorder import Recorder
from plaincode.testgen import ERROR_REASONS, DiscardReason, generate_tests, write_tests
from plaincode.timeline import TraceAnalysis, load_adapters
from plaincode.wire import read_log, read_plan_db, write_plan_db

app = typer.Typer(
    help="plaincode - serialize objects as plain Python code and generate tests from runs",
    no_args_is_help=True,
)

console = Console()

RECONSTRUCTION_FILE = "reconstruction.jsonl"

# Exit codes
EXIT_OK = 0
EXIT_DISCARD_ERRORS = 1
EXIT_USAGE = 2


def _setup(config: Path | None, verbose: bool, overrides: dict[str, Any]) -> Settings:
    """Load settings and configure logging; configuration problems are usage errors."""
    try:
        settings = load_settings(config, overrides)
    except ConfigurationError as e:
        console.print(f"[red]Configuration error: {e.message}[/red]")
        raise typer.Exit(EXIT_USAGE) from e
    logging.basicConfig(
        level=logging.DEBUG if verbose else settings.log_level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )
    return settings


def _usage_error(message: str) -> NoReturn:
    console.print(f"[red]{message}[/red]")
    raise typer.Exit(EXIT_USAGE)


# =============================================================================
# Pre-execution
# =============================================================================


@app.command("analyze")
def analyze(
    module: list[str] = typer.Option(
        None, "--module", "-m", help="Module whose classes are analyzed (repeatable)"
    ),
    out: Path = typer.Option(None, "--out", "-o", help="Plan database to write"),
    config: Path = typer.Option(None, "--config", "-c", help="JSON configuration file"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Log at debug level"),
) -> None:
    """Select serialization points and synthesize reconstruction plans."""
    settings = _setup(config, verbose, {"plan_db_path": out})
    modules = list(module or settings.modules)
    if not modules:
        _usage_error("No modules to analyze. Pass --module or set 'modules' in the config.")

    try:
        registry, declarations = TypeRegistry.from_modules(modules)
        plan_db = build_plan_database(
            registry, declarations, settings.selection, settings.cost_table
        )
        write_plan_db(settings.plan_db_path, plan_db)
    except PlainCodeError as e:
        console.print(f"[red]Analysis failed: {e.message}[/red]")
        raise typer.Exit(1) from e

    table = Table(title="Reconstruction strategies", show_header=True, header_style="bold magenta")
    table.add_column("Type", style="cyan")
    table.add_column("Strategy")
    table.add_column("Plan / reason")
    for type_name in sorted(plan_db.types):
        plan = plan_db.plans.get(type_name)
        if plan is not None:
            steps = ", ".join(a.label for a in plan.actions)
            table.add_row(type_name, "[green]structure[/green]", f"{steps} (cost {plan.total_cost})")
        else:
            table.add_row(type_name, "[yellow]trace[/yellow]", plan_db.infeasible.get(type_name, ""))
    console.print(table)
    console.print(
        f"[green]✓ {len(plan_db.points)} serialization points, "
        f"{len(plan_db.plans)} plans written to {settings.plan_db_path}[/green]"
    )


# =============================================================================
# Execution
# =============================================================================


def _load_workload(spec: str) -> Callable[[], Any]:
    module_name, qualname = split_type_name(spec)
    if module_name is None:
        _usage_error(f"Workload must be 'module:function', got {spec!r}")
    try:
        target: Any = importlib.import_module(module_name)
        for part in qualname.split("."):
            target = getattr(target, part)
    except (ImportError, AttributeError) as e:
        console.print(f"[red]Cannot load workload {spec!r}: {e}[/red]")
        raise typer.Exit(EXIT_USAGE) from e
    if not callable(target):
        _usage_error(f"Workload {spec!r} is not callable")
    return target  # type: ignore[no-any-return]


@app.command("record")
def record(
    workload: str = typer.Argument(..., help="Entry point to run, as module:function"),
    plan_db: Path = typer.Option(None, "--plan-db", "-p", help="Plan database from analyze"),
    trace: Path = typer.Option(None, "--trace", "-t", help="Trace log to write"),
    bound_sequence: int = typer.Option(
        None, "--bound-sequence", help="Elements captured per sequence or map"
    ),
    config: Path = typer.Option(None, "--config", "-c", help="JSON configuration file"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Log at debug level"),
) -> None:
    """Run a workload with tracing and serialization points instrumented."""
    settings = _setup(
        config,
        verbose,
        {"plan_db_path": plan_db, "trace_path": trace, "max_sequence_length": bound_sequence},
    )
    if not settings.plan_db_path.exists():
        _usage_error(f"Plan database {settings.plan_db_path} not found. Run 'plaincode analyze' first.")
    entry = _load_workload(workload)

    try:
        plans = read_plan_db(settings.plan_db_path)
        traced = [resolve_class(name) for name in sorted(plans.infeasible)]
        recorder = Recorder.from_settings(settings, plans)
        with recorder, instrument(recorder, traced, plans.points):
            entry()
    except PlainCodeError as e:
        console.print(f"[red]Recording failed: {e.message}[/red]")
        raise typer.Exit(1) from e
    except Exception as e:
        console.print(f"[red]Workload {workload} raised: {e}[/red]")
        raise typer.Exit(1) from e

    latency = (
        f", median serialization latency {statistics.median(recorder.latencies) * 1000:.2f} ms"
        if recorder.latencies
        else ""
    )
    console.print(
        f"[green]✓ {recorder.persisted} entries written to {settings.trace_path}{latency}[/green]"
    )


# =============================================================================
# Post-execution
# =============================================================================


@app.command("generate")
def generate(
    trace: Path = typer.Option(None, "--trace", "-t", help="Trace log from record"),
    out: Path = typer.Option(None, "--out", "-o", help="Directory for generated tests"),
    outline_threshold: int = typer.Option(
        None, "--outline-threshold", help="Statements above which objects become helpers"
    ),
    strict: bool = typer.Option(
        None, "--strict/--no-strict", help="Treat unresolvable references as errors"
    ),
    config: Path = typer.Option(None, "--config", "-c", help="JSON configuration file"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Log at debug level"),
) -> None:
    """Analyze a trace and write Arrange-Act-Assert tests."""
    settings = _setup(
        config,
        verbose,
        {
            "trace_path": trace,
            "output_dir": out,
            "outline_threshold": outline_threshold,
            "strict": strict,
        },
    )
    if not settings.trace_path.exists():
        _usage_error(f"Trace {settings.trace_path} not found. Run 'plaincode record' first.")

    try:
        analysis = TraceAnalysis(read_log(settings.trace_path))
        database = ReconstructionDatabase(analysis, adapters=load_adapters(settings.adapters))
        tests = generate_tests(analysis.records, database, settings)
        report = write_tests(tests, settings.output_dir, settings, records=len(analysis.records))
        database.write(settings.output_dir / RECONSTRUCTION_FILE)
    except PlainCodeError as e:
        console.print(f"[red]Generation failed: {e.message}[/red]")
        raise typer.Exit(1) from e

    sources = summarize(database)
    console.print(
        "Objects by source: "
        + ", ".join(f"{name} {count}" for name, count in sources.items())
    )
    table = Table(title="Generated tests", show_header=True, header_style="bold magenta")
    table.add_column("Outcome", style="cyan")
    table.add_column("Count", justify="right")
    table.add_row("[green]emitted[/green]", str(report.emitted))
    for reason, count in report.by_reason.items():
        if count:
            style = "red" if DiscardReason(reason) in ERROR_REASONS else "yellow"
            table.add_row(f"[{style}]discarded: {reason}[/{style}]", str(count))
    table.add_row("[dim]duplicates[/dim]", str(report.duplicates))
    if tests:
        mean_ms = statistics.mean(t.duration for t in tests) * 1000
        table.add_row("[dim]mean emission time (ms)[/dim]", f"{mean_ms:.2f}")
    console.print(table)

    if report.has_errors:
        console.print("[red]✗ Some records were discarded with errors (see report.json)[/red]")
        raise typer.Exit(EXIT_DISCARD_ERRORS)
    console.print(
        f"[green]✓ {report.emitted} tests in {len(report.files)} modules "
        f"written to {settings.output_dir}[/green]"
    )


# =============================================================================
# Verification
# =============================================================================


@app.command("verify")
def verify(
    seed: int = typer.Option(42, "--seed", help="Seed of the synthetic corpus"),
    size: int = typer.Option(1000, "--size", "-n", help="Number of corpus objects"),
    out: Path = typer.Option(
        None, "--out", "-o", help="Generated tests to run; receives roundtrip.json"
    ),
    bound_sequence: int = typer.Option(
        None, "--bound-sequence", help="Elements captured per sequence or map"
    ),
    outline_threshold: int = typer.Option(
        None, "--outline-threshold", help="Statements above which objects become helpers"
    ),
    over_bound_rate: float = typer.Option(
        0.0, "--over-bound-rate", help="Share of samples exceeding the sequence bound"
    ),
    cycles: bool = typer.Option(False, "--cycles", help="Include mutually referencing objects"),
    optimize: bool = typer.Option(
        True, "--optimize/--no-optimize", help="Outline helpers and inline primitives"
    ),
    config: Path = typer.Option(None, "--config", "-c", help="JSON configuration file"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Log at debug level"),
) -> None:
    """Round-trip the synthetic corpus and run previously generated tests."""
    settings = _setup(
        config,
        verbose,
        {
            "output_dir": out,
            "max_sequence_length": bound_sequence,
            "outline_threshold": outline_threshold,
        },
    )
    if size < 0:
        _usage_error("--size must not be negative")
    if not 0.0 <= over_bound_rate <= 1.0:
        _usage_error("--over-bound-rate must be between 0 and 1")

    report_dir = settings.output_dir if out is not None else None
    with console.status("[bold green]Round-tripping corpus..."):
        report = run_corpus(
            seed,
            size,
            settings,
            out_dir=report_dir,
            optimize=optimize,
            cycles=cycles,
            over_bound_rate=over_bound_rate,
        )

    table = Table(title=f"Round trip (seed {seed})", show_header=True, header_style="bold magenta")
    table.add_column("Outcome", style="cyan")
    table.add_column("Objects", justify="right")
    for status, count in report.counts.items():
        style = "green" if status == OutcomeStatus.EQUAL.value else "yellow"
        table.add_row(f"[{style}]{status}[/{style}]", str(count))
    if report.median_latency_ms is not None:
        table.add_row("[dim]median serialization latency (ms)[/dim]", f"{report.median_latency_ms:.2f}")
    console.print(table)
    failures = list(report.failures())
    for item in failures[:10]:
        console.print(
            f"  [red]#{item.index} {item.shape}: {item.status.value}[/red] "
            f"{item.path or ''} {item.message or ''}"
        )
    if report_dir is not None:
        console.print(f"  Report: {report_dir / ROUNDTRIP_REPORT}")

    suite_ok = True
    if out is not None and any(out.glob("test_*.py")):
        suite = check_generated(out)
        suite_ok = suite.ok
        console.print(
            f"Generated tests: {len(suite.passed)} passed, {len(suite.failed)} failed, "
            f"{len(suite.compile_errors)} modules did not load"
        )
        for name, message in {**suite.compile_errors, **suite.failed}.items():
            console.print(f"  [red]{name}[/red] {message}")

    if failures or not suite_ok:
        console.print("[red]✗ Verification failed[/red]")
        raise typer.Exit(1)
    console.print(f"[green]✓ {report.total} objects verified[/green]")
