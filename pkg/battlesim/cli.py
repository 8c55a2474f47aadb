"""CLI entry point: command routing via Click."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import structlog

from battlesim import __version__
from battlesim.analyzer import dag_summary
from battlesim.config import ConfigError, expand_sweep, load_scenario, load_space
from battlesim.costmodel import CostParams, QTooLarge, cost_table, human_bytes
from battlesim.dag import InvalidN, InvalidParams, build_deployment, build_phase1, build_phase2, build_tc, tc_timelock
from battlesim.exporter import diff_exports, export_dot, export_json, format_diff, load_export
from battlesim.ledger import SimulationError
from battlesim.runner import SpaceTooLarge, enumerate_space, run_batch, summary_text, write_batch, write_report

EXIT_VIOLATION = 1
EXIT_ERROR = 2


class RunError(click.ClickException):
    """Config or runtime failure; exits with status 2."""

    exit_code = EXIT_ERROR


def _configure_logging(verbose: bool) -> None:
    structlog.configure(
        wrapper_class=structlog.make_filtering_bound_logger(logging.DEBUG if verbose else logging.WARNING),
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )


# ── Main group ───────────────────────────────────────────────


@click.group()
@click.version_option(__version__, prog_name="battlesim")
@click.option("--verbose", "-v", is_flag=True, help="Log every transaction to stderr.")
def main(verbose: bool) -> None:
    """Simulate dispute tournaments over pre-signed transaction DAGs."""
    _configure_logging(verbose)


# ── run ──────────────────────────────────────────────────────


@main.command()
@click.argument("scenario", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--out-dir", "-o", default="out", show_default=True, help="Directory for report files.")
@click.option("--jobs", "-j", type=int, default=1, show_default=True, help="Worker processes for sweeps.")
def run(scenario: str, seed: int | None, out_dir: str, jobs: int) -> None:
    """Run SCENARIO and write trace, outcome, capital and cost reports."""
    try:
        base = load_scenario(scenario)
        if seed is not None:
            sweep = base.sweep
            base = base.with_overrides({"seed": seed})
            base.sweep = sweep
        points = expand_sweep(base)
        reports = run_batch(points, jobs)
    except (ConfigError, SimulationError) as e:
        raise RunError(str(e)) from e

    if len(reports) == 1:
        write_report(reports[0], out_dir)
        click.echo(summary_text(reports[0]), nl=False)
    else:
        table = write_batch(reports, out_dir)
        click.echo(click.style(f"─── {len(reports)} sweep points ───", fg="cyan", bold=True))
        for line in table.read_text(encoding="utf-8").splitlines():
            row = json.loads(line)
            click.echo(f"  C={row['C']:<4} peak={row['peak']}  rounds={row['rounds']}  violations={row['violations']}")

    failed = [r for r in reports if not r.ok]
    if failed:
        click.echo(click.style(f"⚠ {len(failed)} run(s) violated an invariant", fg="red", bold=True), err=True)
        sys.exit(EXIT_VIOLATION)
    click.echo(click.style(f"✓ Reports written to {out_dir}", fg="green"))


# ── enumerate ────────────────────────────────────────────────


@main.command("enumerate")
@click.argument("space", type=click.Path(exists=True, dir_okay=False))
@click.option("--cap", type=int, default=None, help="Refuse spaces with more points than this.")
@click.option("--jobs", "-j", type=int, default=1, show_default=True)
@click.option("--out-dir", "-o", default=None, help="Also write summary.json here.")
def enumerate_cmd(space: str, cap: int | None, jobs: int, out_dir: str | None) -> None:
    """Run every point of the bounded strategy space in SPACE."""
    try:
        summary = enumerate_space(load_space(space), cap=cap, jobs=jobs)
    except SpaceTooLarge as e:
        raise RunError(str(e)) from e
    except (ConfigError, SimulationError) as e:
        raise RunError(str(e)) from e

    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(json.dumps(summary.record(), indent=2, sort_keys=True) + "\n")

    click.echo(click.style("─── Enumeration ───", fg="cyan", bold=True))
    click.echo(f"  Points     : {summary.points}")
    coverage = ", ".join(f"{k}={v}" for k, v in sorted(summary.case_coverage.items())) or "(none)"
    click.echo(f"  Cases      : {coverage}")
    if summary.violations:
        click.echo(click.style(f"  Violations : {len(summary.violations)} ⚠", fg="red", bold=True))
        for v in summary.violations:
            click.echo(f"    {v['scenario_digest'][:12]} {v['violation']}")
        sys.exit(EXIT_VIOLATION)
    click.echo(click.style("  Violations : None ✓", fg="green"))


# ── dag-export ───────────────────────────────────────────────


def _build_dag(family: str, operators: int, challengers: int, links: int):
    if family == "tc":
        return build_tc(links, tc_timelock(operators), 1, operators=operators)
    if family == "phase1":
        return build_phase1(operators)
    if family == "phase2":
        return build_phase2(operators, challengers)
    return build_deployment(operators, challengers)


@main.command("dag-export")
@click.option(
    "--family",
    type=click.Choice(["tc", "phase1", "phase2", "deployment"]),
    default="deployment",
    show_default=True,
)
@click.option("--operators", "-n", type=int, default=4, show_default=True)
@click.option("--challengers", "-c", type=int, default=0, show_default=True)
@click.option("--links", type=int, default=4, show_default=True, help="TC links (tc family only).")
@click.option("--format", "-f", "fmt", type=click.Choice(["json", "dot"]), default="json", show_default=True)
@click.option("--output", "-o", default=None, help="Write to file instead of stdout.")
def dag_export(family: str, operators: int, challengers: int, links: int, fmt: str, output: str | None) -> None:
    """Build a template DAG and export it."""
    try:
        dag = _build_dag(family, operators, challengers, links)
    except (InvalidN, InvalidParams) as e:
        raise RunError(str(e)) from e

    content = export_dot(dag, output=output) if fmt == "dot" else export_json(dag, output=output)
    if not output:
        click.echo(content, nl=False)
    else:
        stats = dag_summary(dag)
        click.echo(click.style(f"✓ {stats['template_count']} templates written to {output}", fg="green"))


# ── dag-diff ─────────────────────────────────────────────────


@main.command("dag-diff")
@click.argument("old", type=click.Path(exists=True, dir_okay=False))
@click.argument("new", type=click.Path(exists=True, dir_okay=False))
def dag_diff(old: str, new: str) -> None:
    """Compare two JSON DAG exports template by template."""
    try:
        diff = diff_exports(load_export(old), load_export(new))
    except (ValueError, KeyError) as e:
        raise RunError(f"Parse error: {e}") from e
    click.echo(format_diff(diff), nl=False)


# ── cost ─────────────────────────────────────────────────────


@main.command()
@click.option("--operators", "-n", type=int, default=1000, show_default=True)
@click.option("--pegins", "-u", type=int, default=1000, show_default=True)
@click.option("--s-gc", type=int, default=50_000_000, show_default=True, help="Bytes per garbled circuit.")
@click.option("--input-bytes", "-b", type=int, default=128, show_default=True)
@click.option("--concurrency", "-q", type=int, default=1, show_default=True)
@click.option("--throughput", type=float, default=None, help="Signatures per second.")
@click.option("--bandwidth", type=float, default=None, help="Bytes per second.")
@click.option("--json", "as_json", is_flag=True, help="Emit JSON rows.")
def cost(
    operators: int,
    pegins: int,
    s_gc: int,
    input_bytes: int,
    concurrency: int,
    throughput: float | None,
    bandwidth: float | None,
    as_json: bool,
) -> None:
    """Print the closed-form cost table."""
    try:
        params = CostParams(
            s_gc=s_gc,
            input_bytes=input_bytes,
            operators=operators,
            pegins=pegins,
            concurrency=concurrency,
            signing_throughput=throughput,
            bandwidth=bandwidth,
        )
        rows = cost_table(params)
    except (QTooLarge, InvalidN, InvalidParams) as e:
        raise RunError(str(e)) from e

    if as_json:
        click.echo(json.dumps(rows, indent=2))
        return
    click.echo(click.style("─── Cost model ───", fg="cyan", bold=True))
    for row in rows:
        value = human_bytes(row["value"]) if row["unit"] == "bytes" else f"{row['value']:,} {row['unit']}"
        click.echo(f"  {row['name']:<28}: {value}")
