"""Command-line interface: analyze, exec, bench."""
from __future__ import annotations

import sys
from pathlib import Path

import click

from . import bench as bench_mod
from . import concrete, graph
from .analysis import AnalysisConfig, analyze, resolve_roots
from .frontend import ParseError, ValidationError, parse_and_validate


def _load(path: str):
    try:
        return parse_and_validate(Path(path).read_text())
    except (ParseError, ValidationError) as e:
        raise click.ClickException(str(e))


def _analysis_config(domain_k, widen_delay, context, roots, open_tables) -> AnalysisConfig:
    parsed_roots = None
    if roots:
        parsed_roots = [int(r) for r in roots.split(",") if r.strip()]
    return AnalysisConfig(k=domain_k, widen_delay=widen_delay,
                          context_depth=context, roots=parsed_roots,
                          open_tables=open_tables)


@click.group()
def main():
    """Sound call graphs for an i32 WebAssembly subset."""


@main.command("analyze")
@click.argument("path", type=click.Path(exists=True))
@click.option("--format", "fmt", type=click.Choice(["json", "dot"]), default="json")
@click.option("--domain-k", default=16, show_default=True,
              help="Finite-set cardinality bound of the value domain.")
@click.option("--widen-delay", default=2, show_default=True,
              help="Joins applied before widening at loop heads and summaries.")
@click.option("--context", type=click.Choice(["0", "1"]), default="0",
              help="Call-site context depth for function summaries.")
@click.option("--roots", default=None, help="Comma-separated root function indices.")
@click.option("--open-tables", is_flag=True,
              help="Treat every table entry as an analysis root.")
@click.option("-o", "--output", type=click.Path(), default=None,
              help="Write the graph here instead of stdout.")
def cmd_analyze(path, fmt, domain_k, widen_delay, context, roots, open_tables, output):
    """Build the call graph of a .wat module."""
    vm = _load(path)
    cfg = _analysis_config(domain_k, widen_delay, int(context), roots, open_tables)
    result = analyze(vm, cfg)
    g = graph.build(vm, result)
    text = graph.emit_json(g) if fmt == "json" else graph.emit_dot(g)
    if output:
        Path(output).write_text(text)
    else:
        click.echo(text, nl=False)


@main.command("exec")
@click.argument("path", type=click.Path(exists=True))
@click.argument("entry")
@click.argument("args", nargs=-1)
@click.option("--fuel", default=concrete.DEFAULT_FUEL, show_default=True)
@click.option("--stub", default="0",
              help="Comma-separated constants imported functions return, cycling.")
def cmd_exec(path, entry, args, fuel, stub):
    """Execute ENTRY (export name or index) and print the result and edge log.

    Exit code 2 on trap, 3 on fuel exhaustion.
    """
    vm = _load(path)
    try:
        idx = int(entry)
    except ValueError:
        try:
            idx = vm.export_index(entry)
        except KeyError:
            raise click.ClickException(f"no exported function {entry!r}")
    argv = [int(a) for a in args]
    stub_values = [int(s) for s in stub.split(",") if s.strip()]
    try:
        trace = concrete.run(vm, idx, argv, fuel=fuel, import_stub=stub_values)
    except ValueError as e:
        raise click.ClickException(str(e))
    for caller, callee, site in trace.log:
        click.echo(f"{caller} -> {callee} @ {site}")
    if trace.trap is not None:
        click.echo(f"trap: {trace.trap}")
        sys.exit(2)
    if trace.fuel_exhausted:
        click.echo(f"fuel exhausted after {trace.steps} steps")
        sys.exit(3)
    click.echo(" ".join(map(str, trace.result)) if trace.result else "(no result)")


@main.command("bench")
@click.argument("corpus_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--report", type=click.Path(), default="report.json", show_default=True)
@click.option("--csv", "csv_path", type=click.Path(), default=None,
              help="Also write the per-case table as CSV.")
@click.option("--figures", type=click.Path(), default=None,
              help="Directory for rendered precision charts.")
@click.option("--domain-k", default=16, show_default=True)
@click.option("--widen-delay", default=2, show_default=True)
@click.option("--context", type=click.Choice(["0", "1"]), default="0")
def cmd_bench(corpus_dir, report, csv_path, figures, domain_k, widen_delay, context):
    """Run the differential soundness suite over a benchmark corpus.

    Exits nonzero if any soundness assertion fails.
    """
    cfg = _analysis_config(domain_k, widen_delay, int(context), None, False)
    reports = bench_mod.run_corpus(Path(corpus_dir), cfg)
    Path(report).write_text(bench_mod.report_json(reports))
    if csv_path:
        bench_mod.report_csv(reports, Path(csv_path))
    if figures:
        for p in bench_mod.render_figures(reports, Path(figures)):
            click.echo(f"wrote {p}")
    click.echo(bench_mod.report_table(reports))
    click.echo(f"report written to {report}")
    if not all(r.sound for r in reports):
        sys.exit(1)
    if not all(r.ground_truth_covered for r in reports):
        click.echo("warning: some ground-truth edges were not reproduced by any run")
        sys.exit(1)


if __name__ == "__main__":
    main()
