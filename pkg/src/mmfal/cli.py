"""Command-line interface: run experiments, generate data, compare, serve."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .experiment import ExperimentConfig, compare_runs, load_report, run_experiment
from .metrics import format_percent
from .synthetic import SyntheticSpec, generate_synthetic, spec_from_dict


@click.group()
def main() -> None:
    """Multi-modal fusion network with active learning."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
def run(config_path: str) -> None:
    """Run one experiment from a JSON config file."""
    config = ExperimentConfig.from_json(config_path)
    report = run_experiment(config)
    click.echo(f"run {report.name}: finished in {report.wall_time_s:.1f}s")
    click.echo(f"  test patients : {report.final.n_test_patients}")
    click.echo(f"  accuracy      : {format_percent(report.final.accuracy)}%")
    click.echo(f"  macro AUC     : {format_percent(report.final.macro_auc)}%")
    if report.history is not None:
        click.echo(f"  best AUC (d)  : {report.best_auc_formatted}")
    click.echo(f"  artifacts     : {config.output_dir}")


@main.command()
@click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON file with synthetic spec fields; defaults to the standard 168-patient benchmark.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--seed", default=0, show_default=True)
def synth(spec_path: str | None, out_dir: str, seed: int) -> None:
    """Generate a synthetic dataset (PNG images plus manifest.jsonl)."""
    if spec_path is not None:
        spec = spec_from_dict(json.loads(Path(spec_path).read_text(encoding="utf-8")))
    else:
        spec = SyntheticSpec()
    index = generate_synthetic(spec, seed=seed, out_dir=out_dir)
    counts = ", ".join(f"{m.value}: {n}" for m, n in sorted(index.modality_counts.items()))
    click.echo(f"wrote {len(index)} patients to {out_dir} ({counts})")


@main.command()
@click.argument("reports", nargs=-1, type=click.Path(exists=True, dir_okay=False))
@click.option("--format", "fmt", type=click.Choice(["markdown", "csv"]), default="markdown",
              show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
def compare(reports: tuple[str, ...], fmt: str, out_path: str | None) -> None:
    """Tabulate accuracy / macro AUC / best AUC (d) across run reports."""
    table = compare_runs([load_report(p) for p in reports])
    rendered = table.to_markdown() if fmt == "markdown" else table.to_csv()
    if out_path:
        Path(out_path).write_text(rendered, encoding="utf-8")
        click.echo(f"wrote comparison to {out_path}")
    else:
        click.echo(rendered, nl=False)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8765, show_default=True)
@click.option("--ui-dir", type=click.Path(file_okay=False, exists=True), default=None,
              help="Directory of built frontend assets to serve at /.")
@click.option("--token", default=None, help="Static token required in X-Annotation-Token.")
def serve(config_path: str, host: str, port: int, ui_dir: str | None, token: str | None) -> None:
    """Serve the annotation API (and UI) with the AL loop in live-oracle mode."""
    from .server import serve_annotation

    config = ExperimentConfig.from_json(config_path)
    service = serve_annotation(config, host=host, port=port, ui_dir=ui_dir, token=token)
    click.echo(f"annotation service listening on {service.address}")
    click.echo("labels POST to /api/v1/labels; Ctrl-C to checkpoint and stop")
    try:
        service.loop_thread.join()
        if service.loop_error:
            raise service.loop_error[0]
        click.echo("labeling complete; service still up for status queries (Ctrl-C to exit)")
        service.server_thread.join()
    except KeyboardInterrupt:
        click.echo("\nshutting down...")
        service.stop()
        sys.exit(0)


if __name__ == "__main__":
    main()
