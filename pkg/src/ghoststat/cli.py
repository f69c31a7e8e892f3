"""
ghoststat CLI
Command-line interface: simulate, reconstruct, analyze, verify and ingest
ghost-imaging runs.
"""

import os
import sys
import functools
import logging
from typing import Any, Callable, Dict, Tuple

import click
import yaml
from dotenv import load_dotenv
from rich.console import Console
from rich.panel import Panel
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn
from rich.table import Table

from ghoststat import __version__
from ghoststat.config import RunConfig, list_presets, load_run_config, preset_path
from ghoststat.core.errors import GhostStatError, InsufficientSamplesError
from ghoststat.core.logging_config import get_log_files, get_recent_logs, setup_logging

console = Console()
logger = logging.getLogger("ghoststat.cli")

EXIT_PASS = 0
EXIT_STAT_FAIL = 1
EXIT_USAGE = 2
DEFAULT_R2_MIN = 0.999

# ──────────────────────────────────────────────────────────────
# Helpers
# ──────────────────────────────────────────────────────────────


def _handle_errors(fn: Callable) -> Callable:
    """Library errors become a red message and exit code 2."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except GhostStatError as e:
            logger.debug("%s failed", fn.__name__, exc_info=True)
            console.print(f"[red]✗ {type(e).__name__}: {e}[/red]")
            sys.exit(EXIT_USAGE)
        except (OSError, ValueError) as e:
            console.print(f"[red]✗ {e}[/red]")
            sys.exit(EXIT_USAGE)
    return wrapper


def _config_options(fn: Callable) -> Callable:
    options = [
        click.option("--preset", "-p", type=click.Choice(list_presets()), default=None, help="Shipped parameter preset"),
        click.option("--config", "-c", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
                     help="Config file (YAML, JSON or key = value)"),
        click.option("--out", "-o", default=None, help="Output run directory"),
        click.option("--seed", type=int, default=None, help="Master seed (unsigned 64-bit)"),
        click.option("--threads", type=int, default=None, help="Worker threads, 0 = one per CPU"),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _load_config(preset, config_path, **overrides) -> RunConfig:
    return load_run_config(preset=preset, config_path=config_path, overrides=overrides)


def _progress() -> Progress:
    return Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        console=console,
        transient=True,
    )


def _chunk_callback(progress: Progress, task) -> Callable[[int, int], None]:
    def update(done: int, total: int) -> None:
        progress.update(task, completed=done, total=total)
    return update


# ──────────────────────────────────────────────────────────────
# Main CLI Group
# ──────────────────────────────────────────────────────────────

@click.group()
@click.version_option(__version__, prog_name="ghoststat")
@click.option("--verbose", "-v", is_flag=True, help="Debug logging on the console")
@click.pass_context
def main(ctx, verbose):
    """ghoststat: ghost imaging simulation, reconstruction and statistics."""
    load_dotenv()
    level = "DEBUG" if verbose else os.environ.get("GHOSTSTAT_LOG_LEVEL", "WARNING")
    setup_logging(level=level)
    ctx.ensure_object(dict)
    ctx.obj["verbose"] = verbose


# ──────────────────────────────────────────────────────────────
# Simulate
# ──────────────────────────────────────────────────────────────

@main.command()
@_config_options
@click.option("--frames", "-T", "T", type=int, default=None, help="Number of pattern frames")
@click.option("--gamma", type=float, default=None, help="Detector gain")
@_handle_errors
def simulate(preset, config_path, out, seed, threads, T, gamma):
    """Simulate a bucket series and write a run directory."""
    from ghoststat.core.forward import simulate_run
    from ghoststat.core.stochastic import SeedRecipe
    from ghoststat.core.worker import FrameWorker
    from ghoststat.io.runs import save_run

    cfg = _load_config(preset, config_path, out=out, seed=seed, threads=threads, T=T, gamma=gamma)
    image = cfg.make_image()
    worker = FrameWorker(cfg.threads)

    with _progress() as progress:
        task = progress.add_task(f"Simulating {cfg.T} frames on {worker.threads} threads", total=None)
        run = simulate_run(
            image, cfg.distribution, SeedRecipe(cfg.seed), cfg.T, cfg.gamma, cfg.noise,
            worker=worker, on_progress=_chunk_callback(progress, task),
        )
    save_run(run, cfg.out, config=cfg.to_dict())

    table = Table(title=f"Run {cfg.name}", show_header=False)
    table.add_column("Key", style="bold cyan")
    table.add_column("Value")
    table.add_row("Directory", cfg.out)
    table.add_row("Object", f"{image.width}x{image.height}, Σd = {image.total:g}")
    table.add_row("Patterns", f"{cfg.distribution.describe()}, T = {cfg.T}")
    table.add_row("Gain", f"{cfg.gamma:g}")
    table.add_row("Noise", cfg.noise.describe())
    table.add_row("Seed", str(cfg.seed))
    table.add_row("Bucket mean", f"{run.bucket_mean:.6g}")
    console.print(table)
    console.print(f"[green]✓ Run written to {cfg.out}[/green]")


# ──────────────────────────────────────────────────────────────
# Reconstruct
# ──────────────────────────────────────────────────────────────

def _sweep_from_manifest(manifest: Dict[str, Any], estimators: Tuple[str, ...], transforms: Tuple[str, ...]):
    from ghoststat.core.estimators import Estimator
    from ghoststat.core.stochastic import TransformSpec

    stored = manifest.get("config") or {}
    est = list(estimators) or stored.get("estimators") or [e.value for e in Estimator]
    trans = list(transforms) or stored.get("transforms") or ["identity"]
    return (
        list(dict.fromkeys(Estimator.parse(str(e)) for e in est)),
        list(dict.fromkeys(TransformSpec.parse(str(t)) for t in trans)),
    )


@main.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--estimator", "-e", "estimators", multiple=True, help="G2, DeltaG2, g2 or DGI (repeatable)")
@click.option("--transform", "-t", "transforms", multiple=True, help="identity, power:<k>, exp or log (repeatable)")
@click.option("--threads", type=int, default=0, help="Worker threads, 0 = one per CPU")
@click.option("--write-centered", is_flag=True, help="Also write the two-pass centered DeltaG2 maps")
@_handle_errors
def reconstruct(run_dir, estimators, transforms, threads, write_centered):
    """Reconstruct images from a run directory."""
    from ghoststat.core.estimators import Estimator, accumulate, centered_delta_g2, identity_deviation
    from ghoststat.core.worker import FrameWorker
    from ghoststat.io.runs import load_run, read_manifest, save_reconstruction, write_reconstruction_index

    manifest = read_manifest(run_dir)
    est_list, trans_list = _sweep_from_manifest(manifest, estimators, transforms)
    run = load_run(run_dir)
    worker = FrameWorker(threads)
    for estimator in est_list:
        if run.T < estimator.min_frames:
            raise InsufficientSamplesError(f"{estimator.value} needs T >= {estimator.min_frames}, run has {run.T}")

    with _progress() as progress:
        task = progress.add_task(f"Correlating {len(trans_list)} transform(s)", total=None)
        acc = accumulate(run, trans_list, worker, _chunk_callback(progress, task))
        centered = []
        if Estimator.DELTA_G2 in est_list:
            task = progress.add_task("Centered DeltaG2 pass", total=None)
            centered = centered_delta_g2(run, trans_list, first_pass=acc, worker=worker,
                                         on_progress=_chunk_callback(progress, task))

    width, height = int(manifest["width"]), int(manifest["height"])
    entries = []
    table = Table(title="Reconstructions", header_style="bold cyan")
    table.add_column("Label", style="bold")
    table.add_column("Min", justify="right")
    table.add_column("Max", justify="right")
    table.add_column("Identity dev.", justify="right")
    centered_by_transform = {c.transform: c for c in centered}
    for transform in trans_list:
        for estimator in est_list:
            recon = acc.reconstruct(estimator, transform)
            extra, pair = {}, []
            if estimator is Estimator.DELTA_G2:
                twin = centered_by_transform[transform]
                dev = identity_deviation(recon.values, twin.values)
                extra = {"identity_deviation": dev}
                pair = [twin] if write_centered else []
                logger.info("DeltaG2 %s: centered vs one-pass deviation %.2e", transform.label, dev)
            for r in [recon] + pair:
                entry = save_reconstruction(r, run_dir, width, height, extra)
                entries.append(entry)
                dev = entry.get("identity_deviation")
                table.add_row(r.label, f"{entry['min']:.5g}", f"{entry['max']:.5g}",
                              f"{dev:.1e}" if dev is not None else "-")
    write_reconstruction_index(run_dir, entries)
    console.print(table)
    console.print(f"[green]✓ {len(entries)} reconstruction(s) written to {run_dir}[/green]")


# ──────────────────────────────────────────────────────────────
# Analyze
# ──────────────────────────────────────────────────────────────

@main.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--bins", type=int, default=None, help="Histogram bins per region")
@click.option("--alpha", type=float, default=None, help="KS significance level")
@click.option("--r2-min", type=float, default=DEFAULT_R2_MIN, show_default=True, help="Minimum R² of the DeltaG2 fit")
@_handle_errors
def analyze(run_dir, bins, alpha, r2_min):
    """Region statistics, KS tests and linearity of a run's reconstructions."""
    from ghoststat.core.analysis import linearity_fit, mean_band_check, region_statistics
    from ghoststat.core.estimators import ONE_PASS_FORM, Estimator
    from ghoststat.core.imaging import build_region_index
    from ghoststat.core.theory import compute_moments, predict
    from ghoststat.io.reports import ANALYSIS_REPORT, REGIONS_CSV, THEORY_REPORT, write_json, write_region_csv
    from ghoststat.io.runs import load_reconstructions, load_run, read_manifest

    manifest = read_manifest(run_dir)
    stored = (manifest.get("config") or {}).get("analysis") or {}
    bins = bins or int(stored.get("bins", 51))
    alpha = alpha or float(stored.get("alpha", 0.05))
    tolerance = float(((manifest.get("config") or {}).get("image") or {}).get("tolerance", 1e-9))

    run = load_run(run_dir)
    if run.image is None:
        raise InsufficientSamplesError("analysis needs the object image to find gray regions (ingest with --image)")
    recons = load_reconstructions(run_dir)
    if not recons:
        raise InsufficientSamplesError(f"no reconstructions in {run_dir}; run 'ghoststat reconstruct' first")

    regions = build_region_index(run.image, tolerance)
    stats_only = run.distribution is None
    if stats_only:
        logger.warning("No pattern distribution in %s: stats-only analysis without theory", run_dir)

    predictions = {}
    results, report, failures = [], [], []
    for recon in recons:
        theory = None
        if not stats_only:
            if recon.transform not in predictions:
                moments = compute_moments(run.distribution, recon.transform)
                predictions[recon.transform] = predict(moments, run.image, run.gamma, run.T, run.noise,
                                                       regions, recon.transform)
            theory = predictions[recon.transform]
        stats = region_statistics(recon, regions, theory, bins, alpha)
        results.append((recon, stats))

        linearity = None
        if recon.form == ONE_PASS_FORM:
            linearity = linearity_fit(stats, recon.estimator, theory)
        for s in stats:
            if s.ks_pass is False:
                failures.append(f"{recon.label} d={s.level:g}: KS {s.ks:.4f} >= {s.ks_threshold:.4f}")
        gated = linearity is not None and not stats_only and len(regions.levels) >= 2
        gated = gated and recon.estimator is Estimator.DELTA_G2
        if gated and linearity.r2 < r2_min:
            failures.append(f"{recon.label}: R² {linearity.r2:.5f} < {r2_min}")
        report.append({
            **recon.to_dict(),
            "regions": [s.to_dict() for s in stats],
            "linearity": linearity.to_dict() if linearity else None,
            "bands": [b.to_dict() for b in mean_band_check(stats)] if theory else [],
        })

    passed = not failures
    if predictions:
        write_json(os.path.join(run_dir, THEORY_REPORT),
                   {"transforms": {t.label: p.to_dict() for t, p in predictions.items()}})
    write_json(os.path.join(run_dir, ANALYSIS_REPORT), {
        "mode": "stats-only" if stats_only else "theory",
        "bins": bins,
        "alpha": alpha,
        "r2_min": r2_min,
        "regions": regions.to_dict(),
        "reconstructions": report,
        "passed": passed,
        "failures": failures,
    })
    write_region_csv(os.path.join(run_dir, REGIONS_CSV), results)

    table = Table(title="Region statistics" + (" (stats only)" if stats_only else ""), header_style="bold cyan")
    table.add_column("Reconstruction", style="bold")
    table.add_column("d", justify="right")
    table.add_column("N", justify="right")
    table.add_column("Mean", justify="right")
    table.add_column("μ", justify="right")
    table.add_column("KS", justify="right")
    table.add_column("", justify="center")
    for recon, stats in results:
        for s in stats:
            verdict = {True: "[green]✓[/green]", False: "[red]✗[/red]", None: "[dim]-[/dim]"}[s.ks_pass]
            table.add_row(
                recon.label, f"{s.level:g}", str(s.count), f"{s.mean:.6g}",
                f"{s.mu:.6g}" if s.mu is not None else "-",
                f"{s.ks:.4f} / {s.ks_threshold:.4f}" if s.ks is not None else "-",
                verdict,
            )
    console.print(table)

    if passed:
        console.print("[bold green]✓ All region tests and fits passed[/bold green]")
        return
    for failure in failures:
        console.print(f"[red]✗ {failure}[/red]")
    sys.exit(EXIT_STAT_FAIL)


# ──────────────────────────────────────────────────────────────
# Verify
# ──────────────────────────────────────────────────────────────

@main.command()
@click.option("--quick", is_flag=True, help="Reduced scale (32x32, T=10^4)")
@click.option("--seed", type=int, default=20240601, show_default=True, help="Base seed of the suite")
@click.option("--threads", type=int, default=0, help="Worker threads, 0 = one per CPU")
@click.option("--report", "report_path", type=click.Path(dir_okay=False), default=None, help="Write results as JSON")
@click.option("--inject-c1-sign-error", is_flag=True, hidden=True, help="Self-test: negate C1 in the theory")
@_handle_errors
def verify(quick, seed, threads, report_path, inject_c1_sign_error):
    """Run the statistical acceptance suite."""
    from ghoststat.doctor.acceptance import AcceptanceSuite
    from ghoststat.io.reports import write_json

    with _progress() as progress:
        task = progress.add_task("Starting acceptance suite...", total=None)
        suite = AcceptanceSuite(
            quick=quick, seed=seed, threads=threads, inject_c1_sign_error=inject_c1_sign_error,
            on_progress=lambda message: progress.update(task, description=message),
        )
        results = suite.run_all()

    table = Table(title="Acceptance Results", show_header=True, header_style="bold cyan")
    table.add_column("#", justify="right")
    table.add_column("Check", style="bold", min_width=20)
    table.add_column("Status", justify="center", min_width=6)
    table.add_column("Details", min_width=40)
    for r in results:
        status_color = {"pass": "green", "warn": "yellow", "fail": "red"}.get(r.status, "white")
        table.add_row(r.category, r.name, f"[{status_color}]{r.icon}[/{status_color}]", r.message)
    console.print(table)

    summary = suite.get_summary()
    if report_path:
        write_json(report_path, summary)
    console.print()
    if summary["healthy"]:
        console.print("[bold green]✓ All checks passed![/bold green]")
    else:
        console.print(f"[red]✗ {summary['failed']} check(s) failed[/red]")
    console.print(f"  Passed: {summary['passed']} | Warnings: {summary['warnings']} | Failed: {summary['failed']}")
    worker = summary["worker"]
    console.print(f"  Chunks: {worker['completed']} on {worker['threads']} threads", style="dim")
    if not summary["healthy"]:
        sys.exit(EXIT_STAT_FAIL)


# ──────────────────────────────────────────────────────────────
# Ingest
# ──────────────────────────────────────────────────────────────

@main.command()
@click.argument("buckets_csv", type=click.Path(exists=True, dir_okay=False))
@click.argument("stack", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "-o", required=True, help="Run directory to create")
@click.option("--gamma", type=float, default=1.0, show_default=True, help="Detector gain")
@click.option("--image", "image_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Object as PGM, enables gray-region analysis")
@click.option("--noise-mean", type=float, default=None, help="Known noise mean")
@click.option("--noise-var", type=float, default=None, help="Known noise variance")
@_handle_errors
def ingest(buckets_csv, stack, out, gamma, image_path, noise_mean, noise_var):
    """Turn recorded buckets (CSV) and patterns (GIPS stack) into a run directory."""
    from ghoststat.core.forward import NoiseModel
    from ghoststat.io.runs import ingest_run

    noise = None
    if noise_mean is not None or noise_var is not None:
        noise = NoiseModel.gaussian(noise_mean or 0.0, noise_var or 0.0)
    run = ingest_run(buckets_csv, stack, out, gamma=gamma, image_path=image_path, noise=noise)
    console.print(f"[green]✓ Ingested {run.T} buckets over {run.M} pixels into {out}[/green]")


# ──────────────────────────────────────────────────────────────
# Presets / Config / Logs
# ──────────────────────────────────────────────────────────────

@main.group()
def presets():
    """Shipped parameter presets."""
    pass


@presets.command("list")
def presets_list():
    """List shipped presets."""
    table = Table(title="Presets", header_style="bold cyan")
    table.add_column("Name", style="bold")
    table.add_column("Description")
    for name in list_presets():
        with open(preset_path(name), "r", encoding="utf-8") as f:
            first = f.readline().strip()
        table.add_row(name, first.lstrip("# ") if first.startswith("#") else "")
    console.print(table)


@presets.command("show")
@click.argument("name", type=click.Choice(list_presets()))
def presets_show(name):
    """Print a preset file."""
    with open(preset_path(name), "r", encoding="utf-8") as f:
        console.print(Panel(f.read().rstrip(), title=name))


@main.group()
def config():
    """Inspect configuration."""
    pass


@config.command("show")
@_config_options
@_handle_errors
def config_show(preset, config_path, out, seed, threads):
    """Show the resolved run configuration."""
    cfg = _load_config(preset, config_path, out=out, seed=seed, threads=threads)
    console.print(Panel(yaml.safe_dump(cfg.to_dict(), default_flow_style=False, sort_keys=False),
                        title="Configuration"))


@main.command()
@click.option("--lines", "-n", type=int, default=50, show_default=True, help="Lines to show")
@click.option("--files", is_flag=True, help="List log files instead")
def logs(lines, files):
    """Show recent log output."""
    if files:
        table = Table(title="Log files", header_style="bold cyan")
        table.add_column("File", style="bold")
        table.add_column("Size (KB)", justify="right")
        for f in get_log_files():
            table.add_row(f["name"], str(f["size_kb"]))
        console.print(table)
        return
    console.print(get_recent_logs(lines), markup=False, highlight=False)


if __name__ == "__main__":
    main()
