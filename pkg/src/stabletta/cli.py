"""Command-line front end.

Exit codes: 0 success, 1 usage/configuration/data errors, 2 provider or
protocol failures (replay format, adapter crash/timeout, wire violations).
"""

from __future__ import annotations

import json
import sys

import click

from .augment import AugPolicyConfig
from .conflict import DegenerateCorrelationError
from .evaluate import (
    AdapterSource,
    EvalConfig,
    ReplaySource,
    SyntheticSource,
    conflict_scan,
    evaluate,
    fig10_report,
    holder_report,
    jb_report,
    record_replay,
    sweep,
    write_eval_csv,
    write_holder_csv,
    write_jb_csv,
    write_sweep_cells_csv,
)
from .imaging import ImageFormatError, ManifestError
from .providers import SyntheticTaskSpec
from .stats import DegenerateRegressorError, DegenerateSamplesError
from .wire import ProviderError


def _parse_seeds(ctx, param, value):
    try:
        seeds = tuple(int(v) for v in value.split(",") if v.strip())
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {value!r}")
    if not seeds:
        raise click.BadParameter("need at least one seed")
    return seeds


def provider_options(f):
    opts = [
        click.option(
            "--provider",
            type=click.Choice(["synthetic", "replay", "adapter"]),
            default="synthetic",
            show_default=True,
            help="where per-pass logits come from",
        ),
        click.option("--replay", "replay_path", default=None,
                     help="replay file path (with --provider replay)"),
        click.option("--manifest", default=None,
                     help="dataset manifest CSV (with --provider adapter)"),
        click.option("--adapter-cmd", default=None,
                     help="launch command for the model process"),
        click.option("--classes", default=10, show_default=True,
                     help="synthetic class count"),
        click.option("--samples", default=2000, show_default=True,
                     help="synthetic sample count"),
        click.option("--margin", default=1.0, show_default=True,
                     help="synthetic true-class logit offset"),
        click.option("--sigma", default=2.0, show_default=True,
                     help="synthetic logit noise scale"),
        click.option("--data-seed", default=0, show_default=True,
                     help="synthetic task identity seed"),
        click.option("--timeout", default=60.0, show_default=True,
                     help="adapter I/O timeout in seconds"),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def aug_options(f):
    opts = [
        click.option("--lambda-min", default=0.7, show_default=True),
        click.option("--lambda-max", default=0.9, show_default=True),
        click.option("--p-mixup", default=0.5, show_default=True),
        click.option("--reference-seed", default=0, show_default=True),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _aug_cfg(lambda_min, lambda_max, p_mixup, reference_seed) -> AugPolicyConfig:
    return AugPolicyConfig(
        lambda_min=lambda_min,
        lambda_max=lambda_max,
        p_mixup=p_mixup,
        reference_seed=reference_seed,
    )


def _build_source(provider, replay_path, manifest, adapter_cmd,
                  classes, samples, margin, sigma, data_seed, timeout):
    if provider == "synthetic":
        spec = SyntheticTaskSpec(
            num_classes=classes,
            num_samples=samples,
            margin=margin,
            noise_sigma=sigma,
            seed=data_seed,
        )
        return SyntheticSource(spec)
    if provider == "replay":
        if not replay_path:
            raise click.UsageError("--replay PATH is required with --provider replay")
        return ReplaySource(replay_path)
    if not manifest or not adapter_cmd:
        raise click.UsageError(
            "--manifest and --adapter-cmd are required with --provider adapter"
        )
    return AdapterSource(command=adapter_cmd, manifest_path=manifest, timeout=timeout)


@click.group()
def cli():
    """Stabilized test-time ensembling: evaluation, sweeps, replay capture,
    conflict scans, and statistics reports."""


@cli.command("eval")
@provider_options
@aug_options
@click.option("--method", type=click.Choice(["baseline", "tta", "stable_tta"]),
              default="stable_tta", show_default=True)
@click.option("--n", "n_experts", default=32, show_default=True,
              help="augmented passes per sample")
@click.option("--k", default=10, show_default=True,
              help="logits kept by suppression (stable_tta only)")
@click.option("--seeds", default="1,2,3,4,5", show_default=True,
              callback=_parse_seeds)
@click.option("--batch-size", default=16, show_default=True)
@click.option("--out", default=None, help="write per-seed accuracies as CSV")
@click.option("--json", "as_json", is_flag=True, help="print the full report as JSON")
@click.option("--csv", "as_csv", is_flag=True,
              help="write CSV to --out (same as providing --out)")
def eval_cmd(provider, replay_path, manifest, adapter_cmd, classes, samples,
             margin, sigma, data_seed, timeout, lambda_min, lambda_max,
             p_mixup, reference_seed, method, n_experts, k, seeds,
             batch_size, out, as_json, as_csv):
    """Run one evaluation and report accuracy mean/std across seeds."""
    if as_csv and not out:
        raise click.UsageError("--csv requires --out PATH")
    if as_csv and as_json:
        raise click.UsageError("--csv and --json are mutually exclusive")
    source = _build_source(provider, replay_path, manifest, adapter_cmd,
                           classes, samples, margin, sigma, data_seed, timeout)
    cfg = EvalConfig(
        method=method,
        source=source,
        n_experts=n_experts,
        k=k,
        seeds=seeds,
        batch_size=batch_size,
        aug=_aug_cfg(lambda_min, lambda_max, p_mixup, reference_seed),
    )
    report = evaluate(cfg)
    if out:
        write_eval_csv(report, out)
    if as_json:
        click.echo(json.dumps(report.to_json_dict(), indent=2))
    else:
        click.echo(
            f"method={report.method} N={report.n_experts} K={report.k} "
            f"C={report.num_classes} samples={report.num_samples} "
            f"seeds={','.join(str(s) for s in report.seeds)}"
        )
        click.echo(
            f"acc@1 {report.acc1_mean:.2f} +/- {report.acc1_std:.2f}   "
            f"acc@5 {report.acc5_mean:.2f} +/- {report.acc5_std:.2f}"
        )
        for note in report.notes:
            click.echo(f"note: {note}")
    if out:
        click.echo(f"wrote {out}")


@cli.command("sweep")
@provider_options
@aug_options
@click.option("--method", type=click.Choice(["baseline", "tta", "stable_tta"]),
              default="stable_tta", show_default=True)
@click.option("--n-grid", default="4,8,16,32", show_default=True)
@click.option("--k-grid", default="1,2,5,10,20,C", show_default=True,
              help="comma list; the literal C means the class count")
@click.option("--seeds", default="1,2,3,4,5", show_default=True,
              callback=_parse_seeds)
@click.option("--batch-size", default=16, show_default=True)
@click.option("--out", required=True, help="output CSV path")
def sweep_cmd(provider, replay_path, manifest, adapter_cmd, classes, samples,
              margin, sigma, data_seed, timeout, lambda_min, lambda_max,
              p_mixup, reference_seed, method, n_grid, k_grid, seeds,
              batch_size, out):
    """Evaluate every (N, K) grid cell and write one CSV row per cell."""
    source = _build_source(provider, replay_path, manifest, adapter_cmd,
                           classes, samples, margin, sigma, data_seed, timeout)
    try:
        ns = tuple(int(v) for v in n_grid.split(",") if v.strip())
    except ValueError:
        raise click.BadParameter(f"bad --n-grid {n_grid!r}")
    ks = []
    for v in k_grid.split(","):
        v = v.strip()
        if not v:
            continue
        if v.upper() == "C":
            ks.append("C")
        else:
            try:
                ks.append(int(v))
            except ValueError:
                raise click.BadParameter(f"bad --k-grid entry {v!r}")
    cfg = EvalConfig(
        method=method,
        source=source,
        seeds=seeds,
        batch_size=batch_size,
        aug=_aug_cfg(lambda_min, lambda_max, p_mixup, reference_seed),
    )
    cells, notes = sweep(cfg, n_grid=ns, k_grid=tuple(ks))
    write_sweep_cells_csv(cells, out)
    for note in notes:
        click.echo(f"note: {note}")
    click.echo(f"wrote {len(cells)} cells to {out}")


@cli.command("record")
@aug_options
@click.option("--manifest", required=True, help="dataset manifest CSV")
@click.option("--adapter-cmd", required=True,
              help="launch command for the model process")
@click.option("--n", "n_passes", default=32, show_default=True,
              help="augmented passes per sample")
@click.option("--seed", default=1, show_default=True,
              help="augmentation run seed")
@click.option("--batch-size", default=16, show_default=True)
@click.option("--timeout", default=60.0, show_default=True)
@click.option("--out", required=True, help="replay file to write")
def record_cmd(lambda_min, lambda_max, p_mixup, reference_seed, manifest,
               adapter_cmd, n_passes, seed, batch_size, timeout, out):
    """Capture per-pass logits from a model process into a replay file."""
    m, n, c = record_replay(
        manifest_path=manifest,
        adapter_command=adapter_cmd,
        aug=_aug_cfg(lambda_min, lambda_max, p_mixup, reference_seed),
        n_passes=n_passes,
        seed=seed,
        out_path=out,
        batch_size=batch_size,
        timeout=timeout,
    )
    click.echo(f"wrote replay {out}: {m} samples x {n} passes x {c} classes")


@cli.command("conflict-scan")
@provider_options
@click.option("--n", "n_experts", default=32, show_default=True)
@click.option("--k", default=1, show_default=True)
@click.option("--seed", "run_seed", default=1, show_default=True)
@click.option("--out", default=None, help="write the JSON report here")
def conflict_scan_cmd(provider, replay_path, manifest, adapter_cmd, classes,
                      samples, margin, sigma, data_seed, timeout, n_experts,
                      k, run_seed, out):
    """Measure pairwise aggregation disagreement before/after suppression."""
    source = _build_source(provider, replay_path, manifest, adapter_cmd,
                           classes, samples, margin, sigma, data_seed, timeout)
    result = conflict_scan(source, n_experts=n_experts, k=k, run_seed=run_seed)
    blob = json.dumps(result, indent=2)
    if out:
        with open(out, "w") as fh:
            fh.write(blob + "\n")
        click.echo(f"wrote {out}")
    else:
        click.echo(blob)


@cli.command("stats")
@provider_options
@aug_options
@click.option("--report", type=click.Choice(["jb", "holder", "fig10"]),
              required=True)
@click.option("--n", "n_experts", default=32, show_default=True)
@click.option("--seed", "run_seed", default=1, show_default=True)
@click.option("--alpha", default=0.05, show_default=True,
              help="jb: rejection level")
@click.option("--batch-size", default=16, show_default=True)
@click.option("--trials", default=100000, show_default=True,
              help="fig10: Monte Carlo trials per grid point")
@click.option("--paper-literal", is_flag=True,
              help="fig10: use the density-based centering instead of the\n"
                   "corrected CDF-based one")
@click.option("--out", required=True,
              help="output path (jb writes <out>_jb.csv and <out>_ecdf.csv)")
def stats_cmd(provider, replay_path, manifest, adapter_cmd, classes, samples,
              margin, sigma, data_seed, timeout, lambda_min, lambda_max,
              p_mixup, reference_seed, report, n_experts, run_seed, alpha,
              batch_size, trials, paper_literal, out):
    """Normality tests, smoothness/variance diagnostics, or the conflict
    probability grid."""
    if report == "jb":
        source = _build_source(provider, replay_path, manifest, adapter_cmd,
                               classes, samples, margin, sigma, data_seed,
                               timeout)
        rep = jb_report(source, n_experts=n_experts, run_seed=run_seed,
                        alpha=alpha)
        write_jb_csv(rep, f"{out}_jb.csv", f"{out}_ecdf.csv")
        click.echo(
            f"groups={len(rep.results)} skipped={rep.skipped} "
            f"rejection_fraction={rep.rejection_fraction:.4f} at alpha={rep.alpha}"
        )
        click.echo(f"wrote {out}_jb.csv and {out}_ecdf.csv")
    elif report == "holder":
        if not manifest or not adapter_cmd:
            raise click.UsageError(
                "--manifest and --adapter-cmd are required for --report holder"
            )
        rows = holder_report(
            manifest_path=manifest,
            adapter_command=adapter_cmd,
            aug=_aug_cfg(lambda_min, lambda_max, p_mixup, reference_seed),
            n_passes=n_experts,
            seed=run_seed,
            batch_size=batch_size,
            timeout=timeout,
        )
        write_holder_csv(rows, out)
        sat = sum(1 for r in rows if r["applicable"] and r["satisfied"])
        app = sum(1 for r in rows if r["applicable"])
        click.echo(
            f"images={len(rows)} bound_applicable={app} bound_satisfied={sat}"
        )
        click.echo(f"wrote {out}")
    else:
        rows = fig10_report(
            n_experts=n_experts,
            trials=trials,
            seed=run_seed,
            paper_literal=paper_literal,
            out_path=out,
        )
        worst = max(abs(r.empirical - r.analytic) for r in rows)
        click.echo(
            f"grid points={len(rows)} max |empirical - analytic|={worst:.5f}"
        )
        click.echo(f"wrote {out}")


@cli.command("fig10")
@click.option("--n", "n_experts", default=32, show_default=True,
              help="experts per trial")
@click.option("--trials", default=100000, show_default=True)
@click.option("--seed", "run_seed", default=1, show_default=True)
@click.option("--paper-literal", is_flag=True,
              help="use the density-based centering instead of the corrected\n"
                   "CDF-based one")
@click.option("--out", required=True, help="output CSV path")
def fig10_cmd(n_experts, trials, run_seed, paper_literal, out):
    """Analytic vs Monte Carlo conflict probability over the mean/noise grid."""
    rows = fig10_report(
        n_experts=n_experts,
        trials=trials,
        seed=run_seed,
        paper_literal=paper_literal,
        out_path=out,
    )
    worst = max(abs(r.empirical - r.analytic) for r in rows)
    click.echo(f"grid points={len(rows)} max |empirical - analytic|={worst:.5f}")
    click.echo(f"wrote {out}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except ProviderError as e:
        click.echo(f"provider error: {e}", err=True)
        return 2
    except (ManifestError, ImageFormatError, DegenerateRegressorError,
            DegenerateSamplesError, DegenerateCorrelationError) as e:
        click.echo(f"error: {e}", err=True)
        return 1
    except (ValueError, OSError) as e:
        click.echo(f"error: {e}", err=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
