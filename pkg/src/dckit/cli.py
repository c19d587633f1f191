"""``dckit`` command line.

Exit codes: 0 success, 1 I/O or format error, 2 precondition violation,
3 kernel conformance failure.
"""

from __future__ import annotations

import functools
import json
import os
import sys
from pathlib import Path

import click

from dckit import __version__
from dckit._io import atomic_write_text
from dckit.errors import FormatError, PreconditionError

EXIT_OK, EXIT_FORMAT, EXIT_PRECONDITION, EXIT_CONFORMANCE = 0, 1, 2, 3


def _emit(text: str, out) -> None:
    if out is None:
        click.echo(text, nl=False)
    else:
        atomic_write_text(out, text)


def _write_run_record(out, command: str, config: dict, digests: dict, extra: dict = None) -> None:
    """Provenance sidecar ``<out>.run.json`` for outputs whose format has no room for it."""
    if out is None:
        return
    doc = {"command": command, "config": config, "input_digests": digests, "version": __version__}
    if extra:
        doc.update(extra)
    atomic_write_text(Path(str(out) + ".run.json"), json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (FormatError, OSError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_FORMAT)
        except PreconditionError as exc:
            click.echo(f"precondition violated: {exc}", err=True)
            sys.exit(EXIT_PRECONDITION)

    return wrapper


def _limit_threads():
    n = os.environ.get("DCKIT_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, int(n)))


def _params(tau, knn, distance_mode):
    from dckit.metrics import MetricParams

    return MetricParams(tau=tau, k_nn=knn, mode=distance_mode)


def _path(p):
    return None if p is None else str(p)


tau_option = click.option("--tau", type=float, default=0.3, show_default=True, help="Match threshold.")
knn_option = click.option("--knn", type=int, default=3, show_default=True, help="k for the k-NN radius.")
mode_option = click.option(
    "--distance-mode",
    type=click.Choice(["similarity", "distance"]),
    default="similarity",
    show_default=True,
    help="Read --tau as a cosine-similarity threshold or a cosine-distance radius.",
)
out_option = click.option("--out", type=click.Path(dir_okay=False), default=None, help="Output path (default stdout).")


@click.group()
@click.version_option(__version__)
def cli():
    """Dataset metrics, condition sampling and diffusion kernel checks."""
    _limit_threads()


@cli.command()
@click.option("--ids", required=True, type=click.Path(dir_okay=False), help="Identity embedding file.")
@click.option("--real-styles", type=click.Path(dir_okay=False), help="Real style feature file.")
@click.option("--gen-styles", type=click.Path(dir_okay=False), help="Generated style feature file.")
@tau_option
@knn_option
@mode_option
@out_option
@_guarded
def metrics(ids, real_styles, gen_styles, tau, knn, distance_mode, out):
    """Uniqueness, consistency, diversity and FID report as JSON."""
    from dckit.embedding_store import read_embedding_file, read_style_file
    from dckit.metrics import metric_report

    params = _params(tau, knn, distance_mode)
    id_set = read_embedding_file(ids)
    real = read_style_file(real_styles) if real_styles else None
    gen = read_style_file(gen_styles) if gen_styles else None
    report = metric_report(id_set, real, gen, params)
    doc = report.to_dict()
    doc["config"] = {
        "command": "metrics",
        "ids": _path(ids),
        "real_styles": _path(real_styles),
        "gen_styles": _path(gen_styles),
        "tau": tau,
        "knn": knn,
        "distance_mode": distance_mode,
    }
    _emit(json.dumps(doc, indent=2, sort_keys=True) + "\n", out)


@cli.command()
@click.argument("a", type=click.Path(dir_okay=False))
@click.argument("b", type=click.Path(dir_okay=False))
@out_option
@_guarded
def fid(a, b, out):
    """Frechet distance between two style feature files."""
    from dckit.embedding_store import read_style_file
    from dckit.metrics import fid as fid_value

    sa, sb = read_style_file(a), read_style_file(b)
    doc = {
        "fid": fid_value(sa, sb),
        "input_digests": {"a": sa.digest(), "b": sb.digest()},
        "config": {"command": "fid", "a": _path(a), "b": _path(b)},
    }
    _emit(json.dumps(doc, indent=2, sort_keys=True) + "\n", out)


@cli.command()
@click.option("--candidates", required=True, type=click.Path(dir_okay=False), help="ID candidate embeddings.")
@click.option("--reference", type=click.Path(dir_okay=False), help="Reference bank to dedup against.")
@click.option("--style-bank", required=True, type=click.Path(dir_okay=False), help="Style bank embeddings.")
@click.option("--plan", "plan_path", required=True, type=click.Path(dir_okay=False), help="Sampling plan JSON.")
@click.option("--seed", type=int, default=None, help="Override the plan seed.")
@click.option("--tau", type=float, default=None, help="Override the plan similarity threshold.")
@out_option
@_guarded
def sample(candidates, reference, style_bank, plan_path, seed, tau, out):
    """Condition pairs as JSON lines; stage counts go to stderr."""
    import dataclasses

    from dckit.embedding_store import read_embedding_file
    from dckit.sampling import ALGORITHM_VERSION, SamplingPlan, run_sampling

    plan = SamplingPlan.from_file(plan_path)
    overrides = {k: v for k, v in (("seed", seed), ("tau", tau)) if v is not None}
    if overrides:
        plan = dataclasses.replace(plan, **overrides)
    cand = read_embedding_file(candidates)
    ref = read_embedding_file(reference) if reference else None
    bank = read_embedding_file(style_bank)
    result = run_sampling(cand, ref, bank, plan)
    _emit(result.to_jsonl(), out)
    digests = {"candidates": cand.digest(), "style_bank": bank.digest()}
    if ref is not None:
        digests["reference"] = ref.digest()
    config = {
        "candidates": _path(candidates),
        "reference": _path(reference),
        "style_bank": _path(style_bank),
        "plan": plan.to_dict(),
        "algorithm_version": ALGORITHM_VERSION,
    }
    _write_run_record(out, "sample", config, digests, {"stage_counts": result.stage_counts})
    click.echo(" -> ".join(f"{k}={v}" for k, v in result.stage_counts.items()), err=True)


def _parse_checkpoints(ctx, param, value):
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter("expected comma-separated integers")


@cli.command("unique-curve")
@click.option("--features", required=True, type=click.Path(dir_okay=False), help="Embedding file (record order is scan order).")
@click.option("--checkpoints", required=True, callback=_parse_checkpoints, help="Ascending prefix sizes, e.g. 100,200,500.")
@tau_option
@mode_option
@out_option
@_guarded
def unique_curve(features, checkpoints, tau, distance_mode, out):
    """Unique-subject count versus sample count, as CSV."""
    from dckit.embedding_store import read_embedding_file
    from dckit.metrics import unique_count_curve

    params = _params(tau, 1, distance_mode)
    feats = read_embedding_file(features)
    curve = unique_count_curve(feats, params.similarity_threshold, checkpoints)
    _emit("n,unique_count\n" + "".join(f"{n},{u}\n" for n, u in curve), out)
    config = {"features": _path(features), "checkpoints": checkpoints, "tau": tau, "distance_mode": distance_mode}
    _write_run_record(out, "unique-curve", config, {"features": feats.digest()})


@cli.command("kernel-check")
@click.option("--seed", type=int, default=0, show_default=True)
@out_option
@click.option("--inject-corrupt-schedule", is_flag=True, hidden=True)
def kernel_check(seed, out, inject_corrupt_schedule):
    """Run the diffusion-kernel conformance suite; exit 3 if any check fails."""
    from dckit.conformance import corrupted_schedule, run_kernel_checks

    schedule = corrupted_schedule() if inject_corrupt_schedule else None
    report = run_kernel_checks(seed & 0xFFFF_FFFF_FFFF_FFFF, schedule=schedule)
    _emit(json.dumps(report, indent=2, sort_keys=True) + "\n", out)
    failed = [name for name, r in report.items() if not r["pass"]]
    if failed:
        click.echo("failed checks: " + ", ".join(failed), err=True)
        sys.exit(EXIT_CONFORMANCE)


def main():
    cli()


if __name__ == "__main__":
    main()
