"""Command-line front end.

Subcommands: gen, metric, bound, analyze, example, experiment.  Exit
codes: 0 success, 2 usage error, 3 data error, 4 numeric/training
failure.  Report paths write CSV (or JSONL) plus rendered figures; pass
--no-plot to skip the figures.
"""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__, bounds, data, metrics, symmetry
from .bounds import EmpiricalDensity, TruncatedNormalDensity
from .experiments import (DEFAULT_RATIOS, run_swissroll_sweep,
                          run_vectorfield_experiment)
from .groups import GROUP_GRAMMAR, GroupSpecError, build_group
from .manifest import RunManifest, write_csv, write_jsonl
from .models import TrainingDivergedError
from .worked_examples import EXAMPLE_IDS, run_example

EXIT_DATA = 3
EXIT_NUMERIC = 4


class DataError(click.ClickException):
    exit_code = EXIT_DATA


class NumericError(click.ClickException):
    exit_code = EXIT_NUMERIC


@click.group()
@click.version_option(__version__)
@click.option("--seed", type=int, default=0, show_default=True,
              help="Root seed; all randomness derives from it.")
@click.option("--out-dir", type=click.Path(file_okay=False), default=".",
              show_default=True, help="Directory for output files.")
@click.option("--format", "fmt", type=click.Choice(["csv", "jsonl"]),
              default="csv", show_default=True)
@click.option("--plot/--no-plot", default=True, show_default=True,
              help="Render figures alongside delimited outputs.")
@click.pass_context
def main(ctx, seed, out_dir, fmt, plot):
    """Calibration metrics and symmetry-derived calibration bounds."""
    ctx.ensure_object(dict)
    ctx.obj.update(seed=seed, out_dir=Path(out_dir), fmt=fmt, plot=plot)
    ctx.obj["out_dir"].mkdir(parents=True, exist_ok=True)


def _manifest(ctx, command) -> RunManifest:
    return RunManifest(command=command, argv=sys.argv[1:], seed=ctx.obj["seed"])


def _finish(ctx, manifest: RunManifest, name: str):
    path = ctx.obj["out_dir"] / f"{name}_manifest.json"
    manifest.finish().write(path)


# -- gen -------------------------------------------------------------------------


@main.command()
@click.argument("kind")
@click.option("-o", "--output", type=click.Path(dir_okay=False), default=None)
@click.option("--ratio", type=float, default=0.5, show_default=True,
              help="Correct-invariance ratio (swiss).")
@click.option("--n", type=int, default=None, help="Samples per arm (swiss) or total (fields).")
@click.option("--radius", type=float, default=math.pi, show_default=True)
@click.option("--dims", type=int, default=1, show_default=True)
@click.option("--seed", "gen_seed", type=int, default=None,
              help="Override the root seed for this dataset.")
@click.pass_context
def gen(ctx, kind, output, ratio, n, radius, dims, gen_seed):
    """Generate a dataset file.

    KIND is one of: circle20, swiss, permutation24, pointcloud,
    spiral, sinusoidal, calibrated-gaussian.
    """
    seed = ctx.obj["seed"] if gen_seed is None else gen_seed
    manifest = _manifest(ctx, f"gen {kind}")
    manifest.seed = seed
    params: dict = {}
    if kind == "circle20":
        ds = data.gen_circle20()
    elif kind == "swiss":
        params = {"correct_ratio": ratio, "n_per_arm": n or 150}
        ds = data.gen_swiss_rolls(params["correct_ratio"], params["n_per_arm"], seed)
    elif kind == "permutation24":
        ds = data.gen_permutation24()
    elif kind == "pointcloud":
        ds, fibers = data.gen_pointcloud_gence()
        ds = data.WeightedDataset(points=ds.points, weights=ds.weights,
                                  targets=ds.targets, annotations={"fiber": fibers})
    elif kind in ("spiral", "sinusoidal"):
        params = {"n": n or 512, "radius": radius}
        ds = data.gen_vector_field(kind, params["n"], radius, seed)
    elif kind == "calibrated-gaussian":
        params = {"n": n or 1000, "dims": dims, "s_range": [0.5, 2.0]}
        ds = data.gen_calibrated_gaussian(params["n"], dims, (0.5, 2.0), seed)
    else:
        raise click.UsageError(
            f"unknown dataset kind {kind!r}; expected circle20 | swiss | "
            "permutation24 | pointcloud | spiral | sinusoidal | calibrated-gaussian")
    out = Path(output) if output else ctx.obj["out_dir"] / f"{kind}.jsonl"
    data.save_dataset(ds, out, provenance={"kind": kind, "params": params,
                                           "seed": seed})
    manifest.record_output(out)
    _finish(ctx, manifest, out.stem)
    click.echo(f"wrote {len(ds)} records to {out}")


# -- shared loaders ----------------------------------------------------------------


def _load_dataset(path) -> data.WeightedDataset:
    try:
        return data.load_dataset(path)
    except (data.DatasetFormatError, ValueError, OSError) as exc:
        raise DataError(f"{path}: {exc}") from exc


def _load_predictions(path):
    """Read prediction records: confidence/label or mean/variance per line."""
    records = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                raw = raw.strip()
                if not raw:
                    continue
                rec = json.loads(raw)
                if rec.get("schema"):
                    continue
                records.append(rec)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    if not records:
        raise DataError(f"{path}: no prediction records")
    return records


# -- metric -------------------------------------------------------------------------


@main.command()
@click.argument("kind", type=click.Choice(["ece", "gence", "gence-sq", "bleed"]))
@click.argument("predictions", type=click.Path(exists=True, dir_okay=False))
@click.argument("truth", type=click.Path(exists=True, dir_okay=False))
@click.option("--bins", type=int, default=100, show_default=True)
@click.option("--fibers", default="quantile:10", show_default=True,
              help="Fiber scheme: exact | epsilon:<eps> | quantile:<k>.")
@click.option("--zero-truth", is_flag=True,
              help="Treat the true aleatoric variance as identically zero (bleed).")
@click.pass_context
def metric(ctx, kind, predictions, truth, bins, fibers, zero_truth):
    """Compute a calibration metric from prediction and truth files."""
    manifest = _manifest(ctx, f"metric {kind}")
    manifest.record_input(predictions)
    manifest.record_input(truth)
    ds = _load_dataset(truth)
    records = _load_predictions(predictions)
    if len(records) != len(ds):
        raise DataError(f"{len(records)} predictions for {len(ds)} truth records")
    out_dir = ctx.obj["out_dir"]

    if kind == "ece":
        try:
            conf = np.array([r["confidence"] for r in records], dtype=float)
            pred = np.array([r["label"] for r in records], dtype=int)
        except KeyError as exc:
            raise DataError(f"prediction records missing field {exc}") from exc
        if ds.labels is None:
            raise DataError("truth file has no labels")
        try:
            value, table = metrics.ece_binned(conf, pred, ds.labels,
                                              weights=ds.weights, n_bins=bins)
        except ValueError as exc:
            raise DataError(str(exc)) from exc
        rows = [{"bin_lo": lo, "bin_hi": hi, "mass": mass, "accuracy": acc,
                 "confidence": c, "gap": gap} for lo, hi, mass, acc, c, gap
                in table.rows()]
        if ctx.obj["fmt"] == "jsonl":
            out = write_jsonl(out_dir / "ece_bins.jsonl", rows, manifest)
        else:
            out = write_csv(out_dir / "ece_bins.csv",
                            ["bin_lo", "bin_hi", "mass", "accuracy", "confidence", "gap"],
                            rows, manifest, extra_header={"ece": value, "bins": bins})
        if ctx.obj["plot"]:
            from . import plots
            manifest.record_output(plots.plot_reliability(table, out_dir / "reliability.png"))
        click.echo(f"ece = {value:.6f}")
        click.echo(f"bin table: {out}")
    elif kind in ("gence", "gence-sq"):
        try:
            means = np.array([r["mean"] for r in records], dtype=float)
            variances = np.array([r["variance"] for r in records], dtype=float)
        except KeyError as exc:
            raise DataError(f"prediction records missing field {exc}") from exc
        if ds.targets is None:
            raise DataError("truth file has no targets")
        fib = _parse_fibers(fibers, means, variances, ds.weights)
        fn = metrics.gence if kind == "gence" else metrics.gence_sq
        try:
            value = fn(means, variances, ds.targets, weights=ds.weights, fibers=fib)
        except (ValueError, metrics.VarianceUnderflowError) as exc:
            raise NumericError(str(exc)) from exc
        rows = [{"fiber": i, "mass": fib.masses[i],
                 "key_norm": float(np.linalg.norm(np.atleast_1d(fib.keys[i]))),
                 "count": len(fib.groups[i])} for i in range(len(fib))]
        stem = kind.replace("-", "_") + "_fibers"
        if ctx.obj["fmt"] == "jsonl":
            out = write_jsonl(out_dir / f"{stem}.jsonl", rows, manifest)
        else:
            out = write_csv(out_dir / f"{stem}.csv",
                            ["fiber", "mass", "key_norm", "count"], rows, manifest,
                            extra_header={kind: value, "scheme": fib.mode})
        click.echo(f"{kind} = {value:.6f}")
        click.echo(f"fiber table: {out}")
    else:  # bleed
        try:
            pred_var = np.array([r["variance"] for r in records], dtype=float)
        except KeyError as exc:
            raise DataError(f"prediction records missing field {exc}") from exc
        truth_var = None
        if not zero_truth:
            if "aleatoric" in ds.annotations:
                truth_var = np.atleast_2d(np.asarray(ds.annotations["aleatoric"],
                                                     dtype=float))
            else:
                truth_var = np.zeros_like(np.atleast_2d(pred_var))
        try:
            value = metrics.aleatoric_bleed(pred_var, truth_var, ds.weights)
        except ValueError as exc:
            raise NumericError(str(exc)) from exc
        click.echo(f"bleed = {value:.6f}")
    _finish(ctx, manifest, f"metric_{kind}")


def _parse_fibers(spec: str, means, variances, weights):
    name, _, arg = spec.partition(":")
    try:
        if name == "exact":
            return metrics.exact_fibers(variances, weights=weights)
        if name == "epsilon":
            return metrics.epsilon_fibers(variances, float(arg), weights=weights)
        if name == "quantile":
            return metrics.quantile_fibers(variances, int(arg or 10), weights=weights)
    except ValueError as exc:
        raise click.UsageError(f"bad fiber spec {spec!r}: {exc}") from exc
    raise click.UsageError(f"unknown fiber scheme {spec!r}")


# -- bound --------------------------------------------------------------------------


def parse_density(spec: str):
    """Density grammar: truncnorm:<mu>,<sigma>,<a>,<b> or file:<predictions>."""
    name, _, arg = spec.partition(":")
    if name == "truncnorm":
        try:
            mu, sigma, a, b = (float(v) for v in arg.split(","))
        except ValueError:
            raise click.UsageError(
                f"bad density {spec!r}; expected truncnorm:<mu>,<sigma>,<a>,<b>")
        return TruncatedNormalDensity(mu=mu, sigma=sigma, a=a, b=b)
    if name == "file":
        records = _load_predictions(arg)
        try:
            values = np.array([r["confidence"] for r in records], dtype=float)
        except KeyError:
            raise DataError(f"{arg}: records need a confidence field")
        masses = np.full(len(values), 1.0 / len(values))
        return EmpiricalDensity(values=values, masses=masses)
    raise click.UsageError(f"unknown density {spec!r}")


def _echo_report(report: bounds.BoundReport):
    click.echo(f"{report.kind:24s} value = {report.value:.10g}")
    for key, val in report.components.items():
        click.echo(f"{'':4s}{key} = {val:.10g}")
    for note in report.notes:
        click.echo(f"{'':4s}note: {note}")


def _report_record(report: bounds.BoundReport) -> dict:
    return {"kind": report.kind, "value": report.value,
            "components": {k: float(v) for k, v in report.components.items()},
            "notes": list(report.notes)}


@main.group()
def bound():
    """Bound calculators and worked-example reproductions."""


@bound.command("ece-upper")
@click.option("--density", required=True, help="truncnorm:<mu>,<sigma>,<a>,<b> or file:<path>")
@click.option("--k-star", type=float, default=None,
              help="Least nonzero orbit dissent; enables the invariant bound.")
@click.option("--m", type=float, default=None,
              help="Minimum fiber-wise dissent; enables the fiberwise bound.")
@click.option("--p2-mass", type=float, default=1.0, show_default=True,
              help="Mass of the high-accuracy confidence region (1 for binary tasks).")
@click.pass_context
def bound_ece_upper(ctx, density, k_star, m, p2_mass):
    """Upper bounds on binned calibration error."""
    r = parse_density(density)
    reports = [bounds.ece_upper_naive(r)]
    if k_star is not None:
        reports.append(bounds.ece_upper_invariant(r, k_star, p2_mass))
    if m is not None:
        reports.append(bounds.ece_upper_fiberwise(r, m, p2_mass))
    for rep in reports:
        _echo_report(rep)
    _write_reports(ctx, "bound_ece_upper", reports)


@bound.command("ece-lower")
@click.option("--density", required=True)
@click.option("--m", type=float, required=True, help="Accuracy floor.")
@click.pass_context
def bound_ece_lower(ctx, density, m):
    """Lower bound on binned calibration error given an accuracy floor."""
    rep = bounds.ece_lower(parse_density(density), m)
    _echo_report(rep)
    _write_reports(ctx, "bound_ece_lower", [rep])


@bound.command("ece-binary")
@click.option("--m", type=float, required=True,
              help="Dissent value (least orbit dissent or min fiber-wise dissent).")
@click.pass_context
def bound_ece_binary(ctx, m):
    """Binary-task upper bound 1 - m."""
    rep = bounds.ece_upper_binary(m)
    _echo_report(rep)
    _write_reports(ctx, "bound_ece_binary", [rep])


@bound.command("bilipschitz")
@click.option("--k2", type=float, required=True)
@click.option("--k-star", type=float, default=0.0, show_default=True)
@click.option("--p2-mass", type=float, default=1.0, show_default=True)
@click.option("--min-orbit-mass", type=float, default=0.0, show_default=True)
@click.pass_context
def bound_bilipschitz(ctx, k2, k_star, p2_mass, min_orbit_mass):
    """Upper bound for a bi-Lipschitz confidence head."""
    rep = bounds.ece_upper_bilipschitz(k2, k_star, p2_mass, min_orbit_mass)
    _echo_report(rep)
    _write_reports(ctx, "bound_bilipschitz", [rep])


@bound.command("hoeffding")
@click.option("--epsilon", type=float, required=True)
@click.option("--delta", type=float, required=True)
def bound_hoeffding(epsilon, delta):
    """Sample count for estimating calibration error to epsilon at risk delta."""
    try:
        n = bounds.hoeffding_n(epsilon, delta)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    click.echo(f"n = {n}")


def _run_example_cmd(ctx, example_id, s1, k_star, mu, sigma):
    kwargs = {}
    if example_id == "5.1":
        kwargs["s1"] = s1
    if example_id == "4.1":
        kwargs.update(mu=mu, sigma=sigma)
        if k_star is not None:
            kwargs["k_star"] = k_star
    try:
        result = run_example(example_id, **kwargs)
    except KeyError as exc:
        raise click.UsageError(str(exc.args[0])) from exc
    click.echo(f"example {result.example_id}: {result.title}")
    for rep in result.reports:
        _echo_report(rep)
    _write_reports(ctx, f"example_{example_id.replace('.', '_')}", result.reports)


_example_params = [
    click.option("--id", "example_id", required=True,
                 type=click.Choice(list(EXAMPLE_IDS)), help="Worked example id."),
    click.option("--s1", type=float, default=1.0, show_default=True,
                 help="Scalar variance of the first fiber (example 5.1)."),
    click.option("--k-star", type=float, default=None,
                 help="Least nonzero orbit dissent (example 4.1)."),
    click.option("--mu", type=float, default=0.5, show_default=True,
                 help="Confidence-density mean (example 4.1)."),
    click.option("--sigma", type=float, default=0.1, show_default=True,
                 help="Confidence-density scale (example 4.1)."),
]


def _with_example_params(fn):
    for opt in reversed(_example_params):
        fn = opt(fn)
    return fn


@main.command("example")
@_with_example_params
@click.pass_context
def example_cmd(ctx, example_id, s1, k_star, mu, sigma):
    """Reproduce a worked bound example."""
    _run_example_cmd(ctx, example_id, s1, k_star, mu, sigma)


@bound.command("example")
@_with_example_params
@click.pass_context
def bound_example_cmd(ctx, example_id, s1, k_star, mu, sigma):
    """Reproduce a worked bound example."""
    _run_example_cmd(ctx, example_id, s1, k_star, mu, sigma)


def _write_reports(ctx, name, reports):
    manifest = _manifest(ctx, name.replace("_", " "))
    out = ctx.obj["out_dir"] / f"{name}.jsonl"
    write_jsonl(out, [_report_record(r) for r in reports], manifest)
    _finish(ctx, manifest, name)


# -- analyze ------------------------------------------------------------------------


@main.command()
@click.argument("dataset", type=click.Path(exists=True, dir_okay=False))
@click.option("--group", "group_spec", required=True,
              help=f"Group descriptor: {GROUP_GRAMMAR}.")
@click.option("--ambient-dim", type=int, default=None,
              help="Embed planar groups in this dimension (defaults to the data).")
@click.option("--tol", type=float, default=1e-8, show_default=True)
@click.pass_context
def analyze(ctx, dataset, group_spec, ambient_dim, tol):
    """Per-orbit masses, dissents, and target moments as CSV."""
    manifest = _manifest(ctx, f"analyze {group_spec}")
    manifest.record_input(dataset)
    ds = _load_dataset(dataset)
    dim = ambient_dim or (ds.points.shape[-1] if not ds.is_point_set else 2)
    try:
        group = build_group(group_spec, ambient_dim=dim)
    except GroupSpecError as exc:
        raise click.UsageError(str(exc)) from exc
    stats = symmetry.orbit_stats_table(ds, group, tol=tol)
    rows = []
    for i, st in enumerate(stats):
        rows.append({"orbit": i, "size": len(st.orbit), "mass": st.mass,
                     "majority_dissent": st.majority_dissent,
                     "minority_dissent": st.minority_dissent,
                     "target_variance": (st.target_variance
                                         if st.target_variance is not None
                                         else math.nan)})
    out = write_csv(ctx.obj["out_dir"] / "orbits.csv",
                    ["orbit", "size", "mass", "majority_dissent",
                     "minority_dissent", "target_variance"], rows, manifest,
                    extra_header={"group": group_spec, "n_orbits": len(stats)})
    _finish(ctx, manifest, "analyze")
    click.echo(f"{len(stats)} orbits -> {out}")


# -- experiment -----------------------------------------------------------------------


@main.group()
def experiment():
    """Desk-scale training experiments."""


@experiment.command("swiss")
@click.option("--ratios", default=",".join(str(r) for r in DEFAULT_RATIOS),
              show_default=True, help="Comma-separated correct ratios.")
@click.option("--seeds", type=int, default=5, show_default=True,
              help="Number of seeds (0..n-1).")
@click.option("--n-per-arm", type=int, default=150, show_default=True)
@click.option("--epochs", type=int, default=None, help="Override training epochs.")
@click.pass_context
def experiment_swiss(ctx, ratios, seeds, n_per_arm, epochs):
    """Correct-invariance sweep: accuracy and ECE for both model kinds."""
    try:
        ratio_list = [float(r) for r in ratios.split(",") if r.strip()]
    except ValueError:
        raise click.UsageError(f"bad ratio list {ratios!r}")
    manifest = _manifest(ctx, "experiment swiss")
    cfg = None
    if epochs is not None:
        from .experiments import SWISS_CLASSIFIER_CFG
        from dataclasses import replace
        cfg = replace(SWISS_CLASSIFIER_CFG, epochs=epochs)
    try:
        rows = run_swissroll_sweep(ratio_list, seeds=range(seeds), cfg=cfg,
                                   n_per_arm=n_per_arm)
    except TrainingDivergedError as exc:
        raise NumericError(str(exc)) from exc
    out_dir = ctx.obj["out_dir"]
    columns = ["ratio", "seed", "model", "acc", "ece", "lb", "ub"]
    if ctx.obj["fmt"] == "jsonl":
        out = write_jsonl(out_dir / "swiss_sweep.jsonl",
                          [r.as_dict() for r in rows], manifest)
    else:
        out = write_csv(out_dir / "swiss_sweep.csv", columns,
                        [r.as_dict() for r in rows], manifest)
    if ctx.obj["plot"]:
        from . import plots
        manifest.record_output(plots.plot_sweep(rows, out_dir / "swiss_sweep.png"))
    _finish(ctx, manifest, "experiment_swiss")
    click.echo(f"sweep results: {out}")


@experiment.command("vectorfield")
@click.option("--kind", type=click.Choice(["spiral", "sinusoidal"]), required=True)
@click.option("--seeds", type=int, default=5, show_default=True)
@click.option("--n", type=int, default=512, show_default=True)
@click.option("--epochs", type=int, default=None)
@click.pass_context
def experiment_vectorfield(ctx, kind, seeds, n, epochs):
    """Vector-field regression: unconstrained vs radial-equivariant models."""
    manifest = _manifest(ctx, f"experiment vectorfield {kind}")
    cfg = None
    if epochs is not None:
        from .experiments import VECTORFIELD_CFG
        from dataclasses import replace
        cfg = replace(VECTORFIELD_CFG, epochs=epochs)
    try:
        report = run_vectorfield_experiment(kind, seeds=range(seeds), cfg=cfg, n=n)
    except TrainingDivergedError as exc:
        raise NumericError(str(exc)) from exc
    out_dir = ctx.obj["out_dir"]
    summary_cols = ["kind", "seed", "model", "mse", "beta_nll", "bleed", "gence"]
    angle_cols = ["kind", "seed", "model", "sector", "angle_lo", "angle_hi",
                  "count", "mse", "beta_nll"]
    if ctx.obj["fmt"] == "jsonl":
        out = write_jsonl(out_dir / f"vectorfield_{kind}.jsonl",
                          [r.as_dict() for r in report.rows], manifest)
        angles = write_jsonl(out_dir / f"vectorfield_{kind}_angles.jsonl",
                             list(report.angle_rows), manifest)
    else:
        out = write_csv(out_dir / f"vectorfield_{kind}.csv", summary_cols,
                        [r.as_dict() for r in report.rows], manifest)
        angles = write_csv(out_dir / f"vectorfield_{kind}_angles.csv", angle_cols,
                           list(report.angle_rows), manifest)
    if ctx.obj["plot"]:
        from . import plots
        from .data import gen_vector_field
        from .models import train_vector_regressor
        from .experiments import VECTORFIELD_CFG
        from dataclasses import replace as _replace
        show_cfg = cfg or VECTORFIELD_CFG
        ds = gen_vector_field(kind, n, math.pi, 0)
        shown = {name: train_vector_regressor(ds, name, _replace(show_cfg, seed=0))
                 for name in ("unconstrained", "radial_equivariant")}
        manifest.record_output(plots.plot_vector_fields(
            kind, shown, out_dir / f"vectorfield_{kind}.png"))
        manifest.record_output(plots.plot_angle_losses(
            report.angle_rows, kind, out_dir / f"vectorfield_{kind}_angles.png"))
    _finish(ctx, manifest, f"experiment_vectorfield_{kind}")
    click.echo(f"summary: {out}")
    click.echo(f"per-angle table: {angles}")


if __name__ == "__main__":
    main()
