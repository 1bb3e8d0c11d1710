#!/usr/bin/env python
"""Command line interface to ouiqa."""
from concurrent.futures import ThreadPoolExecutor
import functools
import json
import logging
import os.path
import time
import traceback

import click
from jsonschema import ValidationError  # type: ignore
from progress.bar import ShadyBar  # type: ignore

from . import __version__
from .config import (
    Config,
    config_lines,
    dataset_settings,
    load_config,
    loss_settings,
    optimizer_settings,
)
from .imgproc import load_image, resize_shortest_side, save_image
from .distort import (
    CATEGORIES,
    degrade,
    load_registry,
    make_recipe,
    parse_step,
    recipe_to_dict,
    sample_recipe,
)
from .features import FEATURE_WIDTH, extract_patch_features, write_features_csv
from .scorer import init_params, load_checkpoint, predict, save_checkpoint
from .losses import RANKING_VARIANTS, ablation_settings
from .prompts import load_embeddings
from .dataset import BatchStream, build_manifest, degraded_sample, find_images, read_manifest
from .evaluation import EmptySetError, ScoreRow, evaluate, export_report, separation_report
from .training import (
    LOG_COLUMNS,
    Trainer,
    TrainingSchedule,
    full_gradient,
    grad_check,
    random_check_problem,
    write_training_log,
)
from .util import derive_seed, parse_seed

EXIT_VALIDATION = 2
EXIT_RUNTIME = 3
EXIT_THRESHOLD = 4


class ThresholdError(Exception):
    """Some acceptance threshold was not met"""


class ProgressTrainingSchedule(TrainingSchedule):
    """Adds a progress bar to a TrainingSchedule"""

    def __iter__(self):
        progress_bar = ShadyBar(
            "Training",
            max=self.total_steps,
            width=60,
            suffix="%(percent).1f%% - ETA: %(eta_td)s",
        )
        for position in TrainingSchedule.__iter__(self):
            yield position
            progress_bar.next()
        progress_bar.finish()


def report_errors(command):
    """Turns the exceptions of a command in a red message and an exit status:
    2 for invalid inputs, 3 for runtime failures and 4 for unmet thresholds."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        ctx = click.get_current_context()
        try:
            return command(*args, **kwargs)
        except ThresholdError as excep:
            click.secho("FAIL: {}".format(excep), fg="red")
            ctx.exit(EXIT_THRESHOLD)
        except (ValueError, ValidationError) as excep:
            _show_error(ctx, excep)
            ctx.exit(EXIT_VALIDATION)
        except (OSError, RuntimeError, ArithmeticError) as excep:
            _show_error(ctx, excep)
            ctx.exit(EXIT_RUNTIME)

    return wrapper


def _show_error(ctx, excep):
    msg = excep.message if hasattr(excep, "message") else str(excep)
    if ctx.find_root().params.get("verbose"):
        traceback.print_exc()
    click.secho("\nError: {}".format(msg), fg="red", err=True)


def _timed(message, function, *args, **kwargs):
    click.echo("{}...".format(message), nl=False)
    t_ini = time.process_time()
    result = function(*args, **kwargs)
    click.echo("({:.3f}s)".format(time.process_time() - t_ini))
    return result


def _config(config_file, **overrides) -> Config:
    flags = {key.replace("__", "."): value for key, value in overrides.items()}
    return load_config(config_file, flags)


def _load_scorer(checkpoint):
    params, _ = _timed("Reading {}".format(checkpoint), load_checkpoint, checkpoint)
    return params


def _score_images(params, images, grid, jobs):
    rows, cols = grid
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        grids = list(pool.map(lambda img: extract_patch_features(img, rows, cols), images))
    return predict(params, grids)


def _read_images(paths, resize_short, jobs):
    def read(path):
        img = load_image(path)
        return resize_shortest_side(img, resize_short) if resize_short else img

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        return list(pool.map(read, paths))


config_option = click.option(
    "--config",
    "-c",
    "config_file",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="Configuration file (defaults to $OUIQA_CONFIG, if set)",
)
jobs_option = click.option("--jobs", "-j", type=int, default=None, help="Number of worker threads")
resize_option = click.option(
    "--resize-short", type=int, default=None, help="Resize the shortest side before scoring"
)
out_dir_option = click.option(
    "--out",
    "-o",
    "out_dir",
    type=click.Path(file_okay=False),
    default=None,
    help="Directory of the report files",
)
registry_option = click.option(
    "--registry",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="Distortion registry file",
)


@click.group()
@click.version_option(__version__)
@click.option(
    "--verbose",
    "-v",
    is_flag=True,
    default=False,
    help="Debug logging and full tracebacks on failure",
)
def cli(verbose):
    "ouiqa command line interface"
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


@cli.command("degrade")
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@click.argument("output", type=click.Path(dir_okay=False))
@click.option(
    "--steps",
    "-s",
    "steps",
    multiple=True,
    help="Distortion step as KIND:LEVEL, may be repeated. Overrides --seed",
)
@click.option("--seed", type=str, default="0", show_default=True, help="Seed of the recipe")
@click.option("--max-steps", type=int, default=None, help="Maximum number of sampled steps")
@click.option(
    "--sigma-off", type=float, default=None, help="Standard deviation of the level offsets"
)
@registry_option
@config_option
@report_errors
def degrade_image(image, output, steps, seed, max_steps, sigma_off, registry, config_file):
    "Applies a given or sampled distortion recipe to an image"
    config = _config(
        config_file,
        degradation__max_steps=max_steps,
        degradation__sigma_off=sigma_off,
        degradation__registry=registry,
    )
    degradation = config["degradation"]
    kinds = load_registry(degradation["registry"])
    seed = parse_seed(seed)
    if steps:
        recipe = make_recipe([parse_step(text) for text in steps], seed, kinds)
    else:
        sigma_off = float(degradation["sigma_off"])
        recipe = sample_recipe(seed, degradation["max_steps"], sigma_off, kinds)
    img = load_image(image)
    degraded = _timed("Degrading {}".format(image), degrade, img, recipe, kinds)
    save_image(degraded, output)
    click.echo(json.dumps(recipe_to_dict(recipe), sort_keys=True))
    click.echo("severity: {!r}".format(recipe.severity))


@cli.command("dataset")
@click.argument("corpus", type=click.Path(exists=True, file_okay=False))
@click.argument("manifest", type=click.Path(dir_okay=False))
@click.option("--variants", "-V", type=int, default=None, help="Distorted samples per image")
@click.option("--crop-size", type=int, default=None, help="Side of the training crops")
@click.option("--seed", type=str, default=None, help="Master seed")
@click.option(
    "--materialize",
    type=click.Path(file_okay=False),
    default=None,
    help="Also write every degraded crop as PNG to this directory",
)
@jobs_option
@config_option
@report_errors
def dataset(corpus, manifest, variants, crop_size, seed, materialize, jobs, config_file):
    "Builds the training manifest of a corpus of pristine images"
    config = _config(
        config_file,
        data__variants=variants,
        data__crop_size=crop_size,
        data__master_seed=None if seed is None else parse_seed(seed),
        data__jobs=jobs,
    )
    settings = dataset_settings(config)
    click.echo("Master seed: {}".format(settings.master_seed))
    summary = _timed(
        "Building {}".format(manifest),
        build_manifest,
        corpus,
        settings,
        manifest,
        materialize_dir=materialize,
        jobs=config["data"]["jobs"],
    )
    click.echo(
        "{} records from {} images ({} skipped)".format(
            summary.records, summary.images, len(summary.skipped)
        )
    )
    for path in summary.skipped:
        click.secho("  skipped {}".format(path), fg="yellow")


@cli.command("train")
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.argument("checkpoint", type=click.Path(dir_okay=False))
@click.option(
    "--log", "log_file", type=click.Path(dir_okay=False), default=None, help="Training log CSV"
)
@click.option("--epochs", type=int, default=None, help="Number of epochs")
@click.option("--batch-size", type=int, default=None, help="Records per batch")
@click.option("--preset", type=click.Choice(["small", "base"]), default=None, help="Scorer size")
@click.option("--seed", type=str, default=None, help="Seed of the initialization")
@click.option(
    "--ranking", type=click.Choice(RANKING_VARIANTS), default=None, help="Ranking loss variant"
)
@click.option("--no-align", is_flag=True, default=False, help="Disable the text alignment loss")
@click.option(
    "--no-embdist", is_flag=True, default=False, help="Disable the embedding distance loss"
)
@click.option(
    "--ablation",
    type=click.IntRange(1, 4),
    default=None,
    help="Ablation configuration: 1 ranking only, 2 +embdist, 3 +align, 4 all",
)
@click.option(
    "--prompt-embeddings",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="HRQE file with precomputed prompt embeddings",
)
@jobs_option
@config_option
@report_errors
def train(
    manifest,
    checkpoint,
    log_file,
    epochs,
    batch_size,
    preset,
    seed,
    ranking,
    no_align,
    no_embdist,
    ablation,
    prompt_embeddings,
    jobs,
    config_file,
):
    "Trains a scorer on a manifest"
    config = _config(
        config_file,
        train__epochs=epochs,
        train__batch_size=batch_size,
        model__preset=preset,
        model__seed=None if seed is None else parse_seed(seed),
        loss__ranking=ranking,
        loss__align=False if no_align else None,
        loss__embdist=False if no_embdist else None,
        paths__log=log_file,
        paths__prompt_embeddings=prompt_embeddings,
        data__jobs=jobs,
    )
    settings = loss_settings(config)
    if ablation is not None:
        settings = ablation_settings(ablation, settings)
    model = config["model"]
    seed = parse_seed(model["seed"])
    click.echo("Seed: {}".format(seed))

    data = _timed("Reading {}".format(manifest), read_manifest, manifest)
    text_width = data.settings.text_width
    prompt_table = None
    if config["paths"]["prompt_embeddings"]:
        prompt_table = _timed(
            "Reading {}".format(config["paths"]["prompt_embeddings"]),
            load_embeddings,
            config["paths"]["prompt_embeddings"],
            text_width,
        )
    stream = BatchStream(
        data, config["train"]["batch_size"], jobs=config["data"]["jobs"], prompt_table=prompt_table
    )
    params = init_params(
        model["preset"], FEATURE_WIDTH, text_width, seed, model["hidden"], model["embed"]
    )
    trainer = Trainer(
        stream,
        params,
        settings,
        optimizer_settings(config, stream.steps_per_epoch),
        derive_seed(seed, "train"),
    )
    _timed("Extracting features of {} records".format(len(stream)), trainer.fit_normalization)
    t_ini = time.process_time()
    schedule = ProgressTrainingSchedule(config["train"]["epochs"], stream.steps_per_epoch)
    result = trainer.train(schedule)
    click.echo("Trained {} steps ({:.3f}s)".format(len(result.log), time.process_time() - t_ini))
    if result.log:
        click.echo("Final loss: {:.6f}".format(result.log[-1][LOG_COLUMNS.index("total")]))

    _timed(
        "Writing {}".format(checkpoint), save_checkpoint, checkpoint, result.params, result.state
    )
    log_file = config["paths"]["log"]
    if log_file is None:
        log_file = os.path.splitext(checkpoint)[0] + "-log.csv"
    _timed("Writing {}".format(log_file), write_training_log, result.log, log_file)


@cli.command("score")
@click.argument("checkpoint", type=click.Path(dir_okay=False))
@click.argument("images", type=click.Path(exists=True, dir_okay=False), nargs=-1, required=True)
@resize_option
@click.option(
    "--out",
    "-o",
    "output",
    type=click.Path(dir_okay=False),
    default=None,
    help="CSV file (default stdout)",
)
@jobs_option
@config_option
@report_errors
def score(checkpoint, images, resize_short, output, jobs, config_file):
    "Scores images, writing path,q lines"
    config = _config(config_file, eval__resize_short=resize_short, data__jobs=jobs)
    params = _load_scorer(checkpoint)
    jobs = config["data"]["jobs"]
    loaded = _read_images(images, config["eval"]["resize_short"], jobs)
    grid = (config["data"]["grid_rows"], config["data"]["grid_cols"])
    scores, _ = _score_images(params, loaded, grid, jobs)
    lines = ["path,q"] + ["{},{!r}".format(path, float(q)) for path, q in zip(images, scores)]
    if output is None:
        click.echo("\n".join(lines))
    else:
        with open(output, "w") as stream:
            stream.write("\n".join(lines) + "\n")
        click.echo("Wrote {} scores to {}".format(len(images), output))


def _check_thresholds(report, eval_settings):
    failures = []
    if eval_settings["min_srocc"] is not None and report.srocc is not None:
        if report.srocc < eval_settings["min_srocc"]:
            failures.append("SROCC {:.4f} < {}".format(report.srocc, eval_settings["min_srocc"]))
    if eval_settings["min_plcc"] is not None and report.plcc is not None:
        if report.plcc < eval_settings["min_plcc"]:
            failures.append("PLCC {:.4f} < {}".format(report.plcc, eval_settings["min_plcc"]))
    if eval_settings["max_overlap"] is not None and report.overlap_fraction is not None:
        if report.overlap_fraction > eval_settings["max_overlap"]:
            failures.append(
                "overlap {:.4f} > {}".format(report.overlap_fraction, eval_settings["max_overlap"])
            )
    if failures:
        raise ThresholdError("; ".join(failures))


@cli.command("eval")
@click.argument("checkpoint", type=click.Path(dir_okay=False))
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@out_dir_option
@click.option("--min-srocc", type=float, default=None, help="Fail (status 4) below this SROCC")
@click.option("--min-plcc", type=float, default=None, help="Fail (status 4) below this PLCC")
@jobs_option
@config_option
@report_errors
def eval_manifest(checkpoint, manifest, out_dir, min_srocc, min_plcc, jobs, config_file):
    "Correlates the scores of the samples of a manifest with 1 - severity"
    config = _config(
        config_file, eval__min_srocc=min_srocc, eval__min_plcc=min_plcc, data__jobs=jobs
    )
    params = _load_scorer(checkpoint)
    data = _timed("Reading {}".format(manifest), read_manifest, manifest)
    registry = data.registry()
    jobs = config["data"]["jobs"]

    def sample(record):
        return degraded_sample(data, record, registry)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        samples = _timed(
            "Degrading {} samples".format(len(data.records)),
            lambda: list(pool.map(sample, data.records)),
        )
    grid = (data.settings.grid_rows, data.settings.grid_cols)
    scores, embeddings = _timed("Scoring", _score_images, params, samples, grid, jobs)
    severities = [record.severity for record in data.records]
    report = evaluate(scores, [1.0 - d for d in severities])
    click.echo("n = {}  SROCC = {:.4f}  PLCC = {:.4f}".format(report.n, report.srocc, report.plcc))
    if out_dir is not None:
        rows = [
            ScoreRow(record.record_id, d, float(q))
            for record, d, q in zip(data.records, severities, scores)
        ]
        ids = [record.record_id for record in data.records]
        report, files = export_report(report, rows, list(zip(ids, embeddings)), out_dir)
        click.echo("Wrote {}".format(", ".join(sorted(files.values()))))
    _check_thresholds(report, config["eval"])


@cli.command("separate")
@click.argument("checkpoint", type=click.Path(dir_okay=False))
@click.argument("dir_high", type=click.Path(exists=True, file_okay=False))
@click.argument("dir_low", type=click.Path(exists=True, file_okay=False))
@click.option("--bins", type=int, default=None, help="Histogram bins")
@resize_option
@out_dir_option
@click.option("--max-overlap", type=float, default=None, help="Fail (status 4) above this overlap")
@jobs_option
@config_option
@report_errors
def separate(
    checkpoint, dir_high, dir_low, bins, resize_short, out_dir, max_overlap, jobs, config_file
):
    "Overlap between the score distributions of a high and a low quality set"
    config = _config(
        config_file,
        eval__bins=bins,
        eval__resize_short=resize_short,
        eval__max_overlap=max_overlap,
        data__jobs=jobs,
    )
    params = _load_scorer(checkpoint)
    jobs = config["data"]["jobs"]
    grid = (config["data"]["grid_rows"], config["data"]["grid_cols"])
    scored = {}
    for name, directory in (("high", dir_high), ("low", dir_low)):
        paths = [os.path.join(directory, relpath) for relpath in find_images(directory)]
        images = _read_images(paths, config["eval"]["resize_short"], jobs)
        if not images:
            raise EmptySetError("No image in {}".format(directory))
        scores, embeddings = _timed(
            "Scoring {} images of {}".format(len(paths), directory),
            _score_images,
            params,
            images,
            grid,
            jobs,
        )
        scored[name] = (paths, scores, embeddings)
    high, low = scored["high"][1], scored["low"][1]
    report = separation_report(high, low, config["eval"]["bins"])
    click.echo("overlap = {:.4f} ({} bins)".format(report.overlap_fraction, report.histogram.bins))
    if out_dir is not None:
        rows = []
        embeddings = []
        for name in ("high", "low"):
            paths, scores, vectors = scored[name]
            rows += [ScoreRow(path, float("nan"), float(q)) for path, q in zip(paths, scores)]
            embeddings += list(zip(paths, vectors))
        report, files = export_report(report, rows, embeddings, out_dir, sets=(high, low))
        click.echo("Wrote {}".format(", ".join(sorted(files.values()))))
    _check_thresholds(report, config["eval"])


def _corrupted_gradient(*args):
    loss, grads = full_gradient(*args)
    grads = dict(grads)
    grads["w_dec"] = grads["w_dec"] + 1.0
    return loss, grads


@cli.command("gradcheck")
@click.option("--seed", type=str, default="0", show_default=True, help="First seed")
@click.option("--seeds", type=int, default=1, show_default=True, help="Number of consecutive seeds")
@click.option(
    "--batch-size", type=int, default=4, show_default=True, help="Records of the check batch"
)
@click.option("--epsilon", type=float, default=None, help="Finite difference step")
@click.option("--tolerance", type=float, default=None, help="Maximum relative error")
@click.option(
    "--corrupt",
    is_flag=True,
    default=False,
    help="Perturb the analytic gradient (the check must fail)",
)
@config_option
@report_errors
def gradcheck(seed, seeds, batch_size, epsilon, tolerance, corrupt, config_file):
    "Compares analytic gradients with finite differences"
    config = _config(config_file, eval__epsilon=epsilon, eval__tolerance=tolerance)
    epsilon, tolerance = config["eval"]["epsilon"], config["eval"]["tolerance"]
    first = parse_seed(seed)
    worst = 0.0
    for offset in range(seeds):
        params, batch, settings = random_check_problem(first + offset, batch_size=batch_size)
        error = grad_check(
            params,
            batch,
            epsilon,
            settings=settings,
            gradient_fn=_corrupted_gradient if corrupt else None,
        )
        click.echo("seed {}: max relative error {:.3e}".format(first + offset, error))
        worst = max(worst, error)
    if worst >= tolerance:
        raise ThresholdError("max relative error {:.3e} >= {}".format(worst, tolerance))
    click.secho("max relative error {:.3e} < {}".format(worst, tolerance), fg="green")


@cli.command("features")
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@click.option(
    "--out", "-o", "output", type=click.Path(dir_okay=False), required=True, help="CSV file"
)
@config_option
@report_errors
def features(image, output, config_file):
    "Writes the per-patch features of an image"
    config = _config(config_file)
    grid = _timed(
        "Extracting features of {}".format(image),
        extract_patch_features,
        load_image(image),
        config["data"]["grid_rows"],
        config["data"]["grid_cols"],
    )
    write_features_csv(grid, output)
    click.echo("Wrote {} patches to {}".format(len(grid.patches), output))


@cli.command("registry")
@registry_option
@report_errors
def registry(registry):
    "Lists the distortion kinds by category"
    kinds = load_registry(registry)
    for category in CATEGORIES:
        ids = kinds.ids_in(category) if category in kinds.categories() else ()
        click.echo("{}: {}".format(category, ", ".join(ids) if ids else "-"))


@cli.group("config")
def config_group():
    "Inspects the configuration"


@config_group.command("show")
@config_option
@report_errors
def config_show(config_file):
    "Shows every setting with the provenance of its default"
    for line in config_lines(load_config(config_file)):
        click.echo(line)


if __name__ == "__main__":
    cli()  # pylint: disable=no-value-for-parameter
