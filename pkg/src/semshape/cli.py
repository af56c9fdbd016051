"""Command-line pipeline driver.

Every command is reproducible given --seed, writes its outputs under --out,
and records a machine-readable run.json (arguments, package version, output
files; no wall-clock fields, so identical runs produce identical bytes).

Exit codes: 0 success, 2 usage error, 3 data error.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .dataset import CoefficientTable, DatasetManifest, build_dataset
from .demo import make_demo_descriptors, make_demo_model, make_gain_matrix
from .evaluation import FitOptions, coverage_report, effect_field, fit_target, zero_shot_fit
from .mapper import MapperArtifact, MapperConfig, predict, train
from .morphable import Family, load_model, save_model
from .rendering import CameraView, RenderConfig, SoftwareRasterizer, default_views
from .scoring import (
    Descriptor,
    ScoreTable,
    SyntheticScorerBackend,
    descriptors_from_words,
    load_external_backend,
)
from .selection import (
    Lexicon,
    SelectionResult,
    assign_descriptors_to_clusters,
    cluster_images,
    correlation_matrix,
    select,
)
from .service import ServiceConfig, serve

DATA_ERRORS = (ValueError, KeyError, FileNotFoundError, NotADirectoryError, OSError)


def data_errors(fn):
    """Map data-level failures to exit code 3 (usage errors stay at 2)."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except DATA_ERRORS as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(3)

    return wrapper


def write_run_record(out_dir: Path, command: str, params: dict, outputs: list[str]):
    record = {
        "command": command,
        "package_version": __version__,
        "params": {k: v for k, v in sorted(params.items())},
        "outputs": sorted(outputs),
    }
    (out_dir / "run.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def views_from_count(family: Family, count: int) -> tuple[CameraView, ...]:
    if count < 1:
        raise ValueError("--views must be >= 1")
    defaults = default_views(family)
    if count == len(defaults):
        return defaults
    if count == 1:
        return (CameraView(),)
    return tuple(CameraView(az, 0.0) for az in np.linspace(-60.0, 60.0, count))


def load_descriptor_words(path: Path) -> list[Descriptor]:
    words = [line.strip() for line in path.read_text().splitlines()]
    words = [w for w in words if w and not w.startswith("#")]
    if not words:
        raise ValueError(f"descriptor file {path} is empty")
    return descriptors_from_words(words)


def build_backend(name, spec, manifest=None, descriptors=None, gain_seed=0, bias=0.05):
    if name == "external":
        if not spec:
            raise ValueError("--backend external requires --backend-spec pkg.module:factory")
        return load_external_backend(spec)
    if name == "synthetic":
        if manifest is None or descriptors is None:
            raise ValueError("the synthetic backend needs a dataset manifest")
        gain = make_gain_matrix(len(descriptors), seed=gain_seed)
        return SyntheticScorerBackend(
            gain, np.full(len(descriptors), bias), manifest, descriptors
        )
    raise ValueError(f"unknown backend {name!r}")


@click.group()
@click.version_option(__version__)
def main():
    """Semantic slider control for linear-blendshape morphable models."""


# --------------------------------------------------------------------------


@main.command("make-demo")
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--seed", type=int, default=7, show_default=True)
@data_errors
def make_demo(out: Path, seed: int):
    """Generate a demo model archive, descriptor words, and a lexicon."""
    out.mkdir(parents=True, exist_ok=True)
    model = make_demo_model(seed=seed)
    archive = save_model(model, out / "demo_body")
    words = make_demo_descriptors(12)
    (out / "words.txt").write_text("\n".join(words) + "\n")
    lexicon = Lexicon(antonyms={("tall", "short")}, synonyms={("round", "curvy")})
    lexicon.save(out / "lexicon.json")
    write_run_record(out, "make-demo", {"seed": seed}, ["demo_body", "words.txt", "lexicon.json"])
    click.echo(f"demo model written to {archive}")


@main.command("build-dataset")
@click.option("--model", "model_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--n", "n_samples", type=int, required=True)
@click.option("--views", type=int, default=3, show_default=True)
@click.option("--size", type=int, default=512, show_default=True, help="Image size in pixels.")
@click.option("--material", type=click.Choice(["flat_gray", "textured"]), default="flat_gray")
@click.option(
    "--distribution",
    type=click.Choice(["uniform", "truncated_normal"]),
    default="uniform",
    show_default=True,
)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@data_errors
def cli_build_dataset(model_path, n_samples, views, size, material, distribution, seed, workers, out):
    """Sample coefficients, render every view, and write the dataset."""
    model = load_model(model_path)
    cfg = RenderConfig(
        views=views_from_count(model.family, views), image_size=size, material=material
    )
    manifest = build_dataset(
        model,
        n_samples,
        cfg,
        SoftwareRasterizer(),
        out,
        seed=seed,
        distribution=distribution,
        workers=workers,
    )
    write_run_record(
        out,
        "build-dataset",
        {
            "model": str(model_path),
            "n": n_samples,
            "views": views,
            "size": size,
            "material": material,
            "distribution": distribution,
            "seed": seed,
        },
        ["dataset.json", "coeffs.csv", "images"],
    )
    click.echo(
        f"wrote {manifest.n_samples} records ({len(manifest.skipped)} skipped) to {out}"
    )


@main.command("score")
@click.option("--dataset", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--descriptors", "words_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--backend", type=click.Choice(["synthetic", "external"]), default="synthetic")
@click.option("--backend-spec", default="", help="pkg.module:factory for --backend external.")
@click.option("--gain-seed", type=int, default=0, show_default=True)
@click.option("--view-agg", type=click.Choice(["mean", "max"]), default="mean")
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@data_errors
def cli_score(dataset, words_path, backend, backend_spec, gain_seed, view_agg, workers, out):
    """Score every dataset image against every descriptor word."""
    from .scoring import score_dataset

    manifest = DatasetManifest.load(dataset)
    descriptors = load_descriptor_words(words_path)
    scorer = build_backend(backend, backend_spec, manifest, descriptors, gain_seed)
    table = score_dataset(manifest, descriptors, scorer, view_agg=view_agg, workers=workers)

    out.mkdir(parents=True, exist_ok=True)
    table.save(out)
    (out / "descriptors.json").write_text(
        json.dumps([{"id": d.id, "text": d.text} for d in descriptors], indent=2) + "\n"
    )
    image_embs, text_embs = _collect_embeddings(manifest, table, descriptors, scorer)
    outputs = ["scores.csv", "score_stats.json", "descriptors.json"]
    if image_embs is not None:
        np.save(out / "image_embeddings.npy", image_embs)
        np.save(out / "text_embeddings.npy", text_embs)
        outputs += ["image_embeddings.npy", "text_embeddings.npy"]
    write_run_record(
        out,
        "score",
        {
            "dataset": str(dataset),
            "descriptors": str(words_path),
            "backend": backend,
            "gain_seed": gain_seed,
            "view_agg": view_agg,
        },
        outputs,
    )
    click.echo(f"scored {table.n_samples} samples x {len(descriptors)} descriptors")


def _collect_embeddings(manifest, table, descriptors, scorer):
    """One embedding per scored sample (mean of per-view embeddings,
    renormalized) plus the descriptor text embeddings; None when the backend
    has no embedding surface."""
    if not hasattr(scorer, "embed_image") or not hasattr(scorer, "embed_text"):
        return None, None
    scored = set(table.sample_ids)
    rows = []
    for record in manifest.records:
        if record.sample_id not in scored:
            continue
        per_view = np.stack(
            [
                np.asarray(scorer.embed_image(manifest.image_path(record, v)))
                for v in range(len(record.image_paths))
            ]
        )
        mean = per_view.mean(axis=0)
        rows.append(mean / np.linalg.norm(mean))
    text = np.stack([np.asarray(scorer.embed_text(d.text)) for d in descriptors])
    return (np.stack(rows) if rows else None), text


@main.command("select")
@click.option("--scores", "scores_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--lexicon", "lexicon_path", type=click.Path(exists=True, path_type=Path))
@click.option("--preset", default="", help="Comma-separated descriptor ids to force-keep.")
@click.option("--d", "target_d", type=int, default=None, help="Exact descriptor count.")
@click.option("--k-min", type=int, default=2, show_default=True)
@click.option("--k-max", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--plot/--no-plot", default=True, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@data_errors
def cli_select(scores_path, lexicon_path, preset, target_d, k_min, k_max, seed, plot, out):
    """Choose a decorrelated descriptor subset from a score table."""
    table = ScoreTable.load(scores_path)
    lexicon = Lexicon.load(lexicon_path) if lexicon_path else Lexicon()
    preset_ids = [p.strip() for p in preset.split(",") if p.strip()]

    scores_dir = scores_path if scores_path.is_dir() else scores_path.parent
    assignment = None
    desc_clusters = None
    image_emb_path = scores_dir / "image_embeddings.npy"
    if image_emb_path.exists():
        image_embs = np.load(image_emb_path)
        text_embs = np.load(scores_dir / "text_embeddings.npy")
        assignment = cluster_images(image_embs, k_range=(k_min, k_max), seed=seed)
        desc_clusters = assign_descriptors_to_clusters(image_embs, text_embs, assignment)

    result = select(
        table,
        assignment=assignment,
        desc_clusters=desc_clusters,
        lexicon=lexicon,
        preset=preset_ids or None,
        target_d=target_d,
    )
    out.mkdir(parents=True, exist_ok=True)
    result.save(out / "selection.json")
    outputs = ["selection.json"]
    if plot:
        from .plots import plot_correlation_heatmap

        active = [d for d in table.descriptor_ids if table.column(d).var() > 0]
        matrix = correlation_matrix(table.restrict(active))
        plot_correlation_heatmap(matrix, active, out / "correlation.png")
        outputs.append("correlation.png")
    write_run_record(
        out,
        "select",
        {
            "scores": str(scores_path),
            "lexicon": str(lexicon_path) if lexicon_path else None,
            "preset": preset_ids,
            "target_d": target_d,
            "k_min": k_min,
            "k_max": k_max,
            "seed": seed,
        },
        outputs,
    )
    click.echo(f"chose {result.d} descriptors: {', '.join(result.chosen_ids)}")


@main.command("train")
@click.option("--scores", "scores_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--coeffs", "coeffs_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--selection", "selection_path", type=click.Path(exists=True, path_type=Path))
@click.option("--model-id", default="", help="Model the mapper belongs to.")
@click.option("--hidden", default="500,800", show_default=True)
@click.option("--epochs", type=int, default=50, show_default=True)
@click.option("--batch-size", type=int, default=32, show_default=True)
@click.option("--learning-rate", type=float, default=1e-3, show_default=True)
@click.option("--val-fraction", type=float, default=0.1, show_default=True)
@click.option("--loss", type=click.Choice(["l2", "l2_squared"]), default="l2")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--plot/--no-plot", default=True, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@data_errors
def cli_train(
    scores_path,
    coeffs_path,
    selection_path,
    model_id,
    hidden,
    epochs,
    batch_size,
    learning_rate,
    val_fraction,
    loss,
    seed,
    plot,
    out,
):
    """Train the score-to-coefficient mapper."""
    table = ScoreTable.load(scores_path)
    if selection_path:
        chosen = SelectionResult.load(selection_path).chosen_ids
        table = table.restrict(chosen)
    coeffs = CoefficientTable.load(coeffs_path)
    descriptors = _descriptors_for(scores_path, table.descriptor_ids)
    cfg = MapperConfig(
        hidden=tuple(int(h) for h in hidden.split(",") if h),
        epochs=epochs,
        batch_size=batch_size,
        learning_rate=learning_rate,
        val_fraction=val_fraction,
        seed=seed,
        loss=loss,
    )
    artifact = train(table, coeffs, cfg, descriptors=descriptors, model_id=model_id)
    out.mkdir(parents=True, exist_ok=True)
    artifact.save(out)
    outputs = ["mapper.json", "weights.bin"]
    if plot:
        from .plots import plot_training_curves

        plot_training_curves(artifact.training_log, out / "training.png")
        outputs.append("training.png")
    write_run_record(
        out,
        "train",
        {
            "scores": str(scores_path),
            "coeffs": str(coeffs_path),
            "selection": str(selection_path) if selection_path else None,
            "model_id": model_id,
            "hidden": hidden,
            "epochs": epochs,
            "batch_size": batch_size,
            "learning_rate": learning_rate,
            "val_fraction": val_fraction,
            "loss": loss,
            "seed": seed,
        },
        outputs,
    )
    log = artifact.training_log
    click.echo(
        f"trained mapper ({len(table.descriptor_ids)} -> 10): "
        f"final train loss {log['train_loss'][-1]:.5f}, val loss {log['val_loss'][-1]:.5f}"
    )


def _descriptors_for(scores_path: Path, ids: list[str]):
    """Recover descriptor texts saved next to the score table, if present."""
    scores_dir = scores_path if scores_path.is_dir() else scores_path.parent
    meta = scores_dir / "descriptors.json"
    if meta.exists():
        by_id = {d["id"]: d["text"] for d in json.loads(meta.read_text())}
        return [Descriptor(text=by_id.get(did, did.replace("_", " ")), id=did) for did in ids]
    return [Descriptor(text=did.replace("_", " "), id=did) for did in ids]


@main.command("coverage")
@click.option("--mapper", "mapper_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--model", "model_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--tau", type=float, default=0.3, show_default=True)
@click.option("--plots/--no-plots", default=False, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@data_errors
def cli_coverage(mapper_path, model_path, tau, plots, out):
    """Coverage/overlap report plus per-descriptor effect fields."""
    artifact = MapperArtifact.load(mapper_path)
    model = load_model(model_path)
    report = coverage_report(artifact, model, tau=tau)
    out.mkdir(parents=True, exist_ok=True)
    (out / "coverage.json").write_text(json.dumps(report.to_json(), indent=2) + "\n")
    outputs = ["coverage.json"]
    for did in artifact.descriptor_ids:
        field = effect_field(artifact, model, did)
        field.save_csv(out / f"effect_{did}.csv")
        outputs.append(f"effect_{did}.csv")
        if plots:
            from .plots import render_effect_heatmap

            render_effect_heatmap(model, field, out / f"effect_{did}.png")
            outputs.append(f"effect_{did}.png")
    write_run_record(
        out,
        "coverage",
        {"mapper": str(mapper_path), "model": str(model_path), "tau": tau, "plots": plots},
        outputs,
    )
    click.echo(
        f"coverage {report.coverage_pct:.1f}% / overlap {report.overlap_pct:.1f}% at tau={tau}"
    )


@main.command("fit-target")
@click.option("--mapper", "mapper_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--target", "target_path", type=click.Path(exists=True, path_type=Path))
@click.option("--random", "n_random", type=int, default=0, help="Number of random targets.")
@click.option("--reachable/--unconstrained", default=True, show_default=True,
              help="Random targets from the mapper's own range vs the model's coefficient box.")
@click.option("--model", "model_path", type=click.Path(exists=True, path_type=Path))
@click.option("--lr", type=float, default=1e-3, show_default=True)
@click.option("--max-steps", type=int, default=5000, show_default=True)
@click.option("--tol", type=float, default=1e-6, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@data_errors
def cli_fit_target(
    mapper_path, target_path, n_random, reachable, model_path, lr, max_steps, tol, seed, out
):
    """Optimize descriptor scores to match target coefficient vectors."""
    artifact = MapperArtifact.load(mapper_path)
    model = load_model(model_path) if model_path else None
    targets = []
    if target_path:
        data = json.loads(Path(target_path).read_text())
        vectors = data if isinstance(data[0], list) else [data]
        targets = [np.asarray(v, dtype=np.float64) for v in vectors]
    if n_random:
        rng = np.random.default_rng(seed)
        lo = np.array([artifact.score_stats[d]["min"] for d in artifact.descriptor_ids])
        hi = np.array([artifact.score_stats[d]["max"] for d in artifact.descriptor_ids])
        for _ in range(n_random):
            if reachable:
                targets.append(predict(artifact, rng.uniform(lo, hi)))
            else:
                if model is None:
                    raise ValueError("--unconstrained random targets require --model")
                bound = model.clamp_k * model.sigma
                targets.append(rng.uniform(-bound, bound))
    if not targets:
        raise ValueError("provide --target or --random N")

    options = FitOptions(lr=lr, max_steps=max_steps, tol=tol)
    results = []
    for target in targets:
        fit = fit_target(artifact, target, options, model=model)
        results.append(
            {
                "target": target.tolist(),
                "scores": fit.scores.tolist(),
                "error": fit.error,
                "steps": fit.steps,
                "converged": fit.converged,
                "vertex_mse": fit.vertex_mse,
                "trajectory": fit.trajectory,
            }
        )
    out.mkdir(parents=True, exist_ok=True)
    (out / "fit.json").write_text(json.dumps({"results": results}, indent=2) + "\n")
    write_run_record(
        out,
        "fit-target",
        {
            "mapper": str(mapper_path),
            "target": str(target_path) if target_path else None,
            "random": n_random,
            "reachable": reachable,
            "lr": lr,
            "max_steps": max_steps,
            "tol": tol,
            "seed": seed,
        },
        ["fit.json"],
    )
    errors = [r["error"] for r in results]
    steps = [r["steps"] for r in results]
    click.echo(
        f"fit {len(results)} targets: mean error {np.mean(errors):.5f}, "
        f"mean steps {np.mean(steps):.0f}"
    )


@main.command("fit-image")
@click.option("--mapper", "mapper_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--image", "image_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--backend", type=click.Choice(["synthetic", "external"]), default="external")
@click.option("--backend-spec", default="")
@click.option("--dataset", type=click.Path(exists=True, path_type=Path),
              help="Dataset directory (required for the synthetic backend).")
@click.option("--gain-seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@data_errors
def cli_fit_image(mapper_path, image_path, backend, backend_spec, dataset, gain_seed, out):
    """Zero-shot: score one image and map it to coefficients."""
    artifact = MapperArtifact.load(mapper_path)
    manifest = DatasetManifest.load(dataset) if dataset else None
    scorer = build_backend(backend, backend_spec, manifest, artifact.descriptors, gain_seed)
    coeffs = zero_shot_fit(image_path, scorer, artifact)
    from .scoring import scores_for_image

    scores = scores_for_image(scorer, image_path, artifact.descriptors)
    out.mkdir(parents=True, exist_ok=True)
    (out / "fit_image.json").write_text(
        json.dumps(
            {
                "image": Path(image_path).name,
                "xi": coeffs.tolist(),
                "scores": scores.tolist(),
                "descriptors": artifact.descriptor_ids,
            },
            indent=2,
        )
        + "\n"
    )
    write_run_record(
        out,
        "fit-image",
        {
            "mapper": str(mapper_path),
            "image": str(image_path),
            "backend": backend,
            "gain_seed": gain_seed,
        },
        ["fit_image.json"],
    )
    click.echo(f"xi = {np.round(coeffs, 4).tolist()}")


@main.command("serve")
@click.option("--artifacts", type=click.Path(path_type=Path), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path))
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
@click.option("--scorer-backend", type=click.Choice(["none", "external"]), default=None)
@click.option("--backend-spec", default=None)
@click.option("--ui-dir", type=click.Path(path_type=Path), default=None)
@data_errors
def cli_serve(artifacts, config_path, host, port, scorer_backend, backend_spec, ui_dir):
    """Run the HTTP service (config file < environment < flags)."""
    cfg = ServiceConfig.from_file(config_path) if config_path else ServiceConfig()
    cfg.apply_env()
    if artifacts is not None:
        cfg.artifact_dir = str(artifacts)
    if host is not None:
        cfg.host = host
    if port is not None:
        cfg.port = port
    if scorer_backend is not None:
        cfg.scorer_backend = scorer_backend
    if backend_spec is not None:
        cfg.external_backend = backend_spec
    if ui_dir is not None:
        cfg.ui_dir = str(ui_dir)
    serve(cfg)


if __name__ == "__main__":
    main()
