"""Paired training-corpus generation: coefficients, rendered views, manifests.

A dataset directory contains `dataset.json` (the manifest), `coeffs.csv`
(sample_id, xi_0..xi_9) and one PNG per sample and view. Image paths in the
manifest are relative to the dataset directory so builds byte-reproduce
regardless of where they land.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .morphable import NUM_COMPONENTS, MorphableModel, sample_coefficients, synthesize
from .rendering import DegenerateMeshError, RenderConfig
from .validation import as_float_array

__all__ = [
    "DatasetRecord",
    "DatasetManifest",
    "CoefficientTable",
    "build_dataset",
    "render_views",
]

log = logging.getLogger(__name__)

MANIFEST_NAME = "dataset.json"
COEFFS_NAME = "coeffs.csv"


@dataclass(frozen=True)
class DatasetRecord:
    sample_id: str
    xi: np.ndarray  # (10,)
    image_paths: tuple[str, ...]  # relative to the dataset directory


@dataclass
class DatasetManifest:
    model_id: str
    rng_seed: int
    render_config: RenderConfig
    records: list[DatasetRecord] = field(default_factory=list)
    skipped: list[dict] = field(default_factory=list)
    distribution: str = "uniform"
    root: Path | None = None  # directory the relative image paths resolve against

    @property
    def n_samples(self) -> int:
        return len(self.records)

    def image_path(self, record: DatasetRecord, view: int) -> Path:
        if self.root is None:
            raise ValueError("manifest has no root directory; load it from disk")
        return self.root / record.image_paths[view]

    def coefficient_table(self) -> "CoefficientTable":
        values = (
            np.stack([r.xi for r in self.records])
            if self.records
            else np.empty((0, NUM_COMPONENTS))
        )
        return CoefficientTable([r.sample_id for r in self.records], values)

    def to_json(self) -> dict:
        return {
            "format_version": 1,
            "model_id": self.model_id,
            "n_samples": self.n_samples,
            "rng_seed": self.rng_seed,
            "distribution": self.distribution,
            "render_config": self.render_config.to_json(),
            "records": [
                {
                    "sample_id": r.sample_id,
                    "xi": [float(v) for v in r.xi],
                    "image_paths": list(r.image_paths),
                }
                for r in self.records
            ],
            "skipped": self.skipped,
        }

    def save(self, out_dir) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest_path = out_dir / MANIFEST_NAME
        manifest_path.write_text(json.dumps(self.to_json(), indent=2) + "\n")
        self.coefficient_table().save(out_dir / COEFFS_NAME)
        self.root = out_dir
        return manifest_path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        data = json.loads(path.read_text())
        records = [
            DatasetRecord(
                sample_id=r["sample_id"],
                xi=as_float_array(r["xi"], name="xi", shape=(NUM_COMPONENTS,)),
                image_paths=tuple(r["image_paths"]),
            )
            for r in data["records"]
        ]
        manifest = cls(
            model_id=data["model_id"],
            rng_seed=int(data["rng_seed"]),
            render_config=RenderConfig.from_json(data["render_config"]),
            records=records,
            skipped=list(data.get("skipped", [])),
            distribution=data.get("distribution", "uniform"),
            root=path.parent,
        )
        if data["n_samples"] != manifest.n_samples:
            raise ValueError(
                f"{path}: manifest claims {data['n_samples']} samples, "
                f"holds {manifest.n_samples} records"
            )
        return manifest


@dataclass
class CoefficientTable:
    """Per-sample coefficient vectors, aligned with manifest record order."""

    sample_ids: list[str]
    values: np.ndarray  # (n, 10)

    def __post_init__(self):
        self.values = as_float_array(self.values, name="coeffs", ndim=2)
        if self.values.shape[0] != len(self.sample_ids):
            raise ValueError("one coefficient row per sample_id required")
        if self.values.size and self.values.shape[1] != NUM_COMPONENTS:
            raise ValueError(f"coefficient rows must have {NUM_COMPONENTS} entries")

    def save(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample_id"] + [f"xi_{i}" for i in range(NUM_COMPONENTS)])
            for sid, row in zip(self.sample_ids, self.values):
                writer.writerow([sid] + [repr(float(v)) for v in row])
        return path

    @classmethod
    def load(cls, path) -> "CoefficientTable":
        path = Path(path)
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:1] != ["sample_id"] or len(header) != NUM_COMPONENTS + 1:
                raise ValueError(f"{path}: not a coefficient table")
            ids, rows = [], []
            for row in reader:
                ids.append(row[0])
                rows.append([float(v) for v in row[1:]])
        values = np.array(rows) if rows else np.empty((0, NUM_COMPONENTS))
        return cls(ids, values)


def render_views(mesh, cfg: RenderConfig, renderer, sample_index: int = 0):
    """Render one image per configured view. Deterministic for fixed inputs."""
    base = cfg.base_color(sample_index)
    return [
        renderer.render(
            mesh,
            view,
            cfg.image_size,
            base_color=base,
            background=cfg.background,
        )
        for view in cfg.views
    ]


def build_dataset(
    model: MorphableModel,
    n_samples: int,
    cfg: RenderConfig,
    renderer,
    out_dir,
    seed: int = 0,
    distribution: str = "uniform",
    workers: int = 1,
) -> DatasetManifest:
    """Sample `n_samples` coefficient vectors, render every view, write the
    manifest. Record order and coefficient values depend only on the seed;
    a render failure skips that record and is noted in the manifest.

    `workers` > 1 renders records in a thread pool (only honored when the
    renderer declares `parallel_safe`); results keep the sequential order,
    so the manifest is identical either way.
    """
    if n_samples < 0:
        raise ValueError("n_samples must be >= 0")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images_dir = out_dir / "images"
    images_dir.mkdir(exist_ok=True)

    # Draw all coefficients up front so skipped renders cannot shift the
    # random stream of later records.
    rng = np.random.default_rng(seed)
    coeffs = [sample_coefficients(model, rng, distribution) for _ in range(n_samples)]

    def produce(index):
        xi = coeffs[index]
        sample_id = f"s{index:06d}"
        mesh = synthesize(model, xi)
        try:
            images = render_views(mesh, cfg, renderer, sample_index=index)
        except DegenerateMeshError as exc:
            log.warning("skipping %s: %s", sample_id, exc)
            return {"sample_id": sample_id, "reason": str(exc)}
        rel_paths = []
        for view_index, image in enumerate(images):
            rel = f"images/{sample_id}_v{view_index}.png"
            Image.fromarray(image).save(out_dir / rel)
            rel_paths.append(rel)
        return DatasetRecord(sample_id=sample_id, xi=xi, image_paths=tuple(rel_paths))

    if workers > 1 and getattr(renderer, "parallel_safe", False):
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(produce, range(n_samples)))
    else:
        results = [produce(i) for i in range(n_samples)]

    manifest = DatasetManifest(
        model_id=model.model_id,
        rng_seed=seed,
        render_config=cfg,
        distribution=distribution,
        root=out_dir,
    )
    for item in results:
        if isinstance(item, DatasetRecord):
            manifest.records.append(item)
        else:
            manifest.skipped.append(item)

    manifest.save(out_dir)
    return manifest
