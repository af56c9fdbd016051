"""Descriptor/image similarity scoring against an embedding backend.

Backends embed images and descriptor words into one shared latent space;
the score of a pair is the cosine of their embeddings. Two backends ship
with the package: an adapter slot for an external vision-language model and
a deterministic synthetic backend used throughout the tests, which produces
scores that are an exact affine function of the generating coefficients.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import DatasetManifest
from .morphable import NUM_COMPONENTS
from .validation import as_float_array, check_unit_norm

__all__ = [
    "Descriptor",
    "descriptors_from_words",
    "ScoreTable",
    "score",
    "score_dataset",
    "scores_for_image",
    "SyntheticScorerBackend",
    "load_external_backend",
]

log = logging.getLogger(__name__)

SCORES_NAME = "scores.csv"
STATS_NAME = "score_stats.json"
IMAGE_EMB_NAME = "image_embeddings.npy"
TEXT_EMB_NAME = "text_embeddings.npy"


@dataclass(frozen=True)
class Descriptor:
    """A word descriptor; `id` is the lowercase slug used in files and APIs."""

    text: str
    id: str = ""

    def __post_init__(self):
        text = self.text.strip().lower()
        if not text:
            raise ValueError("descriptor text must be non-empty")
        object.__setattr__(self, "text", text)
        object.__setattr__(self, "id", self.id or slugify(text))


def slugify(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", text.strip().lower()).strip("_")


def descriptors_from_words(words) -> list[Descriptor]:
    """Build descriptors from raw words, rejecting duplicates after slugging."""
    descriptors = [Descriptor(w) for w in words]
    seen = {}
    for d in descriptors:
        if d.id in seen:
            raise ValueError(f"duplicate descriptor id {d.id!r} from {d.text!r}")
        seen[d.id] = d
    return descriptors


# --------------------------------------------------------------------------
# Score table


@dataclass
class ScoreTable:
    """Per-sample descriptor score vectors, in manifest record order.

    Stats are derived from the rows on demand so they can never drift from
    the data; the persisted `score_stats.json` is a convenience snapshot.
    """

    sample_ids: list[str]
    descriptor_ids: list[str]
    values: np.ndarray  # (n_samples, n_descriptors)
    view_agg: str = "mean"
    dropped: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self.values = as_float_array(self.values, name="scores", ndim=2)
        if self.values.shape != (len(self.sample_ids), len(self.descriptor_ids)):
            raise ValueError(
                f"scores: expected shape {(len(self.sample_ids), len(self.descriptor_ids))}, "
                f"got {self.values.shape}"
            )

    @property
    def n_samples(self) -> int:
        return len(self.sample_ids)

    def column(self, descriptor_id: str) -> np.ndarray:
        return self.values[:, self.descriptor_ids.index(descriptor_id)]

    def stats(self) -> dict[str, dict[str, float]]:
        """Per-descriptor {min, max, mean, variance} over the rows."""
        out = {}
        for j, did in enumerate(self.descriptor_ids):
            col = self.values[:, j]
            out[did] = {
                "min": float(col.min()) if col.size else float("nan"),
                "max": float(col.max()) if col.size else float("nan"),
                "mean": float(col.mean()) if col.size else float("nan"),
                "variance": float(col.var()) if col.size else float("nan"),
            }
        return out

    def restrict(self, descriptor_ids) -> "ScoreTable":
        """A new table keeping only `descriptor_ids`, in the given order."""
        idx = [self.descriptor_ids.index(d) for d in descriptor_ids]
        return ScoreTable(
            sample_ids=list(self.sample_ids),
            descriptor_ids=list(descriptor_ids),
            values=self.values[:, idx].copy(),
            view_agg=self.view_agg,
            dropped=list(self.dropped),
        )

    def save(self, out_dir) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / SCORES_NAME
        with csv_path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample_id"] + self.descriptor_ids)
            for sid, row in zip(self.sample_ids, self.values):
                writer.writerow([sid] + [repr(float(v)) for v in row])
        stats_payload = {
            "view_agg": self.view_agg,
            "dropped": self.dropped,
            "stats": self.stats(),
        }
        (out_dir / STATS_NAME).write_text(json.dumps(stats_payload, indent=2) + "\n")
        return csv_path

    @classmethod
    def load(cls, path) -> "ScoreTable":
        path = Path(path)
        if path.is_dir():
            path = path / SCORES_NAME
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:1] != ["sample_id"]:
                raise ValueError(f"{path}: not a score table")
            ids, rows = [], []
            for row in reader:
                ids.append(row[0])
                rows.append([float(v) for v in row[1:]])
        values = np.array(rows) if rows else np.empty((0, len(header) - 1))
        meta = {}
        stats_path = path.parent / STATS_NAME
        if stats_path.exists():
            meta = json.loads(stats_path.read_text())
        return cls(
            sample_ids=ids,
            descriptor_ids=header[1:],
            values=values,
            view_agg=meta.get("view_agg", "mean"),
            dropped=meta.get("dropped", []),
        )


# --------------------------------------------------------------------------
# Scoring


def score(image_emb, text_emb) -> float:
    """Cosine similarity of two unit embeddings (their dot product)."""
    a = check_unit_norm(image_emb, name="image embedding")
    b = check_unit_norm(text_emb, name="text embedding")
    if a.shape != b.shape:
        raise ValueError("embeddings must share a dimension")
    return float(np.clip(a @ b, -1.0, 1.0))


def scores_for_image(backend, image_path, descriptors) -> np.ndarray:
    """Score one image against every descriptor.

    Backends that implement `score_image(image_path, descriptors)` are used
    directly (this is also the natural batched entry point for real
    vision-language models); otherwise the image and each descriptor are
    embedded and combined by cosine.
    """
    hook = getattr(backend, "score_image", None)
    if hook is not None:
        values = as_float_array(hook(image_path, descriptors), name="scores", ndim=1)
        if values.shape[0] != len(descriptors):
            raise ValueError("backend returned wrong number of scores")
        return values
    image_emb = backend.embed_image(image_path)
    return np.array([score(image_emb, backend.embed_text(d.text)) for d in descriptors])


def score_dataset(
    manifest: DatasetManifest,
    descriptors,
    backend,
    view_agg: str = "mean",
    workers: int = 1,
) -> ScoreTable:
    """Score every manifest record against every descriptor.

    Per-view score vectors are combined by `view_agg` ("mean" or "max").
    Samples whose image files are missing are dropped with a warning and
    recorded in the table metadata; row order follows the manifest.
    `workers` > 1 scores samples in a thread pool, honored only when the
    backend declares `parallel_safe`; the table is identical either way.
    """
    if view_agg not in ("mean", "max"):
        raise ValueError(f"view_agg must be 'mean' or 'max', got {view_agg!r}")
    descriptors = list(descriptors)
    if not descriptors:
        raise ValueError("at least one descriptor required")

    def score_record(record):
        paths = [manifest.image_path(record, v) for v in range(len(record.image_paths))]
        missing = [p for p in paths if not p.exists()]
        if missing:
            log.warning("dropping %s: missing %s", record.sample_id, missing[0])
            return {"sample_id": record.sample_id, "reason": f"missing image {missing[0].name}"}
        per_view = np.stack([scores_for_image(backend, p, descriptors) for p in paths])
        return per_view.mean(axis=0) if view_agg == "mean" else per_view.max(axis=0)

    if workers > 1 and getattr(backend, "parallel_safe", False):
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(score_record, manifest.records))
    else:
        results = [score_record(record) for record in manifest.records]

    sample_ids, rows, dropped = [], [], []
    for record, outcome in zip(manifest.records, results):
        if isinstance(outcome, dict):
            dropped.append(outcome)
        else:
            sample_ids.append(record.sample_id)
            rows.append(outcome)

    values = np.stack(rows) if rows else np.empty((0, len(descriptors)))
    return ScoreTable(
        sample_ids=sample_ids,
        descriptor_ids=[d.id for d in descriptors],
        values=values,
        view_agg=view_agg,
        dropped=dropped,
    )


# --------------------------------------------------------------------------
# Backends


class SyntheticScorerBackend:
    """Deterministic test backend: scores are an exact affine map of the
    generating coefficients, clip(gain @ xi + bias, [-1, 1]).

    Images are identified by content digest against the manifest, so copies
    and re-uploads of a rendered sample resolve to the same coefficients.
    `embed_image` returns the unit-normalized [xi, 1] vector (a geometry-aware
    embedding that gives clustering real structure to find) and `embed_text`
    the unit-normalized [gain_row, bias] vector. Their cosine is only an
    approximation of the affine score, so the exact values are served through
    the `score_image` hook that `scores_for_image` prefers.
    """

    parallel_safe = True

    def __init__(self, gain, bias, manifest: DatasetManifest, descriptors):
        self.descriptors = list(descriptors)
        self.gain = as_float_array(gain, name="gain", shape=(len(self.descriptors), NUM_COMPONENTS))
        self.bias = as_float_array(bias, name="bias", shape=(len(self.descriptors),))
        self._by_id = {d.id: i for i, d in enumerate(self.descriptors)}
        self._digest_to_xi = {}
        self._id_to_xi = {}
        for record in manifest.records:
            self._id_to_xi[record.sample_id] = record.xi
            for v in range(len(record.image_paths)):
                path = manifest.image_path(record, v)
                if path.exists():
                    digest = hashlib.sha256(path.read_bytes()).hexdigest()
                    self._digest_to_xi.setdefault(digest, record.xi)

    def _lookup(self, image_path) -> np.ndarray:
        digest = hashlib.sha256(Path(image_path).read_bytes()).hexdigest()
        try:
            return self._digest_to_xi[digest]
        except KeyError:
            raise KeyError(f"image {image_path} does not match any manifest sample")

    def scores_for_coeffs(self, xi) -> np.ndarray:
        xi = as_float_array(xi, name="coeffs", shape=(NUM_COMPONENTS,))
        return np.clip(self.gain @ xi + self.bias, -1.0, 1.0)

    def score_image(self, image_path, descriptors) -> np.ndarray:
        xi = self._lookup(image_path)
        all_scores = self.scores_for_coeffs(xi)
        return np.array([all_scores[self._by_id[d.id]] for d in descriptors])

    def embed_image(self, image_path) -> np.ndarray:
        xi = self._lookup(image_path)
        vec = np.concatenate([xi, [1.0]])
        return vec / np.linalg.norm(vec)

    def embed_text(self, text: str) -> np.ndarray:
        idx = self._by_id[slugify(text)]
        vec = np.concatenate([self.gain[idx], [self.bias[idx]]])
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            vec = np.zeros(NUM_COMPONENTS + 1)
            vec[idx % (NUM_COMPONENTS + 1)] = 1.0
            return vec
        return vec / norm


def load_external_backend(spec: str):
    """Resolve "package.module:factory" into a scorer backend instance.

    The factory must return an object with `embed_image`/`embed_text` (and
    optionally `score_image`). This is the adapter slot for real
    vision-language models, which are deliberately not a dependency.
    """
    module_name, _, attr = spec.partition(":")
    if not module_name or not attr:
        raise ValueError(f"backend spec must look like 'pkg.module:factory', got {spec!r}")
    import importlib

    module = importlib.import_module(module_name)
    factory = getattr(module, attr)
    return factory()
