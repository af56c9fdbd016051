"""Linear-blendshape parametric models restricted to 10 principal components.

A model is a template mesh plus a 3N x 10 deformation basis; a shape is
synthesized by adding a coefficient-weighted sum of basis columns to the
template. Articulation and translation are held at their neutral constants,
so synthesis is a pure linear operation.

Archive layout (directory or .zip):
    manifest.json   {model_id, family, N, F, basis_columns, dtype, endianness}
    template.bin    N x 3 row-major floats
    faces.bin       F x 3 uint32
    basis.bin       3N x basis_columns row-major floats
    sigma.bin       basis_columns floats
All binary payloads are little-endian; dtype is "f32" or "f64".
"""

from __future__ import annotations

import json
import zipfile
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .validation import as_float_array, ensure_rng

__all__ = [
    "NUM_COMPONENTS",
    "Family",
    "Mesh",
    "MorphableModel",
    "ArchiveError",
    "load_model",
    "save_model",
    "synthesize",
    "sample_coefficients",
]

NUM_COMPONENTS = 10

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


class ArchiveError(ValueError):
    """Raised when a model archive is malformed or inconsistent."""


class Family(str, Enum):
    """Model family; determines the coefficient sampling clamp."""

    BODY = "body"
    FACE_SHAPE = "face_shape"
    FACE_EXPRESSION = "face_expression"
    ANIMAL = "animal"

    @property
    def clamp_k(self) -> float:
        return _CLAMP_K[self]


# Expressions tolerate a wider coefficient range than shapes before the
# mesh degrades; face_shape gets the conservative body value.
_CLAMP_K = {
    Family.BODY: 2.0,
    Family.ANIMAL: 2.0,
    Family.FACE_EXPRESSION: 4.0,
    Family.FACE_SHAPE: 2.0,
}


@dataclass(frozen=True)
class Mesh:
    """A synthesized mesh; `faces` is shared with the source model."""

    vertices: np.ndarray  # (N, 3) float64
    faces: np.ndarray  # (F, 3) uint32


@dataclass(frozen=True)
class MorphableModel:
    """An immutable linear-blendshape model. Safe to share across threads."""

    model_id: str
    family: Family
    template_vertices: np.ndarray  # (N, 3)
    faces: np.ndarray  # (F, 3) uint32
    basis: np.ndarray  # (3N, NUM_COMPONENTS), column n is a deformation direction
    sigma: np.ndarray  # (NUM_COMPONENTS,) per-component standard deviation
    # Articulation/translation constants; every synthesized mesh gets the same
    # neutral values, which reduce to an identity transform here.
    neutral_translation: np.ndarray = field(
        default_factory=lambda: np.zeros(3, dtype=np.float64)
    )

    def __post_init__(self):
        template = as_float_array(
            self.template_vertices, name="template_vertices", shape=(None, 3)
        )
        basis = as_float_array(self.basis, name="basis", ndim=2)
        sigma = as_float_array(self.sigma, name="sigma", ndim=1)
        faces = np.asarray(self.faces)
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise ValueError(f"faces: expected (F, 3), got {faces.shape}")
        faces = faces.astype(np.uint32, copy=False)
        n = template.shape[0]
        if basis.shape != (3 * n, NUM_COMPONENTS):
            raise ValueError(
                f"basis: expected shape ({3 * n}, {NUM_COMPONENTS}), got {basis.shape}"
            )
        if sigma.shape != (NUM_COMPONENTS,):
            raise ValueError(f"sigma: expected {NUM_COMPONENTS} entries, got {sigma.shape}")
        if np.any(sigma <= 0):
            raise ValueError("sigma: entries must be > 0")
        if faces.size and faces.max() >= n:
            raise ValueError("faces: vertex index out of range")
        family = Family(self.family)
        translation = as_float_array(
            self.neutral_translation, name="neutral_translation", shape=(3,)
        )
        for name, value in (
            ("template_vertices", template),
            ("faces", faces),
            ("basis", basis),
            ("sigma", sigma),
            ("family", family),
            ("neutral_translation", translation),
        ):
            object.__setattr__(self, name, value)

    @property
    def n_vertices(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    @property
    def clamp_k(self) -> float:
        return self.family.clamp_k

    def template_mesh(self) -> Mesh:
        return Mesh(vertices=self.template_vertices.copy(), faces=self.faces)


def synthesize(model: MorphableModel, coeffs) -> Mesh:
    """Evaluate the blendshape sum: template + sum_n coeffs[n] * basis[:, n].

    The neutral articulation constants are applied identically to every
    mesh (an identity transform), so the map is linear in `coeffs`.
    """
    xi = as_float_array(coeffs, name="coeffs", shape=(NUM_COMPONENTS,))
    offsets = (model.basis @ xi).reshape(model.n_vertices, 3)
    vertices = model.template_vertices + offsets + model.neutral_translation
    return Mesh(vertices=vertices, faces=model.faces)


def sample_coefficients(model: MorphableModel, rng, distribution="uniform"):
    """Draw one coefficient vector clamped to k standard deviations per entry.

    `distribution` is "uniform" (default; covers the extremes of the clamped
    box) or "truncated_normal" (resampled until inside the box). Deterministic
    for a seeded generator.
    """
    rng = ensure_rng(rng)
    bound = model.clamp_k * model.sigma
    if distribution == "uniform":
        return rng.uniform(-bound, bound)
    if distribution == "truncated_normal":
        xi = rng.normal(0.0, model.sigma)
        out_of_range = np.abs(xi) > bound
        while np.any(out_of_range):
            xi[out_of_range] = rng.normal(0.0, model.sigma[out_of_range])
            out_of_range = np.abs(xi) > bound
        return xi
    raise ValueError(f"unknown sampling distribution: {distribution!r}")


def save_model(model: MorphableModel, path, dtype="f64") -> Path:
    """Write a model archive. A `.zip` suffix produces a zip, else a directory."""
    if dtype not in _DTYPES:
        raise ValueError(f"dtype must be 'f32' or 'f64', got {dtype!r}")
    path = Path(path)
    np_dtype = _DTYPES[dtype]
    manifest = {
        "model_id": model.model_id,
        "family": model.family.value,
        "N": model.n_vertices,
        "F": model.n_faces,
        "basis_columns": NUM_COMPONENTS,
        "dtype": dtype,
        "endianness": "little",
    }
    payload = {
        "manifest.json": json.dumps(manifest, indent=2).encode(),
        "template.bin": model.template_vertices.astype(np_dtype).tobytes(),
        "faces.bin": model.faces.astype("<u4").tobytes(),
        "basis.bin": model.basis.astype(np_dtype).tobytes(),
        "sigma.bin": model.sigma.astype(np_dtype).tobytes(),
    }
    if path.suffix == ".zip":
        with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
            for name, data in payload.items():
                zf.writestr(name, data)
    else:
        path.mkdir(parents=True, exist_ok=True)
        for name, data in payload.items():
            (path / name).write_bytes(data)
    return path


def load_model(path) -> MorphableModel:
    """Load and validate a model archive (directory or zip).

    Archives with more than 10 basis columns are truncated to the first 10;
    fewer than 10 is an error, as is any dimension mismatch between the
    manifest and the binary payloads.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model archive not found: {path}")
    if path.is_file() and zipfile.is_zipfile(path):
        with zipfile.ZipFile(path) as zf:
            blobs = {name: zf.read(name) for name in _ARCHIVE_FILES if name in zf.namelist()}
    elif path.is_dir():
        blobs = {
            name: (path / name).read_bytes()
            for name in _ARCHIVE_FILES
            if (path / name).exists()
        }
    else:
        raise ArchiveError(f"not a model archive (expected directory or zip): {path}")

    missing = [name for name in _ARCHIVE_FILES if name not in blobs]
    if missing:
        raise ArchiveError(f"archive {path} is missing {', '.join(missing)}")

    try:
        manifest = json.loads(blobs["manifest.json"])
    except json.JSONDecodeError as exc:
        raise ArchiveError(f"archive {path}: manifest.json is not valid JSON") from exc
    for key in ("model_id", "family", "N", "F", "basis_columns", "dtype"):
        if key not in manifest:
            raise ArchiveError(f"archive {path}: manifest missing field {key!r}")
    if manifest.get("endianness", "little") != "little":
        raise ArchiveError(f"archive {path}: only little-endian archives are supported")
    if manifest["dtype"] not in _DTYPES:
        raise ArchiveError(f"archive {path}: unknown dtype {manifest['dtype']!r}")

    np_dtype = _DTYPES[manifest["dtype"]]
    n, f, k = int(manifest["N"]), int(manifest["F"]), int(manifest["basis_columns"])
    if k < NUM_COMPONENTS:
        raise ArchiveError(
            f"archive {path}: needs at least {NUM_COMPONENTS} basis columns, has {k}"
        )

    template = _read_array(blobs["template.bin"], np_dtype, (n, 3), "template.bin", path)
    faces = _read_array(blobs["faces.bin"], np.dtype("<u4"), (f, 3), "faces.bin", path)
    basis = _read_array(blobs["basis.bin"], np_dtype, (3 * n, k), "basis.bin", path)
    sigma = _read_array(blobs["sigma.bin"], np_dtype, (k,), "sigma.bin", path)

    try:
        return MorphableModel(
            model_id=str(manifest["model_id"]),
            family=Family(manifest["family"]),
            template_vertices=template,
            faces=faces,
            basis=basis[:, :NUM_COMPONENTS],
            sigma=sigma[:NUM_COMPONENTS],
        )
    except ValueError as exc:
        raise ArchiveError(f"archive {path}: {exc}") from exc


_ARCHIVE_FILES = ("manifest.json", "template.bin", "faces.bin", "basis.bin", "sigma.bin")


def _read_array(blob, dtype, shape, name, path):
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(blob) != expected:
        raise ArchiveError(
            f"archive {path}: {name} holds {len(blob)} bytes, expected {expected} "
            f"for shape {shape}"
        )
    arr = np.frombuffer(blob, dtype=dtype).reshape(shape)
    if dtype.kind == "f":
        return np.ascontiguousarray(arr, dtype=np.float64)
    return np.ascontiguousarray(arr)
