"""HTTP service exposing trained mappers to the slider UI and zero-shot
clients.

Artifact directory layout:
    <artifact_dir>/models/<model_id>/        model archives (or <model_id>.zip)
    <artifact_dir>/mappers/<mapper_id>/      mapper.json + weights.bin

The registry is loaded at startup and swapped atomically on reload; request
handlers only read immutable artifacts, so they are safe to run concurrently.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
import threading
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, File, Response, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .evaluation import coverage_report
from .mapper import MapperArtifact, predict, slider_ranges
from .morphable import MorphableModel, load_model, synthesize
from .scoring import load_external_backend, scores_for_image

__all__ = ["ServiceConfig", "Registry", "create_app", "serve"]

log = logging.getLogger(__name__)


@dataclass
class ServiceConfig:
    artifact_dir: str = "artifacts"
    host: str = "127.0.0.1"
    port: int = 8000
    scorer_backend: str = "none"  # "none" or "external"
    external_backend: str = ""  # "pkg.module:factory" when scorer_backend=external
    cache_size: int = 32
    ui_dir: str = ""

    @classmethod
    def from_file(cls, path) -> "ServiceConfig":
        data = json.loads(Path(path).read_text())
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown service config keys: {sorted(unknown)}")
        return cls(**data)

    def apply_env(self, environ=None) -> "ServiceConfig":
        """Environment variables SEMSHAPE_* override file values."""
        env = os.environ if environ is None else environ
        mapping = {
            "SEMSHAPE_ARTIFACT_DIR": ("artifact_dir", str),
            "SEMSHAPE_HOST": ("host", str),
            "SEMSHAPE_PORT": ("port", int),
            "SEMSHAPE_SCORER_BACKEND": ("scorer_backend", str),
            "SEMSHAPE_EXTERNAL_BACKEND": ("external_backend", str),
            "SEMSHAPE_CACHE_SIZE": ("cache_size", int),
            "SEMSHAPE_UI_DIR": ("ui_dir", str),
        }
        for key, (attr, cast) in mapping.items():
            if key in env:
                setattr(self, attr, cast(env[key]))
        return self


class Registry:
    """Loaded models and mappers; every mapper must reference a loaded model."""

    def __init__(self, artifact_dir):
        self.artifact_dir = Path(artifact_dir)
        self._lock = threading.Lock()
        self.models: dict[str, MorphableModel] = {}
        self.mappers: dict[str, MapperArtifact] = {}
        self.reload()

    def reload(self) -> dict[str, int]:
        models: dict[str, MorphableModel] = {}
        mappers: dict[str, MapperArtifact] = {}
        models_dir = self.artifact_dir / "models"
        if models_dir.is_dir():
            for entry in sorted(models_dir.iterdir()):
                if entry.is_dir() or entry.suffix == ".zip":
                    model = load_model(entry)
                    models[model.model_id] = model
        mappers_dir = self.artifact_dir / "mappers"
        if mappers_dir.is_dir():
            for entry in sorted(mappers_dir.iterdir()):
                if (entry / "mapper.json").exists():
                    mappers[entry.name] = MapperArtifact.load(entry)
        for mapper_id, artifact in mappers.items():
            if artifact.model_id not in models:
                raise ValueError(
                    f"mapper {mapper_id!r} references model {artifact.model_id!r}, "
                    f"which is not in {models_dir}"
                )
        with self._lock:
            self.models = models
            self.mappers = mappers
        log.info("registry loaded: %d models, %d mappers", len(models), len(mappers))
        return {"models": len(models), "mappers": len(mappers)}

    def snapshot(self):
        with self._lock:
            return self.models, self.mappers


class _MapRequest(BaseModel):
    scores: list[float]
    include_faces: bool = True


def _mesh_payload(mesh, include_faces: bool) -> dict:
    payload = {"vertices": mesh.vertices.tolist()}
    if include_faces:
        payload["faces"] = mesh.faces.tolist()
    return payload


def create_app(registry: Registry, scorer_backend=None, cache_size: int = 32) -> FastAPI:
    app = FastAPI(title="semshape", version="0.1.0")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    coverage_cache: OrderedDict[tuple, bytes] = OrderedDict()
    cache_lock = threading.Lock()

    def lookup(mapper_id):
        models, mappers = registry.snapshot()
        artifact = mappers.get(mapper_id)
        if artifact is None:
            return None, None
        return artifact, models[artifact.model_id]

    @app.get("/api/health")
    def health():
        models, mappers = registry.snapshot()
        return {"status": "ok", "models": len(models), "mappers": len(mappers)}

    @app.get("/api/mappers")
    def list_mappers():
        _, mappers = registry.snapshot()
        out = []
        for mapper_id, artifact in sorted(mappers.items()):
            ranges = slider_ranges(artifact)
            out.append(
                {
                    "mapper_id": mapper_id,
                    "model_id": artifact.model_id,
                    "descriptors": [
                        {"id": d.id, "text": d.text, **ranges[d.id]}
                        for d in artifact.descriptors
                    ],
                }
            )
        return out

    @app.get("/api/mappers/{mapper_id}/topology")
    def topology(mapper_id: str):
        artifact, model = lookup(mapper_id)
        if artifact is None:
            return JSONResponse({"error": "unknown mapper"}, status_code=404)
        return {
            "model_id": model.model_id,
            "n_vertices": model.n_vertices,
            "faces": model.faces.tolist(),
        }

    def run_mapping(mapper_id, scores):
        artifact, model = lookup(mapper_id)
        if artifact is None:
            return None, JSONResponse({"error": "unknown mapper"}, status_code=404)
        if len(scores) != artifact.n_descriptors:
            return None, JSONResponse(
                {
                    "error": f"expected {artifact.n_descriptors} scores, "
                    f"got {len(scores)}"
                },
                status_code=400,
            )
        values = np.asarray(scores, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            return None, JSONResponse({"error": "scores must be finite"}, status_code=400)
        coeffs = predict(artifact, values)
        return (coeffs, synthesize(model, coeffs)), None

    @app.post("/api/mappers/{mapper_id}/map")
    def map_scores(mapper_id: str, request: _MapRequest):
        result, error = run_mapping(mapper_id, request.scores)
        if error is not None:
            return error
        coeffs, mesh = result
        return {"xi": coeffs.tolist(), "mesh": _mesh_payload(mesh, request.include_faces)}

    @app.post("/api/mappers/{mapper_id}/map_buffer")
    def map_scores_buffer(mapper_id: str, request: _MapRequest):
        """Compact transport for the viewport: little-endian uint32 vertex
        count, 10 float32 coefficients, then N x 3 float32 vertices."""
        result, error = run_mapping(mapper_id, request.scores)
        if error is not None:
            return error
        coeffs, mesh = result
        blob = (
            np.array([mesh.vertices.shape[0]], dtype="<u4").tobytes()
            + coeffs.astype("<f4").tobytes()
            + mesh.vertices.astype("<f4").tobytes()
        )
        return Response(content=blob, media_type="application/octet-stream")

    @app.post("/api/mappers/{mapper_id}/zero_shot")
    def zero_shot(mapper_id: str, image: UploadFile = File(...)):
        artifact, model = lookup(mapper_id)
        if artifact is None:
            return JSONResponse({"error": "unknown mapper"}, status_code=404)
        if scorer_backend is None:
            return JSONResponse(
                {"error": "no scorer backend configured"}, status_code=503
            )
        payload = image.file.read()
        suffix = Path(image.filename or "upload.png").suffix or ".png"
        with tempfile.NamedTemporaryFile(suffix=suffix, delete=False) as handle:
            handle.write(payload)
            tmp_path = Path(handle.name)
        try:
            from PIL import Image, UnidentifiedImageError

            try:
                with Image.open(tmp_path) as img:
                    img.verify()
            except (UnidentifiedImageError, OSError):
                return JSONResponse({"error": "not a decodable image"}, status_code=415)
            try:
                scores = scores_for_image(scorer_backend, tmp_path, artifact.descriptors)
            except KeyError as exc:
                return JSONResponse({"error": str(exc)}, status_code=422)
            coeffs = predict(artifact, scores)
            mesh = synthesize(model, coeffs)
            return {
                "xi": coeffs.tolist(),
                "scores": scores.tolist(),
                "mesh": _mesh_payload(mesh, include_faces=False),
            }
        finally:
            tmp_path.unlink(missing_ok=True)

    @app.get("/api/mappers/{mapper_id}/coverage")
    def coverage(mapper_id: str, tau: float = 0.3):
        artifact, model = lookup(mapper_id)
        if artifact is None:
            return JSONResponse({"error": "unknown mapper"}, status_code=404)
        if not 0.0 < tau < 1.0:
            return JSONResponse({"error": "tau must be in (0, 1)"}, status_code=400)
        key = (mapper_id, repr(tau))
        with cache_lock:
            cached = coverage_cache.get(key)
        if cached is None:
            report = coverage_report(artifact, model, tau=tau)
            cached = json.dumps(report.to_json(), sort_keys=True).encode()
            with cache_lock:
                coverage_cache[key] = cached
                while len(coverage_cache) > cache_size:
                    coverage_cache.popitem(last=False)
        return Response(content=cached, media_type="application/json")

    @app.post("/api/admin/reload")
    def reload_registry():
        counts = registry.reload()
        with cache_lock:
            coverage_cache.clear()
        return counts

    return app


def serve(config: ServiceConfig):
    """Build the app from a config and run it under uvicorn (blocking)."""
    import uvicorn

    backend = None
    if config.scorer_backend == "external":
        if not config.external_backend:
            raise ValueError(
                "scorer_backend=external requires external_backend='pkg.module:factory'"
            )
        backend = load_external_backend(config.external_backend)
    elif config.scorer_backend != "none":
        raise ValueError(f"unknown scorer_backend {config.scorer_backend!r}")

    registry = Registry(config.artifact_dir)
    app = create_app(registry, scorer_backend=backend, cache_size=config.cache_size)
    if config.ui_dir:
        ui = Path(config.ui_dir)
        if ui.is_dir():
            from fastapi.staticfiles import StaticFiles

            app.mount("/ui", StaticFiles(directory=ui, html=True), name="ui")
        else:
            log.warning("ui_dir %s does not exist; skipping static mount", ui)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
