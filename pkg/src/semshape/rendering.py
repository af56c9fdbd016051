"""Headless rendering of meshes to RGB images.

The built-in backend is a flat-shaded software rasterizer (perspective
camera, z-buffer, single headlight). It exists so the pipeline is testable
and reproducible without a GPU; an external renderer can be slotted in by
implementing the same `render` signature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .morphable import Family, Mesh
from .validation import as_float_array

__all__ = [
    "CameraView",
    "RenderConfig",
    "DegenerateMeshError",
    "SoftwareRasterizer",
    "default_views",
]


class DegenerateMeshError(ValueError):
    """Mesh cannot be rendered: non-finite vertices or zero spatial extent."""


@dataclass(frozen=True)
class CameraView:
    """Orbit camera pose around the mesh centroid."""

    azimuth_deg: float = 0.0
    elevation_deg: float = 0.0
    distance: float = 0.0  # model units; 0 means auto-frame from the bounding box

    def to_json(self) -> dict:
        return {
            "azimuth_deg": self.azimuth_deg,
            "elevation_deg": self.elevation_deg,
            "distance": self.distance,
        }


# A small pool of flat base colors cycled per sample when material is
# "textured"; index 0 is a neutral skin tone.
MATERIAL_POOL = (
    (224, 188, 160),
    (198, 152, 120),
    (156, 110, 82),
    (120, 144, 180),
    (150, 170, 140),
)
FLAT_GRAY = (170, 170, 170)


@dataclass(frozen=True)
class RenderConfig:
    views: tuple[CameraView, ...] = (CameraView(),)
    image_size: int = 512
    material: str = "flat_gray"  # "flat_gray" or "textured"
    material_pool_id: int = 0
    background: tuple[int, int, int] = (255, 255, 255)

    def __post_init__(self):
        if len(self.views) < 1:
            raise ValueError("RenderConfig needs at least one view")
        if self.image_size < 64:
            raise ValueError("image_size must be >= 64")
        if self.material not in ("flat_gray", "textured"):
            raise ValueError(f"unknown material {self.material!r}")
        object.__setattr__(self, "views", tuple(self.views))
        object.__setattr__(self, "background", tuple(int(c) for c in self.background))

    def base_color(self, sample_index: int = 0) -> tuple[int, int, int]:
        if self.material == "flat_gray":
            return FLAT_GRAY
        pool = MATERIAL_POOL
        return pool[(self.material_pool_id + sample_index) % len(pool)]

    def to_json(self) -> dict:
        return {
            "views": [v.to_json() for v in self.views],
            "image_size": self.image_size,
            "material": self.material,
            "material_pool_id": self.material_pool_id,
            "background": list(self.background),
        }

    @classmethod
    def from_json(cls, data: dict) -> "RenderConfig":
        return cls(
            views=tuple(CameraView(**v) for v in data["views"]),
            image_size=int(data["image_size"]),
            material=data["material"],
            material_pool_id=int(data.get("material_pool_id", 0)),
            background=tuple(data["background"]),
        )


def default_views(family: Family) -> tuple[CameraView, ...]:
    """Front plus two 45-degree views for bodies/animals, frontal for faces."""
    if family in (Family.FACE_SHAPE, Family.FACE_EXPRESSION):
        return (CameraView(0.0, 0.0),)
    return (CameraView(0.0, 0.0), CameraView(45.0, 0.0), CameraView(-45.0, 0.0))


class SoftwareRasterizer:
    """Flat-shaded z-buffered triangle rasterizer. Pure numpy, deterministic.

    Vertices are viewed by an orbit camera looking at the mesh centroid, lit
    by a headlight at the camera. Optional per-vertex colors switch shading
    to barycentric color interpolation (used for heat-field figures).
    """

    parallel_safe = True

    def __init__(self, fov_deg: float = 40.0, ambient: float = 0.35):
        self.fov_deg = float(fov_deg)
        self.ambient = float(ambient)

    def render(
        self,
        mesh: Mesh,
        view: CameraView,
        image_size: int,
        base_color=FLAT_GRAY,
        background=(255, 255, 255),
        vertex_colors=None,
    ) -> np.ndarray:
        """Render one view to an (H, W, 3) uint8 image."""
        verts = as_float_array(mesh.vertices, name="vertices", shape=(None, 3), finite=False)
        if not np.all(np.isfinite(verts)):
            raise DegenerateMeshError("mesh has non-finite vertices")
        extent = verts.max(axis=0) - verts.min(axis=0)
        radius = 0.5 * float(np.linalg.norm(extent))
        if radius <= 0.0:
            raise DegenerateMeshError("mesh has zero spatial extent")

        size = int(image_size)
        center = verts.mean(axis=0)
        distance = view.distance
        if distance <= 0.0:
            # Frame the bounding sphere with ~10% margin.
            distance = 1.1 * radius / np.tan(np.radians(self.fov_deg) / 2.0)

        cam = _camera_space(verts - center, view.azimuth_deg, view.elevation_deg, distance)
        focal = size / (2.0 * np.tan(np.radians(self.fov_deg) / 2.0))
        depth = cam[:, 2]
        # All vertices sit in front of the camera for framing distances; guard
        # anyway so a hostile view cannot divide by zero.
        safe = np.maximum(depth, 1e-9)
        xs = size / 2.0 + focal * cam[:, 0] / safe
        ys = size / 2.0 - focal * cam[:, 1] / safe

        image = np.empty((size, size, 3), dtype=np.float64)
        image[:, :] = np.asarray(background, dtype=np.float64)
        zbuf = np.full((size, size), np.inf)

        faces = np.asarray(mesh.faces, dtype=np.int64)
        tri_cam = cam[faces]  # (F, 3, 3)
        normals = np.cross(tri_cam[:, 1] - tri_cam[:, 0], tri_cam[:, 2] - tri_cam[:, 0])
        norm_len = np.linalg.norm(normals, axis=1)
        # Headlight along +z in camera space; shade both face sides alike.
        with np.errstate(invalid="ignore", divide="ignore"):
            lambert = np.abs(normals[:, 2]) / np.where(norm_len > 0, norm_len, 1.0)
        shade = self.ambient + (1.0 - self.ambient) * lambert

        if vertex_colors is not None:
            vertex_colors = as_float_array(vertex_colors, name="vertex_colors", ndim=2)
            if vertex_colors.shape[0] != verts.shape[0]:
                raise ValueError("vertex_colors must have one row per vertex")

        base = np.asarray(base_color, dtype=np.float64)
        txs, tys, tzs = xs[faces], ys[faces], depth[faces]
        # Screen bounding boxes and edge-function setup, batched over faces.
        x_lo = np.clip(np.floor(txs.min(axis=1)).astype(np.int64), 0, size - 1)
        x_hi = np.clip(np.ceil(txs.max(axis=1)).astype(np.int64), 0, size - 1)
        y_lo = np.clip(np.floor(tys.min(axis=1)).astype(np.int64), 0, size - 1)
        y_hi = np.clip(np.ceil(tys.max(axis=1)).astype(np.int64), 0, size - 1)
        area = (tys[:, 1] - tys[:, 2]) * (txs[:, 0] - txs[:, 2]) + (
            txs[:, 2] - txs[:, 1]
        ) * (tys[:, 0] - tys[:, 2])
        drawable = (norm_len > 0.0) & (area != 0.0) & (x_lo <= x_hi) & (y_lo <= y_hi)
        cols = np.arange(size) + 0.5
        rows = cols[:, None]

        for fi in np.nonzero(drawable)[0]:
            px = cols[x_lo[fi] : x_hi[fi] + 1]
            py = rows[y_lo[fi] : y_hi[fi] + 1]
            tx, ty, tz = txs[fi], tys[fi], tzs[fi]
            w0 = ((ty[1] - ty[2]) * (px - tx[2]) + (tx[2] - tx[1]) * (py - ty[2])) / area[fi]
            w1 = ((ty[2] - ty[0]) * (px - tx[2]) + (tx[0] - tx[2]) * (py - ty[2])) / area[fi]
            w2 = 1.0 - w0 - w1
            z = w0 * tz[0] + w1 * tz[1] + w2 * tz[2]
            patch = zbuf[y_lo[fi] : y_hi[fi] + 1, x_lo[fi] : x_hi[fi] + 1]
            visible = (w0 >= 0) & (w1 >= 0) & (w2 >= 0) & (z < patch)
            if not visible.any():
                continue
            patch[visible] = z[visible]
            target = image[y_lo[fi] : y_hi[fi] + 1, x_lo[fi] : x_hi[fi] + 1]
            if vertex_colors is None:
                target[visible] = shade[fi] * base
            else:
                corner = vertex_colors[faces[fi]]
                blend = (
                    w0[..., None] * corner[0]
                    + w1[..., None] * corner[1]
                    + w2[..., None] * corner[2]
                )
                target[visible] = (shade[fi] * blend)[visible]
        return np.clip(np.rint(image), 0, 255).astype(np.uint8)


def _camera_space(verts, azimuth_deg, elevation_deg, distance):
    """Rotate into an orbit-camera frame: x right, y up, z away from camera."""
    az = np.radians(azimuth_deg)
    el = np.radians(elevation_deg)
    ca, sa = np.cos(az), np.sin(az)
    ce, se = np.cos(el), np.sin(el)
    rot_y = np.array([[ca, 0.0, -sa], [0.0, 1.0, 0.0], [sa, 0.0, ca]])
    rot_x = np.array([[1.0, 0.0, 0.0], [0.0, ce, -se], [0.0, se, ce]])
    cam = verts @ rot_y.T @ rot_x.T
    cam[:, 2] += distance
    return cam


