"""Procedural demo assets: a small parametric blob model and synthetic scorers.

Real body/face models ship under restrictive licenses, so the demos and the
test suite run on a generated ellipsoid "body" whose 10 basis columns are
smooth localized bumps. The geometry is deterministic for a fixed seed.
"""

from __future__ import annotations

import numpy as np

from .morphable import NUM_COMPONENTS, Family, MorphableModel
from .validation import ensure_rng

__all__ = ["make_demo_model", "make_demo_descriptors", "make_gain_matrix"]


def _ellipsoid_grid(n_lat: int, n_lon: int, radii):
    """UV-sphere vertices/faces scaled to an ellipsoid, poles included."""
    rx, ry, rz = radii
    verts = [(0.0, ry, 0.0)]
    for i in range(1, n_lat):
        theta = np.pi * i / n_lat
        for j in range(n_lon):
            phi = 2.0 * np.pi * j / n_lon
            verts.append(
                (
                    rx * np.sin(theta) * np.cos(phi),
                    ry * np.cos(theta),
                    rz * np.sin(theta) * np.sin(phi),
                )
            )
    verts.append((0.0, -ry, 0.0))
    vertices = np.array(verts, dtype=np.float64)

    faces = []
    south = len(verts) - 1

    def ring(i, j):
        return 1 + (i - 1) * n_lon + (j % n_lon)

    for j in range(n_lon):
        faces.append((0, ring(1, j + 1), ring(1, j)))
        faces.append((south, ring(n_lat - 1, j), ring(n_lat - 1, j + 1)))
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            faces.append((a, b, d))
            faces.append((a, d, c))
    return vertices, np.array(faces, dtype=np.uint32)


def make_demo_model(
    model_id: str = "demo_body",
    family: Family = Family.BODY,
    n_lat: int = 12,
    n_lon: int = 16,
    seed: int = 7,
    bump_scale: float = 0.02,
) -> MorphableModel:
    """Build an ellipsoid model with 10 localized bump deformation columns.

    Each basis column pushes the vertices near one anchor point along their
    radial direction with a Gaussian falloff, so different components deform
    mostly different regions, the way truncated PCA bases localize in
    practice. `bump_scale` is the per-unit-coefficient displacement at the
    bump center, in model units.
    """
    rng = ensure_rng(seed)
    vertices, faces = _ellipsoid_grid(n_lat, n_lon, radii=(0.22, 0.55, 0.14))
    n = vertices.shape[0]

    radial = vertices / np.maximum(np.linalg.norm(vertices, axis=1, keepdims=True), 1e-12)
    anchor_ids = rng.choice(n, size=NUM_COMPONENTS, replace=False)
    falloff = 0.18
    basis = np.zeros((3 * n, NUM_COMPONENTS))
    for c, anchor in enumerate(anchor_ids):
        dist = np.linalg.norm(vertices - vertices[anchor], axis=1)
        weight = bump_scale * np.exp(-((dist / falloff) ** 2))
        basis[:, c] = (weight[:, None] * radial).reshape(-1)

    sigma = np.linspace(1.0, 0.55, NUM_COMPONENTS)
    return MorphableModel(
        model_id=model_id,
        family=family,
        template_vertices=vertices,
        faces=faces,
        basis=basis,
        sigma=sigma,
    )


def make_demo_descriptors(count: int = 12) -> list[str]:
    """Body-style descriptor words for demos; trimmed to `count`."""
    words = [
        "tall",
        "short",
        "muscular",
        "petite",
        "broad shoulders",
        "narrow waist",
        "long torso",
        "round",
        "lean",
        "stocky",
        "curvy",
        "rectangular",
        "heavyset",
        "small",
        "proportioned",
    ]
    if count > len(words):
        raise ValueError(f"only {len(words)} demo descriptors available")
    return words[:count]


def make_gain_matrix(n_descriptors: int, seed: int = 0, row_l1: float = 0.4):
    """A full-rank gain matrix for the synthetic scorer, rows scaled so the
    induced scores stay inside [-1, 1] for coefficients within 2 sigma.

    Built from seeded random directions with controlled conditioning; the
    l1 row bound guarantees |row . coeffs| <= 2 * row_l1 for |coeffs| <= 2.
    """
    rng = ensure_rng(seed)
    raw = rng.normal(size=(n_descriptors, NUM_COMPONENTS))
    # Re-balance singular values into [1, 2] to keep the map well conditioned.
    u, _, vt = np.linalg.svd(raw, full_matrices=False)
    spread = np.linspace(2.0, 1.0, min(n_descriptors, NUM_COMPONENTS))
    gain = u @ np.diag(spread) @ vt
    gain *= row_l1 / np.abs(gain).sum(axis=1, keepdims=True)
    return gain
