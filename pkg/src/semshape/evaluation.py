"""Mapper quality metrics: per-descriptor geometric effect, vertex coverage
and overlap, score-space expressiveness optimization, and zero-shot fitting.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mapper import MapperArtifact, predict
from .morphable import NUM_COMPONENTS, Mesh, MorphableModel, synthesize
from .scoring import scores_for_image
from .validation import as_float_array

__all__ = [
    "EffectField",
    "CoverageReport",
    "FitOptions",
    "FitResult",
    "effect_field",
    "coverage_report",
    "fit_target",
    "vertex_error",
    "zero_shot_fit",
]


@dataclass
class EffectField:
    """Normalized per-vertex deformation when one descriptor sweeps its
    training score range while the others stay at their defaults."""

    descriptor_id: str
    delta: np.ndarray  # (N,) in [0, 1]
    delta_max: float  # raw peak deformation, model units
    zero_effect: bool = False

    def covered(self, tau: float) -> np.ndarray:
        """Boolean mask of vertices with delta > tau."""
        return self.delta > tau

    def save_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["vertex", "delta"])
            for v, value in enumerate(self.delta):
                writer.writerow([v, repr(float(value))])
        return path


def effect_field(
    artifact: MapperArtifact, model: MorphableModel, descriptor_id: str
) -> EffectField:
    """Sweep one descriptor from its training min to max (others at their
    training means), synthesize both meshes, and normalize the per-vertex
    displacement by its peak. A descriptor the mapper ignores yields a
    flagged all-zero field."""
    if descriptor_id not in artifact.descriptor_ids:
        raise KeyError(f"descriptor {descriptor_id!r} not in mapper")
    idx = artifact.descriptor_ids.index(descriptor_id)
    stats = artifact.score_stats[descriptor_id]

    low = artifact.default_scores()
    high = low.copy()
    low[idx] = stats["min"]
    high[idx] = stats["max"]
    mesh_low = synthesize(model, predict(artifact, low))
    mesh_high = synthesize(model, predict(artifact, high))

    raw = np.linalg.norm(mesh_low.vertices - mesh_high.vertices, axis=1)
    peak = float(raw.max())
    if peak == 0.0:
        return EffectField(
            descriptor_id=descriptor_id,
            delta=np.zeros(model.n_vertices),
            delta_max=0.0,
            zero_effect=True,
        )
    return EffectField(descriptor_id=descriptor_id, delta=raw / peak, delta_max=peak)


@dataclass
class CoverageReport:
    tau: float
    n_vertices: int
    covered_counts: dict[str, int]
    coverage_pct: float
    overlap_pct: float

    def to_json(self) -> dict:
        return {
            "tau": self.tau,
            "n_vertices": self.n_vertices,
            "coverage_pct": self.coverage_pct,
            "overlap_pct": self.overlap_pct,
            "per_descriptor": {
                did: {
                    "covered_vertices": count,
                    "covered_pct": 100.0 * count / self.n_vertices,
                }
                for did, count in self.covered_counts.items()
            },
        }


def coverage_report(
    artifact: MapperArtifact, model: MorphableModel, tau: float = 0.3
) -> CoverageReport:
    """Coverage is the fraction of vertices any descriptor moves beyond
    `tau` (on its normalized effect field); overlap is the mean pairwise
    intersection-over-union of the covered vertex sets. Pairs of empty sets
    contribute 0, as does a single-descriptor mapper."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must be in (0, 1), got {tau}")
    masks = [
        effect_field(artifact, model, did).covered(tau) for did in artifact.descriptor_ids
    ]
    union = np.zeros(model.n_vertices, dtype=bool)
    for m in masks:
        union |= m
    coverage_pct = 100.0 * union.sum() / model.n_vertices

    ious = []
    for i in range(len(masks)):
        for j in range(i + 1, len(masks)):
            inter = np.logical_and(masks[i], masks[j]).sum()
            outer = np.logical_or(masks[i], masks[j]).sum()
            ious.append(inter / outer if outer else 0.0)
    overlap_pct = 100.0 * float(np.mean(ious)) if ious else 0.0

    return CoverageReport(
        tau=tau,
        n_vertices=model.n_vertices,
        covered_counts={
            did: int(m.sum()) for did, m in zip(artifact.descriptor_ids, masks)
        },
        coverage_pct=float(coverage_pct),
        overlap_pct=overlap_pct,
    )


# --------------------------------------------------------------------------
# Expressiveness optimization


@dataclass(frozen=True)
class FitOptions:
    lr: float = 1e-3
    max_steps: int = 5000
    tol: float = 1e-6
    gradient: str = "backprop"  # or "fd" for the finite-difference fallback

    def __post_init__(self):
        if self.max_steps < 1 or self.max_steps > 5000:
            raise ValueError("max_steps must be in [1, 5000]")
        if self.gradient not in ("backprop", "fd"):
            raise ValueError(f"unknown gradient mode {self.gradient!r}")


@dataclass
class FitResult:
    scores: np.ndarray  # optimized score vector
    error: float  # final ||predicted - target||_2
    steps: int
    trajectory: list[float]  # per-step error, non-increasing, final == error
    converged: bool
    vertex_mse: float | None = None


def fit_target(
    artifact: MapperArtifact,
    target_coeffs,
    options: FitOptions = FitOptions(),
    model: MorphableModel | None = None,
) -> FitResult:
    """Optimize the score vector through the frozen mapper to match a target
    coefficient vector, starting from the training-mean scores.

    Steepest descent on the squared residual with a per-step line search
    over a geometric step grid anchored at `lr`: only error-decreasing
    steps are accepted, so the trajectory is non-increasing by construction.
    Stops at `tol`, at the step cap, or when no grid step descends. When
    `model` is given the result also carries the final vertex-space MSE.
    """
    target = as_float_array(target_coeffs, name="target", shape=(NUM_COMPONENTS,))
    net = artifact.network()
    scores = artifact.default_scores()

    def error_at(vec):
        return float(np.linalg.norm(net.forward(vec[None])[0] - target))

    def gradient_at(vec):
        # d(0.5 ||r||^2)/d(scores)
        if options.gradient == "fd":
            step = 1e-6
            g = np.zeros_like(vec)
            for i in range(vec.size):
                up, down = vec.copy(), vec.copy()
                up[i] += step
                down[i] -= step
                g[i] = (error_at(up) ** 2 - error_at(down) ** 2) / (4.0 * step)
            return g
        pred, cache = net.forward_cached(vec[None])
        _, input_grad = net.backward(cache, pred - target[None])
        return input_grad[0]

    error = error_at(scores)
    initial_error = error
    trajectory = [error]
    step_grid = [options.lr * 4.0**k for k in range(-20, 16)]
    steps = 0
    converged = error <= options.tol

    while steps < options.max_steps and error > options.tol:
        grad = gradient_at(scores)
        if not np.all(np.isfinite(grad)):
            raise ValueError("optimization diverged: non-finite gradient")
        if np.linalg.norm(grad) == 0.0:
            break
        # Approximate exact line search on a fixed geometric step grid
        # anchored at lr. Taking the best grid point (rather than the first
        # improving one) keeps the trajectory monotone while escaping ReLU
        # creases, where the one-sided gradient ascends for every small step
        # but descends across a larger one.
        best_error, best_scores = error, None
        for trial in step_grid:
            candidate = scores - trial * grad
            cand_error = error_at(candidate)
            if cand_error < best_error:
                best_error, best_scores = cand_error, candidate
        steps += 1
        if best_scores is None:
            break
        scores, error = best_scores, best_error
        trajectory.append(error)
        if error > 10.0 * max(initial_error, 1e-12):
            raise ValueError(
                f"optimization diverged: error {error:.3g} exceeds 10x initial {initial_error:.3g}"
            )
        if error <= options.tol:
            converged = True

    vertex_mse = None
    if model is not None:
        final = synthesize(model, predict(artifact, scores))
        vertex_mse = vertex_error(final, synthesize(model, target))
    return FitResult(
        scores=scores,
        error=error,
        steps=steps,
        trajectory=trajectory,
        converged=converged or error <= options.tol,
        vertex_mse=vertex_mse,
    )


def vertex_error(pred: Mesh, gt: Mesh) -> float:
    """Mean over vertices of the squared Euclidean distance."""
    if pred.vertices.shape != gt.vertices.shape:
        raise ValueError(
            f"topology mismatch: {pred.vertices.shape} vs {gt.vertices.shape}"
        )
    return float(np.mean(np.sum((pred.vertices - gt.vertices) ** 2, axis=1)))


def zero_shot_fit(image_path, backend, artifact: MapperArtifact) -> np.ndarray:
    """Score an image against the mapper's descriptors and map the scores to
    coefficients in one forward pass."""
    image_path = Path(image_path)
    if not image_path.exists():
        raise FileNotFoundError(f"image not found: {image_path}")
    scores = scores_for_image(backend, image_path, artifact.descriptors)
    return predict(artifact, scores)
