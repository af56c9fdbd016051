"""The score-to-coefficient mapping network.

A small fully connected ReLU network (input d, hidden 500 and 800, output
10) trained with an L2 loss on paired (score vector, coefficient vector)
data. Forward and backward passes are explicit numpy so parameter and input
gradients are available to the evaluation code and checkable against finite
differences.

Artifact layout: `mapper.json` (metadata, stats, training log) plus
`weights.bin`, the layer parameters as little-endian float32 in layer order,
each layer as W (in x out, row-major) followed by its bias.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .dataset import CoefficientTable
from .morphable import NUM_COMPONENTS
from .scoring import Descriptor, ScoreTable
from .validation import as_float_array, ensure_rng

__all__ = [
    "MapperConfig",
    "DenseNetwork",
    "MapperArtifact",
    "train",
    "train_arrays",
    "predict",
    "slider_ranges",
    "loss_and_gradients",
    "finite_difference_gradients",
    "ScoreToCoefficientMapper",
]

MAPPER_JSON = "mapper.json"
WEIGHTS_BIN = "weights.bin"

_RESIDUAL_EPS = 1e-12


@dataclass(frozen=True)
class MapperConfig:
    hidden: tuple[int, ...] = (500, 800)
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    val_fraction: float = 0.1
    seed: int = 0
    # "l2" is the mean of per-sample L2 norms; "l2_squared" the mean of
    # squared norms.
    loss: str = "l2"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")
        if self.loss not in ("l2", "l2_squared"):
            raise ValueError(f"unknown loss {self.loss!r}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


class DenseNetwork:
    """Fully connected ReLU layers with a linear head, float64 math."""

    def __init__(self, layer_sizes, rng=None, weights=None):
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        if weights is not None:
            self.weights = [(np.asarray(W, dtype=np.float64), np.asarray(b, dtype=np.float64))
                            for W, b in weights]
            for (W, b), n_in, n_out in zip(
                self.weights, self.layer_sizes[:-1], self.layer_sizes[1:]
            ):
                if W.shape != (n_in, n_out) or b.shape != (n_out,):
                    raise ValueError("weights do not match layer_sizes")
        else:
            rng = ensure_rng(rng)
            self.weights = []
            for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
                scale = np.sqrt(2.0 / n_in)  # He init for ReLU layers
                self.weights.append(
                    (rng.normal(0.0, scale, size=(n_in, n_out)), np.zeros(n_out))
                )

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    def forward(self, X):
        out, _ = self.forward_cached(X)
        return out

    def forward_cached(self, X):
        """Returns (output, cache) where cache holds per-layer inputs and
        pre-activations for the backward pass."""
        a = as_float_array(X, name="input", ndim=2)
        if a.shape[1] != self.n_inputs:
            raise ValueError(f"input width {a.shape[1]} != network width {self.n_inputs}")
        inputs, preacts = [], []
        last = len(self.weights) - 1
        for li, (W, b) in enumerate(self.weights):
            inputs.append(a)
            z = a @ W + b
            preacts.append(z)
            a = z if li == last else np.maximum(z, 0.0)
        return a, (inputs, preacts)

    def backward(self, cache, grad_out):
        """Backpropagate dL/d(output); returns (per-layer (dW, db), dL/d(input))."""
        inputs, preacts = cache
        grads = [None] * len(self.weights)
        g = np.asarray(grad_out, dtype=np.float64)
        for li in range(len(self.weights) - 1, -1, -1):
            W, _ = self.weights[li]
            if li != len(self.weights) - 1:
                g = g * (preacts[li] > 0.0)
            grads[li] = (inputs[li].T @ g, g.sum(axis=0))
            g = g @ W.T
        return grads, g


def loss_and_gradients(net: DenseNetwork, X, Y, kind="l2"):
    """Loss plus parameter and input gradients for a batch.

    "l2": mean over the batch of ||pred - target||_2 (the paper-default
    objective); "l2_squared": mean of squared norms.
    """
    pred, cache = net.forward_cached(X)
    residual = pred - as_float_array(Y, name="target", ndim=2)
    norms = np.linalg.norm(residual, axis=1)
    n = residual.shape[0]
    if kind == "l2":
        loss = float(norms.mean())
        grad_out = residual / (n * np.maximum(norms, _RESIDUAL_EPS)[:, None])
    elif kind == "l2_squared":
        loss = float((norms**2).mean())
        grad_out = 2.0 * residual / n
    else:
        raise ValueError(f"unknown loss {kind!r}")
    param_grads, input_grad = net.backward(cache, grad_out)
    return loss, param_grads, input_grad


def finite_difference_gradients(net: DenseNetwork, X, Y, kind="l2", step=1e-6):
    """Central-difference parameter gradients; the independent check for
    backpropagation."""

    def loss_at():
        pred = net.forward(X)
        residual = pred - np.asarray(Y, dtype=np.float64)
        norms = np.linalg.norm(residual, axis=1)
        return float(norms.mean() if kind == "l2" else (norms**2).mean())

    grads = []
    for W, b in net.weights:
        gW = np.zeros_like(W)
        for idx in np.ndindex(W.shape):
            keep = W[idx]
            W[idx] = keep + step
            up = loss_at()
            W[idx] = keep - step
            down = loss_at()
            W[idx] = keep
            gW[idx] = (up - down) / (2.0 * step)
        gb = np.zeros_like(b)
        for idx in np.ndindex(b.shape):
            keep = b[idx]
            b[idx] = keep + step
            up = loss_at()
            b[idx] = keep - step
            down = loss_at()
            b[idx] = keep
            gb[idx] = (up - down) / (2.0 * step)
        grads.append((gW, gb))
    return grads


class _Adam:
    def __init__(self, shapes, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


# --------------------------------------------------------------------------
# Artifact


@dataclass
class MapperArtifact:
    """A trained mapper: float32 weights plus the metadata the slider UI and
    the zero-shot path need (descriptor order, score stats, provenance)."""

    model_id: str
    descriptors: list[Descriptor]
    score_stats: dict[str, dict[str, float]]  # id -> {min, max, mean}
    weights: list[tuple[np.ndarray, np.ndarray]]  # float32 pairs (W, b)
    training_log: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = [
            (np.asarray(W, dtype=np.float32), np.asarray(b, dtype=np.float32))
            for W, b in self.weights
        ]
        if self.layer_sizes[0] != len(self.descriptors):
            raise ValueError("network input width must equal the descriptor count")
        if self.layer_sizes[-1] != NUM_COMPONENTS:
            raise ValueError(f"network output width must be {NUM_COMPONENTS}")
        for d in self.descriptors:
            stats = self.score_stats.get(d.id)
            if stats is None:
                raise ValueError(f"missing score stats for descriptor {d.id!r}")
            if not stats["min"] < stats["max"]:
                raise ValueError(f"descriptor {d.id!r} has degenerate score range")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        sizes = [self.weights[0][0].shape[0]]
        sizes += [W.shape[1] for W, _ in self.weights]
        return tuple(sizes)

    @property
    def descriptor_ids(self) -> list[str]:
        return [d.id for d in self.descriptors]

    @property
    def n_descriptors(self) -> int:
        return len(self.descriptors)

    def network(self) -> DenseNetwork:
        return DenseNetwork(self.layer_sizes, weights=self.weights)

    def default_scores(self) -> np.ndarray:
        return np.array([self.score_stats[d.id]["mean"] for d in self.descriptors])

    def save(self, out_dir) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        blob = b"".join(
            part
            for W, b in self.weights
            for part in (
                W.astype("<f4").tobytes(),
                b.astype("<f4").tobytes(),
            )
        )
        (out_dir / WEIGHTS_BIN).write_bytes(blob)
        meta = {
            "format_version": 1,
            "model_id": self.model_id,
            "descriptors": [{"id": d.id, "text": d.text} for d in self.descriptors],
            "score_stats": self.score_stats,
            "layer_sizes": list(self.layer_sizes),
            "weights_file": WEIGHTS_BIN,
            "dtype": "f32",
            "training_log": self.training_log,
            "config": self.config,
        }
        (out_dir / MAPPER_JSON).write_text(json.dumps(meta, indent=2) + "\n")
        return out_dir / MAPPER_JSON

    @classmethod
    def load(cls, path) -> "MapperArtifact":
        path = Path(path)
        if path.is_dir():
            path = path / MAPPER_JSON
        meta = json.loads(path.read_text())
        sizes = [int(s) for s in meta["layer_sizes"]]
        blob = (path.parent / meta.get("weights_file", WEIGHTS_BIN)).read_bytes()
        expected = sum(
            (n_in * n_out + n_out) * 4 for n_in, n_out in zip(sizes[:-1], sizes[1:])
        )
        if len(blob) != expected:
            raise ValueError(
                f"{path}: weight payload holds {len(blob)} bytes, expected {expected}"
            )
        weights = []
        offset = 0
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            W = np.frombuffer(blob, dtype="<f4", count=n_in * n_out, offset=offset)
            offset += n_in * n_out * 4
            b = np.frombuffer(blob, dtype="<f4", count=n_out, offset=offset)
            offset += n_out * 4
            weights.append((W.reshape(n_in, n_out).copy(), b.copy()))
        return cls(
            model_id=meta["model_id"],
            descriptors=[Descriptor(text=d["text"], id=d["id"]) for d in meta["descriptors"]],
            score_stats=meta["score_stats"],
            weights=weights,
            training_log=meta.get("training_log", {}),
            config=meta.get("config", {}),
        )


def predict(artifact: MapperArtifact, scores) -> np.ndarray:
    """Forward pass: a d-vector of scores to a 10-vector of coefficients.

    Accepts a single vector or an (n, d) batch; out-of-range score values are
    allowed (sliders may extrapolate) but must be finite.
    """
    arr = as_float_array(scores, name="scores")
    single = arr.ndim == 1
    batch = arr[None, :] if single else arr
    out = artifact.network().forward(batch)
    return out[0] if single else out


def slider_ranges(artifact: MapperArtifact) -> dict[str, dict[str, float]]:
    """Per-descriptor slider metadata: lo/hi are the training score extremes,
    default the training mean. A UI fraction t maps to lo + t * (hi - lo)."""
    out = {}
    for d in artifact.descriptors:
        stats = artifact.score_stats[d.id]
        out[d.id] = {"lo": stats["min"], "hi": stats["max"], "default": stats["mean"]}
    return out


# --------------------------------------------------------------------------
# Training


def train_arrays(
    X,
    Y,
    cfg: MapperConfig = MapperConfig(),
    descriptors=None,
    model_id: str = "",
) -> MapperArtifact:
    """Train on aligned arrays: X (n, d) raw scores, Y (n, 10) coefficients."""
    X = as_float_array(X, name="scores", ndim=2)
    Y = as_float_array(Y, name="coeffs", ndim=2)
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"row mismatch: {X.shape[0]} score rows, {Y.shape[0]} coefficient rows")
    if X.shape[0] == 0:
        raise ValueError("no training rows")
    if Y.shape[1] != NUM_COMPONENTS:
        raise ValueError(f"coefficient rows must have {NUM_COMPONENTS} entries")

    if descriptors is None:
        descriptors = [Descriptor(text=f"descriptor {j}", id=f"d{j}") for j in range(X.shape[1])]
    descriptors = list(descriptors)
    if len(descriptors) != X.shape[1]:
        raise ValueError("descriptor list must match the score width")

    spans = X.max(axis=0) - X.min(axis=0)
    dead = [descriptors[j].id for j in np.nonzero(spans == 0.0)[0]]
    if dead:
        raise ValueError(f"zero-variance score columns cannot be trained: {', '.join(dead)}")

    rng = ensure_rng(cfg.seed)
    n = X.shape[0]
    order = rng.permutation(n)
    n_val = int(round(n * cfg.val_fraction))
    val_idx, train_idx = order[:n_val], order[n_val:]
    if train_idx.size == 0:
        raise ValueError("validation split leaves no training rows")
    X_train, Y_train = X[train_idx], Y[train_idx]
    X_val, Y_val = X[val_idx], Y[val_idx]

    sizes = (X.shape[1], *cfg.hidden, NUM_COMPONENTS)
    net = DenseNetwork(sizes, rng=rng)
    params = [p for pair in net.weights for p in pair]
    adam = _Adam([p.shape for p in params], lr=cfg.learning_rate)

    # Index 0 of each loss series is the untrained network's loss; entry e+1
    # follows epoch e.
    train_losses = [_dataset_loss(net, X_train, Y_train, cfg.loss)]
    val_losses = [_dataset_loss(net, X_val, Y_val, cfg.loss) if n_val else float("nan")]
    for epoch in range(cfg.epochs):
        batch_order = rng.permutation(train_idx.size)
        for start in range(0, train_idx.size, cfg.batch_size):
            rows = batch_order[start : start + cfg.batch_size]
            loss, grads, _ = loss_and_gradients(net, X_train[rows], Y_train[rows], cfg.loss)
            if not np.isfinite(loss):
                raise ValueError(
                    f"training diverged: non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}"
                )
            adam.step(params, [g for pair in grads for g in pair])
        train_losses.append(_dataset_loss(net, X_train, Y_train, cfg.loss))
        val_losses.append(
            _dataset_loss(net, X_val, Y_val, cfg.loss) if n_val else float("nan")
        )

    stats = {
        d.id: {
            "min": float(X[:, j].min()),
            "max": float(X[:, j].max()),
            "mean": float(X[:, j].mean()),
        }
        for j, d in enumerate(descriptors)
    }
    artifact = MapperArtifact(
        model_id=model_id,
        descriptors=descriptors,
        score_stats=stats,
        weights=[(W, b) for W, b in net.weights],
        config={
            "hidden": list(cfg.hidden),
            "epochs": cfg.epochs,
            "batch_size": cfg.batch_size,
            "learning_rate": cfg.learning_rate,
            "val_fraction": cfg.val_fraction,
            "seed": cfg.seed,
            "loss": cfg.loss,
        },
    )
    # Residual summary is computed through the artifact itself (float32
    # weights) so downstream comparisons against it are self-consistent.
    train_residuals = np.linalg.norm(predict(artifact, X_train) - Y_train, axis=1)
    log = {
        "train_loss": train_losses,
        "val_loss": val_losses,
        "n_train": int(train_idx.size),
        "n_val": int(n_val),
        "train_residual_p50": float(np.percentile(train_residuals, 50)),
        "train_residual_p95": float(np.percentile(train_residuals, 95)),
        "train_residual_max": float(train_residuals.max()),
    }
    if n_val:
        val_residuals = np.linalg.norm(predict(artifact, X_val) - Y_val, axis=1)
        log["val_residual_p50"] = float(np.percentile(val_residuals, 50))
        log["val_residual_p95"] = float(np.percentile(val_residuals, 95))
        log["val_residual_max"] = float(val_residuals.max())
    artifact.training_log = log
    return artifact


def _dataset_loss(net, X, Y, kind):
    if X.shape[0] == 0:
        return float("nan")
    pred = net.forward(X)
    norms = np.linalg.norm(pred - Y, axis=1)
    return float(norms.mean() if kind == "l2" else (norms**2).mean())


def train(
    scores: ScoreTable,
    coeffs: CoefficientTable,
    cfg: MapperConfig = MapperConfig(),
    descriptors=None,
    model_id: str = "",
) -> MapperArtifact:
    """Train from a score table and a coefficient table, joined on sample_id."""
    by_id = {sid: i for i, sid in enumerate(coeffs.sample_ids)}
    missing = [sid for sid in scores.sample_ids if sid not in by_id]
    if missing:
        raise ValueError(f"coefficients missing for samples: {missing[:5]}")
    rows = [by_id[sid] for sid in scores.sample_ids]
    Y = coeffs.values[rows]
    if descriptors is None:
        descriptors = [Descriptor(text=did.replace("_", " "), id=did) for did in scores.descriptor_ids]
    return train_arrays(scores.values, Y, cfg, descriptors=descriptors, model_id=model_id)


# --------------------------------------------------------------------------
# Estimator wrapper


class ScoreToCoefficientMapper(BaseEstimator):
    """Regressor-style wrapper: fit(X, y) on raw score rows and coefficient
    rows, predict(X) back to coefficients. The trained artifact (weights,
    slider stats, training log) is exposed as `artifact_`."""

    def __init__(
        self,
        hidden=(500, 800),
        epochs=50,
        batch_size=32,
        learning_rate=1e-3,
        val_fraction=0.1,
        seed=0,
        loss="l2",
        model_id="",
    ):
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.val_fraction = val_fraction
        self.seed = seed
        self.loss = loss
        self.model_id = model_id

    def _config(self) -> MapperConfig:
        return MapperConfig(
            hidden=tuple(self.hidden),
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            val_fraction=self.val_fraction,
            seed=self.seed,
            loss=self.loss,
        )

    def fit(self, X, y, descriptors=None):
        self.artifact_ = train_arrays(
            X, y, self._config(), descriptors=descriptors, model_id=self.model_id
        )
        self.training_log_ = self.artifact_.training_log
        return self

    def predict(self, X):
        return predict(self.artifact_, X)
