"""Reduce an over-complete descriptor list to a small decorrelated subset.

The pipeline: cluster the image embeddings (k-means, k chosen by silhouette),
assign each descriptor to the cluster that votes for it most, then pick
descriptors per cluster by descending score variance while filtering pairs
whose |correlation| exceeds the median of all pairwise values, plus declared
synonym/antonym pairs. Cluster lists are merged and the same filters applied
once more globally.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.cluster import KMeans
from sklearn.metrics import silhouette_score

from .scoring import ScoreTable
from .validation import as_float_array

__all__ = [
    "ClusterAssignment",
    "SilhouetteKMeans",
    "cluster_images",
    "assign_descriptors_to_clusters",
    "correlation_matrix",
    "Lexicon",
    "SelectionResult",
    "select",
    "DescriptorSelector",
]

# Pairs at or above this are treated as duplicate signals and always filtered,
# independent of the median threshold (which degenerates in tiny tables).
DUPLICATE_CORRELATION = 1.0 - 1e-12

TOP_VOTES_PER_IMAGE = 5


# --------------------------------------------------------------------------
# Clustering


@dataclass
class ClusterAssignment:
    k: int
    labels: np.ndarray  # per-sample cluster index
    silhouette: float
    centroids: np.ndarray

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)


class SilhouetteKMeans(BaseEstimator):
    """K-means with the cluster count picked by the best silhouette score."""

    def __init__(self, k_min=2, k_max=10, n_init=10, random_state=0):
        self.k_min = k_min
        self.k_max = k_max
        self.n_init = n_init
        self.random_state = random_state

    def fit(self, X, y=None):
        X = as_float_array(X, name="X", ndim=2)
        n = X.shape[0]
        if self.k_min < 2:
            raise ValueError("k_min must be >= 2")
        if n < 2 * self.k_min:
            raise ValueError(f"need at least {2 * self.k_min} samples, got {n}")
        if np.ptp(X, axis=0).max() == 0.0:
            raise ValueError("degenerate input: all samples identical")

        self.scores_ = {}
        best = None
        for k in range(self.k_min, min(self.k_max, n - 1) + 1):
            km = KMeans(n_clusters=k, n_init=self.n_init, random_state=self.random_state)
            labels = km.fit_predict(X)
            if len(np.unique(labels)) < 2:
                continue
            sil = float(silhouette_score(X, labels))
            self.scores_[k] = sil
            if best is None or sil > best[0]:
                best = (sil, k, km)
        if best is None:
            raise ValueError("no cluster count in range produced a valid silhouette")
        self.silhouette_, self.n_clusters_, self.kmeans_ = best
        self.labels_ = self.kmeans_.labels_
        return self

    def predict(self, X):
        return self.kmeans_.predict(as_float_array(X, name="X", ndim=2))

    def fit_predict(self, X, y=None):
        return self.fit(X).labels_


def cluster_images(embeddings, k_range=(2, 10), seed=0) -> ClusterAssignment:
    """Cluster image embeddings, choosing K in `k_range` by silhouette."""
    model = SilhouetteKMeans(k_min=k_range[0], k_max=k_range[1], random_state=seed).fit(
        as_float_array(embeddings, name="embeddings", ndim=2)
    )
    return ClusterAssignment(
        k=model.n_clusters_,
        labels=np.asarray(model.labels_, dtype=np.int64),
        silhouette=model.silhouette_,
        centroids=model.kmeans_.cluster_centers_,
    )


def assign_descriptors_to_clusters(image_embs, text_embs, assignment) -> np.ndarray:
    """Vote each image's top-5 most similar descriptors into the image's
    cluster, normalize votes by cluster size, and assign every descriptor to
    its argmax cluster (ties go to the lower cluster index).

    Returns a per-descriptor cluster index aligned with `text_embs` rows.
    Descriptors that never reach a top-5 land in cluster 0.
    """
    image_embs = _unit_rows(as_float_array(image_embs, name="image_embs", ndim=2))
    text_embs = _unit_rows(as_float_array(text_embs, name="text_embs", ndim=2))
    labels = np.asarray(assignment.labels)
    if labels.shape[0] != image_embs.shape[0]:
        raise ValueError("assignment must cover every image embedding")

    n_desc = text_embs.shape[0]
    top_k = min(TOP_VOTES_PER_IMAGE, n_desc)
    votes = np.zeros((n_desc, assignment.k))
    sims = image_embs @ text_embs.T
    # Stable sort makes similarity ties resolve by descriptor order.
    ranked = np.argsort(-sims, axis=1, kind="stable")[:, :top_k]
    for img_index in range(image_embs.shape[0]):
        votes[ranked[img_index], labels[img_index]] += 1.0
    sizes = assignment.cluster_sizes().astype(np.float64)
    votes /= np.where(sizes > 0, sizes, 1.0)
    return np.argmax(votes, axis=1)


def _unit_rows(m):
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    return m / np.where(norms > 0, norms, 1.0)


# --------------------------------------------------------------------------
# Correlation


def correlation_matrix(table: ScoreTable) -> np.ndarray:
    """Pearson correlation between per-descriptor score columns.

    Requires at least two samples and no zero-variance column (callers are
    expected to exclude degenerate descriptors first and report them).
    """
    values = table.values
    if values.shape[0] < 2:
        raise ValueError("correlation needs at least 2 samples")
    variances = values.var(axis=0)
    dead = [table.descriptor_ids[j] for j in np.nonzero(variances == 0.0)[0]]
    if dead:
        raise ValueError(f"zero-variance descriptor columns: {', '.join(dead)}")
    matrix = np.corrcoef(values, rowvar=False)
    matrix = np.clip(matrix, -1.0, 1.0)
    np.fill_diagonal(matrix, 1.0)
    return matrix


# --------------------------------------------------------------------------
# Lexicon


@dataclass(frozen=True)
class Lexicon:
    """Explicit synonym/antonym pairs; pairs are unordered and disjoint."""

    synonyms: frozenset = frozenset()
    antonyms: frozenset = frozenset()

    def __post_init__(self):
        syn = frozenset(_norm_pair(p) for p in self.synonyms)
        ant = frozenset(_norm_pair(p) for p in self.antonyms)
        both = syn & ant
        if both:
            raise ValueError(f"pairs cannot be both synonym and antonym: {sorted(both)}")
        object.__setattr__(self, "synonyms", syn)
        object.__setattr__(self, "antonyms", ant)

    def relation(self, a: str, b: str) -> str | None:
        pair = _norm_pair((a, b))
        if pair in self.synonyms:
            return "synonym"
        if pair in self.antonyms:
            return "antonym"
        return None

    def referenced_ids(self) -> set:
        return {d for pair in self.synonyms | self.antonyms for d in pair}

    def to_json(self) -> dict:
        return {
            "synonyms": sorted(list(p) for p in self.synonyms),
            "antonyms": sorted(list(p) for p in self.antonyms),
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_json(), indent=2) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "Lexicon":
        data = json.loads(Path(path).read_text())
        return cls(
            synonyms=frozenset(tuple(p) for p in data.get("synonyms", [])),
            antonyms=frozenset(tuple(p) for p in data.get("antonyms", [])),
        )


def _norm_pair(pair):
    a, b = pair
    if a == b:
        raise ValueError(f"lexicon pair must join two distinct descriptors: {a!r}")
    return tuple(sorted((a, b)))


# --------------------------------------------------------------------------
# Selection


@dataclass
class ChosenDescriptor:
    id: str
    variance: float
    home_cluster: int
    readmitted: bool = False


@dataclass
class FilteredDescriptor:
    id: str
    reason: str  # correlated_with | synonym_of | antonym_of | below_cut
    other_id: str | None = None
    stage: str = "cluster"  # cluster | merged | target_d | degenerate


@dataclass
class SelectionResult:
    chosen: list[ChosenDescriptor]
    filtered: list[FilteredDescriptor]
    threshold: float
    preset: list[str] = field(default_factory=list)
    target_d: int | None = None
    clustering: dict | None = None
    notes: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return len(self.chosen)

    @property
    def chosen_ids(self) -> list[str]:
        return [c.id for c in self.chosen]

    def to_json(self) -> dict:
        return {
            "format_version": 1,
            "d": self.d,
            "threshold": self.threshold,
            "preset": self.preset,
            "target_d": self.target_d,
            "clustering": self.clustering,
            "notes": self.notes,
            "chosen": [
                {
                    "id": c.id,
                    "variance": c.variance,
                    "home_cluster": c.home_cluster,
                    "readmitted": c.readmitted,
                }
                for c in self.chosen
            ],
            "filtered": [
                {"id": f.id, "reason": f.reason, "other_id": f.other_id, "stage": f.stage}
                for f in self.filtered
            ],
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_json(), indent=2) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "SelectionResult":
        data = json.loads(Path(path).read_text())
        return cls(
            chosen=[
                ChosenDescriptor(
                    id=c["id"],
                    variance=c["variance"],
                    home_cluster=c["home_cluster"],
                    readmitted=c.get("readmitted", False),
                )
                for c in data["chosen"]
            ],
            filtered=[
                FilteredDescriptor(
                    id=f["id"],
                    reason=f["reason"],
                    other_id=f.get("other_id"),
                    stage=f.get("stage", "cluster"),
                )
                for f in data["filtered"]
            ],
            threshold=float(data["threshold"]),
            preset=list(data.get("preset", [])),
            target_d=data.get("target_d"),
            clustering=data.get("clustering"),
            notes=data.get("notes", {}),
        )


def select(
    table: ScoreTable,
    assignment: ClusterAssignment | None = None,
    desc_clusters=None,
    lexicon: Lexicon | None = None,
    preset=None,
    target_d: int | None = None,
) -> SelectionResult:
    """Choose a decorrelated, variance-ordered descriptor subset.

    Per cluster, descriptors are visited in descending variance and kept
    unless their |correlation| with an already-kept one exceeds the threshold
    (the median |correlation| over all descriptor pairs, computed once
    globally) or they form a lexicon pair with a kept one. The surviving
    cluster lists are merged and filtered again with the same rules. Preset
    descriptors are pinned to the front and never filtered. `target_d`
    truncates from the bottom or re-admits filtered descriptors in variance
    order; lexicon pairs are never re-admitted.
    """
    lexicon = lexicon or Lexicon()
    preset = [str(p) for p in (preset or [])]
    ids = list(table.descriptor_ids)
    id_set = set(ids)

    unknown = lexicon.referenced_ids() - id_set
    if unknown:
        raise ValueError(f"lexicon references unknown descriptors: {sorted(unknown)}")
    missing = [p for p in preset if p not in id_set]
    if missing:
        raise ValueError(f"preset descriptors not in table: {missing}")
    if len(set(preset)) != len(preset):
        raise ValueError("preset contains duplicates")
    for i, a in enumerate(preset):
        for b in preset[i + 1 :]:
            rel = lexicon.relation(a, b)
            if rel:
                raise ValueError(f"preset contains a lexicon-conflicting pair: {a}/{b} ({rel})")
    if target_d is not None:
        if target_d > len(ids):
            raise ValueError(f"target_d={target_d} exceeds descriptor count {len(ids)}")
        if target_d < len(preset):
            raise ValueError("target_d smaller than the preset list")

    stats = table.stats()
    variance = {d: stats[d]["variance"] for d in ids}
    filtered: list[FilteredDescriptor] = []

    degenerate = [d for d in ids if variance[d] == 0.0]
    bad_preset = sorted(set(degenerate) & set(preset))
    if bad_preset:
        raise ValueError(f"preset descriptors have zero score variance: {bad_preset}")
    for d in degenerate:
        filtered.append(
            FilteredDescriptor(id=d, reason="below_cut", other_id=None, stage="degenerate")
        )
    active = [d for d in ids if variance[d] > 0.0]
    if len(active) < 1:
        raise ValueError("no descriptor has score variance > 0")

    corr = np.abs(correlation_matrix(table.restrict(active)))
    index = {d: j for j, d in enumerate(active)}
    pair_values = corr[np.triu_indices(len(active), k=1)]
    threshold = float(np.median(pair_values)) if pair_values.size else 0.0

    def conflict(candidate, kept):
        """First filter reason against the kept list, or None."""
        ci = index[candidate]
        for k in kept:
            value = corr[ci, index[k]]
            if value >= DUPLICATE_CORRELATION or value > threshold:
                return FilteredDescriptor(id=candidate, reason="correlated_with", other_id=k)
        for k in kept:
            rel = lexicon.relation(candidate, k)
            if rel == "synonym":
                return FilteredDescriptor(id=candidate, reason="synonym_of", other_id=k)
            if rel == "antonym":
                return FilteredDescriptor(id=candidate, reason="antonym_of", other_id=k)
        return None

    if desc_clusters is None:
        home = {d: 0 for d in active}
    else:
        clusters = np.asarray(desc_clusters)
        if clusters.shape[0] != len(ids):
            raise ValueError("desc_clusters must align with the table's descriptors")
        home = {d: int(clusters[ids.index(d)]) for d in active}

    by_variance = sorted(active, key=lambda d: (-variance[d], d))
    preset_set = set(preset)

    # Stage 1: per-cluster greedy pass, presets pinned first in their cluster.
    cluster_survivors: list[str] = []
    for cluster_id in sorted(set(home.values())):
        members = [d for d in by_variance if home[d] == cluster_id]
        kept = [d for d in preset if d in set(members)]
        for d in members:
            if d in preset_set:
                continue
            hit = conflict(d, kept)
            if hit is None:
                kept.append(d)
            else:
                hit.stage = "cluster"
                filtered.append(hit)
        cluster_survivors.extend(kept)

    # Stage 2: merge, re-sort by variance, re-apply the same filters.
    merged = preset + sorted(
        (d for d in cluster_survivors if d not in preset_set),
        key=lambda d: (-variance[d], d),
    )
    chosen_ids: list[str] = []
    for d in merged:
        if d in preset_set:
            chosen_ids.append(d)
            continue
        hit = conflict(d, chosen_ids)
        if hit is None:
            chosen_ids.append(d)
        else:
            hit.stage = "merged"
            filtered.append(hit)

    # Stage 3: honor a requested descriptor count.
    readmitted: set = set()
    if target_d is not None and target_d < len(chosen_ids):
        for d in chosen_ids[target_d:]:
            filtered.append(
                FilteredDescriptor(id=d, reason="below_cut", other_id=None, stage="target_d")
            )
        chosen_ids = chosen_ids[:target_d]
    elif target_d is not None and target_d > len(chosen_ids):
        pool = [
            f.id
            for f in sorted(
                (f for f in filtered if f.stage != "degenerate"),
                key=lambda f: (-variance[f.id], f.id),
            )
        ]
        for d in pool:
            if len(chosen_ids) >= target_d:
                break
            if any(lexicon.relation(d, k) for k in chosen_ids):
                continue
            chosen_ids.append(d)
            readmitted.add(d)
        if len(chosen_ids) < target_d:
            raise ValueError(
                f"cannot reach target_d={target_d} without re-admitting a lexicon pair"
            )
        filtered = [f for f in filtered if f.id not in readmitted]

    chosen = [
        ChosenDescriptor(
            id=d, variance=variance[d], home_cluster=home[d], readmitted=d in readmitted
        )
        for d in chosen_ids
    ]
    clustering_info = None
    if assignment is not None:
        clustering_info = {"k": assignment.k, "silhouette": assignment.silhouette}
    return SelectionResult(
        chosen=chosen,
        filtered=filtered,
        threshold=threshold,
        preset=preset,
        target_d=target_d,
        clustering=clustering_info,
        notes={
            "threshold_scope": "global median of all pairwise |correlation| values",
            "duplicate_cut": DUPLICATE_CORRELATION,
        },
    )


# --------------------------------------------------------------------------
# Estimator wrapper


class DescriptorSelector(BaseEstimator):
    """Feature-selection style wrapper around the descriptor pipeline.

    fit() takes the score table plus optional image/text embeddings (used for
    shape-space clustering; without them every descriptor shares one
    cluster); transform() restricts a table to the chosen descriptors.
    """

    def __init__(self, lexicon=None, preset=None, target_d=None, k_min=2, k_max=10, random_state=0):
        self.lexicon = lexicon
        self.preset = preset
        self.target_d = target_d
        self.k_min = k_min
        self.k_max = k_max
        self.random_state = random_state

    def fit(self, table: ScoreTable, image_embeddings=None, text_embeddings=None):
        assignment = None
        desc_clusters = None
        if image_embeddings is not None:
            assignment = cluster_images(
                image_embeddings, k_range=(self.k_min, self.k_max), seed=self.random_state
            )
            if text_embeddings is None:
                raise ValueError("text_embeddings required when clustering images")
            desc_clusters = assign_descriptors_to_clusters(
                image_embeddings, text_embeddings, assignment
            )
        self.feature_ids_ = list(table.descriptor_ids)
        self.result_ = select(
            table,
            assignment=assignment,
            desc_clusters=desc_clusters,
            lexicon=self.lexicon,
            preset=self.preset,
            target_d=self.target_d,
        )
        self.chosen_ids_ = self.result_.chosen_ids
        return self

    def transform(self, table: ScoreTable) -> ScoreTable:
        return table.restrict(self.chosen_ids_)

    def fit_transform(self, table: ScoreTable, **fit_params) -> ScoreTable:
        return self.fit(table, **fit_params).transform(table)

    def get_support(self) -> np.ndarray:
        chosen = set(self.chosen_ids_)
        return np.array([d in chosen for d in self.feature_ids_])
