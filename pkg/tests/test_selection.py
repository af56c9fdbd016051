import numpy as np
import pytest

from semshape import (
    DescriptorSelector,
    Lexicon,
    SelectionResult,
    SilhouetteKMeans,
    assign_descriptors_to_clusters,
    cluster_images,
    correlation_matrix,
    select,
)
from semshape.scoring import ScoreTable
from semshape.selection import ClusterAssignment


def score_table(columns: dict, n_repeat=1) -> ScoreTable:
    ids = list(columns)
    values = np.column_stack([np.tile(columns[d], n_repeat) for d in ids])
    return ScoreTable(
        sample_ids=[f"s{i}" for i in range(values.shape[0])],
        descriptor_ids=ids,
        values=values,
    )


def orthogonal_columns(n_cols: int, n_tiles: int = 60) -> list[np.ndarray]:
    """Columns from a 16x16 Sylvester-Hadamard matrix (all-ones row dropped),
    tiled. Pairwise Pearson correlations and means are exactly zero in
    float64 because every sum cancels over integers."""
    if n_cols > 15:
        raise ValueError("only 15 exactly-orthogonal columns available")
    h = np.array([[1.0]])
    while h.shape[0] < 16:
        h = np.block([[h, h], [h, -h]])
    return [np.tile(h[:, j + 1], n_tiles) for j in range(n_cols)]


# --------------------------------------------------------------------------
# Clustering


def blob_data(n_per=50, separation=10.0, dim=4, seed=0):
    # scale 0.25 keeps mean intra-cluster distance ~0.66, so the silhouette
    # of the two-blob case is ~1 - 0.66/10 = 0.93
    rng = np.random.default_rng(seed)
    a = rng.normal(scale=0.25, size=(n_per, dim))
    b = rng.normal(scale=0.25, size=(n_per, dim))
    b[:, 0] += separation
    return np.vstack([a, b])


def test_cluster_two_blobs_finds_k2():
    X = blob_data()
    assignment = cluster_images(X, k_range=(2, 6), seed=0)
    assert assignment.k == 2
    # well separated blobs: silhouette approaches 1 - intra/inter
    assert assignment.silhouette > 0.9
    first = assignment.labels[:50]
    assert len(set(first.tolist())) == 1


def test_cluster_identical_points_rejected():
    X = np.ones((40, 3))
    with pytest.raises(ValueError, match="degenerate"):
        cluster_images(X, k_range=(2, 4), seed=0)


def test_cluster_too_few_samples_rejected():
    with pytest.raises(ValueError, match="at least"):
        cluster_images(np.random.default_rng(0).normal(size=(3, 2)), k_range=(2, 3))


def test_cluster_deterministic():
    X = blob_data(seed=4)
    a = cluster_images(X, k_range=(2, 5), seed=9)
    b = cluster_images(X, k_range=(2, 5), seed=9)
    assert a.k == b.k
    assert np.array_equal(a.labels, b.labels)


def test_silhouette_kmeans_estimator_api():
    X = blob_data(seed=2)
    est = SilhouetteKMeans(k_min=2, k_max=5, random_state=1)
    labels = est.fit_predict(X)
    assert est.n_clusters_ == 2
    assert labels.shape == (100,)
    assert est.get_params()["k_max"] == 5
    assert set(est.scores_) == {2, 3, 4, 5}


# --------------------------------------------------------------------------
# Descriptor voting


def test_vote_assignment_by_hand():
    # 4 images in 2 equal clusters; descriptor embeddings are one-hot, so an
    # image's top-5 descriptors are simply its 5 largest coordinates.
    text_embs = np.eye(6)
    cluster_a = [0.9, 0.5, 0.4, 0.3, 0.2, 0.0]  # top5 = {0,1,2,3,4}
    cluster_b = [0.0, 0.5, 0.4, 0.3, 0.2, 0.9]  # top5 = {1,2,3,4,5}
    image_embs = np.array([cluster_a, cluster_a, cluster_b, cluster_b])
    assignment = ClusterAssignment(
        k=2, labels=np.array([0, 0, 1, 1]), silhouette=1.0, centroids=np.zeros((2, 6))
    )
    clusters = assign_descriptors_to_clusters(image_embs, text_embs, assignment)
    assert clusters[0] == 0  # voted only by cluster 0, normalized vote 1.0
    assert clusters[5] == 1  # voted only by cluster 1
    # descriptors 1..4 tie between clusters -> lower cluster index wins
    assert clusters[1] == 0 and clusters[4] == 0


def test_vote_single_cluster_takes_everything():
    text_embs = np.eye(3)
    image_embs = np.array([[0.5, 0.2, 0.1], [0.1, 0.9, 0.3]])
    assignment = ClusterAssignment(
        k=1, labels=np.zeros(2, dtype=int), silhouette=0.0, centroids=np.zeros((1, 3))
    )
    clusters = assign_descriptors_to_clusters(image_embs, text_embs, assignment)
    assert np.array_equal(clusters, [0, 0, 0])


def test_vote_fewer_than_five_descriptors():
    text_embs = np.eye(2)
    image_embs = np.array([[0.9, 0.1], [0.8, 0.3]])
    assignment = ClusterAssignment(
        k=1, labels=np.zeros(2, dtype=int), silhouette=0.0, centroids=np.zeros((1, 2))
    )
    clusters = assign_descriptors_to_clusters(image_embs, text_embs, assignment)
    assert clusters.shape == (2,)


# --------------------------------------------------------------------------
# Correlation


def test_correlation_affine_and_negated():
    x = np.array([0.1, 0.4, 0.2, 0.9, 0.5])
    table = score_table({"x": x, "double": 2 * x, "neg": -x})
    corr = correlation_matrix(table)
    assert corr[0, 1] == pytest.approx(1.0)
    assert corr[0, 2] == pytest.approx(-1.0)
    assert np.array_equal(np.diag(corr), np.ones(3))


def test_correlation_independent_noise_is_small():
    rng = np.random.default_rng(17)
    table = score_table({"a": rng.normal(size=1000), "b": rng.normal(size=1000)})
    corr = correlation_matrix(table)
    assert abs(corr[0, 1]) < 0.1


def test_correlation_rejects_zero_variance():
    table = score_table({"x": np.array([0.1, 0.2, 0.3]), "flat": np.full(3, 0.5)})
    with pytest.raises(ValueError, match="zero-variance"):
        correlation_matrix(table)


def test_correlation_rejects_single_sample():
    table = score_table({"x": np.array([0.1]), "y": np.array([0.2])})
    with pytest.raises(ValueError, match="2 samples"):
        correlation_matrix(table)


# --------------------------------------------------------------------------
# Lexicon


def test_lexicon_relations_and_round_trip(tmp_path):
    lex = Lexicon(synonyms={("happy", "smiling")}, antonyms={("tall", "short")})
    assert lex.relation("smiling", "happy") == "synonym"
    assert lex.relation("short", "tall") == "antonym"
    assert lex.relation("tall", "happy") is None
    lex.save(tmp_path / "lexicon.json")
    assert Lexicon.load(tmp_path / "lexicon.json") == lex


def test_lexicon_rejects_pair_in_both():
    with pytest.raises(ValueError, match="both"):
        Lexicon(synonyms={("a", "b")}, antonyms={("b", "a")})


def test_lexicon_rejects_self_pair():
    with pytest.raises(ValueError, match="distinct"):
        Lexicon(synonyms={("a", "a")})


# --------------------------------------------------------------------------
# Selection


def test_select_drops_perfect_duplicate_keeps_higher_variance():
    base = np.array([0.1, 0.5, 0.3, 0.9, 0.2])
    table = score_table({"big": 2 * base, "smallcopy": base})
    result = select(table)
    assert result.chosen_ids == ["big"]
    assert result.filtered[0].id == "smallcopy"
    assert result.filtered[0].reason == "correlated_with"
    assert result.filtered[0].other_id == "big"


def test_select_six_independents_among_duplicates():
    cols = orthogonal_columns(6)
    columns = {}
    for j, col in enumerate(cols):
        columns[f"base{j}"] = (6 - j) * col  # distinct variances, exact zero corr
    for j, col in enumerate(cols):
        columns[f"copy{j}"] = (6 - j) * col  # exact duplicates
    table = score_table(columns)
    result = select(table)
    # brute-force audit: duplicates correlate at 1, independents at exactly 0
    assert sorted(result.chosen_ids) == [f"base{j}" for j in range(6)]
    corr = np.abs(correlation_matrix(table))
    idx = {d: i for i, d in enumerate(table.descriptor_ids)}
    for a in result.chosen_ids:
        for b in result.chosen_ids:
            if a != b:
                assert corr[idx[a], idx[b]] <= result.threshold


def test_select_antonym_pair_keeps_first_by_variance():
    cols = orthogonal_columns(4)
    table = score_table(
        {"tall": 4 * cols[0], "short": 3 * cols[1], "lean": 2 * cols[2], "round": cols[3]}
    )
    lex = Lexicon(antonyms={("tall", "short")})
    result = select(table, lexicon=lex)
    assert "tall" in result.chosen_ids and "short" not in result.chosen_ids
    dropped = {f.id: f for f in result.filtered}
    assert dropped["short"].reason == "antonym_of"
    assert dropped["short"].other_id == "tall"


def test_select_respects_clusters_stagewise():
    # two descriptors fully correlated but in different clusters both survive
    # the per-cluster pass; the merged pass then removes the weaker one.
    base = np.array([0.1, 0.5, 0.3, 0.9, 0.2, 0.7])
    cols = orthogonal_columns(2, n_tiles=1)[0][:6]
    table = score_table({"a": 2 * base, "b": base, "c": cols})
    result = select(table, desc_clusters=[0, 1, 0])
    assert "a" in result.chosen_ids and "b" not in result.chosen_ids
    merged_filtered = [f for f in result.filtered if f.id == "b"]
    assert merged_filtered[0].stage == "merged"


def test_select_preset_always_kept_and_pinned_first():
    cols = orthogonal_columns(5)
    table = score_table({f"w{j}": (j + 1) * cols[j] for j in range(5)})
    result = select(table, preset=["w0"])  # lowest variance, would sort last
    assert result.chosen_ids[0] == "w0"
    rest = result.chosen_ids[1:]
    variances = {c.id: c.variance for c in result.chosen}
    assert rest == sorted(rest, key=lambda d: (-variances[d], d))


def test_select_preset_conflicts_rejected():
    cols = orthogonal_columns(2)
    table = score_table({"tall": cols[0], "short": cols[1]})
    lex = Lexicon(antonyms={("tall", "short")})
    with pytest.raises(ValueError, match="lexicon-conflicting"):
        select(table, lexicon=lex, preset=["tall", "short"])


def test_select_target_d_truncates_from_bottom():
    cols = orthogonal_columns(6)
    table = score_table({f"w{j}": (6 - j) * cols[j] for j in range(6)})
    result = select(table, target_d=3)
    assert result.chosen_ids == ["w0", "w1", "w2"]
    cut = [f for f in result.filtered if f.stage == "target_d"]
    assert sorted(f.id for f in cut) == ["w3", "w4", "w5"]


def test_select_target_d_readmits_filtered_by_variance():
    base = orthogonal_columns(3)
    table = score_table(
        {
            "a": 4 * base[0],
            "a_copy": 4 * base[0],  # filtered as duplicate of a
            "b": 2 * base[1],
            "b_copy": 2 * base[1],
        }
    )
    result = select(table, target_d=3)
    assert result.chosen_ids[:2] == ["a", "b"]
    assert result.chosen_ids[2] == "a_copy"  # higher variance than b_copy
    assert result.chosen[2].readmitted


def test_select_target_d_never_readmits_lexicon_pairs():
    cols = orthogonal_columns(2)
    table = score_table({"tall": 2 * cols[0], "short": cols[1]})
    lex = Lexicon(antonyms={("tall", "short")})
    with pytest.raises(ValueError, match="lexicon"):
        select(table, lexicon=lex, target_d=2)


def test_select_target_d_monotone_readmission():
    cols = orthogonal_columns(4)
    columns = {}
    for j in range(4):
        columns[f"w{j}"] = (4 - j) * cols[j]
        columns[f"w{j}_copy"] = (4 - j) * cols[j]
    table = score_table(columns)
    previous: list[str] = []
    for d in range(1, 9):
        chosen = select(table, target_d=d).chosen_ids
        assert set(previous).issubset(set(chosen))
        previous = chosen


def test_select_target_d_bounds():
    cols = orthogonal_columns(2)
    table = score_table({"a": cols[0], "b": cols[1]})
    with pytest.raises(ValueError, match="exceeds"):
        select(table, target_d=5)


def test_select_zero_variance_descriptor_reported():
    cols = orthogonal_columns(2)
    table = score_table({"a": cols[0], "b": cols[1], "flat": np.zeros_like(cols[0])})
    result = select(table)
    assert "flat" not in result.chosen_ids
    flat = [f for f in result.filtered if f.id == "flat"][0]
    assert flat.stage == "degenerate"


def test_select_deterministic_and_serializable(tmp_path):
    rng = np.random.default_rng(0)
    table = score_table({f"w{j}": rng.normal(size=200) for j in range(8)})
    a = select(table)
    b = select(table)
    assert a.to_json() == b.to_json()
    a.save(tmp_path / "selection.json")
    loaded = SelectionResult.load(tmp_path / "selection.json")
    assert loaded.to_json() == a.to_json()


def test_select_variance_ordering_invariant():
    rng = np.random.default_rng(3)
    table = score_table({f"w{j}": rng.normal(size=300) * (1 + j % 3) for j in range(10)})
    result = select(table)
    variances = [c.variance for c in result.chosen]
    assert all(va >= vb for va, vb in zip(variances, variances[1:]))


def test_descriptor_selector_estimator():
    cols = orthogonal_columns(6)
    columns = {f"base{j}": (6 - j) * cols[j] for j in range(6)}
    columns.update({f"copy{j}": (6 - j) * cols[j] for j in range(3)})
    table = score_table(columns)
    selector = DescriptorSelector().fit(table)
    reduced = selector.transform(table)
    assert reduced.descriptor_ids == selector.chosen_ids_
    assert selector.get_support().sum() == len(selector.chosen_ids_)
    assert selector.get_params()["target_d"] is None


def test_descriptor_selector_with_clustering():
    X = blob_data(n_per=30, seed=5)
    rng = np.random.default_rng(6)
    table = score_table({f"w{j}": rng.normal(size=60) for j in range(6)})
    text_embs = rng.normal(size=(6, 4))
    selector = DescriptorSelector(k_min=2, k_max=4).fit(
        table, image_embeddings=X, text_embeddings=text_embs
    )
    assert selector.result_.clustering["k"] == 2
    homes = {c.home_cluster for c in selector.result_.chosen}
    assert homes.issubset({0, 1})
