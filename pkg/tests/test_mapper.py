import numpy as np
import pytest

from semshape import MapperArtifact, MapperConfig, ScoreToCoefficientMapper, predict, slider_ranges, train
from semshape.dataset import CoefficientTable
from semshape.demo import make_gain_matrix
from semshape.mapper import (
    DenseNetwork,
    finite_difference_gradients,
    loss_and_gradients,
    train_arrays,
)
from semshape.scoring import Descriptor, ScoreTable


def linear_problem(n=400, d=6, seed=0):
    rng = np.random.default_rng(seed)
    gain = make_gain_matrix(d, seed=seed + 1)
    coeffs = rng.uniform(-2.0, 2.0, size=(n, 10))
    scores = np.clip(coeffs @ gain.T, -1.0, 1.0)
    return scores, coeffs


def tiny_artifact(weights, n_desc, stats_value=(0.0, 1.0, 0.5)):
    lo, hi, mean = stats_value
    descriptors = [Descriptor(text=f"word {j}", id=f"w{j}") for j in range(n_desc)]
    return MapperArtifact(
        model_id="toy",
        descriptors=descriptors,
        score_stats={d.id: {"min": lo, "max": hi, "mean": mean} for d in descriptors},
        weights=weights,
    )


# --------------------------------------------------------------------------
# Gradients


@pytest.mark.parametrize("kind", ["l2", "l2_squared"])
def test_backprop_matches_central_differences(kind):
    rng = np.random.default_rng(12)
    net = DenseNetwork((3, 4, 5, 10), rng=rng)
    for _, b in net.weights:  # generic point: keep preactivations off ReLU kinks
        b += rng.normal(scale=0.1, size=b.shape)
    X = rng.normal(size=(7, 3))
    Y = rng.normal(size=(7, 10))
    _, (_, preacts) = net.forward_cached(X)
    assert min(np.abs(z).min() for z in preacts) > 1e-4
    _, analytic, _ = loss_and_gradients(net, X, Y, kind)
    numeric = finite_difference_gradients(net, X, Y, kind)
    for (aW, ab), (nW, nb) in zip(analytic, numeric):
        for a, n in ((aW, nW), (ab, nb)):
            rel = np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
            assert rel < 1e-4


def test_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    net = DenseNetwork((4, 6, 10), rng=rng)
    X = rng.normal(size=(1, 4))
    Y = rng.normal(size=(1, 10))
    _, _, input_grad = loss_and_gradients(net, X, Y, "l2_squared")
    step = 1e-6
    numeric = np.zeros_like(X)
    for i in range(X.shape[1]):
        up, down = X.copy(), X.copy()
        up[0, i] += step
        down[0, i] -= step
        up_loss = float(np.sum((net.forward(up) - Y) ** 2))
        down_loss = float(np.sum((net.forward(down) - Y) ** 2))
        numeric[0, i] = (up_loss - down_loss) / (2 * step)
    rel = np.linalg.norm(input_grad - numeric) / np.linalg.norm(numeric)
    assert rel < 1e-4


# --------------------------------------------------------------------------
# Training


def test_training_loss_decreases_on_linear_data():
    scores, coeffs = linear_problem(n=1500, d=12)
    artifact = train_arrays(scores, coeffs, MapperConfig(hidden=(64, 96), epochs=25, seed=1))
    losses = artifact.training_log["train_loss"]
    assert len(losses) == 26  # untrained baseline + one entry per epoch
    assert losses[-1] <= 0.5 * losses[0]
    assert artifact.training_log["val_loss"][-1] < 1.0


def test_training_recovers_shape_on_invertible_linear_map(demo_model):
    # 12 full-rank descriptors make the score-to-coefficient map invertible;
    # the pseudo-inverse oracle then recovers the held-out shapes almost
    # exactly, and the trained network must land within 1e-2 model units of
    # mean per-vertex error.
    from semshape.morphable import synthesize

    rng = np.random.default_rng(7)
    gain = make_gain_matrix(12, seed=8)
    coeffs = rng.uniform(-2.0, 2.0, size=(3000, 10))
    scores = np.clip(coeffs @ gain.T, -1.0, 1.0)
    X_train, Y_train = scores[:-200], coeffs[:-200]
    X_test, Y_test = scores[-200:], coeffs[-200:]
    artifact = train_arrays(
        X_train, Y_train, MapperConfig(hidden=(64, 96), epochs=15, seed=2)
    )

    def mean_vertex_distance(pred_coeffs):
        distances = []
        for p, t in zip(pred_coeffs, Y_test):
            dv = synthesize(demo_model, p).vertices - synthesize(demo_model, t).vertices
            distances.append(np.linalg.norm(dv, axis=1).mean())
        return float(np.mean(distances))

    mlp_err = mean_vertex_distance(predict(artifact, X_test))
    design = np.hstack([X_train, np.ones((X_train.shape[0], 1))])
    weights, *_ = np.linalg.lstsq(design, Y_train, rcond=None)
    oracle_err = mean_vertex_distance(np.hstack([X_test, np.ones((200, 1))]) @ weights)
    assert oracle_err < mlp_err < 1e-2


def test_training_rejects_empty_rows():
    with pytest.raises(ValueError, match="no training rows"):
        train_arrays(np.empty((0, 3)), np.empty((0, 10)))


def test_training_rejects_row_mismatch():
    with pytest.raises(ValueError, match="row mismatch"):
        train_arrays(np.zeros((4, 3)), np.zeros((5, 10)))


def test_training_rejects_zero_variance_column():
    scores, coeffs = linear_problem(n=50)
    scores[:, 2] = 0.7
    with pytest.raises(ValueError, match="zero-variance"):
        train_arrays(scores, coeffs, MapperConfig(hidden=(8,), epochs=1))


def test_training_constant_target_converges_to_constant():
    rng = np.random.default_rng(9)
    scores = rng.uniform(0.0, 1.0, size=(300, 4))
    target = np.linspace(-0.8, 1.0, 10)
    coeffs = np.tile(target, (300, 1))
    artifact = train_arrays(
        scores,
        coeffs,
        MapperConfig(hidden=(8,), epochs=500, seed=2, loss="l2_squared", learning_rate=1e-2),
    )
    pred = predict(artifact, rng.uniform(0.0, 1.0, size=(50, 4)))
    assert np.abs(pred - target).max() < 1e-3


def test_training_deterministic_per_seed():
    scores, coeffs = linear_problem(n=200)
    cfg = MapperConfig(hidden=(16, 24), epochs=3, seed=11)
    a = train_arrays(scores, coeffs, cfg)
    b = train_arrays(scores, coeffs, cfg)
    for (wa, ba), (wb, bb) in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)
        assert np.array_equal(ba, bb)
    assert a.training_log == b.training_log


def test_train_joins_tables_on_sample_id():
    scores, coeffs = linear_problem(n=40)
    ids = [f"s{i}" for i in range(40)]
    table = ScoreTable(
        sample_ids=ids, descriptor_ids=[f"w{j}" for j in range(6)], values=scores
    )
    shuffled = np.random.default_rng(0).permutation(40)
    coeff_table = CoefficientTable(
        [ids[i] for i in shuffled], coeffs[shuffled]
    )
    artifact = train(table, coeff_table, MapperConfig(hidden=(16,), epochs=2, seed=0))
    direct = train_arrays(
        scores,
        coeffs,
        MapperConfig(hidden=(16,), epochs=2, seed=0),
        descriptors=[Descriptor(text=f"w{j}", id=f"w{j}") for j in range(6)],
    )
    for (wa, ba), (wb, bb) in zip(artifact.weights, direct.weights):
        assert np.array_equal(wa, wb)


def test_train_missing_coefficients_rejected():
    table = ScoreTable(sample_ids=["a", "b"], descriptor_ids=["w"], values=[[0.1], [0.5]])
    coeffs = CoefficientTable(["a"], np.zeros((1, 10)))
    with pytest.raises(ValueError, match="missing"):
        train(table, coeffs)


@pytest.mark.filterwarnings("ignore:overflow")
def test_training_nan_loss_aborts():
    scores, coeffs = linear_problem(n=60)
    coeffs = coeffs * 1e200  # squared residuals overflow to inf
    with pytest.raises(ValueError, match="diverged"):
        train_arrays(scores, coeffs, MapperConfig(hidden=(8,), epochs=2, loss="l2_squared"))


# --------------------------------------------------------------------------
# Prediction


def test_predict_is_pure_and_batched():
    scores, coeffs = linear_problem(n=80)
    artifact = train_arrays(scores, coeffs, MapperConfig(hidden=(16,), epochs=2, seed=3))
    one = predict(artifact, scores[0])
    again = predict(artifact, scores[0])
    assert np.array_equal(one, again)
    batch = predict(artifact, scores[:4])
    assert batch.shape == (4, 10)
    # batched GEMM may order summations differently than a single row
    assert np.allclose(batch[0], one, rtol=1e-12, atol=1e-12)


def test_predict_zeroed_final_layer_returns_bias():
    rng = np.random.default_rng(2)
    weights = [
        (rng.normal(size=(3, 4)), rng.normal(size=4)),
        (np.zeros((4, 10)), np.linspace(0, 9, 10)),
    ]
    artifact = tiny_artifact(weights, n_desc=3)
    out = predict(artifact, [0.2, 0.4, 0.9])
    assert np.allclose(out, np.linspace(0, 9, 10))


def test_predict_width_mismatch():
    artifact = tiny_artifact([(np.zeros((3, 10)), np.zeros(10))], n_desc=3)
    with pytest.raises(ValueError, match="width"):
        predict(artifact, [0.1, 0.2])


def test_predict_training_row_within_recorded_residual():
    scores, coeffs = linear_problem(n=300)
    artifact = train_arrays(scores, coeffs, MapperConfig(hidden=(32, 32), epochs=20, seed=4))
    sample_errors = np.linalg.norm(predict(artifact, scores) - coeffs, axis=1)
    # the logged residual summary bounds what training itself achieved
    assert np.percentile(sample_errors, 50) <= artifact.training_log["train_residual_p95"]


# --------------------------------------------------------------------------
# Slider ranges and artifact plumbing


def test_slider_ranges_pass_through():
    artifact = tiny_artifact(
        [(np.zeros((1, 10)), np.zeros(10))], n_desc=1, stats_value=(0.18, 0.31, 0.24)
    )
    ranges = slider_ranges(artifact)
    assert ranges["w0"] == {"lo": 0.18, "hi": 0.31, "default": 0.24}
    # affine slider contract: fraction t maps to lo + t * (hi - lo)
    lo, hi = ranges["w0"]["lo"], ranges["w0"]["hi"]
    assert lo + 0.5 * (hi - lo) == pytest.approx(0.245)


def test_artifact_validates_shapes():
    with pytest.raises(ValueError, match="output width"):
        tiny_artifact([(np.zeros((3, 9)), np.zeros(9))], n_desc=3)
    with pytest.raises(ValueError, match="input width"):
        tiny_artifact([(np.zeros((4, 10)), np.zeros(10))], n_desc=3)
    with pytest.raises(ValueError, match="degenerate"):
        tiny_artifact([(np.zeros((1, 10)), np.zeros(10))], n_desc=1, stats_value=(0.5, 0.5, 0.5))


def test_artifact_round_trip_bit_identical(tmp_path):
    scores, coeffs = linear_problem(n=150)
    artifact = train_arrays(scores, coeffs, MapperConfig(hidden=(24, 16), epochs=3, seed=6))
    artifact.save(tmp_path)
    loaded = MapperArtifact.load(tmp_path)
    rng = np.random.default_rng(8)
    probes = rng.uniform(-1.0, 1.0, size=(100, scores.shape[1]))
    assert np.array_equal(predict(artifact, probes), predict(loaded, probes))
    assert loaded.descriptor_ids == artifact.descriptor_ids
    assert loaded.training_log == artifact.training_log


def test_artifact_save_bytes_deterministic(tmp_path):
    scores, coeffs = linear_problem(n=100)
    cfg = MapperConfig(hidden=(16,), epochs=2, seed=7)
    train_arrays(scores, coeffs, cfg).save(tmp_path / "a")
    train_arrays(scores, coeffs, cfg).save(tmp_path / "b")
    assert (tmp_path / "a" / "weights.bin").read_bytes() == (
        tmp_path / "b" / "weights.bin"
    ).read_bytes()
    assert (tmp_path / "a" / "mapper.json").read_bytes() == (
        tmp_path / "b" / "mapper.json"
    ).read_bytes()


def test_artifact_rejects_corrupt_weights(tmp_path):
    scores, coeffs = linear_problem(n=60)
    artifact = train_arrays(scores, coeffs, MapperConfig(hidden=(8,), epochs=1, seed=0))
    artifact.save(tmp_path)
    payload = (tmp_path / "weights.bin").read_bytes()
    (tmp_path / "weights.bin").write_bytes(payload[:-8])
    with pytest.raises(ValueError, match="weight payload"):
        MapperArtifact.load(tmp_path)


# --------------------------------------------------------------------------
# Estimator wrapper


def test_estimator_fit_predict_and_params():
    scores, coeffs = linear_problem(n=120)
    est = ScoreToCoefficientMapper(hidden=(16, 16), epochs=3, seed=1)
    est.fit(scores, coeffs)
    pred = est.predict(scores[:5])
    assert pred.shape == (5, 10)
    params = est.get_params()
    assert params["epochs"] == 3 and params["hidden"] == (16, 16)
    clone_pred = ScoreToCoefficientMapper(**params).fit(scores, coeffs).predict(scores[:5])
    assert np.array_equal(pred, clone_pred)


def test_default_config_matches_published_choices():
    cfg = MapperConfig()
    assert cfg.hidden == (500, 800)
    assert cfg.epochs == 50
    assert cfg.loss == "l2"
