import numpy as np
import pytest

from semshape import CameraView, RenderConfig, SoftwareRasterizer, build_dataset, render_views
from semshape.dataset import CoefficientTable, DatasetManifest
from semshape.morphable import synthesize
from semshape.rendering import DegenerateMeshError


@pytest.fixture(scope="module")
def renderer():
    return SoftwareRasterizer()


@pytest.fixture(scope="module")
def small_cfg():
    return RenderConfig(views=(CameraView(), CameraView(45.0, 0.0)), image_size=64)


def test_build_dataset_writes_records_and_files(tmp_path, demo_model, renderer, small_cfg):
    manifest = build_dataset(demo_model, 4, small_cfg, renderer, tmp_path / "ds", seed=1)
    assert manifest.n_samples == 4
    for record in manifest.records:
        assert len(record.image_paths) == 2
        for v in range(2):
            assert manifest.image_path(record, v).exists()
    assert (tmp_path / "ds" / "dataset.json").exists()
    assert (tmp_path / "ds" / "coeffs.csv").exists()


def test_build_dataset_empty(tmp_path, demo_model, renderer, small_cfg):
    manifest = build_dataset(demo_model, 0, small_cfg, renderer, tmp_path / "empty", seed=1)
    assert manifest.n_samples == 0
    reloaded = DatasetManifest.load(tmp_path / "empty")
    assert reloaded.n_samples == 0


def test_build_dataset_reproducible(tmp_path, demo_model, renderer, small_cfg):
    a = build_dataset(demo_model, 3, small_cfg, renderer, tmp_path / "a", seed=9)
    b = build_dataset(demo_model, 3, small_cfg, renderer, tmp_path / "b", seed=9)
    assert (tmp_path / "a" / "dataset.json").read_bytes() == (
        tmp_path / "b" / "dataset.json"
    ).read_bytes()
    assert (tmp_path / "a" / "coeffs.csv").read_bytes() == (
        tmp_path / "b" / "coeffs.csv"
    ).read_bytes()
    for ra, rb in zip(a.records, b.records):
        assert np.array_equal(ra.xi, rb.xi)
        for v in range(2):
            assert a.image_path(ra, v).read_bytes() == b.image_path(rb, v).read_bytes()


def test_build_dataset_seed_changes_coefficients(tmp_path, demo_model, renderer, small_cfg):
    a = build_dataset(demo_model, 3, small_cfg, renderer, tmp_path / "s1", seed=1)
    b = build_dataset(demo_model, 3, small_cfg, renderer, tmp_path / "s2", seed=2)
    assert not np.array_equal(a.records[0].xi, b.records[0].xi)


def test_render_views_one_image_per_view(demo_model, renderer, small_cfg):
    mesh = synthesize(demo_model, np.zeros(10))
    images = render_views(mesh, small_cfg, renderer)
    assert len(images) == 2
    assert images[0].shape == (64, 64, 3)


def test_render_views_rejects_degenerate_mesh(demo_model, renderer, small_cfg):
    mesh = synthesize(demo_model, np.zeros(10))
    collapsed = type(mesh)(vertices=np.zeros_like(mesh.vertices), faces=mesh.faces)
    with pytest.raises(DegenerateMeshError):
        render_views(collapsed, small_cfg, renderer)


def test_build_dataset_marks_render_failures(tmp_path, demo_model, small_cfg):
    class FlakyRenderer(SoftwareRasterizer):
        def __init__(self):
            super().__init__()
            self.calls = 0

        def render(self, mesh, view, image_size, **kwargs):
            self.calls += 1
            if self.calls == 1:  # first view of the first sample fails
                raise DegenerateMeshError("synthetic failure")
            return super().render(mesh, view, image_size, **kwargs)

    manifest = build_dataset(demo_model, 3, small_cfg, FlakyRenderer(), tmp_path / "gap", seed=3)
    assert manifest.n_samples == 2
    assert len(manifest.skipped) == 1
    assert manifest.skipped[0]["sample_id"] == "s000000"
    reloaded = DatasetManifest.load(tmp_path / "gap")
    assert reloaded.skipped == manifest.skipped


def test_manifest_round_trip(tmp_path, demo_model, renderer, small_cfg):
    manifest = build_dataset(demo_model, 2, small_cfg, renderer, tmp_path / "rt", seed=4)
    reloaded = DatasetManifest.load(tmp_path / "rt")
    assert reloaded.model_id == manifest.model_id
    assert reloaded.render_config == manifest.render_config
    assert [r.sample_id for r in reloaded.records] == [r.sample_id for r in manifest.records]
    for ra, rb in zip(manifest.records, reloaded.records):
        assert np.array_equal(ra.xi, rb.xi)


def test_coefficient_table_round_trip(tmp_path):
    table = CoefficientTable(["a", "b"], np.arange(20, dtype=float).reshape(2, 10) / 7.0)
    table.save(tmp_path / "coeffs.csv")
    loaded = CoefficientTable.load(tmp_path / "coeffs.csv")
    assert loaded.sample_ids == ["a", "b"]
    assert np.array_equal(loaded.values, table.values)


def test_build_dataset_parallel_matches_serial(tmp_path, demo_model, renderer, small_cfg):
    serial = build_dataset(demo_model, 6, small_cfg, renderer, tmp_path / "w1", seed=8)
    parallel = build_dataset(
        demo_model, 6, small_cfg, renderer, tmp_path / "w4", seed=8, workers=4
    )
    assert (tmp_path / "w1" / "dataset.json").read_bytes() == (
        tmp_path / "w4" / "dataset.json"
    ).read_bytes()
    for rs, rp in zip(serial.records, parallel.records):
        for v in range(2):
            assert serial.image_path(rs, v).read_bytes() == parallel.image_path(rp, v).read_bytes()


def test_coefficient_table_from_manifest(tmp_path, demo_model, renderer, small_cfg):
    manifest = build_dataset(demo_model, 3, small_cfg, renderer, tmp_path / "ct", seed=5)
    table = manifest.coefficient_table()
    assert table.values.shape == (3, 10)
    assert table.sample_ids == [r.sample_id for r in manifest.records]
