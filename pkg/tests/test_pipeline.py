import json

import numpy as np
import pytest

from gssplat.errors import ConfigurationError, ContractError, FormatError, NumericalError
from gssplat.geometry import project_points, unproject_depth
from gssplat.gradcheck import micro_scene
from gssplat.neural import HybridNetConfig
from gssplat.pipeline import (FitConfig, GSsplatModel, OrbitSpec, ReconstructionConfig,
                              SceneSpec, TrainConfig, ViewSet, evaluate, fit_scene,
                              generate_scene, initial_fields, load_split, random_scene_spec,
                              read_scene, reconstruct, train, write_manifest, write_scene)
from gssplat.pipeline.evaluate import METRIC_KEYS, without_timing, write_report
from gssplat.pipeline.model import load_model, save_model, select_pixels
from gssplat.pipeline.scenes import FLOOR_CLASS, WALL_CLASS, orbit_cameras, raycast
from gssplat.pipeline.train import pool_views, sample_views, scene_losses
from gssplat.rasterizer import RasterConfig

TINY = HybridNetConfig(2, 1, 8, 8, 6)


@pytest.fixture(scope="module")
def scene():
    return generate_scene(random_scene_spec(1, width=16, height=16))


def test_spec_round_trip_and_validation():
    spec = random_scene_spec(4)
    doc = json.loads(json.dumps(spec.to_dict()))
    again = SceneSpec.from_dict(doc)
    assert json.loads(json.dumps(again.to_dict())) == doc
    with pytest.raises(ConfigurationError):
        SceneSpec.from_dict({**spec.to_dict(), "colour": 1})
    with pytest.raises(ConfigurationError):
        orbit_cameras(SceneSpec(seed=0, width=30, height=32), np.random.default_rng(0))


def test_generation_is_deterministic():
    a = generate_scene(random_scene_spec(2, width=16, height=16))
    b = generate_scene(random_scene_spec(2, width=16, height=16))
    assert np.array_equal(a.source.images, b.source.images)
    assert np.array_equal(a.novel.labels, b.novel.labels)


def test_raycast_depth_is_consistent_with_geometry(scene):
    spec = scene.spec
    cam = scene.source.cameras[0]
    rgb, depth, labels = raycast(spec, cam)
    assert rgb.min() >= 0 and rgb.max() <= 1
    pts = unproject_depth(cam, depth)
    _, z, _ = project_points(cam, pts)
    assert np.allclose(np.sort(z), np.sort(depth[depth > 0]))
    present = set(np.unique(labels)) - {255}
    assert {FLOOR_CLASS, WALL_CLASS} <= present
    assert max(present) < spec.n_classes


def test_reference_field_scene_labels():
    spec = SceneSpec(seed=3, renderer="reference_field", width=16, height=16,
                     reference_gaussians=80,
                     orbit=OrbitSpec(n_source=3, n_novel=1, arc_degrees=360, target=(0, 0, 0)))
    data = generate_scene(spec)
    lab = data.source.labels
    assert len(data.reference) == 80
    assert np.array_equal(lab == 255, data.source.depths == 0)
    assert lab[lab != 255].max() < 6


def test_novel_cameras_differ_from_sources(scene):
    src = np.array([c.pose.translation for c in scene.source.cameras])
    for cam in scene.novel.cameras:
        assert np.linalg.norm(src - cam.pose.translation, axis=1).min() > 1e-3


def test_dataset_round_trip(tmp_path, scene):
    write_scene(tmp_path / "s", scene.source, scene.novel)
    src, novel = read_scene(tmp_path / "s")
    assert np.abs(src.images - scene.source.images).max() <= 0.5 / 255 + 1e-12
    assert np.allclose(src.depths, scene.source.depths, rtol=1e-6)
    assert np.array_equal(novel.labels, scene.novel.labels)
    assert src.scene_id == scene.source.scene_id and src.n_classes == 6
    write_manifest(tmp_path, ["s"], ["s"], ["s"])
    assert len(load_split(tmp_path, "train")) == 1
    with pytest.raises(FormatError):
        load_split(tmp_path, "val")
    with pytest.raises(FormatError):
        read_scene(tmp_path / "missing")


def test_viewset_validation(scene):
    v = scene.source
    with pytest.raises(ContractError):
        ViewSet(v.images, v.depths[:, :-1], v.cameras)
    with pytest.raises(ContractError):
        ViewSet(v.images, v.depths, v.cameras[:-1])
    assert len(v.subset([0, 2])) == 2


def test_gaussian_count_law_and_shared_centres(scene):
    model = GSsplatModel(TINY)
    res = reconstruct(model, scene.source)
    assert res.n_gaussians == sum(scene.source.valid_counts())
    assert len(res.semantic) == res.n_gaussians
    unmoved_c = res.offset_prob_color <= 0.5
    unmoved_s = res.offset_prob_semantic <= 0.5
    both = unmoved_c & unmoved_s
    assert np.array_equal(res.color.centers[both], res.semantic.centers[both])
    assert np.array_equal(res.color.centers[both], res.positions[both])
    assert np.abs(res.color.centers - res.positions).max() <= res.unit_interval
    res.color.check_invariants()
    res.semantic.check_invariants()


def test_subsampling_thins_gaussians(scene):
    model = GSsplatModel(TINY, ReconstructionConfig(subsample_stride=2))
    res = reconstruct(model, scene.source)
    assert res.n_gaussians == int(select_pixels(scene.source.depths, 2).sum())


def test_reconstruct_is_pure(scene):
    model = GSsplatModel(TINY)
    a, b = reconstruct(model, scene.source), reconstruct(model, scene.source)
    for name in ("centers", "quaternions", "log_scales", "opacity_logits", "payloads"):
        assert np.array_equal(getattr(a.color, name), getattr(b.color, name))
        assert np.array_equal(getattr(a.semantic, name), getattr(b.semantic, name))
    assert set(a.timings) == {"network", "init", "interaction", "heads", "total"}


def test_model_checkpoint_round_trip(tmp_path, scene):
    model = GSsplatModel(TINY, ReconstructionConfig(interaction=False))
    save_model(tmp_path / "m.gsnn", model)
    back = load_model(tmp_path / "m.gsnn")
    assert back.config == model.config and back.net_config == model.net_config
    a, b = reconstruct(model, scene.source), reconstruct(back, scene.source)
    assert np.array_equal(a.semantic.payloads, b.semantic.payloads)
    (tmp_path / "m.gsnn.json").unlink()
    with pytest.raises(FormatError):
        load_model(tmp_path / "m.gsnn")


def test_sample_views_disjoint():
    rng = np.random.default_rng(0)
    for _ in range(50):
        src, tgt = sample_views(rng, 5, 3)
        assert len(set(src)) == 3 and tgt not in src
    with pytest.raises(ConfigurationError):
        sample_views(rng, 2, 2)


def test_scene_losses_report_parts(scene):
    model = GSsplatModel(TINY)
    views = pool_views(scene.source, scene.novel)
    cfg = TrainConfig(raster=RasterConfig(tile_size=8))
    total, rep = scene_losses(model, views.subset([0, 1]), views.subset([2]), cfg)
    assert float(total.data) == pytest.approx(rep.color + rep.semantic + 0.2 * rep.offset,
                                              abs=1e-12)
    assert rep.color > 0 and rep.semantic > 0 and rep.offset >= 0


def test_short_training_run_decreases_loss():
    scenes = [(micro_scene(), None)]
    model = GSsplatModel(HybridNetConfig(2, 1, 8, 8, 3))
    res = train(scenes, model, TrainConfig(steps=30, lr=3e-3, log_every=0))
    start = np.mean([h["total"] for h in res.history[:5]])
    end = np.mean([h["total"] for h in res.history[-5:]])
    assert end < start and res.skipped == 0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_aborts_on_persistent_nan():
    source = micro_scene()
    bad = ViewSet(source.images * np.nan, source.depths, source.cameras, source.labels,
                  n_classes=3)
    with pytest.raises(NumericalError):
        train([(bad, None)], GSsplatModel(HybridNetConfig(2, 1, 8, 8, 3)),
              TrainConfig(steps=5, log_every=0))


def test_fit_improves_psnr(scene):
    cfg = FitConfig(steps=60, stride=2)
    res = fit_scene(scene.source, cfg)
    hist = res.history["color"]
    assert np.mean([h["psnr"] for h in hist[-10:]]) > np.mean([h["psnr"] for h in hist[:10]])
    ce = res.history["semantic"]
    assert np.mean([h["ce"] for h in ce[-10:]]) < np.mean([h["ce"] for h in ce[:10]])


def test_fit_without_steps_returns_initialisation(scene):
    init = initial_fields(scene.source, FitConfig(stride=4))
    res = fit_scene(scene.source, FitConfig(steps=0, stride=4))
    assert np.array_equal(res.color.centers, init[0].centers)
    assert res.semantic.channels == 6


def test_evaluate_report(tmp_path, scene):
    model = GSsplatModel(TINY)
    report = evaluate([(scene.source, scene.novel)], model=model)
    assert report["n_scenes"] == 1 and set(METRIC_KEYS) <= set(report)
    assert report["scenes"][0]["views"] == "novel"
    again = evaluate([(scene.source, scene.novel)], model=model)
    assert without_timing(report) == without_timing(again)
    write_report(tmp_path / "r.json", report)
    assert json.loads((tmp_path / "r.json").read_text())["version"] == 1
    fields = [(reconstruct(model, scene.source).color, None)]
    rep2 = evaluate([(scene.source, scene.novel)], fields=fields)
    assert rep2["miou"] is None and rep2["psnr"] == pytest.approx(report["psnr"])
    with pytest.raises(ContractError):
        evaluate([(scene.source, None)])
