"""Synthetic scene generation: cameras, projected annotations, volumes."""

import json
import math

import numpy as np
import pytest

from poolkey import (
    DecodeParams,
    EvalParams,
    Homography,
    NoiseParams,
    PoolConfig,
    SamplingError,
    SynthParams,
    ValidationError,
    build_base_model,
    channel_entropy,
    decode,
    evaluate,
    generate_dataset,
    make_scene,
    match_frame,
    perfect_detections,
    project,
    project_scene,
    read_annotation,
    read_volume,
    sample_camera,
    synthesize_volume,
)
from poolkey.model import (
    KeyPointClass,
    base_pixel_coordinates,
    canonical_channel_index,
)
from poolkey.synth import CameraJitter

MODEL = build_base_model(PoolConfig(lanes=8, length_m=50))


def _small(view="full", **kw) -> SynthParams:
    return SynthParams(frame_rows=72, frame_cols=128, view=view, **kw)


def test_make_scene_is_deterministic():
    params = SynthParams(seed=12)
    a = make_scene(MODEL, params, 4)
    b = make_scene(MODEL, params, 4)
    assert a.homography_gt.flat() == b.homography_gt.flat()
    assert a.annotation == b.annotation
    assert (a.volume.data == b.volume.data).all()
    c = make_scene(MODEL, params, 5)
    assert c.homography_gt.flat() != a.homography_gt.flat()


def test_full_view_without_jitter_is_the_centered_fit():
    params = SynthParams(jitter=CameraJitter.none(), seed=0)
    camera = sample_camera(MODEL, params)
    basin_px = MODEL.basin_length_m * 20.0
    height_px = MODEL.width_m * 20.0
    left = project(camera, (0.0, 0.0))
    right = project(camera, (basin_px, height_px))
    # the fit centers the pool, so opposite corners mirror about the center
    assert left[0] + right[0] == pytest.approx(512.0, abs=1e-9)
    assert left[1] + right[1] == pytest.approx(288.0, abs=1e-9)
    assert 0 < min(left[0], right[0]) and max(left[0], right[0]) < 511
    assert 0 < min(left[1], right[1]) and max(left[1], right[1]) < 287
    # 88 percent fit on the binding axis (width here)
    assert abs(right[0] - left[0]) == pytest.approx(0.88 * 512.0, abs=1e-9)


def test_full_view_contains_every_fixed_point_and_no_floating():
    for seed in range(20):
        scene = make_scene(MODEL, SynthParams(seed=seed), 0)
        classes = {p.kp.cls for p in scene.annotation.points}
        assert KeyPointClass.FLOATING_LEFT not in classes
        assert KeyPointClass.FLOATING_RIGHT not in classes
        fixed_ids = {
            kp
            for kp, loc in base_pixel_coordinates(MODEL, 20.0)
            if loc.x_px is not None
        }
        assert {p.kp for p in scene.annotation.points} == fixed_ids


def test_partial_view_drops_one_wall_and_keeps_floating_points():
    for seed in range(20):
        scene = make_scene(MODEL, SynthParams(view="partial", seed=seed), 0)
        classes = [p.kp.cls for p in scene.annotation.points]
        left = classes.count(KeyPointClass.WALL_LEFT)
        right = classes.count(KeyPointClass.WALL_RIGHT)
        assert left == 0 or right == 0
        floating = sum(
            1
            for c in classes
            if c in (KeyPointClass.FLOATING_LEFT, KeyPointClass.FLOATING_RIGHT)
        )
        assert floating >= 2


def test_scene_points_are_consistent_with_the_ground_truth_homography():
    base = dict(base_pixel_coordinates(MODEL, 20.0))
    for view in ("full", "partial"):
        scene = make_scene(MODEL, SynthParams(view=view, seed=3), 2)
        for point in scene.annotation.points:
            x, y = project(scene.homography_gt, (point.u, point.v))
            loc = base[point.kp]
            if loc.x_px is not None:
                assert math.dist((x, y), (loc.x_px, loc.y_px)) < 1e-6
            else:
                assert abs(y - loc.y_px) < 1e-6
                assert point.u in (0.0, 511.0)


def test_hand_built_clipped_camera_produces_exact_floating_points():
    # pure translation: u = x - 600, v = 350 - y, so the left wall (x=0)
    # sits 600 px off-frame and rows 63..350 px of the basin are visible
    camera = Homography([[1.0, 0.0, -600.0], [0.0, -1.0, 350.0], [0.0, 0.0, 1.0]])
    ann = project_scene(MODEL, camera, 288, 512, 20.0)
    by_cls = {}
    for point in ann.points:
        by_cls.setdefault(point.kp.cls, {})[point.kp.index] = point
    assert set(by_cls) == {KeyPointClass.WALL_RIGHT, KeyPointClass.FLOATING_LEFT}
    assert sorted(by_cls[KeyPointClass.WALL_RIGHT]) == [3, 4, 5, 6, 7]
    assert sorted(by_cls[KeyPointClass.FLOATING_LEFT]) == [3, 4, 5, 6, 7]
    for index, point in by_cls[KeyPointClass.WALL_RIGHT].items():
        assert point.u == pytest.approx(400.0)
        assert point.v == pytest.approx(350.0 - (0.25 + (index - 1) * 2.5) * 20.0)
    for index, point in by_cls[KeyPointClass.FLOATING_LEFT].items():
        assert point.u == 0.0
        assert point.v == pytest.approx(350.0 - (0.25 + (index - 1) * 2.5) * 20.0)


def test_perfect_detections_mirror_the_annotation():
    scene = make_scene(MODEL, SynthParams(seed=7), 0)
    det = perfect_detections(scene.annotation)
    assert det.frame_id == scene.annotation.frame_id
    assert len(det.detections) == len(scene.annotation.points)
    assert all(d.entropy == 0.0 for d in det.detections)
    counts = match_frame(det, scene.annotation, EvalParams()).counts
    assert counts.fp == 0 and counts.fn == 0


def test_noise_free_volume_decodes_back_to_the_annotation():
    scene = make_scene(MODEL, SynthParams(seed=2), 0)
    det = decode(scene.volume, DecodeParams(beta=0.9), scene.annotation.frame_id)
    report = evaluate([(det, scene.annotation)], EvalParams(tolerance_px=5.0))
    assert report.mean_f1 == 1.0


def test_dropout_one_flattens_every_channel():
    scene = make_scene(MODEL, SynthParams(seed=9), 0)
    volume = synthesize_volume(
        scene.annotation, 288, 512, NoiseParams(dropout_rate=1.0), seed=1
    )
    assert np.allclose(volume.data, 1.0 / (288 * 512))
    det = decode(volume, DecodeParams(beta=0.9), "f")
    assert det.detections == ()


def test_minimal_peak_mass_is_exactly_flat():
    scene = make_scene(MODEL, SynthParams(seed=9), 0)
    volume = synthesize_volume(
        scene.annotation, 288, 512, NoiseParams(peak_mass=1.0 / (288 * 512)), seed=1
    )
    assert (volume.data == 1.0 / (288 * 512)).all()


def test_full_peak_mass_is_an_exact_delta():
    scene = make_scene(MODEL, SynthParams(seed=9), 0)
    volume = synthesize_volume(scene.annotation, 288, 512, NoiseParams(), seed=1)
    annotated = scene.annotation.by_id
    from poolkey.model import CHANNEL_IDS

    for channel, kp in enumerate(CHANNEL_IDS):
        plane = volume.data[channel]
        if kp in annotated:
            assert plane.max() == 1.0
            assert np.count_nonzero(plane) == 1
            assert channel_entropy(plane) == 0.0
        else:
            assert np.allclose(plane, 1.0 / (288 * 512))


def test_peak_mass_orders_channel_entropy():
    scene = make_scene(MODEL, SynthParams(seed=9), 0)
    entropies = []
    for mass in (0.3, 0.6, 0.9):
        volume = synthesize_volume(
            scene.annotation, 288, 512, NoiseParams(peak_mass=mass), seed=1
        )
        channel = canonical_channel_index(scene.annotation.points[0].kp)
        entropies.append(channel_entropy(volume.data[channel]))
    assert entropies[0] > entropies[1] > entropies[2]


def test_false_positives_fill_absent_channels():
    ann = read_back = None
    from poolkey import FrameAnnotation

    empty = FrameAnnotation("f", 72, 128, ())
    volume = synthesize_volume(empty, 72, 128, NoiseParams(false_positive_rate=1.0), seed=3)
    det = decode(volume, DecodeParams(beta=0.9), "f")
    assert len(det.detections) == 96
    counts = match_frame(det, empty, EvalParams()).counts
    assert counts.tp == 0 and counts.fp == 96


def test_location_noise_moves_peaks_but_stays_bounded():
    scene = make_scene(MODEL, SynthParams(seed=4), 0)
    volume = synthesize_volume(
        scene.annotation, 288, 512, NoiseParams(loc_sigma_px=2.0), seed=17
    )
    det = decode(volume, DecodeParams(beta=0.9), scene.annotation.frame_id)
    perfect = {p.kp: (p.u, p.v) for p in scene.annotation.points}
    distances = [
        math.dist((d.u, d.v), perfect[d.kp]) for d in det.detections
    ]
    assert len(distances) == len(perfect)
    assert sum(1 for d in distances if d > 0.5) >= len(distances) // 2
    assert max(distances) < 12.0  # a few sigma plus cell rounding
    pairs = [(det, scene.annotation)]
    loose = evaluate(pairs, EvalParams(tolerance_px=5.0))
    tight = evaluate(pairs, EvalParams(tolerance_px=2.0))
    assert loose.mean_f1 > tight.mean_f1


def test_annotation_outside_volume_is_rejected():
    from poolkey import FrameAnnotation
    from poolkey.heatmap import AnnotationPoint
    from poolkey.model import CHANNEL_IDS

    ann = FrameAnnotation("f", 288, 512, (AnnotationPoint(CHANNEL_IDS[0], 5.0, 5.0),))
    with pytest.raises(ValidationError, match="outside"):
        synthesize_volume(ann, 4, 4, NoiseParams(), seed=0)


def test_sampling_error_when_jitter_never_frames_the_pool():
    params = SynthParams(jitter=CameraJitter(translation=100.0), seed=0)
    with pytest.raises(SamplingError, match="200"):
        make_scene(MODEL, params, 0)


def test_params_validation():
    with pytest.raises(ValidationError):
        SynthParams(frame_rows=8)
    with pytest.raises(ValidationError):
        SynthParams(view="wide")
    with pytest.raises(ValidationError):
        SynthParams(seed=-2)
    with pytest.raises(ValidationError):
        NoiseParams(peak_mass=0.0)
    with pytest.raises(ValidationError):
        NoiseParams(dropout_rate=1.5)


def test_generate_dataset_round_trip(tmp_path):
    params = _small(seed=6)
    manifest = generate_dataset(MODEL, 3, params, tmp_path / "run")
    assert [s["id"] for s in manifest["scenes"]] == [
        "scene_0000",
        "scene_0001",
        "scene_0002",
    ]
    assert manifest["params"]["frame_rows"] == 72
    on_disk = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert on_disk == manifest
    for entry in manifest["scenes"]:
        ann = read_annotation(tmp_path / "run" / entry["annotation_path"])
        volume = read_volume(tmp_path / "run" / entry["volume_path"])
        doc = json.loads((tmp_path / "run" / entry["homography_path"]).read_text())
        scene = make_scene(MODEL, params, int(entry["id"].split("_")[1]))
        assert ann == scene.annotation
        # the file stores 32-bit floats, so compare at that precision
        assert (volume.data == scene.volume.data.astype(np.float32)).all()
        assert doc["h"] == scene.homography_gt.flat()
        assert entry["seed"] == [6, int(entry["id"].split("_")[1])]


def test_generate_dataset_bytes_are_reproducible(tmp_path):
    params = _small(seed=6)
    generate_dataset(MODEL, 3, params, tmp_path / "a", workers=1)
    generate_dataset(MODEL, 3, params, tmp_path / "b", workers=3)
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b and files_a
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_generate_dataset_rejects_empty_runs(tmp_path):
    with pytest.raises(ValidationError):
        generate_dataset(MODEL, 0, _small(), tmp_path / "x")
