"""Volume codec: targets, softmax, loss, entropy, decode, binary file IO."""

import logging
import math

import numpy as np
import pytest

from poolkey import (
    CHANNEL_IDS,
    AnnotationPoint,
    DecodeParams,
    Detection,
    DetectionSet,
    FormatError,
    FrameAnnotation,
    HeatmapVolume,
    NumericError,
    OutOfBoundsError,
    ShapeError,
    ValidationError,
    channel_entropy,
    cross_entropy_loss,
    decode,
    make_target_volume,
    read_volume,
    softmax_normalize,
    write_volume,
)
from poolkey.heatmap import nearest_cell
from poolkey.model import KeyPointClass, KeyPointId, canonical_channel_index

WL0 = KeyPointId(KeyPointClass.WALL_LEFT, 0)


def _random_volume(rng, channels=96, rows=4, cols=4):
    return softmax_normalize(rng.normal(0, 3, size=(channels, rows, cols)))


def _full_annotation(rng, rows, cols, frame_id="f"):
    """Annotation that places every one of the 96 ids somewhere in-grid."""
    points = tuple(
        AnnotationPoint(kp, float(rng.uniform(0, cols - 1)), float(rng.uniform(0, rows - 1)))
        for kp in CHANNEL_IDS
    )
    return FrameAnnotation(frame_id, rows, cols, points)


def test_nearest_cell_half_up_and_clamped():
    assert nearest_cell(0.49, 10) == 0
    assert nearest_cell(0.5, 10) == 1
    assert nearest_cell(-0.3, 10) == 0
    assert nearest_cell(9.7, 10) == 9
    assert nearest_cell(42.0, 10) == 9


def test_target_volume_delta_and_flat():
    ann = FrameAnnotation("f", 2, 2, (AnnotationPoint(WL0, 0.0, 0.0),))
    vol = make_target_volume(ann, 2, 2)
    assert vol.channel(0).tolist() == [[1.0, 0.0], [0.0, 0.0]]
    for c in range(1, 96):
        assert vol.channel(c).tolist() == [[0.25, 0.25], [0.25, 0.25]]


def test_target_volume_empty_annotation_is_all_flat():
    vol = make_target_volume(FrameAnnotation("f", 2, 2, ()), 2, 2)
    assert np.all(vol.data == 0.25)


def test_target_volume_rounds_half_up():
    ann = FrameAnnotation("f", 4, 4, (AnnotationPoint(WL0, 1.5, 2.49),))
    vol = make_target_volume(ann, 4, 4)
    assert vol.channel(0)[2, 2] == 1.0


def test_target_volume_rejects_out_of_grid_points():
    ann = FrameAnnotation("f", 8, 8, (AnnotationPoint(WL0, 7.5, 7.5),))
    with pytest.raises(OutOfBoundsError):
        make_target_volume(ann, 4, 4)


def test_softmax_uniform_logits():
    vol = softmax_normalize(np.zeros((96, 2, 2)))
    assert np.allclose(vol.data, 0.25)


def test_softmax_hand_computed_ratios():
    logits = np.zeros((1, 2, 2))
    logits[0, 0, 0] = math.log(2.0)
    vol = softmax_normalize(logits)
    assert vol.channel(0).flatten() == pytest.approx([0.4, 0.2, 0.2, 0.2], abs=1e-12)


def test_softmax_channels_sum_to_one():
    rng = np.random.default_rng(7)
    vol = _random_volume(rng, rows=5, cols=3)
    assert np.allclose(vol.data.sum(axis=(1, 2)), 1.0, atol=1e-12)


def test_softmax_shift_invariance():
    rng = np.random.default_rng(8)
    logits = rng.normal(0, 5, size=(4, 3, 3))
    shifted = logits + rng.normal(0, 50, size=(4, 1, 1))
    a = softmax_normalize(logits)
    b = softmax_normalize(shifted)
    assert np.abs(a.data - b.data).max() < 1e-9


def test_softmax_rejects_non_finite():
    bad = np.zeros((1, 2, 2))
    bad[0, 0, 0] = np.inf
    with pytest.raises(NumericError):
        softmax_normalize(bad)


def test_loss_brute_force_oracle():
    """Vectorized loss against an explicit per-cell double sum."""
    rng = np.random.default_rng(101)
    for _ in range(40):
        target = softmax_normalize(rng.normal(0, 2, size=(3, 4, 4)))
        pred = softmax_normalize(rng.normal(0, 2, size=(3, 4, 4)))
        reference = 0.0
        for j in range(3):
            for r in range(4):
                for c in range(4):
                    y = target.data[j, r, c]
                    h = max(pred.data[j, r, c], 1e-12)
                    reference -= y * math.log(h)
        assert abs(cross_entropy_loss(target, pred) - reference) < 1e-9


def test_loss_zero_for_matching_delta_targets():
    rng = np.random.default_rng(5)
    target = make_target_volume(_full_annotation(rng, 6, 6), 6, 6)
    assert cross_entropy_loss(target, target) <= 1e-9


def test_loss_delta_versus_flat_is_log_cell_count():
    ann = FrameAnnotation("f", 2, 2, (AnnotationPoint(WL0, 0.0, 0.0),))
    target = make_target_volume(ann, 2, 2)
    flat = HeatmapVolume(np.full((96, 2, 2), 0.25))
    # annotated channel contributes ln4; the 95 flat-on-flat channels each
    # contribute their own entropy ln4 as well
    expected = 96 * math.log(4.0)
    assert cross_entropy_loss(target, flat) == pytest.approx(expected, abs=1e-9)


def test_loss_gibbs_inequality():
    rng = np.random.default_rng(12)
    for _ in range(50):
        target = softmax_normalize(rng.normal(0, 2, size=(2, 3, 5)))
        pred = softmax_normalize(rng.normal(0, 2, size=(2, 3, 5)))
        self_entropy = sum(channel_entropy(target.channel(i)) for i in range(2))
        assert cross_entropy_loss(target, pred) >= self_entropy - 1e-9


def test_loss_shape_mismatch():
    a = HeatmapVolume(np.full((1, 2, 2), 0.25))
    b = HeatmapVolume(np.full((1, 4, 4), 1 / 16))
    with pytest.raises(ShapeError):
        cross_entropy_loss(a, b)


def test_entropy_reference_values():
    assert channel_entropy(np.array([[1.0, 0.0], [0.0, 0.0]])) == 0.0
    flat = np.full((7, 11), 1.0 / 77)
    assert abs(channel_entropy(flat) - math.log(77)) < 1e-9
    assert channel_entropy(np.array([0.5, 0.5, 0.0, 0.0])) == pytest.approx(
        math.log(2.0), abs=1e-12
    )
    with pytest.raises(ValidationError):
        channel_entropy(np.array([0.9, 0.2, -0.1]))


def test_entropy_bounded_by_log_cells():
    rng = np.random.default_rng(3)
    for _ in range(50):
        vol = _random_volume(rng, channels=1, rows=5, cols=7)
        h = channel_entropy(vol.channel(0))
        assert -1e-12 <= h <= math.log(35) + 1e-9


def test_decode_flat_channel_rejected_at_gate():
    # ln4 = 1.3863 is not below 0.9 * ln4 = 1.2477
    vol = HeatmapVolume(np.full((96, 2, 2), 0.25))
    assert decode(vol, DecodeParams(0.9)).detections == ()


def test_decode_delta_channel_detected():
    data = np.full((96, 2, 2), 0.25)
    data[0] = [[0.0, 0.0], [1.0, 0.0]]
    detections = decode(HeatmapVolume(data), DecodeParams(0.5)).detections
    assert len(detections) == 1
    det = detections[0]
    assert det.kp == WL0
    assert (det.u, det.v) == (0.0, 1.0)
    assert det.entropy == 0.0


def test_decode_beta_zero_rejects_everything():
    rng = np.random.default_rng(9)
    ann = _full_annotation(rng, 4, 4)
    vol = make_target_volume(ann, 4, 4)
    assert decode(vol, DecodeParams(0.0)).detections == ()


def test_decode_argmax_tie_breaks_to_smallest_row_major_cell():
    data = np.full((96, 2, 2), 0.25)
    data[3] = [[0.0, 0.5], [0.5, 0.0]]
    det = decode(HeatmapVolume(data), DecodeParams(0.9)).detections
    by_id = {d.kp: d for d in det}
    winner = by_id[CHANNEL_IDS[3]]
    assert (winner.u, winner.v) == (1.0, 0.0)  # cell (0,1) beats (1,0)


def test_decode_detection_sets_nest_as_beta_grows():
    rng = np.random.default_rng(21)
    betas = [0.0, 0.25, 0.5, 0.75, 1.0]
    for _ in range(30):
        vol = _random_volume(rng)
        previous = set()
        for beta in betas:
            ids = {d.kp for d in decode(vol, DecodeParams(beta)).detections}
            assert previous <= ids
            previous = ids


def test_decode_requires_96_channels():
    vol = HeatmapVolume(np.full((3, 2, 2), 0.25))
    with pytest.raises(ValidationError):
        decode(vol, DecodeParams(0.9))


def test_decode_params_range():
    with pytest.raises(ValidationError):
        DecodeParams(-0.1)
    with pytest.raises(ValidationError):
        DecodeParams(1.2)


def test_volume_validation():
    with pytest.raises(ValidationError):
        HeatmapVolume(np.full((1, 2, 2), -0.25))
    bad_sum = np.full((1, 2, 2), 0.3)
    with pytest.raises(ValidationError):
        HeatmapVolume(bad_sum)
    almost = np.full((1, 2, 2), 0.25)
    almost[0, 0, 0] += 5e-7  # inside the 1e-6 budget
    HeatmapVolume(almost)
    with pytest.raises(ShapeError):
        HeatmapVolume(np.zeros((2, 2)))
    with pytest.raises(NumericError):
        HeatmapVolume(np.full((1, 2, 2), np.nan))


def test_volume_data_is_read_only():
    vol = HeatmapVolume(np.full((1, 2, 2), 0.25))
    with pytest.raises(ValueError):
        vol.data[0, 0, 0] = 1.0


def test_file_round_trip_is_float32_exact(tmp_path):
    rng = np.random.default_rng(33)
    vol = _random_volume(rng, rows=6, cols=5)
    path = tmp_path / "vol.pkhv"
    write_volume(vol, path)
    loaded = read_volume(path)
    expected = vol.data.astype("<f4").astype(np.float64)
    assert np.array_equal(loaded.data, expected)
    # a second write of the loaded volume reproduces the file bitwise
    second = tmp_path / "again.pkhv"
    write_volume(loaded, second)
    assert path.read_bytes() == second.read_bytes()


def test_file_header_fields(tmp_path):
    vol = HeatmapVolume(np.full((96, 3, 2), 1.0 / 6))
    path = tmp_path / "v.pkhv"
    write_volume(vol, path)
    blob = path.read_bytes()
    assert blob[:4] == b"PKHV"
    assert int.from_bytes(blob[4:8], "little") == 1
    assert int.from_bytes(blob[8:12], "little") == 3
    assert int.from_bytes(blob[12:16], "little") == 2
    assert int.from_bytes(blob[16:20], "little") == 96
    assert len(blob) == 20 + 96 * 3 * 2 * 4


def test_read_volume_error_offsets(tmp_path):
    path = tmp_path / "bad.pkhv"

    path.write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(FormatError, match="offset 0"):
        read_volume(path)

    path.write_bytes(b"PKHV\x02\x00\x00\x00" + bytes(12))
    with pytest.raises(FormatError, match="version"):
        read_volume(path)

    path.write_bytes(b"PKHV" + (1).to_bytes(4, "little") * 4 + bytes(1))
    with pytest.raises(FormatError, match="truncat"):
        read_volume(path)

    good = b"PKHV" + b"".join(
        v.to_bytes(4, "little") for v in (1, 1, 1, 1)
    ) + np.float32(1.0).tobytes()
    path.write_bytes(good + b"junk")
    with pytest.raises(FormatError, match="trailing"):
        read_volume(path)


def test_read_volume_accepts_but_flags_other_channel_counts(tmp_path, caplog):
    vol = HeatmapVolume(np.full((3, 2, 2), 0.25))
    path = tmp_path / "c3.pkhv"
    write_volume(vol, path)
    with caplog.at_level(logging.WARNING):
        loaded = read_volume(path)
    assert loaded.channels == 3
    assert any("96" in message for message in caplog.messages)
    with pytest.raises(ValidationError):
        decode(loaded, DecodeParams(0.9))


def test_annotation_invariants():
    with pytest.raises(ValidationError):
        FrameAnnotation("f", 2, 2, (AnnotationPoint(WL0, 0.0, 0.0),) * 2)
    with pytest.raises(ValidationError):
        FrameAnnotation("f", 2, 2, (AnnotationPoint(WL0, 2.0, 0.0),))
    with pytest.raises(ValidationError):
        FrameAnnotation("f", 0, 2, ())


def test_detection_set_invariants():
    d = Detection(WL0, 0.0, 0.0, 0.0)
    with pytest.raises(ValidationError):
        DetectionSet("f", 2, 2, (d, d))
    with pytest.raises(ValidationError):
        DetectionSet("f", 2, 2, (Detection(WL0, 0.0, 0.0, -1.0),))
    with pytest.raises(ValidationError):
        DetectionSet("f", 2, 2, (Detection(WL0, 0.0, 5.0, 0.0),))


def test_channel_order_matches_canonical_index():
    rng = np.random.default_rng(2)
    ann = _full_annotation(rng, 8, 8)
    vol = make_target_volume(ann, 8, 8)
    for pt in ann.points:
        channel = vol.channel(canonical_channel_index(pt.kp))
        assert channel[nearest_cell(pt.v, 8), nearest_cell(pt.u, 8)] == 1.0
