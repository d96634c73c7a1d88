import numpy as np
import pytest

from phaseloc.core import (PhaseSegment, Proposal, ScaleConfig, check_segment, frame_labels_from_segments,
                           interval_iou, as_feature_sequence, scale_index_to_frames, segments_from_frame_labels)


def test_interval_iou_examples():
    assert interval_iou(PhaseSegment(0, 10, 0), PhaseSegment(0, 10, 1)) == 1.0
    assert interval_iou(PhaseSegment(0, 10, 0), PhaseSegment(10, 20, 0)) == 0.0
    assert interval_iou(PhaseSegment(2, 8, 0), PhaseSegment(4, 10, 0)) == 0.5


def test_scale_index_to_frames():
    cfg = ScaleConfig(slow_stride=4, fast_stride=2, pool_windows=(1, 2, 4))
    assert scale_index_to_frames(0, 2, cfg, 100) == (8, 12)
    assert scale_index_to_frames(2, 0, cfg, 100) == (0, 16)
    assert scale_index_to_frames(1, 12, cfg, 100) == (96, 100)
    with pytest.raises(IndexError):
        scale_index_to_frames(1, 13, cfg, 100)


def test_scale_lengths_are_weakly_decreasing():
    cfg = ScaleConfig()
    for T in (1, 2, 7, 100, 513):
        ls = cfg.scale_lengths(T)
        assert all(a >= b for a, b in zip(ls, ls[1:]))
        assert ls[0] == -(-T // 2)


@pytest.mark.parametrize("kw", [dict(slow_stride=3, fast_stride=2), dict(pool_windows=(2, 2)),
                                dict(pool_windows=(0, 1)), dict(bin_size=5), dict(bin_size=0)])
def test_scale_config_rejects(kw):
    with pytest.raises(ValueError):
        ScaleConfig(**kw)


def test_check_segment():
    check_segment(PhaseSegment(0, 1, 0), 3)
    for bad in (PhaseSegment(3, 3, 0), PhaseSegment(-1, 2, 0), PhaseSegment(0, 2, 3)):
        with pytest.raises(ValueError):
            check_segment(bad, 3)


def test_segments_from_labels():
    A, B = 0, 1
    assert segments_from_frame_labels([A]) == [(0, 1, A)]
    assert segments_from_frame_labels([A, A, B, B, B, A]) == [(0, 2, A), (2, 5, B), (5, 6, A)]
    labels = [2, 2, 0, 1, 1, 1, 2]
    assert frame_labels_from_segments(segments_from_frame_labels(labels)) == labels
    with pytest.raises(ValueError):
        segments_from_frame_labels([])


def test_frame_labels_need_contiguous_segments():
    with pytest.raises(ValueError):
        frame_labels_from_segments([PhaseSegment(0, 2, 0), PhaseSegment(3, 4, 1)])


def test_feature_sequence_validation():
    x = as_feature_sequence(np.ones((3, 2), dtype=np.float64))
    assert x.dtype == np.float32 and x.shape == (3, 2)
    with pytest.raises(ValueError):
        as_feature_sequence(np.ones((0, 2)))
    with pytest.raises(ValueError):
        as_feature_sequence(np.array([[1.0, np.nan]]))
    with pytest.raises(ValueError):
        as_feature_sequence(np.ones((3, 2)), dim=4)


def test_proposal_dict_round_trip():
    p = Proposal(PhaseSegment(3, 9, 2), 0.75, 1)
    assert Proposal.from_dict(p.to_dict()) == p
    assert (p.start, p.end, p.label) == (3, 9, 2)
