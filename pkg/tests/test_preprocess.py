import numpy as np
import pytest

from app.core.exceptions import PreprocessException
from app.models.telemetry import ChannelId, PreprocessParams, Segment, SegmentKind
from app.services.preprocess_service import PreprocessService
from tests.conftest import make_trace, make_window


@pytest.fixture
def service():
    return PreprocessService()


def test_normalize_maps_raw_units_to_unit_ranges(service):
    trace = service.normalize(make_trace(values=(225.0, 50.0, 100.0)))

    assert trace.normalized
    assert trace.channel(ChannelId.STEERING).values[0] == pytest.approx(0.5)
    assert trace.channel(ChannelId.THROTTLE).values[0] == pytest.approx(0.5)
    assert trace.channel(ChannelId.BRAKE).values[0] == pytest.approx(1.0)


def test_normalize_clips_and_counts_out_of_range_samples(service):
    raw = make_trace(duration_s=1.0, rates=(10.0, 10.0, 10.0), values=(-500.0, 0.0, 0.0))
    trace = service.normalize(raw)

    assert set(trace.channel(ChannelId.STEERING).values) == {-1.0}
    assert trace.clipped_samples == 11


def test_nearest_neighbor_prefers_closer_sample():
    times = np.arange(0, 1.0, 0.04)
    picked = PreprocessService.nearest_indices(times, np.array([1.0 / 30.0]))
    assert times[picked[0]] == pytest.approx(0.04)


def test_nearest_neighbor_breaks_ties_toward_earlier_sample():
    picked = PreprocessService.nearest_indices(np.array([0.0, 0.1]), np.array([0.05]))
    assert picked[0] == 0


def test_resample_aligns_every_channel_to_common_grid(service):
    trace = service.resample_nearest(service.normalize(make_trace(duration_s=10.0)))
    for series in trace.series:
        assert len(series) == 301
        assert series.nominal_rate == 30.0
        assert series.timestamps[1] == pytest.approx(1.0 / 30.0)


def test_ten_second_trace_gives_three_windows(service):
    windows = service.prepare_trace(make_trace(duration_s=10.0, values=(45.0, 20.0, 0.0)))

    assert [w.window_start_s for w in windows] == [0.0, 3.0, 6.0]
    assert all(w.to_array().shape == (3, 120) for w in windows)
    assert windows[0].to_array()[0, 0] == pytest.approx(0.1)


def test_short_trace_gives_no_windows(service):
    assert service.prepare_trace(make_trace(duration_s=3.9)) == []


def test_windows_record_covered_segment_kinds(service):
    segments = [
        Segment(start_s=0.0, end_s=5.0, kind=SegmentKind.STRAIGHT),
        Segment(start_s=5.0, end_s=10.0, kind=SegmentKind.TURN_LEFT),
    ]
    windows = service.prepare_trace(make_trace(duration_s=10.0, segments=segments))

    assert windows[0].segment_kinds == (SegmentKind.STRAIGHT,)
    assert windows[1].segment_kinds == (SegmentKind.STRAIGHT, SegmentKind.TURN_LEFT)
    assert windows[2].segment_kinds == (SegmentKind.TURN_LEFT,)


def test_window_requires_normalized_trace(service):
    with pytest.raises(PreprocessException):
        service.window(make_trace())


def test_default_window_splits_into_seven_frames(service):
    window = make_window(np.tile(np.linspace(0, 1, 120), (3, 1)), label=0, trace_id="t")
    frames = service.frame(window)

    assert len(frames) == 7
    assert [f.frame_index for f in frames] == list(range(1, 8))
    assert all(f.to_array().shape == (3, 30) for f in frames)


def test_frames_cover_every_window_column(service):
    matrix = np.tile(np.linspace(0, 1, 120), (3, 1))
    frames = service.frame(make_window(matrix, label=0, trace_id="t"))

    covered = set()
    for frame in frames:
        first = (frame.frame_index - 1) * 15
        np.testing.assert_allclose(frame.to_array(), matrix[:, first:first + 30])
        covered.update(range(first, first + 30))
    assert covered == set(range(120))


def test_frame_equal_to_window_gives_single_frame(service):
    matrix = np.full((3, 120), 0.25)
    frames = service.frame(make_window(matrix, label=1, trace_id="t"), frame_s=4.0, stride_s=0.5)

    assert len(frames) == 1
    np.testing.assert_allclose(frames[0].to_array(), matrix)


def test_shorter_window_gives_four_frames(service):
    frames = service.frame(make_window(np.zeros((3, 75)), label=0, trace_id="t"))
    assert len(frames) == 4


def test_frame_longer_than_window_is_rejected(service):
    with pytest.raises(PreprocessException):
        service.frame(make_window(np.zeros((3, 120)), label=0, trace_id="t"), frame_s=5.0)


def test_overlap_not_below_window_is_rejected():
    with pytest.raises(ValueError):
        PreprocessParams(window_s=4.0, overlap_s=4.0)


def test_window_cache_preserves_samples(service, tmp_path):
    windows = service.prepare_trace(make_trace(duration_s=10.0, values=(90.0, 10.0, 5.0)))
    path = service.save_windows(windows, tmp_path / "windows.npz")
    assert service.load_windows(path) == windows


def test_empty_window_cache_is_rejected(service, tmp_path):
    with pytest.raises(PreprocessException):
        service.save_windows([], tmp_path / "windows.npz")
