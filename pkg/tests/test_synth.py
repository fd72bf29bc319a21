import numpy as np
import pytest
from pydantic import ValidationError
from scipy.signal import periodogram

from app.core.exceptions import SynthesisException
from app.models.synth import BrownianConfig, DatasetConfig, DriverProfile, MapCounts, SpikeConfig, SymptomConfig, TremorConfig
from app.models.telemetry import ChannelId, Segment, SegmentKind, TraceLabel
from app.services.synth_service import SynthService
from tests.conftest import make_trace


@pytest.fixture
def service():
    return SynthService()


def test_route_is_deterministic_for_seed(service):
    assert service.generate_route("mixed", 7) == service.generate_route("mixed", 7)
    assert service.generate_route("mixed", 7) != service.generate_route("mixed", 8)


def test_route_segments_tile_total_duration(service):
    route = service.generate_route("rural", 3, total_duration_s=31.0)
    assert route.total_duration_s == pytest.approx(31.0)


@pytest.mark.parametrize("seed", range(5))
def test_urban_route_emphasizes_turns(service, seed):
    route = service.generate_route("urban", seed)
    assert route.kind_fraction(straight=False) > route.kind_fraction(straight=True)


def test_rural_route_emphasizes_straights(service):
    route = service.generate_route("rural", 0)
    assert route.kind_fraction(straight=True) > route.kind_fraction(straight=False)


def test_custom_route_keeps_given_segments(service):
    route = service.generate_route([("straight", 10.0), ("turn_right", 5.0, 90.0)], seed=0)
    assert route.map_id == "custom"
    assert route.total_duration_s == pytest.approx(15.0)


def test_unknown_map_is_rejected(service):
    with pytest.raises(SynthesisException):
        service.generate_route("desert", 0)


def test_zero_jitter_straight_route_keeps_steering_at_zero(service):
    route = service.generate_route([("straight", 10.0)], seed=0)
    profile = DriverProfile(jitter_std={"steering": 0.0, "throttle": 0.0, "brake": 0.0})
    trace = service.synthesize_healthy(route, profile, seed=1)

    steering = trace.channel(ChannelId.STEERING)
    assert trace.label is TraceLabel.HEALTHY
    assert np.all(steering.values_array == 0.0)
    assert len(steering) == 601
    assert len(trace.channel(ChannelId.BRAKE)) == 251


def test_brake_rises_entering_turns(service):
    route = service.generate_route([("straight", 5.0), ("turn_left", 5.0, -150.0)], seed=0)
    profile = DriverProfile(jitter_std={"steering": 0.0, "throttle": 0.0, "brake": 0.0})
    trace = service.synthesize_healthy(route, profile, seed=0)

    brake = trace.channel(ChannelId.BRAKE)
    turn = trace.straight_mask(brake.times_array) == False  # noqa: E712
    assert brake.values_array[~turn].max() == 0.0
    assert brake.values_array[turn].max() > 0.0


def test_tremor_with_zero_amplitude_only_flips_label(service):
    trace = service.synthesize_healthy(service.generate_route("urban", 0), DriverProfile(), seed=0)
    cfg = SymptomConfig(tremor=TremorConfig(amplitude_scale=0.0))
    injected = service.inject_tremor(trace, cfg, seed=1)

    assert injected.label is TraceLabel.ABNORMAL
    assert injected.series == trace.series


def test_tremor_leaves_turn_segments_untouched(service):
    trace = service.synthesize_healthy(service.generate_route("mixed", 2), DriverProfile(), seed=2)
    injected = service.inject_tremor(trace, SymptomConfig(), seed=3)

    before = trace.channel(ChannelId.STEERING)
    after = injected.channel(ChannelId.STEERING)
    straight = trace.straight_mask(before.times_array)
    np.testing.assert_array_equal(after.values_array[~straight], before.values_array[~straight])
    assert not np.array_equal(after.values_array[straight], before.values_array[straight])


def test_tremor_band_outside_four_to_six_hz_is_rejected():
    with pytest.raises(ValidationError) as info:
        TremorConfig(freq_min_hz=7.0, freq_max_hz=7.0)
    fields = {error["loc"][0] for error in info.value.errors()}
    assert fields == {"freq_min_hz", "freq_max_hz"}


def test_negative_amplitude_is_rejected():
    with pytest.raises(ValidationError):
        TremorConfig(amplitude_scale=-0.1)


@pytest.mark.parametrize("seed", range(10))
def test_tremor_spectral_peak_lies_in_band(service, seed):
    route = service.generate_route("rural", seed)
    trace = service.synthesize_healthy(route, DriverProfile(), seed=seed)
    injected = service.inject_tremor(trace, SymptomConfig(), seed=seed + 100)

    steering = injected.channel(ChannelId.STEERING)
    index = injected.segment_index(steering.times_array)
    longest = max(
        (n for n, s in enumerate(injected.segments) if s.kind.is_straight),
        key=lambda n: injected.segments[n].duration_s,
    )
    part = steering.values_array[index == longest]
    freqs, psd = periodogram(part, fs=steering.nominal_rate, detrend="linear")
    assert 4.0 <= freqs[int(np.argmax(psd))] <= 6.0


def test_sudden_changes_only_touch_turn_segments(service):
    trace = service.synthesize_healthy(service.generate_route("urban", 4), DriverProfile(), seed=4)
    injected = service.inject_sudden(trace, SymptomConfig(), seed=5)

    for channel in (ChannelId.STEERING, ChannelId.THROTTLE):
        before = trace.channel(channel)
        after = injected.channel(channel)
        straight = trace.straight_mask(before.times_array)
        np.testing.assert_array_equal(after.values_array[straight], before.values_array[straight])
    assert injected.label is TraceLabel.ABNORMAL


def test_brownian_displacement_grows_with_square_root_of_samples(service):
    sigma = 0.004
    trace = make_trace(
        duration_s=10.0,
        segments=[Segment(start_s=0.0, end_s=10.0, kind=SegmentKind.TURN_RIGHT)],
    )
    cfg = SymptomConfig(
        spike=SpikeConfig(rate_per_s=0.0, channels=["steering"]),
        brownian=BrownianConfig(step_std=sigma, channels=["steering"]),
    )
    n = len(trace.channel(ChannelId.STEERING))

    ends = []
    for seed in range(200):
        injected = service.inject_sudden(trace, cfg, seed=seed)
        ends.append(injected.channel(ChannelId.STEERING).values_array[-1] / trace.steering_range_deg)
    assert np.std(ends) == pytest.approx(sigma * np.sqrt(n), rel=0.15)


def test_spike_onsets_follow_poisson_rate():
    counts = [
        SynthService.draw_spike_onsets(10.0, 2.0, np.random.default_rng(seed)).size
        for seed in range(200)
    ]
    assert np.mean(counts) == pytest.approx(20.0, abs=3 * np.sqrt(20.0 / 200))


def test_injecting_into_abnormal_trace_is_rejected(service):
    trace = make_trace(label=TraceLabel.ABNORMAL)
    with pytest.raises(SynthesisException):
        service.inject_symptoms(trace, SymptomConfig(), seed=0)


def test_channels_per_trace_limits_affected_channels(service):
    trace = service.synthesize_healthy(service.generate_route("mixed", 0), DriverProfile(), seed=0)
    cfg = SymptomConfig(
        tremor=TremorConfig(channels=["steering", "throttle", "brake"]),
        spike=SpikeConfig(rate_per_s=0.0),
        brownian=BrownianConfig(step_std=0.0),
        channels_per_trace=1,
    )
    injected = service.inject_symptoms(trace, cfg, seed=9)

    changed = [c for c in ChannelId if injected.channel(c).values != trace.channel(c).values]
    assert len(changed) == 1


def test_dataset_counts_per_map():
    config = DatasetConfig(counts={m: MapCounts(healthy=10, abnormal=8) for m in ("urban", "rural", "mixed")})
    assert config.total("healthy") == 30
    assert config.total("abnormal") == 24


def test_scaled_dataset_mirrors_class_ratio():
    config = DatasetConfig.full_scale(0.01)
    assert config.total("healthy") == 78
    assert config.total("abnormal") == 64


def test_build_dataset_writes_manifest_and_traces(service, tmp_path):
    config = DatasetConfig(
        maps=["urban", "rural"],
        counts={"urban": MapCounts(healthy=2, abnormal=1), "rural": MapCounts(healthy=1, abnormal=2)},
        route_duration_s=10.0,
    )
    manifest, path = service.build_dataset(config, seed=5, out_dir=tmp_path)

    assert path.exists()
    assert manifest.trace_counts == {"healthy": 3, "abnormal": 3}
    assert manifest.window_counts == {"healthy": 9, "abnormal": 9}
    assert service.telemetry_service.validate_dataset(manifest, tmp_path).ok


def test_build_dataset_is_reproducible(service, tmp_path):
    config = DatasetConfig(maps=["mixed"], counts={"mixed": MapCounts(healthy=1, abnormal=1)}, route_duration_s=8.0)
    first, _ = service.build_dataset(config, seed=11, out_dir=tmp_path / "a")
    second, _ = service.build_dataset(config, seed=11, out_dir=tmp_path / "b")

    for a, b in zip(first.entries, second.entries):
        assert (tmp_path / "a" / a.path).read_bytes() == (tmp_path / "b" / b.path).read_bytes()
