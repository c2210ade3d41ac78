from datetime import date, datetime

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _matching import recovered
from evload.data import MeterSeries
from evload.extraction import (AlignmentResult, AmplitudeMatch, BaselineCurve, EventRow,
                               ExtractionError, ScaleParams, SegmentationPolicy, align_valleys,
                               build_baseline, extract_events, match_amplitude, read_events_csv,
                               rotate_daily, scale_to_baseline, segment_events, subtract_and_restore,
                               write_events_csv)
from evload.synth import InjectedSession, SynthConfig, household_shape, synthesize_meter_data

D0 = date(2023, 1, 1)


def meter(values, mid="M", is_ev=False):
    return MeterSeries(mid, is_ev, D0, np.asarray(values, dtype=float))


def sinusoid(days=1, phase=0.0):
    t = np.arange(96 * days) % 96
    return np.cos(2 * np.pi * (t - phase) / 96)


def curve(values):
    v = np.asarray(values, dtype=float)
    return BaselineCurve((v - v.min()) / np.ptp(v), float(v.min()), float(v.max()))


class TestBaseline:
    def test_zero_range(self):
        with pytest.raises(ExtractionError):
            build_baseline([meter(np.full(96, 2.0)), meter(np.full(96, 4.0))])

    def test_affine_span(self):
        b = build_baseline([meter(np.linspace(1, 5, 96))])
        assert (b.source_min_kw, b.source_max_kw) == (1.0, 5.0)
        np.testing.assert_allclose(b.values, np.linspace(0, 1, 96), atol=1e-15)

    def test_against_per_slot_mean(self, rng):
        ms = [meter(rng.uniform(0, 3, 192), f"N{i}") for i in range(5)]
        b = build_baseline(ms)
        mean = [sum(m.readings[j] for m in ms) / 5 for j in range(192)]
        lo, hi = min(mean), max(mean)
        np.testing.assert_allclose(b.values, [(v - lo) / (hi - lo) for v in mean], atol=1e-12)

    def test_empty_and_mismatch(self):
        with pytest.raises(ExtractionError):
            build_baseline([])
        with pytest.raises(ExtractionError):
            build_baseline([meter(np.arange(96.0)), meter(np.arange(192.0))])


class TestScale:
    base = curve(sinusoid())

    def test_zero_to_twenty(self):
        scaled, p = scale_to_baseline(meter(np.linspace(0, 20, 96)), self.base)
        assert (scaled.min(), scaled.max()) == (0.0, 1.0)
        assert (p.scale, p.offset) == (20.0, 0.0)

    def test_round_trip(self, rng):
        ev = rng.uniform(3, 13, 96)
        ev[0], ev[1] = 3.0, 13.0
        scaled, p = scale_to_baseline(meter(ev), self.base)
        assert (p.scale, p.offset) == (10.0, 3.0)
        np.testing.assert_allclose(p.invert(scaled), ev, atol=1e-12)

    def test_constant(self):
        with pytest.raises(ExtractionError):
            scale_to_baseline(meter(np.full(96, 2.0)), self.base)

    def test_length_mismatch(self):
        with pytest.raises(ExtractionError):
            scale_to_baseline(meter(np.arange(192.0)), self.base)


class TestAlign:
    def test_identical(self):
        x = (sinusoid(3) + 1) / 2
        assert align_valleys(x, curve(x)).shift_slots == 0

    @pytest.mark.parametrize("k", [6, -6, 13, 40])
    def test_rotation_recovered(self, k):
        x = (sinusoid(2) + 1) / 2
        rotated = rotate_daily(x, k, 96)
        assert align_valleys(x, curve(rotated)).shift_slots == -k
        # rotating the baseline by the result undoes the offset
        np.testing.assert_allclose(rotate_daily(rotated, -k, 96), x)

    def test_amplitude_blind(self):
        x = (sinusoid() + 1) / 2
        y = 0.3 * x ** 3
        y = (y - y.min()) / np.ptp(y)
        assert align_valleys(y, curve(x)).shift_slots == 0

    def test_constant_raises(self):
        with pytest.raises(ExtractionError):
            align_valleys(np.zeros(96), curve(sinusoid()))

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0, 95))
    def test_self_alignment_property(self, phase):
        x = (sinusoid(phase=phase) + 1) / 2
        assert align_valleys(x, curve(x)).shift_slots == 0


class TestSubtract:
    def test_equal_gives_zero(self):
        x = (sinusoid(2) + 1) / 2
        r = subtract_and_restore(x, curve(x), AlignmentResult(0), ScaleParams(7.0, 1.0))
        np.testing.assert_array_equal(r, 0.0)
        r = subtract_and_restore(x, curve(x), AlignmentResult(0), ScaleParams(7.0, 1.0), match=AmplitudeMatch())
        np.testing.assert_array_equal(r, 0.0)

    def test_unit_match_is_plain_difference(self, rng):
        x, b = rng.random(96), rng.random(96)
        b[0], b[1] = 0.0, 1.0
        r = subtract_and_restore(x, curve(b), AlignmentResult(0), ScaleParams(4.0, 0.0), match=AmplitudeMatch())
        np.testing.assert_allclose(r, np.maximum((x - b) * 4.0, 0.0), atol=1e-15)

    def test_injected_block(self):
        cfg = SynthConfig(days=3)
        house = np.tile(household_shape(cfg), 3)
        ev = house.copy()
        ev[96 + 76:96 + 92] += 10.0
        base = build_baseline([meter(house)])
        scaled, p = scale_to_baseline(meter(ev, is_ev=True), base)
        al = align_valleys(scaled, base)
        r = subtract_and_restore(scaled, base, al, p)
        np.testing.assert_allclose(r[96 + 76:96 + 92], 10.0, atol=1e-6)
        mask = np.ones(r.size, bool)
        mask[96 + 76:96 + 92] = False
        assert np.abs(r[mask]).max() < 1e-6

    def test_never_negative(self, rng):
        r = subtract_and_restore(rng.random(192), curve(rng.random(192)), AlignmentResult(3), ScaleParams(5, 0))
        assert r.min() >= 0.0

    def test_match_ignores_charging(self):
        b = (sinusoid(2) + 1) / 2
        y = 0.6 * b + 0.1
        y[10:20] += 0.8
        m = match_amplitude(y, b)
        assert m.gain == pytest.approx(0.6, abs=1e-9)
        assert m.bias == pytest.approx(0.1, abs=1e-9)


class TestSegment:
    def test_zero(self):
        assert segment_events(np.zeros(96)) == []

    def test_rectangle(self):
        r = np.zeros(96)
        r[76:92] = 10.0
        (ev,) = segment_events(r)
        assert (ev.start_slot, ev.end_slot) == (76, 92)
        assert ev.energy_kwh == 40.0 and ev.avg_power_kw == 10.0

    def test_merge(self):
        r = np.zeros(96)
        r[40:44] = 10.0
        r[45:49] = 10.0
        (ev,) = segment_events(r, SegmentationPolicy(merge_gap_slots=2))
        assert (ev.start_slot, ev.end_slot) == (40, 49)
        assert ev.energy_kwh == pytest.approx(20.0)
        assert len(segment_events(r, SegmentationPolicy(merge_gap_slots=0))) == 2

    def test_isolated_spike_does_not_extend_event(self):
        r = np.zeros(96)
        r[70] = 1.2
        r[72:80] = 8.0
        (ev,) = segment_events(r, SegmentationPolicy(merge_gap_slots=2))
        assert (ev.start_slot, ev.end_slot) == (72, 80)

    def test_short_runs_dropped(self):
        r = np.zeros(96)
        r[10] = 5.0
        assert segment_events(r, SegmentationPolicy(min_duration_slots=2)) == []

    def test_invalid_policy(self):
        with pytest.raises(ValueError):
            SegmentationPolicy(min_duration_slots=0)
        with pytest.raises(ValueError):
            SegmentationPolicy(merge_gap_slots=-1)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0, 20), min_size=1, max_size=200), st.floats(0, 10),
           st.integers(0, 4), st.integers(1, 4))
    def test_energy_bookkeeping(self, values, thr, gap, dur):
        r = np.array(values)
        events = segment_events(r, SegmentationPolicy(thr, dur, gap))
        total = r.sum() * 0.25
        assert sum(e.energy_kwh for e in events) <= total + 1e-9
        for e in events:
            assert e.end_slot > e.start_slot
            assert e.energy_kwh == pytest.approx(r[e.start_slot:e.end_slot].sum() * 0.25, abs=1e-9)
            assert e.avg_power_kw == pytest.approx(e.energy_kwh / (0.25 * (e.end_slot - e.start_slot)))
        exact = segment_events(r, SegmentationPolicy(0.0, 1, 0))
        assert sum(e.energy_kwh for e in exact) == pytest.approx(total, abs=1e-9)


class TestPipeline:
    def test_known_block_is_recovered(self):
        cfg = SynthConfig(n_nonev=10, n_ev=1, days=5, noise_std_kw=0.0, session_probability=0.0,
                          tapered=False, sessions=(InjectedSession(0, 2, 19.0, 10.0, 40.0),))
        data = synthesize_meter_data(cfg, np.random.default_rng(0))
        rows = extract_events(data.series)
        assert len(rows) == 1
        assert rows[0].start == datetime(2023, 1, 3, 19, 0)
        assert rows[0].end == datetime(2023, 1, 3, 23, 0)
        assert rows[0].energy_kwh == pytest.approx(40.0, rel=0.05)

    def test_round_trip_recovery(self):
        cfg = SynthConfig(n_nonev=20, n_ev=20, days=30, noise_std_kw=0.35)
        data = synthesize_meter_data(cfg, np.random.default_rng(1))
        rows = extract_events(data.series, threads=4)
        hits = recovered(data.truth, rows, datetime(2023, 1, 1))
        assert len(hits) >= 0.95 * len(data.truth)

    def test_threads_do_not_matter(self):
        cfg = SynthConfig(n_nonev=5, n_ev=6, days=4)
        data = synthesize_meter_data(cfg, np.random.default_rng(2))
        assert extract_events(data.series, threads=1) == extract_events(data.series, threads=6)


def test_events_csv_round_trip(tmp_path):
    rows = [EventRow("E1", datetime(2023, 1, 1, 19, 0), datetime(2023, 1, 1, 23, 15), 42.5, 10.0),
            EventRow("E2", datetime(2023, 1, 2, 23, 45), datetime(2023, 1, 3, 1, 0), 8.125, 6.5)]
    write_events_csv(tmp_path / "e.csv", rows)
    assert read_events_csv(tmp_path / "e.csv") == rows
    assert (tmp_path / "e.csv").read_text().splitlines()[0] == "meter_id,start_iso,end_iso,energy_kwh,avg_power_kw"


def test_events_csv_rejects_reversed(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("meter_id,start_iso,end_iso,energy_kwh,avg_power_kw\nE1,2023-01-01T10:00,2023-01-01T09:00,1,1\n")
    with pytest.raises(ValueError):
        read_events_csv(p)
