import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evload.data import DailyProfile, TimeGrid
from evload.rates import fit_truncated_exponential
from evload.sessions import (ChargeTimeModel, ChargingSession, LoadDiffStats, SessionError, SessionPolicy,
                             aggregate_method1_profile, derive_time_stats, dump_time_stats, make_session_sampler,
                             moment_match, moment_match_gamma, moment_match_lognormal, rasterize_daily,
                             read_time_stats_csv, sample_session, sample_sessions, time_models,
                             write_time_stats_csv)

GRID = TimeGrid()
REFERENCE_STATS = LoadDiffStats(18.0, 1.92, 28.25, 2.58)
POWER = fit_truncated_exponential(7.0, 19.0, 10.5294)


class Pinned:
    """Stand-in distribution that always returns one value."""

    def __init__(self, value):
        self.value = value

    def sample(self, rng, size=None):
        return self.value if size is None else np.full(size, self.value)

    def ppf(self, u):
        return np.full(np.shape(u), self.value) if np.ndim(u) else self.value


def midpoints():
    return (np.arange(96) + 0.5) * 0.25


class TestDeriveTimeStats:
    def test_constant_raises(self):
        with pytest.raises(SessionError):
            derive_time_stats(DailyProfile(np.zeros(96)))

    def test_rectangle(self):
        v = np.zeros(96)
        v[72:] = 10.0
        v[:17] = 10.0
        stats = derive_time_stats(DailyProfile(v))
        frac = v.mean() / 10.0
        # linear interpolation between the slot midpoints straddling each edge
        assert stats.mean_start_h == pytest.approx(17.875 + 0.25 * frac, abs=1e-12)
        assert stats.mean_end_h == pytest.approx(24 + 4.125 + 0.25 * (1 - frac), abs=1e-12)
        assert abs(stats.mean_start_h - 18.0) < 0.125
        assert abs(stats.mean_end_h - 28.25) < 0.125

    def test_cosine_roots(self):
        v = 1 + np.cos(2 * np.pi * (midpoints() - 23) / 24)
        stats = derive_time_stats(DailyProfile(v))
        assert stats.mean_start_h == pytest.approx(17.0, abs=1e-9)
        assert stats.mean_end_h == pytest.approx(29.0, abs=1e-9)

    def test_std_is_distance_to_zero_crossing(self):
        # a signed diff: zero crossings at 15:00 and 07:00
        v = np.cos(2 * np.pi * (midpoints() - 23) / 24) + 0.5
        stats = derive_time_stats(DailyProfile(v))
        t = midpoints()
        s = v
        nxt = np.roll(s, -1)
        zeros = [(t[i] + 0.25 * s[i] / (s[i] - nxt[i])) % 24 for i in range(96) if s[i] * nxt[i] < 0]
        d = lambda a, b: min(abs(a - b) % 24, 24 - abs(a - b) % 24)
        assert stats.std_start_h == pytest.approx(min(d(stats.mean_start_h, z) for z in zeros), abs=1e-12)
        assert stats.std_end_h == pytest.approx(min(d(stats.mean_end_h, z) for z in zeros), abs=1e-12)

    def test_earliest_crossing_wins(self):
        v = np.zeros(96)
        v[64:68] = 5.0   # 16:00-17:00
        v[80:] = 5.0     # 20:00 onwards
        v[:8] = 5.0
        stats = derive_time_stats(DailyProfile(v))
        assert 15.9 < stats.mean_start_h < 16.1

    def test_missing_window_raises(self):
        # only rises in the morning: no upward crossing after noon
        v = np.zeros(96)
        v[20:40] = 1.0
        with pytest.raises(SessionError):
            derive_time_stats(DailyProfile(v))


class TestMomentMatching:
    def test_lognormal_reference_values(self):
        m = moment_match_lognormal(18.0, 1.92)
        assert m.p2 == pytest.approx(0.10637, abs=5e-6)
        # ln 18 - s^2/2 = 2.884715; the commonly quoted 2.88475 is a rounding slip
        assert m.p1 == pytest.approx(2.884715, abs=5e-6)
        assert abs(m.p1 - 2.88475) < 1e-4
        assert math.exp(m.p1 + m.p2 ** 2 / 2) == pytest.approx(18.0, abs=1e-9)

    def test_lognormal_spike(self):
        m = moment_match_lognormal(1.0, 1e-9)
        assert abs(m.p1) < 1e-15 and m.p2 < 1e-8

    def test_gamma_values(self):
        m = moment_match_gamma(4.0, 2.0)
        assert (m.p1, m.p2) == (4.0, 1.0)
        m = moment_match_gamma(18.0, 1.92)
        assert m.p1 == pytest.approx(87.890625, rel=1e-14)
        assert m.p2 == pytest.approx(0.2048, rel=1e-14)
        m = moment_match_gamma(28.25, 2.58)
        assert m.p1 * m.p2 == pytest.approx(28.25, rel=1e-15)
        assert m.p1 * m.p2 ** 2 == pytest.approx(6.6564, rel=1e-15)

    @pytest.mark.parametrize("args", [(0, 1), (1, 0), (-1, 1)])
    def test_nonpositive(self, args):
        with pytest.raises(ValueError):
            moment_match_lognormal(*args)
        with pytest.raises(ValueError):
            moment_match_gamma(*args)

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            moment_match("normal", 1, 1)

    def test_round_trip_thousand_pairs(self, rng):
        for mu, sd in zip(rng.uniform(0.5, 48, 1000), rng.uniform(0.05, 10, 1000)):
            for fam in ("lognormal", "gamma"):
                mean, std = moment_match(fam, mu, sd).moments()
                assert abs(mean - mu) < 1e-9 and abs(std - sd) < 1e-9

    @settings(max_examples=200, deadline=None)
    @given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
    def test_round_trip_property(self, mu, sd):
        for fam in ("lognormal", "gamma"):
            mean, std = moment_match(fam, mu, sd).moments()
            assert mean == pytest.approx(mu, rel=1e-9)
            assert std == pytest.approx(sd, rel=1e-9)


class TestSampling:
    def test_truncation_pinned(self, rng):
        s = sample_session(Pinned(18.0), Pinned(28.25), Pinned(10.5294), SessionPolicy(), rng)
        assert s.energy_kwh == 60.0
        assert s.duration_h == pytest.approx(5.6983, abs=1e-4)
        assert s.end_h == pytest.approx(23.698, abs=1e-3)

    def test_no_truncation_pinned(self, rng):
        s = sample_session(Pinned(20.0), Pinned(25.0), Pinned(7.0), SessionPolicy(), rng)
        assert (s.end_h, s.energy_kwh) == (25.0, 35.0)

    def test_invalid_never_resolves(self, rng):
        with pytest.raises(SessionError):
            sample_session(Pinned(20.0), Pinned(19.0), Pinned(7.0), SessionPolicy(max_resamples=5), rng)

    @pytest.mark.parametrize("family", ["lognormal", "gamma"])
    def test_invariants(self, rng, family):
        start, end = time_models(REFERENCE_STATS, family)
        sessions = sample_sessions(10_000, start, end, POWER, SessionPolicy(), rng)
        assert all(0 < s.duration_h <= 24 for s in sessions)
        assert all(s.energy_kwh <= 60.0 for s in sessions)
        assert all(0 <= s.start_h < 24 for s in sessions)
        assert all(7 <= s.rated_kw <= 19 for s in sessions)

    def test_start_model_moments(self, rng):
        start, _ = time_models(REFERENCE_STATS, "lognormal")
        x = start.sample(rng, 10_000)
        assert abs(x.mean() - 18.0) < 0.1
        assert abs(x.std() - 1.92) < 0.1

    def test_sampler_is_keyed_by_ev(self):
        start, end = time_models(REFERENCE_STATS, "lognormal")
        f = make_session_sampler(start, end, POWER, SessionPolicy(), seed=7)
        g = make_session_sampler(start, end, POWER, SessionPolicy(), seed=7)
        assert f(3) == g(3)
        assert f(3) != f(4)


class TestAggregate:
    def test_rectangle(self):
        p = rasterize_daily([ChargingSession(18.0, 20.0, 10.0, 20.0)]).values
        assert np.count_nonzero(p) == 8
        np.testing.assert_array_equal(p[72:80], 10.0)
        assert p.sum() * 0.25 == 20.0

    def test_wrap(self):
        p = rasterize_daily([ChargingSession(23.0, 25.0, 8.0, 16.0)]).values
        np.testing.assert_array_equal(p[92:], 8.0)
        np.testing.assert_array_equal(p[:4], 8.0)
        assert np.count_nonzero(p) == 8

    def test_partial_slot(self):
        p = rasterize_daily([ChargingSession(18.1, 18.2, 6.0, 0.6)]).values
        assert p[72] == pytest.approx(6.0 * 0.1 / 0.25)

    @pytest.mark.parametrize("family", ["lognormal", "gamma"])
    def test_fleet_shape_and_energy(self, family):
        start, end = time_models(REFERENCE_STATS, family)
        sampler = make_session_sampler(start, end, POWER, SessionPolicy(), seed=11)
        profile, sessions = aggregate_method1_profile(144, sampler)
        v = profile.values
        hours = midpoints()
        assert v[:20].mean() / v[36:60].mean() > 3
        peak = hours[np.argmax(v)]
        assert peak >= 18 or peak < 6
        assert abs(v.sum() * 0.25 - sum(s.energy_kwh for s in sessions)) < 1e-6

    def test_thread_count_irrelevant(self):
        start, end = time_models(REFERENCE_STATS, "gamma")
        sampler = make_session_sampler(start, end, POWER, SessionPolicy(), seed=3)
        a, sa = aggregate_method1_profile(50, sampler, threads=1)
        b, sb = aggregate_method1_profile(50, sampler, threads=8)
        assert sa == sb
        np.testing.assert_array_equal(a.values, b.values)

    def test_zero_fleet_rejected(self):
        with pytest.raises(ValueError):
            aggregate_method1_profile(0, lambda i: [])


def test_stats_csv_round_trip(tmp_path):
    write_time_stats_csv(tmp_path / "s.csv", REFERENCE_STATS)
    assert read_time_stats_csv(tmp_path / "s.csv") == REFERENCE_STATS
    buf = io.StringIO()
    dump_time_stats(buf, REFERENCE_STATS)
    assert "04:15" in buf.getvalue() and "18:00" in buf.getvalue()


def test_stats_validation():
    with pytest.raises(SessionError):
        LoadDiffStats(18.0, 1.0, 17.0, 1.0)
    with pytest.raises(ValueError):
        ChargeTimeModel("gamma", -1, 1)


def test_derived_stats_survive_csv(tmp_path):
    v = np.cos(2 * np.pi * (midpoints() - 23) / 24) + 0.5
    stats = derive_time_stats(DailyProfile(v))
    assert all(type(x) is float for x in vars(stats).values())
    write_time_stats_csv(tmp_path / "s.csv", stats)
    assert read_time_stats_csv(tmp_path / "s.csv") == stats
