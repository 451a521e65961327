import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from reexsim.detchain import ChainConfig, DetectorSpec, FilterSpec, cascade_transmission, detect, filter_transmission
from reexsim.physmodel import ghz
from reexsim.trajectory import PhotonStream


def stream(times_ps, pulses, freqs_ghz=None, n_pulses=None):
    times = np.asarray(times_ps, float) * 1e-12
    pulses = np.asarray(pulses, np.int64)
    f = ghz(np.zeros(times.size) if freqs_ghz is None else np.asarray(freqs_ghz, float))
    ordinal = np.ones(times.size, np.int16)
    for i in range(1, times.size):
        if pulses[i] == pulses[i - 1]:
            ordinal[i] = ordinal[i - 1] + 1
    return PhotonStream(pulses, times, f, f.copy(), ordinal, np.zeros(times.size, bool),
                        int(n_pulses or (pulses.max() + 1 if pulses.size else 1)))


ETALON = FilterSpec("lorentzian_etalon", 0.0, ghz(6.0), ghz(125.0))
KINDS = [ETALON, FilterSpec("gaussian_bandpass", ghz(-40), ghz(120)), FilterSpec("notch", ghz(125), ghz(120), floor=1e-6)]


class TestFilters:
    @pytest.mark.parametrize("spec", KINDS[:2])
    def test_peak_is_one(self, spec):
        assert filter_transmission(spec, spec.center) == pytest.approx(1.0)

    def test_notch_floor_at_center(self):
        assert filter_transmission(KINDS[2], KINDS[2].center) == pytest.approx(1e-6)

    def test_etalon_half_width(self):
        for sign in (-1, 1):
            assert filter_transmission(ETALON, sign * ETALON.fwhm / 2) == pytest.approx(0.5, abs=1e-6)

    def test_etalon_periodic(self):
        assert filter_transmission(ETALON, ETALON.fsr) == pytest.approx(1.0, abs=1e-12)

    def test_aperiodic_lorentzian(self):
        spec = FilterSpec("lorentzian_etalon", 0.0, ghz(6.0))
        assert filter_transmission(spec, ghz(3.0)) == pytest.approx(0.5)
        assert filter_transmission(spec, ghz(125.0)) < 1e-2

    def test_etalon_suppresses_side_peak(self):
        assert filter_transmission(ETALON, ghz(-45.0)) < 0.01

    def test_gaussian_half_width(self):
        spec = KINDS[1]
        assert filter_transmission(spec, spec.center + spec.fwhm / 2) == pytest.approx(0.5)

    @pytest.mark.parametrize(
        "kw",
        [dict(kind="prism", center=0, fwhm=1), dict(kind="notch", center=0, fwhm=0),
         dict(kind="notch", center=0, fwhm=1, floor=2), dict(kind="lorentzian_etalon", center=0, fwhm=2, fsr=1)],
    )
    def test_invalid_specs(self, kw):
        with pytest.raises(ValueError):
            FilterSpec(**kw)


class TestCascade:
    def test_empty_is_identity(self):
        w = ghz(np.linspace(-300, 300, 7))
        assert np.all(cascade_transmission([], w) == 1)

    def test_single_equals_filter(self):
        w = ghz(np.linspace(-300, 300, 101))
        assert np.array_equal(cascade_transmission([ETALON], w), filter_transmission(ETALON, w))

    def test_scanning_pair_rejects_neighbour_order(self):
        pair = [FilterSpec("lorentzian_etalon", 0.0, ghz(5.5), ghz(125)), FilterSpec("lorentzian_etalon", 0.0, ghz(16.4), ghz(292))]
        assert cascade_transmission(pair, ghz(125.0)) < 0.05
        assert cascade_transmission(pair, 0.0) == pytest.approx(1.0)

    @given(st.lists(st.sampled_from(KINDS + [FilterSpec("lorentzian_etalon", ghz(7), ghz(16.4), ghz(292))]), max_size=4),
           st.sampled_from(KINDS), st.floats(-500, 500))
    def test_adding_filter_never_increases_transmission(self, specs, extra, f):
        w = ghz(f)
        assert cascade_transmission(specs + [extra], w) <= cascade_transmission(specs, w) + 1e-15


class TestDetect:
    def test_transparent_chain(self):
        t = [100.4, 250.6, 300.0, 5000.0]
        s = stream(t, [0, 0, 3, 7])
        tags = detect(s, ChainConfig(splitter_ratio=1.0), seed=1)
        arm = tags.channel(1)
        period = ChainConfig().rep_period_ps
        assert arm.size == 4
        assert np.all(np.abs(arm - (np.array([0, 0, 3, 7]) * period + np.array(t))) <= 1)
        assert tags.channel(2).size == 0

    def test_round_half_even(self):
        tags = detect(stream([0.5, 1.5], [0, 1], n_pulses=2), ChainConfig(splitter_ratio=1.0, rep_period=1e-9))
        assert list(tags.channel(1)) == [0, 1000 + 2]

    def test_clock_tags(self):
        chain = ChainConfig()
        assert chain.rep_period_ps == 13166
        tags = detect(stream([], [], n_pulses=1000), chain)
        clock = tags.channel(0)
        assert clock.size == 1000
        assert np.all(np.diff(clock) == 13166)
        assert clock[0] == 0

    def test_output_sorted(self):
        rng = np.random.default_rng(0)
        pulses = np.sort(rng.integers(0, 200, 600))
        s = stream(np.sort(rng.uniform(0, 3000, 600)), pulses)
        tags = detect(s, ChainConfig(detectors=(DetectorSpec(jitter_fwhm=40e-12),) * 2), 3)
        order = np.lexsort((tags.channels, tags.timestamps))
        assert np.array_equal(order, np.arange(len(tags)))

    def test_dark_counts_poisson(self):
        n_pulses = 75_950_000  # one second of clock edges
        s = stream([], [], n_pulses=n_pulses)
        chain = ChainConfig(detectors=(DetectorSpec(dark_rate=1000.0), DetectorSpec()))
        tags = detect(s, chain, seed=4)
        n = tags.channel(1).size
        assert abs(n - 1000) < 3 * np.sqrt(1000)
        assert tags.channel(2).size == 0

    def test_dead_time(self):
        pulses = np.zeros(50, np.int64)
        s = stream(np.arange(50) * 10.0, pulses)
        chain = ChainConfig(splitter_ratio=1.0, detectors=(DetectorSpec(dead_time=35e-12), DetectorSpec()))
        t = detect(s, chain).channel(1)
        assert np.all(np.diff(t) >= 35)
        assert list(t[:3]) == [0, 40, 80]

    def test_splitter_fraction(self):
        n = 200_000
        s = stream(np.full(n, 100.0), np.arange(n))
        tags = detect(s, ChainConfig(splitter_ratio=0.3), seed=9)
        frac = tags.channel(1).size / n
        assert abs(frac - 0.3) < 4 * np.sqrt(0.21 / n)

    def test_filtered_photons_lost(self):
        n = 100_000
        s = stream(np.full(n, 100.0), np.arange(n), freqs_ghz=np.full(n, -45.0))
        tags = detect(s, ChainConfig(arm_a_filters=(ETALON,), add_filter_delay=False), seed=2)
        expected = 0.5 * n * filter_transmission(ETALON, ghz(-45.0))
        assert abs(tags.channel(1).size - expected) < 5 * np.sqrt(expected) + 5

    def test_narrow_etalon_adds_exponential_delay(self):
        n = 100_000
        narrow = FilterSpec("lorentzian_etalon", 0.0, ghz(5.3), ghz(125))
        s = stream(np.full(n, 1000.0), np.arange(n))
        tags = detect(s, ChainConfig(splitter_ratio=1.0, arm_a_filters=(narrow,)), seed=2)
        period = ChainConfig().rep_period_ps
        assert tags.channel(1).size == n
        delays = (tags.channel(1) % period) - 1000
        assert delays.min() >= 0
        assert delays.mean() == pytest.approx(1e12 / narrow.fwhm, rel=0.02)

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(1)
        s = stream(rng.uniform(0, 3000, 1000), np.arange(1000))
        chain = ChainConfig(detectors=(DetectorSpec(0.8, 100.0, 26e-12), DetectorSpec(0.7, 100.0, 29e-12)))
        assert detect(s, chain, 5) == detect(s, chain, 5)
        assert detect(s, chain, 5) != detect(s, chain, 6)

    def test_subset_detection_consistent(self):
        rng = np.random.default_rng(1)
        pulses = np.sort(rng.integers(0, 500, 1200))
        s = stream(np.sort(rng.uniform(0, 3000, 1200)), pulses, n_pulses=500)
        chain = ChainConfig(detectors=(DetectorSpec(0.8, 0.0, 26e-12), DetectorSpec(0.7, 0.0, 29e-12)))
        full = detect(s, chain, 5)
        sub = detect(s.multiphoton(), chain, 5)
        keep_pulses = np.unique(s.multiphoton().pulse_index)
        period = chain.rep_period_ps
        for ch in (1, 2):
            t = full.channel(ch)
            owner = np.floor_divide(t + period // 2, period)
            # jitter never moves a tag by half a period here
            assert np.array_equal(np.sort(t[np.isin(owner, keep_pulses)]), sub.channel(ch))

    def test_chain_invariants(self):
        with pytest.raises(ValueError):
            ChainConfig(clock_channel=1)
        with pytest.raises(ValueError):
            ChainConfig(detectors=(DetectorSpec(),))
        with pytest.raises(ValueError):
            DetectorSpec(efficiency=1.5)
        with pytest.raises(ValueError):
            DetectorSpec(dark_rate=-1)
