import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import constants, integrate

from reexsim.physmodel import (
    EmitterModel,
    LaserPulse,
    PhononEnv,
    bose_occupation,
    dressed_weights,
    effective_rabi,
    ghz,
    instantaneous_emission_freq,
    max_shift,
    peak_rabi_from_power,
    phonon_rates,
    phonon_spectral_density,
    pulse_envelope,
    rabi_from_shift,
    to_ghz,
)

T0 = 200e-12


def pulse(rabi_ghz=115.2, det_ghz=125.0, fwhm=80e-12):
    return LaserPulse(ghz(det_ghz), fwhm, ghz(rabi_ghz))


def test_unit_helpers_round_trip():
    assert to_ghz(ghz(12.5)) == pytest.approx(12.5)
    assert ghz(1.0) == pytest.approx(2 * np.pi * 1e9)


@pytest.mark.parametrize(
    "kwargs",
    [dict(pulse_fwhm=0.0), dict(peak_rabi=-1.0), dict(pulse_fwhm=4e-9)],
)
def test_laser_pulse_invariants(kwargs):
    base = dict(detuning=ghz(125), pulse_fwhm=80e-12, peak_rabi=ghz(100))
    base.update(kwargs)
    with pytest.raises(ValueError):
        LaserPulse(**base)


def test_emitter_and_env_invariants():
    with pytest.raises(ValueError):
        EmitterModel(lifetime=0.0)
    with pytest.raises(ValueError):
        EmitterModel(diffusion_sigma=-1.0)
    with pytest.raises(ValueError):
        PhononEnv(coupling=-1.0, cutoff=1.0)
    with pytest.raises(ValueError):
        PhononEnv(coupling=1.0, cutoff=0.0)
    with pytest.raises(ValueError):
        PhononEnv(coupling=1.0, cutoff=1.0, temperature=-1)


class TestEnvelope:
    def test_peak(self):
        p = pulse()
        assert pulse_envelope(p, T0) == pytest.approx(p.peak_rabi)

    def test_intensity_fwhm(self):
        p = pulse()
        for t in (T0 - 40e-12, T0 + 40e-12):
            assert pulse_envelope(p, t) ** 2 == pytest.approx(p.peak_rabi**2 / 2, rel=1e-12)

    def test_zero_drive(self):
        p = pulse(rabi_ghz=0.0)
        assert np.all(pulse_envelope(p, np.linspace(0, 1e-9, 11)) == 0)


class TestEffectiveRabi:
    def test_no_drive_gives_detuning(self):
        p = pulse(rabi_ghz=0.0)
        assert effective_rabi(p, T0) == pytest.approx(p.detuning)

    def test_equal_drive(self):
        p = pulse(rabi_ghz=125.0)
        assert effective_rabi(p, T0) == pytest.approx(np.sqrt(2) * p.detuning)

    def test_reference_point(self):
        assert to_ghz(effective_rabi(pulse(), T0)) == pytest.approx(np.sqrt(115.2**2 + 125**2), abs=1e-9)
        assert to_ghz(effective_rabi(pulse(), T0)) == pytest.approx(170.0, abs=0.05)


class TestEmissionFrequency:
    def test_bare_without_drive(self):
        assert instantaneous_emission_freq(pulse(rabi_ghz=0.0), T0) == 0.0

    def test_reference_shift(self):
        # -45 GHz at the reference drive
        assert to_ghz(instantaneous_emission_freq(pulse(), T0)) == pytest.approx(125 - np.hypot(115.2, 125), abs=1e-9)
        assert to_ghz(instantaneous_emission_freq(pulse(), T0)) == pytest.approx(-45.0, abs=0.1)

    def test_halving_drive_reduces_shift(self):
        full = instantaneous_emission_freq(pulse(), T0)
        half = instantaneous_emission_freq(pulse(rabi_ghz=57.6), T0)
        assert abs(half) < abs(full)

    @given(
        st.floats(0, 500), st.floats(1, 500), st.floats(-1e-9, 2e-9)
    )
    def test_red_shift_only(self, rabi, det, t):
        p = pulse(rabi, det)
        shift = instantaneous_emission_freq(p, t)
        assert shift <= 0
        if pulse_envelope(p, t) == 0:
            assert shift == 0


class TestShiftInversion:
    def test_zero(self):
        assert max_shift(0.0, ghz(125)) == 0.0
        assert rabi_from_shift(0.0, ghz(125)) == 0.0

    def test_reference(self):
        assert to_ghz(max_shift(ghz(115.2), ghz(125))) == pytest.approx(-45.0, abs=0.05)
        assert to_ghz(rabi_from_shift(ghz(-45.0), ghz(125))) == pytest.approx(np.sqrt(45 * 295), rel=1e-12)
        assert to_ghz(rabi_from_shift(ghz(-45.0), ghz(125))) == pytest.approx(115.2, abs=0.05)

    def test_large_drive_asymptote(self):
        d = ghz(100)
        w = ghz(1e5)
        assert max_shift(w, d) == pytest.approx(d - w, rel=1e-4)

    def test_grid_round_trip(self):
        w, d = np.meshgrid(ghz(np.linspace(10, 300, 60)), ghz(np.linspace(50, 300, 60)))
        back = rabi_from_shift(max_shift(w, d), d)
        assert np.max(np.abs(back / w - 1)) < 1e-12

    @given(st.floats(0, 1e4), st.floats(1e-3, 1e4))
    def test_round_trip_property(self, w_ghz, d_ghz):
        w, d = ghz(w_ghz), ghz(d_ghz)
        back = rabi_from_shift(max_shift(w, d), d)
        assert back == pytest.approx(w, rel=1e-12, abs=1e-12 * d)

    @pytest.mark.parametrize("det", [0.0, -ghz(10)])
    def test_rejects_non_blue(self, det):
        with pytest.raises(ValueError):
            max_shift(ghz(10), det)
        with pytest.raises(ValueError):
            rabi_from_shift(-ghz(1), det)

    def test_rejects_blue_side_peak(self):
        with pytest.raises(ValueError):
            rabi_from_shift(ghz(5), ghz(125))


class TestSpectralDensity:
    env = PhononEnv(coupling=1e-25, cutoff=ghz(180))

    def test_zero(self):
        assert phonon_spectral_density(self.env, 0.0) == 0.0

    def test_value_at_cutoff(self):
        wc = self.env.cutoff
        assert phonon_spectral_density(self.env, wc) / self.env.coupling == pytest.approx(wc**3 / np.e, rel=1e-12)

    def test_single_maximum(self):
        w = np.linspace(1e-3, 5, 200_001) * self.env.cutoff
        dj = np.diff(phonon_spectral_density(self.env, w))
        changes = np.flatnonzero(np.diff(np.sign(dj)) != 0)
        assert changes.size == 1
        assert w[changes[0] + 1] == pytest.approx(self.env.cutoff * np.sqrt(1.5), rel=1e-4)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            phonon_spectral_density(self.env, -1.0)


class TestBose:
    def test_zero_temperature(self):
        assert bose_occupation(ghz(115), 0.0) == 0.0

    def test_reference_value(self):
        x = constants.h * 115e9 / (constants.k * 4.0)
        assert x == pytest.approx(1.380, abs=1e-3)
        assert bose_occupation(ghz(115), 4.0) == pytest.approx(1 / np.expm1(x), rel=1e-12)
        assert bose_occupation(ghz(115), 4.0) == pytest.approx(0.336, abs=1e-3)

    def test_ln2_point(self):
        temp = constants.hbar * ghz(100) / (constants.k * np.log(2))
        assert bose_occupation(ghz(100), temp) == pytest.approx(1.0, rel=1e-12)

    @given(st.floats(1, 1000), st.floats(0.5, 300), st.floats(0.5, 300))
    def test_monotone_in_temperature(self, nu, t1, t2):
        lo, hi = sorted((t1, t2))
        assert bose_occupation(ghz(nu), lo) <= bose_occupation(ghz(nu), hi)

    def test_rejects_nonpositive_frequency(self):
        with pytest.raises(ValueError):
            bose_occupation(0.0, 4.0)


class TestRates:
    env = PhononEnv(coupling=1e-25, cutoff=ghz(180), temperature=4.0)

    def test_vanish_without_drive(self):
        down, up = phonon_rates(pulse(rabi_ghz=0.0), self.env, T0)
        assert down == 0 and up == 0

    def test_zero_temperature_no_absorption(self):
        env = PhononEnv(1e-25, ghz(180), 0.0)
        down, up = phonon_rates(pulse(), env, np.linspace(0, 4e-10, 50))
        assert np.all(up == 0) and np.all(down >= 0)

    def test_formula(self):
        p = pulse()
        w = pulse_envelope(p, T0)
        weff = effective_rabi(p, T0)
        n = bose_occupation(weff, 4.0)
        j = phonon_spectral_density(self.env, weff)
        down, up = phonon_rates(p, self.env, T0)
        assert down == pytest.approx(0.5 * np.pi * j * (w / weff) ** 2 * (n + 1), rel=1e-12)
        assert up == pytest.approx(0.5 * np.pi * j * (w / weff) ** 2 * n, rel=1e-12)

    def test_reference_ratio(self):
        # choose the drive so that the effective Rabi frequency is 115 GHz
        det = 60.0
        p = pulse(rabi_ghz=np.sqrt(115.0**2 - det**2), det_ghz=det)
        down, up = phonon_rates(p, self.env, T0)
        assert up / down == pytest.approx(0.252, abs=1e-3)

    @given(st.floats(1, 400), st.floats(1, 400), st.floats(0.1, 50))
    def test_detailed_balance(self, rabi, det, temp):
        env = PhononEnv(1e-25, ghz(180), temp)
        p = pulse(rabi, det)
        down, up = phonon_rates(p, env, T0)
        expected = np.exp(-constants.hbar * effective_rabi(p, T0) / (constants.k * temp))
        if down > 0:
            assert up / down == pytest.approx(expected, rel=1e-12)


class TestPowerScaling:
    def test_identity(self):
        assert peak_rabi_from_power(ghz(100), 80e-12, 80e-12) == pytest.approx(ghz(100))

    def test_square_root_law(self):
        assert peak_rabi_from_power(ghz(100), 20e-12, 80e-12) == pytest.approx(ghz(50))

    def test_scale_invariance(self):
        a = peak_rabi_from_power(ghz(100), 20e-12, 35e-12)
        b = peak_rabi_from_power(ghz(100), 80e-12, 140e-12)
        assert a == pytest.approx(b, rel=1e-14)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            peak_rabi_from_power(ghz(100), 0.0, 80e-12)

    @pytest.mark.parametrize("fwhm", [10e-12, 20e-12, 40e-12, 80e-12])
    def test_constant_pulse_energy(self, fwhm):
        ref = LaserPulse(ghz(125), 80e-12, ghz(115.2))
        p = LaserPulse(ghz(125), fwhm, peak_rabi_from_power(ref.peak_rabi, 80e-12, fwhm))

        def energy(q):
            return integrate.quad(lambda t: pulse_envelope(q, t) ** 2, 0, 4e-10, points=[T0], epsabs=0, epsrel=1e-13)[0]

        assert energy(p) == pytest.approx(energy(ref), rel=1e-6)


class TestDressedWeights:
    def test_endpoints(self):
        wa, wb = dressed_weights(pulse(rabi_ghz=0.0), T0)
        assert (wa, wb) == (0.0, 1.0)

    def test_strong_drive_limit(self):
        wa, wb = dressed_weights(pulse(rabi_ghz=1e9), T0)
        assert wa == pytest.approx(0.5, abs=1e-6) and wb == pytest.approx(0.5, abs=1e-6)

    def test_equal_drive(self):
        _, wb = dressed_weights(pulse(rabi_ghz=125.0), T0)
        assert wb == pytest.approx(0.5 * (1 + 1 / np.sqrt(2)), rel=1e-12)
        assert wb == pytest.approx(0.854, abs=1e-3)

    def test_rejects_red(self):
        with pytest.raises(ValueError):
            dressed_weights(pulse(det_ghz=-125.0), T0)
