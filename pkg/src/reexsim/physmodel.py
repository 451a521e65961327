"""Closed-form physics of a phonon-assisted, pulse-driven two-level emitter.

All frequencies are angular (rad/s) and all times are seconds.  Functions
accept scalars or numpy arrays for the time/frequency argument and broadcast.
Use :func:`ghz` / :func:`to_ghz` to move between rad/s and the ``nu = w/2pi``
GHz values used for reporting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import constants

HBAR = constants.hbar
K_B = constants.k
TWO_PI = 2.0 * np.pi
LN2 = np.log(2.0)


def ghz(nu_ghz):
    """Angular frequency (rad/s) for a frequency given in GHz."""
    out = TWO_PI * 1e9 * np.asarray(nu_ghz, dtype=float)
    return out if out.ndim else float(out)


def to_ghz(omega):
    """GHz value of an angular frequency in rad/s."""
    return omega / (TWO_PI * 1e9)


@dataclass(frozen=True)
class LaserPulse:
    """Gaussian drive pulse.

    ``pulse_fwhm`` is the FWHM of the intensity envelope, ``peak_rabi`` the
    field Rabi frequency at ``pulse_center``.
    """

    detuning: float
    pulse_fwhm: float
    peak_rabi: float
    rep_period: float = 1.0 / 75.95e6
    pulse_center: float = 200e-12

    def __post_init__(self):
        if not self.pulse_fwhm > 0:
            raise ValueError("pulse_fwhm must be > 0")
        if not self.rep_period > 4.0 * self.pulse_fwhm:
            raise ValueError("rep_period must exceed 4 * pulse_fwhm")
        if not self.peak_rabi >= 0:
            raise ValueError("peak_rabi must be >= 0")

    def window(self, eps: float) -> tuple[float, float]:
        """Times where the field envelope equals ``eps * peak_rabi``."""
        half = self.pulse_fwhm * np.sqrt(np.log(1.0 / eps) / (2.0 * LN2))
        return self.pulse_center - half, self.pulse_center + half


@dataclass(frozen=True)
class EmitterModel:
    lifetime: float = 465e-12
    diffusion_sigma: float = 0.0
    fourier_broadening_coeff: float = 1.0
    transition_freq: float = 0.0

    def __post_init__(self):
        if not self.lifetime > 0:
            raise ValueError("lifetime must be > 0")
        if not self.diffusion_sigma >= 0:
            raise ValueError("diffusion_sigma must be >= 0")
        if not self.fourier_broadening_coeff >= 0:
            raise ValueError("fourier_broadening_coeff must be >= 0")


@dataclass(frozen=True)
class PhononEnv:
    """Super-ohmic phonon bath: coupling (s^2), cutoff (rad/s), temperature (K)."""

    coupling: float
    cutoff: float
    temperature: float = 4.0

    def __post_init__(self):
        if not self.coupling >= 0:
            raise ValueError("coupling must be >= 0")
        if not self.cutoff > 0:
            raise ValueError("cutoff must be > 0")
        if not self.temperature >= 0:
            raise ValueError("temperature must be >= 0")


def pulse_envelope(pulse: LaserPulse, t):
    """Field Rabi frequency; its square has FWHM ``pulse.pulse_fwhm``."""
    x = (np.asarray(t, dtype=float) - pulse.pulse_center) / pulse.pulse_fwhm
    return pulse.peak_rabi * np.exp(-2.0 * LN2 * x * x)


def effective_rabi(pulse: LaserPulse, t):
    return np.hypot(pulse_envelope(pulse, t), pulse.detuning)


def instantaneous_emission_freq(pulse: LaserPulse, t):
    """Emission frequency offset from the bare transition while dressed."""
    return pulse.detuning - effective_rabi(pulse, t)


def max_shift(peak_rabi, detuning):
    """Largest red shift of the dressed emission line, reached at the pulse peak."""
    if np.any(np.asarray(detuning) <= 0):
        raise ValueError("max_shift requires a blue detuning (> 0)")
    peak_rabi = np.asarray(peak_rabi, dtype=float)
    # d - sqrt(W^2 + d^2) rewritten to avoid cancellation at small W
    out = -(peak_rabi**2) / (detuning + np.hypot(peak_rabi, detuning))
    return out if out.ndim else float(out)


def rabi_from_shift(shift, detuning):
    """Invert :func:`max_shift`: peak Rabi frequency from the measured red shift."""
    shift = np.asarray(shift, dtype=float)
    detuning = np.asarray(detuning, dtype=float)
    if np.any(detuning <= 0):
        raise ValueError("rabi_from_shift requires a blue detuning (> 0)")
    radicand = shift * (shift - 2.0 * detuning)
    if np.any(radicand < 0) or np.any(shift > 0):
        raise ValueError("unphysical blue-shifted side peak: shift must be <= 0")
    out = np.sqrt(radicand)
    return out if out.ndim else float(out)


def phonon_spectral_density(env: PhononEnv, omega):
    omega = np.asarray(omega, dtype=float)
    if np.any(omega < 0):
        raise ValueError("spectral density is defined for omega >= 0")
    return env.coupling * omega**3 * np.exp(-((omega / env.cutoff) ** 2))


def bose_occupation(omega, temperature):
    """Thermal phonon number; exactly zero at zero temperature."""
    omega = np.asarray(omega, dtype=float)
    if np.any(omega <= 0):
        raise ValueError("bose_occupation requires omega > 0")
    if temperature == 0:
        return np.zeros_like(omega) if omega.ndim else 0.0
    out = 1.0 / np.expm1(HBAR * omega / (K_B * temperature))
    return out if out.ndim else float(out)


def phonon_rates(pulse: LaserPulse, env: PhononEnv, t):
    """Golden-rule phonon emission (down) and absorption (up) rates between
    the dressed states at time ``t``.

    Returns ``(gamma_down, gamma_up)`` in 1/s.
    """
    rabi = pulse_envelope(pulse, t)
    w_eff = np.hypot(rabi, pulse.detuning)
    mixing = np.divide(rabi**2, w_eff**2, out=np.zeros_like(w_eff), where=w_eff > 0)
    safe_w = np.where(w_eff > 0, w_eff, 1.0)
    base = 0.5 * np.pi * phonon_spectral_density(env, safe_w) * mixing
    n = bose_occupation(safe_w, env.temperature)
    down = base * (n + 1.0)
    up = base * n
    if np.ndim(down) == 0:
        return float(down), float(up)
    return down, up


def peak_rabi_from_power(reference_rabi: float, reference_fwhm: float, pulse_fwhm: float) -> float:
    """Peak Rabi frequency at constant average power when the pulse is stretched."""
    if min(reference_rabi, reference_fwhm, pulse_fwhm) <= 0:
        raise ValueError("all arguments must be > 0")
    return reference_rabi * np.sqrt(reference_fwhm / pulse_fwhm)


def dressed_weights(pulse: LaserPulse, t):
    """Excitonic weights ``(w_alpha, w_beta)`` of the two dressed states."""
    if pulse.detuning <= 0:
        raise ValueError("dressed_weights requires a blue detuning (> 0)")
    w_beta = 0.5 * (1.0 + pulse.detuning / effective_rabi(pulse, t))
    w_alpha = 1.0 - w_beta
    if np.ndim(w_beta) == 0:
        return float(w_alpha), float(w_beta)
    return w_alpha, w_beta
