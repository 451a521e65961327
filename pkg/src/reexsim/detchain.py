"""Spectral filters, beamsplitter and detectors: photons in, timetags out."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import rng
from .physmodel import LN2, ghz
from .tagio import TagStream
from .trajectory import PhotonStream

FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * LN2))
KINDS = ("lorentzian_etalon", "gaussian_bandpass", "notch")
# etalons narrower than this also delay the photon (Fourier-limit smearing)
DELAY_ETALON_MAX_FWHM = ghz(20.0)


@dataclass(frozen=True)
class FilterSpec:
    """Spectral filter.  ``center``, ``fwhm`` and ``fsr`` are angular
    frequencies relative to the bare transition; ``fsr = 0`` is aperiodic."""

    kind: str
    center: float
    fwhm: float
    fsr: float = 0.0
    floor: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if not self.fwhm > 0:
            raise ValueError("fwhm must be > 0")
        if not 0 <= self.floor <= 1:
            raise ValueError("floor must lie in [0, 1]")
        if self.kind == "lorentzian_etalon" and self.fsr and not self.fsr > self.fwhm:
            raise ValueError("etalon fsr must exceed fwhm")

    def shifted(self, center: float) -> "FilterSpec":
        return replace(self, center=center)


@dataclass(frozen=True)
class DetectorSpec:
    efficiency: float = 1.0
    dark_rate: float = 0.0
    jitter_fwhm: float = 0.0
    dead_time: float = 0.0

    def __post_init__(self):
        if not 0 <= self.efficiency <= 1:
            raise ValueError("efficiency must lie in [0, 1]")
        if min(self.dark_rate, self.jitter_fwhm, self.dead_time) < 0:
            raise ValueError("detector parameters must be >= 0")


@dataclass(frozen=True)
class ChainConfig:
    """HBT detection chain.  Arm A is channel ``arm_a_channel``, arm B the
    other; ``splitter_ratio`` is the probability of routing to arm A."""

    shared_filters: tuple = ()
    arm_a_filters: tuple = ()
    arm_b_filters: tuple = ()
    splitter_ratio: float = 0.5
    detectors: tuple = field(default_factory=lambda: (DetectorSpec(), DetectorSpec()))
    clock_channel: int = 0
    arm_a_channel: int = 1
    arm_b_channel: int = 2
    rep_period: float = 1.0 / 75.95e6
    add_filter_delay: bool = True

    def __post_init__(self):
        chans = {self.clock_channel, self.arm_a_channel, self.arm_b_channel}
        if len(chans) != 3:
            raise ValueError("clock and arm channel ids must be distinct")
        if not all(0 <= c < 256 for c in chans):
            raise ValueError("channel ids must fit in 8 bits")
        if not 0 <= self.splitter_ratio <= 1:
            raise ValueError("splitter_ratio must lie in [0, 1]")
        if len(self.detectors) != 2:
            raise ValueError("exactly two detectors are required")

    @property
    def rep_period_ps(self) -> int:
        # truncated to whole picoseconds: 75.95 MHz -> 13166 ps
        return int(self.rep_period * 1e12)

    @property
    def roles(self) -> dict:
        return {"clock": self.clock_channel, "arm_a": self.arm_a_channel, "arm_b": self.arm_b_channel}


def _airy_coefficient(spec: FilterSpec) -> float:
    # exact: T(center +- fwhm/2) = 1/2; tends to (2F/pi)^2 for high finesse
    return 1.0 / np.sin(0.5 * np.pi * spec.fwhm / spec.fsr) ** 2


def filter_transmission(spec: FilterSpec, omega):
    """Intensity transmission at angular frequency ``omega``."""
    d = np.asarray(omega, dtype=float) - spec.center
    if spec.kind == "lorentzian_etalon":
        if spec.fsr:
            s = np.sin(np.pi * d / spec.fsr)
            out = 1.0 / (1.0 + _airy_coefficient(spec) * s * s)
        else:
            out = 1.0 / (1.0 + (2.0 * d / spec.fwhm) ** 2)
    else:
        gauss = np.exp(-4.0 * LN2 * (d / spec.fwhm) ** 2)
        out = gauss if spec.kind == "gaussian_bandpass" else np.maximum(spec.floor, 1.0 - gauss)
    return out if np.ndim(out) else float(out)


def cascade_transmission(specs, omega):
    out = np.ones_like(np.asarray(omega, dtype=float))
    for spec in specs:
        out = out * filter_transmission(spec, omega)
    return out if np.ndim(out) else float(out)


def _filter_delay(specs, keys, counter0):
    """Exponential ring-down delay (s) through each narrow etalon."""
    delay = np.zeros(len(keys))
    for j, spec in enumerate(specs):
        if spec.kind == "lorentzian_etalon" and spec.fwhm < DELAY_ETALON_MAX_FWHM:
            delay += rng.exponential(keys, counter0 + np.uint64(j)) / spec.fwhm
    return delay


def _dead_time_filter(times, dead):
    """Keep tags (sorted) that are at least ``dead`` after the last kept tag."""
    if dead <= 0 or times.size < 2 or np.all(np.diff(times) >= dead):
        return np.ones(times.size, dtype=bool)
    keep = np.zeros(times.size, dtype=bool)
    last = None
    for i, t in enumerate(times.tolist()):
        if last is None or t - last >= dead:
            keep[i] = True
            last = t
    return keep


def detect(stream: PhotonStream, chain: ChainConfig, seed: int = 0) -> TagStream:
    """Run photons through filters, splitter and detectors.

    Randomness is keyed per pulse (photon ordinal selects the counter), so the
    output is a pure function of ``(stream, chain, seed)``.  Dark tags come
    from a Philox generator keyed by ``(seed, channel)``.
    """
    period_ps = chain.rep_period_ps
    n = len(stream)
    keys = rng.stream_keys(seed, stream.pulse_index, rng.DETECTION)
    base = stream.ordinal.astype(np.uint64) * np.uint64(16)
    u_pass = rng.uniform(keys, base)
    u_route = rng.uniform(keys, base + np.uint64(1))
    jitter = rng.normal(keys, base + np.uint64(2))

    freq = stream.detection_freq
    to_a = u_route < chain.splitter_ratio
    shared = cascade_transmission(chain.shared_filters, freq) if chain.shared_filters else np.ones(n)
    t_a = cascade_transmission(chain.arm_a_filters, freq) if chain.arm_a_filters else np.ones(n)
    t_b = cascade_transmission(chain.arm_b_filters, freq) if chain.arm_b_filters else np.ones(n)
    det_a, det_b = chain.detectors
    survive = shared * np.where(to_a, t_a * det_a.efficiency, t_b * det_b.efficiency)
    passed = u_pass < survive

    t_ps = stream.pulse_index * float(period_ps) + stream.emission_time * 1e12
    if chain.add_filter_delay:
        d_shared = _filter_delay(chain.shared_filters, keys, base + np.uint64(3))
        d_a = _filter_delay(chain.arm_a_filters, keys, base + np.uint64(8))
        d_b = _filter_delay(chain.arm_b_filters, keys, base + np.uint64(12))
        t_ps = t_ps + 1e12 * (d_shared + np.where(to_a, d_a, d_b))
    sigma = np.where(to_a, det_a.jitter_fwhm, det_b.jitter_fwhm) * FWHM_TO_SIGMA * 1e12
    t_ps = t_ps + sigma * jitter

    duration_ps = stream.n_pulses * period_ps
    chans, times = [], []
    for det, ch, mask in ((det_a, chain.arm_a_channel, to_a), (det_b, chain.arm_b_channel, ~to_a)):
        sel = passed & mask
        t = np.rint(t_ps[sel]).astype(np.int64)
        if det.dark_rate > 0:
            g = np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, ch]))
            n_dark = g.poisson(det.dark_rate * duration_ps * 1e-12)
            t = np.concatenate([t, g.integers(0, duration_ps, size=n_dark)])
        t.sort()
        t = t[_dead_time_filter(t, det.dead_time * 1e12)]
        chans.append(np.full(t.size, ch, dtype=np.uint8))
        times.append(t)
    clock = np.arange(stream.n_pulses, dtype=np.int64) * period_ps
    chans.append(np.full(clock.size, chain.clock_channel, dtype=np.uint8))
    times.append(clock)

    out = TagStream(np.concatenate(chans), np.concatenate(times), roles=chain.roles)
    return out.sorted()
