"""Quantum-jump Monte Carlo over the per-pulse dressed-state rate model.

Each pulse starts in the ground-like dressed state when the drive rises
above ``laser_off_threshold * peak_rabi``.  While the drive is on, three jumps
compete:

* phonon-assisted excitation into the exciton-like dressed state,
* the reverse phonon process,
* radiative decay of the exciton-like state at ``w_exciton(t) / lifetime``,
  emitting a photon at the instantaneous dressed-state frequency and leaving
  the emitter ground-like, i.e. ready for re-excitation.

Once the drive has fallen below threshold the exciton-like state is the bare
exciton and decays at ``1 / lifetime`` at the bare frequency.  Jump times are
sampled by Lewis-Shedler thinning against a constant rate bound, vectorised
over all pulses of a block; each pulse reads its own counter-based stream so
results do not depend on blocking or worker count.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng
from .physmodel import (
    EmitterModel,
    LaserPulse,
    PhononEnv,
    effective_rabi,
    phonon_rates,
    to_ghz,
)

GROUND, EXCITED = 0, 1


class PulseAborted(RuntimeError):
    """A pulse produced more photons than ``max_photons_per_pulse``."""


@dataclass(frozen=True)
class SimConfig:
    n_pulses: int = 100_000
    rng_seed: int = 0
    laser_off_threshold: float = 1e-3
    max_photons_per_pulse: int = 4
    thinning_margin: float = 1.2
    n_workers: int = 1
    block_size: int = 250_000

    def __post_init__(self):
        if self.n_pulses < 1:
            raise ValueError("n_pulses must be >= 1")
        if not 0 < self.laser_off_threshold < 1:
            raise ValueError("laser_off_threshold must lie in (0, 1)")
        if self.thinning_margin < 1:
            raise ValueError("thinning_margin must be >= 1")
        if self.max_photons_per_pulse < 1:
            raise ValueError("max_photons_per_pulse must be >= 1")
        if self.n_workers < 1 or self.block_size < 1:
            raise ValueError("n_workers and block_size must be >= 1")


@dataclass(frozen=True)
class PhotonRecord:
    pulse_index: int
    emission_time: float
    center_freq: float
    detection_freq: float
    ordinal: int
    dressed: bool


@dataclass
class PhotonStream:
    """Column-oriented photon records, sorted by (pulse_index, emission_time).

    ``dressed`` marks photons emitted while the drive was above threshold.
    """

    pulse_index: np.ndarray
    emission_time: np.ndarray
    center_freq: np.ndarray
    detection_freq: np.ndarray
    ordinal: np.ndarray
    dressed: np.ndarray
    n_pulses: int
    config: dict = field(default_factory=dict)
    aborted: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self):
        return len(self.pulse_index)

    @property
    def counts_per_pulse(self) -> np.ndarray:
        return np.bincount(self.pulse_index, minlength=self.n_pulses)

    def photon_number_distribution(self) -> np.ndarray:
        """Fraction of pulses emitting 0, 1, 2, ... photons."""
        return np.bincount(self.counts_per_pulse) / self.n_pulses

    def records(self):
        for i in range(len(self)):
            yield PhotonRecord(
                int(self.pulse_index[i]),
                float(self.emission_time[i]),
                float(self.center_freq[i]),
                float(self.detection_freq[i]),
                int(self.ordinal[i]),
                bool(self.dressed[i]),
            )

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["pulse_index", "emission_time_ps", "center_freq_GHz", "detection_freq_GHz", "ordinal"])
        for p, t, c, d, o in zip(
            self.pulse_index,
            self.emission_time * 1e12,
            to_ghz(self.center_freq),
            to_ghz(self.detection_freq),
            self.ordinal,
        ):
            w.writerow([int(p), f"{t:.6f}", f"{c:.6f}", f"{d:.6f}", int(o)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text

    def select(self, mask) -> "PhotonStream":
        """Photons where ``mask`` holds; ``n_pulses`` is unchanged."""
        mask = np.asarray(mask, dtype=bool)
        return PhotonStream(
            self.pulse_index[mask],
            self.emission_time[mask],
            self.center_freq[mask],
            self.detection_freq[mask],
            self.ordinal[mask],
            self.dressed[mask],
            self.n_pulses,
            self.config,
            self.aborted,
        )

    def multiphoton(self) -> "PhotonStream":
        """Photons of pulses that emitted two or more."""
        return self.select(self.counts_per_pulse[self.pulse_index] >= 2)

    @classmethod
    def concatenate(cls, parts, n_pulses, config):
        def cat(name, dtype):
            arrs = [getattr(p, name) for p in parts]
            return np.concatenate(arrs).astype(dtype) if arrs else np.zeros(0, dtype)

        return cls(
            cat("pulse_index", np.int64),
            cat("emission_time", float),
            cat("center_freq", float),
            cat("detection_freq", float),
            cat("ordinal", np.int16),
            cat("dressed", bool),
            n_pulses,
            config,
            cat("aborted", np.int64),
        )


class _RateModel:
    """Rate functions for one parameter set, oriented by the detuning sign."""

    def __init__(self, pulse: LaserPulse, emitter: EmitterModel, env: PhononEnv, cfg: SimConfig):
        self.pulse, self.emitter, self.env = pulse, emitter, env
        self.blue = pulse.detuning >= 0
        self.t_on, self.t_off = pulse.window(cfg.laser_off_threshold)
        grid = np.linspace(self.t_on, self.t_off, 4001)
        excite, relax = self.rates(grid)
        radiative = self.radiative(grid)
        bound = max(excite.max(), (relax + radiative).max())
        self.rate_bound = cfg.thinning_margin * bound if bound > 0 else 0.0

    def rates(self, t):
        """(excitation, relaxation) phonon rates."""
        g_down, g_up = phonon_rates(self.pulse, self.env, t)
        return (g_down, g_up) if self.blue else (g_up, g_down)

    def exciton_weight(self, t):
        return 0.5 * (1.0 + abs(self.pulse.detuning) / effective_rabi(self.pulse, t))

    def radiative(self, t):
        return self.exciton_weight(t) / self.emitter.lifetime

    def emission_freq(self, t):
        w_eff = effective_rabi(self.pulse, t)
        d = self.pulse.detuning
        return d - w_eff if self.blue else d + w_eff


def _simulate_block(pulse, emitter, env, cfg, indices):
    indices = np.asarray(indices, dtype=np.int64)
    n = len(indices)
    keys = rng.stream_keys(cfg.rng_seed, indices, rng.TRAJECTORY)
    out_p, out_t, out_f, out_d = [], [], [], []
    aborted = np.zeros(n, dtype=bool)

    if pulse.peak_rabi > 0 and n:
        model = _RateModel(pulse, emitter, env, cfg)
        lam = model.rate_bound
        state = np.full(n, GROUND, dtype=np.int8)
        t = np.full(n, model.t_on)
        counter = np.zeros(n, dtype=np.uint64)
        nphot = np.zeros(n, dtype=np.int64)
        active = np.arange(n) if lam > 0 else np.arange(0)

        while active.size:
            k = keys[active]
            c = counter[active]
            u_wait = rng.uniform(k, c)
            u_accept = rng.uniform(k, c + np.uint64(1))
            u_pick = rng.uniform(k, c + np.uint64(2))
            counter[active] += np.uint64(3)

            tc = t[active] - np.log(u_wait) / lam
            st = state[active]
            done = tc >= model.t_off
            if done.any():
                # drive is off: exciton-like state is the bare exciton
                fin = active[done & (st == EXCITED)]
                if fin.size:
                    u = u_accept[done & (st == EXCITED)]
                    out_p.append(fin)
                    out_t.append(model.t_off - emitter.lifetime * np.log(u))
                    out_f.append(np.zeros(fin.size))
                    out_d.append(np.zeros(fin.size, dtype=bool))
                    nphot[fin] += 1

            live = ~done
            act, tc, st = active[live], tc[live], st[live]
            u_accept, u_pick = u_accept[live], u_pick[live]
            t[act] = tc
            excite, relax = model.rates(tc)
            radiative = model.radiative(tc)
            excited = st == EXCITED
            total = np.where(excited, relax + radiative, excite)
            jump = u_accept * lam < total

            up_jump = jump & ~excited
            state[act[up_jump]] = EXCITED

            down_jump = jump & excited
            emit = down_jump & (u_pick * total < radiative)
            state[act[down_jump]] = GROUND
            if emit.any():
                em = act[emit]
                out_p.append(em)
                out_t.append(tc[emit])
                out_f.append(model.emission_freq(tc[emit]))
                out_d.append(np.ones(em.size, dtype=bool))
                nphot[em] += 1
                over = em[nphot[em] > cfg.max_photons_per_pulse]
                aborted[over] = True

            finished = np.zeros(n, dtype=bool)
            finished[active[done]] = True
            finished[aborted] = True
            active = active[~finished[active]]

        # pulses that ended above the cap in the post-drive decay
        aborted |= nphot > cfg.max_photons_per_pulse

    if out_p:
        loc = np.concatenate(out_p)
        times = np.concatenate(out_t)
        freqs = np.concatenate(out_f)
        dressed = np.concatenate(out_d)
    else:
        loc = np.zeros(0, dtype=np.int64)
        times = freqs = np.zeros(0)
        dressed = np.zeros(0, dtype=bool)

    keep = ~aborted[loc]
    loc, times, freqs, dressed = loc[keep], times[keep], freqs[keep], dressed[keep]
    order = np.lexsort((times, loc))
    loc, times, freqs, dressed = loc[order], times[order], freqs[order], dressed[order]
    pulse_idx = indices[loc]
    ordinal = _ordinals(loc)

    part = PhotonStream(
        pulse_idx,
        times,
        freqs,
        freqs.copy(),
        ordinal,
        dressed,
        n,
        aborted=indices[aborted],
    )
    part.detection_freq = assign_frequency(part, emitter, pulse, cfg.rng_seed)
    return part


def _ordinals(sorted_groups):
    """1-based position of each element within its run of equal values."""
    n = len(sorted_groups)
    if n == 0:
        return np.zeros(0, dtype=np.int16)
    starts = np.r_[True, sorted_groups[1:] != sorted_groups[:-1]]
    run_start = np.maximum.accumulate(np.where(starts, np.arange(n), 0))
    return (np.arange(n) - run_start + 1).astype(np.int16)


def assign_frequency(stream: PhotonStream, emitter: EmitterModel, pulse: LaserPulse, seed: int):
    """Detection frequency: centre + per-pulse spectral diffusion + Lorentzian
    broadening.

    The Lorentzian FWHM is ``C / (2 pi pulse_fwhm)`` (in Hz) for photons emitted
    under the drive and the natural ``1 / (2 pi lifetime)`` otherwise.
    """
    keys = rng.stream_keys(seed, stream.pulse_index, rng.FREQUENCY)
    diffusion = emitter.diffusion_sigma * rng.normal(keys, np.zeros(len(keys), dtype=np.uint64))
    # angular HWHM = pi * FWHM[Hz]
    hwhm = np.where(
        stream.dressed,
        emitter.fourier_broadening_coeff / (2.0 * pulse.pulse_fwhm),
        1.0 / (2.0 * emitter.lifetime),
    )
    jitter = hwhm * rng.cauchy(keys, stream.ordinal.astype(np.uint64))
    return stream.center_freq + diffusion + jitter


def simulate_pulse(pulse, emitter, env, cfg, pulse_index: int = 0) -> list[PhotonRecord]:
    """Photon records of a single pulse (same stream as inside :func:`run`)."""
    part = _simulate_block(pulse, emitter, env, cfg, [pulse_index])
    if part.aborted.size:
        raise PulseAborted(
            f"pulse {pulse_index} exceeded max_photons_per_pulse={cfg.max_photons_per_pulse}"
        )
    return list(part.records())


def _block_job(args):
    return _simulate_block(*args)


def run(pulse: LaserPulse, emitter: EmitterModel, env: PhononEnv, cfg: SimConfig) -> PhotonStream:
    """Simulate ``cfg.n_pulses`` pulses, fanning blocks out to ``cfg.n_workers``."""
    blocks = [
        np.arange(s, min(s + cfg.block_size, cfg.n_pulses), dtype=np.int64)
        for s in range(0, cfg.n_pulses, cfg.block_size)
    ]
    jobs = [(pulse, emitter, env, cfg, b) for b in blocks]
    if cfg.n_workers > 1 and len(blocks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.n_workers) as ex:
            parts = list(ex.map(_block_job, jobs))
    else:
        parts = [_block_job(j) for j in jobs]
    snapshot = {
        "pulse": asdict(pulse),
        "emitter": asdict(emitter),
        "phonons": asdict(env),
        "sim": asdict(cfg),
    }
    return PhotonStream.concatenate(parts, cfg.n_pulses, snapshot)
