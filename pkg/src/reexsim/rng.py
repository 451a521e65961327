"""Counter-based random streams keyed by (seed, pulse index, domain).

Every pulse owns an independent SplitMix64 sequence, so the numbers a pulse
consumes never depend on which other pulses share its batch or worker.  The
draw for counter ``k`` is ``mix64(key + (k + 1) * GAMMA)`` with
``key = mix64(seed ^ mix64(pulse * GAMMA + domain))``.  Vectorised over
pulses: each element of ``pulses`` may sit at a different counter.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_DOUBLE = 1.0 / float(1 << 53)

# stream domains
TRAJECTORY = 1
FREQUENCY = 2
DETECTION = 3


def mix64(z):
    """SplitMix64 finaliser on a uint64 array (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def stream_keys(seed: int, pulses, domain: int):
    seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    pulses = np.asarray(pulses, dtype=np.uint64)
    with np.errstate(over="ignore"):
        inner = mix64(pulses * GAMMA + np.uint64(domain))
    return mix64(inner ^ seed)


def raw(keys, counters):
    keys = np.asarray(keys, dtype=np.uint64)
    counters = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64(keys + (counters + np.uint64(1)) * GAMMA)


def uniform(keys, counters):
    """Doubles in the open interval (0, 1)."""
    bits = raw(keys, counters) >> _S11
    return (bits.astype(np.float64) + 0.5) * _DOUBLE


def normal(keys, counters):
    return ndtri(uniform(keys, counters))


def exponential(keys, counters):
    return -np.log(uniform(keys, counters))


def cauchy(keys, counters):
    return np.tan(np.pi * (uniform(keys, counters) - 0.5))
