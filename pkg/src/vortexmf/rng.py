"""Deterministic counter-based random streams.

Every random draw in the package comes from a numpy Philox generator whose
128-bit key is derived from the tuple (seed, realization, step, channel) with a
splitmix64-style mixer. Draws therefore depend only on that tuple, never on
scheduling: any worker can regenerate the stream for any (realization, step)
without coordination, and reruns reproduce every draw bit for bit at any
worker count.
"""
import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15

# channel tags keep logically distinct consumers on disjoint streams
CHANNEL_INIT = 0x1D
CHANNEL_NOISE = 0x2E
CHANNEL_TEST = 0x7E


def _mix(z):
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def philox_key(seed, realization=0, step=0, channel=0):
    """Mix identifying integers into a 2x64-bit Philox key.

    All four components are absorbed sequentially, so distinct tuples give
    unrelated keys (up to 64-bit mixing quality).
    """
    if seed < 0 or realization < 0 or step < 0 or channel < 0:
        raise ValueError("stream key components must be non-negative")
    h = _mix((seed & _MASK) ^ 0x8BADF00D5EEDC0DE)
    for v in (realization, step, channel):
        h = _mix((h + _GAMMA + (v & _MASK)) & _MASK)
    k0 = _mix(h ^ 0xD1B54A32D192ED03)
    k1 = _mix(h ^ 0x8CB92BA72F3D8DD7)
    return np.array([k0, k1], dtype=np.uint64)


def generator(seed, realization=0, step=0, channel=0):
    """A fresh numpy Generator on the stream keyed by the given tuple."""
    key = philox_key(seed, realization, step, channel)
    return np.random.Generator(np.random.Philox(key=key))


def normals(count, seed, realization=0, step=0, channel=0):
    """Standard normal draws from the keyed stream."""
    return generator(seed, realization, step, channel).standard_normal(count)


def uniforms(count, seed, realization=0, step=0, channel=0):
    return generator(seed, realization, step, channel).random(count)
