"""Enumeration of the integer lattice Z^2 minus the origin.

Modes are listed in shell-lexicographic order: ascending |k|^2, then k1, then
k2. Disk truncations {0 < |k| <= L} are prefixes of one another in this order,
so a lattice mode keeps its position in the enumeration as the cutoff grows.
Sampled mode coefficients indexed by this enumeration then depend only on the
mode identity, not on the cutoff, which keeps different truncations of the same
noise realization consistent with each other.
"""
import functools
import math

import numpy as np

_SHIFT = 4096  # negation_index keys support |k1|, |k2| below this


@functools.lru_cache(maxsize=64)
def modes_in_disk(cutoff):
    """All k in Z^2 with 0 < |k| <= cutoff, shell-lex order, readonly (n, 2) int32."""
    if cutoff < 1:
        raise ValueError("cutoff must be a positive integer")
    cutoff = int(cutoff)
    c2 = cutoff * cutoff
    rows_k1 = []
    rows_k2 = []
    for k1 in range(-cutoff, cutoff + 1):
        lim = math.isqrt(c2 - k1 * k1)
        k2 = np.arange(-lim, lim + 1, dtype=np.int32)
        if k1 == 0:
            k2 = k2[k2 != 0]
        rows_k1.append(np.full(len(k2), k1, dtype=np.int32))
        rows_k2.append(k2)
    k1 = np.concatenate(rows_k1)
    k2 = np.concatenate(rows_k2)
    # the generation loop already emits (k1, k2)-lex order, so a stable sort
    # on the shell alone is shell-lex; 2 cutoff^2 must not overflow the key
    shell_dtype = np.int32 if cutoff <= 23000 else np.int64
    kk = k1.astype(shell_dtype) * k1 + k2.astype(shell_dtype) * k2
    order = np.argsort(kk, kind="stable")
    out = np.empty((len(order), 2), dtype=np.int32)
    out[:, 0] = k1[order]
    out[:, 1] = k2[order]
    out.setflags(write=False)
    return out


def norm_sq(modes):
    """|k|^2 per mode as int64."""
    m = np.asarray(modes, dtype=np.int64)
    return m[:, 0] * m[:, 0] + m[:, 1] * m[:, 1]


def positive_half(modes):
    """Mask of the half lattice Z^2_+ = {k1 > 0} u {k1 = 0, k2 > 0}."""
    m = np.asarray(modes)
    return (m[:, 0] > 0) | ((m[:, 0] == 0) & (m[:, 1] > 0))


def count_in_disk(cutoff):
    return len(modes_in_disk(cutoff))


def inv_norm_sq_sum(cutoff):
    """sum_{0<|k|<=cutoff} |k|^-2, the normalization behind the noise amplitude."""
    return float(np.sum(1.0 / norm_sq(modes_in_disk(cutoff))))


def negation_index(modes, chunk=4_000_000):
    """For each row k, the row index of -k in the same enumeration.

    Disk enumerations are closed under negation and sorted by shell, so -k
    sits in the same shell block; a key search finds it without a dict.
    Queries run in chunks to bound the temporary key arrays.
    """
    m = np.asarray(modes)

    def shell_lex_key(a):
        a = a.astype(np.int64, copy=False)
        return (a[:, 0] * a[:, 0] + a[:, 1] * a[:, 1]) * (4 * _SHIFT * _SHIFT) \
            + (a[:, 0] + _SHIFT) * (2 * _SHIFT) + (a[:, 1] + _SHIFT)

    keys = np.empty(len(m), dtype=np.int64)
    idx = np.empty(len(m), dtype=np.int64)
    for lo in range(0, len(m), chunk):
        sl = slice(lo, min(lo + chunk, len(m)))
        keys[sl] = shell_lex_key(m[sl])
    for lo in range(0, len(m), chunk):
        sl = slice(lo, min(lo + chunk, len(m)))
        idx[sl] = np.searchsorted(keys, shell_lex_key(-m[sl]))
        if not np.array_equal(m[idx[sl]], -m[sl]):
            raise ValueError("mode set is not closed under negation")
    return idx
