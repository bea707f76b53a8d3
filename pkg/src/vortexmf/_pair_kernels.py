"""Compiled O(N^2) pair sweeps shared by the integrator and diagnostics.

The drift sweep mirrors KernelEvaluator.kernel term by term (same canonical
half-cell flip, same Catmull-Rom arithmetic) so that a sweep result agrees
with a per-pair evaluator loop to rounding. Each unordered pair is evaluated
once and its antisymmetric contribution scattered to both rows.

Row sums use compensated (two-word) accumulators. The contribution multiset
of a row does not depend on particle labels, so with ~100 effective bits the
rounded row totals come out identical under relabeling even though the
summation order changes; this is what makes trajectory permutation
equivariance hold bitwise in practice.
"""
import numpy as np
from numba import njit

_TWO_PI = 2.0 * np.pi


@njit(cache=True, nogil=True)
def drift_sweep(pos, tab, res, delta_sq):
    """(1/N) sum_j K(x_i - x_j) for all i; K clamped below sqrt(delta_sq)."""
    n = pos.shape[0]
    hi = np.zeros((n, 2))
    lo = np.zeros((n, 2))
    for i in range(n):
        xi0 = pos[i, 0]
        xi1 = pos[i, 1]
        for j in range(i + 1, n):
            d0 = xi0 - pos[j, 0]
            d1 = xi1 - pos[j, 1]
            d0 -= np.rint(d0)
            d1 -= np.rint(d1)
            s = 1.0
            if d0 < 0.0 or (d0 == 0.0 and d1 < 0.0):
                d0 = -d0
                d1 = -d1
                s = -1.0
            r2 = d0 * d0 + d1 * d1
            if r2 == 0.0:
                continue  # coincident pair: no direction, no force
            rr = r2 if r2 > delta_sq else delta_sq
            w = 1.0 / (_TWO_PI * rr)

            u = (d0 + 0.5) * res
            v = (d1 + 0.5) * res
            iu = int(u)
            iv = int(v)
            if iu > res - 1:
                iu = res - 1
            if iv > res - 1:
                iv = res - 1
            fu = u - iu
            fv = v - iv
            wu0 = ((-0.5 * fu + 1.0) * fu - 0.5) * fu
            wu1 = (1.5 * fu - 2.5) * fu * fu + 1.0
            wu2 = ((-1.5 * fu + 2.0) * fu + 0.5) * fu
            wu3 = (0.5 * fu - 0.5) * fu * fu
            wv0 = ((-0.5 * fv + 1.0) * fv - 0.5) * fv
            wv1 = (1.5 * fv - 2.5) * fv * fv + 1.0
            wv2 = ((-1.5 * fv + 2.0) * fv + 0.5) * fv
            wv3 = (0.5 * fv - 0.5) * fv * fv
            r0 = 0.0
            r1 = 0.0
            for a in range(4):
                wa = wu0 if a == 0 else (wu1 if a == 1 else (wu2 if a == 2 else wu3))
                row = iu + a
                b0 = wv0 * tab[row, iv, 0] + wv1 * tab[row, iv + 1, 0] \
                    + wv2 * tab[row, iv + 2, 0] + wv3 * tab[row, iv + 3, 0]
                b1 = wv0 * tab[row, iv, 1] + wv1 * tab[row, iv + 1, 1] \
                    + wv2 * tab[row, iv + 2, 1] + wv3 * tab[row, iv + 3, 1]
                r0 += wa * b0
                r1 += wa * b1
            v0 = s * (d1 * w + r0)
            v1 = s * (-d0 * w + r1)

            t = hi[i, 0] + v0
            bb = t - hi[i, 0]
            lo[i, 0] += (hi[i, 0] - (t - bb)) + (v0 - bb)
            hi[i, 0] = t
            t = hi[i, 1] + v1
            bb = t - hi[i, 1]
            lo[i, 1] += (hi[i, 1] - (t - bb)) + (v1 - bb)
            hi[i, 1] = t
            t = hi[j, 0] - v0
            bb = t - hi[j, 0]
            lo[j, 0] += (hi[j, 0] - (t - bb)) + (-v0 - bb)
            hi[j, 0] = t
            t = hi[j, 1] - v1
            bb = t - hi[j, 1]
            lo[j, 1] += (hi[j, 1] - (t - bb)) + (-v1 - bb)
            hi[j, 1] = t
    return (hi + lo) / n


@njit(cache=True, nogil=True)
def green_min_sweep(pos, tab, res, delta_sq):
    """Sum of G over unordered pairs (clamped like the drift) and min pair |d|^2."""
    n = pos.shape[0]
    hi = 0.0
    lo = 0.0
    min_r2 = 1.0
    for i in range(n):
        xi0 = pos[i, 0]
        xi1 = pos[i, 1]
        for j in range(i + 1, n):
            d0 = xi0 - pos[j, 0]
            d1 = xi1 - pos[j, 1]
            d0 -= np.rint(d0)
            d1 -= np.rint(d1)
            if d0 < 0.0 or (d0 == 0.0 and d1 < 0.0):
                d0 = -d0
                d1 = -d1
            r2 = d0 * d0 + d1 * d1
            if r2 < min_r2:
                min_r2 = r2
            rr = r2 if r2 > delta_sq else delta_sq

            u = (d0 + 0.5) * res
            v = (d1 + 0.5) * res
            iu = int(u)
            iv = int(v)
            if iu > res - 1:
                iu = res - 1
            if iv > res - 1:
                iv = res - 1
            fu = u - iu
            fv = v - iv
            wu0 = ((-0.5 * fu + 1.0) * fu - 0.5) * fu
            wu1 = (1.5 * fu - 2.5) * fu * fu + 1.0
            wu2 = ((-1.5 * fu + 2.0) * fu + 0.5) * fu
            wu3 = (0.5 * fu - 0.5) * fu * fu
            wv0 = ((-0.5 * fv + 1.0) * fv - 0.5) * fv
            wv1 = (1.5 * fv - 2.5) * fv * fv + 1.0
            wv2 = ((-1.5 * fv + 2.0) * fv + 0.5) * fv
            wv3 = (0.5 * fv - 0.5) * fv * fv
            rem = 0.0
            for a in range(4):
                wa = wu0 if a == 0 else (wu1 if a == 1 else (wu2 if a == 2 else wu3))
                row = iu + a
                rem += wa * (wv0 * tab[row, iv] + wv1 * tab[row, iv + 1]
                             + wv2 * tab[row, iv + 2] + wv3 * tab[row, iv + 3])
            g = np.log(rr) / (2.0 * _TWO_PI) + rem

            t = hi + g
            bb = t - hi
            lo += (hi - (t - bb)) + (g - bb)
            hi = t
    return hi + lo, min_r2


@njit(cache=True, nogil=True)
def qv_pair_sweep(pos, grads, q11, q12, q22, gres):
    """sum_{i,j} v_i^T Q(x_i - x_j) v_j per test mode, diagonal included.

    grads has shape (n_modes, N, 2); Q components are periodic node tables
    (value at node a/gres), interpolated bilinearly. Q is even in d, so no
    canonicalization is needed.
    """
    nm = grads.shape[0]
    n = pos.shape[0]
    acc = np.zeros(nm)
    q011 = np.float64(q11[0, 0])
    q012 = np.float64(q12[0, 0])
    q022 = np.float64(q22[0, 0])
    for i in range(n):
        for m in range(nm):
            a0 = grads[m, i, 0]
            a1 = grads[m, i, 1]
            acc[m] += a0 * (q011 * a0 + q012 * a1) + a1 * (q012 * a0 + q022 * a1)
    for i in range(n):
        xi0 = pos[i, 0]
        xi1 = pos[i, 1]
        for j in range(i + 1, n):
            d0 = xi0 - pos[j, 0]
            d1 = xi1 - pos[j, 1]
            d0 -= np.floor(d0)
            d1 -= np.floor(d1)
            u = d0 * gres
            v = d1 * gres
            i0 = int(u)
            j0 = int(v)
            fu = u - i0
            fv = v - j0
            if i0 >= gres:
                i0 = 0
                fu = 0.0
            if j0 >= gres:
                j0 = 0
                fv = 0.0
            i1 = i0 + 1 if i0 + 1 < gres else 0
            j1 = j0 + 1 if j0 + 1 < gres else 0
            w00 = (1.0 - fu) * (1.0 - fv)
            w01 = (1.0 - fu) * fv
            w10 = fu * (1.0 - fv)
            w11 = fu * fv
            c11 = w00 * q11[i0, j0] + w01 * q11[i0, j1] + w10 * q11[i1, j0] + w11 * q11[i1, j1]
            c12 = w00 * q12[i0, j0] + w01 * q12[i0, j1] + w10 * q12[i1, j0] + w11 * q12[i1, j1]
            c22 = w00 * q22[i0, j0] + w01 * q22[i0, j1] + w10 * q22[i1, j0] + w11 * q22[i1, j1]
            for m in range(nm):
                a0 = grads[m, i, 0]
                a1 = grads[m, i, 1]
                b0 = grads[m, j, 0]
                b1 = grads[m, j, 1]
                acc[m] += 2.0 * (a0 * (c11 * b0 + c12 * b1) + a1 * (c12 * b0 + c22 * b1))
    return acc


@njit(cache=True, nogil=True)
def ball_count_max(pos, g, r):
    """Max number of particles within torus distance r of any center a/g."""
    n = pos.shape[0]
    counts = np.zeros((g, g), dtype=np.int64)
    r2 = r * r
    reach = int(np.ceil(r * g)) + 1
    for i in range(n):
        x0 = pos[i, 0]
        x1 = pos[i, 1]
        c0 = int(np.floor(x0 * g))
        c1 = int(np.floor(x1 * g))
        for a in range(c0 - reach, c0 + reach + 1):
            ca = (a % g) / g
            d0 = x0 - ca
            d0 -= np.rint(d0)
            for b in range(c1 - reach, c1 + reach + 1):
                cb = (b % g) / g
                d1 = x1 - cb
                d1 -= np.rint(d1)
                if d0 * d0 + d1 * d1 <= r2:
                    counts[a % g, b % g] += 1
    return counts.max()


@njit(cache=True, nogil=True)
def pair_hist4(pos, bins, counts):
    """Accumulate ordered pairs (x_i, x_j), i != j, into a b^4 histogram."""
    n = pos.shape[0]
    b = bins
    idx = np.empty((n, 2), dtype=np.int64)
    for i in range(n):
        a0 = int(pos[i, 0] * b)
        a1 = int(pos[i, 1] * b)
        if a0 >= b:
            a0 = b - 1
        if a1 >= b:
            a1 = b - 1
        idx[i, 0] = a0
        idx[i, 1] = a1
    for i in range(n):
        base = (idx[i, 0] * b + idx[i, 1]) * b * b
        for j in range(n):
            if i == j:
                continue
            counts[base + idx[j, 0] * b + idx[j, 1]] += 1
    return counts
