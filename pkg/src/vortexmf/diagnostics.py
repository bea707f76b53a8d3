"""Observables of the empirical vortex measure.

Everything here is a pure function of a position snapshot except the
martingale tracker, which accumulates across steps. The tracker's running
sum reuses the exact noise displacements the integrator applied: summing
sigma-projections over modes and swapping the order of summation turns
eps sum_l theta_l <S, sigma_l . grad e_k> dW_l into (1/N) sum_i D_i . grad
e_k(X_i), where D_i is the realized displacement of particle i. Its
quadratic-variation channel instead integrates the covariance form
eps^2 (1/N^2) sum_{ij} grad e_k(X_i)^T Q(X_i - X_j) grad e_k(X_j) dt with Q
interpolated from precomputed tables, so the bound check is independent of
how the displacements were synthesized.
"""
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from . import _pair_kernels, lattice, noise_field
from .torus_kernel import C0_DEFAULT

_SQRT2 = math.sqrt(2.0)
_TWO_PI = 2.0 * math.pi

DEFAULT_MARTINGALE_MODES = ((1, 0), (0, 1), (1, 1))


def _positions_of(ensemble):
    pos = getattr(ensemble, "positions", ensemble)
    return np.ascontiguousarray(np.asarray(pos, dtype=np.float64))


def empirical_mode(ensemble, k):
    """<S^N, e_k> = (1/N) sum_i e_k(x_i); k = 0 returns the total mass 1."""
    pos = _positions_of(ensemble)
    k = np.asarray(k, dtype=np.int64)
    if k[0] == 0 and k[1] == 0:
        return 1.0
    return float(noise_field._basis_at(k[None, :], pos)[:, 0].mean())


def empirical_modes(ensemble, window):
    """All <S^N, e_k> for 0 < |k| <= window, as {(k1, k2): value}."""
    pos = _positions_of(ensemble)
    modes = lattice.modes_in_disk(window)
    vals = noise_field._basis_at(modes, pos).mean(axis=0)
    return {(int(k[0]), int(k[1])): float(v) for k, v in zip(modes, vals)}


def mode_gradient(k, x):
    """grad e_k at points x (..., 2) -> (..., 2)."""
    k = np.asarray(k, dtype=np.int64)
    x = np.asarray(x, dtype=np.float64)
    phase = _TWO_PI * (x @ k.astype(np.float64))
    if k[0] > 0 or (k[0] == 0 and k[1] > 0):
        amp = -_TWO_PI * _SQRT2 * np.sin(phase)
    else:
        amp = _TWO_PI * _SQRT2 * np.cos(phase)
    return amp[..., None] * k.astype(np.float64)


def sobolev_neg_norm(ensemble, s=2.0, mode_window=16):
    """Truncated H^{-s} norm: sqrt(sum_{|k| <= M} <S, e_k>^2 / (1+|k|^2)^s).

    The k = 0 term contributes 1 exactly (total mass), so the norm is at
    least 1 and increases with the window.
    """
    if s <= 1:
        raise ValueError("s must exceed 1 for a summable weight")
    pos = _positions_of(ensemble)
    modes = lattice.modes_in_disk(mode_window)
    vals = noise_field._basis_at(modes, pos).mean(axis=0)
    weights = 1.0 / (1.0 + lattice.norm_sq(modes).astype(np.float64)) ** s
    return math.sqrt(1.0 + float(np.sum(vals**2 * weights)))


def choose_c0(evaluator, grid=1024):
    """Offset making c0 - G a nonnegative log-dominating potential.

    Maximum of G over a grid plus a 1e-3 margin, raised further until
    c0 - G(x) >= (1/2 pi) log(1/|x|) holds at every grid point with
    |x| <= 1/2 (equivalently c0 >= the smooth remainder of G there).
    """
    res = int(grid)
    t = (np.arange(res) - res // 2) / res
    g1, g2 = np.meshgrid(t, t, indexing="ij")
    pts = np.stack([g1, g2], axis=-1).reshape(-1, 2)
    pts = pts[np.any(pts != 0.0, axis=1)]
    gvals = evaluator.green_values(pts)
    c0 = float(gvals.max()) + 1e-3
    r = np.sqrt(pts[:, 0] ** 2 + pts[:, 1] ** 2)
    inside = r <= 0.5
    need = float((gvals[inside] + np.log(1.0 / r[inside]) / _TWO_PI).max())
    return max(c0, need)


def _pair_green_sum(ensemble, evaluator, delta_min):
    pos = _positions_of(ensemble)
    return _pair_kernels.green_min_sweep(pos, evaluator.gr_table,
                                         evaluator.resolution, delta_min**2)


def hamiltonian(ensemble, evaluator, c0=C0_DEFAULT, delta_min=1e-3):
    """H_N = (1/N^2) sum_{i != j} (c0 - G(x_i - x_j)), nonnegative by the
    choice of c0; near-coincident pairs use the clamped G."""
    pos = _positions_of(ensemble)
    n = pos.shape[0]
    if n < 2:
        warnings.warn("hamiltonian of a single vortex is defined as 0")
        return 0.0
    gsum, _ = _pair_green_sum(pos, evaluator, delta_min)
    return (n - 1) / n * c0 - 2.0 * gsum / (n * n)


def interaction_energy(ensemble, evaluator, delta_min=1e-3):
    """<-G, S (x) S> off the diagonal: (1/N^2) sum_{i != j} (-G(x_i - x_j))."""
    pos = _positions_of(ensemble)
    n = pos.shape[0]
    if n < 2:
        warnings.warn("interaction energy of a single vortex is defined as 0")
        return 0.0
    gsum, _ = _pair_green_sum(pos, evaluator, delta_min)
    return -2.0 * gsum / (n * n)


def min_pair_distance(ensemble, evaluator, delta_min=1e-3):
    pos = _positions_of(ensemble)
    if pos.shape[0] < 2:
        return math.inf
    _, min_r2 = _pair_green_sum(pos, evaluator, delta_min)
    return math.sqrt(min_r2)


def concentration_stat(ensemble, r, center_grid_resolution=None):
    """Grid approximation of sup_x S^N(B_r(x)).

    Centers sit on a (4/r)-per-axis grid by default; the reported maximum
    underestimates the true sup by at most the mass within one grid cell of
    a ball boundary.
    """
    if not 0 < r < 0.25:
        raise ValueError("radius must lie in (0, 1/4)")
    g = int(math.ceil(4.0 / r)) if center_grid_resolution is None else int(center_grid_resolution)
    if g < 2.0 / r:
        raise ValueError("center grid must resolve the ball radius (>= 2/r)")
    pos = _positions_of(ensemble)
    best = _pair_kernels.ball_count_max(pos, g, float(r))
    return best / pos.shape[0]


@dataclass
class PairHistogram:
    """4D histogram of ordered position pairs over T^2 x T^2."""

    bins: int
    counts: np.ndarray = None
    total: int = 0

    def __post_init__(self):
        if self.bins < 2:
            raise ValueError("need at least 2 bins per axis")
        if self.counts is None:
            self.counts = np.zeros(self.bins**4, dtype=np.int64)

    def add_ensemble(self, ensemble):
        pos = _positions_of(ensemble)
        n = pos.shape[0]
        if n < 2:
            raise ValueError("pair histogram needs at least two particles")
        _pair_kernels.pair_hist4(pos, self.bins, self.counts)
        self.total += n * (n - 1)

    def merge(self, other):
        if other.bins != self.bins:
            raise ValueError("bin counts differ")
        self.counts += other.counts
        self.total += other.total


def entropy2_estimate(histogram):
    """Plug-in estimate of the pair entropy: (1/2) sum p log(p / vol).

    The 1/2 is the 1/N prefactor of the two-particle relative entropy. The
    estimator carries a positive bias of order bins^4 / samples.
    """
    if histogram.total == 0:
        raise ValueError("histogram is empty")
    p = histogram.counts / histogram.total
    nz = p > 0
    vol = 1.0 / histogram.bins**4
    return 0.5 * float(np.sum(p[nz] * np.log(p[nz] / vol)))


_Q_TABLE_CACHE = {}


def _q_tables(theta):
    """Covariance component grids (q11, q12, q22) sampled at nodes a/res.

    Built by one inverse FFT per component from the cosine series of Q;
    float32, cached for the most recent spectrum (ladder rungs reuse it
    across realizations).
    """
    key = (theta.profile, theta.cutoff, theta.n_modes)
    hit = _Q_TABLE_CACHE.get(key)
    if hit is not None:
        return hit
    res = sfft.next_fast_len(max(int(math.ceil(2.06 * theta.cutoff)) + 2, 128))
    modes = np.asarray(theta.modes)
    keep = np.flatnonzero(modes[:, 1] >= 0)  # conjugate half; k2 < 0 implied
    out = []
    chunk = 4_000_000
    for comp in range(3):
        # Q_ab(d) = sum_k theta_k^2 p_ab(k) cos(2 pi k.d) with p even in k,
        # so the c2r spectrum takes the full weight at each kept mode; the
        # transform's implied conjugate at (-k1, -k2) supplies the partner
        # of every k2 > 0 entry, and both (k1, 0), (-k1, 0) are kept. With
        # res above twice the cutoff every destination is distinct, so the
        # (chunked) fill is a plain scatter.
        spec = np.zeros((res, res // 2 + 1), dtype=np.complex64)
        flat = spec.reshape(-1)
        for lo in range(0, len(keep), chunk):
            sel = keep[lo:lo + chunk]
            m = modes[sel].astype(np.float64)
            kk = m[:, 0] ** 2 + m[:, 1] ** 2
            w = theta.values[sel] ** 2 * (
                m[:, 1] ** 2 / kk if comp == 0 else
                -m[:, 0] * m[:, 1] / kk if comp == 1 else
                m[:, 0] ** 2 / kk)
            dest = (np.mod(m[:, 0].astype(np.int64), res) * (res // 2 + 1)
                    + m[:, 1].astype(np.int64))
            flat.real[dest] = w
        out.append(sfft.irfft2(spec, s=(res, res), norm="forward",
                               overwrite_x=True))
    _Q_TABLE_CACHE.clear()
    _Q_TABLE_CACHE[key] = (out[0], out[1], out[2], res)
    return _Q_TABLE_CACHE[key]


class MartingaleTracker:
    """Running fluctuation martingale M^{e_k, N} and its quadratic variation.

    update() must be called once per integrator step, with the positions the
    step started from and the displacement field it actually applied.
    """

    def __init__(self, noise_spec, test_modes=DEFAULT_MARTINGALE_MODES):
        self.spec = noise_spec
        self.modes = tuple((int(k[0]), int(k[1])) for k in test_modes)
        self.values = {k: 0.0 for k in self.modes}
        self.sup_sq = {k: 0.0 for k in self.modes}
        self.qv = {k: 0.0 for k in self.modes}
        self.time = 0.0

    def update(self, positions, displacements, dt, increment=None):
        pos = np.asarray(positions, dtype=np.float64)
        disp = np.asarray(displacements, dtype=np.float64)
        if disp.shape != pos.shape:
            raise ValueError("displacement array does not match positions")
        if increment is not None and self.spec is not None:
            noise_field._check_increment(self.spec, increment)
        n = pos.shape[0]
        self.time += dt
        if self.spec is None or self.spec.epsilon == 0.0:
            return
        grads = np.stack([mode_gradient(k, pos) for k in self.modes])
        for k, g in zip(self.modes, grads):
            self.values[k] += float(np.sum(disp * g)) / n
            self.sup_sq[k] = max(self.sup_sq[k], self.values[k] ** 2)
        q11, q12, q22, res = _q_tables(self.spec.theta)
        sums = _pair_kernels.qv_pair_sweep(np.ascontiguousarray(pos),
                                           np.ascontiguousarray(grads),
                                           q11, q12, q22, res)
        scale = self.spec.epsilon**2 * dt / (n * n)
        for k, v in zip(self.modes, sums):
            self.qv[k] += scale * float(v)


@dataclass(frozen=True)
class ObservableSpec:
    mode_window: int = 3
    sobolev_s: float = 2.0
    sobolev_window: int = 16
    concentration_radii: tuple = (0.05,)
    martingale_modes: tuple = DEFAULT_MARTINGALE_MODES
    c0: float = C0_DEFAULT
    delta_min: float = 1e-3


@dataclass(frozen=True)
class DiagnosticsRecord:
    time: float
    modes: dict
    hamiltonian: float
    energy: float
    hminus_norms: dict
    concentration: dict
    martingale: dict
    martingale_sup_sq: dict
    quadratic_variation: dict
    min_pair_distance: float


def collect_record(ensemble, evaluator, observables=None, tracker=None):
    obs = observables or ObservableSpec()
    pos = _positions_of(ensemble)
    n = pos.shape[0]
    if n >= 2:
        gsum, min_r2 = _pair_kernels.green_min_sweep(
            pos, evaluator.gr_table, evaluator.resolution, obs.delta_min**2)
        ham = (n - 1) / n * obs.c0 - 2.0 * gsum / (n * n)
        energy = -2.0 * gsum / (n * n)
        min_d = math.sqrt(min_r2)
    else:
        ham, energy, min_d = 0.0, 0.0, math.inf
    return DiagnosticsRecord(
        time=float(getattr(ensemble, "time", 0.0)),
        modes=empirical_modes(pos, obs.mode_window),
        hamiltonian=ham,
        energy=energy,
        hminus_norms={obs.sobolev_s: sobolev_neg_norm(pos, obs.sobolev_s, obs.sobolev_window)},
        concentration={r: concentration_stat(pos, r) for r in obs.concentration_radii},
        martingale=dict(tracker.values) if tracker else {},
        martingale_sup_sq=dict(tracker.sup_sq) if tracker else {},
        quadratic_variation=dict(tracker.qv) if tracker else {},
        min_pair_distance=min_d,
    )


def increment_moment_scan(series, lags, min_seeds=32):
    """Fourth moments of mode increments across seeds, per lag, plus the
    log-log slope in the lag.

    series is (seeds, times) of one mode's trajectory sampled every step;
    for each lag m the estimate averages (x[t+m] - x[t])^4 over seeds and t.
    """
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 2:
        raise ValueError("series must be (seeds, times)")
    n_seeds, n_times = series.shape
    if n_seeds < min_seeds:
        raise ValueError(f"need at least {min_seeds} seeds, got {n_seeds}")
    lags = [int(m) for m in lags]
    if any(m < 1 or m >= n_times for m in lags):
        raise ValueError("lags must lie in [1, times - 1]")
    moments = np.array([np.mean((series[:, m:] - series[:, :-m]) ** 4) for m in lags])
    if np.any(moments <= 0.0):
        slope = math.nan  # degenerate (e.g. frozen dynamics)
    else:
        slope = float(np.polyfit(np.log(lags), np.log(moments), 1)[0])
    return {"lags": np.array(lags), "moments": moments, "slope": slope}
