"""Pseudo-spectral solver for the vorticity equation on the unit torus.

d xi/dt + u . grad xi = nu Laplacian(xi), with u recovered from xi through
the same Biot-Savart convention as the particle kernel:

    u_hat_1(k) = -i k2 xi_hat(k) / (2 pi |k|^2)
    u_hat_2(k) = +i k1 xi_hat(k) / (2 pi |k|^2)

so that xi = d2 u1 - d1 u2. Time stepping is RK4 on the integrating-factor
form (the viscous semigroup is applied exactly), the nonlinear term is
dealiased with the 2/3 rule, and the mean coefficient is conserved exactly.

Spectra are stored in rfft2 layout with unitary "forward" normalization, so
entries are plain Fourier coefficients of the field.
"""
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import fft as sfft

TWO_PI = 2.0 * math.pi
_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class SpectralVorticity:
    """Vorticity snapshot: rfft2 coefficients on an n x n grid."""

    xi_hat: np.ndarray
    n: int
    time: float = 0.0

    def __post_init__(self):
        if self.xi_hat.shape != (self.n, self.n // 2 + 1):
            raise ValueError("coefficient array does not match grid size")

    @property
    def mean(self):
        return float(self.xi_hat[0, 0].real)

    def grid_values(self):
        return sfft.irfft2(self.xi_hat, s=(self.n, self.n), norm="forward")


@dataclass(frozen=True)
class SolverConfig:
    nu: float
    dt: float
    n_steps: int
    grid_size: int = 64
    cfl_limit: float = 0.5

    def __post_init__(self):
        if self.nu < 0:
            raise ValueError("viscosity must be nonnegative")
        if self.dt <= 0 or self.n_steps < 0:
            raise ValueError("need dt > 0 and n_steps >= 0")
        if self.grid_size < 8 or self.grid_size % 2:
            raise ValueError("grid size must be even and at least 8")


def _wavenumbers(n):
    k1 = sfft.fftfreq(n, 1.0 / n).astype(np.float64)[:, None]
    k2 = np.arange(n // 2 + 1, dtype=np.float64)[None, :]
    return k1, k2


def _dealias_mask(n):
    k1, k2 = _wavenumbers(n)
    kc = n // 3
    return (np.abs(k1) <= kc) & (k2 <= kc)


def _store(spec, n, k, value):
    """Place the coefficient at frequency k into rfft2 storage.

    Entries with k2 < 0 are skipped: the transform implies them as the
    conjugate of the stored partner at -k, which the caller also places.
    """
    k1, k2 = int(k[0]), int(k[1])
    if k2 < 0:
        return
    spec[k1 % n, k2] += value


def init_field(f0, n):
    """Spectral field for a density 1 + sum_k c_k e_k, placed exactly.

    Every mode must fit strictly inside the dealiased region.
    """
    kc = n // 3
    spec = np.zeros((n, n // 2 + 1), dtype=np.complex128)
    spec[0, 0] = 1.0
    for k, c in zip(np.asarray(f0.modes), np.asarray(f0.coeffs, dtype=np.float64)):
        if max(abs(int(k[0])), abs(int(k[1]))) > kc:
            raise ValueError(f"mode {tuple(k)} exceeds the dealiased band |k_i| <= {kc}")
        if k[0] > 0 or (k[0] == 0 and k[1] > 0):
            # sqrt(2) cos component: c/sqrt(2) at +k and -k
            _store(spec, n, k, c / _SQRT2)
            _store(spec, n, -k, c / _SQRT2)
        else:
            # sqrt(2) sin component: -i c/sqrt(2) at +k, +i c/sqrt(2) at -k
            _store(spec, n, k, -1j * c / _SQRT2)
            _store(spec, n, -k, 1j * c / _SQRT2)
    return SpectralVorticity(xi_hat=spec, n=n, time=0.0)


def mollified_vortex(center, width, n, mass=1.0):
    """Periodized Gaussian blob: xi_hat(k) = mass e^{-2 pi^2 w^2 |k|^2} e^{-2 pi i k.c}.

    The grid must resolve the blob (tail below double rounding at the
    dealias edge is not required, but width must exceed two grid cells).
    """
    if width * n < 2.0:
        raise ValueError("grid too coarse for this blob width")
    k1, k2 = _wavenumbers(n)
    kk = k1**2 + k2**2
    phase = np.exp(-2j * math.pi * (k1 * center[0] + k2 * center[1]))
    spec = mass * np.exp(-2.0 * math.pi**2 * width**2 * kk) * phase
    return SpectralVorticity(xi_hat=spec.astype(np.complex128), n=n, time=0.0)


def velocity_from_vorticity(state):
    """Physical-space velocity grids (u1, u2)."""
    n = state.n
    k1, k2 = _wavenumbers(n)
    kk = k1**2 + k2**2
    kk[0, 0] = 1.0
    psi = state.xi_hat / (TWO_PI * kk)
    psi[0, 0] = 0.0
    u1 = sfft.irfft2(-1j * k2 * psi, s=(n, n), norm="forward")
    u2 = sfft.irfft2(1j * k1 * psi, s=(n, n), norm="forward")
    return u1, u2


def _nonlinear(xi_hat, n, k1, k2, kk_inv, mask):
    psi = xi_hat * kk_inv
    u1 = sfft.irfft2(-1j * k2 * psi, s=(n, n), norm="forward")
    u2 = sfft.irfft2(1j * k1 * psi, s=(n, n), norm="forward")
    g1 = sfft.irfft2(2j * math.pi * k1 * xi_hat, s=(n, n), norm="forward")
    g2 = sfft.irfft2(2j * math.pi * k2 * xi_hat, s=(n, n), norm="forward")
    out = -sfft.rfft2(u1 * g1 + u2 * g2, norm="forward")
    out *= mask
    out[0, 0] = 0.0   # advection moves no mass
    return out, max(np.abs(u1).max(), np.abs(u2).max())


def ns_step(state, config):
    """One integrating-factor RK4 step; raises on a CFL violation."""
    n = state.n
    k1, k2 = _wavenumbers(n)
    kk = k1**2 + k2**2
    kk_inv = np.where(kk > 0, 1.0 / (TWO_PI * np.where(kk > 0, kk, 1.0)), 0.0)
    mask = _dealias_mask(n)
    dt = config.dt
    half = np.exp(-config.nu * 4.0 * math.pi**2 * kk * (dt / 2.0))
    full = half * half

    xi = state.xi_hat
    s1, umax = _nonlinear(xi, n, k1, k2, kk_inv, mask)
    cfl = umax * dt * n
    if cfl > config.cfl_limit:
        raise ValueError(f"CFL number {cfl:.3f} exceeds limit {config.cfl_limit}")
    s2, _ = _nonlinear(half * (xi + 0.5 * dt * s1), n, k1, k2, kk_inv, mask)
    s3, _ = _nonlinear(half * xi + 0.5 * dt * s2, n, k1, k2, kk_inv, mask)
    s4, _ = _nonlinear(full * xi + dt * half * s3, n, k1, k2, kk_inv, mask)
    new = full * xi + (dt / 6.0) * (full * s1 + 2.0 * half * (s2 + s3) + s4)
    return replace(state, xi_hat=new, time=state.time + dt)


def solve(f0, config, schedule=None):
    """Generator of snapshots at the scheduled step indices.

    f0 may be a density spec (placed via init_field) or an existing
    SpectralVorticity at the configured grid size.
    """
    if isinstance(f0, SpectralVorticity):
        if f0.n != config.grid_size:
            raise ValueError("initial state grid does not match configuration")
        state = f0
    else:
        state = init_field(f0, config.grid_size)
    if schedule is None:
        schedule = range(config.n_steps + 1)
    schedule = sorted(set(int(s) for s in schedule))
    if schedule and (schedule[0] < 0 or schedule[-1] > config.n_steps):
        raise ValueError("schedule steps must lie in [0, n_steps]")
    wanted = set(schedule)
    if 0 in wanted:
        yield state
    for step in range(1, config.n_steps + 1):
        state = ns_step(state, config)
        if step in wanted:
            yield state


def weak_pairing(state, k):
    """<xi, e_k>: sqrt(2) Re xi_hat(k) on the cosine half, the matching
    imaginary part on the sine half; k = 0 gives the mean."""
    k1, k2 = int(k[0]), int(k[1])
    n = state.n
    if max(abs(k1), abs(k2)) > n // 3:
        raise ValueError("mode outside the resolved (dealiased) band")
    if k1 == 0 and k2 == 0:
        return state.mean
    if k1 > 0 or (k1 == 0 and k2 > 0):
        c = state.xi_hat[k1 % n, k2] if k2 >= 0 else np.conj(state.xi_hat[(-k1) % n, -k2])
        return float(_SQRT2 * c.real)
    # sine half: <xi, e_k> = sqrt(2) Im xi_hat(-k)
    m1, m2 = -k1, -k2
    c = state.xi_hat[m1 % n, m2] if m2 >= 0 else np.conj(state.xi_hat[(-m1) % n, -m2])
    return float(_SQRT2 * c.imag)


def enstrophy(state):
    """integral xi^2 = sum over the full lattice of |xi_hat|^2."""
    return _full_lattice_sum(np.abs(state.xi_hat) ** 2, state.n)


def kinetic_energy(state):
    """(1/2) integral |u|^2 = sum_k |xi_hat(k)|^2 / (8 pi^2 |k|^2)."""
    k1, k2 = _wavenumbers(state.n)
    kk = k1**2 + k2**2
    kk[0, 0] = 1.0
    dens = np.abs(state.xi_hat) ** 2 / (8.0 * math.pi**2 * kk)
    dens[0, 0] = 0.0
    return _full_lattice_sum(dens, state.n)


def _full_lattice_sum(half_spectrum, n):
    # rfft2 stores k2 >= 0; interior columns stand for a conjugate pair
    weights = np.full(n // 2 + 1, 2.0)
    weights[0] = 1.0
    if n % 2 == 0:
        weights[-1] = 1.0
    return float(np.sum(half_spectrum * weights[None, :]))
