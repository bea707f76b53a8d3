"""N-vortex dynamics: sampling, Euler-Maruyama stepping, trajectory runs.

The particle system couples N identical vortices of circulation 1/N through
the periodic Biot-Savart kernel, all advected by one shared realization of
the divergence-free noise field. Because every basis field satisfies
(sigma_k . grad) sigma_k = 0, the Ito and Stratonovich forms of the equation
coincide and plain Euler-Maruyama needs no correction term; this is why no
Milstein machinery appears here.

Noise displacements use the exact per-mode sum when the spectrum is small
and the FFT synthesizer above a mode-count threshold; both paths are driven
by the same per-step increments, so a run is reproducible regardless of
which path the mode count selects.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import _pair_kernels, noise_field, rng
from .noise_field import NoiseSpec, SpectralNoiseSynthesizer, noise_velocity

# above this mode count the FFT route is cheaper than direct summation
DIRECT_MODE_LIMIT = 20000


class SimulationAbort(RuntimeError):
    """Raised when a step produces non-finite positions."""

    def __init__(self, step, time, min_pair_distance):
        self.step = step
        self.time = time
        self.min_pair_distance = min_pair_distance
        super().__init__(
            f"non-finite positions at step {step} (t={time:.6g}); "
            f"min pair distance {min_pair_distance:.3e}")


@dataclass(frozen=True)
class DensitySpec:
    """Initial density f(x) = 1 + sum_j coeffs[j] e_{modes[j]}(x).

    The constant term is fixed at 1 and every listed mode is zero-mean, so
    the density integrates to 1 by construction; nonnegativity is checked on
    a grid at build time.
    """

    modes: np.ndarray
    coeffs: np.ndarray
    min_value: float = None
    _grid: int = 256

    def __post_init__(self):
        modes = np.atleast_2d(np.asarray(self.modes, dtype=np.int64))
        coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if modes.shape[1] != 2 or len(coeffs) != len(modes):
            raise ValueError("modes must be (m, 2) with one coefficient each")
        if np.any((modes[0:] == 0).all(axis=1)):
            raise ValueError("the constant term is implicit; modes must be nonzero")
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "coeffs", coeffs)
        gmin = float(self.evaluate(_unit_grid(self._grid)).min())
        if self.min_value is None:
            object.__setattr__(self, "min_value", gmin)
        if self.min_value < 0 or gmin < -1e-12:
            raise ValueError(f"density is negative (grid min {gmin:.6g})")

    def evaluate(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = np.ones(x.shape[:-1])
        for k, c in zip(self.modes, self.coeffs):
            out += c * noise_field._basis_at(k[None, :], x)[..., 0]
        return out

    @property
    def envelope(self):
        """Upper bound on f from the l1 norm of the coefficients."""
        return 1.0 + math.sqrt(2.0) * float(np.abs(self.coeffs).sum())


def _unit_grid(res):
    t = np.arange(res) / res
    g1, g2 = np.meshgrid(t, t, indexing="ij")
    return np.stack([g1, g2], axis=-1)


def default_density():
    """1 + 0.3 sqrt(2) cos(2 pi x1) + 0.3 sqrt(2) sin(2 pi x2)."""
    return DensitySpec(modes=[(1, 0), (0, -1)], coeffs=[0.3, -0.3])


def uniform_density():
    return DensitySpec(modes=np.empty((0, 2), dtype=np.int64), coeffs=[])


@dataclass(frozen=True)
class VortexEnsemble:
    positions: np.ndarray
    realization_id: int = 0
    time: float = 0.0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] < 1:
            raise ValueError("positions must be a nonempty (N, 2) array")
        pos = np.mod(pos, 1.0)
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def n(self):
        return self.positions.shape[0]


def sample_initial(f0, n, seed, realization=0):
    """Draw N i.i.d. positions from f0 by rejection against the uniform law.

    The acceptance stream is keyed by (seed, realization), so initial data
    are reproducible and independent across realizations.
    """
    if n < 1:
        raise ValueError("need at least one particle")
    env = f0.envelope
    gen = rng.generator(seed, realization, 0, rng.CHANNEL_INIT)
    out = np.empty((n, 2))
    have = 0
    while have < n:
        want = n - have
        batch = max(int(want * env * 1.2) + 8, 32)
        cand = gen.random((batch, 2))
        accept = gen.random(batch) * env <= f0.evaluate(cand)
        take = cand[accept][:want]
        out[have:have + len(take)] = take
        have += len(take)
    return VortexEnsemble(positions=out, realization_id=realization, time=0.0)


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float
    n_steps: int
    scheme: str = "euler_maruyama"
    delta_min: float = 1e-3

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.n_steps < 0:
            raise ValueError("n_steps must be nonnegative")
        if self.scheme != "euler_maruyama":
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not 0 < self.delta_min < 0.5:
            raise ValueError("delta_min must lie in (0, 1/2)")


def pairwise_drift(positions, evaluator, delta_min=1e-3):
    """(1/N) sum_{j != i} K(x_i - x_j), with the kernel's singular factor
    clamped below delta_min (caps the induced speed at 1/(2 pi delta N))."""
    pos = np.ascontiguousarray(getattr(positions, "positions", positions), dtype=np.float64)
    return _pair_kernels.drift_sweep(pos, evaluator.kr_table,
                                     evaluator.resolution, delta_min * delta_min)


_SYNTH_CACHE = {}


class NoiseSampler:
    """Chooses the exact direct sum or the FFT synthesizer by mode count.

    The synthesizer's tables depend only on the noise spec, so the most
    recent one is kept and shared across realizations (and threads; the
    tables are read-only after construction).
    """

    def __init__(self, spec, direct_limit=DIRECT_MODE_LIMIT):
        self.spec = spec
        self._synth = None
        if spec is not None and spec.epsilon > 0 and spec.theta.n_modes > direct_limit:
            key = (spec.nu, spec.theta.profile, spec.theta.cutoff,
                   spec.theta.n_modes, float(spec.theta.norm_sq))
            hit = _SYNTH_CACHE.get(key)
            if hit is None:
                hit = SpectralNoiseSynthesizer(spec)
                _SYNTH_CACHE.clear()
                _SYNTH_CACHE[key] = hit
            self._synth = hit

    def displacement(self, increment, positions):
        if self.spec is None or self.spec.epsilon == 0.0:
            return np.zeros_like(positions)
        if self._synth is not None:
            return self._synth.displacement(increment, positions)
        return noise_velocity(self.spec, increment, positions)


def em_step(ensemble, config, evaluator, noise_spec=None, increment=None,
            sampler=None, return_displacement=False):
    """One Euler-Maruyama step: x += drift dt + shared noise displacement.

    The increment must have been drawn for this step; the identical
    coefficients displace every particle through the one realized field.
    """
    pos = ensemble.positions
    drift = pairwise_drift(pos, evaluator, config.delta_min)
    if noise_spec is not None and increment is not None:
        if sampler is None:
            sampler = NoiseSampler(noise_spec)
        disp = sampler.displacement(increment, pos)
    else:
        disp = np.zeros_like(pos)
    new = pos + config.dt * drift + disp
    if not np.all(np.isfinite(new)):
        _, min_r2 = _pair_kernels.green_min_sweep(
            np.ascontiguousarray(pos), evaluator.gr_table, evaluator.resolution,
            config.delta_min**2) if ensemble.n > 1 else (0.0, math.inf)
        raise SimulationAbort(step=round(ensemble.time / config.dt),
                              time=ensemble.time, min_pair_distance=math.sqrt(min_r2))
    stepped = VortexEnsemble(positions=new, realization_id=ensemble.realization_id,
                             time=ensemble.time + config.dt)
    if return_displacement:
        return stepped, disp
    return stepped


def default_schedule(n_steps, records=50):
    """Evenly spaced step indices, always containing 0 and the final step."""
    if n_steps == 0:
        return [0]
    pts = np.unique(np.linspace(0, n_steps, min(records, n_steps + 1)).round().astype(int))
    return [int(p) for p in pts]


@dataclass(frozen=True)
class RunConfig:
    f0: DensitySpec
    n_particles: int
    noise: NoiseSpec
    integrator: IntegratorConfig
    seed: int
    realization: int = 0
    schedule: tuple = None  # step indices; None -> default_schedule

    def resolved_schedule(self):
        if self.schedule is None:
            return default_schedule(self.integrator.n_steps)
        sched = sorted(set(int(s) for s in self.schedule))
        if sched and (sched[0] < 0 or sched[-1] > self.integrator.n_steps):
            raise ValueError("schedule steps must lie in [0, n_steps]")
        return sched


def simulate(run, evaluator, observables=None):
    """Generator of diagnostics records at the scheduled steps.

    Deterministic given (seed, realization). On a non-finite step the abort
    propagates after everything scheduled earlier has been yielded, so a
    consumer holds all records up to the failure.
    """
    from . import diagnostics

    if observables is None:
        observables = diagnostics.ObservableSpec()
    schedule = set(run.resolved_schedule())
    ens = sample_initial(run.f0, run.n_particles, run.seed, run.realization)
    sampler = NoiseSampler(run.noise)
    tracker = diagnostics.MartingaleTracker(run.noise, observables.martingale_modes)
    if 0 in schedule:
        yield diagnostics.collect_record(ens, evaluator, observables, tracker)
    cfg = run.integrator
    for step in range(1, cfg.n_steps + 1):
        # drop the previous increment before drawing: at large cutoffs two
        # coefficient arrays alive at once is a real slice of memory
        inc = None
        if run.noise is not None:
            inc = noise_field.sample_increment(
                run.noise, cfg.dt, run.seed, run.realization, step)
        before = ens.positions
        ens, disp = em_step(ens, cfg, evaluator, run.noise, inc, sampler,
                            return_displacement=True)
        tracker.update(before, disp, cfg.dt, increment=inc)
        if step in schedule:
            yield diagnostics.collect_record(ens, evaluator, observables, tracker)
