"""Interacting particle system: sampling, drift, and the Euler-Maruyama step.

Frozen drift values come from a Gauss-damped spectral sum of the velocity
kernel at cutoff 768 (digits stable from cutoff 512 on), evaluated offline.
"""
import math

import numpy as np
import pytest

from vortexmf import noise_field, torus_kernel, vortex_dynamics as vd


@pytest.fixture(scope="module")
def evaluator():
    return torus_kernel.KernelEvaluator()


# ---------------------------------------------------------------- densities

def test_default_density_values_and_envelope():
    f0 = vd.default_density()
    pts = np.array([[0.0, 0.0], [0.5, 0.75], [0.13, 0.41]])
    s2 = math.sqrt(2.0)
    expect = 1.0 + 0.3 * s2 * np.cos(2 * np.pi * pts[:, 0]) \
        + 0.3 * s2 * np.sin(2 * np.pi * pts[:, 1])
    assert np.allclose(f0.evaluate(pts), expect, atol=1e-12)
    assert f0.envelope == pytest.approx(1.0 + 0.6 * s2, rel=1e-12)
    # the two waves reach their joint minimum on the grid
    assert f0.min_value == pytest.approx(1.0 - 0.6 * s2, abs=1e-6)


def test_density_rejects_negative_and_zero_mode():
    with pytest.raises(ValueError):
        vd.DensitySpec(modes=[(1, 0)], coeffs=[0.8])   # 1 - 0.8*sqrt(2) < 0
    with pytest.raises(ValueError):
        vd.DensitySpec(modes=[(0, 0)], coeffs=[0.1])


def test_uniform_density_is_flat():
    f0 = vd.uniform_density()
    pts = np.random.default_rng(3).random((50, 2))
    assert np.all(f0.evaluate(pts) == 1.0)


# ----------------------------------------------------------------- sampling

def test_sample_positions_lie_in_unit_torus():
    ens = vd.sample_initial(vd.default_density(), 500, seed=5, realization=2)
    assert ens.positions.shape == (500, 2)
    assert np.all(ens.positions >= 0.0) and np.all(ens.positions < 1.0)
    assert ens.n == 500 and ens.time == 0.0 and ens.realization_id == 2


def test_sample_reproduces_mode_coefficients():
    # E e_k(X) = coefficient of e_k in the density
    f0 = vd.default_density()
    ens = vd.sample_initial(f0, 20000, seed=7, realization=0)
    c = noise_field._basis_at(np.array([[1, 0], [0, -1]]), ens.positions).mean(axis=0)
    assert c[0] == pytest.approx(0.3, abs=0.02)
    assert c[1] == pytest.approx(-0.3, abs=0.02)
    # a mode absent from the density averages to zero
    z = noise_field._basis_at(np.array([[2, 1]]), ens.positions).mean()
    assert abs(z) < 0.02


def test_sample_uniform_moment():
    ens = vd.sample_initial(vd.uniform_density(), 20000, seed=1, realization=0)
    assert np.allclose(ens.positions.mean(axis=0), 0.5, atol=0.01)


def test_sampling_determinism_and_realization_split():
    f0 = vd.default_density()
    a = vd.sample_initial(f0, 40, seed=9, realization=4)
    b = vd.sample_initial(f0, 40, seed=9, realization=4)
    c = vd.sample_initial(f0, 40, seed=9, realization=5)
    assert np.array_equal(a.positions, b.positions)
    assert not np.array_equal(a.positions, c.positions)
    one = vd.sample_initial(f0, 1, seed=9, realization=0)
    assert one.positions.shape == (1, 2)


# -------------------------------------------------------------------- drift

# Gauss-damped spectral oracle, cutoff 768, for the four-vortex configuration
# below with equal weights 1/4.
FOUR_POS = np.array([[0.1, 0.2], [0.35, 0.2], [0.7, 0.6], [0.25, 0.8]])
FOUR_DRIFT = np.array([
    (0.019177501380957793, 0.13498606007463895),
    (0.02104062971895445, -0.12363048748156844),
    (0.007638809741055914, -0.019785836906689013),
    (-0.04785694084096816, 0.008430264313618497),
])

# oracle value of the kernel at separation (0.25, 0)
K_QUARTER = -0.5037418524677706


def test_drift_four_body_frozen(evaluator):
    drift = vd.pairwise_drift(FOUR_POS, evaluator)
    assert np.allclose(drift, FOUR_DRIFT, atol=1e-6)


def test_drift_matches_explicit_kernel_loop(evaluator):
    pos = np.random.default_rng(12).random((37, 2))
    drift = vd.pairwise_drift(pos, evaluator)
    ref = np.zeros_like(pos)
    for i in range(len(pos)):
        d = np.delete(pos[i] - pos, i, axis=0)
        ref[i] = evaluator.kernel(d).sum(axis=0) / len(pos)
    assert np.abs(drift - ref).max() < 1e-13


def test_drift_antisymmetry_and_momentum(evaluator):
    pos = np.random.default_rng(8).random((101, 2))
    drift = vd.pairwise_drift(pos, evaluator)
    # equal circulations: the mean velocity vanishes identically
    assert np.abs(drift.sum(axis=0)).max() < 1e-13
    two = vd.pairwise_drift(np.array([[0.3, 0.3], [0.52, 0.64]]), evaluator)
    assert np.allclose(two[0], -two[1], atol=1e-15)


def test_drift_clamps_near_coincident_pairs(evaluator):
    d = 1e-4
    pos = np.array([[0.5, 0.5], [0.5 + d, 0.5]])
    drift = vd.pairwise_drift(pos, evaluator, delta_min=1e-3)
    # clamped magnitude ~ d / (2 pi delta^2), two orders below the raw 1/(2 pi d)
    raw = 1.0 / (2 * np.pi * d) / 2
    clamped = np.abs(drift).max()
    assert clamped < raw / 50
    assert clamped == pytest.approx(d / (2 * np.pi * 1e-6) / 2, rel=1e-2)
    loose = vd.pairwise_drift(pos, evaluator, delta_min=1e-5)
    assert np.abs(loose).max() == pytest.approx(raw, rel=1e-2)


def test_coincident_pair_contributes_nothing(evaluator):
    pos = np.array([[0.25, 0.75], [0.25, 0.75]])
    drift = vd.pairwise_drift(pos, evaluator)
    assert np.all(drift == 0.0)


# ------------------------------------------------------------ deterministic EM

def test_two_vortex_step_frozen(evaluator):
    pos = np.array([[0.375, 0.5], [0.125, 0.5]])   # separation (0.25, 0)
    ens = vd.VortexEnsemble(pos, realization_id=0)
    cfg = vd.IntegratorConfig(dt=1e-3, n_steps=1)
    out = vd.em_step(ens, cfg, evaluator)
    move = out.positions - pos
    # each vortex moves along y with speed |K|/2, in opposite directions
    assert move[0, 0] == pytest.approx(0.0, abs=1e-9)
    assert move[0, 1] == pytest.approx(1e-3 * K_QUARTER / 2, rel=1e-6)
    assert np.allclose(move[1], -move[0], atol=1e-12)
    assert out.time == pytest.approx(1e-3)


def test_two_vortex_rotation_conserves_pair_potential(evaluator):
    # the relative coordinate moves on a level set of G; the separation
    # itself varies with orientation (the set is not a circle at r = 0.25)
    ens = vd.VortexEnsemble(np.array([[0.375, 0.5], [0.125, 0.5]]), 0)
    cfg = vd.IntegratorConfig(dt=1e-3, n_steps=1)
    g0 = evaluator.green_values(np.array([[0.25, 0.0]]))[0]
    for _ in range(200):
        ens = vd.em_step(ens, cfg, evaluator)
    d = ens.positions[0] - ens.positions[1]
    d -= np.rint(d)
    g = evaluator.green_values(d[None])[0]
    assert abs(g - g0) < 1e-4
    assert 0.247 < math.hypot(*d) <= 0.2502


def test_step_wraps_into_unit_cell(evaluator):
    ens = vd.VortexEnsemble(np.array([[0.999, 0.001], [0.001, 0.999]]), 0)
    cfg = vd.IntegratorConfig(dt=0.5, n_steps=1)   # huge step to force a wrap
    out = vd.em_step(ens, cfg, evaluator)
    assert np.all(out.positions >= 0.0) and np.all(out.positions < 1.0)


def test_zero_viscosity_noise_matches_noise_free(evaluator):
    theta = noise_field.make_theta("inverse_norm", 6)
    off = noise_field.NoiseSpec(nu=0.0, theta=theta)
    ens = vd.sample_initial(vd.default_density(), 24, seed=3, realization=0)
    cfg = vd.IntegratorConfig(dt=1e-3, n_steps=1)
    inc = noise_field.sample_increment(off, cfg.dt, 3, 0, 0)
    a = vd.em_step(ens, cfg, evaluator, noise_spec=off, increment=inc)
    b = vd.em_step(ens, cfg, evaluator)
    assert np.array_equal(a.positions, b.positions)


# ------------------------------------------------------------------ with noise

def test_pure_noise_displacement_variance(evaluator):
    # drift-free single particle: Var(step) = 2 nu dt per component
    nu, dt = 0.05, 1e-3
    spec = noise_field.NoiseSpec(nu=nu, theta=noise_field.make_theta("inverse_norm", 8))
    cfg = vd.IntegratorConfig(dt=dt, n_steps=1)
    rng = np.random.default_rng(17)
    samples = []
    for real in range(400):
        pos = rng.random((1, 2))
        ens = vd.VortexEnsemble(pos, real)
        inc = noise_field.sample_increment(spec, dt, seed=21, realization=real, step=0)
        out = vd.em_step(ens, cfg, evaluator, noise_spec=spec, increment=inc)
        d = out.positions - pos
        d -= np.rint(d)
        samples.append(d[0])
    var = np.var(np.array(samples), axis=0)
    assert np.allclose(var, 2 * nu * dt, rtol=0.15)


def test_returned_displacement_reconstructs_step(evaluator):
    spec = noise_field.NoiseSpec(nu=0.1, theta=noise_field.make_theta("inverse_norm", 10))
    ens = vd.sample_initial(vd.default_density(), 50, seed=2, realization=1)
    cfg = vd.IntegratorConfig(dt=1e-3, n_steps=1)
    inc = noise_field.sample_increment(spec, cfg.dt, 2, 1, 0)
    out, disp = vd.em_step(ens, cfg, evaluator, spec, inc, return_displacement=True)
    drift = vd.pairwise_drift(ens.positions, evaluator, cfg.delta_min)
    rebuilt = np.mod(ens.positions + cfg.dt * drift + disp, 1.0)
    assert np.array_equal(out.positions, rebuilt)


def test_step_is_exchangeable(evaluator):
    spec = noise_field.NoiseSpec(nu=0.05, theta=noise_field.make_theta("inverse_norm", 8))
    ens = vd.sample_initial(vd.default_density(), 16, seed=6, realization=0)
    perm = np.random.default_rng(0).permutation(16)
    cfg = vd.IntegratorConfig(dt=1e-3, n_steps=1)
    a = vd.VortexEnsemble(ens.positions, 0)
    b = vd.VortexEnsemble(ens.positions[perm], 0)
    for step in range(5):
        inc = noise_field.sample_increment(spec, cfg.dt, 6, 0, step)
        a = vd.em_step(a, cfg, evaluator, spec, inc)
        b = vd.em_step(b, cfg, evaluator, spec, inc)
    assert np.array_equal(a.positions[perm], b.positions)


def test_abort_on_nonfinite_positions(evaluator):
    spec = noise_field.NoiseSpec(nu=0.05, theta=noise_field.make_theta("inverse_norm", 6))
    ens = vd.sample_initial(vd.default_density(), 8, seed=4, realization=0)
    cfg = vd.IntegratorConfig(dt=1e-3, n_steps=1)
    good = noise_field.sample_increment(spec, cfg.dt, 4, 0, 0)
    bad = noise_field.NoiseIncrement(
        coeffs=np.full_like(good.coeffs, np.nan), dt=good.dt, cutoff=good.cutoff,
        seed=good.seed, realization=good.realization, step=good.step)
    with pytest.raises(vd.SimulationAbort) as info:
        vd.em_step(ens, cfg, evaluator, spec, bad)
    assert info.value.step == 0
    assert math.isfinite(info.value.min_pair_distance)


def test_increment_spec_mismatch_raises(evaluator):
    spec6 = noise_field.NoiseSpec(nu=0.05, theta=noise_field.make_theta("inverse_norm", 6))
    spec8 = noise_field.NoiseSpec(nu=0.05, theta=noise_field.make_theta("inverse_norm", 8))
    ens = vd.sample_initial(vd.default_density(), 8, seed=4, realization=0)
    cfg = vd.IntegratorConfig(dt=1e-3, n_steps=1)
    inc = noise_field.sample_increment(spec8, cfg.dt, 4, 0, 0)
    with pytest.raises(ValueError):
        vd.em_step(ens, cfg, evaluator, spec6, inc)


# ------------------------------------------------------- energy conservation

def test_noise_free_hamiltonian_quasi_conserved(evaluator):
    from vortexmf import diagnostics
    ens0 = vd.sample_initial(vd.default_density(), 8, seed=13, realization=0)
    h0 = diagnostics.hamiltonian(ens0, evaluator)

    def drift_after(dt, n_steps):
        ens = ens0
        cfg = vd.IntegratorConfig(dt=dt, n_steps=n_steps)
        for _ in range(n_steps):
            ens = vd.em_step(ens, cfg, evaluator)
        return abs(diagnostics.hamiltonian(ens, evaluator) - h0)

    err = drift_after(1e-4, 10000)
    assert err / h0 < 1e-4
    # first-order integrator: halving dt should shrink the drift clearly
    err_half = drift_after(5e-5, 20000)
    assert err > 1.7 * err_half


# --------------------------------------------------------------- simulate API

def test_integrator_config_validation():
    with pytest.raises(ValueError):
        vd.IntegratorConfig(dt=0.0, n_steps=5)
    with pytest.raises(ValueError):
        vd.IntegratorConfig(dt=1e-3, n_steps=-1)
    with pytest.raises(ValueError):
        vd.IntegratorConfig(dt=1e-3, n_steps=5, scheme="milstein")


def test_default_schedule_endpoints():
    s = vd.default_schedule(200, records=50)
    assert s[0] == 0 and s[-1] == 200
    assert len(s) == 50
    assert list(s) == sorted(set(s))
    assert vd.default_schedule(3, records=50) == [0, 1, 2, 3]


def test_simulate_schedule_and_determinism(evaluator):
    run = vd.RunConfig(
        f0=vd.default_density(), n_particles=32,
        noise=noise_field.NoiseSpec(nu=0.05, theta=noise_field.make_theta("inverse_norm", 8)),
        integrator=vd.IntegratorConfig(dt=1e-3, n_steps=10),
        seed=23, realization=1, schedule=(0, 4, 10))
    recs = list(vd.simulate(run, evaluator))
    assert [round(r.time, 9) for r in recs] == [0.0, 4e-3, 10e-3]
    again = list(vd.simulate(run, evaluator))
    assert all(r1.modes == r2.modes and r1.martingale == r2.martingale
               for r1, r2 in zip(recs, again))
    assert recs[1].martingale != recs[2].martingale


def test_simulate_rejects_bad_schedule(evaluator):
    run = vd.RunConfig(
        f0=vd.default_density(), n_particles=4, noise=None,
        integrator=vd.IntegratorConfig(dt=1e-3, n_steps=10),
        seed=23, realization=0, schedule=(0, 12))
    with pytest.raises(ValueError):
        list(vd.simulate(run, evaluator))


def test_simulate_without_noise_keeps_martingale_at_zero(evaluator):
    run = vd.RunConfig(
        f0=vd.default_density(), n_particles=16, noise=None,
        integrator=vd.IntegratorConfig(dt=1e-3, n_steps=5),
        seed=31, realization=0, schedule=(5,))
    (rec,) = list(vd.simulate(run, evaluator))
    assert all(v == 0.0 for v in rec.martingale.values())
    assert all(v == 0.0 for v in rec.quadratic_variation.values())
