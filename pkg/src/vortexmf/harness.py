"""Experiment orchestration: N-ladders, Monte-Carlo realizations, the PDE
reference, and CSV report emission.

Realizations are the unit of parallelism; each one draws its own
counter-based streams, so results do not depend on worker count or
completion order. All aggregation happens single-threaded over results
sorted by (N, realization), and report files are written with repr-format
floats in a fixed row order, which makes bodies byte-stable across reruns.
"""
import csv
import json
import math
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__, diagnostics, lattice, noise_field, ns_spectral
from . import torus_kernel, vortex_dynamics as vd

EXPERIMENT_KINDS = ("converge", "martingale", "hamiltonian", "entropy",
                    "moments", "simulate")

CONCENTRATION_RADIUS = 0.05


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "converge"
    density: vd.DensitySpec = field(default_factory=vd.default_density)
    nu: float = 0.05
    theta_profile: str = "inverse_norm"
    cutoff_rule: object = "N"      # "N" couples the spectrum cutoff to N
    n_values: tuple = (250, 1000, 4000)
    realizations: int = 16
    t_final: float = 0.2
    dt: float = 1e-3
    records: int = 10
    seed: int = 1234
    delta_min: float = 1e-3
    bins: int = 16
    test_mode: tuple = (1, 0)
    lags: tuple = (1, 2, 3, 4, 5, 6, 7, 8)
    pde_grid: int = 128

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.nu < 0:
            raise ValueError("nu must be nonnegative")
        ns_ = tuple(int(n) for n in self.n_values)
        if not ns_ or any(b <= a for a, b in zip(ns_, ns_[1:])):
            raise ValueError("n_values must be strictly increasing")
        if any(n < 2 for n in ns_):
            raise ValueError("need at least 2 particles")
        object.__setattr__(self, "n_values", ns_)
        if self.realizations < 1:
            raise ValueError("realizations must be positive")
        if self.t_final <= 0 or self.dt <= 0:
            raise ValueError("t_final and dt must be positive")
        if self.cutoff_rule != "N" and (not isinstance(self.cutoff_rule, int)
                                        or self.cutoff_rule < 1):
            raise ValueError('cutoff_rule must be "N" or a positive integer')
        object.__setattr__(self, "test_mode", tuple(int(k) for k in self.test_mode))
        object.__setattr__(self, "lags", tuple(int(m) for m in self.lags))

    @property
    def n_steps(self):
        return int(round(self.t_final / self.dt))

    def schedule(self):
        return tuple(vd.default_schedule(self.n_steps, self.records))

    def noise_for(self, n):
        cutoff = n if self.cutoff_rule == "N" else int(self.cutoff_rule)
        theta = noise_field.make_theta(self.theta_profile, cutoff)
        return noise_field.NoiseSpec(nu=self.nu, theta=theta)

    def run_config(self, n, realization):
        return vd.RunConfig(
            f0=self.density, n_particles=n, noise=self.noise_for(n),
            integrator=vd.IntegratorConfig(dt=self.dt, n_steps=self.n_steps,
                                           delta_min=self.delta_min),
            seed=self.seed, realization=realization, schedule=self.schedule())

    def to_json_dict(self):
        return {
            "density": {"modes": [list(map(int, k)) for k in self.density.modes],
                        "coeffs": [float(c) for c in self.density.coeffs]},
            "noise": {"nu": self.nu, "profile": self.theta_profile,
                      "cutoff": self.cutoff_rule},
            "integrator": {"dt": self.dt, "delta_min": self.delta_min},
            "experiment": {"kind": self.kind, "n_values": list(self.n_values),
                           "realizations": self.realizations,
                           "t_final": self.t_final, "records": self.records,
                           "seed": self.seed, "bins": self.bins,
                           "mode": list(self.test_mode), "lags": list(self.lags),
                           "pde_grid": self.pde_grid},
        }


_SECTION_FIELDS = {
    "density": {"modes", "coeffs"},
    "noise": {"nu", "profile", "cutoff"},
    "integrator": {"dt", "delta_min"},
    "experiment": {"kind", "n_values", "realizations", "t_final", "records",
                   "seed", "bins", "mode", "lags", "pde_grid"},
}


def config_from_dict(doc, kind=None):
    if not isinstance(doc, dict):
        raise ValueError("config document must be a JSON object")
    unknown_sections = set(doc) - set(_SECTION_FIELDS)
    if unknown_sections:
        raise ValueError(f"unknown config section {sorted(unknown_sections)[0]!r}")
    for section, allowed in _SECTION_FIELDS.items():
        extra = set(doc.get(section, {})) - allowed
        if extra:
            raise ValueError(
                f"unknown field {sorted(extra)[0]!r} in section {section!r}")
    dens = doc.get("density", {})
    if "modes" in dens or "coeffs" in dens:
        modes = dens.get("modes", [])
        coeffs = dens.get("coeffs", [])
        density = (vd.uniform_density() if len(modes) == 0
                   else vd.DensitySpec(modes=modes, coeffs=coeffs))
    else:
        density = vd.default_density()
    noise = doc.get("noise", {})
    integ = doc.get("integrator", {})
    exp = dict(doc.get("experiment", {}))
    if kind is not None:
        exp["kind"] = kind
    kwargs = {
        "density": density,
        "nu": float(noise.get("nu", 0.05)),
        "theta_profile": noise.get("profile", "inverse_norm"),
        "cutoff_rule": noise.get("cutoff", "N"),
        "dt": float(integ.get("dt", 1e-3)),
        "delta_min": float(integ.get("delta_min", 1e-3)),
    }
    if "kind" in exp:
        kwargs["kind"] = exp["kind"]
    for name in ("realizations", "records", "seed", "bins", "pde_grid"):
        if name in exp:
            kwargs[name] = int(exp[name])
    if "n_values" in exp:
        kwargs["n_values"] = tuple(exp["n_values"])
    if "t_final" in exp:
        kwargs["t_final"] = float(exp["t_final"])
    if "mode" in exp:
        kwargs["test_mode"] = tuple(exp["mode"])
    if "lags" in exp:
        kwargs["lags"] = tuple(exp["lags"])
    return ExperimentConfig(**kwargs)


def load_config(path, kind=None):
    """Parse and validate a JSON experiment configuration."""
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as err:
            raise ValueError(f"config is not valid JSON: {err}") from err
    return config_from_dict(doc, kind=kind)


def echo_config(config, out_dir):
    """Write the fully resolved configuration next to the outputs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config_echo.json", "w") as f:
        json.dump(config.to_json_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def build_id():
    """Short source revision for provenance columns, stable per checkout."""
    try:
        out = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            cwd=Path(__file__).resolve().parent, capture_output=True,
            text=True, timeout=10)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except OSError:
        pass
    return f"v{__version__}"


# ------------------------------------------------------------------ ladders

@dataclass
class RealizationResult:
    n: int
    realization: int
    records: list
    complete: bool
    abort_step: int = None


def _one_realization(config, n, realization, evaluator, observables):
    run = config.run_config(n, realization)
    out = []
    try:
        for rec in vd.simulate(run, evaluator, observables):
            out.append(rec)
        return RealizationResult(n, realization, out, True)
    except vd.SimulationAbort as abort:
        return RealizationResult(n, realization, out, False, abort.step)


def _ladder_results(config, evaluator, observables=None, threads=1):
    """All realizations for every N, sequential across rungs so at most one
    noise synthesizer is alive."""
    results = {}
    for n in config.n_values:
        vd.NoiseSampler(config.noise_for(n))   # build shared tables once
        jobs = [(n, r) for r in range(config.realizations)]
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                rung = list(pool.map(
                    lambda ar: _one_realization(config, ar[0], ar[1],
                                                evaluator, observables), jobs))
        else:
            rung = [_one_realization(config, n, r, evaluator, observables)
                    for n, r in jobs]
        results[n] = sorted(rung, key=lambda res: res.realization)
    return results


# ------------------------------------------------------------- convergence

@dataclass(frozen=True)
class ConvergenceReport:
    config: ExperimentConfig
    times: tuple
    modes: tuple
    mode_errors: dict          # (n, mode, time_index) -> RMS over realizations
    aggregated: dict           # n -> (rms, mc standard error)
    martingale: dict           # (n, mode) -> mean sup_t M^2
    martingale_bound: dict     # mode -> a priori bound
    qv_mean: dict              # (n, mode) -> mean quadratic variation at T
    hamiltonian_mean: dict     # (n, time_index) -> mean H_N
    hamiltonian_oracle: float  # quadrature value of the t=0 mean
    concentration: dict        # n -> (records satisfying the bound, records)
    complete: dict             # n -> number of complete realizations
    incomplete: tuple          # (n, realization) pairs that aborted
    pde_pairings: dict         # (mode, time_index) -> <xi_t, e_k>


def energy_quadrature(f0, c0=None):
    """Double integral of (c0 - G) against f0 (x) f0, evaluated spectrally:
    c0 + sum_k c_k^2 / (4 pi^2 |k|^2) over the density's modes."""
    if c0 is None:
        c0 = torus_kernel.C0_DEFAULT
    total = c0
    for k, c in zip(np.asarray(f0.modes), np.asarray(f0.coeffs, dtype=np.float64)):
        total += float(c) ** 2 / (4.0 * math.pi**2 * float(k[0]**2 + k[1]**2))
    return total


def pde_reference(config):
    """Weak pairings of the limit equation on the particle schedule."""
    sched = config.schedule()
    solver = ns_spectral.SolverConfig(nu=config.nu, dt=config.dt,
                                      n_steps=config.n_steps,
                                      grid_size=config.pde_grid)
    modes = [tuple(map(int, k)) for k in lattice.modes_in_disk(3)]
    pairings = {}
    for t_idx, state in enumerate(ns_spectral.solve(config.density, solver, sched)):
        for k in modes:
            pairings[(k, t_idx)] = ns_spectral.weak_pairing(state, k)
    return tuple(modes), pairings


def run_convergence(config, threads=1, evaluator=None):
    if evaluator is None:
        evaluator = torus_kernel.KernelEvaluator()
    modes, pde = pde_reference(config)
    sched = config.schedule()
    times = tuple(round(s * config.dt, 12) for s in sched)
    results = _ladder_results(config, evaluator, threads=threads)

    mode_errors, aggregated = {}, {}
    martingale, qv_mean, ham_mean, conc = {}, {}, {}, {}
    complete, incomplete = {}, []
    tmodes = diagnostics.DEFAULT_MARTINGALE_MODES
    log_inv = math.log(1.0 / (2.0 * CONCENTRATION_RADIUS))
    for n in config.n_values:
        done = [res for res in results[n] if res.complete]
        incomplete.extend((n, res.realization) for res in results[n] if not res.complete)
        complete[n] = len(done)
        if not done:
            continue
        # (realization, mode, time) error tensor against the PDE reference
        errs = np.array([[[res.records[t].modes[k] - pde[(k, t)]
                           for t in range(len(times))] for k in modes]
                         for res in done])
        sq = errs**2
        for ki, k in enumerate(modes):
            for t in range(len(times)):
                mode_errors[(n, k, t)] = float(np.sqrt(sq[:, ki, t].mean()))
        per_real = sq.reshape(len(done), -1).mean(axis=1)
        ms = float(per_real.mean())
        rms = math.sqrt(ms)
        if len(done) > 1:
            se_ms = float(per_real.std(ddof=1)) / math.sqrt(len(done))
            se = se_ms / (2.0 * rms) if rms > 0 else 0.0
        else:
            se = 0.0
        aggregated[n] = (rms, se)
        for k in tmodes:
            martingale[(n, k)] = float(np.mean(
                [res.records[-1].martingale_sup_sq[k] for res in done]))
            qv_mean[(n, k)] = float(np.mean(
                [res.records[-1].quadratic_variation[k] for res in done]))
        for t in range(len(times)):
            ham_mean[(n, t)] = float(np.mean(
                [res.records[t].hamiltonian for res in done]))
        good = total = 0
        for res in done:
            for rec in res.records:
                bound = 1.0 / math.sqrt(n) + math.sqrt(
                    2.0 * math.pi * max(rec.hamiltonian, 0.0) / log_inv)
                good += rec.concentration[CONCENTRATION_RADIUS] <= bound
                total += 1
        conc[n] = (good, total)

    bounds = {k: 16.0 * math.pi**2 * 4.0 * config.nu * (k[0]**2 + k[1]**2)
              * config.t_final for k in tmodes}
    return ConvergenceReport(
        config=config, times=times, modes=modes, mode_errors=mode_errors,
        aggregated=aggregated, martingale=martingale, martingale_bound=bounds,
        qv_mean=qv_mean, hamiltonian_mean=ham_mean,
        hamiltonian_oracle=energy_quadrature(config.density),
        concentration=conc, complete=complete, incomplete=tuple(incomplete),
        pde_pairings=pde)


def run_martingale_decay(config, threads=1, evaluator=None):
    """Standalone variance table E[sup_t |M|^2] per N and test mode."""
    if config.realizations < 32:
        raise ValueError("martingale decay estimates need at least 32 realizations")
    if evaluator is None:
        evaluator = torus_kernel.KernelEvaluator()
    light = diagnostics.ObservableSpec(mode_window=1, sobolev_window=2)
    cfg = replace(config, records=2)
    results = _ladder_results(cfg, evaluator, observables=light, threads=threads)
    table = {}
    for n in config.n_values:
        done = [r for r in results[n] if r.complete]
        if not done:
            continue
        for k in diagnostics.DEFAULT_MARTINGALE_MODES:
            table[(n, k)] = float(np.mean(
                [r.records[-1].martingale_sup_sq[k] for r in done]))
    return table


def run_hamiltonian_bound(config, threads=1, evaluator=None):
    """Per-(N, t) Monte-Carlo means of H_N plus the quadrature oracle."""
    if evaluator is None:
        evaluator = torus_kernel.KernelEvaluator()
    results = _ladder_results(config, evaluator, threads=threads)
    times = tuple(round(s * config.dt, 12) for s in config.schedule())
    means = {}
    for n in config.n_values:
        done = [r for r in results[n] if r.complete]
        for t in range(len(times)):
            means[(n, t)] = float(np.mean([r.records[t].hamiltonian for r in done]))
    return {"times": times, "means": means,
            "oracle": energy_quadrature(config.density)}


# ----------------------------------------------------------------- entropy

def run_entropy(config, evaluator=None):
    """Pooled pair-entropy estimates on the record schedule."""
    n = config.n_values[0]
    pooled = config.realizations * n * (n - 1)
    if pooled < 100 * config.bins**4:
        raise ValueError(
            f"pooled pair samples {pooled} fall below 100 bins^4 = {100 * config.bins**4}")
    if evaluator is None:
        evaluator = torus_kernel.KernelEvaluator()
    sched = config.schedule()
    hists = {s: diagnostics.PairHistogram(bins=config.bins) for s in sched}
    noise = config.noise_for(n)
    integ = vd.IntegratorConfig(dt=config.dt, n_steps=config.n_steps,
                                delta_min=config.delta_min)
    sampler = vd.NoiseSampler(noise)
    for real in range(config.realizations):
        ens = vd.sample_initial(config.density, n, config.seed, real)
        if 0 in hists:
            hists[0].add_ensemble(ens)
        for step in range(1, config.n_steps + 1):
            inc = noise_field.sample_increment(noise, config.dt, config.seed,
                                               real, step)
            ens = vd.em_step(ens, integ, evaluator, noise, inc, sampler)
            if step in hists:
                hists[step].add_ensemble(ens)
    return {"times": tuple(round(s * config.dt, 12) for s in sched),
            "entropy": tuple(diagnostics.entropy2_estimate(hists[s]) for s in sched)}


# ------------------------------------------------------------ moment scan

def run_moment_scan(config, evaluator=None):
    """Mode-increment fourth moments across seeds and the log-log slope."""
    if evaluator is None:
        evaluator = torus_kernel.KernelEvaluator()
    n = config.n_values[0]
    n_steps = max(config.lags) + 8
    noise = config.noise_for(n)
    integ = vd.IntegratorConfig(dt=config.dt, n_steps=n_steps,
                                delta_min=config.delta_min)
    sampler = vd.NoiseSampler(noise)
    series = np.empty((config.realizations, n_steps + 1))
    for real in range(config.realizations):
        ens = vd.sample_initial(config.density, n, config.seed, real)
        series[real, 0] = diagnostics.empirical_mode(ens, config.test_mode)
        for step in range(1, n_steps + 1):
            inc = noise_field.sample_increment(noise, config.dt, config.seed,
                                               real, step)
            ens = vd.em_step(ens, integ, evaluator, noise, inc, sampler)
            series[real, step] = diagnostics.empirical_mode(ens, config.test_mode)
    out = diagnostics.increment_moment_scan(series, config.lags)
    out["mode"] = config.test_mode
    out["dt"] = config.dt
    return out


# ------------------------------------------------------------- CSV reports

def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_convergence_report(report, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = report.config
    prov = [cfg.realizations, cfg.seed, build_id()]

    rows = []
    for n in cfg.n_values:
        for k in report.modes:
            for t, time in enumerate(report.times):
                if (n, k, t) in report.mode_errors:
                    rows.append([n, k[0], k[1], time,
                                 report.mode_errors[(n, k, t)],
                                 report.complete[n]] + prov)
    _write_csv(out / "convergence.csv",
               ["N", "k1", "k2", "time", "rms_error", "complete",
                "realizations", "seed", "build"], rows)

    rows = []
    for n in cfg.n_values:
        for k in sorted(report.martingale_bound):
            if (n, k) in report.martingale:
                rows.append([n, k[0], k[1], report.martingale[(n, k)],
                             report.qv_mean[(n, k)], report.martingale_bound[k],
                             report.complete[n]] + prov)
    _write_csv(out / "martingale.csv",
               ["N", "k1", "k2", "sup_sq_mean", "qv_mean", "bound",
                "complete", "realizations", "seed", "build"], rows)

    rows = []
    for n in cfg.n_values:
        for t, time in enumerate(report.times):
            if (n, t) in report.hamiltonian_mean:
                rows.append([n, time, report.hamiltonian_mean[(n, t)],
                             report.hamiltonian_oracle,
                             report.complete[n]] + prov)
    _write_csv(out / "hamiltonian.csv",
               ["N", "time", "mean_H", "initial_oracle", "complete",
                "realizations", "seed", "build"], rows)

    rows = []
    for n in cfg.n_values:
        if n in report.concentration:
            good, total = report.concentration[n]
            rows.append([n, CONCENTRATION_RADIUS, good, total] + prov)
    _write_csv(out / "concentration.csv",
               ["N", "radius", "satisfied", "records", "realizations",
                "seed", "build"], rows)

    rows = []
    for n in cfg.n_values:
        if n in report.aggregated:
            rms, se = report.aggregated[n]
            rows.append([n, rms, se, report.complete[n]] + prov)
    _write_csv(out / "summary.csv",
               ["N", "aggregated_rms", "mc_se", "complete", "realizations",
                "seed", "build"], rows)

    if report.incomplete:
        _write_csv(out / "incomplete.csv", ["N", "realization"],
                   [list(pair) for pair in report.incomplete])


def write_entropy_report(result, config, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prov = [config.n_values[0], config.realizations, config.seed, build_id()]
    h0 = result["entropy"][0]
    rows = [[t, h, h0, config.bins] + prov
            for t, h in zip(result["times"], result["entropy"])]
    _write_csv(out / "entropy.csv",
               ["time", "entropy2", "entropy2_initial", "bins", "N",
                "realizations", "seed", "build"], rows)


def write_moment_report(result, config, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prov = [config.n_values[0], config.realizations, config.seed, build_id()]
    rows = [[int(m), float(val), result["slope"], result["mode"][0],
             result["mode"][1], result["dt"]] + prov
            for m, val in zip(result["lags"], result["moments"])]
    _write_csv(out / "moments.csv",
               ["lag", "fourth_moment", "slope", "k1", "k2", "dt", "N",
                "realizations", "seed", "build"], rows)


def write_martingale_report(table, config, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prov = [config.realizations, config.seed, build_id()]
    bounds = {k: 16.0 * math.pi**2 * 4.0 * config.nu * (k[0]**2 + k[1]**2)
              * config.t_final for k in diagnostics.DEFAULT_MARTINGALE_MODES}
    rows = []
    for n in config.n_values:
        for k in sorted(bounds):
            if (n, k) in table:
                rows.append([n, k[0], k[1], table[(n, k)], bounds[k]] + prov)
    _write_csv(out / "martingale.csv",
               ["N", "k1", "k2", "sup_sq_mean", "bound", "realizations",
                "seed", "build"], rows)


def write_hamiltonian_report(result, config, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prov = [config.realizations, config.seed, build_id()]
    rows = []
    for n in config.n_values:
        for t, time in enumerate(result["times"]):
            if (n, t) in result["means"]:
                rows.append([n, time, result["means"][(n, t)],
                             result["oracle"]] + prov)
    _write_csv(out / "hamiltonian.csv",
               ["N", "time", "mean_H", "initial_oracle", "realizations",
                "seed", "build"], rows)
