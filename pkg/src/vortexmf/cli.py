"""Command-line entry point.

vortexmf <command> --config FILE --out DIR [--threads N] [--seed S] [--plots]

Validation commands (validate-kernel, validate-noise, validate-ns) run
self-contained checks and write one CSV of name/value/threshold/pass rows.
Experiment commands run the harness and write the report CSVs. The exit
code is 0 only if every check in the command passed.
"""
import argparse
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import diagnostics, harness, noise_field, ns_spectral
from . import torus_kernel, vortex_dynamics as vd

COMMANDS = ("validate-kernel", "validate-noise", "validate-ns", "simulate",
            "converge", "martingale", "hamiltonian", "entropy", "moments")

_KIND_OF = {"converge": "converge", "martingale": "martingale",
            "hamiltonian": "hamiltonian", "entropy": "entropy",
            "moments": "moments", "simulate": "simulate"}


def _check_rows(checks):
    rows = [[name, value, threshold, "pass" if ok else "FAIL"]
            for name, value, threshold, ok in checks]
    all_ok = all(ok for *_, ok in checks)
    return rows, all_ok


def _oracle_kernel(points, cutoff=640):
    """Gauss-damped spectral sum of the velocity kernel (slow, reference)."""
    ks = np.arange(-cutoff, cutoff + 1)
    k1, k2 = np.meshgrid(ks, ks, indexing="ij")
    kk = (k1**2 + k2**2).astype(np.float64)
    mask = kk > 0
    damp = np.where(mask, np.exp(-kk / (cutoff / 4.0) ** 2) / np.where(mask, kk, 1.0), 0.0)
    out = np.empty((len(points), 2))
    for i, d in enumerate(points):
        phase = np.exp(2j * np.pi * (k1 * d[0] + k2 * d[1]))
        f = damp * phase / (2.0 * np.pi)
        out[i] = [np.sum(-1j * k2 * f).real, np.sum(1j * k1 * f).real]
    return out


def validate_kernel():
    ev = torus_kernel.KernelEvaluator()
    rng = np.random.default_rng(0)
    checks = []

    r = 10.0 ** rng.uniform(-3, -2, size=100)
    ang = rng.uniform(0, 2 * np.pi, size=100)
    pts = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)
    speed = np.linalg.norm(ev.kernel(pts), axis=1)
    dev = float(np.abs(speed * r * 2 * np.pi - 1.0).max())
    checks.append(("short_range_asymptote_rel_dev", dev, 0.05, dev <= 0.05))

    sym = ev.kernel(pts) + ev.kernel(-pts)
    anti = float(np.abs(sym).max())
    checks.append(("antisymmetry_abs", anti, 0.0, anti == 0.0))

    probe = np.array([[0.1, 0.2], [0.35, -0.2], [-0.27, 0.44], [0.02, 0.03]])
    err = float(np.abs(ev.kernel(probe) - _oracle_kernel(probe)).max())
    checks.append(("evaluator_vs_oracle_abs", err, 1e-6, err <= 1e-6))
    return checks


def validate_noise():
    checks = []
    for cutoff in (8, 64, 256):
        theta = noise_field.make_theta("inverse_norm", cutoff)
        res = noise_field.verify_isotropy(theta)
        checks.append((f"isotropy_residual_cutoff_{cutoff}", res, 1e-12, res <= 1e-12))
        spec = noise_field.NoiseSpec(nu=0.05, theta=theta)
        ident = abs(spec.epsilon**2 * theta.norm_sq - 4 * spec.nu) / (4 * spec.nu)
        checks.append((f"scaling_identity_cutoff_{cutoff}", ident, 1e-12, ident <= 1e-12))
    table = noise_field.verify_decay_condition(
        nu=0.05, cutoffs=(8, 32, 128, 512), x=(0.3, 0.2))
    norms = [row.scaled_norm for row in table]
    dec = all(b < a for a, b in zip(norms, norms[1:]))
    checks.append(("decay_strictly_decreasing", float(norms[-1]), "decreasing", dec))
    bounded = all(row.satisfied for row in table)
    checks.append(("decay_bounded_by_2nu", float(max(norms)), 0.1, bounded))
    return checks


def validate_ns():
    checks = []
    cfg = ns_spectral.SolverConfig(nu=0.01, dt=1e-4, n_steps=1000, grid_size=64)
    *_, last = ns_spectral.solve(vd.DensitySpec(modes=[(1, 0)], coeffs=[0.3]),
                                 cfg, schedule=(1000,))
    expect = 0.3 * math.exp(-4 * math.pi**2 * 0.01 * 0.1)
    rel = abs(ns_spectral.weak_pairing(last, (1, 0)) - expect) / expect
    checks.append(("single_mode_decay_rel", rel, 1e-6, rel <= 1e-6))

    f = vd.DensitySpec(modes=[(1, 0), (0, -1), (2, 1)], coeffs=[0.3, -0.3, 0.1])
    cfg0 = ns_spectral.SolverConfig(nu=0.0, dt=1e-3, n_steps=100, grid_size=64)
    first, final = ns_spectral.solve(f, cfg0, schedule=(0, 100))
    drift = abs(ns_spectral.enstrophy(final) - ns_spectral.enstrophy(first)) \
        / ns_spectral.enstrophy(first)
    checks.append(("inviscid_enstrophy_drift_rel", drift, 1e-8, drift <= 1e-8))

    ev = torus_kernel.KernelEvaluator()
    blob = ns_spectral.mollified_vortex((0.5, 0.5), 0.01, 512)
    u1, u2 = ns_spectral.velocity_from_vorticity(blob)
    worst = 0.0
    for p in ((0.625, 0.5), (0.5, 0.75), (0.375, 0.625)):
        i, j = int(round(p[0] * 512)), int(round(p[1] * 512))
        got = np.array([u1[i, j], u2[i, j]])
        ref = ev.kernel(np.array([[p[0] - 0.5, p[1] - 0.5]]))[0]
        worst = max(worst, float(np.linalg.norm(got - ref) / np.linalg.norm(ref)))
    checks.append(("blob_velocity_vs_kernel_rel", worst, 0.01, worst <= 0.01))
    return checks


def run_simulate(config, out_dir):
    ev = torus_kernel.KernelEvaluator()
    run = config.run_config(config.n_values[0], 0)
    rows = []
    for rec in vd.simulate(run, ev):
        rows.append([rec.time, rec.hamiltonian, rec.energy,
                     rec.hminus_norms[2.0], rec.concentration[0.05],
                     rec.min_pair_distance,
                     rec.martingale[(1, 0)], rec.quadratic_variation[(1, 0)],
                     rec.modes[(1, 0)], rec.modes[(0, 1)],
                     config.n_values[0], config.realizations, config.seed,
                     harness.build_id()])
    harness._write_csv(Path(out_dir) / "records.csv",
                       ["time", "hamiltonian", "energy", "hminus2",
                        "concentration", "min_pair_distance", "M_10", "QV_10",
                        "mode_10", "mode_01", "N", "realizations", "seed",
                        "build"], rows)
    return True


def _maybe_plots(report, out_dir):
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("plots requested but matplotlib is not installed "
              "(pip install vortexmf[plots])", file=sys.stderr)
        return
    plots = Path(out_dir) / "plots"
    plots.mkdir(parents=True, exist_ok=True)
    ns_, rms = zip(*[(n, report.aggregated[n][0]) for n in report.config.n_values
                     if n in report.aggregated])
    fig, ax = plt.subplots()
    ax.loglog(ns_, rms, "o-")
    ax.set_xlabel("N")
    ax.set_ylabel("aggregated RMS mode error")
    fig.savefig(plots / "error_vs_n.svg")
    plt.close(fig)

    fig, ax = plt.subplots()
    for k in sorted(report.martingale_bound):
        vals = [report.martingale[(n, k)] for n in report.config.n_values
                if (n, k) in report.martingale]
        ax.loglog(ns_, vals, "o-", label=f"k={k}")
    ax.set_xlabel("N")
    ax.set_ylabel("E sup |M|^2")
    ax.legend()
    fig.savefig(plots / "martingale_vs_n.svg")
    plt.close(fig)

    fig, ax = plt.subplots()
    for n in report.config.n_values:
        hs = [report.hamiltonian_mean[(n, t)] for t in range(len(report.times))
              if (n, t) in report.hamiltonian_mean]
        if hs:
            ax.plot(report.times[:len(hs)], hs, "o-", label=f"N={n}")
    ax.set_xlabel("t")
    ax.set_ylabel("mean H_N")
    ax.legend()
    fig.savefig(plots / "hamiltonian_vs_t.svg")
    plt.close(fig)


def main(argv=None):
    parser = argparse.ArgumentParser(prog="vortexmf", description=__doc__)
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", type=Path, default=None)
    parser.add_argument("--out", type=Path, default=Path("vortexmf-out"))
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--plots", action="store_true")
    args = parser.parse_args(argv)

    kind = _KIND_OF.get(args.command)
    try:
        if args.config is not None:
            config = harness.load_config(args.config, kind=kind)
        else:
            config = harness.ExperimentConfig(kind=kind or "converge")
    except (OSError, ValueError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    if args.seed is not None:
        config = replace(config, seed=args.seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    harness.echo_config(config, out)

    ok = True
    if args.command == "validate-kernel":
        rows, ok = _check_rows(validate_kernel())
        harness._write_csv(out / "validate_kernel.csv",
                           ["check", "value", "threshold", "status"], rows)
    elif args.command == "validate-noise":
        rows, ok = _check_rows(validate_noise())
        harness._write_csv(out / "validate_noise.csv",
                           ["check", "value", "threshold", "status"], rows)
    elif args.command == "validate-ns":
        rows, ok = _check_rows(validate_ns())
        harness._write_csv(out / "validate_ns.csv",
                           ["check", "value", "threshold", "status"], rows)
    elif args.command == "simulate":
        ok = run_simulate(config, out)
    elif args.command == "converge":
        report = harness.run_convergence(config, threads=args.threads)
        harness.write_convergence_report(report, out)
        if args.plots:
            _maybe_plots(report, out)
    elif args.command == "martingale":
        table = harness.run_martingale_decay(config, threads=args.threads)
        harness.write_martingale_report(table, config, out)
    elif args.command == "hamiltonian":
        result = harness.run_hamiltonian_bound(config, threads=args.threads)
        harness.write_hamiltonian_report(result, config, out)
    elif args.command == "entropy":
        result = harness.run_entropy(config)
        harness.write_entropy_report(result, config, out)
    elif args.command == "moments":
        result = harness.run_moment_scan(config)
        harness.write_moment_report(result, config, out)

    for name in sorted(p.name for p in out.glob("*.csv")):
        print(f"wrote {out / name}")
    if not ok:
        print("validation FAILED", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
