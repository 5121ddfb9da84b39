"""Command-line entry points.

Subcommands: run (base/potential decay run with full entropy accounting),
uq (sensitivity hierarchy), kl (covariance eigenexpansion), gap (spectral
numbers), poisson-check (field-solver battery on the configured mesh), and
verify (property suites).  Every report path writes delimited output plus
rendered PNG figures into the output directory; all files are atomic and
byte-deterministic for a fixed config and seed.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import output
from .config import (build_problem, default_config, dump_config, initial_jets,
                     initial_state, kl_kernel, load_config, resolve_config,
                     sigma_spec, solver_config)
from .diagnostics import (choose_eta, entropy_series, fit_decay,
                          populate_ledger)
from .errors import AssumptionError, CompatibilityError, ConfigError, NumericalError
from .kl import (brownian_analytic, mercer_errors, nystrom_eig, path_variance,
                 truncate, verify_orthogonality)
from .poisson import (cell_norm, face_norm, grad_trace_constant,
                      h2_regularity_constant, poincare_constant,
                      solve_poisson_neumann)
from .collision import spectral_gap
from .solver import decay_rate_oracle, dense_generator, run
from .uq import (assemble_uq_entropy_terms, fd_oracle, fit_envelope,
                 hierarchy_constants, run_hierarchy)
from .verify import SUITES, verify_all


def _load(args) -> dict:
    if getattr(args, "config", None):
        return load_config(args.config)
    return resolve_config(None)


def _ledger_for(problem, cfg):
    led = populate_ledger(problem.grid, problem.mesh, problem.kernel,
                          problem.potential, cfg["diagnostics"]["n_probes"])
    return choose_eta(led, cfg["bc"]["c"])


def _fit_window(cfg: dict) -> tuple:
    t_end = cfg["solver"]["t_end"]
    t0 = cfg["diagnostics"]["fit_t0"]
    t1 = min(cfg["diagnostics"]["fit_t1"], t_end)
    if t0 >= t1:
        t0 = 0.0
    return (t0, t1)


def cmd_run(args) -> int:
    cfg = _load(args)
    outdir = args.out or cfg["output_dir"]
    problem = build_problem(cfg)
    ledger = _ledger_for(problem, cfg)
    # the resolved config and the constants ledger land before the time loop
    output.write_text(os.path.join(outdir, "config.echo"), dump_config(cfg))
    output.write_json(os.path.join(outdir, "ledger.json"), ledger.to_dict())

    scfg = solver_config(cfg)
    result = run(problem, scfg, initial_state(problem, cfg))
    reports = entropy_series(result, problem, ledger)

    ts = np.array([r.t for r in reports])
    window = _fit_window(cfg)
    frac = cfg["diagnostics"]["transient_frac"]
    fit_n = fit_decay(ts, [r.dist2 for r in reports], window, frac)
    fit_h = fit_decay(ts, [r.H for r in reports], window, frac)

    flag_fails = {}
    for r in reports[1:]:
        for key, ok in r.flags.items():
            if not ok:
                flag_fails[key] = flag_fails.get(key, 0) + 1
    equivalence_fails = sum(0 if r.equivalence_ok else 1 for r in reports)

    summary = {
        "scenario": ledger.scenario,
        "records": len(reports),
        "mass_drift_max": result.mass_drift_max,
        "wall_flux_max": result.wall_flux_max,
        "monotone_defect_max": result.monotone_defect_max,
        "equilibrium_residual": result.equilibrium_residual,
        "rate_norm_fitted": fit_n.tau / 2.0,
        "rate_H_fitted": fit_h.tau / 2.0,
        "fit_r2": {"norm": fit_n.r2, "H": fit_h.r2},
        "fit_window": list(window),
        "certified": {"omega": ledger.omega,
                      "norm_rate": ledger.omega / (2.0 * ledger.C_eta)},
        "inequality_failures": flag_fails,
        "equivalence_failures": equivalence_fails,
    }
    output.write_csv(os.path.join(outdir, "steps.csv"),
                     list(reports[0].CSV_COLUMNS), [r.csv_row() for r in reports])
    output.write_json(os.path.join(outdir, "summary.json"), summary)
    figs = output.render_run_figures(outdir, reports, ledger)
    print(f"run: {len(reports)} records -> {outdir}")
    print(f"  fitted norm rate {fit_n.tau / 2.0:.6g} (r2 {fit_n.r2:.6f}); "
          f"certified {ledger.omega / (2.0 * ledger.C_eta):.6g}")
    print(f"  mass drift {result.mass_drift_max:.3e}, "
          f"wall flux {result.wall_flux_max:.3e}")
    bad = sum(flag_fails.values()) + equivalence_fails
    print(f"  inequality checks: {'all hold' if bad == 0 else f'{bad} failures'}")
    print(f"  figures: {', '.join(os.path.basename(p) for p in figs)}")
    return 0


def cmd_uq(args) -> int:
    cfg = _load(args)
    if args.lmax is not None:
        cfg["uq"]["lmax"] = args.lmax
    if args.z is not None:
        cfg["uq"]["z"] = args.z
    cfg = resolve_config(cfg)
    outdir = args.out or cfg["output_dir"]
    lmax, z = cfg["uq"]["lmax"], cfg["uq"]["z"]

    problem = build_problem(cfg)
    spec = sigma_spec(cfg)
    scfg = solver_config(cfg)
    g0 = initial_jets(problem, cfg, lmax)
    hier = run_hierarchy(problem, spec, scfg, g0, z=z, mode=cfg["uq"]["mode"])

    ts = np.array([r.t for r in hier.records])
    norms = np.array([r.norms for r in hier.records])
    fits = []
    for lev in range(lmax + 1):
        if norms[:, lev].max() <= 1e-300:
            fits.append(None)
        else:
            fits.append(fit_envelope(ts, norms[:, lev], degree=lev))

    ledger = _ledger_for(problem, cfg)
    from .collision import z_derivative_kernels
    dzk = z_derivative_kernels(spec, problem.grid, z, lmax) if lmax else []
    consts = hierarchy_constants(ledger, dzk, problem.grid)
    terms = assemble_uq_entropy_terms(hier, problem, ledger, dzk)

    fd_gap = None
    if args.fd_check is not None and lmax >= 1:
        series = fd_oracle(lambda zz: build_problem(cfg, zz),
                           lambda p, zz: initial_state(p, cfg, zz),
                           scfg, z, 1, args.fd_check)
        t_fd, g1_fd = series[-1]
        g1 = hier.final.g[1]
        inv_m = problem.grid.weights / problem.grid.m
        dx = problem.mesh.dx
        nrm = lambda a: float(np.sqrt(np.sum((a * a) @ inv_m) * dx))
        fd_gap = nrm(g1_fd - g1) / max(nrm(g1), 1e-300)

    output.write_text(os.path.join(outdir, "config.echo"), dump_config(cfg))
    header = ["t"] + [f"norm_{l}" for l in range(lmax + 1)] \
        + [f"mass_{l}" for l in range(lmax + 1)]
    rows = [[r.t, *r.norms.tolist(), *r.masses.tolist()] for r in hier.records]
    output.write_csv(os.path.join(outdir, "uq_levels.csv"), header, rows)
    summary = {
        "mode": hier.mode, "lmax": lmax, "z": z,
        "mass_drift_max": hier.mass_drift_max,
        "envelopes": [None if f is None else
                      {"a_fit": f.a_fit, "coeffs": f.coeffs, "rms": f.rms}
                      for f in fits],
        "constants": consts,
        "entropy_flags": terms["flags"],
        "fd_gap_level1": fd_gap,
        "fd_delta": args.fd_check,
    }
    output.write_json(os.path.join(outdir, "uq_summary.json"), summary)
    figs = output.render_uq_figures(outdir, hier.records, fits)
    print(f"uq: lmax={lmax} z={z} mode={hier.mode} -> {outdir}")
    for lev, f in enumerate(fits):
        if f is None:
            print(f"  level {lev}: identically zero")
        else:
            print(f"  level {lev}: envelope rate {f.a_fit:.4g}, rms {f.rms:.3e}")
    if fd_gap is not None:
        print(f"  fd check (delta={args.fd_check}): level-1 relative gap {fd_gap:.3e}")
    print(f"  flags: {terms['flags']}")
    print(f"  figures: {', '.join(os.path.basename(p) for p in figs)}")
    return 0


def cmd_kl(args) -> int:
    cfg = _load(args)
    k = cfg["kl"]
    if args.kernel:
        k["kernel"] = args.kernel
    if args.n:
        k["n"] = args.n
    if args.energy:
        k["energy"] = args.energy
    if args.samples:
        k["samples"] = args.samples
    if args.ell:
        k["ell"] = args.ell
    seed = args.seed if args.seed is not None else cfg["seed"]
    cfg = resolve_config(cfg)
    outdir = args.out or cfg["output_dir"]

    kern = kl_kernel(cfg)
    basis = truncate(nystrom_eig(kern, k["n"]), k["energy"])
    report = verify_orthogonality(basis, k["samples"], seed)
    var = path_variance(basis, k["samples"], seed)
    t_last = basis.n - 1
    var_target = float(np.sum(np.clip(basis.eigenvalues[:basis.d], 0, None)
                              * basis.psi[t_last, :basis.d] ** 2))
    var_dev = abs(var[t_last] - var_target) / max(var_target, 1e-300)
    mer = mercer_errors(basis, kern)

    analytic = None
    if k["kernel"] == "brownian":
        analytic = brownian_analytic(min(basis.n, 32), basis.tgrid)[0]
    lam = basis.eigenvalues
    cum = np.cumsum(np.clip(lam, 0, None)) / np.clip(lam, 0, None).sum()
    rows = []
    for i in range(basis.n):
        row = [i + 1, lam[i], cum[i]]
        if analytic is not None:
            row.append(analytic[i] if i < analytic.size else float("nan"))
        rows.append(row)
    header = ["k", "lambda", "cumulative_fraction"] + \
        (["analytic"] if analytic is not None else [])
    output.write_csv(os.path.join(outdir, "kl_eigenvalues.csv"), header, rows)

    n_show = min(basis.d, 8)
    mode_rows = [[basis.tgrid[i], *basis.psi[i, :n_show].tolist()]
                 for i in range(basis.n)]
    output.write_csv(os.path.join(outdir, "kl_modes.csv"),
                     ["t"] + [f"psi_{j + 1}" for j in range(n_show)], mode_rows)
    output.write_json(os.path.join(outdir, "kl_gram.json"), {
        "kernel": k["kernel"], "n": k["n"], "energy": k["energy"],
        "d": basis.d, "captured": basis.captured, "seed": seed,
        "gram": report["gram"], "max_offdiag": report["max_offdiag"],
        "offdiag_limit": report["offdiag_limit"],
        "offdiag_ok": report["offdiag_ok"], "diag_ok": report["diag_ok"],
        "var_check": {"target": var_target, "empirical": float(var[t_last]),
                      "rel_dev": var_dev},
        "mercer_monotone": mer["monotone"],
    })
    figs = output.render_kl_figures(outdir, basis, analytic)
    print(f"kl: {k['kernel']} n={k['n']} -> d={basis.d} "
          f"(captured {basis.captured:.4f}) -> {outdir}")
    print(f"  gram off-diag max {report['max_offdiag']:.4f} "
          f"(limit {report['offdiag_limit']:.4f}), diag ok: {report['diag_ok']}")
    print(f"  var at T: rel dev {var_dev:.3e}; mercer monotone: {mer['monotone']}")
    print(f"  figures: {', '.join(os.path.basename(p) for p in figs)}")
    return 0


def cmd_gap(args) -> int:
    cfg = _load(args)
    problem = build_problem(cfg)
    lam_h = spectral_gap(problem.kernel)
    print(f"collision spectral gap lambda_h = {lam_h!r}")
    print(f"configured lower bound        = {problem.kernel.lambda_bound!r}")
    dof = problem.mesh.nx * problem.grid.n
    if dof <= 8192:
        A = dense_generator(problem)
        tau = decay_rate_oracle(A, problem)
        print(f"full-generator decay rate tau_h = {tau!r}  (dof {dof})")
        print(f"ordering: 0 < tau_h {'<=' if tau <= lam_h else '>'} lambda_h")
    else:
        print(f"dof {dof} > 8192: dense oracle skipped")
    return 0


def cmd_poisson_check(args) -> int:
    cfg = _load(args)
    from .boundary import build_mesh
    mesh = build_mesh(cfg["mesh"]["nx"], cfg["mesh"]["lx"])
    rng = np.random.default_rng(cfg["seed"])
    checks = []
    rho = rng.standard_normal(mesh.nx)
    fld = solve_poisson_neumann(rho, mesh)
    lap = -np.diff(fld.grad_faces) / mesh.dx
    res = float(np.max(np.abs(lap - (rho - rho.mean()))))
    checks.append(("laplace_residual", res <= 1e-10, f"{res:.2e}"))
    checks.append(("wall_gradient_zero",
                   fld.grad_faces[0] == 0.0 and fld.grad_faces[-1] == 0.0, "exact"))
    cp = poincare_constant(mesh)
    ok_p = cell_norm(fld.phi, mesh) <= cp * face_norm(fld.grad_faces, mesh) * (1 + 1e-12)
    checks.append(("poincare", ok_p, f"C_p,h = {cp!r}"))
    kh = float(h2_regularity_constant(mesh, cfg["diagnostics"]["n_probes"]))
    dg = float(grad_trace_constant(mesh, cfg["diagnostics"]["n_probes"]))
    checks.append(("regularity_constant", np.isfinite(kh), f"K_h = {kh!r}"))
    checks.append(("trace_constant", np.isfinite(dg), f"D_gamma,h = {dg!r}"))
    failures = 0
    for name, ok, detail in checks:
        print(f"[{'ok' if ok else 'FAIL'}] poisson.{name}: {detail}")
        failures += 0 if ok else 1
    return 1 if failures else 0


def cmd_verify(args) -> int:
    names = SUITES if not args.suite or "all" in args.suite else args.suite
    results = verify_all(names, tamper=args.tamper)
    failures = 0
    for suite, checks in results.items():
        for c in checks:
            mark = "ok" if c["ok"] else "FAIL"
            detail = f": {c['detail']}" if c["detail"] else ""
            print(f"[{mark}] {suite}.{c['name']}{detail}")
            failures += 0 if c["ok"] else 1
    total = sum(len(v) for v in results.values())
    print(f"{total - failures}/{total} properties hold")
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="kinslab",
        description="slab kinetic solver with certified-decay diagnostics")
    sub = p.add_subparsers(dest="cmd", required=True)

    pr = sub.add_parser("run", help="time integration with entropy accounting")
    pr.add_argument("--config", help="YAML config path (defaults used if omitted)")
    pr.add_argument("--out", help="output directory override")
    pr.set_defaults(fn=cmd_run)

    pu = sub.add_parser("uq", help="parameter-sensitivity hierarchy")
    pu.add_argument("--config")
    pu.add_argument("--lmax", type=int, default=None)
    pu.add_argument("--z", type=float, default=None)
    pu.add_argument("--fd-check", type=float, default=None, metavar="DELTA",
                    help="run the central-difference oracle at this step")
    pu.add_argument("--out")
    pu.set_defaults(fn=cmd_uq)

    pk = sub.add_parser("kl", help="covariance eigenexpansion and sampling")
    pk.add_argument("--config")
    pk.add_argument("--kernel", choices=("brownian", "exponential"))
    pk.add_argument("--n", type=int)
    pk.add_argument("--energy", type=float)
    pk.add_argument("--samples", type=int)
    pk.add_argument("--ell", type=float)
    pk.add_argument("--seed", type=int, default=None)
    pk.add_argument("--out")
    pk.set_defaults(fn=cmd_kl)

    pg = sub.add_parser("gap", help="spectral gap and dense decay oracle")
    pg.add_argument("--config")
    pg.set_defaults(fn=cmd_gap)

    pp = sub.add_parser("poisson-check", help="field-solver battery")
    pp.add_argument("--config")
    pp.set_defaults(fn=cmd_poisson_check)

    pv = sub.add_parser("verify", help="property suites")
    pv.add_argument("--suite", action="append",
                    choices=SUITES + ("all",), default=None)
    pv.add_argument("--tamper", action="store_true", help=argparse.SUPPRESS)
    pv.set_defaults(fn=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return 2
    except (AssumptionError, CompatibilityError, NumericalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
