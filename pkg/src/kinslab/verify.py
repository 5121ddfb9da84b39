"""One-command verification battery.

Seven suites of structural properties, each returning (name, ok, detail)
tuples.  These are not the acceptance tests -- they are a fast, in-process
cross-check of the same invariants, runnable from the CLI on any machine.
The `tamper` switch of the collision suite flips a sign inside the
entropy-production comparison; it exists as a negative control so a user
can watch the battery fail.
"""

from __future__ import annotations

import numpy as np

from .boundary import (apply_maxwell_bc, boundary_dissipation, boundary_flux,
                       boundary_projection, build_mesh, make_bc,
                       wall_face_values)
from .collision import (CollisionKernel, CrossSectionSpec, apply_collision,
                        assemble_kernel, collision_matrix, htheorem_quadratic,
                        spectral_gap, z_derivative_kernels)
from .config import (build_problem, default_config, initial_state,
                     resolve_config, sigma_spec, solver_config)
from .diagnostics import choose_eta, entropy_series, fit_decay, populate_ledger
from .errors import AssumptionError, ConfigError
from .kl import (CovarianceKernel, brownian_analytic, mercer_errors,
                 nystrom_eig, project_coeffs, sample_paths, truncate)
from .poisson import (cell_norm, face_grad, face_norm, h2_norm,
                      h2_regularity_constant, poincare_constant,
                      solve_poisson_neumann)
from .solver import (SolverConfig, collision_propagator, continuous_rhs,
                     dense_generator, equilibrium, one_step_residual, run,
                     validate_cfl)
from .uq import (build_source, fd_oracle, run_hierarchy,
                 verify_recursion_lemma)
from .velocity import build_grid, inner_dnu, norm_dnu, project_maxwellian

SUITES = ("collision", "bc", "poisson", "solver", "diagnostics", "uq", "kl")


def _check(name: str, ok: bool, detail: str = "") -> dict:
    return {"name": name, "ok": bool(ok), "detail": detail}


def _rand_f(rng, shape, grid):
    return rng.standard_normal(shape) * grid.m


# ---------------------------------------------------------------------------


def suite_collision(tamper: bool = False) -> list:
    grid = build_grid(1, 32, 8.0)
    spec = CrossSectionSpec(family="gaussian-bump", base=1.0,
                            bump_amplitude=0.4, bump_width=1.5)
    kern = assemble_kernel(spec, grid)
    rng = np.random.default_rng(11)
    out = []

    lm = float(norm_dnu(apply_collision(kern, grid.m), grid))
    out.append(_check("maxwellian_annihilated", lm <= 1e-13, f"|L M| = {lm:.2e}"))

    f = _rand_f(rng, grid.n, grid)
    mass = abs(float(np.sum(apply_collision(kern, f) * grid.weights)))
    out.append(_check("mass_annihilated", mass <= 1e-13, f"|<w, L f>| = {mass:.2e}"))

    g = _rand_f(rng, grid.n, grid)
    sym = abs(float(inner_dnu(apply_collision(kern, f), g, grid)
                    - inner_dnu(f, apply_collision(kern, g), grid)))
    out.append(_check("self_adjoint", sym <= 1e-12, f"defect = {sym:.2e}"))

    lhs = float(inner_dnu(apply_collision(kern, f), f, grid))
    rhs = htheorem_quadratic(kern, f)
    if tamper:
        rhs = -rhs
    rel = abs(lhs - rhs) / max(abs(lhs), 1e-300)
    out.append(_check("htheorem_identity", rel <= 1e-10, f"rel = {rel:.2e}"))

    lam = spectral_gap(kern)
    worst = np.inf
    for s in range(20):
        fs = _rand_f(np.random.default_rng(s), grid.n, grid)
        _, fp = project_maxwellian(fs, grid)
        p2 = float(norm_dnu(fp, grid)) ** 2
        diss = -float(inner_dnu(apply_collision(kern, fs), fs, grid))
        worst = min(worst, diss - lam * p2 * (1.0 - 1e-10))
    out.append(_check("coercivity_seeded", worst >= -1e-13,
                      f"min margin = {worst:.2e}"))

    unit = assemble_kernel(CrossSectionSpec(family="constant", base=1.0), grid)
    gap_err = abs(spectral_gap(unit) - 1.0)
    out.append(_check("unit_sigma_gap", gap_err <= 1e-10, f"|gap-1| = {gap_err:.2e}"))

    prop = collision_propagator(kern, 0.37)
    col = float(np.max(np.abs(prop.T @ grid.weights - grid.weights)))
    fix = float(norm_dnu(prop @ grid.m - grid.m, grid))
    out.append(_check("propagator_mass_and_fixed_point",
                      col <= 1e-14 and fix <= 1e-12,
                      f"col = {col:.2e}, |P M - M| = {fix:.2e}"))
    return out


def suite_bc() -> list:
    grid = build_grid(1, 32, 8.0)
    rng = np.random.default_rng(5)
    out = []
    worst_flux = 0.0
    for c in (0.0, 0.5, 1.0):
        bc = make_bc(grid, c)
        for wall in ("left", "right"):
            for _ in range(5):
                f = np.abs(_rand_f(rng, grid.n, grid)) + 0.1 * grid.m
                worst_flux = max(worst_flux,
                                 abs(boundary_flux(bc, wall, f))
                                 / float(norm_dnu(f, grid)))
    out.append(_check("wall_flux_zero", worst_flux <= 1e-13,
                      f"max |flux|/|f| = {worst_flux:.2e}"))

    bc1 = make_bc(grid, 1.0)
    f = np.abs(_rand_f(rng, grid.n, grid)) + 0.1 * grid.m
    face = wall_face_values(bc1, "left", f)
    spec_gap = float(np.max(np.abs(np.where(
        bc1.wall("left").in_mask, face - f[grid.flip_v1], 0.0))))
    out.append(_check("specular_reversal", spec_gap <= 1e-14,
                      f"max gap = {spec_gap:.2e}"))

    bc0 = make_bc(grid, 0.0)
    inc = apply_maxwell_bc(bc0, "left", f)
    mask = bc0.wall("left").in_mask
    ratios = inc[mask] / grid.m[mask]
    dif = float(np.max(np.abs(ratios - ratios[0])))
    out.append(_check("diffuse_maxwellian_shape", dif <= 1e-12 * abs(ratios[0]),
                      f"ratio spread = {dif:.2e}"))

    bc = make_bc(grid, 0.5)
    h = rng.standard_normal(grid.n)
    p1 = boundary_projection(bc, "right", h)
    p2 = boundary_projection(bc, "right", p1)
    idem = float(np.max(np.abs(p2 - p1)))
    out.append(_check("projection_idempotent", idem <= 1e-12, f"|P^2-P|h = {idem:.2e}"))

    g2 = rng.standard_normal(grid.n)
    wd = bc.wall("right")
    ip = lambda a, b: float(np.sum((a * b * wd.normal_speed * grid.weights)[wd.out_mask]))
    sa = abs(ip(boundary_projection(bc, "right", h), g2)
             - ip(h, boundary_projection(bc, "right", g2)))
    out.append(_check("projection_self_adjoint", sa <= 1e-12, f"defect = {sa:.2e}"))

    d_half = boundary_dissipation(bc, "left", f)
    d_spec = boundary_dissipation(bc1, "left", f)
    out.append(_check("dissipation_sign_and_specular_zero",
                      d_half >= -1e-15 and abs(d_spec) <= 1e-15,
                      f"d(c=.5) = {d_half:.2e}, d(c=1) = {d_spec:.2e}"))
    return out


def suite_poisson() -> list:
    mesh = build_mesh(64, 1.0)
    rng = np.random.default_rng(3)
    rho = rng.standard_normal(mesh.nx)
    fld = solve_poisson_neumann(rho, mesh)
    out = []

    lap = -np.diff(fld.grad_faces) / mesh.dx
    res = float(np.max(np.abs(lap - (rho - rho.mean()))))
    out.append(_check("laplace_residual", res <= 1e-11, f"max = {res:.2e}"))

    out.append(_check("wall_gradient_zero",
                      fld.grad_faces[0] == 0.0 and fld.grad_faces[-1] == 0.0,
                      f"({fld.grad_faces[0]}, {fld.grad_faces[-1]})"))

    mean = abs(float(np.sum(fld.phi) * mesh.dx))
    out.append(_check("zero_mean_potential", mean <= 1e-12, f"|mean| = {mean:.2e}"))

    cp = poincare_constant(mesh)
    worst = -np.inf
    for s in range(20):
        r = np.random.default_rng(s).standard_normal(mesh.nx)
        fl = solve_poisson_neumann(r, mesh)
        worst = max(worst, cell_norm(fl.phi, mesh)
                    - cp * face_norm(fl.grad_faces, mesh) * (1.0 + 1e-12))
    out.append(_check("poincare_on_probes", worst <= 1e-13,
                      f"max violation = {worst:.2e}"))

    kh = h2_regularity_constant(mesh)
    probe = np.cos(np.pi * mesh.centers / mesh.lx)
    fl = solve_poisson_neumann(probe, mesh)
    ratio = h2_norm(fl, mesh) / cell_norm(probe - probe.mean(), mesh)
    att = abs(ratio - kh) / kh
    out.append(_check("k1_mode_attains_K_h", att <= 1e-10, f"rel gap = {att:.2e}"))

    e2 = face_norm(fld.grad_faces, mesh) ** 2
    pair = float(np.sum(fld.phi * (rho - rho.mean())) * mesh.dx)
    iden = abs(e2 - pair) / max(e2, 1e-300)
    out.append(_check("energy_identity", iden <= 1e-11, f"rel = {iden:.2e}"))
    return out


def _small_problem(c=0.5, nx=16, n=16, potential=None):
    cfg = default_config()
    cfg["mesh"]["nx"] = nx
    cfg["velocity"]["n"] = n
    cfg["bc"]["c"] = c
    if potential:
        cfg["potential"] = dict(potential)
    return cfg, build_problem(cfg)


def suite_solver() -> list:
    cfg, prob = _small_problem()
    scfg = SolverConfig(dt=0.005, t_end=0.5, cadence=10)
    out = []

    f0 = initial_state(prob, cfg)
    res = run(prob, scfg, f0)
    out.append(_check("mass_conserved", res.mass_drift_max <= 1e-12,
                      f"drift = {res.mass_drift_max:.2e}"))

    r = one_step_residual(prob, scfg)
    out.append(_check("equilibrium_fixed_point", r <= 1e-12, f"residual = {r:.2e}"))

    try:
        validate_cfl(prob, SolverConfig(dt=10.0, t_end=10.0))
        out.append(_check("cfl_rejects_large_dt", False, "no error raised"))
    except ConfigError as exc:
        out.append(_check("cfl_rejects_large_dt", True, str(exc)[:60]))

    A = dense_generator(prob)
    rng = np.random.default_rng(2)
    f = rng.standard_normal((prob.mesh.nx, prob.grid.n)) * prob.grid.m
    lhs = (A @ f.reshape(-1)).reshape(f.shape)
    rhs = continuous_rhs(f, prob)
    rel = float(np.max(np.abs(lhs - rhs)) / np.max(np.abs(rhs)))
    out.append(_check("generator_matches_rhs", rel <= 1e-10, f"rel = {rel:.2e}"))

    L = collision_matrix(prob.kernel)
    lam, vec = np.linalg.eig(L)
    w = prob.grid.weights
    massless = [lam[i].real for i in range(lam.size)
                if abs(w @ vec[:, i].real) + abs(w @ vec[:, i].imag)
                < 1e-8 * np.abs(vec[:, i]).sum()]
    tau_c = -max(massless)
    gap = spectral_gap(prob.kernel)
    out.append(_check("pure_collision_rate", abs(tau_c - gap) <= 1e-8,
                      f"|tau - gap| = {abs(tau_c - gap):.2e}"))

    out.append(_check("monotone_decay", res.monotone_defect_max <= 1e-8,
                      f"defect = {res.monotone_defect_max:.2e}"))
    return out


def suite_diagnostics() -> list:
    cfg, prob = _small_problem()
    scfg = SolverConfig(dt=0.005, t_end=2.0, cadence=20)
    res = run(prob, scfg, initial_state(prob, cfg))
    led = choose_eta(populate_ledger(prob.grid, prob.mesh, prob.kernel), c=0.5)
    reports = entropy_series(res, prob, led)
    out = []

    live = reports[1:]
    out.append(_check("t3_identity", all(r.flags["t3_identity"] for r in live),
                      f"{len(live)} records"))
    out.append(_check("norm_equivalence", all(r.equivalence_ok for r in reports),
                      f"{len(reports)} records"))
    out.append(_check("gronwall", all(r.flags["gronwall"] for r in live),
                      f"{len(live)} records"))
    tb = all(r.flags[k] for r in live
             for k in ("t1", "t2_cs", "t2_moment", "t2_reg", "t2_young",
                       "t2_boundary", "t4", "t5"))
    out.append(_check("term_bounds", tb, "T1/T2/T4/T5 chains"))

    ok_eta = True
    detail = []
    for c in (0.0, 0.25, 0.5, 0.75, 1.0):
        try:
            l2 = choose_eta(populate_ledger(prob.grid, prob.mesh, prob.kernel), c=c)
            ok_eta &= l2.omega > 0 and l2.c_eta > 0
            detail.append(f"c={c}: omega={l2.omega:.3g}")
        except ConfigError as exc:
            ok_eta = False
            detail.append(f"c={c}: {exc}")
    out.append(_check("eta_selection_battery", ok_eta, "; ".join(detail[:2])))

    ts = np.linspace(0.0, 4.0, 60)
    fit = fit_decay(ts, 3.0 * np.exp(-1.7 * ts))
    out.append(_check("fit_recovers_synthetic_rate",
                      abs(fit.tau - 1.7) <= 1e-10 and fit.r2 >= 1.0 - 1e-12,
                      f"tau = {fit.tau:.12g}, r2 = {fit.r2:.12g}"))
    return out


def suite_uq() -> list:
    cfg, prob = _small_problem()
    cfg["sigma"]["z_coupling"] = "affine"
    spec_none = sigma_spec(default_config())
    spec_aff = sigma_spec(cfg)
    scfg = SolverConfig(dt=0.005, t_end=0.3, cadence=10)
    out = []

    g0 = np.zeros((3, prob.mesh.nx, prob.grid.n))
    g0[0] = initial_state(prob, cfg)
    h_none = run_hierarchy(prob, spec_none, scfg, g0)
    upper = float(np.abs(h_none.final.g[1:]).max())
    out.append(_check("uncoupled_levels_stay_zero", upper <= 1e-13,
                      f"max = {upper:.2e}"))

    rng = np.random.default_rng(9)
    levels = rng.standard_normal((3, prob.mesh.nx, prob.grid.n)) * prob.grid.m
    dzk = z_derivative_kernels(spec_aff, prob.grid, 0.0, 2)
    src = build_source(2, dzk, levels, prob.grid)
    m = float(np.max(np.abs((src @ prob.grid.weights))))
    out.append(_check("source_mass_zero", m <= 1e-13 * np.abs(levels).max(),
                      f"max cell mass = {m:.2e}"))

    hj = run_hierarchy(prob, spec_aff, scfg, g0, mode="jet")
    he = run_hierarchy(prob, spec_aff, scfg, g0, mode="explicit")
    base = float(np.abs(hj.final.g[1]).max())
    gap = float(np.abs(hj.final.g[1] - he.final.g[1]).max()) / max(base, 1e-300)
    # the modes differ at O(dt) (Euler transport inner step); ~2% at dt=5e-3
    out.append(_check("jet_vs_explicit_modes", gap <= 5e-2, f"rel gap = {gap:.2e}"))

    prob_b = build_problem(cfg)
    series = fd_oracle(lambda z: build_problem(cfg, z),
                       lambda p, z: initial_state(p, cfg, z), scfg, 0.0, 0, 0.01)
    base_run = run(prob_b, scfg, initial_state(prob_b, cfg, 0.0))
    bit = all(np.array_equal(series[i][1], base_run.records[i].f)
              for i in range(len(series)))
    out.append(_check("fd_level0_bitwise", bit, f"{len(series)} records"))

    rng = np.random.default_rng(21)
    ok_lemma = True
    for _ in range(10):
        lmax = int(rng.integers(1, 5))
        a = float(rng.uniform(0.1, 2.0))
        b = np.tril(rng.uniform(0.2, 2.0, (lmax + 1, lmax + 1)), -1)
        h0 = rng.uniform(0.1, 1.5, lmax + 1)
        damp = np.tril(rng.uniform(0.0, 1.0, (lmax + 1, lmax + 1)), -1)
        rep = verify_recursion_lemma(a, b, h0, t_end=2.0, damping=damp)
        ok_lemma &= rep["ok"] and rep["series_gap"] <= 1e-9
    out.append(_check("recursion_lemma_randomized", ok_lemma, "10 instances"))

    g0b = np.array(g0)
    g0b[2] += rng.standard_normal(g0[2].shape) * prob.grid.m
    hb = run_hierarchy(prob, spec_aff, scfg, g0b, mode="jet")
    tri = (np.array_equal(hb.final.g[0], hj.final.g[0])
           and np.array_equal(hb.final.g[1], hj.final.g[1]))
    out.append(_check("triangular_independence", tri,
                      "levels 0,1 unchanged by level-2 data"))
    return out


def suite_kl() -> list:
    kern = CovarianceKernel(family="brownian", T=1.0)
    basis = truncate(nystrom_eig(kern, 256), 0.95)
    lam_an, psi_an = brownian_analytic(5, basis.tgrid)
    out = []

    rel = np.abs(basis.eigenvalues[:5] - lam_an) / lam_an
    out.append(_check("brownian_eigenvalues_1pct", float(rel.max()) <= 1e-2,
                      f"max rel = {rel.max():.2e}"))

    gram = (basis.psi[:, :8].T * basis.weights) @ basis.psi[:, :8]
    dev = float(np.max(np.abs(gram - np.eye(8))))
    out.append(_check("weight_orthonormal", dev <= 1e-10, f"max dev = {dev:.2e}"))

    paths = sample_paths(basis, 50, seed=4)
    coeffs = project_coeffs(paths, basis)
    # regenerate the same coefficients to compare round trip
    from .kl import sample_coeffs
    orig = sample_coeffs(basis, 50, seed=4)
    rt = float(np.max(np.abs(coeffs - orig)))
    out.append(_check("roundtrip_projection", rt <= 1e-10, f"max = {rt:.2e}"))

    full = nystrom_eig(kern, 512)
    d95 = truncate(full, 0.95).d
    out.append(_check("energy_truncation_order", d95 == 5, f"d = {d95}"))

    mer = mercer_errors(basis, kern)
    out.append(_check("mercer_diagonal_monotone", mer["monotone"],
                      f"{mer['errors'].shape} error table"))

    t = np.linspace(0, 1, 16)
    tab = np.cos(3 * np.outer(t, t)) - 0.8 * np.eye(16)
    try:
        nystrom_eig(CovarianceKernel(family="table", T=1.0, table=(tab + tab.T) / 2), 16)
        out.append(_check("indefinite_kernel_rejected", False, "no error"))
    except AssumptionError as exc:
        out.append(_check("indefinite_kernel_rejected", True, str(exc)[:50]))

    expo = nystrom_eig(CovarianceKernel(family="exponential", T=1.0, ell=0.3), 64)
    pos = bool(np.all(expo.eigenvalues > 0)) and bool(
        np.all(np.diff(expo.eigenvalues) <= 1e-15))
    out.append(_check("exponential_spectrum_positive_decreasing", pos,
                      f"min = {expo.eigenvalues.min():.2e}"))
    return out


def run_suite(name: str, tamper: bool = False) -> list:
    table = {"collision": lambda: suite_collision(tamper), "bc": suite_bc,
             "poisson": suite_poisson, "solver": suite_solver,
             "diagnostics": suite_diagnostics, "uq": suite_uq, "kl": suite_kl}
    if name not in table:
        raise ConfigError([f"unknown suite {name!r}; choose from {SUITES}"])
    return table[name]()


def verify_all(names=None, tamper: bool = False) -> dict:
    names = SUITES if names is None else names
    return {name: run_suite(name, tamper=tamper) for name in names}
