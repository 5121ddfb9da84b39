"""Sensitivity hierarchy in a scalar random parameter z.

The levels g^l = d^l f / dz^l satisfy the same kinetic equation with the
same Maxwell walls, plus a lower-triangular source
S^l = sum_{k<l} binom(l,k) L_z^{l-k}(g^k) built from z-derivatives of the
cross-section.  Two co-evolution modes:

* "jet" (default): the collision half-steps use the exact z-derivatives of
  the level-0 collision propagator, obtained from one matrix exponential of
  the block-Toeplitz jet generator.  Transport and the walls do not depend
  on z, so the computed levels are the exact z-jet of the discrete base
  scheme -- a central-difference probe of the base solver converges to
  level l at O(delta_z^2) with no splitting floor.
* "explicit": literal source placement dt * S^l at the transport-stage
  midpoint (C T/2 +dtS T/2 C), second-order like the base splitting.

Level 0 of the jet mode is bitwise the base stepper.  Both modes conserve
each level's mass exactly: the jet blocks inherit the rank-one column-sum
repair of the base propagator (the repair map is affine, so its
z-derivatives correct the derivative blocks), and sources carry zero mass.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm
from scipy.optimize import minimize_scalar

from .collision import (CollisionKernel, apply_sigma, collision_matrix,
                        kernel_matrix, momentum_exchange_constant,
                        operator_norm, z_derivative_kernels)
from .errors import ConfigError, NumericalError
from .parallel import map_ordered
from .poisson import solve_poisson_neumann
from .solver import (Problem, SolverConfig, collision_propagator, equilibrium,
                     run, transport_step, validate_cfl)
from .velocity import moments

MAX_LEVELS = 4


# ---------------------------------------------------------------------------
# sources and jet propagators


def build_source(l: int, dz_kernels: list, levels: np.ndarray, grid) -> np.ndarray:
    """S^l = sum_{k=0}^{l-1} binom(l,k) L_z^{l-k}(g^k); zero array for l = 0."""
    if l == 0:
        return np.zeros_like(levels[0])
    if len(dz_kernels) < l:
        raise ConfigError([f"source order {l} needs {l} derivative kernels, "
                           f"got {len(dz_kernels)}"])
    out = np.zeros_like(levels[0])
    for k in range(l):
        j = l - k
        dsig = dz_kernels[j - 1]
        if np.any(dsig):
            out += math.comb(l, k) * apply_sigma(dsig, grid, levels[k])
    return out


def jet_propagators(kernel: CollisionKernel, dz_kernels: list, dt: float,
                    lmax: int) -> list:
    """Blocks T_j = (d^j/dz^j exp(dt L_z)) / j!, column-sum repaired.

    One expm of the (lmax+1)n block-Toeplitz generator with blocks
    L^(j)/j!; the first block column of the result is (T_0 .. T_lmax).
    T_0 is replaced by the cached level-0 propagator for bitwise parity
    with the base stepper.  The cache key fingerprints the derivative
    kernels, which are supplied per call.
    """
    digest = hashlib.sha1(
        b"".join(np.ascontiguousarray(ds).tobytes()
                 for ds in dz_kernels[:lmax])).hexdigest()
    key = ("jet", float(dt), int(lmax), digest)
    if key in kernel._prop_cache:
        return kernel._prop_cache[key]
    g = kernel.grid
    n = g.n
    big = np.zeros(((lmax + 1) * n, (lmax + 1) * n))
    l0 = collision_matrix(kernel)
    dmats = [kernel_matrix(ds, g) for ds in dz_kernels[:lmax]]
    for r in range(lmax + 1):
        big[r * n:(r + 1) * n, r * n:(r + 1) * n] = l0
        for c in range(r):
            j = r - c
            big[r * n:(r + 1) * n, c * n:(c + 1) * n] = dmats[j - 1] / math.factorial(j)
    ebig = expm(dt * big)
    blocks = []
    w, m = g.weights, g.m
    for j in range(lmax + 1):
        tj = np.array(ebig[j * n:(j + 1) * n, 0:n])
        target = w if j == 0 else np.zeros(n)
        tj += np.outer(m, target - tj.T @ w)
        blocks.append(tj)
    blocks[0] = collision_propagator(kernel, dt)
    kernel._prop_cache[key] = blocks
    return blocks


def _jet_collision(g: np.ndarray, blocks: list) -> np.ndarray:
    """g_new^m = sum_b binom(m,b) (m-b)! g^b @ T_{m-b}^T (triangular update)."""
    lmax = g.shape[0] - 1
    out = np.empty_like(g)
    for mlev in range(lmax + 1):
        acc = g[mlev] @ blocks[0].T
        for b in range(mlev):
            coeff = math.comb(mlev, b) * math.factorial(mlev - b)
            acc += coeff * (g[b] @ blocks[mlev - b].T)
        out[mlev] = acc
    return out


# ---------------------------------------------------------------------------
# hierarchy evolution


@dataclass
class HierarchyRecord:
    t: float
    g: np.ndarray            # (lmax+1, nx, n)
    masses: np.ndarray       # per-level total mass
    norms: np.ndarray        # per-level ||g^l - m_l eq|| in dx dnu; the
                             # invariant (mass-carrying) component is removed
                             # so the decay estimates apply level by level


@dataclass
class HierarchyResult:
    records: list
    final: HierarchyRecord
    mass_drift_max: float    # relative to (1 + |mass0|) per level
    mode: str


def _level_mass(g: np.ndarray, problem: Problem) -> np.ndarray:
    return (g @ problem.grid.weights).sum(axis=1) * problem.mesh.dx


def _level_norms(g: np.ndarray, problem: Problem) -> np.ndarray:
    inv_m = problem.grid.weights / problem.grid.m
    return np.sqrt(((g * g) @ inv_m).sum(axis=1) * problem.mesh.dx)


def run_hierarchy(problem: Problem, spec, cfg: SolverConfig, g0: np.ndarray,
                  z: float = 0.0, mode: str = "jet") -> HierarchyResult:
    """Co-evolve levels 0..lmax from stacked initial data g0.

    Triangularity is structural: level m is assembled from blocks/sources
    indexed by levels <= m only.  The walls act identically on every level.
    """
    if problem.scenario == "potential":
        raise ConfigError(["the sensitivity hierarchy runs in the base scenario only"])
    if mode not in ("jet", "explicit"):
        raise ConfigError([f"unknown hierarchy mode {mode!r}"])
    g = np.array(g0, dtype=float)
    if g.ndim != 3 or g.shape[1:] != (problem.mesh.nx, problem.grid.n):
        raise ConfigError([f"stacked levels must be (lmax+1, {problem.mesh.nx}, "
                           f"{problem.grid.n}), got {g.shape}"])
    lmax = g.shape[0] - 1
    if lmax > MAX_LEVELS:
        raise ConfigError([f"lmax = {lmax} exceeds the supported {MAX_LEVELS}"])
    validate_cfl(problem, cfg)
    dz_kernels = z_derivative_kernels(spec, problem.grid, z, lmax) if lmax else []
    n_steps = int(round(cfg.t_end / cfg.dt))
    if abs(n_steps * cfg.dt - cfg.t_end) > 1e-9 * max(1.0, cfg.t_end):
        raise ConfigError([f"t_end {cfg.t_end} is not an integer multiple of dt {cfg.dt}"])
    dt = cfg.dt
    if mode == "jet":
        blocks = jet_propagators(problem.kernel, dz_kernels, 0.5 * dt, lmax)
    else:
        half_prop = collision_propagator(problem.kernel, 0.5 * dt)

    mass0 = _level_mass(g, problem)
    mass_scale = 1.0 + np.abs(mass0)
    drift_max = 0.0
    # Mass is invariant level by level, so each level relaxes toward its own
    # multiple of the unit-mass equilibrium; deviation norms measure exactly
    # the decaying component.
    eq0 = equilibrium(problem, 1.0)
    steady = mass0[:, None, None] * eq0[None, :, :]

    def _dev_norms(arr: np.ndarray) -> np.ndarray:
        return _level_norms(arr - steady, problem)

    records = [HierarchyRecord(0.0, g.copy(), mass0.copy(), _dev_norms(g))]
    for step in range(1, n_steps + 1):
        if mode == "jet":
            g = _jet_collision(g, blocks)
            for lev in range(lmax + 1):
                g[lev] = transport_step(g[lev], dt, problem)
            g = _jet_collision(g, blocks)
        else:
            g = g @ half_prop.T
            for lev in range(lmax + 1):
                g[lev] = transport_step(g[lev], 0.5 * dt, problem)
            snap = g.copy()
            for lev in range(1, lmax + 1):
                g[lev] += dt * build_source(lev, dz_kernels, snap, problem.grid)
            for lev in range(lmax + 1):
                g[lev] = transport_step(g[lev], 0.5 * dt, problem)
            g = g @ half_prop.T
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"hierarchy state lost finiteness at step {step}")
        drift = np.max(np.abs(_level_mass(g, problem) - mass0) / mass_scale)
        drift_max = max(drift_max, float(drift))
        t = step * dt
        if step % cfg.cadence == 0 or step == n_steps:
            records.append(HierarchyRecord(t, g.copy(), _level_mass(g, problem),
                                           _dev_norms(g)))
    return HierarchyResult(records=records, final=records[-1],
                           mass_drift_max=drift_max, mode=mode)


# ---------------------------------------------------------------------------
# finite-difference oracle

_STENCILS = {
    0: {0: 1.0},
    1: {-1: -0.5, 1: 0.5},
    2: {-2: -1.0 / 12.0, -1: 16.0 / 12.0, 0: -30.0 / 12.0,
        1: 16.0 / 12.0, 2: -1.0 / 12.0},
}


def fd_oracle(problem_factory, f0_factory, cfg: SolverConfig, z: float,
              level: int, delta: float) -> list:
    """Central-difference probe of d^level f / dz^level from 2*level+1 base solves.

    problem_factory(z) and f0_factory(problem, z) rebuild the base problem
    and initial state at shifted parameter values.  Solves run on the worker
    pool; the stencil is combined in fixed index order, so results are
    independent of the worker count.  Returns [(t, array)] per record.
    """
    if level not in _STENCILS:
        raise ConfigError([f"fd_oracle supports levels 0..2, got {level}"])
    if level > 0 and not 1e-3 <= delta <= 1e-1:
        raise ConfigError([f"delta_z must lie in [1e-3, 1e-1], got {delta}"])
    stencil = _STENCILS[level]
    offsets = sorted(stencil)

    def solve_at(off: int):
        zz = z + off * delta
        prob = problem_factory(zz)
        return run(prob, cfg, f0_factory(prob, zz))

    results = map_ordered(solve_at, offsets)
    n_rec = len(results[0].records)
    series = []
    scale = delta ** level if level else 1.0
    for i in range(n_rec):
        t = results[0].records[i].t
        acc = np.zeros_like(results[0].records[i].f)
        for off, res in zip(offsets, results):
            acc += stencil[off] * res.records[i].f
        series.append((t, acc / scale))
    return series


# ---------------------------------------------------------------------------
# recursion bound


@dataclass
class RecursionBound:
    a: float
    coeffs: list             # coeffs[l][j] multiplies t^j in G^l

    def evaluate(self, l: int, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for j, cj in enumerate(self.coeffs[l]):
            out += cj * t ** j
        return out


def recursion_G(a: float, b: np.ndarray, h0: np.ndarray) -> RecursionBound:
    """G^l(t) = h^l(0) + sum_{k<l} b[l,k] * int_0^t G^k, by exact integration.

    G^l is a polynomial of degree <= l; the decay factor e^{-at} multiplies
    it outside (see verify_recursion_lemma).
    """
    b = np.asarray(b, dtype=float)
    h0 = np.asarray(h0, dtype=float)
    if a <= 0:
        raise ConfigError([f"decay rate a must be positive, got {a}"])
    if np.any(b < 0) or np.any(h0 < 0):
        raise ConfigError(["recursion inputs b and h0 must be nonnegative"])
    levels = h0.size
    coeffs = []
    for l in range(levels):
        c = np.zeros(l + 1)
        c[0] = h0[l]
        for k in range(l):
            integ = np.concatenate(([0.0], coeffs[k] / (np.arange(len(coeffs[k])) + 1.0)))
            c[:len(integ)] += b[l, k] * integ
        coeffs.append(c)
    return RecursionBound(a=float(a), coeffs=coeffs)


def _nilpotent_series(B: np.ndarray, h0: np.ndarray, ts: np.ndarray) -> np.ndarray:
    """exp(Bt) h0 for strictly lower-triangular B, via the finite power series."""
    levels = h0.size
    vecs = [h0]
    for k in range(1, levels):
        vecs.append(B @ vecs[-1])
    out = np.zeros((ts.size, levels))
    for k, vk in enumerate(vecs):
        out += (ts ** k / math.factorial(k))[:, None] * vk[None, :]
    return out


def verify_recursion_lemma(a: float, b: np.ndarray, h0: np.ndarray,
                           t_end: float, damping: np.ndarray | None = None,
                           n_grid: int = 1000, tol: float = 1e-8) -> dict:
    """Check h^l(t) <= e^{-at} G^l(t) on a uniform grid.

    The comparison system dh/dt = -a h + (damping * b) h is integrated with
    a high-accuracy adaptive integrator and cross-checked against the exact
    nilpotent power-series solution; damping entries in [0, 1] (ones =
    equality case, where the bound is tight).
    """
    b = np.asarray(b, dtype=float)
    h0 = np.asarray(h0, dtype=float)
    bound = recursion_G(a, b, h0)
    B = np.tril(b, -1) if damping is None else np.tril(b * damping, -1)

    def rhs(_t, h):
        return -a * h + B @ h

    ts = np.linspace(0.0, t_end, n_grid)
    sol = solve_ivp(rhs, (0.0, t_end), h0, t_eval=ts, rtol=1e-11, atol=1e-14,
                    method="DOP853")
    if not sol.success:
        raise NumericalError(f"comparison ODE integration failed: {sol.message}")
    h = sol.y.T
    exact = np.exp(-a * ts)[:, None] * _nilpotent_series(B, h0, ts)
    series_gap = float(np.max(np.abs(h - exact)))
    envelope = np.exp(-a * ts)[:, None] * np.column_stack(
        [bound.evaluate(l, ts) for l in range(h0.size)])
    ok = bool(np.all(h <= envelope * (1.0 + tol) + 1e-300))
    margin = float(np.min(envelope * (1.0 + tol) - h))
    return {"ok": ok, "margin": margin, "series_gap": series_gap,
            "n_grid": n_grid}


# ---------------------------------------------------------------------------
# entropy terms with source, reported constants, envelope fits


def hierarchy_constants(ledger, dz_kernels: list, grid) -> dict:
    """a = omega/(2 C_eta) and b^l_k = binom(l,k)(C_tilde + C_p C_L)/(2 c_eta).

    C_tilde and the source momentum constant are the largest realized norms
    over the shipped derivative kernels (they play the role of the uniform
    derivative bounds assumed for the cross-section).
    """
    c_tilde = max((operator_norm(ds, grid) for ds in dz_kernels), default=0.0)
    c_l_src = max((momentum_exchange_constant(ds, grid) for ds in dz_kernels),
                  default=0.0)
    a = ledger.omega / (2.0 * ledger.C_eta)
    lmax = len(dz_kernels)
    b = np.zeros((lmax + 1, lmax + 1))
    for l in range(lmax + 1):
        for k in range(l):
            b[l, k] = math.comb(l, k) * (c_tilde + ledger.C_p_h * c_l_src) \
                / (2.0 * ledger.c_eta)
    return {"a": a, "b": b, "C_tilde": c_tilde, "C_L_src": c_l_src}


def assemble_uq_entropy_terms(result: HierarchyResult, problem: Problem,
                              ledger, dz_kernels: list) -> dict:
    """Evaluate the with-source entropy inequality and both source bounds.

    Per record and level l:
      dH^l/dt <= -omega ||g^l||^2 + ||S^l|| ||g^l|| + C_p ||j^{S^l}|| ||g^l||
      ||S^l||     <= sum_k binom(l,k) C_tilde_{l-k} ||g^k||
      ||j^{S^l}|| <= sum_k binom(l,k) C_L,{l-k}    ||g^k||
    The time derivative is a backward difference at the record cadence.
    """
    grid, mesh = problem.grid, problem.mesh
    dx = mesh.dx
    inv_m = grid.weights / grid.m
    lmax = result.records[0].g.shape[0] - 1
    c_tilde_j = [operator_norm(ds, grid) for ds in dz_kernels]
    c_l_j = [momentum_exchange_constant(ds, grid) for ds in dz_kernels]
    # The decay estimate concerns the deviation from each level's invariant
    # component m_l eq (the relaxation kernels annihilate multiples of the
    # Maxwellian, so sources evaluated on raw levels are unchanged).
    steady = (result.records[0].masses[:, None, None]
              * equilibrium(problem, 1.0)[None, :, :])

    def h_of(gl: np.ndarray) -> float:
        rho, j, _ = moments(gl, grid)
        fld = solve_poisson_neumann(rho, mesh)
        n2 = float(np.sum((gl * gl) @ inv_m) * dx)
        return 0.5 * n2 + ledger.eta * float(np.sum(j[:, 0] * fld.grad_cells) * dx)

    rows = []
    flags = {"entropy": True, "source_norm": True, "source_current": True}
    prev_H = None
    for rec in result.records:
        dev = rec.g - steady
        H = np.array([h_of(dev[l]) for l in range(lmax + 1)])
        row = {"t": rec.t, "H": H, "norms": rec.norms}
        if prev_H is not None:
            dt = rec.t - prev_t
            s_norm = np.zeros(lmax + 1)
            j_norm = np.zeros(lmax + 1)
            s_bound = np.zeros(lmax + 1)
            j_bound = np.zeros(lmax + 1)
            for l in range(1, lmax + 1):
                src = build_source(l, dz_kernels, rec.g, grid)
                s_norm[l] = float(np.sqrt(np.sum((src * src) @ inv_m) * dx))
                js = moments(src, grid)[1]
                j_norm[l] = float(np.sqrt(np.sum(js * js) * dx))
                for k in range(l):
                    j_ord = l - k
                    s_bound[l] += math.comb(l, k) * c_tilde_j[j_ord - 1] * rec.norms[k]
                    j_bound[l] += math.comb(l, k) * c_l_j[j_ord - 1] * rec.norms[k]
            dHdt = (H - prev_H) / dt
            rhs = (-ledger.omega * rec.norms ** 2 + s_norm * rec.norms
                   + ledger.C_p_h * j_norm * rec.norms)
            tol = 1e-8 * (1.0 + np.abs(dHdt) + np.abs(rhs))
            if not np.all(dHdt <= rhs + tol):
                flags["entropy"] = False
            if not np.all(s_norm <= s_bound * (1.0 + 1e-12) + 1e-14):
                flags["source_norm"] = False
            if not np.all(j_norm <= j_bound * (1.0 + 1e-12) + 1e-14):
                flags["source_current"] = False
            row.update(dHdt=dHdt, rhs=rhs, s_norm=s_norm, s_bound=s_bound,
                       j_norm=j_norm, j_bound=j_bound)
        rows.append(row)
        prev_H, prev_t = H, rec.t
    return {"rows": rows, "flags": flags}


@dataclass
class EnvelopeFit:
    a_fit: float
    coeffs: np.ndarray
    rms: float


def fit_envelope(ts, norms, degree: int) -> EnvelopeFit:
    """Least-squares fit of ||g^l(t)|| by e^{-a t} * poly_degree(t), a > 0.

    The polynomial coefficients are linear at fixed a (solved by lstsq);
    a is found by a bounded scalar search.
    """
    ts = np.asarray(ts, dtype=float)
    norms = np.asarray(norms, dtype=float)
    design = np.column_stack([ts ** j for j in range(degree + 1)])

    def resid(a: float) -> float:
        basis = design * np.exp(-a * ts)[:, None]
        sol, *_ = np.linalg.lstsq(basis, norms, rcond=None)
        return float(np.sum((basis @ sol - norms) ** 2))

    opt = minimize_scalar(resid, bounds=(1e-3, 50.0), method="bounded",
                          options={"xatol": 1e-8})
    a_fit = float(opt.x)
    basis = design * np.exp(-a_fit * ts)[:, None]
    coeffs = np.linalg.lstsq(basis, norms, rcond=None)[0]
    rms = float(np.sqrt(np.mean((basis @ coeffs - norms) ** 2)))
    return EnvelopeFit(a_fit=a_fit, coeffs=coeffs, rms=rms)
