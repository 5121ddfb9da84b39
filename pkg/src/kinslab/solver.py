"""Time integration: Strang-split upwind transport / force / collision.

State layout is f[cell, node].  One step is

    C(dt/2) . F(dt/2) . T(dt) . F(dt/2) . C(dt/2)

with T the conservative first-order upwind transport closed by Maxwell
walls, F the conservative upwind drift in v (potential scenario only,
zero-flux at the velocity-domain edges), and C the collision sub-flow.
C defaults to the exact dense semigroup exp(dt L) from the symmetric
eigendecomposition, with a rank-one mass repair that pins the weighted
column sums to machine precision so 1e4-step drift stays at roundoff.

The same flux assembly feeds the dense semi-discrete generator, so the
spectral oracle measures exactly the dynamics the stepper integrates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .boundary import MaxwellBC, SlabMesh, apply_maxwell_bc, wall_face_values
from .collision import CollisionKernel, _symmetrized, apply_collision, operator_norm
from .errors import CompatibilityError, ConfigError, NumericalError
from .poisson import PotentialV
from .velocity import VelocityGrid

SCENARIOS = ("base", "potential")


@dataclass
class Problem:
    """Everything fixed over a run: discretization, physics, walls."""

    grid: VelocityGrid
    mesh: SlabMesh
    kernel: CollisionKernel
    bc: MaxwellBC
    potential: PotentialV | None = None

    @property
    def scenario(self) -> str:
        if self.potential is not None and self.potential.amplitude != 0.0:
            return "potential"
        return "base"


@dataclass
class KineticState:
    f: np.ndarray   # (nx, n_nodes)
    t: float

    def copy(self) -> "KineticState":
        return KineticState(f=self.f.copy(), t=self.t)


@dataclass
class SolverConfig:
    dt: float
    t_end: float
    cfl_target: float = 0.9
    collision_mode: str = "exponential"   # or "explicit"
    cadence: int = 10                     # record every `cadence` steps
    audit: bool = True                    # per-step conservation bookkeeping


@dataclass
class RunRecord:
    t: float
    f: np.ndarray
    mass: float
    flux_left: float
    flux_right: float


@dataclass
class RunResult:
    records: list
    final: KineticState
    mass0: float
    mass_drift_max: float
    wall_flux_max: float
    monotone_defect_max: float
    step_count: int
    equilibrium_residual: float


def total_mass(state_f: np.ndarray, problem: Problem) -> float:
    return float(np.sum(state_f @ problem.grid.weights) * problem.mesh.dx)


def equilibrium(problem: Problem, mass: float = 1.0) -> np.ndarray:
    """Stationary profile with the given total mass: M/Lx, or e^V M normalized."""
    g, mesh = problem.grid, problem.mesh
    if problem.scenario == "potential":
        shape = np.exp(problem.potential.v_cells)
        shape = shape / (np.sum(shape) * mesh.dx)
    else:
        shape = np.full(mesh.nx, 1.0 / mesh.lx)
    return mass * shape[:, None] * g.m[None, :]


def validate_cfl(problem: Problem, cfg: SolverConfig) -> None:
    problems = []
    g, mesh = problem.grid, problem.mesh
    vmax = float(np.max(np.abs(g.v1)))
    lim_x = cfg.cfl_target * mesh.dx / vmax
    if cfg.dt > lim_x * (1.0 + 1e-12):
        problems.append(
            f"transport CFL violated: dt={cfg.dt} > {cfg.cfl_target}*dx/max|v| = {lim_x:.6g}")
    if problem.scenario == "potential":
        if g.kind != "uniform-midpoint":
            problems.append("force term requires the uniform-midpoint velocity grid "
                            "(conservative flux form needs equal node weights)")
        else:
            amax = float(np.max(np.abs(problem.potential.dv_cells)))
            if amax > 0:
                hv = float(g.axis_nodes[1] - g.axis_nodes[0])
                # the Maxwellian-weighted drift drains each node at an
                # effective speed |V'| * M_face/M_node, so the stability
                # limit carries the worst face-to-node ratio
                _, ratio = _force_geometry(g)
                lim_v = cfg.cfl_target * hv / (amax * ratio)
                if cfg.dt > lim_v * (1.0 + 1e-12):
                    problems.append(f"force CFL violated: dt={cfg.dt} > "
                                    f"{cfg.cfl_target}*dv/(max|V'|*{ratio:.3g}) "
                                    f"= {lim_v:.6g}")
    if cfg.cfl_target > 0.9 + 1e-12:
        problems.append(f"cfl_target must be <= 0.9, got {cfg.cfl_target}")
    if cfg.collision_mode not in ("exponential", "explicit"):
        problems.append(f"collision_mode must be exponential|explicit, "
                        f"got {cfg.collision_mode!r}")
    if cfg.collision_mode == "explicit":
        lnorm = operator_norm(problem.kernel.sigma, problem.grid)
        if cfg.dt * lnorm >= 2.0:
            problems.append(f"explicit collision unstable: dt*||L|| = "
                            f"{cfg.dt * lnorm:.3g} >= 2")
    if problems:
        raise ConfigError(problems)


# ---------------------------------------------------------------------------
# sub-steps


def transport_fluxes(f: np.ndarray, problem: Problem) -> np.ndarray:
    """Upwind face fluxes s*f_face, shape (nx+1, nodes); walls closed by the BC."""
    g, bc = problem.grid, problem.bc
    nx = problem.mesh.nx
    s = g.v1
    pos = s > 0
    faces = np.empty((nx + 1, g.n))
    faces[1:, pos] = f[:, pos]
    faces[:-1, ~pos] = f[:, ~pos]
    left = apply_maxwell_bc(bc, "left", f[0])
    right = apply_maxwell_bc(bc, "right", f[-1])
    faces[0, pos] = left[pos]
    faces[-1, ~pos] = right[~pos]
    return faces * s[None, :]


def transport_step(f: np.ndarray, dt: float, problem: Problem) -> np.ndarray:
    flux = transport_fluxes(f, problem)
    return f - (dt / problem.mesh.dx) * (flux[1:] - flux[:-1])


def _force_geometry(grid: VelocityGrid):
    """Face Maxwellian values and drain ratios for the v1-advection, cached.

    The drift is discretized on u = f/M with exact Gaussian face values
    (flux = a * M_face * upwind(u)), so the stencil error stays proportional
    to M and the 1/M-weighted norm does not amplify the velocity tails.
    Returns (m_face of shape (n1-1, rest), worst face-to-node mass ratio).
    """
    if "force_geom" not in grid._cache:
        n1 = grid.axis_nodes.size
        rest = grid.n // n1
        v = grid.axis_nodes
        vf = 0.5 * (v[:-1] + v[1:])
        gauss_n = np.exp(-0.5 * v * v)
        gauss_f = np.exp(-0.5 * vf * vf)
        rest_prof = grid.m.reshape(n1, rest)[0] / gauss_n[0]
        m_face = gauss_f[:, None] * rest_prof[None, :]
        # a face drains one adjacent node; the update coefficient carries
        # M_face / M_node, which exceeds 1 wherever the Gaussian climbs
        ratio = max(np.max(gauss_f / gauss_n[:-1]), np.max(gauss_f / gauss_n[1:]))
        grid._cache["force_geom"] = (m_face, float(ratio))
    return grid._cache["force_geom"]


def force_fluxes(f: np.ndarray, problem: Problem) -> np.ndarray:
    """Upwind fluxes of the v1-drift a(x) = V'(x); zero at the v-domain edges.

    Returns shape (nx, n_axis+1, rest) in axis-separated layout.
    """
    g = problem.grid
    if g.kind != "uniform-midpoint":
        raise CompatibilityError("force step needs the uniform-midpoint grid")
    nx = problem.mesh.nx
    n1 = g.axis_nodes.size
    rest = g.n // n1
    m_face, _ = _force_geometry(g)
    u = f.reshape(nx, n1, rest) / g.m.reshape(n1, rest)[None, :, :]
    a = problem.potential.dv_cells  # (nx,)
    up = np.where(a[:, None, None] > 0, u[:, :-1, :], u[:, 1:, :])
    fluxes = np.zeros((nx, n1 + 1, rest))
    fluxes[:, 1:-1, :] = a[:, None, None] * up * m_face[None, :, :]
    return fluxes


def force_step(f: np.ndarray, dt: float, problem: Problem) -> np.ndarray:
    if problem.potential is None or problem.potential.amplitude == 0.0:
        return f
    g = problem.grid
    n1 = g.axis_nodes.size
    hv = float(g.axis_nodes[1] - g.axis_nodes[0])
    fluxes = force_fluxes(f, problem)
    upd = f.reshape(problem.mesh.nx, n1, -1) - (dt / hv) * (fluxes[:, 1:, :]
                                                            - fluxes[:, :-1, :])
    return upd.reshape(f.shape)


def collision_propagator(kernel: CollisionKernel, dt: float) -> np.ndarray:
    """exp(dt L) with weighted column sums repaired to exact mass conservation."""
    key = ("prop", float(dt))
    if key not in kernel._prop_cache:
        lam, q, scale = _symmetrized(kernel)
        core = (q * np.exp(dt * lam)) @ q.T
        prop = core * (scale[None, :] / scale[:, None])
        w, m = kernel.grid.weights, kernel.grid.m
        defect = w - prop.T @ w
        prop = prop + np.outer(m, defect)
        kernel._prop_cache[key] = prop
    return kernel._prop_cache[key]


def collision_step(f: np.ndarray, dt: float, kernel: CollisionKernel,
                   mode: str = "exponential") -> np.ndarray:
    if mode == "exponential":
        return f @ collision_propagator(kernel, dt).T
    return f + dt * apply_collision(kernel, f)


def strang_step(f: np.ndarray, dt: float, problem: Problem,
                mode: str = "exponential") -> np.ndarray:
    half = 0.5 * dt
    f = collision_step(f, half, problem.kernel, mode)
    f = force_step(f, half, problem)
    f = transport_step(f, dt, problem)
    f = force_step(f, half, problem)
    f = collision_step(f, half, problem.kernel, mode)
    return f


def wall_fluxes(f: np.ndarray, problem: Problem) -> tuple:
    g, bc = problem.grid, problem.bc
    out = []
    for wall, cell in (("left", f[0]), ("right", f[-1])):
        wd = bc.wall(wall)
        face = wall_face_values(bc, wall, cell)
        out.append(float(np.sum(face * wd.normal_speed * g.weights)))
    return tuple(out)


def one_step_residual(problem: Problem, cfg: SolverConfig,
                      reference: np.ndarray | None = None) -> float:
    """||step(eq) - eq|| / dt: the stepper's stationarity defect.

    Exactly roundoff in the base scenario; O(dx + dv) with the potential on
    (upwind smearing of e^V M), shrinking first-order under refinement.
    """
    eq = equilibrium(problem) if reference is None else reference
    stepped = strang_step(eq, cfg.dt, problem, cfg.collision_mode)
    diff = stepped - eq
    w, dx = problem.grid.weights, problem.mesh.dx
    nrm = float(np.sqrt(np.sum((diff * diff / problem.grid.m[None, :]) @ w) * dx))
    return nrm / cfg.dt


def run(problem: Problem, cfg: SolverConfig, f0: np.ndarray) -> RunResult:
    """Advance to t_end, recording snapshots at cadence and auditing each step."""
    validate_cfl(problem, cfg)
    g, mesh = problem.grid, problem.mesh
    f = np.array(f0, dtype=float)
    if f.shape != (mesh.nx, g.n):
        raise ConfigError([f"initial state must be ({mesh.nx}, {g.n}), got {f.shape}"])
    n_steps = int(round(cfg.t_end / cfg.dt))
    if abs(n_steps * cfg.dt - cfg.t_end) > 1e-9 * max(1.0, cfg.t_end):
        raise ConfigError([f"t_end={cfg.t_end} is not an integer multiple of dt={cfg.dt}"])

    mass0 = total_mass(f, problem)
    eq = equilibrium(problem, mass0)
    inv_m = 1.0 / g.m
    w = g.weights

    def dist2(arr: np.ndarray) -> float:
        d = arr - eq
        return float(np.sum((d * d * inv_m[None, :]) @ w) * mesh.dx)

    records = []
    fl, fr = wall_fluxes(f, problem)
    records.append(RunRecord(t=0.0, f=f.copy(), mass=mass0, flux_left=fl, flux_right=fr))

    drift_max = 0.0
    flux_max = 0.0
    mono_max = 0.0
    prev_d2 = dist2(f)
    eq_res = one_step_residual(problem, cfg)

    t = 0.0
    for k in range(1, n_steps + 1):
        f = strang_step(f, cfg.dt, problem, cfg.collision_mode)
        t = k * cfg.dt
        if cfg.audit:
            if not np.all(np.isfinite(f)):
                raise NumericalError(
                    f"non-finite state at t={t:.6g} (step {k}); last valid state "
                    f"at t={records[-1].t:.6g} retained in records")
            mass = total_mass(f, problem)
            drift_max = max(drift_max, abs(mass - mass0) / max(abs(mass0), 1e-300))
            fl, fr = wall_fluxes(f, problem)
            fnorm = float(np.sqrt(np.sum((f * f * inv_m[None, :]) @ w) * mesh.dx))
            flux_max = max(flux_max, max(abs(fl), abs(fr)) / max(fnorm, 1e-300))
            d2 = dist2(f)
            if prev_d2 > 1e-280:
                mono_max = max(mono_max, (d2 - prev_d2) / prev_d2)
            prev_d2 = d2
        else:
            mass, fl, fr = float("nan"), float("nan"), float("nan")
        if k % cfg.cadence == 0 or k == n_steps:
            if not cfg.audit:
                mass = total_mass(f, problem)
                fl, fr = wall_fluxes(f, problem)
            records.append(RunRecord(t=t, f=f.copy(), mass=mass,
                                     flux_left=fl, flux_right=fr))

    return RunResult(records=records, final=KineticState(f=f, t=t), mass0=mass0,
                     mass_drift_max=drift_max, wall_flux_max=flux_max,
                     monotone_defect_max=mono_max, step_count=n_steps,
                     equilibrium_residual=eq_res)


# ---------------------------------------------------------------------------
# dense oracle


def continuous_rhs(f: np.ndarray, problem: Problem) -> np.ndarray:
    """Semi-discrete generator A f (transport + force + collision), stepper-identical."""
    flux = transport_fluxes(f, problem)
    out = -(flux[1:] - flux[:-1]) / problem.mesh.dx
    if problem.scenario == "potential":
        g = problem.grid
        n1 = g.axis_nodes.size
        hv = float(g.axis_nodes[1] - g.axis_nodes[0])
        ffl = force_fluxes(f, problem)
        out -= ((ffl[:, 1:, :] - ffl[:, :-1, :]) / hv).reshape(f.shape)
    out += apply_collision(problem.kernel, f)
    return out


def dense_generator(problem: Problem, max_dof: int = 8192,
                    chunk: int = 256) -> np.ndarray:
    """Assemble A column-by-column through the shared rhs, in fixed chunks."""
    nx, n = problem.mesh.nx, problem.grid.n
    dof = nx * n
    if dof > max_dof:
        raise CompatibilityError(
            f"dense generator needs nx*nv <= {max_dof}, got {dof}; "
            "use a coarser oracle grid")
    A = np.empty((dof, dof))
    basis = np.zeros((chunk, nx, n))
    for start in range(0, dof, chunk):
        stop = min(start + chunk, dof)
        cols = stop - start
        basis[:cols] = 0.0
        for i in range(cols):
            basis[i].flat[start + i] = 1.0
        for i in range(cols):
            A[:, start + i] = continuous_rhs(basis[i], problem).ravel()
        for i in range(cols):
            basis[i].flat[start + i] = 0.0
    return A


def mass_functional(problem: Problem) -> np.ndarray:
    return (np.full(problem.mesh.nx, problem.mesh.dx)[:, None]
            * problem.grid.weights[None, :]).ravel()


def decay_rate_oracle(A: np.ndarray, problem: Problem,
                      mass_tol: float = 1e-8) -> float:
    """tau_h = -max Re(spec A) over the mass-zero invariant subspace."""
    vals, vecs = np.linalg.eig(A)
    mhat = mass_functional(problem)
    mnorm = float(np.linalg.norm(mhat))
    weights = np.abs(mhat @ vecs) / (mnorm * np.linalg.norm(vecs, axis=0))
    massless = weights < mass_tol
    if not np.any(massless):
        raise NumericalError("no mass-zero eigenmodes found; oracle unusable")
    return float(-np.max(vals[massless].real))


def steady_state(A: np.ndarray, problem: Problem, mass: float = 1.0) -> np.ndarray:
    """Least-squares solve of A u = 0 with the total-mass row appended."""
    mhat = mass_functional(problem)
    sys = np.vstack([A, mhat[None, :]])
    rhs = np.zeros(A.shape[0] + 1)
    rhs[-1] = mass
    sol, *_ = np.linalg.lstsq(sys, rhs, rcond=None)
    return sol.reshape(problem.mesh.nx, problem.grid.n)
