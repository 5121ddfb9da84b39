"""Neumann Poisson solve, Poincaré constant, and the confining potential.

The field equation -phi'' = rho - mean(rho) is closed with zero-flux walls
and the zero-mean gauge.  Cell-centred second differences give a singular
tridiagonal system (kernel = constants); we pin the last unknown to zero,
solve the SPD principal block with a cached Cholesky factor, then de-mean.

Gradients live on faces, with the wall faces exactly zero.  This placement
makes three summation-by-parts identities exact in floating point (up to
roundoff): <grad phi, grad phi>_faces = <phi, rho - mean>,
-<grad rho, grad phi>_faces = -||rho - mean||^2, and the time-shifted
variant used for the current estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded, eigvalsh_tridiagonal

from .boundary import SlabMesh
from .errors import ConfigError

POTENTIAL_FAMILIES = ("zero", "cosine-well", "quadratic-well")


@dataclass
class PhiField:
    """Solution of the wall-insulated field problem for one density snapshot."""

    phi: np.ndarray          # cell values, zero mean
    grad_faces: np.ndarray   # (nx+1,) face gradient, zero at both walls
    grad_cells: np.ndarray   # face-averaged gradient at cell centres
    rho_mean: float          # subtracted compatibility constant


def _cholesky_factor(mesh: SlabMesh):
    key = "poisson_cholesky"
    if key not in mesh._cache:
        nx, dx = mesh.nx, mesh.dx
        diag = np.full(nx, 2.0) / dx ** 2
        diag[0] = diag[-1] = 1.0 / dx ** 2
        off = np.full(nx - 1, -1.0) / dx ** 2
        # pin the last unknown: factor the leading (nx-1) x (nx-1) block
        ab = np.zeros((2, nx - 1))
        ab[0, 1:] = off[: nx - 2]
        ab[1, :] = diag[: nx - 1]
        mesh._cache[key] = cholesky_banded(ab, lower=False)
    return mesh._cache[key]


def solve_poisson_neumann(rho: np.ndarray, mesh: SlabMesh) -> PhiField:
    """Solve -phi'' = rho - mean(rho), phi'(walls) = 0, mean(phi) = 0."""
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (mesh.nx,):
        raise ConfigError([f"rho must have shape ({mesh.nx},), got {rho.shape}"])
    if not np.all(np.isfinite(rho)):
        raise ConfigError(["rho contains non-finite entries"])
    rho_mean = float(np.mean(rho))
    rhs = rho - rho_mean
    factor = _cholesky_factor(mesh)
    phi = np.empty(mesh.nx)
    phi[:-1] = cho_solve_banded((factor, False), rhs[:-1])
    phi[-1] = 0.0
    phi -= phi.mean()
    grad_faces = np.zeros(mesh.nx + 1)
    grad_faces[1:-1] = np.diff(phi) / mesh.dx
    grad_cells = 0.5 * (grad_faces[:-1] + grad_faces[1:])
    return PhiField(phi=phi, grad_faces=grad_faces, grad_cells=grad_cells,
                    rho_mean=rho_mean)


def poincare_constant(mesh: SlabMesh) -> float:
    """C_p,h = mu_1^{-1/2}, mu_1 the first nonzero wall-insulated Laplacian eigenvalue.

    Computed from the tridiagonal operator itself; converges to Lx/pi from
    below as the mesh refines.
    """
    key = "poincare"
    if key not in mesh._cache:
        nx, dx = mesh.nx, mesh.dx
        diag = np.full(nx, 2.0) / dx ** 2
        diag[0] = diag[-1] = 1.0 / dx ** 2
        off = np.full(nx - 1, -1.0) / dx ** 2
        mu = eigvalsh_tridiagonal(diag, off, select="i", select_range=(1, 1))
        mesh._cache[key] = float(1.0 / np.sqrt(mu[0]))
    return mesh._cache[key]


def cell_norm(u: np.ndarray, mesh: SlabMesh, du: np.ndarray | None = None) -> float:
    """L2 norm of a cell field; optional cell weights (e.g. e^{-V})."""
    q = u * u if du is None else u * u * du
    return float(np.sqrt(np.sum(q) * mesh.dx))


def face_norm(e: np.ndarray, mesh: SlabMesh, du_faces: np.ndarray | None = None) -> float:
    """L2 norm of a face field (trapezoid-free: each face carries weight dx)."""
    q = e * e if du_faces is None else e * e * du_faces
    return float(np.sqrt(np.sum(q) * mesh.dx))


def face_grad(u: np.ndarray, mesh: SlabMesh) -> np.ndarray:
    """Face-based derivative of a cell field, zero at the walls."""
    e = np.zeros(u.shape[:-1] + (mesh.nx + 1,))
    e[..., 1:-1] = np.diff(u, axis=-1) / mesh.dx
    return e


def hessian_norm(field: PhiField, mesh: SlabMesh) -> float:
    """||phi''||: divergence of the face gradient, back at cell centres."""
    second = np.diff(field.grad_faces) / mesh.dx
    return cell_norm(second, mesh)


def h2_norm(field: PhiField, mesh: SlabMesh) -> float:
    return float(np.sqrt(cell_norm(field.phi, mesh) ** 2
                         + face_norm(field.grad_faces, mesh) ** 2
                         + hessian_norm(field, mesh) ** 2))


def _probe_fields(mesh: SlabMesh, n_probes: int, seed: int) -> np.ndarray:
    """Deterministic probe set: pure cosine modes (0..8, including the slowest
    mode that extremizes both ratios below), random mode mixtures, and
    white-noise cell data."""
    rng = np.random.default_rng(seed)
    modes = np.arange(9)[:, None] * np.pi * mesh.centers[None, :] / mesh.lx
    pure = np.cos(modes)
    n_rest = max(n_probes - pure.shape[0], 2)
    rough = rng.standard_normal((n_rest // 2, mesh.nx))
    coeffs = rng.standard_normal((n_rest - n_rest // 2, 9))
    smooth = coeffs @ np.cos(modes)
    return np.vstack([pure, smooth, rough])


def h2_regularity_constant(mesh: SlabMesh, n_probes: int = 64, seed: int = 2024) -> float:
    """K_h: recorded maximum of ||phi||_{H2,h} / ||rho|| over a probe set.

    A declared stand-in for the flat-domain regularity constant; every
    downstream use is an inequality check against this recorded value.
    Probes are centred so the solvability projection does not deflate the
    denominator.
    """
    best = 0.0
    for rho in _probe_fields(mesh, n_probes, seed):
        rho = rho - rho.mean()
        denom = cell_norm(rho, mesh)
        if denom < 1e-14:
            continue
        best = max(best, h2_norm(solve_poisson_neumann(rho, mesh), mesh) / denom)
    return best


def grad_trace_constant(mesh: SlabMesh, n_probes: int = 64, seed: int = 2025) -> float:
    """D_gamma,h: recorded maximum wall-value-to-H1 ratio over a probe set.

    The face gradient of the field solve vanishes at walls by construction,
    so its literal trace ratio is zero; this generic mesh trace constant is
    the declared stand-in that keeps the boundary-term bookkeeping finite.
    """
    best = 0.0
    for u in _probe_fields(mesh, n_probes, seed):
        h1 = np.sqrt(cell_norm(u, mesh) ** 2 + face_norm(face_grad(u, mesh), mesh) ** 2)
        if h1 < 1e-14:
            continue
        trace = np.sqrt(u[0] ** 2 + u[-1] ** 2)
        best = max(best, float(trace) / h1)
    return best


@dataclass
class PotentialV:
    """External confining potential V(x) with analytic derivatives.

    Carries the cell/face samples the stepper and the weighted diagnostics
    need, plus the three scalars of the well-posedness bookkeeping:
    c_V <= e^{-V} <= C_V and D_V >= max(sup|V|, sup|V'|, sup|V''|).
    """

    family: str
    amplitude: float
    v_cells: np.ndarray
    dv_cells: np.ndarray
    v_faces: np.ndarray
    c_v: float
    C_v: float
    D_v: float

    @property
    def weight_cells(self) -> np.ndarray:
        """du/dx = e^{-V} at cell centres."""
        return np.exp(-self.v_cells)

    @property
    def weight_faces(self) -> np.ndarray:
        return np.exp(-self.v_faces)


def build_potential(mesh: SlabMesh, family: str = "zero",
                    amplitude: float = 0.0) -> PotentialV:
    if family not in POTENTIAL_FAMILIES:
        raise ConfigError([f"potential.family must be one of {POTENTIAL_FAMILIES}, "
                           f"got {family!r}"])
    x_c, x_f, lx = mesh.centers, mesh.faces, mesh.lx
    a = float(amplitude)
    if family == "zero" or a == 0.0:
        v_c = np.zeros(mesh.nx)
        dv_c = np.zeros(mesh.nx)
        v_f = np.zeros(mesh.nx + 1)
        sup_v = sup_dv = sup_d2v = 0.0
    elif family == "cosine-well":
        k = 2.0 * np.pi / lx
        v_c = a * np.cos(k * x_c)
        dv_c = -a * k * np.sin(k * x_c)
        v_f = a * np.cos(k * x_f)
        sup_v, sup_dv, sup_d2v = abs(a), abs(a) * k, abs(a) * k ** 2
    else:  # quadratic-well
        s = 2.0 / lx
        v_c = a * (s * x_c - 1.0) ** 2
        dv_c = 2.0 * a * s * (s * x_c - 1.0)
        v_f = a * (s * x_f - 1.0) ** 2
        sup_v, sup_dv, sup_d2v = abs(a), 2.0 * abs(a) * s, 2.0 * abs(a) * s ** 2
    # extrema of the shipped families sit on sampled points or are analytic
    v_all = np.concatenate([v_c, v_f])
    c_v = float(np.exp(-np.max(v_all))) if a != 0.0 else 1.0
    C_v = float(np.exp(-np.min(v_all))) if a != 0.0 else 1.0
    if family == "cosine-well" and a != 0.0:
        c_v, C_v = float(np.exp(-abs(a))), float(np.exp(abs(a)))
    if family == "quadratic-well" and a != 0.0:
        lo, hi = (0.0, a) if a > 0 else (a, 0.0)
        c_v, C_v = float(np.exp(-hi)), float(np.exp(-lo))
    d_v = max(sup_v, sup_dv, sup_d2v)
    return PotentialV(family=family, amplitude=a, v_cells=v_c, dv_cells=dv_c,
                      v_faces=v_f, c_v=c_v, C_v=C_v, D_v=float(d_v))


def check_field_estimates(mesh: SlabMesh, rho: np.ndarray,
                          tol: float = 1e-10) -> dict:
    """Evaluate both sides of the two field estimates on one snapshot.

    (1) ||grad phi|| <= C_p,h ||rho - mean||, (2) the defect of the discrete
    identity ||grad phi||^2 = <phi, rho - mean>.
    """
    field = solve_poisson_neumann(rho, mesh)
    cp = poincare_constant(mesh)
    lhs = face_norm(field.grad_faces, mesh)
    rho0 = rho - np.mean(rho)
    rhs = cp * cell_norm(rho0, mesh)
    pairing = float(np.sum(field.phi * rho0) * mesh.dx)
    defect = abs(lhs ** 2 - pairing)
    return {
        "grad_norm": lhs,
        "poincare_bound": rhs,
        "poincare_ok": lhs <= rhs * (1.0 + 1e-12) + tol,
        "identity_defect": defect,
        "identity_ok": defect <= tol * (1.0 + lhs ** 2),
    }
