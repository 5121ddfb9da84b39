"""Velocity grids, the discrete Maxwellian, and weighted velocity-space algebra.

All velocity integrals are discrete sums  sum_i w_i g(v_i)  over a node set
that is symmetric under per-axis sign flips.  Two families are supported:

* ``uniform-midpoint``: midpoint rule on [-vmax, vmax]^dim with an even
  number of nodes per axis (no node at v = 0, exact mirror symmetry).
* ``gauss-hermite-tensor``: probabilists' Gauss-Hermite rules re-weighted to
  plain dv quadrature, w_i = w_i^GH * exp(v_i^2 / 2).  The (normalised)
  Gaussian then integrates to 1 exactly, so the Maxwellian renormalisation
  factor is 1 up to round-off.

The weighted inner product used throughout is

    <f, g>_dnu = sum_i w_i f_i g_i / M_i,

i.e. L^2 against the inverse-Maxwellian weight, the natural geometry in
which the collision operator is self-adjoint.  The discrete Maxwellian is
rescaled to exact unit mass, which makes the Pythagoras split
``|f|^2 = rho^2 + |f_perp|^2`` exact to round-off.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .errors import ConfigError

GRID_KINDS = ("uniform-midpoint", "gauss-hermite-tensor")


@dataclass
class VelocityGrid:
    """Velocity quadrature: nodes (n, dim), plain weights (n,), Maxwellian values."""

    dim: int
    kind: str
    nodes: np.ndarray          # (n, dim)
    weights: np.ndarray        # (n,)
    vmax: float                # largest |component| actually present
    axis_nodes: np.ndarray     # (n_per_axis,) shared by all axes
    axis_weights: np.ndarray   # (n_per_axis,)
    m: np.ndarray              # renormalised Maxwellian values, sum w*m == 1
    m_raw: np.ndarray          # un-renormalised Gaussian values
    renorm: float              # m = renorm * m_raw
    flip_v1: np.ndarray        # node permutation realising v1 -> -v1
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.nodes.shape[0]

    @property
    def v1(self) -> np.ndarray:
        """Signed transport speeds (first velocity component)."""
        return self.nodes[:, 0]


@dataclass
class DiscreteMaxwellian:
    values: np.ndarray
    raw: np.ndarray
    renorm: float


def build_grid(dim: int, n_per_axis: int, vmax: float = 8.0,
               kind: str = "uniform-midpoint") -> VelocityGrid:
    """Build a velocity grid with per-axis mirror symmetry.

    ``n_per_axis`` must be even for both families: odd Gauss-Hermite rules
    place a node at v = 0, which the wall reflection cannot classify as
    incoming or outgoing.
    """
    problems = []
    if dim not in (1, 2):
        problems.append(f"velocity dim must be 1 or 2, got {dim}")
    if n_per_axis < 4 or n_per_axis % 2 != 0:
        problems.append(f"n_per_axis must be even and >= 4, got {n_per_axis}")
    if kind not in GRID_KINDS:
        problems.append(f"grid kind must be one of {GRID_KINDS}, got {kind!r}")
    if kind == "uniform-midpoint" and not vmax > 0:
        problems.append(f"vmax must be positive, got {vmax}")
    if problems:
        raise ConfigError(problems)

    if kind == "uniform-midpoint":
        h = 2.0 * vmax / n_per_axis
        x = -vmax + (np.arange(n_per_axis) + 0.5) * h
        w = np.full(n_per_axis, h)
    else:
        x, w = hermegauss(n_per_axis)
        w = w * np.exp(x * x / 2.0)
    # enforce exact antisymmetry of nodes / symmetry of weights bitwise
    x = (x - x[::-1]) / 2.0
    w = (w + w[::-1]) / 2.0

    if dim == 1:
        nodes = x[:, None]
        weights = w.copy()
        flip = np.arange(n_per_axis)[::-1].copy()
    else:
        V1, V2 = np.meshgrid(x, x, indexing="ij")
        nodes = np.column_stack([V1.ravel(), V2.ravel()])
        weights = (w[:, None] * w[None, :]).ravel()
        idx = np.arange(n_per_axis * n_per_axis).reshape(n_per_axis, n_per_axis)
        flip = idx[::-1, :].ravel()

    m_raw = np.exp(-0.5 * np.sum(nodes * nodes, axis=1)) / (2.0 * np.pi) ** (dim / 2.0)
    renorm = 1.0 / float(np.sum(weights * m_raw))
    m = m_raw * renorm

    grid = VelocityGrid(
        dim=dim, kind=kind, nodes=nodes, weights=weights,
        vmax=float(np.max(np.abs(x))), axis_nodes=x, axis_weights=w,
        m=m, m_raw=m_raw, renorm=renorm, flip_v1=flip,
    )
    for a in (grid.nodes, grid.weights, grid.axis_nodes, grid.axis_weights,
              grid.m, grid.m_raw, grid.flip_v1):
        a.setflags(write=False)
    return grid


def maxwellian(grid: VelocityGrid) -> DiscreteMaxwellian:
    """Discrete Maxwellian of the grid (renormalised to exact unit mass)."""
    return DiscreteMaxwellian(values=grid.m, raw=grid.m_raw, renorm=grid.renorm)


def inner_dnu(f: np.ndarray, g: np.ndarray, grid: VelocityGrid) -> np.ndarray:
    """<f, g>_dnu = sum_i w_i f_i g_i / M_i over the trailing axis."""
    return np.sum(f * g * (grid.weights / grid.m), axis=-1)


def norm_dnu(f: np.ndarray, grid: VelocityGrid) -> np.ndarray:
    """dnu norm over the trailing axis."""
    return np.sqrt(inner_dnu(f, f, grid))


def project_maxwellian(f: np.ndarray, grid: VelocityGrid):
    """Split f = rho*M + f_perp with rho = sum_i w_i f_i (local mass).

    Because M has exact discrete unit mass, f_perp has zero mass and the
    split is dnu-orthogonal to round-off.
    """
    rho = np.sum(f * grid.weights, axis=-1)
    f_perp = f - rho[..., None] * grid.m
    return rho, f_perp


def moments(f: np.ndarray, grid: VelocityGrid):
    """Plain velocity moments (rho, j, S) over the trailing axis.

    rho = sum w f,  j_k = sum w v_k f,  S_km = sum w (v_k v_m - delta_km) f.
    S is the centred second moment entering the stress-divergence estimate.
    """
    w = grid.weights
    rho = np.sum(f * w, axis=-1)
    j = np.einsum("...i,i,ik->...k", f, w, grid.nodes)
    vv = grid.nodes[:, :, None] * grid.nodes[:, None, :] - np.eye(grid.dim)[None, :, :]
    S = np.einsum("...i,i,ikm->...km", f, w, vv)
    return rho, j, S


def centered_moment_norms(grid: VelocityGrid):
    """Grid-exact constants of the moment estimates.

    Returns (c_j, D_h):
      c_j  = max_k |v_k M|_dnu      so |j|  <= sqrt(dim) * c_j * |f_perp|_dnu,
      D_h  = Frobenius dnu-norm of (v (x) v - I) M
             so |S|_F <= D_h * |f_perp|_dnu.
    """
    cj = 0.0
    for k in range(grid.dim):
        cj = max(cj, float(norm_dnu(grid.nodes[:, k] * grid.m, grid)))
    vv = grid.nodes[:, :, None] * grid.nodes[:, None, :] - np.eye(grid.dim)[None, :, :]
    total = 0.0
    for k in range(grid.dim):
        for mdx in range(grid.dim):
            total += float(inner_dnu(vv[:, k, mdx] * grid.m, vv[:, k, mdx] * grid.m, grid))
    return cj, float(np.sqrt(total))
