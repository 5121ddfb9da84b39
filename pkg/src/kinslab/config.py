"""Run configuration: YAML schema with full-default resolution.

Every key has a default; unknown keys at any nesting level are rejected;
all violations in a file are reported together.  The resolved config
(defaults filled in) is echoed next to the outputs of every run, so a run
directory is self-describing.
"""

from __future__ import annotations

import copy
import io

import numpy as np
import yaml

from .boundary import build_mesh, make_bc
from .collision import CrossSectionSpec, assemble_kernel
from .errors import ConfigError
from .kl import CovarianceKernel
from .poisson import build_potential
from .solver import Problem, SolverConfig, equilibrium
from .velocity import build_grid

# (default, type) per key; nested dicts are sections.
SCHEMA = {
    "mesh": {"nx": (32, int), "lx": (1.0, float)},
    "velocity": {"dim": (1, int), "n": (32, int), "vmax": (8.0, float),
                 "kind": ("uniform-midpoint", str)},
    "sigma": {"family": ("constant", str), "base": (1.0, float),
              "bump_amplitude": (0.0, float), "bump_width": (1.0, float),
              "z_coupling": ("none", str), "z_coeff": (0.3, float),
              "lambda_min": (0.05, float)},
    "bc": {"c": (0.5, float)},
    "potential": {"family": ("zero", str), "amplitude": (0.0, float)},
    "solver": {"dt": (0.002, float), "t_end": (8.0, float),
               "cfl_target": (0.9, float), "collision_mode": ("exponential", str),
               "cadence": (10, int), "initial_family": ("cosine", str),
               "initial_amplitude": (0.2, float), "initial_mode": (1, int)},
    "diagnostics": {"n_probes": (64, int), "fit_t0": (1.0, float),
                    "fit_t1": (8.0, float), "transient_frac": (0.2, float)},
    "uq": {"lmax": (2, int), "z": (0.0, float), "fd_delta": (0.01, float),
           "mode": ("jet", str), "init_z_coeff": (0.0, float)},
    "kl": {"kernel": ("brownian", str), "n": (512, int), "T": (1.0, float),
           "ell": (0.3, float), "energy": (0.95, float),
           "samples": (100000, int)},
    "seed": (7, int),
    "output_dir": ("out", str),
}

INITIAL_FAMILIES = ("cosine", "equilibrium")


def default_config() -> dict:
    out = {}
    for key, val in SCHEMA.items():
        if isinstance(val, dict):
            out[key] = {k: v[0] for k, v in val.items()}
        else:
            out[key] = val[0]
    return copy.deepcopy(out)


def _coerce(value, want, path, bad):
    if want is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            bad.append(f"{path}: expected integer, got {value!r}")
            return None
        return value
    if want is str:
        if not isinstance(value, str):
            bad.append(f"{path}: expected string, got {value!r}")
            return None
        return value
    bad.append(f"{path}: expected {want.__name__}, got {value!r}")
    return None


def resolve_config(raw: dict | None) -> dict:
    """Merge user data over the defaults, collecting every violation."""
    raw = {} if raw is None else raw
    bad = []
    if not isinstance(raw, dict):
        raise ConfigError([f"top level must be a mapping, got {type(raw).__name__}"])
    out = default_config()
    for key, value in raw.items():
        if key not in SCHEMA:
            bad.append(f"{key}: unknown key")
            continue
        spec = SCHEMA[key]
        if isinstance(spec, dict):
            if not isinstance(value, dict):
                bad.append(f"{key}: expected a section mapping, got {value!r}")
                continue
            for sub, sval in value.items():
                if sub not in spec:
                    bad.append(f"{key}.{sub}: unknown key")
                    continue
                got = _coerce(sval, spec[sub][1], f"{key}.{sub}", bad)
                if got is not None:
                    out[key][sub] = got
        else:
            got = _coerce(value, spec[1], key, bad)
            if got is not None:
                out[key] = got
    _check_ranges(out, bad)
    if bad:
        raise ConfigError(bad)
    return out


def _check_ranges(cfg: dict, bad: list) -> None:
    if cfg["solver"]["initial_family"] not in INITIAL_FAMILIES:
        bad.append(f"solver.initial_family: must be one of {INITIAL_FAMILIES}, "
                   f"got {cfg['solver']['initial_family']!r}")
    if not 0.0 <= cfg["bc"]["c"] <= 1.0:
        bad.append(f"bc.c: accommodation must be in [0, 1], got {cfg['bc']['c']}")
    if cfg["solver"]["dt"] <= 0:
        bad.append(f"solver.dt: must be positive, got {cfg['solver']['dt']}")
    if cfg["solver"]["t_end"] <= 0:
        bad.append(f"solver.t_end: must be positive, got {cfg['solver']['t_end']}")
    if cfg["solver"]["cadence"] < 1:
        bad.append(f"solver.cadence: must be >= 1, got {cfg['solver']['cadence']}")
    if not 0 <= cfg["uq"]["lmax"] <= 4:
        bad.append(f"uq.lmax: must be in 0..4, got {cfg['uq']['lmax']}")
    if not 0.0 <= cfg["diagnostics"]["transient_frac"] < 1.0:
        bad.append("diagnostics.transient_frac: must be in [0, 1), "
                   f"got {cfg['diagnostics']['transient_frac']}")


def load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            try:
                raw = yaml.safe_load(fh)
            except yaml.YAMLError as exc:
                raise ConfigError([f"{path}: not parseable: {exc}"])
    except OSError as exc:
        raise ConfigError([f"{path}: {exc.strerror or exc}"])
    return resolve_config(raw)


def dump_config(cfg: dict) -> str:
    buf = io.StringIO()
    yaml.safe_dump(cfg, buf, sort_keys=True, default_flow_style=False)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# assembly


def sigma_spec(cfg: dict) -> CrossSectionSpec:
    s = cfg["sigma"]
    return CrossSectionSpec(family=s["family"], base=s["base"],
                            bump_amplitude=s["bump_amplitude"],
                            bump_width=s["bump_width"],
                            z_coupling=s["z_coupling"], z_coeff=s["z_coeff"],
                            lambda_min=s["lambda_min"])


def build_problem(cfg: dict, z: float | None = None) -> Problem:
    grid = build_grid(cfg["velocity"]["dim"], cfg["velocity"]["n"],
                      cfg["velocity"]["vmax"], cfg["velocity"]["kind"])
    mesh = build_mesh(cfg["mesh"]["nx"], cfg["mesh"]["lx"])
    zz = cfg["uq"]["z"] if z is None else z
    kernel = assemble_kernel(sigma_spec(cfg), grid, zz)
    bc = make_bc(grid, cfg["bc"]["c"])
    pot = None
    if cfg["potential"]["family"] != "zero" and cfg["potential"]["amplitude"] != 0.0:
        pot = build_potential(mesh, cfg["potential"]["family"],
                              cfg["potential"]["amplitude"])
    return Problem(grid=grid, mesh=mesh, kernel=kernel, bc=bc, potential=pot)


def solver_config(cfg: dict) -> SolverConfig:
    s = cfg["solver"]
    return SolverConfig(dt=s["dt"], t_end=s["t_end"], cfl_target=s["cfl_target"],
                        collision_mode=s["collision_mode"], cadence=s["cadence"])


def initial_state(problem: Problem, cfg: dict, z: float | None = None) -> np.ndarray:
    """f0 = eq * (1 + a(z) cos(2 pi mode x / Lx)); a(z) = a0 (1 + k_z z).

    The cosine carries no mass, so total mass is 1 for every z.
    """
    s = cfg["solver"]
    eq = equilibrium(problem, mass=1.0)
    if s["initial_family"] == "equilibrium" or s["initial_amplitude"] == 0.0:
        return eq
    zz = cfg["uq"]["z"] if z is None else z
    amp = s["initial_amplitude"] * (1.0 + cfg["uq"]["init_z_coeff"] * zz)
    x = problem.mesh.centers
    shape = 1.0 + amp * np.cos(2.0 * np.pi * s["initial_mode"] * x / problem.mesh.lx)
    return eq * shape[:, None]


def initial_jets(problem: Problem, cfg: dict, lmax: int) -> np.ndarray:
    """Stacked (g^0 .. g^lmax)(0): exact z-derivatives of initial_state."""
    g = np.zeros((lmax + 1, problem.mesh.nx, problem.grid.n))
    g[0] = initial_state(problem, cfg)
    if lmax >= 1 and cfg["uq"]["init_z_coeff"] != 0.0 \
            and cfg["solver"]["initial_family"] == "cosine":
        s = cfg["solver"]
        eq = equilibrium(problem, mass=1.0)
        x = problem.mesh.centers
        cosine = np.cos(2.0 * np.pi * s["initial_mode"] * x / problem.mesh.lx)
        g[1] = eq * (s["initial_amplitude"] * cfg["uq"]["init_z_coeff"]
                     * cosine)[:, None]
    return g


def kl_kernel(cfg: dict) -> CovarianceKernel:
    k = cfg["kl"]
    return CovarianceKernel(family=k["kernel"], T=k["T"], ell=k["ell"])
