"""Deterministic output writing.

Numbers are serialized with repr (shortest round-trip form), JSON keys are
sorted, and every file is written to a temporary name in the target
directory and atomically renamed, so a crashed run never leaves a partial
file under the final name.  Nothing here depends on the worker count.
"""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile

import numpy as np

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def _atomic_write(path: str, data: str | bytes) -> None:
    mode = "wb" if isinstance(data, bytes) else "w"
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _cell(value) -> str:
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(value)


def write_csv(path: str, header: list, rows: list) -> None:
    buf = []
    buf.append(",".join(header))
    for row in rows:
        buf.append(",".join(_cell(v) for v in row))
    _atomic_write(path, "\n".join(buf) + "\n")


def jsonify(obj):
    """Recursively convert to JSON-safe types; non-finite floats become None."""
    if isinstance(obj, dict):
        return {str(k): jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonify(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path: str, obj) -> None:
    text = json.dumps(jsonify(obj), indent=2, sort_keys=True)
    _atomic_write(path, text + "\n")


def write_text(path: str, text: str) -> None:
    _atomic_write(path, text)


def _save(fig, path: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_run_figures(outdir: str, reports: list, ledger) -> list:
    """Decay curve, entropy budget, boundary dissipation -> PNG files."""
    ts = np.array([r.t for r in reports])
    dist2 = np.array([r.dist2 for r in reports])
    H = np.array([r.H for r in reports])
    paths = []

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.semilogy(ts, np.maximum(dist2, 1e-300), label="||f - eq||^2")
    ax.semilogy(ts, np.maximum(H, 1e-300), label="entropy H")
    if np.isfinite(ledger.omega):
        ref = H[0] * np.exp(-(ledger.omega / ledger.C_eta) * ts)
        ax.semilogy(ts, np.maximum(ref, 1e-300), "--",
                    label="certified envelope")
    ax.set_xlabel("t")
    ax.set_title("decay vs certified rate")
    ax.legend()
    p = os.path.join(outdir, "decay.png")
    _save(fig, p)
    paths.append(p)

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for name in ("T1", "T2", "T3", "T4", "T5"):
        vals = np.array([getattr(r, name) for r in reports])
        ax.plot(ts, vals, label=name)
    ax.set_xlabel("t")
    ax.set_title("entropy budget terms")
    ax.legend(ncol=3, fontsize=8)
    p = os.path.join(outdir, "budget.png")
    _save(fig, p)
    paths.append(p)

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for name in ("bd_left", "bd_right"):
        vals = np.array([getattr(r, name) for r in reports])
        ax.semilogy(ts, np.maximum(vals, 1e-300), label=name)
    ax.set_xlabel("t")
    ax.set_title("boundary dissipation per wall")
    ax.legend()
    p = os.path.join(outdir, "boundary.png")
    _save(fig, p)
    paths.append(p)
    return paths


def render_uq_figures(outdir: str, records: list, fits: list) -> list:
    ts = np.array([r.t for r in records])
    norms = np.array([r.norms for r in records])
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for lev in range(norms.shape[1]):
        ax.semilogy(ts, np.maximum(norms[:, lev], 1e-300),
                    label=f"||g^{lev}||")
        fit = fits[lev]
        if fit is not None:
            env = np.exp(-fit.a_fit * ts) * np.polyval(fit.coeffs[::-1], ts)
            ax.semilogy(ts, np.maximum(np.abs(env), 1e-300), "--",
                        label=f"envelope {lev}")
    ax.set_xlabel("t")
    ax.set_title("sensitivity levels and fitted envelopes")
    ax.legend(fontsize=8)
    p = os.path.join(outdir, "uq_levels.png")
    _save(fig, p)
    return [p]


def render_kl_figures(outdir: str, basis, analytic=None) -> list:
    paths = []
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    k = np.arange(1, min(basis.n, 32) + 1)
    ax.semilogy(k, np.maximum(basis.eigenvalues[:k.size], 1e-300), "o-",
                label="Nystrom")
    if analytic is not None:
        ax.semilogy(k, analytic[:k.size], "x--", label="analytic")
    ax.set_xlabel("mode")
    ax.set_title("covariance eigenvalues")
    ax.legend()
    p = os.path.join(outdir, "kl_spectrum.png")
    _save(fig, p)
    paths.append(p)

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for i in range(min(basis.d, 4)):
        ax.plot(basis.tgrid, basis.psi[:, i], label=f"psi_{i + 1}")
    ax.set_xlabel("t")
    ax.set_title("leading eigenfunctions")
    ax.legend()
    p = os.path.join(outdir, "kl_modes.png")
    _save(fig, p)
    paths.append(p)
    return paths
