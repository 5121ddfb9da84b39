"""Config schema resolution and the command-line surface (exit codes,
output files, determinism)."""

import json
import os

import numpy as np
import pytest
import yaml

from kinslab.cli import main
from kinslab.config import (build_problem, default_config, dump_config,
                            initial_jets, initial_state, load_config,
                            resolve_config)
from kinslab.errors import ConfigError
from kinslab.solver import equilibrium

SMALL = {
    "mesh": {"nx": 16},
    "velocity": {"n": 16},
    "solver": {"dt": 0.005, "t_end": 1.0, "cadence": 5},
    "diagnostics": {"fit_t0": 0.1, "fit_t1": 1.0},
    "uq": {"lmax": 1, "init_z_coeff": 0.5},
    "sigma": {"z_coupling": "affine"},
    "kl": {"n": 64, "samples": 10000},
}


def _write_cfg(tmp_path, data, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


class TestSchema:
    def test_empty_input_gives_defaults(self):
        assert resolve_config(None) == default_config()
        assert resolve_config({}) == default_config()

    def test_every_violation_reported_with_dotted_path(self):
        raw = {"mesh": {"nx": 16, "bogus": 1},
               "velocity": {"n": "many"},
               "nonsense": True,
               "bc": {"c": 1.7}}
        with pytest.raises(ConfigError) as err:
            resolve_config(raw)
        msgs = "\n".join(err.value.violations)
        assert "mesh.bogus: unknown key" in msgs
        assert "velocity.n" in msgs
        assert "nonsense: unknown key" in msgs
        assert "bc.c" in msgs
        assert len(err.value.violations) == 4

    def test_int_promotes_to_float_but_not_bool(self):
        cfg = resolve_config({"solver": {"dt": 1}})
        assert cfg["solver"]["dt"] == 1.0
        assert isinstance(cfg["solver"]["dt"], float)
        with pytest.raises(ConfigError):
            resolve_config({"mesh": {"nx": True}})

    def test_range_checks(self):
        for raw in ({"solver": {"dt": -0.1}},
                    {"solver": {"t_end": 0}},
                    {"uq": {"lmax": 9}},
                    {"solver": {"initial_family": "delta"}},
                    {"diagnostics": {"transient_frac": 1.0}}):
            with pytest.raises(ConfigError):
                resolve_config(raw)

    def test_dump_load_roundtrip(self, tmp_path):
        cfg = resolve_config(SMALL)
        path = tmp_path / "echo.yaml"
        path.write_text(dump_config(cfg))
        assert load_config(str(path)) == cfg

    def test_missing_file(self):
        with pytest.raises(ConfigError, match="No such file"):
            load_config("/nonexistent/nowhere.yaml")

    def test_unparseable_file(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("solver: [unclosed")
        with pytest.raises(ConfigError, match="not parseable"):
            load_config(str(path))


class TestAssembly:
    def test_initial_state_carries_unit_mass(self):
        cfg = resolve_config(SMALL)
        problem = build_problem(cfg)
        f0 = initial_state(problem, cfg)
        mass = float(np.sum(f0 @ problem.grid.weights) * problem.mesh.dx)
        assert mass == pytest.approx(1.0, abs=1e-14)
        assert np.max(np.abs(f0 - equilibrium(problem, 1.0))) > 0.01

    def test_equilibrium_family_is_exact(self):
        cfg = resolve_config({"solver": {"initial_family": "equilibrium"}})
        problem = build_problem(cfg)
        np.testing.assert_array_equal(initial_state(problem, cfg),
                                      equilibrium(problem, 1.0))

    def test_initial_jets_differentiate_the_amplitude(self):
        cfg = resolve_config(SMALL)
        problem = build_problem(cfg)
        g = initial_jets(problem, cfg, 2)
        s = cfg["solver"]
        x = problem.mesh.centers
        cosine = np.cos(2 * np.pi * s["initial_mode"] * x / problem.mesh.lx)
        want = equilibrium(problem, 1.0) * (
            s["initial_amplitude"] * cfg["uq"]["init_z_coeff"] * cosine)[:, None]
        np.testing.assert_allclose(g[1], want, atol=1e-15)
        assert np.all(g[2] == 0.0)

    def test_jets_match_finite_difference_in_z(self):
        cfg = resolve_config(SMALL)
        problem = build_problem(cfg)
        g = initial_jets(problem, cfg, 1)
        dz = 1e-6
        fd = (initial_state(problem, cfg, z=dz)
              - initial_state(problem, cfg, z=-dz)) / (2 * dz)
        np.testing.assert_allclose(g[1], fd, atol=1e-9)

    def test_zero_potential_is_omitted(self):
        assert build_problem(resolve_config(SMALL)).potential is None
        cfg = resolve_config({**SMALL,
                              "potential": {"family": "cosine-well",
                                            "amplitude": 0.5}})
        assert build_problem(cfg).potential is not None


class TestCli:
    def test_run_writes_reports_and_figures(self, tmp_path, capsys):
        cfg_path = _write_cfg(tmp_path, SMALL)
        out = tmp_path / "out"
        assert main(["run", "--config", cfg_path, "--out", str(out)]) == 0
        for name in ("config.echo", "ledger.json", "steps.csv", "summary.json"):
            assert (out / name).exists(), name
        assert list(out.glob("*.png"))
        assert not list(out.glob("*.tmp"))
        summary = json.loads((out / "summary.json").read_text())
        # cosine initial data is purely macroscopic, so the field's
        # backward-difference derivative can outrun the microscopic bound
        # for the first few records; nothing else may ever flag
        assert set(summary["inequality_failures"]) <= {"t5"}
        assert summary["equivalence_failures"] == 0
        assert "records" in capsys.readouterr().out

    def test_run_is_byte_deterministic(self, tmp_path):
        cfg_path = _write_cfg(tmp_path, SMALL)
        a, b = tmp_path / "a", tmp_path / "b"
        main(["run", "--config", cfg_path, "--out", str(a)])
        main(["run", "--config", cfg_path, "--out", str(b)])
        for name in ("steps.csv", "summary.json", "ledger.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_uq_with_fd_check(self, tmp_path, capsys):
        cfg_path = _write_cfg(tmp_path, SMALL)
        out = tmp_path / "uq"
        rc = main(["uq", "--config", cfg_path, "--out", str(out),
                   "--fd-check", "0.01"])
        assert rc == 0
        summary = json.loads((out / "uq_summary.json").read_text())
        assert summary["fd_gap_level1"] < 1e-3
        assert summary["entropy_flags"] == {"entropy": True,
                                            "source_norm": True,
                                            "source_current": True}
        assert (out / "uq_levels.csv").exists()

    def test_kl_subcommand(self, tmp_path):
        cfg_path = _write_cfg(tmp_path, SMALL)
        out = tmp_path / "kl"
        assert main(["kl", "--config", cfg_path, "--out", str(out)]) == 0
        gram = json.loads((out / "kl_gram.json").read_text())
        assert gram["offdiag_ok"] and gram["diag_ok"]
        assert (out / "kl_eigenvalues.csv").exists()
        assert (out / "kl_modes.csv").exists()

    def test_gap_and_poisson_check(self, tmp_path, capsys):
        cfg_path = _write_cfg(tmp_path, SMALL)
        assert main(["gap", "--config", cfg_path]) == 0
        assert "tau_h" in capsys.readouterr().out
        assert main(["poisson-check", "--config", cfg_path]) == 0
        assert "FAIL" not in capsys.readouterr().out

    def test_config_errors_exit_2(self, tmp_path, capsys):
        bad = _write_cfg(tmp_path, {"mesh": {"nx": 8, "oops": 1},
                                    "bc": {"c": 2.0}})
        assert main(["run", "--config", bad]) == 2
        err = capsys.readouterr().err
        assert "mesh.oops" in err and "bc.c" in err
        assert main(["run", "--config", str(tmp_path / "absent.yaml")]) == 2

    def test_cfl_violation_exits_2(self, tmp_path, capsys):
        bad = _write_cfg(tmp_path, {**SMALL, "solver": {"dt": 0.5, "t_end": 1.0}})
        assert main(["run", "--config", bad]) == 2
        assert "CFL" in capsys.readouterr().err

    def test_assumption_failure_exits_3(self, tmp_path, capsys):
        bad = _write_cfg(tmp_path, {"sigma": {"family": "gaussian-bump",
                                              "bump_amplitude": -2.0}})
        assert main(["gap", "--config", bad]) == 3
        assert "lower bound" in capsys.readouterr().err

    def test_verify_tamper_fails_exactly_one_check(self, capsys):
        assert main(["verify", "--suite", "collision"]) == 0
        capsys.readouterr()
        assert main(["verify", "--suite", "collision", "--tamper"]) == 1
        out = capsys.readouterr().out
        assert out.count("[FAIL]") == 1
