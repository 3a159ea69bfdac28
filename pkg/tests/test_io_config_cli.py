import struct
from pathlib import Path

import numpy as np
import pytest

from cascadelab import io as cio
from cascadelab.cli import main
from cascadelab.config import (
    ConfigError,
    PRESETS,
    canonical_text,
    config_hash,
    disperse_params_from,
    parse_config,
    run_params_from,
)
from cascadelab.grid import Grid, forward_transform, inverse_transform
from cascadelab.solver import (
    ForcingSpec,
    FlowState,
    random_spectrum_velocity,
    run as solver_run,
)


class TestSnapshotFormat:
    def test_roundtrip(self, tmp_path):
        grid = Grid(2, 16)
        rng = np.random.default_rng(0)
        u = rng.standard_normal((2,) + grid.shape)
        f = rng.standard_normal((2,) + grid.shape)
        path = tmp_path / "snap.cscd"
        cio.write_snapshot_file(path, grid, 1.25, 0.01, [u[0], u[1], f[0], f[1]])
        snap = cio.read_snapshot_file(path)
        assert snap["t"] == 1.25 and snap["nu"] == 0.01
        assert snap["grid"].dim == 2 and snap["grid"].n == 16
        back = inverse_transform(grid, snap["uh"])
        assert np.max(np.abs(back - u)) < 1e-14
        fback = inverse_transform(grid, snap["fh"])
        assert np.max(np.abs(fback - f)) < 1e-14

    def test_header_layout(self, tmp_path):
        # external contract: magic CSCD, u32 version/dim/n, f64 t/nu, u32 count
        grid = Grid(3, 8)
        path = tmp_path / "snap.cscd"
        cio.write_snapshot_file(
            path, grid, 2.5, 0.125, [np.zeros(grid.shape)] * 3
        )
        raw = path.read_bytes()
        magic, version, dim, n = struct.unpack_from("<4sIII", raw, 0)
        t, nu = struct.unpack_from("<dd", raw, 16)
        (count,) = struct.unpack_from("<I", raw, 32)
        assert magic == b"CSCD" and version == 1
        assert dim == 3 and n == 8
        assert t == 2.5 and nu == 0.125 and count == 3
        assert len(raw) == 36 + 3 * 8 * 8**3

    def test_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "bad.cscd"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ValueError):
            cio.read_snapshot_file(path)

    def test_manifest_roundtrip(self, tmp_path):
        entries = {"a": "1", "b": "x=y", "nu": "0.001"}
        cio.write_manifest(tmp_path / "m.txt", entries)
        back = cio.read_manifest(tmp_path / "m.txt")
        assert back == entries


class TestConfig:
    def test_parse_and_hash(self):
        text = """
# comment
[run]
dim = 2
n = 32           # trailing comment
dt = 1e-3
n_steps = 5
"""
        sections = parse_config(text)
        assert sections["run"]["n"] == "32"
        h1 = config_hash(sections)
        sections2 = parse_config(canonical_text(sections))
        assert config_hash(sections2) == h1
        sections2["run"]["n"] = "64"
        assert config_hash(sections2) != h1

    def test_errors_carry_line_numbers(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config("[run]\nnot a kv pair\n")
        with pytest.raises(ConfigError, match="line 1"):
            parse_config("key = value\n")
        with pytest.raises(ConfigError, match="line 1"):
            parse_config("[unclosed\n")

    def test_grid_unit_scales(self):
        sections = parse_config("[run]\ndim=2\nn=64\ndt=1e-3\nn_steps=0\n[disperse]\nells = 8h, 0.5\n")
        grid_h = 2 * np.pi / 64
        d = disperse_params_from(sections, grid_h)
        assert abs(d.ells[0] - 0.5) < 1e-15 or abs(d.ells[0] - 8 * grid_h) < 1e-15
        assert len(d.ells) == 2

    def test_presets_parse(self):
        for name, text in PRESETS.items():
            sections = parse_config(text)
            p = run_params_from(sections)
            assert p.n >= 8, name

    def test_run_params_validation(self):
        with pytest.raises(ConfigError):
            run_params_from(parse_config("[run]\ndim=4\nn=32\ndt=1e-3\nn_steps=1\n"))
        with pytest.raises(ConfigError):
            run_params_from(parse_config("[run]\ndim=2\nn=31\ndt=1e-3\nn_steps=1\n"))


class TestRunRestart:
    def test_restart_reproduces_continuation(self, tmp_path):
        grid = Grid(2, 48)
        uh0 = random_spectrum_velocity(grid, 0.4, 4.0, seed=3)
        spec = ForcingSpec(kind="shell", k_f=6.0, epsilon_in=0.05, seed=5)
        full = solver_run(
            tmp_path / "full", grid, uh0, nu=0.01, dt=2e-3, n_steps=60,
            forcing_spec=spec, snapshot_every=30,
        )
        half = solver_run(
            tmp_path / "half", grid, uh0, nu=0.01, dt=2e-3, n_steps=30,
            forcing_spec=spec, snapshot_every=30,
        )
        snap = cio.read_snapshot_file(tmp_path / "half" / "final.cscd")
        cont = solver_run(
            tmp_path / "cont", grid, snap["uh"], nu=0.01, dt=2e-3, n_steps=30,
            forcing_spec=spec, t0=half.t, step0=half.step_index,
        )
        scale = np.max(np.abs(full.uh))
        assert np.max(np.abs(cont.uh - full.uh)) < 1e-13 * max(1.0, scale)

    def test_zero_run_all_snapshots_zero(self, tmp_path):
        grid = Grid(2, 16)
        uh0 = np.zeros((2,) + grid.spectral_shape, complex)
        solver_run(tmp_path / "z", grid, uh0, nu=0.0, dt=1e-3, n_steps=5,
                   snapshot_every=1)
        for snap_path in cio.list_snapshots(tmp_path / "z"):
            snap = cio.read_snapshot_file(snap_path)
            assert np.max(np.abs(snap["uh"])) == 0.0


MINI_DECAY = """\
[run]
dim = 2
n = 32
nu = 0.02
dt = 2e-3
n_steps = 50
ic = random
ic_energy = 0.3
ic_k_peak = 3
forcing = none
snapshot_every = 25
seed = 9
"""

MINI_FORCED = """\
[run]
dim = 2
n = 32
nu = 0.01
dt = 1e-3
n_steps = 40
ic = zero
forcing = shell
k_f = 5
epsilon_in = 0.05
snapshot_every = 20
seed = 4
"""


class TestCLI:
    def test_minimal_decay_energy_monotone(self, tmp_path):
        cfg = tmp_path / "decay.cfg"
        cfg.write_text(MINI_DECAY)
        out = tmp_path / "out"
        assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
        ts = cio.read_timeseries(out / "timeseries.csv")
        e = ts["energy"]
        assert np.all(np.diff(e) <= 1e-15)

    def test_determinism_byte_identical(self, tmp_path):
        cfg = tmp_path / "forced.cfg"
        cfg.write_text(MINI_FORCED)
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        assert main(["run", "--config", str(cfg), "--out", str(out1)]) == 0
        assert main(["run", "--config", str(cfg), "--out", str(out2)]) == 0
        b1 = (out1 / "timeseries.csv").read_bytes()
        b2 = (out2 / "timeseries.csv").read_bytes()
        assert b1 == b2
        s1 = (out1 / "final.cscd").read_bytes()
        s2 = (out2 / "final.cscd").read_bytes()
        assert s1 == s2

    def test_config_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("[run]\ndim = seven\nn = 32\ndt = 1e-3\nn_steps = 1\n")
        assert main(["run", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
        assert main(["run", "--out", str(tmp_path / "y")]) == 2

    def test_missing_data_exit_code(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        assert main(["disperse", str(empty)]) == 4

    def test_diagnose_spectrum_matches_timeseries_energy(self, tmp_path):
        cfg = tmp_path / "forced.cfg"
        cfg.write_text(MINI_FORCED)
        out = tmp_path / "run"
        assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
        assert main(["diagnose", str(out)]) == 0
        ts = cio.read_timeseries(out / "timeseries.csv")
        with open(out / "diagnose" / "spectrum.csv") as fh:
            fh.readline()
            fh.readline()
            total = sum(float(line.split(",")[1]) for line in fh if line.strip())
        assert abs(total - ts["energy"][-1]) < 1e-8 * max(ts["energy"][-1], 1e-12)

    def test_four_fifths_header_coefficient_3d(self, tmp_path):
        cfg = tmp_path / "threed.cfg"
        cfg.write_text(
            "[run]\ndim = 3\nn = 24\nnu = 0.01\ndt = 1e-3\nn_steps = 0\n"
            "ic = random\nic_energy = 0.3\nic_k_peak = 2\nsnapshot_every = 1\nseed = 6\n"
            "[diagnose]\nells = 4h, 6h\n"
        )
        out = tmp_path / "r3"
        assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
        assert main(["diagnose", str(out)]) == 0
        header = (out / "diagnose" / "four_fifths.csv").read_text().splitlines()[0]
        assert "coefficient=-0.8" in header

    def test_report_aggregation_and_hash_guard(self, tmp_path):
        rep1 = {
            "ell": "0.5", "radius": "1.5", "t0": "0.0", "a0": "0.1",
            "om_lagrangian": "0.2", "om_eulerian": "0.21",
            "om_eulerian_sampled": "0.2", "pi_mean": "-0.1",
            "dissipation": "0.02", "input_rate": "0.1",
            "config_hash": "aaaa", "warnings": "",
        }
        rep2 = dict(rep1, t0="1.0", a0="0.12")
        cio.write_report(tmp_path / "report_a.txt", rep1)
        cio.write_report(tmp_path / "report_b.txt", rep2)
        out = tmp_path / "summary.csv"
        assert main(["report", str(tmp_path), "--out", str(out)]) == 0
        text = out.read_text()
        assert "0.11" in text  # mean of a0
        rep3 = dict(rep1, config_hash="bbbb")
        cio.write_report(tmp_path / "report_c.txt", rep3)
        assert main(["report", str(tmp_path), "--out", str(out)]) == 2

    def test_single_report_echo(self, tmp_path):
        rep = {
            "ell": "0.5", "radius": "1.5", "t0": "0.0", "a0": "0.25",
            "om_lagrangian": "0.5", "om_eulerian": "0.5",
            "om_eulerian_sampled": "0.5", "pi_mean": "-0.25",
            "dissipation": "0.0", "input_rate": "0.0",
            "config_hash": "cccc", "warnings": "",
        }
        cio.write_report(tmp_path / "report_one.txt", rep)
        from cascadelab.experiments import aggregate_reports

        summary = aggregate_reports([tmp_path / "report_one.txt"])
        row = summary["rows"][0]
        assert row["a0"] == 0.25 and row["a0_stderr"] == 0.0
