import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lagchaos.errors import BadMagicError, CheckpointError, ConfigurationError, DomainError
from lagchaos.lab import Checkpoint, checkpoint_load, checkpoint_save, load_config, moment_monitor, super_lyapunov_V
from lagchaos.lab.checkpoint import from_bytes, to_bytes
from lagchaos.lab.cli import main
from lagchaos.lab.config import ExperimentConfig, parse_text
from lagchaos.lab.monitors import MomentMonitor, growth_flag
from lagchaos.lab.run import worker_count
from lagchaos.solver import SnsState
from lagchaos.spectral import SpectralVelocity

from conftest import random_velocity

SMALL = ["--set", "kmax=10", "--set", "gridsize=32", "--set", "burn_in=0.5",
         "--set", "renorm_interval=0.05", "--horizon", "5"]


def cli(tmp_path, name, *args):
    out = tmp_path / name
    code = main([*args, "--out", str(out)])
    return code, out


class TestConfig:
    def test_file_then_flags(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("# comment\nseed = 4\nhorizon = 300  # inline\ncheckpoint-every = 10\noutput-path = a\n")
        cfg = load_config(p, {"seed": 9, "horizon": None})
        assert (cfg.seed, cfg.horizon, cfg.checkpoint_every, cfg.out) == (9, 300.0, 10.0, "a")

    @pytest.mark.parametrize("text", ["nonsense\n", "colour = red\n", "seed = x\n", "resume = maybe\n"])
    def test_bad_lines(self, text):
        with pytest.raises(ConfigurationError):
            parse_text(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_config(tmp_path / "nope.cfg")

    @pytest.mark.parametrize("kw", [dict(experiment="x"), dict(nu=0.0), dict(ensemble=0), dict(seed=-1),
                                    dict(experiment="malliavin", tau0=0.5, T0=0.4)])
    def test_validation(self, kw):
        with pytest.raises(ConfigurationError):
            ExperimentConfig(**kw)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 64 - 1), st.floats(1e-3, 1e3), st.booleans())
    def test_text_round_trip(self, seed, horizon, resume):
        cfg = ExperimentConfig(seed=seed, horizon=horizon, resume=resume)
        assert load_config_text(cfg.to_text()) == cfg

    def test_digest_ignores_execution_keys(self):
        a = ExperimentConfig(out="a", stop_at=3.0)
        assert a.digest() == ExperimentConfig(out="b").digest()
        assert a.digest() != ExperimentConfig(seed=1).digest()


def load_config_text(text):
    return ExperimentConfig(**parse_text(text))


class TestCheckpoint:
    def make(self, seed=0):
        r = np.random.default_rng(seed)
        return Checkpoint(SnsState(random_velocity(4, seed), 1.25), r.uniform(0, 6, 2), np.array([0.6, 0.8]),
                          r.standard_normal((2, 2)), (7, 2 ** 40), r.standard_normal(9))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 31))
    def test_round_trip_bit_exact(self, seed):
        b = to_bytes(self.make(seed))
        ck = from_bytes(b)
        assert to_bytes(ck) == b
        assert ck.counters == (7, 2 ** 40)

    def test_layout(self):
        b = to_bytes(self.make())
        magic, version, kmax, n_acc, n_cnt = struct.unpack_from("<4sIIII", b)
        assert (magic, version, kmax, n_acc, n_cnt) == (b"LCL1", 1, 4, 9, 2)
        assert struct.unpack_from("<d", b, 20)[0] == 1.25

    def test_wrong_magic(self):
        b = bytearray(to_bytes(self.make()))
        b[:4] = b"LCL2"
        with pytest.raises(BadMagicError):
            from_bytes(bytes(b))

    def test_truncated_and_version(self):
        b = to_bytes(self.make())
        with pytest.raises(CheckpointError):
            from_bytes(b[:-8])
        with pytest.raises(CheckpointError):
            from_bytes(b[:4] + struct.pack("<I", 2) + b[8:])

    def test_file_io(self, tmp_path):
        ck = self.make()
        checkpoint_save(ck, tmp_path / "c.lcl")
        assert to_bytes(checkpoint_load(tmp_path / "c.lcl")) == to_bytes(ck)
        with pytest.raises(CheckpointError):
            checkpoint_load(tmp_path / "missing.lcl")


class TestMonitors:
    def test_single_mode_value(self):
        u = SpectralVelocity.from_modes(4, {(1, 0): 1.0})
        assert super_lyapunov_V(u, 1.0, 1.0) == 2.0

    def test_parameters_checked(self):
        with pytest.raises(DomainError):
            super_lyapunov_V(SpectralVelocity.zeros(2), 0.0)
        with pytest.raises(DomainError):
            MomentMonitor(0)

    def test_growth_flag(self):
        assert growth_flag([1, 2, 4, 8])
        assert not growth_flag([1, 2, 4, 4, 8, 16])
        assert not growth_flag([])

    def test_report_windows(self):
        traj = [(0.1 * i, SpectralVelocity.from_modes(3, {(1, 0): 1.0 + i})) for i in range(25)]
        rep = moment_monitor(traj, window=10)
        assert rep.window_sup_grad.tolist() == [100.0, 400.0]
        assert len(rep.V_series) == 25 and not rep.flagged


class TestCli:
    def test_thread_cap(self, monkeypatch):
        monkeypatch.setenv("LCL_THREADS", "2")
        assert worker_count(16) == 2 and worker_count(1) == 1

    def test_usage_errors(self, tmp_path, capsys):
        assert main(["lyapunov", "--set", "nope=1", "--out", str(tmp_path)]) == 2
        assert main(["lyapunov", "--set", "bare", "--out", str(tmp_path)]) == 2
        with pytest.raises(SystemExit):
            main(["bogus"])

    def test_lyapunov_outputs(self, tmp_path):
        code, out = cli(tmp_path, "a", "lyapunov", "--ensemble", "2", "--seed", "3", *SMALL)
        assert code == 0
        lines = (out / "exponents.csv").read_text().splitlines()
        assert lines[0] == ("trajectory[index],lambda1[1/time],lambda2[1/time],stderr1[1/time],"
                            "stderr2[1/time],horizon[time]")
        assert len(lines) == 3
        doc = json.loads((out / "summary.json").read_text())
        assert doc["config"]["seed"] == 3 and doc["status"] == "ok"

    def test_thread_count_and_resume_invariance(self, tmp_path, monkeypatch):
        args = ["lyapunov", "--ensemble", "2", *SMALL]
        monkeypatch.setenv("LCL_THREADS", "1")
        _, a = cli(tmp_path, "a", *args)
        monkeypatch.setenv("LCL_THREADS", "2")
        _, b = cli(tmp_path, "b", *args)
        code, c = cli(tmp_path, "c", *args, "--checkpoint-every", "1", "--stop-at", "2")
        assert code == 4
        code, c = cli(tmp_path, "c", *args, "--checkpoint-every", "1", "--resume")
        assert code == 0
        for name in ("exponents.csv", "summary.json"):
            ref = (a / name).read_bytes()
            assert (b / name).read_bytes() == ref, name
            assert (c / name).read_bytes() == ref, name

    def test_config_file_precedence(self, tmp_path):
        p = tmp_path / "x.cfg"
        p.write_text("seed = 1\nensemble = 3\n")
        _, out = cli(tmp_path, "o", "spanning", "--config", str(p), "--seed", "2", "--set", "points=5")
        doc = json.loads((out / "summary.json").read_text())
        assert doc["config"]["seed"] == 2 and doc["config"]["ensemble"] == 3
        rows = (out / "spanning.csv").read_text().splitlines()
        assert rows[0] == "x1[rad],x2[rad],v_angle[rad],rank[1]" and len(rows) == 6

    def test_simulate(self, tmp_path):
        code, out = cli(tmp_path, "s", "simulate", *SMALL[:6], "--horizon", "3")
        assert code == 0
        rows = (out / "trajectory.csv").read_text().splitlines()
        assert len(rows) == 4

    def test_validate(self, tmp_path):
        code, out = cli(tmp_path, "v", "validate")
        assert code == 0
        assert json.loads((out / "summary.json").read_text())["results"]["passed"]

    def test_malliavin_member(self, tmp_path):
        code, out = cli(tmp_path, "m", "malliavin", "--set", "burn_in=0.5", "--set", "kmax=10",
                        "--set", "gridsize=32")
        assert code == 0
        rows = (out / "malliavin.csv").read_text().splitlines()
        assert rows[0] == "run[index],lambda_min[time],cond_N[1],rho_low[tangent],rho_high[tangent],cost_l2[time]"
        assert float(rows[1].split(",")[1]) > 0
