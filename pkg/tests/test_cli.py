import subprocess
import sys

import numpy as np

from subarray_ep.cli import main


def _cfg(tmp_path, extra=""):
    path = tmp_path / "run.cfg"
    path.write_text("n=16\nk=4\nqam=4\nsubarray_size=4\niters=3\nsnr_db_list=0,5\ntrials=4\nseed=1\n" + extra)
    return path


class TestComplexity:
    def test_worked_example(self, capsys):
        assert main(["complexity", "--scenario", "centralized", "--n", "64", "--k", "16", "--t", "1", "--qam", "16"]) == 0
        assert "Mult=141408" in capsys.readouterr().out.splitlines()

    def test_trimmed_needs_kc(self, capsys):
        assert main(["complexity", "--scenario", "alg1-trimmed", "--nc", "2", "--k", "16", "--t", "1", "--qam", "16"]) == 1

    def test_console_script_module(self):
        out = subprocess.run(
            [sys.executable, "-m", "subarray_ep.cli", "complexity", "--scenario", "alg1-full", "--nc", "2", "--k", "16",
             "--t", "3", "--qam", "16", "--c", "32"],
            capture_output=True, text=True, check=True,
        )
        assert "Trans=" in out.stdout


class TestExitCodes:
    def test_missing_config(self, tmp_path):
        assert main(["simulate", str(tmp_path / "nope.cfg")]) == 2

    def test_no_command(self):
        assert main([]) == 2

    def test_bad_flag(self):
        assert main(["complexity", "--bogus"]) == 2

    def test_unknown_key(self, tmp_path):
        assert main(["simulate", str(_cfg(tmp_path, "color=red\n"))]) == 2


class TestSimulate:
    def test_writes_csv(self, tmp_path):
        out = tmp_path / "m.csv"
        assert main(["simulate", str(_cfg(tmp_path)), "--out", str(out), "--threads", "2"]) == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("snr_db,subarray_size,iteration,ber")
        assert len(lines) == 1 + 2 * 3

    def test_seed_override_reproducible(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        cfg = _cfg(tmp_path)
        main(["simulate", str(cfg), "--seed", "9", "--out", str(a)])
        main(["simulate", str(cfg), "--seed", "9", "--out", str(b), "--threads", "3"])
        assert a.read_bytes() == b.read_bytes()


class TestTraceEvolve:
    def _omega_residual(self, path):
        data = np.genfromtxt(path, delimiter=",", names=True)
        return data["omega_residual"]

    def test_trace_residuals(self, tmp_path):
        common = ["--n", "64", "--k", "8", "--qam", "4", "--snr", "5", "--iters", "10", "--seed", "3"]
        a, b = tmp_path / "c1.csv", tmp_path / "c64.csv"
        assert main(["trace", *common, "--nc", "64", "--out", str(a)]) == 0
        assert main(["trace", *common, "--nc", "1", "--out", str(b)]) == 0
        for path in (a, b):
            res = self._omega_residual(path)
            assert res[-1] < res[0] and res[-1] < 1e-2

    def test_evolve(self, tmp_path):
        out = tmp_path / "ev.csv"
        assert main(["evolve", "--n", "32", "--k", "8", "--nc", "8", "--snr", "5", "--iters", "4", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "iter,rho,nu_0,nu_1,nu_2,nu_3" and len(lines) == 5

    def test_trace_from_config(self, tmp_path):
        out = tmp_path / "t.csv"
        assert main(["trace", "--config", str(_cfg(tmp_path)), "--out", str(out)]) == 0
        assert len(out.read_text().splitlines()) == 4
