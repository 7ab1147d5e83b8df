import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from driftlab.cli import main
from driftlab.config import load_config
from driftlab.errors import ConfigError
from driftlab.experiments import read_paths_csv

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = """\
[density]
kind = "translate"
mu = [1.0]

[schedule]
n_steps = 64
eta = 1e-3

[run]
paths = 600
seed = 5
alpha = 148.4131591025766
delta = 0.05

[cube]
kind = "random-positive"
n = 4
seed = 1

[[ops]]
op = "energy_entropy"
tol = 0.2

[[ops]]
op = "scale_summation"
alpha = 2.0
tol = 1e-12

[[ops]]
op = "cube_lsi"
count = 3
n = 4
"""


def write(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def run(argv):
    return main([str(a) for a in argv])


class TestConfig:
    def test_loads(self, tmp_path):
        cfg = load_config(write(tmp_path, SMALL))
        assert cfg.paths == 600 and cfg.seed == 5 and len(cfg.ops) == 3
        assert len(cfg.hash) == 64

    def test_line_diagnostic(self, tmp_path):
        bad = SMALL.replace("n_steps = 64", "n_steps = -3")
        with pytest.raises(ConfigError, match=r"c\.toml:6: schedule\.n_steps"):
            load_config(write(tmp_path, bad))

    def test_unknown_op(self, tmp_path):
        with pytest.raises(ConfigError, match="ops"):
            load_config(write(tmp_path, SMALL + '\n[[ops]]\nop = "nonsense"\n'))

    def test_syntax_error(self, tmp_path):
        with pytest.raises(ConfigError, match="TOML"):
            load_config(write(tmp_path, "[density\n"))

    def test_worker_precedence(self, tmp_path, monkeypatch):
        p = write(tmp_path, SMALL.replace("seed = 5", "seed = 5\nworkers = 2"))
        assert load_config(p).workers == 2
        monkeypatch.setenv("DRIFTLAB_WORKERS", "3")
        assert load_config(p).workers == 3
        assert load_config(p, dict(workers=4)).workers == 4

    def test_overrides(self, tmp_path):
        cfg = load_config(write(tmp_path, SMALL), dict(seed=9, out=tmp_path / "x"))
        assert cfg.seed == 9 and cfg.out == tmp_path / "x"

    @pytest.mark.parametrize("name", ["translate.toml", "scaled.toml", "uniform_cube.toml", "verify.toml"])
    def test_bundled_configs_validate(self, name):
        load_config(CONFIGS / name)


class TestExitCodes:
    def test_missing_file(self, tmp_path):
        assert run(["run", "--config", tmp_path / "none.toml"]) == 2

    def test_invalid_config(self, tmp_path):
        assert run(["run", "--config", write(tmp_path, "bogus = 1\n")]) == 2

    def test_unsupported_dimension(self, tmp_path):
        assert run(["run", "--config", CONFIGS / "exact_tail_n5.toml", "--out", tmp_path]) == 3

    def test_insufficient_samples(self, tmp_path):
        text = SMALL + '\n[[ops]]\nop = "level_mass"\nalpha = 1e6\ny_grid = [1.0]\nmode = "mc"\n'
        assert run(["analyze", "--config", write(tmp_path, text), "--out", tmp_path, "--workers", 1]) == 4

    def test_help_documents_codes(self):
        out = subprocess.run([sys.executable, "-m", "driftlab.cli", "--help"], capture_output=True, text=True)
        assert out.returncode == 0
        for code in "0123456":
            assert f"  {code}  " in out.stdout


class TestArtifacts:
    @pytest.fixture(scope="class")
    @staticmethod
    def outdir(tmp_path_factory):
        tmp = tmp_path_factory.mktemp("run")
        cfg = write(tmp, SMALL)
        assert main(["run", "--config", str(cfg), "--out", str(tmp / "out"), "--workers", "1"]) == 0
        return tmp / "out"

    def test_files(self, outdir):
        names = {p.name for p in outdir.iterdir()}
        assert {"paths.csv", "summary.json", "result_energy_entropy.csv", "result_cube_lsi.csv"} <= names

    def test_summary_schema(self, outdir):
        s = json.loads((outdir / "summary.json").read_text())
        assert {"ops", "config_hash", "wall_time"} <= set(s)
        for op in s["ops"]:
            assert {"op", "estimate", "stderr", "pass"} <= set(op)
        assert all(op["pass"] for op in s["ops"])

    def test_paths_columns(self, outdir):
        header = (outdir / "paths.csv").read_text().splitlines()[0].split(",")
        expected = ["path_id", "seed", "w1_1", "energy", "stoch_integral", "stop_time", "stop_reason",
                    "energy_to_T", "stoch_integral_to_T", "log_m1", "delta", "log_girsanov", "x1_1"]
        assert header[: len(expected)] == expected

    def test_float_format(self, outdir):
        row = (outdir / "paths.csv").read_text().splitlines()[1].split(",")
        w1 = row[2]
        assert float(w1) == float(repr(float(w1)))
        assert len(w1.lstrip("-").replace(".", "").split("e")[0].lstrip("0")) <= 17

    def test_paths_roundtrip(self, outdir):
        b = read_paths_csv(outdir / "paths.csv")
        assert b.w1.shape == (600, 1)
        assert np.all(np.isfinite(b.energy))

    def test_json_format(self, tmp_path):
        cfg = write(tmp_path, SMALL)
        assert run(["cube", "--config", cfg, "--out", tmp_path / "o", "--format", "json"]) == 0
        rows = json.loads((tmp_path / "o" / "result_cube_lsi.json").read_text())
        assert len(rows) == 3

    def test_analyze_reuses_paths(self, tmp_path):
        cfg = write(tmp_path, SMALL)
        out = tmp_path / "o"
        assert run(["simulate", "--config", cfg, "--out", out, "--workers", 1]) == 0
        before = (out / "paths.csv").read_bytes()
        assert run(["analyze", "--config", cfg, "--out", out, "--workers", 1]) == 0
        assert (out / "paths.csv").read_bytes() == before
        assert (out / "result_energy_entropy.csv").exists()


class TestBound:
    def test_flags(self, capsys):
        assert run(["bound", "--log-alpha", 16]) == 0
        rep = json.loads(capsys.readouterr().out)
        assert rep["epsilon"] == 1 / 128

    def test_rejects_small_alpha(self):
        assert run(["bound", "--alpha", 10]) == 2

    def test_from_config(self, tmp_path):
        text = '[[ops]]\nop = "bound"\nlog_alpha = 16.0\n'
        assert run(["bound", "--config", write(tmp_path, text), "--out", tmp_path / "o"]) == 0
        s = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert s["ops"][0]["estimate"] == pytest.approx(math.log(16) ** 4 / 4)


class TestVerify:
    def test_uniform_cube_gaps_zero(self, tmp_path):
        assert run(["run", "--config", CONFIGS / "uniform_cube.toml", "--out", tmp_path]) == 0
        s = json.loads((tmp_path / "summary.json").read_text())
        lsi = next(o for o in s["ops"] if o["op"] == "cube_lsi")
        assert lsi["estimate"] == 0 and lsi["pass"]

    def test_passes(self, tmp_path):
        assert run(["verify", "--config", write(tmp_path, SMALL), "--out", tmp_path / "o", "--workers", 1]) == 0

    def test_zero_tolerance_fails(self, tmp_path):
        text = SMALL + "\n[verify]\ntol = 0.0\n"
        assert run(["verify", "--config", write(tmp_path, text), "--out", tmp_path / "o", "--workers", 1]) == 1

    def test_workers_do_not_change_paths(self, tmp_path):
        cfg = write(tmp_path, SMALL.replace("paths = 600", "paths = 2500"))
        assert run(["simulate", "--config", cfg, "--out", tmp_path / "a", "--workers", 1]) == 0
        assert run(["simulate", "--config", cfg, "--out", tmp_path / "b", "--workers", 3]) == 0
        assert (tmp_path / "a" / "paths.csv").read_bytes() == (tmp_path / "b" / "paths.csv").read_bytes()
