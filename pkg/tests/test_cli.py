import json
import os
import signal
import subprocess
import sys
import time

import numpy as np
import pytest

from darcylab.cli import main


def write_config(path, extra=""):
    path.write_text(f"""
[geometry]
box_side = 1.5
alpha = 1.5
shape = sphere
radius = 0.9

[ladder]
eps = 0.5,0.375
cells_per_eps = 16

[solver]
momentum_tol = 1e-4
divergence_tol = 1e-7

[physics]
gamma = 2.0
beta = 1.3
{extra}
""")


class TestConfigValidation:
    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "c.ini"
        cfg.write_text("[geometry]\nbox_sides = 1.5\n")
        code = main(["poincare", "--config", str(cfg),
                     "--output", str(tmp_path / "out")])
        assert code == 2

    def test_unknown_section_rejected(self, tmp_path):
        cfg = tmp_path / "c.ini"
        cfg.write_text("[geometri]\nbox_side = 1.5\n")
        assert main(["poincare", "--config", str(cfg),
                     "--output", str(tmp_path / "out")]) == 2

    def test_missing_file_rejected(self, tmp_path):
        assert main(["poincare", "--config", str(tmp_path / "nope.ini"),
                     "--output", str(tmp_path / "out")]) == 2

    def test_out_of_range_parameters(self, tmp_path):
        cfg = tmp_path / "c.ini"
        cfg.write_text("[physics]\ngamma = 0.5\n")
        assert main(["poincare", "--config", str(cfg),
                     "--output", str(tmp_path / "out")]) == 2
        cfg.write_text("[ladder]\neps = 1.5,0.25\n")
        assert main(["poincare", "--config", str(cfg),
                     "--output", str(tmp_path / "out")]) == 2
        cfg.write_text("[geometry]\nalpha = 3.5\n")
        assert main(["poincare", "--config", str(cfg),
                     "--output", str(tmp_path / "out")]) == 2

    def test_usage_error(self, tmp_path):
        assert main(["not-a-command", "--config", "x"]) == 4

    def test_malformed_config_no_output(self, tmp_path):
        cfg = tmp_path / "c.ini"
        cfg.write_text("[geometry\nbox_side = ")
        out = tmp_path / "out"
        assert main(["darcy", "--config", str(cfg),
                     "--output", str(out)]) == 2
        assert not out.exists() or not list(out.iterdir())


class TestDarcyCommand:
    def test_zero_forcing_report(self, tmp_path):
        cfg = tmp_path / "c.ini"
        write_config(cfg, extra="forcing_g = zero\n")
        out = tmp_path / "out"
        code = main(["darcy", "--config", str(cfg), "--output", str(out),
                     "--quiet"])
        assert code == 0
        payload = json.loads((out / "darcy.json").read_text())
        assert payload["points"][0]["u_l2"] == 0.0
        assert payload["points"][0]["p_l2"] == 0.0
        assert payload["config"]["physics"]["gamma"] == "2.0"
        assert "environment" in payload


class TestSweepReports:
    def test_poincare_report_and_determinism(self, tmp_path):
        cfg = tmp_path / "c.ini"
        write_config(cfg)
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        assert main(["poincare", "--config", str(cfg), "--output",
                     str(out_a), "--seed", "7", "--quiet"]) == 0
        assert main(["poincare", "--config", str(cfg), "--output",
                     str(out_b), "--seed", "7", "--quiet"]) == 0
        table_a = (out_a / "poincare.csv").read_text()
        table_b = (out_b / "poincare.csv").read_text()
        assert table_a == table_b
        payload = json.loads((out_a / "poincare.json").read_text())
        assert len(payload["points"]) == 2
        assert "poincare" in payload["fits"]
        # per-point files persisted atomically as the sweep progressed
        pts = sorted((out_a / "points").glob("point_*.json"))
        assert len(pts) == 2
        for p in pts:
            json.loads(p.read_text())


@pytest.mark.slow
class TestKillDuringRun:
    def test_no_corrupt_outputs_on_kill(self, tmp_path):
        cfg = tmp_path / "c.ini"
        write_config(cfg)
        out = tmp_path / "out"
        proc = subprocess.Popen(
            [sys.executable, "-m", "darcylab.cli", "poincare",
             "--config", str(cfg), "--output", str(out)],
            stdout=subprocess.PIPE, stderr=subprocess.STDOUT)
        # let it produce at least one point, then kill hard
        deadline = time.time() + 120
        first_point = out / "points" / "point_000.json"
        while time.time() < deadline and not first_point.exists():
            time.sleep(0.2)
            if proc.poll() is not None:
                break
        if proc.poll() is None:
            os.kill(proc.pid, signal.SIGKILL)
            proc.wait()
        # whatever exists parses cleanly; no temp debris is left behind
        if out.exists():
            for f in out.rglob("*.json"):
                json.loads(f.read_text())
            leftovers = list(out.rglob("*.tmp"))
            assert leftovers == []
