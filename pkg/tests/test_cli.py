import json
import subprocess
import sys

import pytest

from peumlab import io as pio
from peumlab.cli import main

TENT = {"kind": "tent"}


def run(tmp_path, command, cfg, *extra, name="out"):
    cfg_path = tmp_path / f"{name}.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / name
    code = main([command, "--config", str(cfg_path), "--out", str(out), *extra])
    return code, out


def body(path):
    return pio.csv_body(path.read_text())


class TestExitCodes:
    def test_invalid_family(self, tmp_path, capsys):
        code, out = run(tmp_path, "density", {"family": {"kind": "logistic"}, "t": 1.9})
        assert code == 2
        err = json.loads(capsys.readouterr().err)
        assert err["kind"] == "config" and err["path"] == "family"
        assert json.loads((out / "error.json").read_text())["exit_code"] == 2

    def test_shadow_h0(self, tmp_path):
        code, _ = run(tmp_path, "shadow", {"family": TENT, "t_grid": [1.9], "h": 0.0, "n": 3})
        assert code == 2

    def test_missing_t(self, tmp_path):
        assert run(tmp_path, "density", {"family": TENT})[0] == 2

    def test_t_out_of_range(self, tmp_path):
        assert run(tmp_path, "density", {"family": TENT, "t": 2.5})[0] == 2

    def test_bad_seed(self, tmp_path):
        assert run(tmp_path, "sigma", {"family": TENT, "t": 1.9}, "--seed", str(2 ** 64))[0] == 2

    def test_not_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{")
        assert main(["density", "--config", str(p), "--out", str(tmp_path / "o")]) == 2

    def test_sweep_total_failure(self, tmp_path):
        # a tolerance below machine precision stalls the power iteration at every point
        code, out = run(tmp_path, "sweep", {"family": TENT, "t_grid": [1.9], "N": 64,
                                            "tol": 1e-300})
        assert code == 1
        assert json.loads((out / "error.json").read_text())["kind"] == "runtime"
        _, rows = pio.read_csv(out / "sweep.csv")
        assert rows[0][-1].startswith("error")


class TestCommands:
    def test_density_t2(self, tmp_path):
        code, out = run(tmp_path, "density", {"family": TENT, "t": 2.0, "N": 4096})
        assert code == 0
        header, rows = pio.read_csv(out / "density.csv")
        assert header == ["cell", "x", "rho"] and len(rows) == 4096
        summary = json.loads((out / "density_summary.json").read_text())
        assert summary["sup_deviation_from_uniform"] <= 1e-8

    def test_density_cache_hit(self, tmp_path, monkeypatch):
        monkeypatch.setenv("PEUMLAB_CACHE", str(tmp_path / "cache"))
        cfg = {"family": TENT, "t": 1.9, "N": 1024}
        _, a = run(tmp_path, "density", cfg, name="a")
        _, b = run(tmp_path, "density", cfg, name="b")
        assert not json.loads((a / "density_summary.json").read_text())["cache_hit"]
        assert json.loads((b / "density_summary.json").read_text())["cache_hit"]
        assert body(a / "density.csv") == body(b / "density.csv")

    def test_j_footer(self, tmp_path):
        code, out = run(tmp_path, "j", {"family": TENT,
                                        "t_grid": {"start": 1.5, "stop": 2.0, "num": 51}})
        assert code == 0
        text = (out / "j.csv").read_text()
        footer = {ln.split("=")[0]: ln.split("=")[1] for ln in text.splitlines()
                  if ln.startswith("# min_abs_J") or ln.startswith("# argmin_t")}
        assert float(footer["# min_abs_J"]) > 0

    def test_modulus_constant(self, tmp_path):
        code, out = run(tmp_path, "modulus", {"family": TENT, "t_grid": [1.9],
                                              "observable": {"kind": "constant", "value": 2},
                                              "steps": 4, "constant": False})
        assert code == 0
        header, rows = pio.read_csv(out / "modulus.csv")
        for col in ("lipschitz_ratio", "scaled_ratio"):
            i = header.index(col)
            assert all(float(r[i]) == 0.0 for r in rows)

    def test_provenance_header(self, tmp_path):
        cfg = {"family": TENT, "t_grid": [1.8, 1.9], "N": 256}
        _, out = run(tmp_path, "sweep", cfg)
        lines = (out / "sweep.csv").read_text().splitlines()
        assert lines[0] == f"# {pio.TOOL}"
        assert lines[2].startswith("# config_sha256=")
        assert not any(ln.startswith("# timestamp") for ln in lines)
        _, out2 = run(tmp_path, "sweep", cfg, "--timestamp", name="ts")
        assert any(ln.startswith("# timestamp") for ln in (out2 / "sweep.csv").read_text().splitlines())

    def test_recurrence(self, tmp_path):
        code, out = run(tmp_path, "recurrence", {"family": TENT, "t_grid": [1.9, 2.0], "N": 200})
        assert code == 0
        _, rows = pio.read_csv(out / "recurrence.csv")
        assert len(rows) == 2


class TestDeterminism:
    CONFIGS = {
        "sigma": {"family": TENT, "t": 1.9, "N": 1024, "K": 10,
                  "clt": {"n": 50, "samples": 2000, "shards": 4}},
        "shadow": {"family": TENT, "t_grid": [1.9], "h": [1e-3], "n": 5, "pairs": 50,
                   "r_integral": {"n_max": 5, "samples": 2000}},
        "modulus": {"family": TENT, "t_grid": [1.9], "steps": 4, "constant": False},
    }

    @pytest.mark.parametrize("command", sorted(CONFIGS))
    def test_byte_identical(self, tmp_path, command):
        cfg = self.CONFIGS[command]
        _, a = run(tmp_path, command, cfg, "--seed", "42", name="a")
        _, b = run(tmp_path, command, cfg, "--seed", "42", name="b")
        names = sorted(p.name for p in a.glob("*.csv"))
        assert names
        for name in names:
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_resolved_config_rerun(self, tmp_path):
        cfg = self.CONFIGS["shadow"]
        _, a = run(tmp_path, "shadow", cfg, "--seed", "7", name="a")
        resolved = tmp_path / "resolved.json"
        resolved.write_text((a / "resolved_config.json").read_text())
        out = tmp_path / "b"
        assert main(["shadow", "--config", str(resolved), "--out", str(out)]) == 0
        for name in ("shadow.csv", "pairs.csv", "r_integral.csv"):
            assert (a / name).read_text() == (out / name).read_text()

    def test_threads_do_not_change_output(self, tmp_path):
        cfg = {"family": TENT, "t_grid": {"start": 1.6, "stop": 1.9, "num": 4}, "N": 512}
        _, a = run(tmp_path, "sweep", cfg, name="a")
        _, b = run(tmp_path, "sweep", cfg, "--threads", "3", name="b")
        assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()


def test_console_script(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"family": TENT, "t": 2.0, "N": 64}))
    proc = subprocess.run([sys.executable, "-m", "peumlab.cli", "density", "--config", str(cfg),
                           "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
