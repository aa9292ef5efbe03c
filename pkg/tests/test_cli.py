import json
import os
import re
import stat

import numpy as np
import pytest

from koopman_reach.cli import main

QUARTIC_CONFIG = {
    "version": 1,
    "model": {"builtin": "quartic_decay"},
    "training": {"n_traj": 20, "h": 0.5, "T_train": 5.0},
    "problem": {
        "init": [[0.9, 1.1], [0.9, 1.1]],
        "unsafe": [{"expr": "x2 <= 0.75 - 0.05*i"}],
        "i_values": [0, 4],
        "h": 0.5,
        "T": 5.0,
        "algorithm": "zono_split",
        "max_level": 1,
        "delta": 1e-3,
    },
}


def write_config(tmp_path, extra=None, **overrides):
    doc = json.loads(json.dumps(QUARTIC_CONFIG))
    doc["output_dir"] = str(tmp_path / "out")
    doc.update(extra or {})
    for key, value in overrides.items():
        section, _, leaf = key.partition(".")
        if leaf:
            doc.setdefault(section, {})[leaf] = value
        else:
            doc[section] = value
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc, indent=1))
    return path


def mask_runtime(text: str) -> str:
    return re.sub(r'"runtime_s": [0-9.e+-]+', '"runtime_s": 0', text)


class TestConfig:
    def test_missing_file_exits_2(self, tmp_path, capsys):
        assert main(["linearize", "--config", str(tmp_path / "nope.json")]) == 2
        assert "does not exist" in capsys.readouterr().err

    def test_bad_model_name(self, tmp_path, capsys):
        cfg = write_config(tmp_path, extra={"model": {"builtin": "warp_drive"}})
        assert main(["linearize", "--config", str(cfg)]) == 2

    def test_version_required(self, tmp_path):
        cfg = write_config(tmp_path, version=2)
        assert main(["verify", "--config", str(cfg)]) == 2


class TestLinearize:
    def test_writes_model_and_error_report(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        assert main(["linearize", "--config", str(cfg)]) == 0
        out = tmp_path / "out"
        assert (out / "model.json").exists()
        report = (out / "error_report.csv").read_text().strip().splitlines()
        assert report[0] == "time_frac,max_abs,avg_abs,max_rel,avg_rel"
        assert len(report) == 6  # header + 5 time fractions
        # exact invariant subspace: linearization error is numerical noise
        for line in report[1:]:
            vals = [float(v) for v in line.split(",")[1:]]
            assert max(vals) <= 1e-5


class TestVerify:
    def test_sweep_and_rerun_identical(self, tmp_path):
        cfg = write_config(tmp_path)
        assert main(["verify", "--config", str(cfg)]) == 0
        out = tmp_path / "out"
        files = sorted(out.glob("verdict_*.json"))
        assert len(files) == 2
        first = {f.name: mask_runtime(f.read_text()) for f in files}
        doc0 = json.loads(files[0].read_text())
        assert doc0["model"] == "quartic_decay"
        assert doc0["kind"] in ("safe", "unsafe", "unknown")
        assert (out / "stats.csv").exists()

        assert main(["verify", "--config", str(cfg)]) == 0
        again = {f.name: mask_runtime(f.read_text()) for f in sorted(out.glob("verdict_*.json"))}
        assert first == again

    def test_verdict_content(self, tmp_path):
        cfg = write_config(tmp_path)
        main(["verify", "--config", str(cfg)])
        out = tmp_path / "out"
        docs = {d["i"]: d for d in map(json.loads, (f.read_text() for f in out.glob("verdict_*.json")))}
        # i=0: threshold 0.75 is crossed inside the horizon; i=4: 0.55 likewise
        assert docs[0]["kind"] == "unsafe" and docs[4]["kind"] == "unsafe"
        for d in docs.values():
            assert d["validation"]["linear_in_unsafe"] is True
            assert d["validation"]["state_discrepancy"] < 1e-4
            assert len(d["witness"]) == 2

    def test_jobs_parallel_same_results(self, tmp_path):
        cfg = write_config(tmp_path)
        main(["verify", "--config", str(cfg)])
        out = tmp_path / "out"
        serial = {f.name: mask_runtime(f.read_text()) for f in out.glob("verdict_*.json")}
        for f in out.glob("verdict_*.json"):
            f.unlink()
        assert main(["verify", "--config", str(cfg), "--jobs", "2"]) == 0
        parallel = {f.name: mask_runtime(f.read_text()) for f in out.glob("verdict_*.json")}
        assert serial == parallel

    def test_plot_writes_svg(self, tmp_path):
        cfg = write_config(tmp_path, **{"problem.i_values": [0]})
        assert main(["verify", "--config", str(cfg), "--plot"]) == 0
        svg = tmp_path / "out" / "reach_i000.svg"
        assert svg.exists()
        assert b"<svg" in svg.read_bytes()[:200]

    def test_external_solver(self, tmp_path):
        fake = tmp_path / "fake_solver.sh"
        fake.write_text("#!/bin/sh\ncat > /dev/null\necho unsat\n")
        fake.chmod(fake.stat().st_mode | stat.S_IEXEC)
        cfg = write_config(tmp_path, **{"problem.algorithm": "direct", "problem.i_values": [0]})
        assert main(["verify", "--config", str(cfg), "--external-solver", str(fake)]) == 0
        doc = json.loads(next((tmp_path / "out").glob("verdict_*.json")).read_text())
        assert doc["kind"] == "safe"
        assert doc["solver_calls"] == 11  # every step consulted the external solver

    def test_external_solver_sat(self, tmp_path):
        fake = tmp_path / "fake_sat.sh"
        fake.write_text("#!/bin/sh\ncat > /dev/null\necho delta-sat\n")
        fake.chmod(fake.stat().st_mode | stat.S_IEXEC)
        cfg = write_config(tmp_path, **{"problem.algorithm": "direct", "problem.i_values": [0]})
        assert main(["verify", "--config", str(cfg), "--external-solver", str(fake)]) == 0
        doc = json.loads(next((tmp_path / "out").glob("verdict_*.json")).read_text())
        assert doc["kind"] == "unsafe" and doc["step"] == 0


class TestSimulateAndCsvSource:
    def test_simulate_deterministic(self, tmp_path):
        cfg = write_config(tmp_path, training={"n_traj": 3, "h": 0.5, "T_train": 2.0})
        assert main(["simulate", "--config", str(cfg)]) == 0
        out = tmp_path / "out"
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest["files"]) == 3
        blobs = {f: (out / f).read_bytes() for f in manifest["files"]}
        assert main(["simulate", "--config", str(cfg)]) == 0
        for f, blob in blobs.items():
            assert (out / f).read_bytes() == blob

    def test_black_box_csv_pipeline(self, tmp_path):
        sim_cfg = write_config(tmp_path, training={"n_traj": 10, "h": 0.5, "T_train": 5.0})
        assert main(["simulate", "--config", str(sim_cfg)]) == 0
        out = tmp_path / "out"
        files = [str(out / f) for f in json.loads((out / "manifest.json").read_text())["files"]]

        csv_doc = {
            "version": 1,
            "model": {"snapshot_csv": files, "var_names": ["x1", "x2"]},
            "dictionary": {"max_poly_degree": 4},
            "problem": {
                "init": [[0.9, 1.1], [0.9, 1.1]],
                "unsafe": [{"expr": "x2 <= 0.75"}],
                "i_values": [0],
                "h": 0.5,
                "T": 5.0,
                "algorithm": "backprop",
                "delta": 1e-3,
            },
            "output_dir": str(tmp_path / "bb_out"),
        }
        cfg2 = tmp_path / "bb.json"
        cfg2.write_text(json.dumps(csv_doc))
        assert main(["verify", "--config", str(cfg2)]) == 0
        doc = json.loads(next((tmp_path / "bb_out").glob("verdict_*.json")).read_text())
        assert doc["kind"] == "unsafe"
        assert doc["model"] == "csv"


class TestReport:
    def test_collates_and_sorts(self, tmp_path):
        main(["verify", "--config", str(write_config(tmp_path))])
        out = tmp_path / "out"
        assert main(["report", "--results", str(out)]) == 0
        table = (out / "report.txt").read_text().splitlines()
        assert table[0].split()[:4] == ["model", "i", "algorithm", "kind"]
        assert len(table) == 3
        assert (out / "report.csv").exists()

    def test_disagree_flag(self, tmp_path):
        out = tmp_path / "res"
        out.mkdir()
        base = {
            "model": "m", "i": 1, "step": None, "witness": None, "runtime_s": 0.1,
            "solver_calls": 0, "splits": 0, "delta": 1e-4, "validation": None,
        }
        (out / "verdict_m_a_i001.json").write_text(json.dumps({**base, "algorithm": "a", "kind": "safe"}))
        (out / "verdict_m_b_i001.json").write_text(json.dumps({**base, "algorithm": "b", "kind": "unsafe"}))
        assert main(["report", "--results", str(out)]) == 0
        assert "DISAGREE" in (out / "report.txt").read_text()

    def test_empty_dir_exits_2(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        assert main(["report", "--results", str(empty)]) == 2
