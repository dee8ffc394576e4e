import json

import numpy as np

from ssmopt.cli import main

CHAIN_MODEL = {
    "type": "chain",
    "n_masses": 2,
    "mass": 1.0,
    "k": 1.0,
    "k2": 0.5,
    "k3": 0.2,
    "alpha_r": 0.0,
    "beta_r": 0.1,
}


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


class TestBackboneCommand:
    def test_emits_three_files(self, tmp_path, capsys):
        cfg = {
            "command": "backbone",
            "model": CHAIN_MODEL,
            "backbone": {"dof": 1, "x_targets": [0.05, 0.1, 0.2], "order": 5},
        }
        rc = main(["backbone", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path / "out")])
        assert rc == 0
        csv = (tmp_path / "out" / "backbone.csv").read_text()
        rows = csv.strip().split("\n")
        assert rows[0] == "rho,omega,x"
        assert len(rows) == 4  # header + one per target
        exp = json.loads((tmp_path / "out" / "expansion.json").read_text())
        assert exp["order"] == 5
        report = json.loads((tmp_path / "out" / "error_report.json").read_text())
        assert report["epsilon"] >= 0.0

    def test_order_auto_adapts(self, tmp_path):
        cfg = {
            "model": CHAIN_MODEL,
            "backbone": {"dof": 1, "x_targets": [0.2], "order": "auto", "eps_tol": 1e-6},
        }
        rc = main(["backbone", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path / "o")])
        assert rc == 0
        report = json.loads((tmp_path / "o" / "error_report.json").read_text())
        assert report["order"] > 3
        assert report["epsilon"] <= 1e-6

    def test_numbers_round_trip_losslessly(self, tmp_path):
        cfg = {
            "model": CHAIN_MODEL,
            "backbone": {"dof": 1, "x_targets": [0.123456789012345], "order": 5},
        }
        out = tmp_path / "rt"
        assert main(["backbone", "--config", write_config(tmp_path, cfg), "--out", str(out)]) == 0
        row = (out / "backbone.csv").read_text().strip().split("\n")[1].split(",")
        assert float(row[2]) == 0.123456789012345

    def test_invalid_schema_exit_code_and_path(self, tmp_path, capsys):
        cfg = {"model": CHAIN_MODEL, "backbone": {"dof": 1, "x_targets": [0.1], "bogus": 1}}
        rc = main(["backbone", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path)])
        assert rc == 1
        err = capsys.readouterr().err
        assert "backbone" in err

    def test_unknown_top_level_key_rejected(self, tmp_path, capsys):
        cfg = {"model": CHAIN_MODEL, "backbone": {"dof": 1, "x_targets": [0.1]}, "extra": {}}
        assert main(["backbone", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path)]) == 1

    def test_model_error_exit_code(self, tmp_path):
        bad = {
            "type": "matrix",
            "n": 2,
            "M": [[-1.0, 0.0], [0.0, 1.0]],
            "K": [[1.0, 0.0], [0.0, 1.0]],
        }
        cfg = {"model": bad, "backbone": {"dof": 0, "x_targets": [0.1]}}
        assert main(["backbone", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path)]) == 2

    def test_command_mismatch_rejected(self, tmp_path):
        cfg = {
            "command": "sens",
            "model": CHAIN_MODEL,
            "backbone": {"dof": 1, "x_targets": [0.1]},
        }
        assert main(["backbone", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path)]) == 1


class TestSensCommand:
    def test_two_methods_agree(self, tmp_path):
        cfg = {
            "model": CHAIN_MODEL,
            "sens": {"dof": 1, "x0": 0.1, "methods": ["adjoint", "direct"], "order": 5},
        }
        out = tmp_path / "s"
        rc = main(["sens", "--config", write_config(tmp_path, cfg), "--out", str(out)])
        assert rc == 0
        adj = json.loads((out / "sens_adjoint.json").read_text())
        dd = json.loads((out / "sens_direct.json").read_text())
        ga = np.array([g["dOmega"] for g in adj["gradients"]])
        gd = np.array([g["dOmega"] for g in dd["gradients"]])
        assert np.all(np.abs(ga - gd) <= 1e-8 * np.abs(gd))
        assert adj["method"] == "adjoint"

    def test_verify_fd_block(self, tmp_path):
        cfg = {
            "model": CHAIN_MODEL,
            "sens": {"dof": 1, "x0": 0.1, "methods": ["adjoint"], "order": 3},
        }
        out = tmp_path / "fd"
        rc = main(["sens", "--config", write_config(tmp_path, cfg), "--out", str(out), "--verify-fd"])
        assert rc == 0
        blk = json.loads((out / "sens_fd_check.json").read_text())
        assert blk["max_rel_err_adjoint"] <= 1e-5

    def test_matrix_model_without_params_rejected(self, tmp_path):
        cfg = {
            "model": {"type": "matrix", "n": 1, "M": [[1.0]], "K": [[1.0]]},
            "sens": {"dof": 0, "x0": 0.1},
        }
        assert main(["sens", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path)]) == 1


class TestVerifyCommand:
    def test_all_invariants_pass(self, capsys):
        assert main(["verify", "--out", "unused"]) == 0
        out = capsys.readouterr().out
        assert out.count("[PASS]") == 4
        assert "0 failures" in out


class TestOptimizeCommand:
    def test_chain_toy_run(self, tmp_path):
        model_block = dict(CHAIN_MODEL, params=["k3"])
        cfg = {
            "model": model_block,
            "optimize": {
                "objective": {"type": "constant"},
                "constraints": [
                    {"type": "backbone", "dof": 1, "x": 0.35, "omega": 0.6083}
                ],
                "bounds": {"lower": [-1.0], "upper": [1.0]},
                "tolerances": {"constraint_tol": 1e-7, "max_iter": 40, "eps_tol": 1e-2},
            },
        }
        out = tmp_path / "opt"
        rc = main(["optimize", "--config", write_config(tmp_path, cfg), "--out", str(out)])
        assert rc == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["converged"]
        trace = (out / "trace.csv").read_text().strip().split("\n")
        assert trace[0].startswith("iteration,")
        assert len(trace) >= 2


class TestBenchCommand:
    def test_csv_schema(self, tmp_path):
        cfg = {
            "bench": {
                "n_masses": 9,
                "param_counts": [1, 4],
                "orders": [3],
                "x0": 0.01,
                "repeats": 1,
            }
        }
        out = tmp_path / "b"
        rc = main(["bench", "--config", write_config(tmp_path, cfg), "--out", str(out)])
        assert rc == 0
        rows = (out / "bench.csv").read_text().strip().split("\n")
        assert rows[0] == "method,order,nparams,seconds"
        assert len(rows) == 1 + 2 * 2  # two methods x two param counts
        for row in rows[1:]:
            method, order, nparams, seconds = row.split(",")
            assert method in ("direct", "adjoint")
            assert float(seconds) > 0
