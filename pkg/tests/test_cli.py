import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from qcbound import cli
from qcbound.experiments import ROW_SCHEMA
from qcbound.network import load_model, random_network, save_model
from qcbound.qc import Coupling, InputSpec
from qcbound.sdp import BoundCertificate
from qcbound.transforms import FixedPointFormat, quantize_network
from qcbound.verify import input_grid, squared_error

DEMO = Path(__file__).resolve().parents[1] / "models" / "demo_l1.json"


@pytest.fixture
def model(tmp_path):
    path = tmp_path / "a.json"
    save_model(random_network(np.random.default_rng(3), 1, [10], 1), path)
    return path


def run(*args):
    return cli.main([str(a) for a in args])


class TestCertify:
    def test_identical_nets_have_near_zero_bound(self, model, tmp_path, capsys):
        out = tmp_path / "c.json"
        assert run("certify", "--model", model, "--coupling", "identical", "--out", out) == 0
        cert = BoundCertificate.load(out)
        # the exact optimum is 0; the strict-LMI margin keeps it slightly positive
        assert cert.ok and cert.bound([[0.4]], [[0.4]])[0] < 1e-4
        assert "gamma_x1=" in capsys.readouterr().out

    def test_quantised_demo_model_dominates_grid(self, tmp_path):
        out = tmp_path / "c.json"
        assert run("certify", "--model", DEMO, "--quantise", "FB=2", "--out", out) == 0
        fmt = FixedPointFormat(8, 2)
        net = load_model(DEMO)
        nets = (net, quantize_network(net, fmt))
        X1, X2 = input_grid(InputSpec.box(1, -1, 1, Coupling.QUANTISED, fmt), 100)
        cert = BoundCertificate.load(out)
        assert np.all(cert.bound(X1, X2) >= squared_error(nets, X1, X2) - 1e-7)

    def test_missing_model(self, tmp_path, capsys):
        assert run("certify", "--model", tmp_path / "nope.json", "--out", tmp_path / "c.json") == 1
        assert "not found" in capsys.readouterr().err

    def test_quantise_and_prune_are_exclusive(self, model, tmp_path, capsys):
        code = run("certify", "--model", model, "--quantise", "8,2", "--prune", "count=2", "--out", tmp_path / "c")
        assert code == 1 and "mutually exclusive" in capsys.readouterr().err

    def test_bad_box(self, model, tmp_path):
        assert run("certify", "--model", model, "--box", "1", "--out", tmp_path / "c.json") == 1

    def test_argparse_errors_are_usage_errors(self):
        with pytest.raises(SystemExit) as exc:
            run("certify")
        assert exc.value.code == 1

    def test_snapshot_rerun_is_identical(self, model, tmp_path):
        out = tmp_path / "c.json"
        assert run("certify", "--model", model, "--prune", "count=3", "--out", out) == 0
        snap = out.with_suffix(".config.json")
        assert snap.exists()
        assert run("certify", "--config", snap, "--out", tmp_path / "again.json") == 0
        a, b = json.loads(out.read_text()), json.loads((tmp_path / "again.json").read_text())
        a.pop("solve_time"), b.pop("solve_time")
        assert a == b

    def test_backend_env_var(self, model, tmp_path, monkeypatch):
        monkeypatch.setenv("QCBOUND_SOLVER", "cvxopt")
        out = tmp_path / "c.json"
        assert run("certify", "--model", model, "--out", out) == 0
        assert BoundCertificate.load(out).backend == "cvxopt"

    @pytest.mark.parametrize("status,code", [("infeasible", 2), ("numerical_failure", 3)])
    def test_failure_exit_codes(self, model, tmp_path, monkeypatch, status, code):
        real = cli.solve

        def failing(*a, **k):
            cert = real(*a, **k)
            cert.status = status
            return cert
        monkeypatch.setattr(cli, "solve", failing)
        assert run("certify", "--model", model, "--out", tmp_path / "c.json") == code


class TestCheck:
    @pytest.fixture
    def cert(self, model, tmp_path):
        out = tmp_path / "c.json"
        assert run("certify", "--model", model, "--quantise", "8,3", "--out", out) == 0
        return out

    def test_fresh_certificate(self, model, cert):
        assert run("check", "--model", model, "--quantise", "8,3", "--cert", cert) == 0

    def test_tampered_gamma(self, model, cert, capsys):
        data = json.loads(cert.read_text())
        for k in ("gamma_x1", "gamma_x2", "gamma_x", "gamma"):
            data[k] *= 0.5
        cert.write_text(json.dumps(data))
        assert run("check", "--model", model, "--quantise", "8,3", "--cert", cert) == 2
        assert "INVALID" in capsys.readouterr().out

    def test_wrong_problem(self, model, cert):
        assert run("check", "--model", model, "--quantise", "8,2", "--cert", cert) == 2

    def test_malformed_json(self, model, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{oops")
        assert run("check", "--model", model, "--cert", bad) == 1
        assert "JSONDecodeError" in capsys.readouterr().err

    def test_missing_certificate(self, model, tmp_path):
        assert run("check", "--model", model, "--cert", tmp_path / "none.json") == 1


class TestTransform:
    def test_fine_quantisation_is_near_identity(self, model, tmp_path):
        out = tmp_path / "q.json"
        assert run("transform", "--model", model, "--quantise", "8,52", "--out", out) == 0
        a, b = load_model(model), load_model(out)
        for x, y in zip(a.weights, b.weights):
            np.testing.assert_allclose(x, y, atol=1e-15)

    def test_grid_membership(self, model, tmp_path):
        out = tmp_path / "q.json"
        assert run("transform", "--model", model, "--quantise", "FB=2", "--out", out) == 0
        net = load_model(out)
        assert all(np.all(np.mod(p * 4, 1) == 0) for p in net.weights + net.biases)

    def test_prune_nothing(self, model, tmp_path):
        out = tmp_path / "p.json"
        assert run("transform", "--model", model, "--prune", "count=0", "--out", out) == 0
        assert load_model(out) == load_model(model)

    def test_needs_exactly_one_transform(self, model, tmp_path):
        assert run("transform", "--model", model, "--out", tmp_path / "x.json") == 1

    @pytest.mark.parametrize("spec", ["count", "count=x", "fraction=0.5"])
    def test_bad_prune_spec(self, model, tmp_path, spec):
        assert run("transform", "--model", model, "--prune", spec, "--out", tmp_path / "x.json") == 1


class TestExperiment:
    def test_similarity_smoke(self, tmp_path):
        import time
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"seeds": [0, 1, 2, 3, 4], "layers": [1]}))
        t0 = time.perf_counter()
        assert run("experiment", "--suite", "similarity", "--config", cfg, "--out-dir", tmp_path / "out") == 0
        assert time.perf_counter() - t0 < 60
        with open(tmp_path / "out" / "similarity_rows.csv") as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == ROW_SCHEMA["similarity"] and len(rows) == 6
        assert (tmp_path / "out" / "similarity_config.json").exists()

    def test_unknown_suite(self):
        with pytest.raises(SystemExit) as exc:
            run("experiment", "--suite", "bogus")
        assert exc.value.code == 1

    def test_bad_config_key(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"seedz": [0]}))
        assert run("experiment", "--suite", "pruning", "--config", cfg) == 1

    def test_config_snapshot_reproduces(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"seeds": [0, 1], "fraction_bits": [2], "width": 4}))
        assert run("experiment", "--suite", "worstcase", "--config", cfg, "--out-dir", tmp_path / "a") == 0
        snap = tmp_path / "a" / "worstcase_config.json"
        assert run("experiment", "--suite", "worstcase", "--config", snap, "--out-dir", tmp_path / "b") == 0
        from qcbound.experiments import strip_timing
        a = json.loads((tmp_path / "a" / "worstcase_report.json").read_text())
        b = json.loads((tmp_path / "b" / "worstcase_report.json").read_text())
        assert strip_timing(a) == strip_timing(b)


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "qcbound", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "certify" in res.stdout
