import json

import numpy as np
import pytest
import scipy.sparse as sp

from conftest import identity_relu_net, random_pair, zero_output_net
from qcbound.conic import ConicProblem, SolverSettings, export, pack, solve_conic, unpack
from qcbound.network import NeuralNetwork, build_compact_form
from qcbound.qc import ActivationQCConfig, Coupling, Gammas, InputSpec, MultiplierSet, error_qc
from qcbound.sdp import (BoundCertificate, ObjectiveWeights, SolverOptions, assemble_lmi, check_certificate,
                         numeric_lmi, solve)
from qcbound.transforms import FixedPointFormat, quantize_network
from qcbound.verify import brute_force_worst_error, input_grid, squared_error

FB2 = FixedPointFormat(8, 2)


def toy_problem():
    # min t  s.t.  diag(t - 1, t - 2) >= 0,  written as  diag(1, 2) - t I <= 0
    return ConicProblem(np.array([1.0]), np.diag([1.0, 2.0]), pack(-np.eye(2))[:, None], np.array([False]))


class TestConic:
    @pytest.mark.parametrize("backend", ["clarabel", "cvxopt"])
    def test_toy_lmi(self, backend):
        res = solve_conic(toy_problem(), SolverSettings(backend))
        assert res.status == "optimal"
        assert res.x[0] == pytest.approx(2.0, abs=1e-6)

    def test_zero_variable_problem(self):
        feasible = ConicProblem(np.zeros(0), -np.eye(3), np.zeros((6, 0)), np.zeros(0, bool))
        assert solve_conic(feasible).status == "optimal"
        infeasible = ConicProblem(np.zeros(0), np.eye(3), np.zeros((6, 0)), np.zeros(0, bool))
        assert solve_conic(infeasible).status == "infeasible"

    def test_pack_round_trip(self, rng):
        A = rng.normal(size=(5, 5))
        A = A + A.T
        np.testing.assert_array_equal(unpack(pack(A), 5), A)

    def test_export_preserves_inner_products(self, rng):
        # svec scaling makes <svec(A), svec(B)> = trace(AB)
        p = toy_problem()
        std = export(p)
        assert sp.issparse(std.G) and std.psd_dims == (2,)
        A, B = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
        A, B = A + A.T, B + B.T
        from qcbound.conic import svec_scale
        s = svec_scale(2)
        assert (pack(A) * s) @ (pack(B) * s) == pytest.approx(np.trace(A @ B))

    def test_infeasible_lmi(self):
        # I + t * 0 <= 0 has no solution
        p = ConicProblem(np.array([1.0]), np.eye(2), np.zeros((3, 1)), np.array([True]))
        assert solve_conic(p).status == "infeasible"

    def test_backend_from_environment(self, monkeypatch):
        monkeypatch.setenv("QCBOUND_SOLVER", "cvxopt")
        assert SolverSettings().resolved_backend() == "cvxopt"
        monkeypatch.setenv("QCBOUND_SOLVER", "mosek")
        with pytest.raises(ValueError, match="unknown solver backend"):
            SolverSettings().resolved_backend()

    def test_explicit_backend_wins(self, monkeypatch):
        monkeypatch.setenv("QCBOUND_SOLVER", "cvxopt")
        assert SolverSettings("clarabel").resolved_backend() == "clarabel"


class TestAssembly:
    def test_all_variables_zero_leaves_output_difference(self):
        nets = random_pair(1, widths=(3, 3))
        asm = assemble_lmi(nets, InputSpec.box(1))
        zero = asm.evaluate(MultiplierSet.zeros(1, 6), Gammas())
        np.testing.assert_allclose(zero, error_qc(asm.cf, Gammas()).matrix, atol=1e-14)

    def test_all_variables_zero_with_silent_outputs(self):
        net = NeuralNetwork((np.ones((2, 1)), np.zeros((1, 2))), (np.zeros(2), np.zeros(1)))
        asm = assemble_lmi((net, net), InputSpec.box(1))
        assert not np.any(asm.evaluate(MultiplierSet.zeros(1, 2), Gammas()))

    def test_unit_variables_equal_builder_sum(self, relu1):
        spec = InputSpec.box(1, -1, 1, Coupling.QUANTISED, FB2)
        nets = (relu1, relu1)
        asm = assemble_lmi(nets, spec)
        m = MultiplierSet(**{f: np.ones(MultiplierSet.shape_of(f, 1, 1)) for f in MultiplierSet.SHAPES})
        g = Gammas(1, 1, 1, 1)
        np.testing.assert_allclose(asm.evaluate(m, g), numeric_lmi(nets, spec, m, g), atol=1e-13)

    @pytest.mark.parametrize("coupling", list(Coupling))
    @pytest.mark.parametrize("slope", ["none", "same_index"])
    def test_random_variables_equal_builder_sum(self, coupling, slope, rng):
        fmt = FB2 if coupling is Coupling.QUANTISED else None
        n1, n2 = random_pair(13, widths=(4, 3), n_x=2, n_f=2)
        nets = (n1, quantize_network(n1, fmt)) if fmt else (n1, n2)
        spec = InputSpec.box(2, -1, 1, coupling, fmt)
        config = ActivationQCConfig(slope)
        asm = assemble_lmi(nets, spec, config)
        m = MultiplierSet.random(rng, 2, 7, asm.n_slope)
        if coupling is not Coupling.QUANTISED:
            for f in ("q_sec", "q_low", "q_up", "q_quad"):
                setattr(m, f, np.zeros(2))
        if not spec.joint_available:
            m.x_sum[:] = m.x_diff[:] = 0
        g = Gammas(*rng.exponential(size=4))
        np.testing.assert_allclose(asm.evaluate(m, g), numeric_lmi(nets, spec, m, g, config), atol=1e-11)

    def test_affine_in_variables(self, rng):
        nets = random_pair(2, widths=(5,))
        asm = assemble_lmi(nets, InputSpec.box(1))
        z = asm.evaluate(MultiplierSet.zeros(1, 5), Gammas())
        a, b = MultiplierSet.random(rng, 1, 5), MultiplierSet.random(rng, 1, 5)
        ga, gb = Gammas(*rng.exponential(size=4)), Gammas(*rng.exponential(size=4))
        gab = Gammas(*np.add(ga.as_tuple(), gb.as_tuple()))
        np.testing.assert_allclose(asm.evaluate(a + b, gab), asm.evaluate(a, ga) + asm.evaluate(b, gb) - z,
                                   atol=1e-11)

    def test_identical_coupling_reduces_dimension(self):
        nets = random_pair(3, widths=(4,), n_x=3)
        asm = assemble_lmi(nets, InputSpec.box(3, coupling=Coupling.IDENTICAL))
        assert asm.dim == asm.cf.eta_dim - 3


@pytest.fixture(scope="module")
def pair_l1():
    nets = random_pair(101)
    spec = InputSpec.box(1)
    return nets, spec, solve(nets, spec)


class TestSolve:
    def test_identical_one_neuron_nets(self, relu1):
        spec = InputSpec.box(1, coupling=Coupling.IDENTICAL)
        cert = solve((relu1, relu1), spec, ObjectiveWeights(0, 0, 0, 1))
        assert cert.ok and cert.lmi_max_eigenvalue < 0
        assert cert.gammas.affine < 1e-6
        X = np.linspace(-1, 1, 201)[:, None]
        assert np.all(cert.bound(X, X) >= 0)

    def test_certificate_is_sound_on_samples(self, pair_l1):
        nets, spec, cert = pair_l1
        assert cert.ok
        X1, X2 = spec.sample(np.random.default_rng(0), 10_000)
        assert np.max(squared_error(nets, X1, X2) - cert.bound(X1, X2)) <= 1e-7

    def test_quantised_bound_dominates_grid(self):
        n1 = random_pair(55)[0]
        nets = (n1, quantize_network(n1, FB2))
        spec = InputSpec.box(1, -1, 1, Coupling.QUANTISED, FB2)
        cert = solve(nets, spec)
        assert cert.ok
        X1, X2 = input_grid(spec, 10_000)
        assert np.all(cert.bound(X1, X2) >= squared_error(nets, X1, X2) - 1e-7)
        worst, _ = brute_force_worst_error(nets, spec, 10_000)
        assert cert.bound(X1, X2).max() >= worst

    def test_backends_agree(self, pair_l1):
        nets, spec, cert = pair_l1
        other = solve(nets, spec, options=SolverOptions(backend="cvxopt"))
        assert other.ok and other.backend == "cvxopt"
        assert other.objective == pytest.approx(cert.objective, rel=1e-4)

    def test_gammas_non_negative(self, pair_l1):
        assert min(pair_l1[2].gammas.as_tuple()) >= 0

    def test_box_monotonicity(self):
        nets = random_pair(77)
        objs = [solve(nets, InputSpec.box(1, -r, r)).objective for r in (0.25, 0.5, 1.0, 2.0)]
        assert all(b >= a - 1e-6 for a, b in zip(objs, objs[1:]))

    def test_weight_scaling_keeps_argmin(self, pair_l1):
        nets, spec, _ = pair_l1
        w = ObjectiveWeights(1, 2, 3, 4)  # generic weights: the optimal face is a single point
        # the optimum is flat in some directions, so pin the argmin with a tight solver tolerance
        tight = SolverOptions(tol=1e-10)
        base, scaled = solve(nets, spec, w, tight), solve(nets, spec, w.scaled(10.0), tight)
        np.testing.assert_allclose(scaled.gammas.as_tuple(), base.gammas.as_tuple(), rtol=0, atol=1e-4)
        assert scaled.objective == pytest.approx(10 * base.objective, rel=1e-6)

    def test_weight_scaling_on_degenerate_optimum(self, pair_l1):
        # equal weights can leave a face of optimal gammas; both solutions must lie on it
        nets, spec, cert = pair_l1
        scaled = solve(nets, spec, ObjectiveWeights().scaled(10.0))
        assert scaled.objective == pytest.approx(10 * cert.objective, rel=1e-6)
        assert sum(scaled.gammas.as_tuple()) == pytest.approx(sum(cert.gammas.as_tuple()), rel=1e-6)

    def test_invalid_weights(self):
        with pytest.raises(ValueError):
            ObjectiveWeights(0, 0, 0, 0)
        with pytest.raises(ValueError):
            ObjectiveWeights(1, -1, 0, 0)

    def test_slope_qc_never_loosens(self):
        nets = random_pair(31)
        spec = InputSpec.box(1)
        base = solve(nets, spec)
        tighter = solve(nets, spec, options=SolverOptions(activation=ActivationQCConfig("same_index")))
        assert tighter.ok and tighter.objective <= base.objective + 1e-6


class TestCertificate:
    def test_json_round_trip(self, pair_l1, tmp_path):
        cert = pair_l1[2]
        cert.save(tmp_path / "c.json")
        again = BoundCertificate.load(tmp_path / "c.json")
        assert again.to_dict() == cert.to_dict()
        data = json.loads((tmp_path / "c.json").read_text())
        for key in ("gamma_x1", "gamma_x2", "gamma_x", "gamma", "weights", "status", "lmi_max_eigenvalue",
                    "multipliers", "fingerprint"):
            assert key in data

    def test_valid_certificate(self, pair_l1):
        nets, spec, cert = pair_l1
        report = check_certificate(cert, nets, spec)
        assert report.valid and report.violations == [] and report.n_samples >= 10_000

    def test_halved_gamma_is_caught_with_witness(self):
        nets = (identity_relu_net(), zero_output_net())
        spec = InputSpec.box(1)
        cert = solve(nets, spec)
        assert check_certificate(cert, nets, spec).valid
        g = cert.gammas
        cert.gammas = Gammas(*(0.5 * v for v in g.as_tuple()))
        report = check_certificate(cert, nets, spec)
        kinds = {v.kind for v in report.violations}
        assert not report.valid and "pointwise" in kinds
        witness = next(v for v in report.violations if v.kind == "pointwise").witness
        x1 = witness[0][0]
        assert x1 > 0.5  # relu(x)^2 is only large near x = 1

    def test_sign_flip_flagged(self, pair_l1):
        nets, spec, cert = pair_l1
        bad = BoundCertificate.from_dict(cert.to_dict())
        bad.multipliers.pos1[0] = -abs(bad.multipliers.pos1[0]) - 1.0
        report = check_certificate(bad, nets, spec)
        assert not report.valid and any(v.kind == "sign" for v in report.violations)

    def test_fingerprint_mismatch(self, pair_l1):
        nets, spec, cert = pair_l1
        report = check_certificate(cert, nets, InputSpec.box(1, -2, 2))
        assert any(v.kind == "fingerprint" for v in report.violations)

    def test_infeasible_status_reported(self):
        nets = random_pair(8)
        spec = InputSpec.box(1)
        cert = solve(nets, spec)
        cert.status = "infeasible"
        assert not check_certificate(cert, nets, spec).valid
