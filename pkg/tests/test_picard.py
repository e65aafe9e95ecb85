import json

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import gamma, gammainc, gammaincc

from nsgalerkin.errors import ContractionFailure, ParameterError, QuadratureError, TimeGridMismatch
from nsgalerkin.nse_rhs import rhs
from nsgalerkin.params import ScalingParams
from nsgalerkin.picard import (KernelConstants, choose_rho, c_dm, constants_json, decay_rates,
                               duhamel_iterate, gaussian_norms, kernel_constants, laplace_norms,
                               lobatto_nodes, multi_index_count, picard_solve, select_rho)
from nsgalerkin.spectral_core import dual_sobolev_norm, scale_to_norm, synthesize_data, taylor_green, zeros

P = ScalingParams(nu=1.0, r=1.0, rho=0.5)


def unit_consts(**kw):
    base = dict(C_G=1.0, C_K=1.0, C_0gamma=1.0, C_1gamma=1.0, delta_used=1.0)
    return KernelConstants(**{**base, **kw})


class TestDuhamel:
    def test_nodes(self):
        n = lobatto_nodes(9, 2.0, 0.5)
        assert n[0] == 2.0 and n[-1] == pytest.approx(2.5) and np.all(np.diff(n) > 0)
        coarse, fine = lobatto_nodes(5, 0, 1), lobatto_nodes(9, 0, 1)
        assert np.allclose(coarse, fine[::2], rtol=0, atol=1e-15)

    def test_zero_prev_is_heat_flow(self):
        data = synthesize_data((1.0, 3.0), seed=1, truncation=3)
        nodes = lobatto_nodes(9, 0.0, 0.1)
        out = duhamel_iterate(data, [zeros(3, 3)] * 9, P, 0.1, nodes)
        lam = decay_rates(data, P)
        for t, f in zip(nodes, out):
            assert np.max(np.abs(f.amplitudes - np.exp(-lam * t) * data.amplitudes)) < 1e-15

    def test_constant_prev_closed_form(self):
        data = synthesize_data((1.0, 3.0), seed=2, truncation=3)
        w = rhs(data, P).total.amplitudes
        nodes = lobatto_nodes(9, 0.0, 0.2)
        out = duhamel_iterate(data, [data] * 9, P, 0.2, nodes)
        lam = decay_rates(data, P)
        nz = lam > 0
        for t, f in zip(nodes[1:], out[1:]):
            duhamel = f.amplitudes - np.exp(-lam * t) * data.amplitudes
            exact = P.rho * w * np.where(nz, -np.expm1(-lam * t) / np.where(nz, lam, 1.0), t)
            scale = np.max(np.abs(exact))
            assert np.max(np.abs(duhamel - exact)[:, nz]) <= 1e-10 * scale

    def test_node_refinement(self):
        data = taylor_green(4)
        delta = 1e-3
        a = duhamel_iterate(data, [data] * 9, P, delta, lobatto_nodes(9, 0, delta))
        b = duhamel_iterate(data, [data] * 17, P, delta, lobatto_nodes(17, 0, delta))
        assert np.max(np.abs(a[-1].amplitudes - b[-1].amplitudes)) <= 1e-8

    def test_grid_mismatch(self):
        data = taylor_green(2)
        with pytest.raises(TimeGridMismatch):
            duhamel_iterate(data, [data] * 3, P, 0.1, lobatto_nodes(9, 0, 0.1))
        with pytest.raises(TimeGridMismatch):
            duhamel_iterate(data, [data] * 9, P, 0.1, lobatto_nodes(9, 0.5, 0.1))


class TestKernelConstants:
    def oracle(self, s, delta):
        a = lambda t: np.sqrt(4 * s * t)
        ball = quad(lambda t: gammainc(1.5, a(t) ** -2), 0, delta, limit=200)[0]
        ext = quad(lambda t: gammaincc(1.5, a(t) ** -2), 0, delta, limit=200)[0]
        j_ball = quad(lambda t: 2 / (a(t) * np.sqrt(np.pi)) * gammainc(2, a(t) ** -2), 0, delta, limit=200)[0]
        ext_l2 = np.sqrt(quad(lambda t: np.pi ** -3 * a(t) ** -3 * 4 * np.pi * 0.5 * 2 ** -1.5 * gamma(1.5)
                              * gammaincc(1.5, 2 * a(t) ** -2), 0, delta, limit=200)[0])
        return ball, ext, j_ball, ext_l2

    @pytest.mark.parametrize("s,delta", [(1.0, 1.0), (0.01, 0.5)])
    def test_gaussian_norms_against_incomplete_gamma(self, s, delta):
        g = gaussian_norms(s, delta, 3)
        ball, ext, j_ball, ext_l2 = self.oracle(s, delta)
        assert g["G_ball_L1"] == pytest.approx(ball, rel=1e-9)
        assert g["G_ext_L1"] == pytest.approx(ext, rel=1e-9)
        assert g["Gj_ball_L1"] == pytest.approx(j_ball, rel=1e-9)
        assert g["G_ext_L2"] == pytest.approx(ext_l2, rel=1e-9)

    def test_laplace_ball_closed_form(self):
        k = laplace_norms(3)
        assert k["K_ball_L1"] == pytest.approx(2 * np.pi, rel=1e-12)
        assert k["K_ext_L2sq"] == pytest.approx(4 * np.pi / 3, rel=1e-12)

    def test_C_K_formula(self):
        c = kernel_constants(P, 0.3)
        assert c.C_K == pytest.approx(1 + 3 * 0.3 * 2 * np.pi + 3 * np.sqrt(0.3 * 4 * np.pi / 3), rel=1e-12)

    def test_local_part_vanishes_with_interval(self):
        local = []
        for delta in (1.0, 0.1, 0.01, 1e-3, 1e-4, 1e-6):
            g = kernel_constants(P, delta).parts["scaled"]
            local.append(g["G_ball_L1"] + 3 * g["Gj_ball_L1"])
        assert all(b < a for a, b in zip(local, local[1:]))
        assert local[-1] < 0.01

    def test_two_dimensional_exterior_diverges(self):
        with pytest.raises(QuadratureError):
            kernel_constants(ScalingParams(nu=1.0, D=2), 1.0)

    def test_count(self):
        assert multi_index_count(3, 2) == 6
        assert c_dm(3, 2) == 202
        assert c_dm(3, 0) == 13

    def test_json(self):
        d = json.loads(constants_json(kernel_constants(P, 0.5), 202))
        assert d["c_Dm"] == 202 and d["C_G"] > 0


class TestChooseRho:
    def test_formula(self):
        assert choose_rho(1.0, 10.0, unit_consts(C_G=5.0), 1.0).kernel_rule == pytest.approx(1 / 200)

    def test_r_doubles(self):
        c = unit_consts(C_G=2.0, C_K=3.0)
        assert choose_rho(1.0, 4.0, c, 7.0).kernel_rule == pytest.approx(choose_rho(1.0, 2.0, c, 7.0).kernel_rule / 2)

    def test_second_rule(self):
        assert choose_rho(1.0, 1.0, unit_consts(), 1.0, L=2.0, beta_sum=3.0).lipschitz_rule == pytest.approx(1 / 24)

    def test_rejects_nonpositive(self):
        with pytest.raises(ParameterError):
            choose_rho(0.0, 1.0, unit_consts(), 1.0)

    def test_fixed_point(self):
        p = ScalingParams(nu=1.0)
        rho, consts = select_rho(p, 1.0, 1.0)
        assert rho == pytest.approx(choose_rho(1.0, 1.0, consts, c_dm(3, 2)).kernel_rule, rel=1e-5)


@pytest.fixture(scope="module")
def rho():
    return select_rho(ScalingParams(nu=1.0), 1.0, 1.0)[0]


class TestPicardSolve:
    def test_zero_data(self):
        _, trace = picard_solve(zeros(3, 3), P, 0.5)
        assert trace.converged and trace.iterates_kept == 1 and trace.increment_norms == [0.0]

    def test_taylor_green_contracts(self, rho):
        data = scale_to_norm(taylor_green(4), 2, 1.0)
        sol, trace = picard_solve(data, ScalingParams(nu=1.0, rho=rho), 1.0, C0=1.0)
        assert trace.converged and trace.measured_ratio <= 0.5
        assert len(sol.samples) == len(sol.nodes)

    def test_larger_rho_contracts_less(self, rho):
        data = scale_to_norm(synthesize_data((1.0, 3.0), seed=3, truncation=4), 2, 1.0)
        q = [picard_solve(data, ScalingParams(nu=1.0, rho=x), 1.0, tol=1e-13)[1].measured_ratio
             for x in (rho, 100 * rho)]
        assert q[1] > q[0]

    def test_data_above_C0(self):
        data = scale_to_norm(taylor_green(3), 2, 2.0)
        with pytest.raises(ParameterError):
            picard_solve(data, P, 0.1, C0=1.0)

    def test_divergent_iteration_raises_with_trace(self):
        data = scale_to_norm(synthesize_data((1.0, 1.0), seed=4, truncation=3), 2, 50.0)
        with pytest.raises(ContractionFailure) as info:
            picard_solve(data, ScalingParams(nu=0.01, rho=1.0), 1.0, kmax=30)
        assert len(info.value.trace.increment_norms) >= 4

    def test_trace_outputs(self, tmp_path, rho):
        data = scale_to_norm(taylor_green(3), 2, 0.5)
        _, trace = picard_solve(data, ScalingParams(nu=1.0, rho=rho), 1.0)
        trace.write_csv(tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "k,increment_norm,ratio" and len(lines) == trace.iterates_kept + 1
        d = json.loads(trace.to_json())
        assert d["rho_used"] == rho and d["converged"]
        assert dual_sobolev_norm(data, 2) == pytest.approx(0.5)
