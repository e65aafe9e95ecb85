import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nsgalerkin.errors import BlowUpError, ParameterError
from nsgalerkin.nse_rhs import rhs
from nsgalerkin.params import ScalingParams
from nsgalerkin.spectral_core import (dual_sobolev_norm, l2_modes, lattice, single_mode,
                                      synthesize_data, taylor_green, zeros)
from nsgalerkin.trotter import (RunOptions, Trajectory, controlled_step, divergence_history,
                                euler_trotter_step, exponential_trotter_step, run, step_count,
                                viscous_factor, viscous_factors, write_trajectory_csv)

P = ScalingParams(nu=1.0, r=1.0)
QUIET = RunOptions(record_every=10 ** 9, fit_decay=False)


class TestParams:
    @pytest.mark.parametrize("bad", [dict(nu=0.0), dict(nu=1.0, r=-1.0), dict(nu=1.0, delta=1.0),
                                     dict(nu=1.0, D=1), dict(nu=1.0, l=0.0)])
    def test_validation(self, bad):
        with pytest.raises(ParameterError):
            ScalingParams(**bad)

    def test_diffusivity(self):
        assert ScalingParams(nu=0.5, r=2.0, rho=0.25).diffusivity == 0.5


class TestViscousFactor:
    def test_dt_zero(self):
        assert viscous_factor((2, 1, 0), P, 0.0) == 1.0

    def test_origin(self):
        assert viscous_factor((0, 0, 0), P, 5.0) == 1.0

    def test_value(self):
        assert viscous_factor((1, 0, 0), P, 0.01) == pytest.approx(np.exp(-0.04 * np.pi ** 2), rel=1e-15)
        assert viscous_factor((1, 0, 0), P, 0.01) == pytest.approx(0.67383, abs=5e-6)

    def test_lattice_version_matches(self):
        f = viscous_factors(3, 2, P, 0.003)
        assert f[3, 2, 4] == pytest.approx(viscous_factor((1, 0, 2), P, 0.003), rel=1e-15)

    def test_negative_dt(self):
        with pytest.raises(ParameterError):
            viscous_factor((1, 0, 0), P, -1.0)


class TestEulerStep:
    def test_zero_nonlinearity_is_exact_decay(self):
        f = single_mode(3, 3, (1, 2, 0), [2.0, -1.0, 0.0])   # rhs of one conjugate pair is 0
        out = euler_trotter_step(f, P, 0.01)
        expected = viscous_factor((1, 2, 0), P, 0.01) * f.mode((1, 2, 0))
        assert np.allclose(out.mode((1, 2, 0)), expected, rtol=1e-14, atol=0)

    def test_taylor_green_recomposition(self):
        f = taylor_green(4)
        dt = 1e-3
        oracle = rhs(f, P, method="direct").total.amplitudes
        expected = viscous_factors(3, 4, P, dt) * (f.amplitudes + dt * oracle)
        out = euler_trotter_step(f, P, dt).amplitudes
        assert np.max(np.abs(out - expected)) < 1e-15

    def test_linear_semigroup(self):
        f = synthesize_data((1.0, 3.0), seed=1, truncation=4)
        one = euler_trotter_step(f, P, 0.02, nonlinear=False)
        two = euler_trotter_step(euler_trotter_step(f, P, 0.01, nonlinear=False), P, 0.01, nonlinear=False)
        assert np.max(np.abs(one.amplitudes - two.amplitudes)) <= 1e-15 * np.max(np.abs(f.amplitudes))

    def test_rejects_nonfinite(self):
        f = taylor_green(2)
        a = f.amplitudes.copy()
        a[0, 2, 2, 3] = np.nan
        with pytest.raises(BlowUpError) as info:
            euler_trotter_step(f.with_amplitudes(a), P, 0.01)
        assert info.value.mode == (0, (0, 0, 1))

    def test_exponential_variant_agrees_to_first_order(self):
        f = synthesize_data((0.5, 3.0), seed=2, truncation=2)
        errs = []
        for dt in (1e-3, 5e-4):
            a = euler_trotter_step(f, P, dt).amplitudes
            b = exponential_trotter_step(f, P, dt).amplitudes
            errs.append(np.max(np.abs(a - b)))
        assert errs[1] < errs[0] / 3      # the two differ at O(dt^2)


class TestControlledStep:
    def test_mean_free_matches_plain_step(self):
        f = synthesize_data((1.0, 3.0), seed=3, truncation=3)
        plain = euler_trotter_step(f, P, 1e-3)
        ctrl, rec = controlled_step(f, P, 1e-3)
        assert np.max(np.abs(plain.amplitudes - ctrl.amplitudes)) < 1e-17
        assert rec.magnitude == 0.0

    def test_control_record(self):
        f = synthesize_data((1.0, 3.0), seed=4, truncation=3)
        a = f.amplitudes.copy()
        a[:, 3, 3, 3] = 3.0
        out, rec = controlled_step(f.with_amplitudes(a), P, 1e-3)
        assert np.all(rec.control == -3.0)
        assert np.all(out.amplitudes[:, 3, 3, 3] == 0)
        assert not rec.leray_sees_control

    def test_paired_runs_agree_on_nonzero_modes(self):
        f = synthesize_data((1.0, 3.0), seed=5, truncation=3)
        a = run(f, P, 0.02, 1e-3, QUIET).final.amplitudes
        b = run(f, P, 0.02, 1e-3, RunOptions(controlled=True, record_every=10 ** 9, fit_decay=False)).final.amplitudes
        a[:, 3, 3, 3] = 0.0
        assert np.max(np.abs(a - b)) < 1e-15


class TestRun:
    def test_zero_horizon(self):
        f = taylor_green(3)
        traj = run(f, P, 0.0, 1e-3)
        assert len(traj) == 1 and traj.final is f

    def test_non_integral_step_count(self):
        with pytest.raises(ParameterError):
            step_count(0.1, 0.03)
        assert step_count(0.3, 0.1) == 3

    def test_linear_run_closed_form(self):
        p = ScalingParams(nu=0.1, r=1.5)
        f = synthesize_data((1.0, 2.0), seed=6, truncation=6)
        T = 0.05
        traj = run(f, p, T, 1e-3, RunOptions(nonlinear=False, record_every=50))
        k2 = np.sum(lattice(3, 6).astype(float) ** 2, axis=0)
        e0 = np.sum(np.abs(f.amplitudes) ** 2, axis=0)
        for m in range(6):
            exact = np.sqrt(np.sum(e0 * (1 + (k2 > 0) * k2 ** m) * np.exp(-2 * 0.1 * 2.25 * 4 * np.pi ** 2 * k2 * T)))
            assert traj.norm_reports[-1].per_order[m] == pytest.approx(exact, rel=1e-12)

    def test_first_order_convergence(self):
        p = ScalingParams(nu=0.1)
        f = taylor_green(4)
        u = {k: run(f, p, 0.05, 1e-3 / k, QUIET).final for k in (1, 2, 8, 16)}
        ref = u[8]
        ratio = l2_modes(u[1] - ref) / l2_modes(u[2] - ref)
        # error c dt against a dt/8 reference gives (1 - 1/8)/(1/2 - 1/8) = 7/3
        assert ratio == pytest.approx(7 / 3, rel=0.05)
        extrapolated = u[16].scaled(2.0) - u[8]
        ratio_x = l2_modes(u[1] - extrapolated) / l2_modes(u[2] - extrapolated)
        assert 1.7 <= ratio_x <= 2.3

    def test_records_and_csv(self, tmp_path):
        f = synthesize_data((1.0, 3.0), seed=7, truncation=3)
        traj = run(f, P, 0.01, 1e-3, RunOptions(record_every=3))
        assert traj.times == pytest.approx([0.0, 0.003, 0.006, 0.009, 0.01])
        write_trajectory_csv(traj, tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0].split(",")[:3] == ["time", "h0", "h1"]
        assert len(lines) == 6
        assert max(divergence_history(traj)) < 1e-12

    def test_ceiling_blowup_carries_trajectory(self):
        f = synthesize_data((5.0, 1.0), seed=8, truncation=4)
        p = ScalingParams(nu=1e-4, r=50.0)
        with pytest.warns(RuntimeWarning), pytest.raises(BlowUpError) as info:
            run(f, p, 0.5, 0.01, RunOptions(ceiling_factor=10.0))
        err = info.value
        assert isinstance(err.trajectory, Trajectory) and len(err.trajectory) >= 1
        assert err.last_snapshot is not None

    def test_checkpoints(self, tmp_path):
        f = taylor_green(2)
        run(f, P, 0.004, 1e-3, RunOptions(checkpoint_every=2, checkpoint_dir=str(tmp_path / "ck")))
        assert sorted(p.name for p in (tmp_path / "ck").iterdir()) == ["step_00000002.json",
                                                                       "step_00000004.json"]

    def test_options_validation(self):
        with pytest.raises(ParameterError):
            RunOptions(record_every=0)
        with pytest.raises(ParameterError):
            RunOptions(checkpoint_every=5)

    def test_times_strictly_increasing(self):
        traj = Trajectory()
        rep = run(taylor_green(2), P, 0.0, 1e-3).norm_reports[0]
        traj.append(0.0, zeros(3, 2), rep, None, 0.0)
        with pytest.raises(ParameterError):
            traj.append(0.0, zeros(3, 2), rep, None, 0.0)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 10_000))
    def test_projection_keeps_solenoidal(self, seed):
        f = synthesize_data((1.0, 2.0), seed=seed, truncation=3)
        traj = run(f, ScalingParams(nu=0.2), 0.005, 1e-3, RunOptions(record_every=5, fit_decay=False))
        assert traj.max_projection_change < 1e-12 * dual_sobolev_norm(f, 0)
        assert max(divergence_history(traj)) < 1e-12
