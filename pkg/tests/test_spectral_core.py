import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nsgalerkin.errors import ParameterError, UndefinedFitError
from nsgalerkin.params import ScalingParams
from nsgalerkin.spectral_core import (DecayEnvelope, ModeField, divergence, divergence_defect,
                                      dual_sobolev_norm, enforce_reality, fit_decay_envelope, fit_order,
                                      from_json_dict, high_shell_fraction, lattice, leray_project,
                                      load_checkpoint, norm_report, radius, reality_defect,
                                      save_checkpoint, shell_spectrum, single_mode, synthesize_data,
                                      taylor_green, to_json_dict, write_shell_csv, zeros)
from nsgalerkin.trotter import RunOptions, run


def random_field(d, m, seed, solenoidal=False):
    rng = np.random.default_rng(seed)
    shape = (d,) + (2 * m + 1,) * d
    f = enforce_reality(ModeField(rng.standard_normal(shape) + 1j * rng.standard_normal(shape)))
    return leray_project(f) if solenoidal else f


class TestModeField:
    def test_rejects_bad_shapes(self):
        with pytest.raises(ParameterError):
            ModeField(np.zeros((3, 4, 4, 4)))
        with pytest.raises(ParameterError):
            ModeField(np.zeros((3, 5, 5)))
        with pytest.raises(ParameterError):
            ModeField(np.zeros((2, 5, 5)), torus_diameter=0.0)

    def test_mode_lookup_and_bounds(self):
        f = single_mode(3, 2, (1, 0, -2), [1, 2j, 0])
        assert np.allclose(f.mode((1, 0, -2)), [1, 2j, 0])
        assert np.allclose(f.mode((-1, 0, 2)), [1, -2j, 0])
        with pytest.raises(ParameterError):
            f.mode((3, 0, 0))

    def test_lattice_layout(self):
        k = lattice(2, 3)
        assert k.shape == (2, 7, 7)
        assert tuple(k[:, 0, 6]) == (-3, 3)


class TestNorms:
    def test_zero_mode(self):
        f = single_mode(3, 2, (0, 0, 0), [1, 0, 0])
        assert dual_sobolev_norm(f, 2) == 1.0

    def test_origin_weight_is_order_independent(self):
        f = single_mode(3, 2, (0, 0, 0), [1, 0, 0])
        assert [dual_sobolev_norm(f, m) for m in range(4)] == [1.0] * 4

    def test_conjugate_pair(self):
        f = single_mode(3, 2, (1, 0, 0), [1, 0, 0])
        assert dual_sobolev_norm(f, 1) == pytest.approx(2.0, abs=1e-15)

    def test_against_term_by_term_sum(self):
        f = random_field(3, 7, 0)
        M = 7
        for m in (0, 1, 3):
            total = 0.0
            for idx in itertools.product(range(2 * M + 1), repeat=3):
                a2 = sum((i - M) ** 2 for i in idx)
                for comp in range(3):
                    total += abs(f.amplitudes[(comp,) + idx]) ** 2 * (1 + (a2 ** m if a2 else 0))
            assert dual_sobolev_norm(f, m) == pytest.approx(np.sqrt(total), rel=1e-13)

    def test_negative_order_rejected(self):
        with pytest.raises(ParameterError):
            dual_sobolev_norm(zeros(2, 2), -1)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 4))
    def test_norm_report_monotone_in_order(self, seed, m):
        rep = norm_report(random_field(2, m, seed), 5)
        values = [rep.per_order[k] for k in range(6)]
        assert all(b >= a for a, b in zip(values, values[1:]))
        assert rep.sup_mode > 0


class TestProjection:
    def test_gradient_field_is_removed(self):
        rng = np.random.default_rng(1)
        k = lattice(3, 3)
        c = rng.standard_normal(k.shape[1:])
        grad = ModeField(k * c)
        out = leray_project(grad).amplitudes
        out[(slice(None), 3, 3, 3)] = 0.0
        assert np.max(np.abs(out)) < 1e-14

    def test_idempotent_on_solenoidal(self):
        f = random_field(3, 4, 2, solenoidal=True)
        assert np.max(np.abs(leray_project(f).amplitudes - f.amplitudes)) < 1e-15

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from([2, 3]), st.integers(1, 4))
    def test_projection_is_solenoidal_and_idempotent(self, seed, d, m):
        p = leray_project(random_field(d, m, seed))
        scale = np.max(np.abs(p.amplitudes)) * m
        assert np.max(np.abs(divergence(p))) <= 1e-12 * scale
        assert np.allclose(leray_project(p).amplitudes, p.amplitudes, rtol=0, atol=1e-14 * scale)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000))
    def test_projection_preserves_reality(self, seed):
        p = leray_project(random_field(3, 2, seed))
        assert reality_defect(p) < 1e-14


class TestDecayFit:
    def test_constructed_envelope(self):
        M = 8
        amp = 1.0 / (1.0 + radius(3, M) ** 5)
        f = ModeField(np.stack([amp, amp, amp]).astype(complex))
        fit = fit_decay_envelope(f, 5.0)
        assert fit.tightest_constant == pytest.approx(1.0, rel=1e-12)
        assert fit.fitted_order == pytest.approx(5.0, abs=0.05)

    def test_single_zero_mode(self):
        f = single_mode(3, 3, (0, 0, 0), [0.7, 0, 0])
        fit = fit_decay_envelope(f, 5.0)
        assert fit.tightest_constant == pytest.approx(0.7)
        assert fit.fitted_order is None

    def test_zero_field_is_undefined(self):
        with pytest.raises(UndefinedFitError):
            fit_decay_envelope(zeros(3, 2), 5.0)

    def test_fit_ignores_roundoff_residue(self):
        radii = np.array([0.0, 1.0, 2.0, 3.0])
        amps = 1.0 / (1.0 + radii ** 4)
        amps[0] = 1e-20
        assert fit_order(radii, amps) == pytest.approx(4.0, abs=1e-6)

    def test_heat_evolution_raises_fitted_order(self):
        data = synthesize_data((1.0, 3.0), seed=3, truncation=6)
        traj = run(data, ScalingParams(nu=0.05), 0.05, 1e-3,
                   RunOptions(nonlinear=False, record_every=10))
        orders = traj.envelope_fits
        assert all(b >= a - 1e-9 for a, b in zip(orders, orders[1:]))
        assert orders[-1] > orders[0]

    def test_envelope_validation(self):
        with pytest.raises(ParameterError):
            DecayEnvelope(-1.0, 5.0)
        env = DecayEnvelope(2.0, 3.0)
        assert env.bound(np.array([0.0, 1.0])).tolist() == [2.0, 1.0]


class TestSynthesis:
    def test_envelope_data_within_bounds(self):
        f = synthesize_data(DecayEnvelope(1.0, 5.0), seed=7, truncation=8)
        assert fit_decay_envelope(f, 5.0).tightest_constant <= 1.0
        assert DecayEnvelope(1.0, 5.0).holds(f)
        assert divergence_defect(f) < 1e-12
        assert reality_defect(f) == 0.0

    def test_taylor_green_single_shell(self):
        f = taylor_green(4)
        radii, smax, _ = shell_spectrum(f)
        active = radii[smax > 0]
        assert active.tolist() == pytest.approx([np.sqrt(3)])
        assert divergence_defect(f) < 1e-15
        assert reality_defect(f) == 0.0

    def test_deterministic(self):
        a = synthesize_data((1.0, 4.0), seed=9, truncation=5)
        b = synthesize_data((1.0, 4.0), seed=9, truncation=5)
        assert np.array_equal(a.amplitudes, b.amplitudes)

    def test_unknown_profile(self):
        with pytest.raises(ParameterError):
            synthesize_data("vortex_ring")

    def test_high_shell_fraction_bounds(self):
        f = synthesize_data((1.0, 1.0), seed=1, truncation=6)
        assert 0.0 < high_shell_fraction(f) < 1.0
        assert high_shell_fraction(zeros(3, 3)) == 0.0


class TestIO:
    def test_checkpoint_roundtrip(self, tmp_path):
        f = synthesize_data((1.0, 2.0), seed=4, truncation=3)
        save_checkpoint(f, tmp_path / "c.json")
        g = load_checkpoint(tmp_path / "c.json")
        assert np.max(np.abs(g.amplitudes - f.amplitudes)) < 1e-14
        assert g.divergence_free

    def test_json_rejects_missing_keys(self):
        d = to_json_dict(zeros(2, 1))
        del d["truncation"]
        with pytest.raises(ParameterError):
            from_json_dict(json.loads(json.dumps(d)))

    def test_shell_csv_has_header(self, tmp_path):
        write_shell_csv(taylor_green(3), tmp_path / "s.csv")
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "shell_radius,max_amp,l2_amp"
        assert len(lines) > 2
