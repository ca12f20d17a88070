import numpy as np
import pytest

from amcsim.device import DeviceParams, with_seed
from amcsim.errors import SingularMatrixError
from amcsim.generators import gram, regression_problem, wishart
from amcsim.mapping import NONNEGATIVE, make_scheme
from amcsim.pipeline import (
    analog_eigenvector,
    analog_least_squares,
    analog_matvec,
    analog_solve,
    effective_conductance,
    program_matrix,
)
from amcsim.system import ConverterSpec, power_iteration
from amcsim.write_verify import WriteVerifyConfig


class TestProgramMatrix:
    def test_oversized_matrix_rejected(self, quiet_params):
        with pytest.raises(ValueError):
            program_matrix(np.zeros((200, 4)), make_scheme(quiet_params, 1.0),
                           quiet_params, ideal=True)

    def test_ideal_vs_write_verify_plane_count(self, quiet_params, rng):
        a = rng.uniform(-1, 1, (8, 8))
        scheme = make_scheme(quiet_params, 1.0, n_slices=2)
        pm = program_matrix(a, scheme, quiet_params, ideal=True)
        assert len(pm.planes) == 4
        assert pm.reports is None
        pm_wv = program_matrix(a, scheme, quiet_params, WriteVerifyConfig())
        assert len(pm_wv.reports) == 4
        assert all(r.success.all() for r in pm_wv.reports)


class TestEffectiveConductance:
    def test_differential_cancels_floor(self, quiet_params, rng):
        a = rng.uniform(-1, 1, (8, 8))
        scheme = make_scheme(quiet_params, 1.0, n_slices=1)
        pm = program_matrix(a, scheme, quiet_params, ideal=True)
        eff = effective_conductance(pm, noisy=False)
        codes = pm.mapped.signed_codes()
        assert eff == pytest.approx(codes * quiet_params.level_spacing, abs=1e-18)

    def test_nonnegative_subtracts_floor(self, quiet_params, rng):
        a = rng.uniform(0, 1, (6, 6))
        scheme = make_scheme(quiet_params, 1.0, n_slices=1, signed_mode=NONNEGATIVE)
        pm = program_matrix(a, scheme, quiet_params, ideal=True)
        eff = effective_conductance(pm, noisy=False)
        codes = pm.mapped.signed_codes()
        assert eff == pytest.approx(codes * quiet_params.level_spacing, abs=1e-18)

    def test_two_slice_recombination(self, quiet_params, rng):
        a = rng.uniform(-1, 1, (6, 6))
        scheme = make_scheme(quiet_params, 1.0, n_slices=2)
        pm = program_matrix(a, scheme, quiet_params, ideal=True)
        eff = effective_conductance(pm, noisy=False)
        assert eff / quiet_params.level_spacing == pytest.approx(
            pm.mapped.signed_codes().astype(float))

    def test_scaled_reconstruction(self, quiet_params, rng):
        a = rng.uniform(-2, 2, (8, 8))
        scheme = make_scheme(quiet_params, 2.0, n_slices=1)
        pm = program_matrix(a, scheme, quiet_params, ideal=True)
        eff = effective_conductance(pm, noisy=False)
        assert eff * scheme.scale == pytest.approx(pm.reconstructed())


class TestSolvePipelines:
    def test_solve_recovers_reconstructed_solution(self, quiet_params, rng):
        a = wishart(16, rng) + 0.5 * np.eye(16)
        b = rng.standard_normal(16)
        scheme = make_scheme(quiet_params, float(np.abs(a).max()), n_slices=2)
        pm = program_matrix(a, scheme, quiet_params, ideal=True)
        res = analog_solve(pm, b)
        expected = np.linalg.solve(pm.reconstructed(), b)
        assert np.abs(res.value - expected).max() <= 1e-9 * np.abs(expected).max()
        assert not res.saturated

    def test_least_squares_recovers_reconstructed_solution(self, quiet_params, rng):
        design, obs, _ = regression_problem(40, 5, rng)
        scheme = make_scheme(quiet_params, float(np.abs(design).max()), n_slices=2)
        pm_a = program_matrix(design, scheme, quiet_params, ideal=True)
        pm_at = program_matrix(design.T, scheme, quiet_params, ideal=True)
        res = analog_least_squares(pm_a, pm_at, obs)
        a_eff = pm_a.reconstructed()
        at_eff = pm_at.reconstructed()
        expected = np.linalg.solve(at_eff @ a_eff, at_eff @ obs)
        assert np.abs(res.value - expected).max() <= 1e-9 * np.abs(expected).max()

    def test_eigenvector_recovers_reconstructed_eigvec(self, quiet_params, rng):
        g = gram(24, rng)
        scheme = make_scheme(quiet_params, 1.0, n_slices=2)
        pm = program_matrix(g, scheme, quiet_params, ideal=True)
        lam = power_iteration(pm.reconstructed(), tol=1e-14).eigenvalue
        res = analog_eigenvector(pm, lam)
        w, v = np.linalg.eigh(pm.reconstructed())
        ref = v[:, -1]
        cos = abs(ref @ res.value) / (np.linalg.norm(ref) * np.linalg.norm(res.value))
        assert cos >= 1 - 1e-9

    def test_matvec_shape_checks(self, quiet_params, rng):
        pm = program_matrix(rng.uniform(-1, 1, (8, 6)),
                            make_scheme(quiet_params, 1.0), quiet_params, ideal=True)
        with pytest.raises(ValueError):
            analog_matvec(pm, np.ones(7))
        with pytest.raises(ValueError):
            analog_solve(pm, np.ones(8))  # non-square

    def test_singularity_propagates(self, quiet_params):
        a = np.ones((4, 4))  # rank one
        pm = program_matrix(a, make_scheme(quiet_params, 1.0), quiet_params, ideal=True)
        with pytest.raises(SingularMatrixError):
            analog_solve(pm, np.ones(4))

    def test_auto_range_recorded(self, quiet_params, rng):
        a = wishart(16, rng) + 0.5 * np.eye(16)
        pm = program_matrix(a, make_scheme(quiet_params, float(np.abs(a).max())),
                            quiet_params, ideal=True)
        res = analog_solve(pm, rng.standard_normal(16), converters=ConverterSpec())
        assert res.auto_range > 0
        assert res.condition_estimate > 1

    def test_matvec_batch(self, quiet_params, rng):
        a = rng.uniform(-1, 1, (8, 8))
        pm = program_matrix(a, make_scheme(quiet_params, 1.0), quiet_params, ideal=True)
        batch = rng.standard_normal((8, 3))
        res = analog_matvec(pm, batch)
        assert res.value.shape == (8, 3)
        single = analog_matvec(pm, batch[:, 1])
        # same conductances (noise off) so columns agree up to input scaling
        assert res.value[:, 1] == pytest.approx(single.value, rel=1e-9, abs=1e-12)


def test_full_noisy_pipeline_determinism(rng):
    """Same seed, same stream keys: identical pipeline outputs."""
    a = wishart(12, rng) + 0.3 * np.eye(12)
    b = rng.standard_normal(12)

    def run():
        params = with_seed(DeviceParams(), 31)
        scheme = make_scheme(params, float(np.abs(a).max()))
        pm = program_matrix(a, scheme, params, WriteVerifyConfig(), stream_base=5)
        return analog_solve(pm, b, converters=ConverterSpec()).value

    assert np.array_equal(run(), run())
