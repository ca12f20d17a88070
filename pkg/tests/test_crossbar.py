import numpy as np
import pytest

from amcsim.crossbar import ARRAY_COLS, ARRAY_ROWS, ActiveRegion, CrossbarArray, select_region
from amcsim.device import DeviceParams, state_from_x


def make_array(params, levels=None, region=None):
    arr = CrossbarArray(params)
    if region is not None:
        arr.select_region(region)
    if levels is not None:
        arr.set_levels(levels)
    return arr


class TestActiveRegion:
    def test_full_array_is_default(self, quiet_params):
        arr = CrossbarArray(quiet_params)
        assert arr.active.shape == (ARRAY_ROWS, ARRAY_COLS)
        assert arr.read_conductance_matrix().shape == (128, 128)

    def test_out_of_bounds_rejected(self):
        with pytest.raises(ValueError):
            ActiveRegion(0, 129, 0, 1)
        with pytest.raises(ValueError):
            ActiveRegion(120, 16, 0, 16)
        with pytest.raises(ValueError):
            ActiveRegion(0, 0, 0, 4)

    def test_six_column_region_gives_six_outputs(self, quiet_params):
        arr = make_array(quiet_params, region=ActiveRegion(0, 128, 0, 6))
        out = arr.mvm_currents(np.ones(128))
        assert out.shape == (6,)

    def test_single_cell_is_ohms_law(self, quiet_params):
        arr = make_array(quiet_params, region=ActiveRegion(3, 1, 5, 1))
        arr.set_cell(3, 5, state_from_x(1.0, quiet_params))
        out = arr.mvm_currents(np.array([0.25]))
        assert out[0] == pytest.approx(100e-6 * 0.25)

    def test_select_region_function_chains(self, quiet_params):
        arr = CrossbarArray(quiet_params)
        same = select_region(arr, ActiveRegion(0, 4, 0, 4))
        assert same is arr
        assert arr.active.shape == (4, 4)


class TestReadMatrix:
    def test_uniform_fresh_array(self, quiet_params):
        arr = make_array(quiet_params, region=ActiveRegion(0, 8, 0, 8))
        assert np.all(arr.read_conductance_matrix() == 1e-6)

    def test_read_idempotent_noise_free(self, quiet_params, rng):
        levels = rng.integers(0, 16, (8, 8))
        arr = make_array(quiet_params, levels, ActiveRegion(0, 8, 0, 8))
        first = arr.read_conductance_matrix()
        assert np.array_equal(first, arr.read_conductance_matrix())

    def test_noisy_mean_converges(self):
        # mean of 1000 reads approaches the noise-free value within
        # 3 sigma / sqrt(1000) relative (fixed seed keeps this stable)
        p = DeviceParams(sigma_read=0.05)
        arr = make_array(p, np.full((4, 4), 8), ActiveRegion(0, 4, 0, 4))
        clean = arr.conductances()
        reads = np.stack([arr.read_conductance_matrix() for _ in range(1000)])
        rel = np.abs(reads.mean(axis=0) - clean) / clean
        assert rel.max() <= 3 * 0.05 / np.sqrt(1000)

    def test_outside_region_untouched_by_programming(self, quiet_params):
        arr = make_array(quiet_params, region=ActiveRegion(2, 4, 2, 4))
        arr.set_levels(np.full((4, 4), 15))
        assert arr.x[0, 0] == 0.0
        assert arr.x[2, 2] == 1.0

    def test_set_conductances_validates_range(self, quiet_params):
        arr = make_array(quiet_params, region=ActiveRegion(0, 2, 0, 2))
        with pytest.raises(ValueError):
            arr.set_conductances(np.full((2, 2), 200e-6))
        with pytest.raises(ValueError):
            arr.set_conductances(np.ones((3, 3)) * 5e-6)


class TestMvmCurrents:
    def test_zero_input(self, quiet_params, rng):
        arr = make_array(quiet_params, rng.integers(0, 16, (8, 8)), ActiveRegion(0, 8, 0, 8))
        assert np.all(arr.mvm_currents(np.zeros(8)) == 0.0)

    def test_matches_triple_loop_oracle(self, quiet_params, rng):
        n = 16
        levels = rng.integers(0, 16, (n, n))
        arr = make_array(quiet_params, levels, ActiveRegion(0, n, 0, n))
        v = rng.standard_normal(n)
        g = arr.conductances()

        expected = np.zeros(n)
        for j in range(n):
            for i in range(n):
                expected[j] += g[i, j] * v[i]

        assert arr.mvm_currents(v) == pytest.approx(expected, rel=0, abs=1e-18)

    def test_linearity_noise_off(self, quiet_params, rng):
        arr = make_array(quiet_params, rng.integers(0, 16, (12, 12)), ActiveRegion(0, 12, 0, 12))
        v1, v2 = rng.standard_normal(12), rng.standard_normal(12)
        a, b = 2.5, -1.25
        lhs = arr.mvm_currents(a * v1 + b * v2)
        rhs = a * arr.mvm_currents(v1) + b * arr.mvm_currents(v2)
        assert np.abs(lhs - rhs).max() <= 1e-12 * np.abs(rhs).max()

    def test_dimension_mismatch(self, quiet_params):
        arr = make_array(quiet_params, region=ActiveRegion(0, 8, 0, 8))
        with pytest.raises(ValueError):
            arr.mvm_currents(np.ones(7))

    def test_region_containment(self, quiet_params, rng):
        # cells outside the active region never influence the output
        region = ActiveRegion(4, 8, 4, 8)
        arr = make_array(quiet_params, rng.integers(0, 16, (8, 8)), region)
        v = rng.standard_normal(8)
        baseline = arr.mvm_currents(v)
        arr.x[0, 0] = 1.0
        arr.x[127, 127] = 1.0
        arr.x[3, 4] = 1.0   # adjacent row, same columns
        assert np.array_equal(arr.mvm_currents(v), baseline)

    def test_batched_input(self, quiet_params, rng):
        arr = make_array(quiet_params, rng.integers(0, 16, (8, 8)), ActiveRegion(0, 8, 0, 8))
        batch = rng.standard_normal((8, 5))
        out = arr.mvm_currents(batch)
        assert out.shape == (8, 5)
        assert out[:, 2] == pytest.approx(arr.mvm_currents(batch[:, 2]))
