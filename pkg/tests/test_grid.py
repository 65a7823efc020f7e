import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import fracpara.grid as G


class TestMakeGrid:
    def test_desk_grid_steps(self):
        grid = G.make_grid(1, 2 * np.pi, 64, 1.0, 4, 256)
        assert grid.h == 2 * np.pi / 64
        assert grid.dt == 8.0 / 256

    def test_rejects_non_power_of_two(self):
        with pytest.raises(ValueError, match="non-power-of-two"):
            G.make_grid(1, 2 * np.pi, 63, 1.0, 4, 256)
        with pytest.raises(ValueError, match="non-power-of-two"):
            G.make_grid(1, 2 * np.pi, 64, 1.0, 4, 100)

    def test_rejects_small_padding(self):
        with pytest.raises(ValueError, match="wrap-around"):
            G.make_grid(1, 2 * np.pi, 64, 1.0, 1.5, 256)

    def test_2d_sample_count(self):
        grid = G.make_grid(2, 2 * np.pi, 32, 0.5, 4, 128)
        assert grid.n_samples == 128 * 32 * 32 == 131072

    def test_physical_window_alignment(self):
        grid = G.make_grid(1, 2 * np.pi, 64, 1.0, 4, 256)
        t = grid.time_coordinates()
        sl = grid.physical_time_slice(open_window=False)
        assert t[sl.start] == pytest.approx(-1.0, abs=1e-14)
        assert t[sl.stop - 1] == pytest.approx(1.0, abs=1e-14)

    @given(exp=st.integers(min_value=3, max_value=8))
    @settings(max_examples=6, deadline=None)
    def test_power_of_two_sizes_accepted(self, exp):
        grid = G.make_grid(1, 1.0, 2**exp, 1.0, 4, 2**(exp + 1))
        assert grid.n_samples == 2**exp * 2**(exp + 1)


class TestPartition:
    def test_valid_partition_margin(self, desk_grid):
        part = G.make_partition(desk_grid, (2.0, 4.0), (0.2, 1.0), (5.0, 5.8))
        assert part.kappa >= 1.0
        for mask in (part.omega_mask, part.w1_mask, part.w2_mask):
            assert mask.any()

    def test_overlap_rejected(self, desk_grid):
        with pytest.raises(ValueError, match="overlap"):
            G.make_partition(desk_grid, (2.0, 4.0), (3.0, 5.0), (5.5, 5.8))

    def test_empty_mask_rejected(self, desk_grid):
        h = desk_grid.h
        with pytest.raises(ValueError, match="empty mask"):
            G.make_partition(desk_grid, (2.0, 4.0), (1.0 + 0.1 * h, 1.0 + 0.2 * h),
                             (5.0, 5.8))

    def test_wrapped_interval(self, desk_grid):
        part = G.make_partition(desk_grid, (2.0, 4.0), (4.4, 1.4), (1.6, 1.9))
        x = desk_grid.spatial_coordinates()
        assert part.w1_mask[x < 1.4].any() and part.w1_mask[x > 4.4].any()
        assert not (part.w1_mask & part.omega_mask).any()

    def test_interior_mask_excludes_endpoints(self, desk_partition):
        mask = desk_partition.interior_spacetime_mask()
        t = desk_partition.grid.time_coordinates()
        on_boundary = np.isclose(np.abs(t), 1.0)
        assert not mask[on_boundary].any()


class TestInnerProduct:
    def test_constant_full_volume(self, desk_grid):
        one = G.make_field(desk_grid, np.ones(desk_grid.field_shape))
        val = G.l2_inner_product(one, one)
        # 2 P T * L
        assert val.real == pytest.approx(8.0 * 2 * np.pi, rel=1e-14)
        assert val.imag == 0.0

    def test_plane_wave_orthogonality(self, desk_grid):
        x = desk_grid.spatial_coordinates()
        a = G.make_field(desk_grid, np.broadcast_to(np.exp(1j * x), desk_grid.field_shape))
        b = G.make_field(desk_grid, np.broadcast_to(np.exp(2j * x), desk_grid.field_shape))
        val = G.l2_inner_product(a, b)
        assert abs(val) < 1e-12

    def test_restricted_against_fixed_order_oracle(self, desk_grid, desk_partition):
        # independent summation-order oracle: math.fsum over reversed order
        t = desk_grid.time_coordinates()
        x = desk_grid.spatial_coordinates()
        with np.errstate(divide="ignore", over="ignore"):
            prof = np.where(np.abs(t) < 1.0,
                            np.exp(-1.0 / np.maximum(1e-300, 1 - t**2)), 0.0)
        vals = prof[:, None] * np.exp(-((x - 3.0) ** 2))[None, :]
        u = G.make_field(desk_grid, vals)
        mask = desk_partition.interior_spacetime_mask()
        got = G.l2_inner_product(u, u, region=mask)
        prods = (vals * np.conj(vals))[mask].real
        want = desk_grid.cell_volume * math.fsum(prods[::-1].tolist())
        assert abs(got.real - want) <= 1e-12 * abs(want)

    @given(seed=st.integers(min_value=0, max_value=2**31 - 1))
    @settings(max_examples=10, deadline=None)
    def test_conjugate_symmetry(self, seed):
        grid = G.make_grid(1, 2 * np.pi, 16, 1.0, 4, 32)
        rng = np.random.default_rng(seed)
        a = G.make_field(grid, rng.standard_normal(grid.field_shape)
                         + 1j * rng.standard_normal(grid.field_shape))
        b = G.make_field(grid, rng.standard_normal(grid.field_shape)
                         + 1j * rng.standard_normal(grid.field_shape))
        lhs = G.l2_inner_product(a, b)
        rhs = np.conj(G.l2_inner_product(b, a))
        assert abs(lhs - rhs) <= 1e-14 * max(abs(lhs), 1.0)

    def test_weighted_equals_unweighted_for_identity(self, desk_grid):
        rng = np.random.default_rng(5)
        vals = rng.standard_normal(desk_grid.field_shape) * (1 + 0j)
        u = G.make_field(desk_grid, vals)
        met = G.identity_metric(desk_grid)
        assert G.l2_inner_product(u, u) == G.l2_inner_product(u, u, weighted=True,
                                                              metric=met)

    def test_grid_mismatch_rejected(self, desk_grid, small_grid):
        a = G.make_field(desk_grid, np.zeros(desk_grid.field_shape))
        b = G.make_field(small_grid, np.zeros(small_grid.field_shape))
        with pytest.raises(ValueError, match="grid mismatch"):
            G.l2_inner_product(a, b)


class TestMetric:
    def test_identity_flags(self, desk_grid):
        met = G.identity_metric(desk_grid)
        assert met.is_identity and met.ellipticity == 1.0

    def test_variable_ellipticity(self, desk_grid):
        x = desk_grid.spatial_coordinates()
        met = G.metric_from_values(desk_grid, 1.0 + 0.5 * np.sin(x))
        assert met.ellipticity == pytest.approx(0.5, abs=1e-12)

    def test_nonpositive_rejected(self, desk_grid):
        x = desk_grid.spatial_coordinates()
        with pytest.raises(ValueError, match="ellipticity"):
            G.metric_from_values(desk_grid, np.sin(x))

    def test_2d_spd(self):
        grid = G.make_grid(2, 2 * np.pi, 16, 0.5, 4, 64)
        vals = np.zeros(grid.spatial_shape + (2, 2))
        x = grid.spatial_coordinates()
        vals[..., 0, 0] = 1.0 + 0.3 * np.sin(x)[:, None]
        vals[..., 1, 1] = 1.0 + 0.3 * np.cos(x)[None, :]
        vals[..., 0, 1] = vals[..., 1, 0] = 0.1
        met = G.metric_from_values(grid, vals)
        assert 0 < met.ellipticity < 1
        assert met.sqrt_det.shape == grid.spatial_shape


class TestField:
    def test_immutability(self, desk_grid):
        u = G.make_field(desk_grid, np.zeros(desk_grid.field_shape))
        with pytest.raises(ValueError):
            u.values[0] = 1.0

    def test_nonfinite_rejected(self, desk_grid):
        vals = np.zeros(desk_grid.field_shape)
        vals[0, 0] = np.inf
        with pytest.raises(ValueError, match="non-finite"):
            G.make_field(desk_grid, vals)

    def test_shape_mismatch_rejected(self, desk_grid):
        with pytest.raises(ValueError, match="shape"):
            G.make_field(desk_grid, np.zeros((2, 2)))
