import numpy as np
import pytest
from scipy.special import gamma as gamma_fn, kv

import fracpara.dnmap as DN
import fracpara.forward as FW
import fracpara.grid as G
import fracpara.inverse as INV
import fracpara.operators as O
import fracpara.quadrature as Q


@pytest.fixture(scope="module")
def runge_partition(desk_grid):
    # W1 wraps around the torus, illuminating Omega from both sides
    return G.make_partition(desk_grid, (2.0, 4.0), (4.4, 1.4), (1.6, 1.9))


@pytest.fixture(scope="module")
def runge_problem(desk_grid, runge_partition):
    return FW.make_problem(desk_grid, runge_partition, (0.3, 0.7), (1.0, 1.0))


@pytest.fixture(scope="module")
def moment_rule():
    return Q.make_quadrature_rule(1e-6, 1.0, 50.0, 20000, 200000)


def sin_cos_target(grid, partition):
    x = grid.spatial_coordinates()
    t = grid.time_coordinates()
    T = grid.physical_half_window
    mask = partition.interior_spacetime_mask()
    vals = np.where(mask, np.sin(x)[None, :] * np.cos(np.pi * t / (2 * T))[:, None], 0.0)
    return G.make_field(grid, vals)


class TestRunge:
    def test_in_range_target_recovered(self, desk_grid, runge_partition, runge_problem):
        controls = DN.make_exterior_basis(runge_partition, "w1", 5, 4, kind="indicator")
        rng = np.random.default_rng(0)
        f0 = controls.combine(rng.standard_normal(len(controls)))
        sol = FW.solve_forward(runge_problem, f0)
        mask = runge_partition.interior_spacetime_mask()
        target = G.make_field(desk_grid, np.where(mask, sol.u.values, 0.0))
        out = INV.runge_approximate(
            INV.RungeRequest(target=target, controls=controls, tikhonov=1e-12),
            runge_problem)
        assert out["achieved_error"] <= 1e-8

    def test_error_monotone_and_small(self, desk_grid, runge_partition, runge_problem):
        controls = DN.make_exterior_basis(runge_partition, "w1", 10, 8, kind="indicator")
        target = sin_cos_target(desk_grid, runge_partition)
        out = INV.runge_approximate(
            INV.RungeRequest(target=target, controls=controls, tikhonov=1e-10),
            runge_problem)
        hist = np.array(out["error_history"])
        assert np.all(np.diff(hist) <= 1e-7 * (1 + hist[:-1]))
        assert out["achieved_error"] <= 0.1

    def test_zero_target_coefficients_shrink_with_regularization(
            self, desk_grid, runge_partition, runge_problem):
        controls = DN.make_exterior_basis(runge_partition, "w1", 4, 3, kind="indicator")
        mask = runge_partition.interior_spacetime_mask()
        rng = np.random.default_rng(1)
        noise = np.zeros(desk_grid.field_shape, dtype=complex)
        noise[mask] = 1e-3 * rng.standard_normal(int(mask.sum()))
        target = G.make_field(desk_grid, noise)
        norms = []
        for eps in (1e-6, 1e-2, 1e2):
            out = INV.runge_approximate(
                INV.RungeRequest(target=target, controls=controls, tikhonov=eps),
                runge_problem)
            norms.append(np.linalg.norm(out["coefficients"]))
        assert norms[2] < norms[1] < norms[0]

    def test_target_support_enforced(self, desk_grid, runge_partition, runge_problem):
        controls = DN.make_exterior_basis(runge_partition, "w1", 3, 3)
        bad = G.make_field(desk_grid, np.ones(desk_grid.field_shape))
        with pytest.raises(ValueError, match="supported"):
            INV.runge_approximate(INV.RungeRequest(target=bad, controls=controls,
                                                   tikhonov=1e-8), runge_problem)

    def test_nonpositive_tikhonov_rejected(self, desk_grid, runge_partition):
        controls = DN.make_exterior_basis(runge_partition, "w1", 3, 3)
        target = sin_cos_target(desk_grid, runge_partition)
        with pytest.raises(ValueError, match="positive"):
            INV.RungeRequest(target=target, controls=controls, tikhonov=0.0)


class TestReconstruction:
    @pytest.fixture(scope="class")
    def setup(self, small_grid):
        part = G.make_partition(small_grid, (2.2, 4.0), (0.2, 1.0), (5.0, 5.8))
        base = FW.make_problem(small_grid, part, (0.3, 0.7), (1.0, 1.0))
        exc = DN.make_exterior_basis(part, "w1", 4, 4)
        tst = DN.make_exterior_basis(part, "w2", 4, 4)
        return part, base, exc, tst

    def test_zero_difference_returns_baseline(self, setup):
        part, base, exc, tst = setup
        dn0 = DN.assemble_dn_map(base, exc, tst)
        for tik in (1e-3, 0.3):
            out = INV.reconstruct_potential(
                INV.ReconstructionConfig(measured=dn0, tikhonov=tik, max_iterations=2),
                base)
            assert np.abs(out["potential"].values).max() == 0.0

    def test_small_potential_recovered(self, small_grid, setup):
        part, base, exc, tst = setup
        x = small_grid.spatial_coordinates()
        t = small_grid.time_coordinates()
        mask = part.interior_spacetime_mask()
        V = np.where(mask, 0.05 * np.sin(x)[None, :] * np.cos(np.pi * t / 2)[:, None], 0.0)
        truth = FW.make_problem(small_grid, part, (0.3, 0.7), (1.0, 1.0), potential=V)
        dn = DN.assemble_dn_map(truth, exc, tst)
        out = INV.reconstruct_potential(
            INV.ReconstructionConfig(measured=dn, tikhonov=1e-4, max_iterations=3), base)
        err = np.linalg.norm((out["potential"].values - V)[mask]) / np.linalg.norm(V[mask])
        assert err <= 0.2
        hist = out["residual_history"]
        assert all(b <= a * (1 + 1e-9) for a, b in zip(hist, hist[1:]))

    def test_fingerprint_mismatch_rejected(self, small_grid, setup):
        part, base, exc, tst = setup
        dn0 = DN.assemble_dn_map(base, exc, tst)
        other_part = G.make_partition(small_grid, (2.4, 3.6), (0.2, 1.0), (5.0, 5.8))
        other = FW.make_problem(small_grid, other_part, (0.3, 0.7), (1.0, 1.0))
        with pytest.raises(ValueError, match="fingerprint"):
            INV.reconstruct_potential(INV.ReconstructionConfig(measured=dn0), other)

    def test_adjoint_matrix_rejected(self, setup):
        part, base, exc, tst = setup
        dn_a = DN.assemble_dn_map(base, exc, tst, adjoint=True)
        with pytest.raises(ValueError, match="forward"):
            INV.reconstruct_potential(INV.ReconstructionConfig(measured=dn_a), base)

    def test_noise_flag_perturbs(self, setup):
        part, base, exc, tst = setup
        dn0 = DN.assemble_dn_map(base, exc, tst)
        out = INV.reconstruct_potential(
            INV.ReconstructionConfig(measured=dn0, tikhonov=1e-2, max_iterations=1,
                                     noise_sigma=1e-6, seed=11), base)
        assert np.abs(out["potential"].values).max() > 0.0


class TestMoments:
    def test_bessel_oracle(self, moment_rule):
        case = INV.make_moment_case((0.5,), [lambda t: np.exp(-t - 1.0 / t)],
                                    moment_rule, (0, 3))
        for m in range(4):
            got = INV.moment_functional(case, m)
            want = gamma_fn(m + 1.5) * 2 * kv(1 - m, 2.0)
            assert abs(got - want) <= 1e-6 * abs(want)

    def test_spec_anchor_value(self, moment_rule):
        # Gamma(1.5) * 2 K_1(2) = 0.886227 * 0.279732 = 0.247906
        case = INV.make_moment_case((0.5,), [lambda t: np.exp(-t - 1.0 / t)],
                                    moment_rule, (0, 0))
        got = INV.moment_functional(case, 0)
        assert got.real == pytest.approx(0.24789, abs=5e-5)

    def test_zero_profiles(self, moment_rule):
        case = INV.make_moment_case((0.3, 0.7),
                                    [lambda t: 0.0 * t, lambda t: 0.0 * t],
                                    moment_rule, (0, 4), strict=False)
        for m in range(5):
            assert INV.moment_functional(case, m) == 0.0

    def test_divergence_detected(self, moment_rule):
        case = INV.make_moment_case((0.5,), [lambda t: np.exp(-t)], moment_rule,
                                    (0, 3), strict=False)
        with pytest.raises(INV.DivergenceError, match="divergence"):
            INV.moment_functional(case, 2)

    def test_strict_construction_rejects_slow_decay(self, moment_rule):
        with pytest.raises(ValueError, match="decay template"):
            INV.make_moment_case((0.5,), [lambda t: np.exp(-t)], moment_rule, (0, 3))

    def test_decay_template_fit(self, moment_rule):
        # the regressed rates mix the two decay factors near the split point,
        # so exact recovery is only approximate
        case = INV.make_moment_case((0.5,), [lambda t: np.exp(-2 * t - 3.0 / t)],
                                    moment_rule, (0, 2))
        fit = case.decay[0]
        assert fit["origin_delta"] == pytest.approx(3.0, rel=5e-2)
        assert fit["tail_delta"] == pytest.approx(2.0, rel=5e-2)


class TestResonantCounterexample:
    def test_exact_cancellation(self, desk_grid, desk_partition):
        calc = O.fourier_calculus(desk_grid)
        x = desk_grid.spatial_coordinates()
        t = desk_grid.time_coordinates()
        u1v = np.exp(-((x - 3.0) ** 2) / 0.15)[None, :] \
            * np.where(np.abs(t) < 0.9, np.exp(-t**2 / 0.1), 0.0)[:, None]
        u1v = np.where(desk_partition.omega_mask[None, :], u1v, 0.0)
        u1 = G.make_field(desk_grid, u1v)
        for alpha, m in ((0.5, 1), (0.3, 2)):
            out = INV.resonant_counterexample(calc, desk_partition, "w2", alpha, m, u1)
            assert out["relative_residual"] <= 1e-10
            assert min(out["norm_u1"], out["norm_u2"]) > 0.1 * G.l2_norm(u1)

    def test_zero_input_rejected(self, desk_grid, desk_partition):
        calc = O.fourier_calculus(desk_grid)
        zero = G.make_field(desk_grid, np.zeros(desk_grid.field_shape))
        with pytest.raises(ValueError, match="nonzero"):
            INV.resonant_counterexample(calc, desk_partition, "w2", 0.5, 1, zero)

    def test_vanishing_precondition_enforced(self, desk_grid, desk_partition):
        calc = O.fourier_calculus(desk_grid)
        ones = G.make_field(desk_grid, np.ones(desk_grid.field_shape))
        with pytest.raises(ValueError, match="vanish"):
            INV.resonant_counterexample(calc, desk_partition, "w2", 0.5, 1, ones)


class TestEntanglementProbe:
    def test_resonant_rejected(self, moment_rule):
        with pytest.raises(ValueError, match="resonant"):
            INV.entanglement_probe((0.5, 1.5), moment_rule)

    def test_nonresonant_positive_minimum(self, moment_rule):
        report = INV.entanglement_probe((0.3, 0.7), moment_rule, moment_range=(0, 5),
                                        n_random=16, seed=2)
        assert report["certified_positive"]
        assert report["min_residual_norm"] > 0

    def test_two_moment_linear_algebra_bound(self, moment_rule):
        # family f1 = g, f2 = -c g with c killing m=0; the m=1 residual then
        # equals |Gamma(2+a1) - c Gamma(2+a2)| * J_1 > 0
        a1, a2 = 0.3, 0.7
        c = gamma_fn(1 + a1) / gamma_fn(1 + a2)
        report = INV.entanglement_probe(
            (a1, a2), moment_rule, moment_range=(0, 1),
            coefficient_families=[np.array([1.0, -c])])
        fam = report["families"][0]
        g = np.exp(-moment_rule.nodes - 1.0 / moment_rule.nodes)
        base_norm = np.sqrt(np.sum(moment_rule.weights * g**2))
        j1 = 2 * kv(0, 2.0)
        bound = abs(gamma_fn(2 + a1) - c * gamma_fn(2 + a2)) * j1 / (max(1.0, c) * base_norm)
        assert fam["residuals"][0] <= 1e-9 * bound  # m = 0 killed
        assert fam["residuals"][1] >= 0.5 * bound    # m = 1 visibly nonzero

    def test_deterministic_given_seed(self, moment_rule):
        r1 = INV.entanglement_probe((0.3, 0.7), moment_rule, n_random=8, seed=5)
        r2 = INV.entanglement_probe((0.3, 0.7), moment_rule, n_random=8, seed=5)
        assert r1["min_residual_norm"] == r2["min_residual_norm"]
