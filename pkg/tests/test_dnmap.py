import numpy as np
import pytest

import fracpara.dnmap as DN
import fracpara.forward as FW
import fracpara.grid as G
import fracpara.operators as O


def omega_potential(grid, partition, amplitude=0.1, seed=None):
    x = grid.spatial_coordinates()
    t = grid.time_coordinates()
    mask = partition.interior_spacetime_mask()
    vals = np.zeros(grid.field_shape, dtype=complex)
    if seed is None:
        profile = amplitude * np.sin(x)[None, :] * np.cos(np.pi * t / 2)[:, None]
        vals[mask] = np.broadcast_to(profile, grid.field_shape)[mask]
    else:
        rng = np.random.default_rng(seed)
        vals[mask] = amplitude * rng.uniform(-1, 1, size=int(mask.sum()))
    return vals


@pytest.fixture(scope="module")
def bases(desk_partition):
    return (DN.make_exterior_basis(desk_partition, "w1", 3, 3),
            DN.make_exterior_basis(desk_partition, "w2", 3, 3))


@pytest.fixture(scope="module")
def problem_v(desk_grid, desk_partition):
    pot = omega_potential(desk_grid, desk_partition)
    return FW.make_problem(desk_grid, desk_partition, (0.3, 0.7), (1.0, 1.0),
                           potential=pot)


@pytest.fixture(scope="module")
def dn_pair(problem_v, bases):
    exc, tst = bases
    return (DN.assemble_dn_map(problem_v, exc, tst),
            DN.assemble_dn_map(problem_v, exc, tst, adjoint=True))


class TestExteriorBasis:
    def test_support_and_normalization(self, desk_grid, desk_partition, bases):
        exc, _ = bases
        for i in range(len(exc)):
            f = exc.field(i)
            outside = ~desk_partition.region_spacetime_mask("w1")
            assert np.abs(f.values[outside]).max() == 0.0
            assert G.l2_norm(f) == pytest.approx(1.0, rel=1e-12)

    def test_gram_nonsingular(self, desk_grid, bases):
        exc, _ = bases
        gram = exc.gram(desk_grid.cell_volume)
        eigs = np.linalg.eigvalsh(gram)
        assert eigs[0] >= 1e-10 * eigs[-1]

    def test_too_many_bumps_rejected(self, desk_partition):
        with pytest.raises(ValueError, match="more bumps"):
            DN.make_exterior_basis(desk_partition, "w1", 50, 3)

    def test_bad_window_rejected(self, desk_partition):
        with pytest.raises(ValueError, match="window"):
            DN.make_exterior_basis(desk_partition, "w1", 2, 2, window=(-2.0, 0.5))


class TestDNMatrix:
    def test_identical_problems_difference_zero(self, desk_grid, desk_partition, bases):
        exc, tst = bases
        prob = FW.make_problem(desk_grid, desk_partition, (0.3, 0.7), (1.0, 1.0))
        dn_a = DN.assemble_dn_map(prob, exc, tst)
        dn_b = DN.assemble_dn_map(prob, exc, tst)
        assert np.array_equal(dn_a.entries, dn_b.entries)
        assert np.abs(dn_a.entries - dn_b.entries).max() == 0.0

    def test_representative_invariance(self, desk_grid, desk_partition, problem_v,
                                        dn_pair, bases):
        exc, tst = bases
        dn_f, _ = dn_pair
        rng = np.random.default_rng(3)
        mask = desk_partition.interior_spacetime_mask()
        phi = np.zeros(desk_grid.field_shape, dtype=complex)
        phi[mask] = 0.5 * (rng.standard_normal(int(mask.sum()))
                           + 1j * rng.standard_normal(int(mask.sum())))
        shifted = G.make_field(desk_grid, exc.elements[4] + phi)
        sol = FW.solve_forward(problem_v, shifted)
        op = O.apply_poly_parabolic(problem_v.calc, sol.u, problem_v.exponents,
                                    problem_v.weights)
        col = desk_grid.cell_volume * (
            tst.elements.reshape(len(tst), -1).conj()
            @ (op.values * problem_v.metric.sqrt_det).ravel())
        assert np.abs(col - dn_f.entries[:, 4]).max() <= 1e-10 * np.abs(dn_f.entries).max()

    def test_adjoint_pairing_consistency(self, dn_pair):
        dn_f, dn_a = dn_pair
        scale = np.abs(dn_f.entries).max()
        assert np.abs(dn_f.entries - dn_a.entries.T).max() <= 1e-9 * scale

    def test_fingerprint_tracks_potential(self, desk_grid, desk_partition, problem_v):
        prob0 = FW.make_problem(desk_grid, desk_partition, (0.3, 0.7), (1.0, 1.0))
        assert DN.problem_fingerprint(problem_v) != DN.problem_fingerprint(prob0)
        assert DN.geometry_fingerprint(problem_v) == DN.geometry_fingerprint(prob0)


class TestDNPairing:
    def test_unit_vectors_pick_entries(self, dn_pair):
        dn_f, _ = dn_pair
        n_test, n_exc = dn_f.shape
        for (j, i) in ((0, 0), (2, 5), (n_test - 1, n_exc - 1)):
            cf = np.zeros(n_exc)
            cz = np.zeros(n_test)
            cf[i] = 1.0
            cz[j] = 1.0
            assert DN.dn_pairing(dn_f, cf, cz) == pytest.approx(dn_f.entries[j, i])

    def test_zero_coefficients(self, dn_pair):
        dn_f, _ = dn_pair
        n_test, n_exc = dn_f.shape
        assert DN.dn_pairing(dn_f, np.zeros(n_exc), np.zeros(n_test)) == 0.0

    def test_bilinearity_scaling(self, dn_pair):
        dn_f, _ = dn_pair
        n_test, n_exc = dn_f.shape
        rng = np.random.default_rng(0)
        cf = rng.standard_normal(n_exc)
        cz = rng.standard_normal(n_test)
        base = DN.dn_pairing(dn_f, cf, cz)
        scaled = DN.dn_pairing(dn_f, 2.0 * cf, 3.0 * cz)
        assert scaled == pytest.approx(6.0 * base, rel=1e-13)

    def test_adjoint_matrix_gives_same_pairing(self, dn_pair):
        dn_f, dn_a = dn_pair
        n_test, n_exc = dn_f.shape
        rng = np.random.default_rng(1)
        cf = rng.standard_normal(n_exc) + 1j * rng.standard_normal(n_exc)
        cz = rng.standard_normal(n_test) + 1j * rng.standard_normal(n_test)
        fwd = DN.dn_pairing(dn_f, cf, cz)
        adj = DN.dn_pairing(dn_a, cf, cz)
        assert adj == pytest.approx(fwd, rel=1e-9)

    def test_dimension_mismatch(self, dn_pair):
        dn_f, _ = dn_pair
        with pytest.raises(ValueError, match="length"):
            DN.dn_pairing(dn_f, np.zeros(3), np.zeros(dn_f.shape[0]))


class TestIntegralIdentity:
    def test_identical_potentials_vanish(self, desk_grid, desk_partition, bases):
        exc, tst = bases
        prob = FW.make_problem(desk_grid, desk_partition, (0.3, 0.7), (1.0, 1.0))
        out = DN.integral_identity_residual(prob, prob, exc.field(4), tst.field(4))
        assert abs(out["lhs"]) <= 1e-12
        assert abs(out["rhs"]) <= 1e-12

    def test_smooth_potential_residual(self, desk_grid, desk_partition, problem_v, bases):
        exc, tst = bases
        prob0 = FW.make_problem(desk_grid, desk_partition, (0.3, 0.7), (1.0, 1.0))
        out = DN.integral_identity_residual(problem_v, prob0, exc.field(4), tst.field(4))
        assert out["residual"] <= 1e-8

    def test_swap_antisymmetry(self, desk_grid, desk_partition, problem_v, bases):
        exc, tst = bases
        prob0 = FW.make_problem(desk_grid, desk_partition, (0.3, 0.7), (1.0, 1.0))
        a = DN.integral_identity_residual(problem_v, prob0, exc.field(4), tst.field(4))
        b = DN.integral_identity_residual(prob0, problem_v, exc.field(4), tst.field(4))
        assert b["lhs"] == pytest.approx(-a["lhs"], rel=1e-8)

    def test_mismatched_exponents_rejected(self, desk_grid, desk_partition, problem_v,
                                           bases):
        exc, tst = bases
        other = FW.make_problem(desk_grid, desk_partition, (0.5,), (1.0,))
        with pytest.raises(ValueError, match="exponents"):
            DN.integral_identity_residual(problem_v, other, exc.field(0), tst.field(0))


class TestDNFileIO:
    def test_roundtrip(self, tmp_path, desk_partition, dn_pair):
        dn_f, _ = dn_pair
        DN.write_dn_matrix(dn_f, tmp_path / "m")
        back = DN.read_dn_matrix(tmp_path / "m", desk_partition)
        assert np.array_equal(back.entries, dn_f.entries)
        assert back.fingerprint == dn_f.fingerprint
        assert len(back.excitations) == len(dn_f.excitations)

    def test_deterministic_bytes(self, tmp_path, dn_pair):
        dn_f, _ = dn_pair
        DN.write_dn_matrix(dn_f, tmp_path / "a")
        DN.write_dn_matrix(dn_f, tmp_path / "b")
        assert (tmp_path / "a.dn.csv").read_bytes() == (tmp_path / "b.dn.csv").read_bytes()

    def test_schema_guard(self, tmp_path, desk_partition, dn_pair):
        import json
        dn_f, _ = dn_pair
        DN.write_dn_matrix(dn_f, tmp_path / "m")
        doc = json.loads((tmp_path / "m.dn.json").read_text())
        doc["schema"] = "fracpara/dn-v0"
        (tmp_path / "m.dn.json").write_text(json.dumps(doc))
        with pytest.raises(ValueError, match="unsupported schema"):
            DN.read_dn_matrix(tmp_path / "m", desk_partition)
