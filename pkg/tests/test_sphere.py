import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from traceforms.errors import (
    AlphaOutOfRange,
    CoincidentPoints,
    MissingFellerData,
    PointInsideOrOn,
    PointOnBoundary,
    QuadratureTooCoarse,
    UnresolvedExpansion,
)
from traceforms.sphere import (
    BoundaryFunction,
    SphereSpec,
    dirichlet_energy,
    dirichlet_energy_volume,
    douglas_integral,
    escape_probability,
    feller_density,
    harmonic_extension,
    poisson_kernel,
    prototype_trace_energy,
    read_boundary_function,
    real_sph_harm,
    sphere_quadrature,
    sphere_quadrature_mc,
    stable_constant,
    supplementary_density,
    unit_sphere_area,
    verify_eq_2_39,
    write_boundary_function,
)


def rotation(axis=(0.3, 1.1, -0.7)):
    a, b, c = axis
    Rz = np.array([[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1]])
    Ry = np.array([[np.cos(b), 0, np.sin(b)], [0, 1, 0], [-np.sin(b), 0, np.cos(b)]])
    Rx = np.array([[1, 0, 0], [0, np.cos(c), -np.sin(c)], [0, np.sin(c), np.cos(c)]])
    return Rz @ Ry @ Rx


UNIT = SphereSpec(3, 1.0)


def const_one(sphere):
    return BoundaryFunction.from_coeffs(sphere, {(0, 0): math.sqrt(4.0 * math.pi)})


class TestConstantsAndAreas:
    def test_areas(self):
        assert_allclose(unit_sphere_area(3), 4 * np.pi, rtol=1e-14)
        assert_allclose(unit_sphere_area(4), 2 * np.pi**2, rtol=1e-14)
        assert_allclose(unit_sphere_area(2), 2 * np.pi, rtol=1e-14)

    def test_stable_constant_values(self):
        assert_allclose(stable_constant(1, 1.0), 1 / np.pi, rtol=1e-14)
        assert_allclose(stable_constant(3, 1.0), 1 / np.pi**2, rtol=1e-14)

    def test_stable_constant_small_alpha(self):
        assert stable_constant(2, 1e-8) < 1e-7

    def test_alpha_out_of_range(self):
        for bad in (0.0, 2.0, -0.5, 2.5):
            with pytest.raises(AlphaOutOfRange):
                stable_constant(3, bad)

    def test_sphere_spec_rejects_n2(self):
        with pytest.raises(ValueError):
            SphereSpec(2, 1.0)


class TestQuadrature:
    def test_weights_sum_to_area(self):
        for r in (1.0, 2.0):
            sphere = SphereSpec(3, r)
            rule = sphere_quadrature(sphere, 31)
            assert_allclose(rule.weights.sum(), sphere.area, rtol=1e-12)

    def test_integrates_harmonics_exactly(self):
        rule = sphere_quadrature(UNIT, 21)
        rng = np.random.default_rng(0)
        for _ in range(10):
            l = int(rng.integers(1, 22))
            m = int(rng.integers(-l, l + 1))
            val = np.sum(rule.weights * real_sph_harm(l, m, rule.nodes))
            assert abs(val) < 1e-10

    def test_orthonormality_under_rule(self):
        rule = sphere_quadrature(UNIT, 15)
        pairs = [(0, 0), (1, 1), (2, -1), (3, 2)]
        for i, (l1, m1) in enumerate(pairs):
            for l2, m2 in pairs[i:]:
                v = np.sum(rule.weights * real_sph_harm(l1, m1, rule.nodes)
                           * real_sph_harm(l2, m2, rule.nodes))
                want = 1.0 if (l1, m1) == (l2, m2) else 0.0
                assert abs(v - want) < 1e-12

    def test_mc_rule(self):
        sphere = SphereSpec(4, 2.0)
        rule = sphere_quadrature_mc(sphere, 500, np.random.default_rng(1))
        assert_allclose(rule.weights.sum(), sphere.area, rtol=1e-12)
        assert_allclose(np.linalg.norm(rule.nodes - sphere.center, axis=1), 2.0,
                        rtol=1e-12)


class TestPoissonKernel:
    def test_center_is_uniform(self):
        k = poisson_kernel(UNIT, "interior", [0.0, 0.0, 0.0], [0.0, 0.0, 1.0])
        assert_allclose(k, 1.0 / (4 * np.pi), rtol=1e-14)

    def test_exterior_value(self):
        k = poisson_kernel(UNIT, "exterior", [2.0, 0.0, 0.0], [1.0, 0.0, 0.0])
        assert_allclose(k, 3.0 / (4 * np.pi), rtol=1e-14)

    def test_interior_mass_is_one(self):
        rule = sphere_quadrature(UNIT, 63)
        rng = np.random.default_rng(2)
        for _ in range(50):
            x = rng.standard_normal(3)
            x *= rng.uniform(0.0, 0.75) / np.linalg.norm(x)
            mass = np.sum(rule.weights * poisson_kernel(UNIT, "interior", x, rule.nodes))
            assert abs(mass - 1.0) < 1e-8

    def test_exterior_mass_is_return_probability(self):
        rule = sphere_quadrature(UNIT, 63)
        rng = np.random.default_rng(3)
        for _ in range(50):
            x = rng.standard_normal(3)
            x *= rng.uniform(1.3, 6.0) / np.linalg.norm(x)
            mass = np.sum(rule.weights * poisson_kernel(UNIT, "exterior", x, rule.nodes))
            expected = 1.0 - escape_probability(UNIT, x)
            assert abs(mass - expected) < 1e-8

    def test_boundary_point_rejected(self):
        with pytest.raises(PointOnBoundary):
            poisson_kernel(UNIT, "interior", [1.0, 0.0, 0.0], [0.0, 0.0, 1.0])

    def test_side_mismatch_rejected(self):
        with pytest.raises(ValueError):
            poisson_kernel(UNIT, "interior", [2.0, 0.0, 0.0], [0.0, 0.0, 1.0])


class TestBoundaryKernels:
    def test_antipodal_value(self):
        u = feller_density(UNIT, [0, 0, 1.0], [0, 0, -1.0])
        assert_allclose(u, 1.0 / (16 * np.pi), rtol=1e-14)

    def test_orthogonal_value(self):
        u = feller_density(UNIT, [1.0, 0, 0], [0, 1.0, 0])
        assert_allclose(u, 1.0 / (4 * math.sqrt(2.0) * np.pi), rtol=1e-14)

    def test_symmetry_and_rotation_invariance(self):
        rng = np.random.default_rng(4)
        R = rotation()
        for _ in range(20):
            xi = rng.standard_normal(3)
            xi /= np.linalg.norm(xi)
            eta = rng.standard_normal(3)
            eta /= np.linalg.norm(eta)
            a = feller_density(UNIT, xi, eta)
            assert_allclose(a, feller_density(UNIT, eta, xi), rtol=1e-14)
            assert_allclose(a, feller_density(UNIT, R @ xi, R @ eta), rtol=1e-12)

    def test_coincident_points(self):
        with pytest.raises(CoincidentPoints):
            feller_density(UNIT, [0, 0, 1.0], [0, 0, 1.0])

    def test_supplementary_values(self):
        assert_allclose(supplementary_density(UNIT), 0.5)
        assert_allclose(supplementary_density(SphereSpec(4, 2.0)), 0.5)
        assert_allclose(supplementary_density(SphereSpec(3, 2.0)), 0.25)

    def test_escape_probability_values(self):
        assert_allclose(escape_probability(UNIT, [2.0, 0, 0]), 0.5, rtol=1e-14)
        assert_allclose(escape_probability(UNIT, [4.0, 0, 0]), 0.75, rtol=1e-14)
        assert escape_probability(UNIT, [1.0 + 1e-9, 0, 0]) < 1e-8
        with pytest.raises(PointInsideOrOn):
            escape_probability(UNIT, [0.5, 0, 0])


class TestBoundaryFunction:
    def test_projection_recovers_polynomial(self):
        phi = BoundaryFunction.from_callable(UNIT, lambda p: p[:, 0] * p[:, 1], degree=2)
        rule = sphere_quadrature(UNIT, 15)
        assert_allclose(phi.values_at(rule.nodes), rule.nodes[:, 0] * rule.nodes[:, 1],
                        atol=1e-12)
        assert phi.degree == 2

    def test_underresolved_data_rejected(self):
        rule = sphere_quadrature(UNIT, 31)
        values = rule.nodes[:, 0] ** 5  # degree-5 content
        with pytest.raises(UnresolvedExpansion):
            BoundaryFunction.from_samples(UNIT, rule, values, degree=2)

    def test_degree_norms(self):
        phi = BoundaryFunction.from_callable(UNIT, lambda p: p[:, 0], degree=1)
        norms = phi.degree_norms()
        assert_allclose(norms[1], 4 * np.pi / 3, rtol=1e-12)

    def test_file_round_trip_coeffs(self, tmp_path):
        phi = BoundaryFunction.from_callable(UNIT, lambda p: 2.0 + p[:, 2], degree=1)
        path = tmp_path / "f.csv"
        write_boundary_function(path, phi)
        back = read_boundary_function(path, UNIT)
        assert back.coeffs == phi.coeffs

    def test_file_samples_on_grid(self, tmp_path):
        rule = sphere_quadrature(UNIT, 9)
        theta = np.arccos(np.clip(rule.nodes[:, 2], -1, 1))
        phi_az = np.mod(np.arctan2(rule.nodes[:, 1], rule.nodes[:, 0]), 2 * np.pi)
        values = rule.nodes[:, 0]
        lines = ["theta,phi,value"]
        for t, p, v in zip(theta, phi_az, values):
            lines.append(f"{float(t)!r},{float(p)!r},{float(v)!r}")
        path = tmp_path / "s.csv"
        path.write_text("\n".join(lines) + "\n")
        back = read_boundary_function(path, UNIT)
        assert_allclose(back.coeffs.get((1, 1), 0.0),
                        BoundaryFunction.from_callable(UNIT, lambda q: q[:, 0], degree=1)
                        .coeffs[(1, 1)], rtol=1e-10)


class TestHarmonicExtension:
    def test_constant_interior(self):
        phi = const_one(UNIT)
        assert_allclose(harmonic_extension(UNIT, phi, [0.3, 0.2, 0.0]), 1.0, rtol=1e-12)
        assert_allclose(harmonic_extension(UNIT, phi, [0.0, 0.0, 0.0]), 1.0, rtol=1e-12)

    def test_constant_exterior_subprobabilistic(self):
        phi = const_one(UNIT)
        assert_allclose(harmonic_extension(UNIT, phi, [2.0, 0.0, 0.0]), 0.5, rtol=1e-12)

    def test_coordinate_function(self):
        phi = BoundaryFunction.from_callable(UNIT, lambda p: p[:, 0], degree=1)
        assert_allclose(harmonic_extension(UNIT, phi, [0.5, 0.0, 0.0]), 0.5, rtol=1e-12)
        assert_allclose(harmonic_extension(UNIT, phi, [2.0, 0.0, 0.0]), 0.25, rtol=1e-12)

    def test_matches_poisson_quadrature(self):
        rng = np.random.default_rng(5)
        phi = BoundaryFunction.from_callable(
            UNIT, lambda p: 0.3 + p[:, 0] * p[:, 1] - 0.5 * p[:, 2], degree=2)
        rule = sphere_quadrature(UNIT, 63)
        vals = phi.values_at(rule.nodes)
        for _ in range(5):
            x = rng.standard_normal(3)
            x *= rng.uniform(0.2, 0.7) / np.linalg.norm(x)
            direct = harmonic_extension(UNIT, phi, x)
            quad_val = np.sum(rule.weights * vals * poisson_kernel(UNIT, "interior", x, rule.nodes))
            assert_allclose(direct, quad_val, rtol=1e-8)
        for _ in range(5):
            x = rng.standard_normal(3)
            x *= rng.uniform(1.5, 4.0) / np.linalg.norm(x)
            direct = harmonic_extension(UNIT, phi, x)
            quad_val = np.sum(rule.weights * vals * poisson_kernel(UNIT, "exterior", x, rule.nodes))
            assert_allclose(direct, quad_val, rtol=1e-8)

    def test_boundary_rejected(self):
        with pytest.raises(PointOnBoundary):
            harmonic_extension(UNIT, const_one(UNIT), [0.0, 1.0, 0.0])


class TestDirichletEnergy:
    def test_constant(self):
        assert_allclose(dirichlet_energy(UNIT, const_one(UNIT)), 2 * np.pi, rtol=1e-12)

    def test_coordinate(self):
        phi = BoundaryFunction.from_callable(UNIT, lambda p: p[:, 0], degree=1)
        assert_allclose(dirichlet_energy(UNIT, phi), 2 * np.pi, rtol=1e-12)

    def test_zero(self):
        phi = BoundaryFunction.from_coeffs(UNIT, {})
        assert dirichlet_energy(UNIT, phi) == 0.0

    def test_volume_route_agrees(self):
        phi = BoundaryFunction.from_callable(UNIT, lambda p: p[:, 0], degree=1)
        vol = dirichlet_energy_volume(UNIT, phi, radial_points=20)
        assert abs(vol - 2 * np.pi) / (2 * np.pi) < 1e-3

    def test_volume_route_degree2(self):
        phi = BoundaryFunction.from_callable(UNIT, lambda p: p[:, 0] * p[:, 1], degree=2)
        want = dirichlet_energy(UNIT, phi)
        vol = dirichlet_energy_volume(UNIT, phi, radial_points=20)
        assert abs(vol - want) / want < 1e-3


class TestDouglasIntegral:
    def test_constant_is_pure_kill_term(self):
        res = douglas_integral(UNIT, const_one(UNIT), full=True)
        assert_allclose(res.jump_term, 0.0, atol=1e-12)
        assert_allclose(res.kill_term, 2 * np.pi, rtol=1e-12)

    def test_coordinate_split(self):
        res = douglas_integral(UNIT, BoundaryFunction.from_callable(
            UNIT, lambda p: p[:, 0], degree=1), full=True)
        assert abs(res.jump_term - 4 * np.pi / 3) / (4 * np.pi / 3) < 1e-3
        assert_allclose(res.kill_term, 2 * np.pi / 3, rtol=1e-10)

    def test_rotation_invariance(self):
        # same values on rotated nodes give the identical sum
        from traceforms.sphere import _pair_sum
        rule = sphere_quadrature(UNIT, 31)
        vals = rule.nodes[:, 0] * rule.nodes[:, 1]
        R = rotation()
        a = _pair_sum(UNIT, rule.nodes, rule.weights, vals, np.pi / 16)
        b = _pair_sum(UNIT, rule.nodes @ R.T, rule.weights, vals, np.pi / 16)
        assert_allclose(a, b, rtol=1e-10)

    def test_too_coarse_raises(self):
        phi = BoundaryFunction.from_callable(
            UNIT, lambda p: p[:, 0] * p[:, 1] * p[:, 2], degree=3)
        with pytest.raises(QuadratureTooCoarse):
            douglas_integral(UNIT, phi, quad=sphere_quadrature(UNIT, 11))


class TestIdentity:
    def test_constant_closed_form(self):
        chk = verify_eq_2_39(UNIT, const_one(UNIT))
        assert_allclose(chk.lhs, 2 * np.pi, rtol=1e-12)
        assert chk.residual < 1e-10

    def test_degree_one(self):
        phi = BoundaryFunction.from_callable(UNIT, lambda p: p[:, 0], degree=1)
        chk = verify_eq_2_39(UNIT, phi)
        assert_allclose(chk.lhs, 2 * np.pi, rtol=1e-12)
        assert chk.residual < 1e-3

    def test_degree_two_mixed(self):
        phi = BoundaryFunction.from_callable(UNIT, lambda p: p[:, 0] * p[:, 1], degree=2)
        chk = verify_eq_2_39(UNIT, phi)
        assert chk.residual < 1e-3


class TestPrototypeAssembly:
    def test_zero_phi(self):
        U = np.zeros((3, 3))
        assert prototype_trace_energy(np.zeros(3), U, np.zeros(3)) == 0.0

    def test_constant_phi_kill_only(self):
        rng = np.random.default_rng(6)
        U = rng.random((4, 4))
        U = 0.5 * (U + U.T)
        V = rng.random(4)
        val = prototype_trace_energy(np.full(4, 2.0), U, V)
        assert_allclose(val, 4.0 * V.sum(), rtol=1e-12)

    def test_missing_data(self):
        with pytest.raises(MissingFellerData):
            prototype_trace_energy(np.zeros(3), None, np.zeros(3))
        with pytest.raises(MissingFellerData):
            prototype_trace_energy(np.zeros(3), np.zeros((2, 2)), np.zeros(3))
