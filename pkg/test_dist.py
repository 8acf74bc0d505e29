import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from core import DimensionError, PreconditionError, Subspace, coordinate_complex_subspace
from dist import (
    VectorField,
    constant_field,
    constant_plane_membership,
    frobenius_residual,
    frontier_diagnostic,
    generating_shear_fields,
    lie_bracket,
    map_gradient_fields,
    maximal_distribution,
    membership_W,
    membership_value,
    rigid_case_check,
)
from linear import coupling_shear, random_unitary_symplectic
from maps import LinearMap, generating_shear, identity, rho_twist

BRACKET = np.array([0.0, 0.0, 0.0, -1.0])


@pytest.fixture
def points():
    return np.random.default_rng(0).uniform(-1.0, 1.0, size=(1000, 4))


@pytest.fixture
def plane():
    return coordinate_complex_subspace(4, 1)


class TestBrackets:
    def test_exact_bracket_is_constant(self, points):
        grad_Q1, grad_P1 = generating_shear_fields()
        for x in points:
            assert np.array_equal(lie_bracket(grad_Q1, grad_P1, x, mode="exact"), BRACKET)

    def test_fd_bracket_agrees(self, points):
        grad_Q1, grad_P1 = generating_shear_fields()
        for x in points:
            assert np.abs(lie_bracket(grad_Q1, grad_P1, x, mode="fd") - BRACKET).max() <= 1e-5

    def test_bracket_is_antisymmetric(self, points):
        X, Y = generating_shear_fields()
        x = points[0]
        assert_allclose(lie_bracket(X, Y, x), -lie_bracket(Y, X, x))

    def test_constant_fields_commute(self):
        X = constant_field([1.0, 0.0, 0.0, 0.0])
        Y = constant_field([0.0, 1.0, 0.0, 0.0])
        assert np.array_equal(lie_bracket(X, Y, np.zeros(4)), np.zeros(4))

    def test_exact_mode_needs_derivatives(self):
        X = VectorField(lambda x: x)
        with pytest.raises(PreconditionError):
            lie_bracket(X, X, np.zeros(4), mode="exact")
        with pytest.raises(PreconditionError):
            lie_bracket(X, X, np.zeros(4), mode="sideways")


class TestFrobenius:
    def test_residual_formula(self):
        fields = list(generating_shear_fields())
        for q1 in np.linspace(-1.0, 1.0, 11):
            x = np.array([q1, 0.3, -0.2, 0.5])
            assert frobenius_residual(fields, x) == pytest.approx(1.0 / math.sqrt(1.0 + q1 ** 2))

    def test_residual_positive_on_lattice(self):
        fields = list(generating_shear_fields())
        axis = np.linspace(-1.0, 1.0, 5)
        lattice = np.array(np.meshgrid(axis, axis, axis, axis, indexing="ij")).reshape(4, -1).T
        assert min(frobenius_residual(fields, x) for x in lattice) > 0.0

    def test_involutive_coordinate_fields(self):
        fields = [constant_field(e) for e in np.eye(4)[:2]]
        assert frobenius_residual(fields, np.ones(4)) == 0.0

    def test_map_fields_span_maximal_plane(self, plane):
        shear = generating_shear()
        fields = map_gradient_fields(shear, plane)
        x = np.array([0.4, -0.1, 0.2, 0.7])
        frame = Subspace.from_columns(np.column_stack([f(x) for f in fields]))
        sample = maximal_distribution(shear, plane, x)
        assert np.linalg.norm(frame.projector - sample.W_hat.projector) <= 1e-12
        assert frobenius_residual(fields, x, mode="fd") > 0.0

    def test_dependent_fields(self):
        X = constant_field([1.0, 0.0, 0.0, 0.0])
        with pytest.raises(PreconditionError):
            frobenius_residual([X, X], np.zeros(4))


class TestDistribution:
    def test_maximal_plane_of_shear(self, plane):
        shear = generating_shear()
        x = np.array([0.5, 0.0, 0.0, 0.5])
        sample = maximal_distribution(shear, plane, x)
        assert sample.W_hat.dim == 2
        assert sample.jacobian_on_W_hat >= 1.0
        assert sample.complexity_residual > 0.0

    def test_rejects_non_symplectic_and_non_complex(self, plane):
        with pytest.raises(PreconditionError):
            maximal_distribution(LinearMap(np.eye(4) * 2.0), plane, np.zeros(4))
        with pytest.raises(PreconditionError):
            maximal_distribution(identity(4), Subspace(np.eye(4)[:, [0, 2]]), np.zeros(4))
        with pytest.raises(DimensionError):
            maximal_distribution(identity(6), plane, np.zeros(6))

    @pytest.mark.parametrize("smooth_map", [generating_shear(), LinearMap(coupling_shear(4))])
    def test_maximal_plane_beats_random_planes(self, plane, points, smooth_map):
        rng = np.random.default_rng(40)
        for x in points[:10]:
            best = maximal_distribution(smooth_map, plane, x).jacobian_on_W_hat
            for _ in range(100):
                W = Subspace.from_columns(rng.standard_normal((4, 2)))
                assert membership_value(smooth_map, plane, x, W) <= best * (1.0 + 1e-12)

    def test_constant_plane_membership(self, plane, points):
        report = constant_plane_membership(generating_shear(), plane, points)
        assert report["passed"]
        assert report["minimum"] >= 1.0 - 1e-9

    def test_membership_of_maximal_plane(self, plane):
        shear = generating_shear()
        x = np.array([0.2, 0.1, -0.3, 0.8])
        sample = maximal_distribution(shear, plane, x)
        member, value = membership_W(shear, plane, x, sample.W_hat)
        assert member
        assert value == pytest.approx(sample.jacobian_on_W_hat)

    def test_rigid_case_for_unitary_map(self, plane, points):
        unitary = LinearMap(random_unitary_symplectic(4, seed=1))
        report = rigid_case_check(unitary, plane, points[:50])
        assert report["passed"]
        assert report["rigid_points"] == 50

    def test_shear_is_rigid_only_on_axis(self, plane, points):
        report = rigid_case_check(generating_shear(), plane, points[:50])
        assert report["passed"]
        assert report["rigid_points"] == 0

    def test_frontier_of_identity(self, plane):
        report = frontier_diagnostic(identity(4), plane, samples=100)
        assert report["centre"] == pytest.approx(1.0)
        assert report["sampled_max"] == pytest.approx(1.0)
        assert report["fraction_above_one"] == 0.0

    def test_frontier_of_shear(self, plane):
        report = frontier_diagnostic(generating_shear(), plane, samples=200, seed=2)
        assert report["centre"] == pytest.approx(1.0)
        assert report["sampled_max"] > 1.0
        assert report["fraction_above_one"] > 0.5

    def test_rho_twist_is_not_symplectic(self):
        with pytest.raises(PreconditionError):
            maximal_distribution(rho_twist(), coordinate_complex_subspace(2, 1), np.zeros(3))


class TestPinnedPlanes:
    def test_identity_keeps_target_plane(self, plane):
        sample = maximal_distribution(identity(4), plane, np.ones(4))
        assert np.linalg.norm(sample.W_hat.projector - plane.projector) <= 1e-12
        assert sample.jacobian_on_W_hat == pytest.approx(1.0)
        member, value = membership_W(identity(4), plane, np.ones(4), plane)
        assert member and value == pytest.approx(1.0)

    def test_tilted_lagrangian_plane_is_not_member(self, plane):
        tilted = Subspace.from_columns(np.array([[1.0, 0.0], [0.0, 0.6], [0.0, 0.0], [0.0, 0.8]]))
        member, value = membership_W(identity(4), plane, np.zeros(4), tilted)
        assert not member
        assert value == pytest.approx(0.6)

    def test_generating_shear_plane_is_gradient_span(self, plane):
        x = np.array([0.3, -0.4, 0.2, 0.5])
        sample = maximal_distribution(generating_shear(), plane, x)
        expected = Subspace.from_columns(np.column_stack([[1.0, 0.0, 0.0, 0.0], [-x[3], 1.0, 0.0, -x[0]]]))
        assert np.linalg.norm(sample.W_hat.projector - expected.projector) <= 1e-12

    def test_unitary_map_has_unit_jacobian(self, plane, points):
        unitary = LinearMap(random_unitary_symplectic(4, seed=3))
        for x in points[:200]:
            assert abs(maximal_distribution(unitary, plane, x).jacobian_on_W_hat - 1.0) <= 1e-8

    def test_residual_at_origin_is_one(self):
        assert frobenius_residual(list(generating_shear_fields()), np.zeros(4)) == pytest.approx(1.0)
