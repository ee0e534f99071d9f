import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import sph_harm_y

from emlocate.errors import IncompatibleError, ValidationError
from emlocate.sph import (
    LEBEDEV_ORDERS, harmonics, lebedev_rule, rule_for_degree, sph_harmonic, t2_inner, t2_norm,
    tangential_projection, vsh_U, vsh_V, vsh_count, vsh_index, wigner_d,
)

from conftest import random_unit


def _angles(x):
    return np.arccos(np.clip(x[..., 2], -1, 1)), np.arctan2(x[..., 1], x[..., 0])


def test_rule_weights_and_nodes(rule):
    assert len(rule) == 590
    assert rule.degree == 41
    assert math.isclose(rule.weights.sum(), 4 * math.pi, rel_tol=1e-14)
    np.testing.assert_allclose(np.linalg.norm(rule.nodes, axis=1), 1.0, atol=1e-15)


def test_rule_integrates_low_degree_polynomials(rule):
    x, y, z = rule.nodes.T
    assert math.isclose(rule.weights @ (x ** 2), 4 * math.pi / 3, rel_tol=1e-13)
    assert math.isclose(rule.weights @ (x ** 2 * y ** 2 * z ** 2), 4 * math.pi / 105, rel_tol=1e-12)
    assert abs(rule.weights @ (x ** 3 * y)) < 1e-14


def test_unsupported_rule_lists_supported_counts():
    with pytest.raises(ValidationError, match="unsupported rule.*590"):
        lebedev_rule(591)


def test_rule_for_degree_is_smallest_exact_rule():
    r = rule_for_degree(20)
    assert r.degree == 21 and len(r) == 170
    with pytest.raises(ValidationError):
        rule_for_degree(10 ** 4)


def test_rule_equality_and_caching():
    assert lebedev_rule(590) is lebedev_rule(590)
    assert lebedev_rule(590) == lebedev_rule(590)
    assert lebedev_rule(590) != lebedev_rule(302)


def test_scalar_harmonics_match_scipy(rng):
    x = random_unit(rng, 40)
    theta, phi = _angles(x)
    Y, _, _ = harmonics(x, 8)
    for n in range(9):
        for m in range(-n, n + 1):
            ref = sph_harm_y(n, m, theta, phi)
            np.testing.assert_allclose(Y[:, n * n + n + m], ref, atol=1e-12)


def test_closed_form_low_orders():
    x = np.array([0.3, -0.4, math.sqrt(1 - 0.25)])
    theta, phi = _angles(x)
    assert sph_harmonic(1, 0, x) == pytest.approx(math.sqrt(3 / (4 * math.pi)) * math.cos(theta))
    assert sph_harmonic(1, 1, x) == pytest.approx(
        -math.sqrt(3 / (8 * math.pi)) * math.sin(theta) * np.exp(1j * phi))


def test_harmonics_at_the_poles_are_finite():
    poles = np.array([[0, 0, 1.0], [0, 0, -1.0]])
    Y, U, V = harmonics(poles, 6)
    assert np.all(np.isfinite(Y)) and np.all(np.isfinite(U)) and np.all(np.isfinite(V))
    # only m = 0 survives at the poles for Y
    near = np.array([[1e-7, 0, 1.0]])
    near /= np.linalg.norm(near)
    _, Un, _ = harmonics(near, 6)
    np.testing.assert_allclose(U[0], Un[0], atol=1e-5)


def test_vector_harmonics_are_tangential_gradients(rng):
    """U_n^m matches a finite-difference surface gradient of Y_n^m."""
    x = random_unit(rng, 5)
    eps = 1e-6
    for n, m in [(1, 0), (2, 1), (3, -2), (5, 4)]:
        for xi in x:
            grad = np.zeros(3, dtype=complex)
            for axis in range(3):
                e = np.zeros(3)
                e[axis] = eps
                f = lambda v: sph_harmonic(n, m, v / np.linalg.norm(v))
                grad[axis] = (f(xi + e) - f(xi - e)) / (2 * eps)
            grad -= (grad @ xi) * xi
            np.testing.assert_allclose(vsh_U(n, m, xi), grad / math.sqrt(n * (n + 1)), atol=1e-8)
            np.testing.assert_allclose(vsh_V(n, m, xi), np.cross(xi, vsh_U(n, m, xi)), atol=1e-14)


def test_orthonormality_up_to_order_ten(rule):
    Y, U, V = harmonics(rule.nodes, 10)
    w = rule.weights
    gY = np.einsum("q,qa,qb->ab", w, Y, Y.conj())
    np.testing.assert_allclose(gY, np.eye(Y.shape[1]), atol=1e-12)
    B = np.concatenate([U, V], axis=1)
    gB = np.einsum("q,qai,qbi->ab", w, B, B.conj())
    np.testing.assert_allclose(gB, np.eye(B.shape[1]), atol=1e-12)


def test_vsh_indexing():
    assert vsh_count(1) == 3 and vsh_count(10) == 120
    assert [vsh_index(1, m) for m in (-1, 0, 1)] == [0, 1, 2]
    assert vsh_index(2, -2) == 3


@pytest.mark.parametrize("n,m", [(0, 0), (2, 3), (1, -2)])
def test_invalid_vector_orders(n, m):
    with pytest.raises(ValidationError):
        vsh_U(n, m, [0, 0, 1])


def test_invalid_scalar_order():
    with pytest.raises(ValidationError):
        sph_harmonic(2, -3, [1, 0, 0])


def test_t2_inner_conjugates_second_argument(rule):
    a = np.zeros((len(rule), 3), dtype=complex)
    a[:, 0] = 1.0
    assert t2_inner(1j * a, a, rule) == pytest.approx(4j * math.pi)
    assert t2_inner(a, 1j * a, rule) == pytest.approx(-4j * math.pi)
    assert t2_norm(a, rule) == pytest.approx(math.sqrt(4 * math.pi))


def test_t2_shape_mismatch(rule, small_rule):
    with pytest.raises(IncompatibleError):
        t2_inner(np.zeros((len(rule), 3)), np.zeros((len(small_rule), 3)), rule)
    with pytest.raises(IncompatibleError):
        t2_norm(np.zeros((len(small_rule), 3)), rule)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_t2_inner_is_hermitian(seed):
    rule = lebedev_rule(110)
    g = np.random.default_rng(seed)
    a = g.normal(size=(110, 3)) + 1j * g.normal(size=(110, 3))
    b = g.normal(size=(110, 3)) + 1j * g.normal(size=(110, 3))
    assert t2_inner(a, b, rule) == pytest.approx(np.conj(t2_inner(b, a, rule)), abs=1e-10)
    assert t2_inner(a, a, rule).real == pytest.approx(t2_norm(a, rule) ** 2)


def test_tangential_projection_removes_radial_part(rule, rng):
    v = rng.normal(size=(len(rule), 3))
    t = tangential_projection(v, rule.nodes)
    np.testing.assert_allclose(np.einsum("qi,qi->q", t, rule.nodes), 0, atol=1e-14)
    np.testing.assert_allclose(tangential_projection(t, rule.nodes), t, atol=1e-15)


def test_wigner_matrix_is_unitary_and_rotates_harmonics(rng):
    from scipy.spatial.transform import Rotation

    R = Rotation.from_rotvec(rng.normal(size=3)).as_matrix()
    D = wigner_d(R, 5)
    np.testing.assert_allclose(D @ D.conj().T, np.eye(len(D)), atol=1e-12)
    x = random_unit(rng, 7)
    Y, U, _ = harmonics(x, 5)
    Yr, Ur, _ = harmonics(x @ R, 5)
    np.testing.assert_allclose(Yr[:, 1:], Y[:, 1:] @ D, atol=1e-12)
    np.testing.assert_allclose(np.einsum("ij,qaj->qai", R, Ur), np.einsum("qbi,ba->qai", U, D),
                               atol=1e-12)


def test_590_node_rule_is_degree_41():
    assert LEBEDEV_ORDERS[590] == 41
