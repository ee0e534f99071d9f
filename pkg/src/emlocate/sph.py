"""Spherical harmonics, vector spherical harmonics and Lebedev quadrature.

Conventions
-----------
* ``Y_n^m`` is fully normalised (orthonormal on the unit sphere) and carries
  the Condon-Shortley phase, so ``Y_n^{-m} = (-1)^m conj(Y_n^m)``.
* ``U_n^m = Grad Y_n^m / sqrt(n(n+1))`` and ``V_n^m = xhat x U_n^m``.
* The T^2 inner product conjugates its second argument.
* Lebedev weights are scaled to sum to ``4*pi``.

Vector harmonics are indexed by ``j = n*n + n + m - 1`` (``n >= 1``), which
runs over ``0 .. N*(N+2) - 1`` for orders up to ``N``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import lebedev_rule as _scipy_lebedev

from .errors import IncompatibleError, ValidationError

# point count -> algebraic degree of exactness
LEBEDEV_ORDERS = {
    6: 3, 14: 5, 26: 7, 38: 9, 50: 11, 74: 13, 86: 15, 110: 17, 146: 19,
    170: 21, 194: 23, 230: 25, 266: 27, 302: 29, 350: 31, 434: 35, 590: 41,
    770: 47, 974: 53, 1202: 59, 1454: 65, 1730: 71, 2030: 77, 2354: 83,
    2702: 89, 3074: 95, 3470: 101, 3890: 107, 4334: 113, 4802: 119,
    5294: 125, 5810: 131,
}


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes on the unit sphere with weights summing to 4*pi."""

    nodes: np.ndarray
    weights: np.ndarray
    degree: int
    rule_id: str = field(default="custom")

    def __len__(self):
        return len(self.weights)

    def __eq__(self, other):
        if not isinstance(other, QuadratureRule):
            return NotImplemented
        if self is other:
            return True
        return (self.rule_id == other.rule_id
                and self.nodes.shape == other.nodes.shape
                and np.array_equal(self.nodes, other.nodes)
                and np.array_equal(self.weights, other.weights))

    def __hash__(self):
        return hash((self.rule_id, len(self.weights)))


@lru_cache(maxsize=None)
def lebedev_rule(point_count: int) -> QuadratureRule:
    """Return the Lebedev rule with ``point_count`` nodes."""
    if point_count not in LEBEDEV_ORDERS:
        supported = ", ".join(str(c) for c in sorted(LEBEDEV_ORDERS))
        raise ValidationError(
            f"unsupported rule: no Lebedev rule with {point_count} points "
            f"(supported counts: {supported})")
    degree = LEBEDEV_ORDERS[point_count]
    x, w = _scipy_lebedev(degree)
    nodes = np.ascontiguousarray(x.T, dtype=float)
    nodes /= np.linalg.norm(nodes, axis=1)[:, None]
    weights = np.asarray(w, dtype=float) * (4 * np.pi / np.sum(w))
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes, weights, degree, f"lebedev-{point_count}")


def rule_for_degree(degree: int) -> QuadratureRule:
    """Smallest Lebedev rule integrating polynomials of ``degree`` exactly."""
    for count, deg in sorted(LEBEDEV_ORDERS.items()):
        if deg >= degree:
            return lebedev_rule(count)
    raise ValidationError(f"no Lebedev rule of degree >= {degree}")


# ---------------------------------------------------------------------------
# scalar and vector harmonics


def _angles(xhat):
    xhat = np.atleast_2d(np.asarray(xhat, dtype=float))
    r = np.linalg.norm(xhat, axis=1)
    ct = np.clip(xhat[:, 2] / r, -1.0, 1.0)
    rho = np.hypot(xhat[:, 0], xhat[:, 1])
    st = rho / r
    phi = np.arctan2(xhat[:, 1], xhat[:, 0])
    return ct, st, phi


def _legendre_table(ct, st, nmax):
    """Normalised P_n^m(cos theta) for 0 <= m <= n <= nmax (CS phase).

    Returned as an array ``P[n, m, q]`` with one extra column of zeros so
    that ``P[n, n + 1]`` is valid.
    """
    q = ct.shape[0]
    P = np.zeros((nmax + 1, nmax + 2, q))
    P[0, 0] = 1.0 / np.sqrt(4 * np.pi)
    for m in range(1, nmax + 1):
        P[m, m] = -np.sqrt((2 * m + 1) / (2.0 * m)) * st * P[m - 1, m - 1]
    for m in range(0, nmax):
        P[m + 1, m] = np.sqrt(2 * m + 3.0) * ct * P[m, m]
    for m in range(0, nmax + 1):
        for n in range(m + 2, nmax + 1):
            a = np.sqrt((4.0 * n * n - 1) / (n * n - m * m))
            b = np.sqrt(((n - 1.0) ** 2 - m * m) / (4.0 * (n - 1) ** 2 - 1))
            P[n, m] = a * (ct * P[n - 1, m] - b * P[n - 2, m])
    return P


def _gradient_tables(P, nmax):
    """d/dtheta P_n^m and m P_n^m / sin(theta), both regular at the poles."""
    dP = np.zeros_like(P)
    mPs = np.zeros_like(P)
    for n in range(1, nmax + 1):
        dP[n, 0] = np.sqrt(n * (n + 1.0)) * P[n, 1]
        for m in range(1, n + 1):
            dP[n, m] = 0.5 * (np.sqrt((n - m) * (n + m + 1.0)) * P[n, m + 1]
                              - np.sqrt((n + m) * (n - m + 1.0)) * P[n, m - 1])
            c = np.sqrt((2 * n + 1.0) / (2 * n - 1.0))
            t = np.sqrt((n + m) * (n + m - 1.0)) * P[n - 1, m - 1]
            if m + 1 <= n - 1:
                t = t + np.sqrt((n - m) * (n - m - 1.0)) * P[n - 1, m + 1]
            mPs[n, m] = -0.5 * c * t
    return dP, mPs


def _frame(ct, st, phi):
    cp, sp = np.cos(phi), np.sin(phi)
    e_theta = np.stack([ct * cp, ct * sp, -st], axis=-1)
    e_phi = np.stack([-sp, cp, np.zeros_like(cp)], axis=-1)
    return e_theta, e_phi


def vsh_count(nmax: int) -> int:
    """Number of (n, m) pairs with 1 <= n <= nmax."""
    return nmax * (nmax + 2)


def vsh_index(n: int, m: int) -> int:
    return n * n + n + m - 1


def harmonics(xhat, nmax: int):
    """Evaluate Y, U and V up to order ``nmax`` at the points ``xhat``.

    Returns ``(Y, U, V)`` with shapes ``(Q, (nmax+1)**2)``,
    ``(Q, nmax*(nmax+2), 3)`` and the same for V. ``Y`` is indexed by
    ``n*n + n + m``; ``U`` and ``V`` by :func:`vsh_index`.
    """
    ct, st, phi = _angles(xhat)
    q = ct.shape[0]
    P = _legendre_table(ct, st, nmax)
    Y = np.zeros((q, (nmax + 1) ** 2), dtype=complex)
    for n in range(nmax + 1):
        for m in range(0, n + 1):
            y = P[n, m] * np.exp(1j * m * phi)
            Y[:, n * n + n + m] = y
            if m:
                Y[:, n * n + n - m] = (-1) ** m * np.conj(y)
    J = vsh_count(nmax)
    U = np.zeros((q, J, 3), dtype=complex)
    if nmax < 1:
        return Y, U, U.copy()
    dP, mPs = _gradient_tables(P, nmax)
    e_theta, e_phi = _frame(ct, st, phi)
    for n in range(1, nmax + 1):
        scale = 1.0 / np.sqrt(n * (n + 1.0))
        for m in range(0, n + 1):
            ph = np.exp(1j * m * phi) * scale
            g = (dP[n, m] * ph)[:, None] * e_theta \
                + (1j * mPs[n, m] * ph)[:, None] * e_phi
            U[:, vsh_index(n, m)] = g
            if m:
                U[:, vsh_index(n, -m)] = (-1) ** m * np.conj(g)
    nodes = np.atleast_2d(np.asarray(xhat, dtype=float))
    nodes = nodes / np.linalg.norm(nodes, axis=1)[:, None]
    V = np.cross(nodes[:, None, :], U)
    return Y, U, V


def _check_nm(n, m, nmin):
    if n < nmin:
        raise ValidationError(f"order n={n} must be >= {nmin}")
    if abs(m) > n:
        raise ValidationError(f"|m|={abs(m)} exceeds n={n}")


def sph_harmonic(n: int, m: int, xhat) -> complex:
    """Orthonormal complex spherical harmonic Y_n^m at a unit vector."""
    _check_nm(n, m, 0)
    Y, _, _ = harmonics(np.reshape(xhat, (1, 3)), n)
    return complex(Y[0, n * n + n + m])


def vsh_U(n: int, m: int, xhat) -> np.ndarray:
    """Normalised surface gradient of Y_n^m."""
    _check_nm(n, m, 1)
    _, U, _ = harmonics(np.reshape(xhat, (1, 3)), n)
    return U[0, vsh_index(n, m)]


def vsh_V(n: int, m: int, xhat) -> np.ndarray:
    """``xhat`` cross ``U_n^m``."""
    _check_nm(n, m, 1)
    _, _, V = harmonics(np.reshape(xhat, (1, 3)), n)
    return V[0, vsh_index(n, m)]


@lru_cache(maxsize=16)
def _cached_basis(rule: QuadratureRule, nmax: int):
    Y, U, V = harmonics(rule.nodes, nmax)
    for a in (Y, U, V):
        a.setflags(write=False)
    return Y, U, V


def rule_harmonics(rule: QuadratureRule, nmax: int):
    """Cached :func:`harmonics` evaluated at the nodes of ``rule``."""
    return _cached_basis(rule, nmax)


# ---------------------------------------------------------------------------
# T^2 inner product


def _field_values(a):
    return a.values if hasattr(a, "values") else np.asarray(a)


def t2_inner(a, b, rule: QuadratureRule) -> complex:
    """Quadrature approximation of the T^2 inner product <a, b>."""
    a, b = _field_values(a), _field_values(b)
    if a.shape != b.shape or a.shape != (len(rule), 3):
        raise IncompatibleError(
            f"fields of shape {a.shape} and {b.shape} do not live on "
            f"{rule.rule_id} ({len(rule)} nodes)")
    return complex(np.einsum("q,qi,qi->", rule.weights, a, np.conj(b)))


def t2_norm(a, rule: QuadratureRule) -> float:
    a = _field_values(a)
    if a.shape != (len(rule), 3):
        raise IncompatibleError(
            f"field of shape {a.shape} does not live on {rule.rule_id}")
    return float(np.sqrt(np.einsum("q,qi->", rule.weights, np.abs(a) ** 2)))


def tangential_projection(values, nodes) -> np.ndarray:
    """Remove the radial part of a vector field sampled at ``nodes``."""
    radial = np.einsum("qi,qi->q", values, nodes)
    return values - radial[:, None] * nodes


# ---------------------------------------------------------------------------
# rotations of harmonic expansions


def wigner_d(rotation, nmax: int) -> np.ndarray:
    """Rotation matrix of the harmonics of orders ``1..nmax``.

    Returns ``D`` (indexed like the vector harmonics) such that
    ``Y_n^m(R^T x) = sum_m' D[j(n,m'), j(n,m)] Y_n^m'(x)``. The same matrix
    rotates ``U`` and ``V``: ``R U_j(R^T x) = sum_i D[i, j] U_i(x)``.
    Computed by projecting rotated harmonics with a Lebedev rule that is
    exact for the products involved.
    """
    R = np.asarray(rotation, dtype=float)
    rule = rule_for_degree(2 * nmax)
    Y, _, _ = harmonics(rule.nodes, nmax)
    Yr, _, _ = harmonics(rule.nodes @ R, nmax)  # rows are R^T x_q
    J = vsh_count(nmax)
    D = np.zeros((J, J), dtype=complex)
    w = rule.weights
    for n in range(1, nmax + 1):
        s = slice(n * n, n * n + 2 * n + 1)
        block = np.einsum("q,qa,qb->ab", w, np.conj(Y[:, s]), Yr[:, s])
        t = slice(n * n - 1, n * n + 2 * n)
        D[t, t] = block
    return D
