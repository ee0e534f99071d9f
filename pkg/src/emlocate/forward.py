"""Far-field oracle for spheres and synthetic non-spherical shapes.

Every model is described by a T-matrix in the basis of vector spherical
harmonics. For a plane wave ``p exp(i k x.d)`` the far field is

    A(xhat) = -(4 pi i / k) sum_{nu, nu'} T[nu, nu'] Phi_nu(xhat) (conj(Phi_nu'(d)) . p)

with ``Phi`` running over ``U_n^m`` (electric) and ``V_n^m`` (magnetic). A
homogeneous sphere has a diagonal T-matrix given by its Mie coefficients
(``T = -a_n`` on U, ``T = -b_n`` on V, Bohren-Huffman ``a_n, b_n``).

Synthetic shapes reuse the Mie envelope of a sphere of the shape's RMS radius
and add a fixed low-order coupling block ``G^(1/2) C G^(1/2)`` which breaks
spherical symmetry. The block is generated once per shape token (seeded by
the token) and then rotated, so each token has its own signature and the
symmetry of the revolved profile (axis along x) is respected.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import spherical_jn, spherical_yn

from .errors import TruncationError, ValidationError
from .farfield import FarFieldPattern, IncidentWave, translation_phase
from .sph import QuadratureRule, harmonics, rule_harmonics, vsh_count, wigner_d

MIE_TOL = 1e-12
COUPLING_ORDER = 4


# ---------------------------------------------------------------------------
# materials, rotations, poses


@dataclass(frozen=True)
class Material:
    kind: str = "medium"
    eps: float = 1.0
    mu: float = 1.0
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("pec", "medium"):
            raise ValidationError(f"unknown material kind {self.kind!r}")
        if self.kind == "medium":
            if self.eps <= 0 or self.mu <= 0 or self.sigma < 0:
                raise ValidationError("medium needs eps > 0, mu > 0, sigma >= 0")

    @classmethod
    def pec(cls):
        return cls("pec")

    @classmethod
    def medium(cls, eps=1.0, mu=1.0, sigma=0.0):
        return cls("medium", float(eps), float(mu), float(sigma))

    @property
    def has_contrast(self):
        if self.kind == "pec":
            return True
        return abs(self.eps - 1) + abs(self.mu - 1) + abs(self.sigma) > 0

    def token(self):
        if self.kind == "pec":
            return "pec"
        parts = [f"eps={self.eps:g}"]
        if self.mu != 1:
            parts.append(f"mu={self.mu:g}")
        if self.sigma != 0:
            parts.append(f"sigma={self.sigma:g}")
        return ",".join(parts)

    @classmethod
    def parse(cls, text):
        text = text.strip().lower()
        if text == "pec":
            return cls.pec()
        kw = {}
        for item in text.split(","):
            key, sep, val = item.partition("=")
            if not sep or key not in ("eps", "mu", "sigma"):
                raise ValidationError(f"bad material token {text!r}")
            try:
                kw[key] = float(val)
            except ValueError:
                raise ValidationError(f"bad material value in {text!r}") from None
        return cls.medium(**kw)


def _rx(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _ry(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def _rz(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def euler_matrix(theta, phi, psi) -> np.ndarray:
    """Rotation for Euler angles in the x1-x2-x3 convention.

    ``U = Rz(psi) @ Ry(theta) @ Rx(phi)``: phi turns about x1, theta about
    x2 and psi about x3 (the in-plane angle).
    """
    return _rz(psi) @ _ry(theta) @ _rx(phi)


def in_plane_euler(alpha):
    """Euler triple for a rotation by ``alpha`` about x3, with psi in [0, pi]."""
    alpha = float(alpha) % (2 * math.pi)
    if alpha <= math.pi + 1e-12:
        return (0.0, 0.0, min(alpha, math.pi))
    # Rz(a) = Rz(a - pi) Ry(pi) Rx(pi)
    return (math.pi, math.pi, alpha - math.pi)


@dataclass(frozen=True)
class Pose:
    z: tuple = (0.0, 0.0, 0.0)
    euler: tuple = (0.0, 0.0, 0.0)
    tau: float = 1.0

    def __post_init__(self):
        z = tuple(float(v) for v in self.z)
        e = tuple(float(v) for v in self.euler)
        if len(z) != 3 or len(e) != 3:
            raise ValidationError("pose needs a 3-vector position and three Euler angles")
        theta, phi, psi = e
        eps = 1e-12
        if not (-eps <= theta <= 2 * math.pi + eps and -eps <= phi <= 2 * math.pi + eps
                and -eps <= psi <= math.pi + eps):
            raise ValidationError(f"Euler angles out of range: {e}")
        if not self.tau > 0:
            raise ValidationError(f"scale must be positive, got {self.tau}")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "euler", e)
        object.__setattr__(self, "tau", float(self.tau))

    @property
    def rotation(self):
        return euler_matrix(*self.euler)

    def moved(self, z):
        return Pose(tuple(z), self.euler, self.tau)


# ---------------------------------------------------------------------------
# Mie series


def _riccati(n, z):
    """psi_n(z) = z j_n(z) and its derivative for integer orders ``n``."""
    j = spherical_jn(n, z)
    dj = spherical_jn(n, z, derivative=True)
    return z * j, j + z * dj


def default_order(x: float) -> int:
    return int(math.ceil(x)) + 10


def mie_coefficients(radius: float, material: Material, k: float, N: int | None = None):
    """Mie T-matrix entries ``(t_electric, t_magnetic)`` for orders 1..N.

    ``t_electric[n-1] = -a_n`` and ``t_magnetic[n-1] = -b_n``. With ``N``
    omitted the order starts at ``ceil(k a) + 10`` and grows until the last
    order is below ``1e-12`` of the largest coefficient.
    """
    x = k * radius
    if not x > 0:
        raise ValidationError(f"size parameter k*a must be positive, got {x}")
    if N is not None:
        if N < x + 10:
            raise TruncationError(f"order N={N} is below k*a + 10 = {x + 10:.3f}")
        tE, tM = _mie_series(x, k, material, N)
        if not _converged(tE, tM):
            raise TruncationError(f"Mie series not converged at N={N} for k*a={x:.4g}")
        return tE, tM
    N = default_order(x)
    for _ in range(60):
        tE, tM = _mie_series(x, k, material, N)
        if _converged(tE, tM):
            return tE, tM
        N += 4
    raise TruncationError(f"Mie series not converged for k*a={x:.4g}")


def _converged(tE, tM):
    big = max(np.max(np.abs(tE)), np.max(np.abs(tM)))
    if big == 0:
        return True
    return max(abs(tE[-1]), abs(tM[-1])) <= MIE_TOL * big


def _mie_series(x, k, material, N):
    n = np.arange(1, N + 1)
    psi, dpsi = _riccati(n, x)
    y = spherical_yn(n, x)
    dy = spherical_yn(n, x, derivative=True)
    xi = psi + 1j * x * y
    dxi = dpsi + 1j * (y + x * dy)
    if material.kind == "pec":
        return -dpsi / dxi, -psi / xi
    # conductivity enters the background-normalised permittivity as i sigma / k
    eps_c = material.eps + 1j * material.sigma / k
    mu1 = material.mu
    m = np.sqrt(eps_c * mu1)
    jm = spherical_jn(n, m * x)
    djm = spherical_jn(n, m * x, derivative=True)
    jx = psi / x
    hx = xi / x
    dmx = jm + m * x * djm
    m2 = m * m
    a = (m2 * jm * dpsi - mu1 * jx * dmx) / (m2 * jm * dxi - mu1 * hx * dmx)
    b = (mu1 * jm * dpsi - jx * dmx) / (mu1 * jm * dxi - hx * dmx)
    return -a, -b


# ---------------------------------------------------------------------------
# shapes


def _circle(s):
    return np.cos(s), np.sin(s)


def _peanut(s):
    r = np.sqrt(3 * np.cos(s) ** 2 + 1)
    return r * np.cos(s), r * np.sin(s)


def _kite(s):
    return np.cos(s) + 0.65 * np.cos(2 * s) - 0.65, 1.5 * np.sin(s)


# 2-D profiles revolved about the x axis; kept as metadata and used for the
# shapes' radii
PROFILES = {"ball": _circle, "peanut-like": _peanut, "kite-like": _kite}
ALIASES = {"b": "ball", "ball": "ball", "sphere": "ball",
           "p": "peanut-like", "peanut": "peanut-like", "peanut-like": "peanut-like",
           "k": "kite-like", "kite": "kite-like", "kite-like": "kite-like"}
# rotation about a body axis perpendicular to the symmetry axis that leaves
# the profile invariant (None: no such symmetry)
_PROFILE_FLIP = {"ball": True, "peanut-like": True, "kite-like": False}


def canonical_shape(token: str) -> str:
    try:
        return ALIASES[token.strip().lower()]
    except KeyError:
        raise ValidationError(
            f"unknown shape {token!r}; known: {', '.join(sorted(PROFILES))}") from None


@lru_cache(maxsize=None)
def profile_radii(shape_id: str):
    """(circumradius, rms radius) of a revolved profile."""
    s = np.linspace(0, 2 * np.pi, 4001)
    x, y = PROFILES[shape_id](s)
    r2 = x * x + y * y
    return float(np.sqrt(r2.max())), float(np.sqrt(r2.mean()))


@dataclass(frozen=True, eq=False)
class ShapeModel:
    """A scatterer given by a Mie envelope plus an optional coupling block.

    ``coupling`` is a ``(2J, 2J)`` complex matrix over the vector harmonics of
    orders ``1..COUPLING_ORDER`` (U block first, then V), or None for a sphere.
    """

    shape_id: str
    radius: float
    circumradius: float
    material: Material
    coupling: np.ndarray | None = None

    def __post_init__(self):
        if not self.radius > 0:
            raise ValidationError("model radius must be positive")
        if not self.material.has_contrast:
            pass  # a contrast-free sphere is allowed; it simply does not scatter

    @property
    def is_spherical(self):
        return self.coupling is None

    def envelope(self, k):
        return mie_coefficients(self.radius, self.material, k)

    def order(self, k):
        return len(self.envelope(k)[0])


def make_sphere(radius: float, material: Material, shape_id: str = "ball") -> ShapeModel:
    return ShapeModel(shape_id, float(radius), float(radius), material)


def _coupling_seed(shape_id):
    return zlib.crc32(shape_id.encode())


def _body_coupling(shape_id, nc=COUPLING_ORDER, strength=0.8):
    """Axisymmetric coupling about the body z axis (diagonal in m)."""
    rng = np.random.default_rng(_coupling_seed(shape_id))
    J = vsh_count(nc)
    C = np.zeros((2 * J, 2 * J), dtype=complex)
    for m in range(-nc, nc + 1):
        idx = [s * J + n * n + n + m - 1 for s in (0, 1) for n in range(max(1, abs(m)), nc + 1)]
        size = len(idx)
        block = rng.normal(size=(size, size)) + 1j * rng.normal(size=(size, size))
        block *= strength / np.sqrt(2 * size)
        C[np.ix_(idx, idx)] = block
    return C


def _rotate_coupling(C, R, nc=COUPLING_ORDER):
    D = wigner_d(R, nc)
    J = D.shape[0]
    Dfull = np.zeros((2 * J, 2 * J), dtype=complex)
    Dfull[:J, :J] = D
    Dfull[J:, J:] = D
    return Dfull @ C @ Dfull.conj().T


@lru_cache(maxsize=None)
def _lab_coupling(shape_id):
    C = _body_coupling(shape_id)
    if _PROFILE_FLIP[shape_id]:
        C = 0.5 * (C + _rotate_coupling(C, _rx(np.pi)))
    # body symmetry axis z -> lab x axis
    C = _rotate_coupling(C, _ry(np.pi / 2))
    C.setflags(write=False)
    return C


def make_shape(token: str, material: Material | None = None) -> ShapeModel:
    """Model for one of the reference shapes ('ball', 'kite-like', 'peanut-like')."""
    shape_id = canonical_shape(token)
    material = material if material is not None else Material.medium(eps=4.0)
    outer, rms = profile_radii(shape_id)
    if shape_id == "ball":
        return make_sphere(1.0, material)
    return ShapeModel(shape_id, rms, outer, material, _lab_coupling(shape_id))


def rotate_model(model: ShapeModel, R) -> ShapeModel:
    """The model of the rotated scatterer, obtained by rotating its T-matrix."""
    if model.coupling is None:
        return model
    return ShapeModel(model.shape_id, model.radius, model.circumradius, model.material,
                      _rotate_coupling(model.coupling, np.asarray(R, dtype=float)))


# ---------------------------------------------------------------------------
# far-field evaluation


def _t_coefficients(model, k, bU, bV):
    """Apply the T-matrix to incident coefficients; returns (cU, cV)."""
    tE, tM = model.envelope(k)
    N = len(tE)
    n_of_j = np.repeat(np.arange(1, N + 1), 2 * np.arange(1, N + 1) + 1)
    tEj, tMj = tE[n_of_j - 1], tM[n_of_j - 1]
    cU = tEj * bU
    cV = tMj * bV
    if model.coupling is not None:
        Jc = model.coupling.shape[0] // 2
        g = np.sqrt(np.concatenate([tEj[:Jc], tMj[:Jc]]))
        b = np.concatenate([bU[:Jc], bV[:Jc]])
        extra = g * (model.coupling @ (g * b))
        cU = cU.copy()
        cV = cV.copy()
        cU[:Jc] += extra[:Jc]
        cV[:Jc] += extra[Jc:]
    return cU, cV


def base_far_field(model: ShapeModel, k: float, d, p, xhat, basis=None) -> np.ndarray:
    """Far field of the unposed model at the directions ``xhat`` (rows)."""
    N = model.order(k)
    d = np.asarray(d, dtype=float)
    p = np.asarray(p, dtype=float)
    _, Ud, Vd = harmonics(d.reshape(1, 3), N)
    bU = np.conj(Ud[0]) @ p
    bV = np.conj(Vd[0]) @ p
    cU, cV = _t_coefficients(model, k, bU, bV)
    if basis is None:
        _, U, V = harmonics(xhat, N)
    else:
        _, U, V = basis(N)
    return (-4j * np.pi / k) * (np.einsum("qji,j->qi", U, cU) + np.einsum("qji,j->qi", V, cV))


def eval_far_field(model: ShapeModel, pose: Pose, wave: IncidentWave,
                   rule: QuadratureRule) -> FarFieldPattern:
    """Far field of ``model`` scaled by tau, rotated, then moved to z.

    Scaling evaluates the base model at ``k*tau`` and multiplies by tau;
    rotation evaluates the base model at rotated directions, incidence and
    polarisation, ``U A(U^T x; U^T d, U^T p)``.
    """
    kk = wave.k * pose.tau
    R = pose.rotation
    d, p = wave.direction, wave.polarization
    if np.allclose(R, np.eye(3), rtol=0, atol=0):
        vals = base_far_field(model, kk, d, p, rule.nodes,
                              basis=lambda N: rule_harmonics(rule, N))
    else:
        vals = base_far_field(model, kk, R.T @ d, R.T @ p, rule.nodes @ R) @ R.T
    vals = pose.tau * vals
    if any(pose.z):
        vals = vals * translation_phase(wave, rule.nodes, pose.z)[:, None]
    return FarFieldPattern(vals, wave, rule)


# ---------------------------------------------------------------------------
# scenes


@dataclass(frozen=True)
class SceneComponent:
    model: ShapeModel
    pose: Pose

    @property
    def extent(self):
        return self.model.circumradius * self.pose.tau


@dataclass(frozen=True)
class Scene:
    components: tuple = field(default_factory=tuple)

    def __post_init__(self):
        comps = tuple(c if isinstance(c, SceneComponent) else SceneComponent(*c)
                      for c in self.components)
        object.__setattr__(self, "components", comps)
        for i, a in enumerate(comps):
            for b in comps[i + 1:]:
                dist = np.linalg.norm(np.subtract(a.pose.z, b.pose.z))
                if dist <= a.extent + b.extent:
                    raise ValidationError(
                        f"components at {a.pose.z} and {b.pose.z} overlap "
                        f"(distance {dist:.3g} <= {a.extent + b.extent:.3g})")

    @property
    def separation(self):
        zs = [np.asarray(c.pose.z) for c in self.components]
        if len(zs) < 2:
            return math.inf
        return min(np.linalg.norm(a - b) for i, a in enumerate(zs) for b in zs[i + 1:])


def scene_far_field(scene: Scene, wave: IncidentWave, rule: QuadratureRule) -> FarFieldPattern:
    """Sum of the posed component far fields (no inter-component coupling)."""
    total = np.zeros((len(rule), 3), dtype=complex)
    for comp in scene.components:
        total = total + eval_far_field(comp.model, comp.pose, wave, rule).values
    return FarFieldPattern(total, wave, rule)
