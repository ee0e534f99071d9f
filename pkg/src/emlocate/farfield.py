"""Far-field patterns: value type, transforms, noise and text I/O.

File format (one pattern per file)::

    k d1 d2 d3 p1 p2 p3 N
    x1 x2 x3 ReA1 ImA1 ReA2 ImA2 ReA3 ImA3      (N lines)

Numbers are written with 17 significant digits so a round trip is exact.
"""
from __future__ import annotations

import io
import os
from dataclasses import dataclass

import numpy as np

from .errors import IncompatibleError, ParseError, ValidationError
from .sph import LEBEDEV_ORDERS, QuadratureRule, lebedev_rule, t2_norm, tangential_projection


@dataclass(frozen=True)
class IncidentWave:
    """Plane wave ``p * exp(i k x.d)``."""

    k: float
    d: tuple
    p: tuple

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float).reshape(-1)
        p = np.asarray(self.p, dtype=float).reshape(-1)
        if d.shape != (3,) or p.shape != (3,):
            raise ValidationError("d and p must be 3-vectors")
        if not (np.isfinite(self.k) and self.k > 0):
            raise ValidationError(f"wavenumber must be positive, got {self.k}")
        if abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise ValidationError(f"incident direction must be a unit vector, |d|={np.linalg.norm(d)!r}")
        if abs(p @ d) > 1e-12 * max(np.linalg.norm(p), 1e-300):
            raise ValidationError("polarization p must be orthogonal to d")
        if np.linalg.norm(p) == 0:
            raise ValidationError("polarization must be nonzero")
        object.__setattr__(self, "k", float(self.k))
        object.__setattr__(self, "d", tuple(float(v) for v in d))
        object.__setattr__(self, "p", tuple(float(v) for v in p))

    @property
    def direction(self):
        return np.array(self.d)

    @property
    def polarization(self):
        return np.array(self.p)

    def with_k(self, k):
        return IncidentWave(k, self.d, self.p)

    def same_direction(self, other, tol=1e-12):
        return (np.allclose(self.d, other.d, atol=tol, rtol=0)
                and np.allclose(self.p, other.p, atol=tol, rtol=0))


@dataclass(frozen=True, eq=False)
class FarFieldPattern:
    """Tangential far field sampled at the nodes of a quadrature rule."""

    values: np.ndarray
    wave: IncidentWave
    rule: QuadratureRule

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape != (len(self.rule), 3):
            raise IncompatibleError(
                f"pattern of shape {v.shape} does not match {self.rule.rule_id}")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def rule_id(self):
        return self.rule.rule_id

    def norm(self) -> float:
        return t2_norm(self.values, self.rule)

    def max_amplitude(self) -> float:
        return float(np.max(np.linalg.norm(self.values, axis=1)))

    def replace(self, values):
        return FarFieldPattern(values, self.wave, self.rule)

    def __add__(self, other):
        _check_compatible(self, other)
        return self.replace(self.values + other.values)

    def __sub__(self, other):
        return subtract(self, other)


def _check_compatible(a, b):
    if a.rule != b.rule:
        raise IncompatibleError(f"patterns on different rules: {a.rule_id} vs {b.rule_id}")
    if a.wave != b.wave:
        raise IncompatibleError(f"patterns for different incident waves: {a.wave} vs {b.wave}")


def translation_phase(wave: IncidentWave, nodes, z) -> np.ndarray:
    """``exp(i k (d - xhat) . z)`` at every node."""
    z = np.asarray(z, dtype=float)
    return np.exp(1j * wave.k * ((wave.direction - nodes) @ z))


def translate_phase(A: FarFieldPattern, z) -> FarFieldPattern:
    """Far field of the same scatterer shifted by ``z``."""
    ph = translation_phase(A.wave, A.rule.nodes, z)
    return A.replace(A.values * ph[:, None])


def subtract(A: FarFieldPattern, B: FarFieldPattern) -> FarFieldPattern:
    _check_compatible(A, B)
    return A.replace(A.values - B.values)


def scale_amplitude(A: FarFieldPattern, c: complex) -> FarFieldPattern:
    return A.replace(A.values * c)


def noise_perturbation(A: FarFieldPattern, delta: float, seed: int) -> np.ndarray:
    """Raw additive noise ``delta * z1 * max|A| * exp(2 pi i z2)``.

    ``z1`` and ``z2`` are i.i.d. uniform on [-1, 1], one draw per node and
    Cartesian component.
    """
    if delta < 0:
        raise ValidationError(f"noise level must be nonnegative, got {delta}")
    rng = np.random.default_rng(seed)
    shape = A.values.shape
    z1 = rng.uniform(-1.0, 1.0, size=shape)
    z2 = rng.uniform(-1.0, 1.0, size=shape)
    return delta * z1 * A.max_amplitude() * np.exp(2j * np.pi * z2)


def apply_noise(A: FarFieldPattern, delta: float, seed: int) -> FarFieldPattern:
    """Corrupt a pattern with relative noise level ``delta``.

    The perturbation is projected back onto the tangent plane.
    """
    if delta == 0:
        return A
    eta = noise_perturbation(A, delta, seed)
    return A.replace(tangential_projection(A.values + eta, A.rule.nodes))


# ---------------------------------------------------------------------------
# text I/O


def _fmt(x):
    return format(float(x), ".17g")


def format_pattern(A: FarFieldPattern) -> str:
    w = A.wave
    out = io.StringIO()
    head = [w.k, *w.d, *w.p]
    out.write(" ".join(_fmt(v) for v in head) + f" {len(A.rule)}\n")
    for x, a in zip(A.rule.nodes, A.values):
        parts = [*x, a[0].real, a[0].imag, a[1].real, a[1].imag, a[2].real, a[2].imag]
        out.write(" ".join(_fmt(v) for v in parts) + "\n")
    return out.getvalue()


def write_pattern(A: FarFieldPattern, destination) -> None:
    text = format_pattern(A)
    if hasattr(destination, "write"):
        destination.write(text)
        return
    with open(destination, "w") as fh:
        fh.write(text)


def parse_pattern(text: str, rule: QuadratureRule | None = None, source=None) -> FarFieldPattern:
    lines = [(i + 1, ln) for i, ln in enumerate(text.splitlines()) if ln.strip()]
    if not lines:
        raise ParseError("empty pattern file", source=source)
    lineno, header = lines[0]
    fields = header.split()
    if len(fields) != 8:
        raise ParseError(f"header needs 8 fields, found {len(fields)}", lineno, source)
    try:
        k, d1, d2, d3, p1, p2, p3 = (float(v) for v in fields[:7])
        count = int(fields[7])
    except ValueError as exc:
        raise ParseError(f"bad header value ({exc})", lineno, source) from None
    body = lines[1:]
    if len(body) != count:
        raise ParseError(f"header announces {count} nodes but file has {len(body)}",
                         body[-1][0] if body else lineno, source)
    data = np.empty((count, 9))
    for row, (lineno, ln) in enumerate(body):
        parts = ln.split()
        if len(parts) != 9:
            raise ParseError(f"expected 9 numbers, found {len(parts)}", lineno, source)
        try:
            data[row] = [float(v) for v in parts]
        except ValueError as exc:
            raise ParseError(f"bad number ({exc})", lineno, source) from None
    nodes = data[:, :3]
    values = data[:, 3::2] + 1j * data[:, 4::2]
    if rule is None:
        if count not in LEBEDEV_ORDERS:
            raise IncompatibleError(f"{count} nodes do not match any supported Lebedev rule")
        rule = lebedev_rule(count)
    if len(rule) != count or not np.allclose(nodes, rule.nodes, rtol=0, atol=1e-12):
        raise IncompatibleError(f"pattern nodes do not match {rule.rule_id}")
    wave = IncidentWave(k, (d1, d2, d3), (p1, p2, p3))
    return FarFieldPattern(values, wave, rule)


def read_pattern(source, rule: QuadratureRule | None = None) -> FarFieldPattern:
    if hasattr(source, "read"):
        return parse_pattern(source.read(), rule)
    if not os.path.exists(source):
        raise FileNotFoundError(f"file not found: {source}")
    with open(source) as fh:
        return parse_pattern(fh.read(), rule, source=str(source))
