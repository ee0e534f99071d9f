"""Indicator functions over sampling grids, peak extraction and trimming.

Both indicators are built from inner products of the measured pattern with a
translated test pattern,

    <A, exp(i k (d - xhat).z) B> = sum_q exp(-i k (d - xhat_q).z) w_q A_q . conj(B_q),

so a whole grid is one matrix product between a phase matrix and per-node
coefficients. Grids are processed in chunks to bound memory.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import IncompatibleError, NumericalError, ValidationError
from .farfield import FarFieldPattern
from .sph import rule_harmonics

CHUNK = 4096


@dataclass(frozen=True, eq=False)
class SamplingGrid:
    """Axis-aligned lattice ``lower + spacing * (i, j, l)`` with an active mask."""

    lower: np.ndarray
    spacing: float
    shape: tuple
    mask: np.ndarray

    def __post_init__(self):
        if not self.spacing > 0:
            raise ValidationError("grid spacing must be positive")
        shape = tuple(int(s) for s in self.shape)
        if len(shape) != 3 or min(shape) < 1:
            raise ValidationError(f"grid needs at least one node per axis, got {shape}")
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != shape:
            raise ValidationError("mask shape must match grid shape")
        mask = mask.copy()
        mask.setflags(write=False)
        lower = np.asarray(self.lower, dtype=float).copy()
        lower.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "lower", lower)

    @classmethod
    def from_box(cls, lower, upper, spacing):
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        if not spacing > 0:
            raise ValidationError("grid spacing must be positive")
        if np.any(upper < lower):
            raise ValidationError("grid box is empty")
        shape = tuple(int(math.floor((u - l) / spacing + 1e-9)) + 1 for l, u in zip(lower, upper))
        return cls(lower, float(spacing), shape, np.ones(shape, dtype=bool))

    @classmethod
    def cube(cls, center, side, subdivisions):
        """Nodes of ``subdivisions**3`` cubes of total side ``side`` around ``center``."""
        if subdivisions < 1 or not side > 0:
            raise ValidationError("cube needs side > 0 and at least one subdivision")
        h = side / subdivisions
        lower = np.asarray(center, dtype=float) - side / 2
        n = subdivisions + 1
        return cls(lower, h, (n, n, n), np.ones((n, n, n), dtype=bool))

    @property
    def upper(self):
        return self.lower + self.spacing * (np.array(self.shape) - 1)

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def active_count(self):
        return int(self.mask.sum())

    def axes(self):
        return [self.lower[i] + self.spacing * np.arange(self.shape[i]) for i in range(3)]

    def points(self):
        """All node positions in C order, shape ``(size, 3)``."""
        gx, gy, gz = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)

    def active_points(self):
        return self.points()[self.mask.ravel()]

    def with_mask(self, mask):
        return SamplingGrid(self.lower, self.spacing, self.shape, mask)

    def restrict_to(self, keep):
        """Deactivate every node where ``keep`` (same shape) is False."""
        return self.with_mask(self.mask & np.asarray(keep, dtype=bool))

    def box_mask(self, center, half_width):
        pts = self.points()
        inside = np.all(np.abs(pts - np.asarray(center)) <= half_width + 1e-12, axis=1)
        return inside.reshape(self.shape)

    def ball_mask(self, center, radius):
        pts = self.points()
        inside = np.linalg.norm(pts - np.asarray(center), axis=1) <= radius + 1e-12
        return inside.reshape(self.shape)


@dataclass(frozen=True, eq=False)
class IndicatorField:
    """Indicator values on a grid; inactive nodes hold NaN."""

    grid: SamplingGrid
    values: np.ndarray
    kind: str
    normalized: bool = False

    def active_values(self):
        return self.values[self.grid.mask]

    def max(self):
        v = self.active_values()
        return float(v.max()) if v.size else math.nan

    def argmax(self):
        v = np.where(self.grid.mask, self.values, -np.inf)
        idx = np.unravel_index(np.argmax(v), v.shape)
        return self.grid.lower + self.grid.spacing * np.array(idx)

    def normalize(self):
        return IndicatorField(self.grid, normalize_values(self.values, self.grid.mask),
                              self.kind, True)


@dataclass(frozen=True)
class Peak:
    position: tuple
    value: float
    cluster: int


def normalize_values(values, mask):
    out = np.full(values.shape, np.nan)
    if not mask.any():
        return out
    v = values[mask]
    top = v.max()
    out[mask] = v / top if top > 0 else v
    return out


# ---------------------------------------------------------------------------
# indicator evaluation


def _phase_project(coeffs, points, pattern: FarFieldPattern, workers=1):
    """``sum_q exp(-i k (d - xhat_q).z) coeffs[q, :]`` for every z in ``points``."""
    k = pattern.wave.k
    kd = k * (pattern.wave.direction[None, :] - pattern.rule.nodes)  # (Q, 3)
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    out = np.empty((points.shape[0], coeffs.shape[1]), dtype=complex)

    def run(start):
        stop = min(start + CHUNK, points.shape[0])
        E = np.exp(-1j * (points[start:stop] @ kd.T))
        out[start:stop] = E @ coeffs

    starts = range(0, points.shape[0], CHUNK)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(run, starts))
    else:
        for s in starts:
            run(s)
    return out


def s_coefficients(A: FarFieldPattern):
    """Per-node coefficients for the six dipole test fields, shape ``(Q, 6)``."""
    _, U, V = rule_harmonics(A.rule, 1)
    basis = np.concatenate([U, V], axis=1)  # (Q, 6, 3)
    return np.einsum("q,qi,qmi->qm", A.rule.weights, A.values, np.conj(basis))


def _norm_sq(A):
    n2 = A.norm() ** 2
    if not n2 > 0:
        raise NumericalError("indicator undefined: far-field pattern has zero norm")
    return n2


def indicator_s(A: FarFieldPattern, z, rule=None) -> float:
    """Fraction of the pattern captured by the six dipole fields centred at z."""
    _check_rule(A, rule)
    n2 = _norm_sq(A)
    proj = _phase_project(s_coefficients(A), np.reshape(z, (1, 3)), A)
    return float(np.sum(np.abs(proj) ** 2) / n2)


def indicator_s_values(A: FarFieldPattern, points, workers=1) -> np.ndarray:
    n2 = _norm_sq(A)
    proj = _phase_project(s_coefficients(A), points, A, workers)
    return np.sum(np.abs(proj) ** 2, axis=1) / n2


def _check_rule(A, rule):
    if rule is not None and rule != A.rule:
        raise IncompatibleError(f"pattern lives on {A.rule_id}, not {rule.rule_id}")


def _check_entry(A, pattern):
    if pattern.rule != A.rule:
        raise IncompatibleError("reference pattern and data use different quadrature rules")
    if pattern.wave != A.wave:
        raise IncompatibleError(f"reference wave {pattern.wave} differs from data wave {A.wave}")


def _entry_pattern(entry):
    return entry.pattern if hasattr(entry, "pattern") else entry


def indicator_r(A: FarFieldPattern, entry, z, rule=None) -> float:
    """|<A, translated reference>| / ||reference||^2 at the point z."""
    _check_rule(A, rule)
    return float(indicator_r_values(A, [entry], np.reshape(z, (1, 3)))[0, 0])


def indicator_r_values(A: FarFieldPattern, entries, points, workers=1) -> np.ndarray:
    """I_r for several references at once; shape ``(len(points), len(entries))``."""
    pats = [_entry_pattern(e) for e in entries]
    for p in pats:
        _check_entry(A, p)
    norms2 = np.array([p.norm() ** 2 for p in pats])
    if np.any(~(norms2 > 0)):
        raise NumericalError("reference pattern has zero norm")
    B = np.stack([p.values for p in pats], axis=1)  # (Q, E, 3)
    coeffs = np.einsum("q,qi,qei->qe", A.rule.weights, A.values, np.conj(B))
    proj = _phase_project(coeffs, points, A, workers)
    return np.abs(proj) / norms2[None, :]


def evaluate_grid(indicator, A: FarFieldPattern, grid: SamplingGrid, rule=None,
                  normalize=False, workers=1) -> IndicatorField:
    """Evaluate ``"s"`` or a dictionary entry's indicator at all active nodes."""
    _check_rule(A, rule)
    values = np.full(grid.shape, np.nan)
    pts = grid.active_points()
    if indicator == "s":
        kind = "S"
        if pts.size:
            values[grid.mask] = indicator_s_values(A, pts, workers)
        else:
            _norm_sq(A)
    else:
        kind = "R"
        if pts.size:
            values[grid.mask] = indicator_r_values(A, [indicator], pts, workers)[:, 0]
    field = IndicatorField(grid, values, kind)
    return field.normalize() if normalize else field


# ---------------------------------------------------------------------------
# peaks and trimming

_OFFSETS = [(i, j, l) for i in (-1, 0, 1) for j in (-1, 0, 1) for l in (-1, 0, 1)
            if (i, j, l) != (0, 0, 0)]


def strict_local_maxima(values: np.ndarray) -> np.ndarray:
    """Boolean mask of nodes strictly above all finite 26-neighbours.

    Works on the last three axes; NaN marks inactive nodes. Leading axes are
    treated as a batch.
    """
    v = np.where(np.isnan(values), -np.inf, values)
    pad = [(0, 0)] * (v.ndim - 3) + [(1, 1)] * 3
    p = np.pad(v, pad, constant_values=-np.inf)
    nx, ny, nz = v.shape[-3:]
    result = np.isfinite(v)
    for i, j, l in _OFFSETS:
        nb = p[..., 1 + i:1 + i + nx, 1 + j:1 + j + ny, 1 + l:1 + l + nz]
        result &= v > nb
    return result


def find_peaks(field: IndicatorField, threshold_frac: float = 0.8,
               min_separation: float = 0.0):
    """Strict local maxima with value >= threshold_frac * global max, merged.

    Maxima closer than ``min_separation`` collapse onto the highest one.
    """
    if not 0 < threshold_frac <= 1:
        raise ValidationError("threshold_frac must lie in (0, 1]")
    grid = field.grid
    if grid.active_count == 0:
        return []
    top = field.max()
    is_max = strict_local_maxima(np.where(grid.mask, field.values, np.nan))
    idx = np.argwhere(is_max)
    vals = field.values[is_max]
    keep = vals >= threshold_frac * top
    idx, vals = idx[keep], vals[keep]
    order = np.argsort(-vals, kind="stable")
    peaks = []
    for o in order:
        pos = grid.lower + grid.spacing * idx[o]
        if any(np.linalg.norm(pos - np.array(p.position)) < min_separation for p in peaks):
            continue
        peaks.append(Peak(tuple(float(c) for c in pos), float(vals[o]), len(peaks)))
    return peaks


def trim(grid: SamplingGrid, center, extent: float, margin: float = 0.0) -> SamplingGrid:
    """Deactivate the nodes inside the ball of radius ``extent + margin``."""
    return grid.restrict_to(~grid.ball_mask(center, extent + margin))


def write_field(field: IndicatorField, destination) -> None:
    """Dump ``x y z value`` for every active node."""
    pts = field.grid.points()[field.grid.mask.ravel()]
    vals = field.values[field.grid.mask]
    lines = [" ".join(format(float(c), ".17g") for c in (*p, v)) for p, v in zip(pts, vals)]
    text = "\n".join(lines) + ("\n" if lines else "")
    if hasattr(destination, "write"):
        destination.write(text)
    else:
        with open(destination, "w") as fh:
            fh.write(text)
