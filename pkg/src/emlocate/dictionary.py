"""Augmented reference dictionaries: shapes x orientations x scales.

Manifest format (``manifest.txt`` inside the dictionary directory)::

    k d1 d2 d3 p1 p2 p3 N angle_step grid
    shape material theta phi psi tau pattern_file norm     (one per entry)

Pattern files use the far-field text format.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import IncompatibleError, ParseError, ValidationError
from .farfield import FarFieldPattern, IncidentWave, read_pattern, write_pattern
from .forward import Material, Pose, ShapeModel, eval_far_field, in_plane_euler, make_shape
from .sph import QuadratureRule, lebedev_rule

SYMMETRY_TOL = 1e-10
DISTINCT_TOL = 0.01


@dataclass(frozen=True, eq=False)
class DictionaryEntry:
    model: ShapeModel
    euler: tuple
    tau: float
    pattern: FarFieldPattern
    norm: float

    @property
    def shape_id(self):
        return self.model.shape_id

    @property
    def pose(self):
        return Pose((0.0, 0.0, 0.0), self.euler, self.tau)

    @property
    def extent(self):
        return self.model.circumradius * self.tau

    def sort_key(self):
        return (-self.norm, self.shape_id, *self.euler, self.tau)

    def label(self):
        th, ph, ps = self.euler
        return f"{self.shape_id} euler=({th:.6g},{ph:.6g},{ps:.6g}) tau={self.tau:g}"


@dataclass(frozen=True, eq=False)
class Dictionary:
    entries: tuple
    wave: IncidentWave
    rule: QuadratureRule
    angle_step: float
    grid: str = "in-plane"
    scales: tuple = field(default_factory=tuple)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def find(self, shape_id, euler, tau, tol=1e-9):
        for e in self.entries:
            if (e.shape_id == shape_id and abs(e.tau - tau) <= tol * max(1.0, tau)
                    and np.allclose(e.euler, euler, atol=tol, rtol=0)):
                return e
        return None


def _steps(span, h):
    count = span / h
    if abs(count - round(count)) > 1e-9 or round(count) < 1:
        raise ValidationError(f"angle step {h} does not divide {span} evenly")
    return int(round(count))


def orientation_grid(h: float, grid: str = "in-plane"):
    """Euler triples on an equal angular grid.

    ``in-plane``: rotations about x3 by multiples of h over [0, 2 pi).
    ``full``: theta, phi over [0, 2 pi) and psi over [0, pi] with step h.
    """
    if not h > 0:
        raise ValidationError("angle step must be positive")
    if grid == "in-plane":
        n = _steps(2 * math.pi, h)
        return [in_plane_euler(i * h) for i in range(n)]
    if grid == "full":
        n2 = _steps(2 * math.pi, h)
        n1 = _steps(math.pi, h)
        return [(i * h, j * h, l * h) for i in range(n2) for j in range(n2) for l in range(n1 + 1)]
    raise ValidationError(f"unknown orientation grid {grid!r}")


def _relative_distance(a: FarFieldPattern, b: FarFieldPattern):
    diff = (a - b).norm()
    scale = max(a.norm(), b.norm())
    return diff / scale if scale > 0 else 0.0


def build_dictionary(shapes, angle_step: float, scale_set, wave: IncidentWave,
                     rule: QuadratureRule, grid: str = "in-plane",
                     symmetry_tol: float = SYMMETRY_TOL) -> Dictionary:
    """Synthesize every (shape, orientation, scale) entry and sort by norm.

    Orientations whose patterns agree to ``symmetry_tol`` (relative) with an
    earlier orientation of the same shape and scale are dropped.
    """
    models = [make_shape(s) if isinstance(s, str) else s for s in shapes]
    ids = [m.shape_id for m in models]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"duplicate shape ids in dictionary: {ids}")
    scales = tuple(float(t) for t in scale_set)
    if not scales:
        raise ValidationError("scale set must be nonempty")
    if any(not t > 0 for t in scales):
        raise ValidationError(f"scales must be positive, got {scales}")
    orientations = orientation_grid(angle_step, grid)
    entries = []
    for model in models:
        for tau in scales:
            kept = []
            for euler in orientations:
                pat = eval_far_field(model, Pose(euler=euler, tau=tau), wave, rule)
                if any(_relative_distance(pat, other) < symmetry_tol for other in kept):
                    continue
                kept.append(pat)
                norm = pat.norm()
                if not norm > 0:
                    raise ValidationError(f"entry {model.shape_id} tau={tau} has zero far field")
                entries.append(DictionaryEntry(model, tuple(euler), tau, pat, norm))
    entries.sort(key=DictionaryEntry.sort_key)
    return Dictionary(tuple(entries), wave, rule, float(angle_step), grid, scales)


def verify_distinct(dictionary, delta: float = DISTINCT_TOL):
    """Pairs of entries whose relative far-field distance is below ``delta``.

    Returns a list of ``(i, j, distance)`` with ``i < j``; empty when every
    pair is distinguishable.
    """
    entries = list(dictionary)
    if len(entries) < 2:
        return []
    w = entries[0].pattern.rule.weights
    X = np.stack([e.pattern.values for e in entries])
    norms = np.array([e.norm for e in entries])
    gram = np.einsum("q,aqi,bqi->ab", w, X, np.conj(X)).real
    d2 = norms[:, None] ** 2 + norms[None, :] ** 2 - 2 * gram
    scale = np.maximum(norms[:, None], norms[None, :])
    approx = np.sqrt(np.clip(d2, 0, None)) / scale
    report = []
    for i in range(len(entries)):
        for j in range(i + 1, len(entries)):
            # screen with the Gram matrix, confirm exactly
            if approx[i, j] < delta + 1e-6:
                dist = _relative_distance(entries[i].pattern, entries[j].pattern)
                if dist < delta:
                    report.append((i, j, dist))
    return report


# ---------------------------------------------------------------------------
# manifest I/O


def _fmt(x):
    return format(float(x), ".17g")


def write_dictionary(dictionary: Dictionary, directory) -> str:
    os.makedirs(directory, exist_ok=True)
    w = dictionary.wave
    lines = [" ".join([_fmt(w.k), *(_fmt(v) for v in w.d), *(_fmt(v) for v in w.p),
                       str(len(dictionary.rule)), _fmt(dictionary.angle_step), dictionary.grid])]
    for i, e in enumerate(dictionary):
        name = f"entry_{i:04d}.txt"
        write_pattern(e.pattern, os.path.join(directory, name))
        lines.append(" ".join([e.shape_id, e.model.material.token(), *(_fmt(a) for a in e.euler),
                               _fmt(e.tau), name, _fmt(e.norm)]))
    path = os.path.join(directory, "manifest.txt")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def read_dictionary(directory) -> Dictionary:
    path = os.path.join(directory, "manifest.txt")
    if not os.path.exists(path):
        raise FileNotFoundError(f"file not found: {path}")
    with open(path) as fh:
        rows = [(i + 1, ln.split()) for i, ln in enumerate(fh) if ln.strip()]
    if not rows:
        raise ParseError("empty manifest", source=path)
    lineno, head = rows[0]
    if len(head) != 10:
        raise ParseError(f"manifest header needs 10 fields, found {len(head)}", lineno, path)
    try:
        k, d1, d2, d3, p1, p2, p3 = (float(v) for v in head[:7])
        count = int(head[7])
        step = float(head[8])
    except ValueError as exc:
        raise ParseError(f"bad header value ({exc})", lineno, path) from None
    wave = IncidentWave(k, (d1, d2, d3), (p1, p2, p3))
    rule = lebedev_rule(count)
    models = {}
    entries = []
    for lineno, parts in rows[1:]:
        if len(parts) != 8:
            raise ParseError(f"entry needs 8 fields, found {len(parts)}", lineno, path)
        shape, mat, th, ph, ps, tau, fname, _norm = parts
        try:
            euler = (float(th), float(ph), float(ps))
            tau = float(tau)
        except ValueError as exc:
            raise ParseError(f"bad number ({exc})", lineno, path) from None
        key = (shape, mat)
        if key not in models:
            models[key] = make_shape(shape, Material.parse(mat))
        pat = read_pattern(os.path.join(directory, fname), rule)
        if pat.wave != wave:
            raise IncompatibleError(f"{fname}: incident wave differs from manifest header")
        entries.append(DictionaryEntry(models[key], euler, tau, pat, pat.norm()))
    entries.sort(key=DictionaryEntry.sort_key)
    scales = tuple(sorted({e.tau for e in entries}))
    return Dictionary(tuple(entries), wave, rule, step, head[9], scales)
