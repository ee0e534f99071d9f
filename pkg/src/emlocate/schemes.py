"""End-to-end locating schemes: S, AR, M and enhanced M."""
from __future__ import annotations

import itertools
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import IncompatibleError, ValidationError
from .farfield import FarFieldPattern, translate_phase
from .indicators import (
    IndicatorField, SamplingGrid, evaluate_grid, find_peaks, indicator_r_values,
    s_coefficients, strict_local_maxima,
)

AR_TOL = 0.2
AR_SIGNIFICANCE = 0.5
AR_EXPLAINED = 0.25  # share of residual energy a detection must explain
S_THRESHOLD = 0.8
SMALL_MIN_VALUE = 0.25
TUPLE_CAP = 10 ** 6
TIE_RTOL = 1e-9
REFINE_MAX = 10  # refinement steps per coarse cell


@dataclass(frozen=True)
class FoundComponent:
    position: tuple
    shape_id: str
    euler: tuple | None
    tau: float | None
    score: float
    kind: str = "regular"

    def to_dict(self):
        return {
            "position": [float(c) for c in self.position],
            "shape": self.shape_id,
            "euler": None if self.euler is None else [float(a) for a in self.euler],
            "tau": self.tau,
            "score": float(self.score),
            "kind": self.kind,
        }


@dataclass
class ReconstructionReport:
    scheme: str
    components: list = field(default_factory=list)
    residual_norms: dict = field(default_factory=dict)
    waves: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    fields: dict = field(default_factory=dict, repr=False)
    matched: list = field(default_factory=list, repr=False)
    active_counts: list = field(default_factory=list, repr=False)

    @property
    def regular(self):
        return [c for c in self.components if c.kind == "regular"]

    @property
    def small(self):
        return [c for c in self.components if c.kind == "small"]

    def to_dict(self, include_timing=False):
        out = {
            "scheme": self.scheme,
            "components": [c.to_dict() for c in self.components],
            "residual_norms": {k: float(v) for k, v in self.residual_norms.items()},
            "waves": [{"k": w.k, "d": list(w.d), "p": list(w.p)} for w in self.waves],
            "notes": list(self.notes),
        }
        if include_timing:
            out["timing"] = {k: float(v) for k, v in self.timing.items()}
        return out

    def to_json(self, include_timing=False):
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True) + "\n"

    def to_text(self, include_timing=False):
        d = self.to_dict(include_timing)
        lines = [f"scheme: {d['scheme']}"]
        for w in d["waves"]:
            lines.append(f"wave: k={w['k']:.17g} d={w['d']} p={w['p']}")
        lines.append(f"components: {len(d['components'])}")
        for i, c in enumerate(d["components"]):
            pos = " ".join(f"{v:.6f}" for v in c["position"])
            pose = ""
            if c["euler"] is not None:
                pose = " euler=" + ",".join(f"{a:.6f}" for a in c["euler"]) + f" tau={c['tau']:g}"
            lines.append(f"  [{i}] {c['kind']} {c['shape']} at {pos}{pose} score={c['score']:.6g}")
        for key in sorted(d["residual_norms"]):
            lines.append(f"residual[{key}]: {d['residual_norms'][key]:.6g}")
        for note in d["notes"]:
            lines.append(f"note: {note}")
        for key in sorted(d.get("timing", {})):
            lines.append(f"time[{key}]: {d['timing'][key]:.3f}s")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ResampleConfig:
    """Fine cubes for local re-sampling around each regular component."""

    subdivisions: int = 10
    side: float = 1.0
    cap: int = TUPLE_CAP
    greedy: bool = False
    sweeps: int = 2

    def __post_init__(self):
        if self.subdivisions < 2:
            raise ValidationError("re-sampling needs at least 2 subdivisions per axis")
        if not self.side > 0:
            raise ValidationError("re-sampling cube side must be positive")
        if self.cap < 1:
            raise ValidationError("candidate cap must be positive")

    @property
    def spacing(self):
        return self.side / self.subdivisions


@dataclass(frozen=True)
class Preprocess:
    """Coarse Scheme S pass used to crop the AR sampling region to cubes."""

    pattern: FarFieldPattern
    grid: SamplingGrid
    half_width: float = 1.5
    threshold_frac: float = 0.3


def _wavelength(A):
    return 2 * math.pi / A.wave.k


# ---------------------------------------------------------------------------
# Scheme S


def run_scheme_s(A: FarFieldPattern, grid: SamplingGrid, rule=None,
                 threshold_frac: float = S_THRESHOLD, min_separation: float | None = None,
                 workers: int = 1) -> ReconstructionReport:
    """Locate small components as significant maxima of I_s."""
    t0 = time.perf_counter()
    if min_separation is None:
        min_separation = _wavelength(A) / 2
    fld = evaluate_grid("s", A, grid, rule, workers=workers)
    peaks = find_peaks(fld, threshold_frac, min_separation)
    comps = [FoundComponent(p.position, "small", None, None, p.value, "small") for p in peaks]
    report = ReconstructionReport("s", comps, {}, [A.wave])
    report.fields["s"] = fld
    report.timing["s"] = time.perf_counter() - t0
    return report


def crop_grid(pre: Preprocess, grid: SamplingGrid, workers=1):
    """Restrict ``grid`` to cubes around the coarse Scheme S maxima."""
    coarse = run_scheme_s(pre.pattern, pre.grid, threshold_frac=pre.threshold_frac,
                          workers=workers)
    keep = np.zeros(grid.shape, dtype=bool)
    for c in coarse.components:
        keep |= grid.box_mask(c.position, pre.half_width)
    return grid.restrict_to(keep), coarse


# ---------------------------------------------------------------------------
# Scheme AR


def _check_dictionary(A, dictionary):
    if dictionary.wave != A.wave:
        raise IncompatibleError(f"dictionary built for {dictionary.wave}, data measured with {A.wave}")
    if dictionary.rule != A.rule:
        raise IncompatibleError("dictionary and data use different quadrature rules")


def _entry_candidates(values, mask, tol, significance):
    """Nodes that are strict local maxima with |I - 1| <= tol."""
    v = np.where(mask, values, np.nan)
    if not mask.any():
        return []
    top = np.nanmax(v)
    is_max = strict_local_maxima(v)
    idx = np.argwhere(is_max)
    vals = v[is_max]
    ok = (np.abs(vals - 1) <= tol) & (vals >= significance * top)
    return [(abs(val - 1), tuple(i), float(val)) for i, val in zip(idx[ok], vals[ok])]


def run_scheme_ar(A: FarFieldPattern, dictionary, grid: SamplingGrid, rule=None,
                  tol: float = AR_TOL, significance: float = AR_SIGNIFICANCE,
                  margin: float = 0.0, resolution: str = "best",
                  preprocess: Preprocess | None = None, explained: float = AR_EXPLAINED,
                  workers: int = 1) -> ReconstructionReport:
    """Locate regular components by matching dictionary entries.

    A detection for entry j is a strict local maximum of I_r^j with
    ``|I - 1| <= tol`` that also reaches ``significance`` times the entry's
    maximum over the active grid. Every accepted detection trims the ball of
    the posed shape's circumradius plus ``margin``.

    ``resolution="first"`` is a single pass over the entries in
    descending-norm order, accepting detections as they come.
    ``resolution="best"`` (default) works in rounds: all entries are scored
    against the current residual, the detection explaining the most energy
    (``||B_j||^2 I^2``) is accepted, and its translated pattern is removed
    from the residual before the next round. A detection must explain at
    least ``explained`` of the current residual energy, which keeps
    low-energy entries from matching the leftovers of an off-grid component.
    """
    if resolution not in ("best", "first"):
        raise ValidationError(f"unknown resolution mode {resolution!r}")
    if not tol > 0:
        raise ValidationError("acceptance tolerance must be positive")
    if rule is not None and rule != A.rule:
        raise IncompatibleError("rule differs from the pattern's rule")
    _check_dictionary(A, dictionary)
    t0 = time.perf_counter()
    report = ReconstructionReport("ar", waves=[A.wave])
    if preprocess is not None:
        grid, coarse = crop_grid(preprocess, grid, workers)
        report.fields["preprocess"] = coarse.fields["s"]
        report.notes.append(f"preprocess kept {grid.active_count} nodes "
                            f"around {len(coarse.components)} coarse maxima")
    entries = list(dictionary)
    energy = np.array([e.norm ** 2 for e in entries])
    mask = grid.mask.copy()
    accepted = []

    def scores(R):
        values = np.full((len(entries),) + grid.shape, np.nan)
        if mask.any():
            pts = grid.points()[mask.ravel()]
            values[:, mask] = indicator_r_values(R, entries, pts, workers).T
        return values

    def accept(j, node, val, values):
        pos = grid.lower + grid.spacing * np.array(node)
        accepted.append((j, pos, val))
        report.fields[f"ar_{len(accepted) - 1}"] = IndicatorField(grid.with_mask(mask.copy()),
                                                                   values[j], "R")
        mask[grid.ball_mask(pos, entries[j].extent + margin)] = False
        report.active_counts.append(int(mask.sum()))
        return pos

    if resolution == "first":
        values = scores(A)
        for j in range(len(entries)):
            for _, node, val in sorted(_entry_candidates(values[j], mask, tol, significance)):
                if mask[node]:
                    accept(j, node, val, values)
    else:
        R = A
        while mask.any():
            values = scores(R)
            floor = explained * R.norm() ** 2
            pool = [(-energy[j] * val ** 2, j, node, val)
                    for j in range(len(entries))
                    for _, node, val in _entry_candidates(values[j], mask, tol, significance)
                    if energy[j] * val ** 2 >= floor]
            if not pool:
                break
            _, j, node, val = min(pool)
            pos = accept(j, node, val, values)
            R = R - translate_phase(entries[j].pattern, pos)

    explained = np.zeros_like(A.values)
    for j, pos, val in accepted:
        e = entries[j]
        report.components.append(FoundComponent(tuple(float(c) for c in pos), e.shape_id,
                                                tuple(e.euler), e.tau, abs(val - 1), "regular"))
        report.matched.append(e)
        explained = explained + translate_phase(e.pattern, pos).values
    report.residual_norms["ar"] = _relative(A, explained)
    report.notes.append(f"active nodes after trimming: {int(mask.sum())}")
    report.timing["ar"] = time.perf_counter() - t0
    return report


def _relative(A, explained):
    n = A.norm()
    return A.replace(A.values - explained).norm() / n if n > 0 else 0.0


# ---------------------------------------------------------------------------
# local re-sampling


@dataclass
class ResampleResult:
    positions: list
    small: list
    score: float
    residual_norm: float
    field: IndicatorField
    tuples_scored: int


def _score_tuples(cA, a_vals, A, cubes_c, cubes_v, tuples, E, grid, workers, chunk=64):
    """Top I_s local-maximum value and residual norm for every tuple.

    A residual below ``1e-12 ||A||`` scores 1, the largest value I_s takes.
    """
    w = A.rule.weights
    shape = grid.shape
    mask = grid.mask
    active = mask.ravel()
    scores = np.empty(len(tuples))
    norms = np.empty(len(tuples))

    def run(start):
        block = tuples[start:start + chunk]
        n = len(block)
        coeffs = np.repeat(cA[None], n, axis=0)
        resid = np.repeat(a_vals[None], n, axis=0)
        for i in range(len(cubes_c)):
            idx = block[:, i]
            coeffs -= cubes_c[i][idx]
            resid -= cubes_v[i][idx]
        n2 = np.einsum("q,tqi,tqi->t", w, resid, np.conj(resid)).real
        proj = E @ coeffs.transpose(1, 0, 2).reshape(len(w), n * 6)
        proj = proj.reshape(E.shape[0], n, 6)
        num = np.sum(np.abs(proj) ** 2, axis=2)  # (G, n)
        vals = np.full((n,) + shape, np.nan)
        tiny = n2 <= 1e-24 * max(np.vdot(a_vals, a_vals).real, 1e-300)
        safe = np.where(tiny, 1.0, n2)
        vals.reshape(n, -1)[:, active] = (num / safe[None, :]).T
        vals[tiny] = 0.0
        vals[:, ~mask] = np.nan
        is_max = strict_local_maxima(vals)
        tops = np.where(is_max, vals, -np.inf).reshape(n, -1).max(axis=1)
        tops = np.where(np.isfinite(tops), tops, 0.0)
        # I_s is undefined on a vanishing residual; a fully explained
        # pattern is the best possible outcome, so it takes the top score
        scores[start:start + n] = np.where(tiny, 1.0, tops)
        norms[start:start + n] = np.sqrt(np.clip(n2, 0, None))

    starts = range(0, len(tuples), chunk)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(run, starts))
    else:
        for s in starts:
            run(s)
    return scores, norms


def _best(scores, norms):
    top = scores.max()
    ties = np.flatnonzero(scores >= top - TIE_RTOL * max(abs(top), 1e-300))
    return int(ties[np.argmin(norms[ties])])


def _phase_matrix(A, points):
    kd = A.wave.k * (A.wave.direction[None, :] - A.rule.nodes)
    return np.exp(-1j * (points @ kd.T))


def local_resample(A: FarFieldPattern, regular, patterns, config: ResampleConfig,
                   grid: SamplingGrid, rule=None, threshold_frac: float = S_THRESHOLD,
                   min_value: float = SMALL_MIN_VALUE, min_separation: float | None = None,
                   margin: float = 0.0, refine: bool = True, workers: int = 1) -> ResampleResult:
    """Fine-tune regular positions and expose small components in the residual.

    ``regular`` holds ``(position, extent)`` pairs and ``patterns`` the
    matching un-translated far fields on ``A``'s wave. Every candidate tuple
    of positions from the per-component fine cubes yields the residual
    ``A - sum_j exp(i k (d - xhat).z_j) B_j``; its score is the highest
    strict local maximum of I_s on ``grid`` with the regular footprints
    masked. The best-scoring tuple wins, ties going to the smaller residual.
    """
    if not regular:
        raise ValidationError("local re-sampling needs at least one regular component")
    if len(patterns) != len(regular):
        raise ValidationError("one reference pattern per regular component is required")
    if rule is not None and rule != A.rule:
        raise IncompatibleError("rule differs from the pattern's rule")
    for p in patterns:
        if p.wave != A.wave or p.rule != A.rule:
            raise IncompatibleError("reference pattern does not match the data's wave and rule")
    if min_separation is None:
        min_separation = _wavelength(A) / 2

    cubes = [SamplingGrid.cube(pos, config.side, config.subdivisions).points()
             for pos, _ in regular]
    counts = [len(c) for c in cubes]
    total = math.prod(counts)
    greedy = config.greedy
    if total > config.cap and not greedy:
        raise ValidationError(
            f"{total} candidate tuples exceed the cap of {config.cap}; "
            "use coarser cubes or greedy mode")

    keep = np.ones(grid.shape, dtype=bool)
    for pos, extent in regular:
        keep &= ~grid.ball_mask(pos, extent + margin + config.side * math.sqrt(3) / 2)
    sgrid = grid.restrict_to(keep)
    if sgrid.active_count == 0:
        raise ValidationError("no sampling nodes left after masking the regular components")

    cA = s_coefficients(A)
    cubes_c, cubes_v = [], []
    for pts, B in zip(cubes, patterns):
        ph = np.exp(1j * A.wave.k * ((A.wave.direction - A.rule.nodes) @ pts.T)).T  # (n, Q)
        cubes_c.append(ph[:, :, None] * s_coefficients(B)[None])
        cubes_v.append(ph[:, :, None] * B.values[None])
    E = _phase_matrix(A, sgrid.active_points())

    def score(tuples):
        return _score_tuples(cA, A.values, A, cubes_c, cubes_v, tuples, E, sgrid, workers)

    if not greedy:
        tuples = np.array(list(itertools.product(*(range(n) for n in counts))), dtype=np.intp)
        scores, norms = score(tuples)
        best = tuples[_best(scores, norms)]
        scored = len(tuples)
    else:
        # coordinate search starting from the cube centres
        best = np.array([n // 2 for n in counts], dtype=np.intp)
        scored = 0
        for _ in range(config.sweeps):
            for i, n in enumerate(counts):
                tuples = np.repeat(best[None], n, axis=0)
                tuples[:, i] = np.arange(n)
                scores, norms = score(tuples)
                best = tuples[_best(scores, norms)]
                scored += n
    s_best, n_best = score(best[None])

    positions = [tuple(float(c) for c in cubes[i][best[i]]) for i in range(len(regular))]
    explained = sum(translate_phase(B, z).values for B, z in zip(patterns, positions))
    R = A.replace(A.values - explained)
    small = []
    if R.norm() > 1e-12 * A.norm():
        fld = evaluate_grid("s", R, sgrid, workers=workers)
        for p in find_peaks(fld, threshold_frac, min_separation):
            if p.value < min_value:
                continue
            pos, val = p.position, p.value
            if refine:
                pos, val = _refine_small(R, pos, sgrid.spacing, config.spacing, workers)
            small.append(FoundComponent(pos, "small", None, None, val, "small"))
    else:
        fld = IndicatorField(sgrid, np.where(sgrid.mask, 0.0, np.nan), "S")
    return ResampleResult(positions, small, float(s_best[0]), float(n_best[0]) / A.norm(),
                          fld, scored)


def _refine_small(R, position, coarse, fine, workers):
    """Re-locate an I_s maximum on a finer local lattice."""
    if fine >= coarse:
        fld = evaluate_grid("s", R, SamplingGrid(position, coarse, (1, 1, 1), np.ones((1, 1, 1))),
                            workers=workers)
        return position, fld.max()
    n = min(int(math.ceil(coarse / fine)), REFINE_MAX)
    g = SamplingGrid.cube(position, 2 * coarse, 2 * n)
    fld = evaluate_grid("s", R, g, workers=workers)
    return tuple(float(c) for c in fld.argmax()), fld.max()


# ---------------------------------------------------------------------------
# Scheme M and enhanced Scheme M


def _small_stage(report, A_small, regular_entries, ar_components, config, small_grid,
                 threshold_frac, min_value, margin, workers, stage):
    t0 = time.perf_counter()
    regular = [(c.position, e.extent) for c, e in zip(ar_components, regular_entries)]
    patterns = [e.pattern for e in regular_entries]
    res = local_resample(A_small, regular, patterns, config, small_grid,
                         threshold_frac=threshold_frac, min_value=min_value, margin=margin,
                         workers=workers)
    comps = [FoundComponent(z, c.shape_id, c.euler, c.tau, c.score, "regular")
             for z, c in zip(res.positions, ar_components)]
    report.components = comps + res.small
    report.residual_norms[stage] = res.residual_norm
    report.fields[stage] = res.field
    report.notes.append(f"{res.tuples_scored} candidate tuples scored, best score {res.score:.6g}")
    report.timing[stage] = time.perf_counter() - t0
    return report


def _fallback(report, A_small, small_grid, threshold_frac, workers):
    s = run_scheme_s(A_small, small_grid, threshold_frac=threshold_frac, workers=workers)
    report.components = s.components
    report.fields["s"] = s.fields["s"]
    report.timing["s"] = s.timing["s"]
    report.notes.append("no regular component accepted; fell back to Scheme S")
    return report


def run_scheme_m(A: FarFieldPattern, dictionary, grids, config: ResampleConfig | None = None,
                 rule=None, tol: float = AR_TOL, significance: float = AR_SIGNIFICANCE,
                 threshold_frac: float = S_THRESHOLD, min_value: float = SMALL_MIN_VALUE,
                 margin: float = 0.0, preprocess: Preprocess | None = None,
                 explained: float = AR_EXPLAINED, workers: int = 1) -> ReconstructionReport:
    """Scheme AR for the regular components, then local re-sampling.

    ``grids`` is ``(ar_grid, small_grid)`` or a single grid used for both.
    """
    ar_grid, small_grid = _two_grids(grids)
    config = config or ResampleConfig()
    report = run_scheme_ar(A, dictionary, ar_grid, rule, tol, significance, margin,
                           preprocess=preprocess, explained=explained, workers=workers)
    report.scheme = "m"
    if not report.components:
        return _fallback(report, A, small_grid, threshold_frac, workers)
    return _small_stage(report, A, report.matched, report.components, config, small_grid,
                        threshold_frac, min_value, margin, workers, "resample")


def run_enhanced_m(A_k1: FarFieldPattern, A_k2: FarFieldPattern, dict_k1, dict_k2, grids,
                   config: ResampleConfig | None = None, rule=None, tol: float = AR_TOL,
                   significance: float = AR_SIGNIFICANCE, threshold_frac: float = S_THRESHOLD,
                   min_value: float = SMALL_MIN_VALUE, margin: float = 0.0,
                   preprocess: Preprocess | None = None, explained: float = AR_EXPLAINED,
                   workers: int = 1) -> ReconstructionReport:
    """Scheme AR on the first dataset, re-sampling on the second.

    Both datasets must share the incident direction and polarization; the
    wavenumbers may come in either order.
    """
    if not A_k1.wave.same_direction(A_k2.wave):
        raise ValidationError("both datasets must share incident direction and polarization")
    _check_dictionary(A_k2, dict_k2)
    ar_grid, small_grid = _two_grids(grids)
    config = config or ResampleConfig()
    report = run_scheme_ar(A_k1, dict_k1, ar_grid, rule, tol, significance, margin,
                           preprocess=preprocess, explained=explained, workers=workers)
    report.scheme = "enhanced-m"
    report.waves = [A_k1.wave, A_k2.wave]
    if not report.components:
        return _fallback(report, A_k2, small_grid, threshold_frac, workers)
    second = []
    for e in report.matched:
        match = dict_k2.find(e.shape_id, e.euler, e.tau)
        if match is None:
            raise IncompatibleError(f"second dictionary has no entry for {e.label()}")
        second.append(match)
    return _small_stage(report, A_k2, second, report.components, config, small_grid,
                        threshold_frac, min_value, margin, workers, "resample")


def _two_grids(grids):
    if isinstance(grids, SamplingGrid):
        return grids, grids
    ar_grid, small_grid = grids
    return ar_grid, small_grid
