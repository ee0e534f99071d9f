import json
import math

import numpy as np
import pytest

from emlocate.dictionary import build_dictionary
from emlocate.errors import IncompatibleError, NumericalError, ValidationError
from emlocate.farfield import FarFieldPattern, IncidentWave, apply_noise, translate_phase
from emlocate.forward import (
    Material, Pose, Scene, eval_far_field, in_plane_euler, make_shape, make_sphere,
    scene_far_field,
)
from emlocate.indicators import SamplingGrid
from emlocate.schemes import (
    ResampleConfig, local_resample, run_enhanced_m, run_scheme_ar, run_scheme_m, run_scheme_s,
)

LAMBDA = 2 * math.pi
H = round(LAMBDA / 10, 1)


def _ball(rho):
    return make_sphere(rho, Material.medium(4.0))


def _close(a, b, tol):
    return np.max(np.abs(np.asarray(a) - np.asarray(b))) <= tol


# -- Scheme S ----------------------------------------------------------------

def test_scheme_s_zero_data(rule, wave):
    zero = FarFieldPattern(np.zeros((len(rule), 3)), wave, rule)
    with pytest.raises(NumericalError):
        run_scheme_s(zero, SamplingGrid.from_box((0, 0, 0), (1, 1, 1), 0.5))


def test_scheme_s_single_sphere(rule, wave):
    z0 = (1.0, -1.0, 2.0)
    A = eval_far_field(_ball(0.1), Pose(z0), wave, rule)
    rep = run_scheme_s(A, SamplingGrid.from_box((-3, -3, -3), (3, 3, 3), H))
    assert len(rep.components) == 1
    c = rep.components[0]
    assert c.shape_id == "small" and _close(c.position, z0, H) and 0 < c.score <= 1


def test_scheme_s_three_noisy_spheres(rule, wave):
    # spacing of about four wavelengths keeps dipole cross-talk below a cell
    zs = [(12.0, 0.0, 0.0), (-12.0, 0.0, 0.0), (0.0, 12.0, 0.0)]
    A = scene_far_field(Scene([(_ball(0.1), Pose(z)) for z in zs]), wave, rule)
    A = apply_noise(A, 0.03, 2024)
    rep = run_scheme_s(A, SamplingGrid.from_box((-14, -2, -2), (14, 14, 2), H))
    assert len(rep.components) == 3
    for z in zs:
        assert any(_close(c.position, z, H) for c in rep.components)


# -- Scheme AR ---------------------------------------------------------------

def test_ar_single_matched_component(pk_dictionary, rule, wave):
    grid = SamplingGrid.from_box((-3, -3, -3), (3, 3, 3), 0.5)
    z0 = (1.0, -0.5, 1.5)  # a grid node
    e = pk_dictionary.find("peanut-like", in_plane_euler(math.pi / 4), 1.0)
    A = eval_far_field(e.model, Pose(z0, e.euler, e.tau), wave, rule)
    rep = run_scheme_ar(A, pk_dictionary, grid)
    assert len(rep.components) == 1
    c = rep.components[0]
    assert (c.shape_id, c.euler, c.tau) == (e.shape_id, e.euler, e.tau)
    assert _close(c.position, z0, 1e-12) and c.score <= 1e-8
    assert rep.residual_norms["ar"] <= 1e-8


def test_ar_rejects_foreign_dictionary(pk_dictionary, rule):
    other = IncidentWave(2.0, (1, 0, 0), (0, 0, 1))
    A = eval_far_field(make_shape("kite"), Pose(), other, rule)
    with pytest.raises(IncompatibleError):
        run_scheme_ar(A, pk_dictionary, SamplingGrid.from_box((0, 0, 0), (1, 1, 1), 0.5))


def test_ar_argument_validation(pk_dictionary, rule, wave):
    A = eval_far_field(make_shape("kite"), Pose(), wave, rule)
    g = SamplingGrid.from_box((0, 0, 0), (1, 1, 1), 0.5)
    with pytest.raises(ValidationError):
        run_scheme_ar(A, pk_dictionary, g, resolution="fastest")
    with pytest.raises(ValidationError):
        run_scheme_ar(A, pk_dictionary, g, tol=0.0)


@pytest.fixture(scope="module")
def two_kites(rule, wave):
    scene = Scene([(make_shape("kite"), Pose((3.0, 0.0, 0.0), in_plane_euler(math.pi / 4))),
                   (make_shape("peanut"), Pose((-3.0, 0.0, 0.0), in_plane_euler(3 * math.pi / 4)))])
    return scene_far_field(scene, wave, rule)


def test_ar_trimming_is_monotone(two_kites, pk_dictionary):
    grid = SamplingGrid.from_box((-5, -2, -2), (5, 2, 2), 0.5)
    rep = run_scheme_ar(two_kites, pk_dictionary, grid)
    counts = [grid.active_count] + rep.active_counts
    assert len(rep.components) == 2
    assert all(a > b for a, b in zip(counts, counts[1:]))
    labels = {(c.shape_id, c.euler) for c in rep.components}
    assert labels == {("kite-like", in_plane_euler(math.pi / 4)),
                      ("peanut-like", in_plane_euler(3 * math.pi / 4))}


def test_ar_is_deterministic(two_kites, pk_dictionary):
    grid = SamplingGrid.from_box((-5, -2, -2), (5, 2, 2), 0.5)
    a = run_scheme_ar(two_kites, pk_dictionary, grid)
    b = run_scheme_ar(two_kites, pk_dictionary, grid, workers=4)
    assert a.to_json() == b.to_json()


def test_ar_off_grid_orientation_improves_with_finer_dictionary(rule, wave):
    gaps = []
    for h in (math.pi / 4, math.pi / 8):
        D = build_dictionary(["kite"], h, [1.0], wave, rule)
        # half a step away from the two nearest dictionary orientations, 0 and h
        A = eval_far_field(make_shape("kite"), Pose((0.5, 0.0, 0.0), in_plane_euler(h / 2)),
                           wave, rule)
        rep = run_scheme_ar(A, D, SamplingGrid.from_box((-1, -1, -1), (1, 1, 1), 0.25))
        assert len(rep.components) >= 1
        best = min(rep.components, key=lambda c: c.score)
        assert best.euler in (in_plane_euler(0.0), in_plane_euler(h))
        assert _close(best.position, (0.5, 0, 0), 0.25)
        gaps.append(best.score)
    assert gaps[1] < gaps[0]


# -- local re-sampling -------------------------------------------------------

@pytest.fixture(scope="module")
def kb1(rule, wave):
    """Regular kite (tau = 2) below a small ball, at k = 1."""
    kite, ball = make_shape("kite"), _ball(0.5)
    zr, zs = (0.0, 0.0, -4.0), (0.0, 0.0, 5.0)
    scene = Scene([(kite, Pose(zr, tau=2.0)), (ball, Pose(zs))])
    A = scene_far_field(scene, wave, rule)
    B = eval_far_field(kite, Pose(tau=2.0), wave, rule)
    return A, B, scene.components[0].extent, np.array(zr), np.array(zs)


def test_exact_candidate_cancels(kb1, rule, wave):
    A, B, _, zr, zs = kb1
    R = A - translate_phase(B, zr)
    small = eval_far_field(_ball(0.5), Pose(tuple(zs)), wave, rule)
    assert (R - small).norm() <= 1e-12 * A.norm()


def test_exact_candidate_exposes_small_sphere(kb1):
    A, B, ext, zr, zs = kb1
    grid = SamplingGrid.from_box((-2, -2, -8), (2, 2, 8), H)
    pinned = ResampleConfig(subdivisions=2, side=1e-9)
    res = local_resample(A, [(tuple(zr), ext)], [B], pinned, grid)
    assert len(res.small) == 1 and _close(res.small[0].position, zs, H)
    assert _close(res.positions[0], zr, 1e-9)


def test_perturbed_candidate_degrades_peak(kb1):
    A, B, ext, zr, _ = kb1
    grid = SamplingGrid.from_box((-2, -2, -8), (2, 2, 8), H)
    pinned = ResampleConfig(subdivisions=2, side=1e-9)
    exact = local_resample(A, [(tuple(zr), ext)], [B], pinned, grid).score
    moved = local_resample(A, [(tuple(zr + (0.1, 0, 0)), ext)], [B], pinned, grid).score
    assert moved <= 0.5 * exact


def test_resample_finds_true_position_in_cube(kb1):
    A, B, ext, zr, zs = kb1
    grid = SamplingGrid.from_box((-2, -2, -8), (2, 2, 8), H)
    cfg = ResampleConfig(subdivisions=4, side=0.4)
    res = local_resample(A, [(tuple(zr + (0.1, -0.1, 0.2)), ext)], [B], cfg, grid)
    assert _close(res.positions[0], zr, 1e-12)
    assert res.tuples_scored == 125
    ball = eval_far_field(_ball(0.5), Pose(tuple(zs)), A.wave, A.rule)
    assert res.residual_norm == pytest.approx(ball.norm() / A.norm(), rel=1e-10)


def test_resample_preconditions(kb1):
    A, B, ext, zr, _ = kb1
    grid = SamplingGrid.from_box((-2, -2, -8), (2, 2, 8), H)
    with pytest.raises(ValidationError):
        local_resample(A, [], [], ResampleConfig(), grid)
    big = ResampleConfig(subdivisions=10, side=1.0, cap=1000)
    with pytest.raises(ValidationError, match="greedy"):
        local_resample(A, [(tuple(zr), ext)], [B], big, grid)
    with pytest.raises(ValidationError):
        ResampleConfig(subdivisions=1)
    with pytest.raises(ValidationError):
        ResampleConfig(side=0)


def test_greedy_mode_beyond_cap(kb1):
    A, B, ext, zr, zs = kb1
    grid = SamplingGrid.from_box((-2, -2, -8), (2, 2, 8), H)
    cfg = ResampleConfig(subdivisions=4, side=0.4, cap=10, greedy=True)
    res = local_resample(A, [(tuple(zr + (0.1, -0.1, 0.2)), ext)], [B], cfg, grid)
    assert res.tuples_scored == cfg.sweeps * 125
    assert _close(res.positions[0], zr, 1e-12)


def test_selected_tuple_has_smallest_residual_among_ties(kb1):
    """Among tuples whose top peak ties the winner's, none has a smaller residual."""
    A, B, ext, zr, _ = kb1
    grid = SamplingGrid.from_box((-2, -2, -8), (2, 2, 8), H)
    cfg = ResampleConfig(subdivisions=2, side=0.2)
    best = local_resample(A, [(tuple(zr), ext)], [B], cfg, grid)
    for p in SamplingGrid.cube(tuple(zr), 0.2, 2).points():
        pinned = local_resample(A, [(tuple(p), ext)], [B], ResampleConfig(2, 1e-9), grid)
        assert pinned.score <= best.score * (1 + 1e-9)
        if pinned.score >= best.score * (1 - 1e-9):
            assert best.residual_norm <= pinned.residual_norm * (1 + 1e-6)


# -- Scheme M ----------------------------------------------------------------

@pytest.fixture(scope="module")
def kb_dictionary(rule, wave):
    return build_dictionary(["kite", "peanut"], math.pi / 4, [0.5, 1.0, 2.0], wave, rule)


def _kb_grids():
    g = SamplingGrid.from_box((-2, -2, -8), (2, 2, 12), H)
    return g, g


def test_ar_ignores_leftovers_of_off_grid_component(kb1, kb_dictionary):
    """Low-energy entries must not match what an off-grid subtraction leaves."""
    A = kb1[0]
    grid = _kb_grids()[0]
    assert len(run_scheme_ar(A, kb_dictionary, grid).components) == 1
    loose = run_scheme_ar(A, kb_dictionary, grid, explained=0.0)
    assert len(loose.components) > 1


def test_scheme_m_regular_and_small(kb1, kb_dictionary):
    A, _, _, zr, zs = kb1
    rep = run_scheme_m(A, kb_dictionary, _kb_grids())
    assert len(rep.regular) == 1 and len(rep.small) == 1
    r = rep.regular[0]
    assert (r.shape_id, r.euler, r.tau) == ("kite-like", (0.0, 0.0, 0.0), 2.0)
    assert _close(r.position, zr, 0.1 + 1e-9)
    assert _close(rep.small[0].position, zs, 0.1 + 1e-9)
    assert set(rep.residual_norms) == {"ar", "resample"}


def test_scheme_m_without_small_component(rule, wave, kb_dictionary):
    e = kb_dictionary.find("kite-like", in_plane_euler(math.pi / 2), 2.0)
    A = eval_far_field(e.model, Pose((0.3, -0.2, -4.1), e.euler, e.tau), wave, rule)
    ar = run_scheme_ar(A, kb_dictionary, _kb_grids()[0])
    m = run_scheme_m(A, kb_dictionary, _kb_grids())
    assert m.small == []
    assert [(c.shape_id, c.euler, c.tau) for c in m.regular] == \
        [(c.shape_id, c.euler, c.tau) for c in ar.regular]


def test_scheme_m_falls_back_to_scheme_s(rule, wave, kb_dictionary):
    zs = [(0.0, 0.0, -3.0), (0.0, 0.0, 6.0)]
    A = scene_far_field(Scene([(_ball(0.1), Pose(z)) for z in zs]), wave, rule)
    rep = run_scheme_m(A, kb_dictionary, _kb_grids())
    assert rep.regular == [] and len(rep.small) == 2
    assert any("fell back" in n for n in rep.notes)
    for z in zs:
        assert any(_close(c.position, z, H) for c in rep.small)


def test_scheme_m_report_is_stable(kb1, kb_dictionary):
    A = kb1[0]
    a = run_scheme_m(A, kb_dictionary, _kb_grids())
    b = run_scheme_m(A, kb_dictionary, _kb_grids())
    assert a.to_json() == b.to_json()
    d = json.loads(a.to_json())
    assert list(d) == sorted(d) and "timing" not in d
    assert "timing" in a.to_dict(include_timing=True)
    assert a.to_text().startswith("scheme: m\n")


# -- Enhanced Scheme M -------------------------------------------------------

def test_enhanced_requires_same_direction(kb1, kb_dictionary, rule):
    A = kb1[0]
    other = IncidentWave(2.0, (0, 1, 0), (0, 0, 1))
    A2 = eval_far_field(make_shape("kite"), Pose(), other, rule)
    with pytest.raises(ValidationError):
        run_enhanced_m(A, A2, kb_dictionary, kb_dictionary, _kb_grids())


def test_enhanced_with_equal_wavenumbers_is_scheme_m(kb1, kb_dictionary):
    A = kb1[0]
    m = run_scheme_m(A, kb_dictionary, _kb_grids()).to_dict()
    e = run_enhanced_m(A, A, kb_dictionary, kb_dictionary, _kb_grids()).to_dict()
    assert e["scheme"] == "enhanced-m"
    assert e["components"] == m["components"]
    assert e["residual_norms"] == m["residual_norms"]
