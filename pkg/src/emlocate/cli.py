"""Command-line interface: ``emlocate forward|dict|run``.

Scene files hold one component per line::

    # shape  material        x    y    z   theta  phi  psi   tau
    kite     eps=4           2    2    2   0      0    pi/4  1
    ball     pec             0    0    9   0      0    0     0.5

Angles accept plain numbers or multiples of pi (``pi/4``, ``3*pi/4``).
Exit codes: 0 success, 1 invalid input, 2 I/O or parse error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import math
import os
import re
import sys

from . import __version__
from .dictionary import build_dictionary, read_dictionary, verify_distinct, write_dictionary
from .errors import EmlocateError, ParseError, ValidationError
from .farfield import IncidentWave, apply_noise, read_pattern, write_pattern
from .forward import Material, Pose, Scene, SceneComponent, make_shape, scene_far_field
from .indicators import SamplingGrid, write_field
from .schemes import (
    AR_EXPLAINED, AR_SIGNIFICANCE, AR_TOL, S_THRESHOLD, SMALL_MIN_VALUE, Preprocess, ResampleConfig,
    run_enhanced_m, run_scheme_ar, run_scheme_m, run_scheme_s,
)
from .sph import lebedev_rule

_PI_EXPR = re.compile(r"^([+-]?[0-9.]*(?:e[+-]?\d+)?)\*?pi(?:/([0-9.]+))?$")


def parse_number(text: str) -> float:
    """A float, or a multiple/fraction of pi such as ``3*pi/4``."""
    s = text.strip().lower()
    try:
        return float(s)
    except ValueError:
        pass
    m = _PI_EXPR.match(s)
    if not m:
        raise ValueError(f"not a number: {text!r}")
    coef = m.group(1)
    coef = 1.0 if coef in ("", "+") else -1.0 if coef == "-" else float(coef)
    den = float(m.group(2)) if m.group(2) else 1.0
    return coef * math.pi / den


def _number(text):
    try:
        return parse_number(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _number_list(text):
    return [_number(t) for t in text.split(",") if t.strip()]


def parse_scene(text: str, source=None) -> Scene:
    comps = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 9:
            raise ParseError(f"expected 9 fields (shape material x y z theta phi psi tau), "
                             f"found {len(parts)}", lineno, source)
        try:
            nums = [parse_number(p) for p in parts[2:]]
        except ValueError as exc:
            raise ParseError(str(exc), lineno, source) from None
        try:
            model = make_shape(parts[0], Material.parse(parts[1]))
            pose = Pose(tuple(nums[:3]), tuple(nums[3:6]), nums[6])
        except ValidationError as exc:
            raise ParseError(str(exc), lineno, source) from None
        comps.append(SceneComponent(model, pose))
    if not comps:
        raise ParseError("scene has no components", source=source)
    return Scene(tuple(comps))


def read_scene(path) -> Scene:
    if not os.path.exists(path):
        raise FileNotFoundError(f"file not found: {path}")
    with open(path) as fh:
        return parse_scene(fh.read(), source=str(path))


# ---------------------------------------------------------------------------
# argument groups


def _add_wave(p, k_required=True):
    p.add_argument("--k", type=_number, required=k_required, help="wavenumber")
    p.add_argument("--d", type=_number, nargs=3, default=[1.0, 0.0, 0.0],
                   metavar=("D1", "D2", "D3"), help="incident direction (default 1 0 0)")
    p.add_argument("--p", type=_number, nargs=3, default=[0.0, 0.0, 1.0],
                   metavar=("P1", "P2", "P3"), help="polarization (default 0 0 1)")
    p.add_argument("--nodes", type=int, default=590, help="Lebedev rule size (default 590)")


def _add_common(p):
    p.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")


def _wave(args):
    return IncidentWave(args.k, tuple(args.d), tuple(args.p))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emlocate",
                                     description="Locate multiple multi-scale EM scatterers "
                                                 "from far-field data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    f = sub.add_parser("forward", help="synthesize the far field of a scene")
    f.add_argument("scene", help="scene description file")
    _add_wave(f)
    f.add_argument("--noise", type=float, default=0.0, help="relative noise level delta")
    f.add_argument("--seed", type=int, default=0, help="noise seed")
    f.add_argument("-o", "--out", required=True, help="output pattern file")
    _add_common(f)

    d = sub.add_parser("dict", help="build a reference dictionary")
    d.add_argument("--shapes", required=True, help="comma-separated shape ids")
    d.add_argument("--material", default="eps=4", help="material token (default eps=4)")
    d.add_argument("--angle-step", type=_number, default=math.pi / 4,
                   help="orientation step, e.g. pi/4 (default)")
    d.add_argument("--grid", choices=["in-plane", "full"], default="in-plane")
    d.add_argument("--scales", type=_number_list, default=[0.2, 0.5, 1.0, 2.0, 5.0],
                   help="comma-separated scale set (default 0.2,0.5,1,2,5)")
    d.add_argument("--delta", type=float, default=0.01, help="distinctness threshold")
    _add_wave(d)
    d.add_argument("-o", "--out", required=True, help="output directory")
    _add_common(d)

    r = sub.add_parser("run", help="run a locating scheme")
    r.add_argument("scheme", choices=["s", "ar", "m", "enhanced-m"])
    r.add_argument("--data", required=True, help="measured pattern file")
    r.add_argument("--data2", help="second pattern file (enhanced-m)")
    r.add_argument("--dict", dest="dictionary", help="dictionary directory")
    r.add_argument("--dict2", help="second dictionary directory (enhanced-m)")
    r.add_argument("--box", type=_number, nargs=6, required=True,
                   metavar=("X0", "Y0", "Z0", "X1", "Y1", "Z1"), help="sampling box corners")
    r.add_argument("--spacing", type=float, help="grid spacing (default wavelength/10)")
    r.add_argument("--small-box", type=_number, nargs=6,
                   metavar=("X0", "Y0", "Z0", "X1", "Y1", "Z1"),
                   help="sampling box for the small-component stage (default --box)")
    r.add_argument("--small-spacing", type=float,
                   help="spacing for the small-component stage (default wavelength/10)")
    r.add_argument("--threshold", type=float, default=S_THRESHOLD,
                   help="Scheme S peak threshold fraction")
    r.add_argument("--min-value", type=float, default=SMALL_MIN_VALUE,
                   help="smallest I_s accepted for a small component after re-sampling")
    r.add_argument("--tol", type=float, default=AR_TOL, help="AR acceptance |I-1| <= tol")
    r.add_argument("--significance", type=float, default=AR_SIGNIFICANCE,
                   help="fraction of an entry's grid maximum a detection must reach")
    r.add_argument("--explained", type=float, default=AR_EXPLAINED,
                   help="share of residual energy a detection must explain (best mode)")
    r.add_argument("--margin", type=float, default=0.0, help="extra trimming radius")
    r.add_argument("--resolution", choices=["best", "first"], default="best")
    r.add_argument("--preprocess", help="coarse pattern file for cropping the AR region")
    r.add_argument("--preprocess-halfwidth", type=float, default=1.5)
    r.add_argument("--subdivisions", type=int, default=10, help="re-sampling cube subdivisions")
    r.add_argument("--cube-side", type=float, default=1.0, help="re-sampling cube side")
    r.add_argument("--cap", type=int, default=10 ** 6, help="candidate tuple cap")
    r.add_argument("--greedy", action="store_true", help="greedy candidate search")
    r.add_argument("--noise", type=float, default=0.0, help="noise applied to the data")
    r.add_argument("--seed", type=int, default=0, help="noise seed")
    r.add_argument("--format", choices=["json", "text"], default="json")
    r.add_argument("-o", "--out", required=True, help="output directory")
    _add_common(r)
    return parser


# ---------------------------------------------------------------------------
# commands


def cmd_forward(args) -> int:
    scene = read_scene(args.scene)
    wave = _wave(args)
    rule = lebedev_rule(args.nodes)
    A = scene_far_field(scene, wave, rule)
    A = apply_noise(A, args.noise, args.seed)
    write_pattern(A, args.out)
    print(f"wrote {args.out}: {len(rule)} nodes, norm {A.norm():.12g}")
    return 0


def cmd_dict(args) -> int:
    wave = _wave(args)
    rule = lebedev_rule(args.nodes)
    material = Material.parse(args.material)
    shapes = [make_shape(s, material) for s in args.shapes.split(",") if s.strip()]
    D = build_dictionary(shapes, args.angle_step, args.scales, wave, rule, args.grid)
    write_dictionary(D, args.out)
    close = verify_distinct(D, args.delta)
    print(f"wrote {len(D)} entries to {args.out}")
    if close:
        for i, j, dist in close:
            print(f"  not distinct: [{i}] {D[i].label()} vs [{j}] {D[j].label()} "
                  f"(relative distance {dist:.3g})")
    else:
        print(f"all entries pairwise distinct at delta={args.delta:g}")
    return 0


def _grid(box, spacing, wave):
    h = spacing if spacing is not None else 2 * math.pi / wave.k / 10
    return SamplingGrid.from_box(box[:3], box[3:], h)


def _load_data(path, args):
    A = read_pattern(path)
    return apply_noise(A, args.noise, args.seed)


def cmd_run(args, parser) -> int:
    if args.scheme == "enhanced-m" and (args.data2 is None or args.dict2 is None):
        parser.print_usage(sys.stderr)
        print("emlocate: error: enhanced-m needs --data2 and --dict2", file=sys.stderr)
        return 1
    if args.scheme in ("ar", "m", "enhanced-m") and args.dictionary is None:
        parser.print_usage(sys.stderr)
        print(f"emlocate: error: scheme {args.scheme} needs --dict", file=sys.stderr)
        return 1
    workers = max(1, args.threads)
    A = _load_data(args.data, args)
    grid = _grid(args.box, args.spacing, A.wave)
    small_wave = A.wave
    A2 = None
    if args.scheme == "enhanced-m":
        # independent noise realization for the second measurement
        A2 = read_pattern(args.data2)
        A2 = apply_noise(A2, args.noise, args.seed + 1)
        small_wave = A2.wave
    small_grid = _grid(args.small_box or args.box, args.small_spacing, small_wave)
    pre = None
    if args.preprocess:
        Ac = _load_data(args.preprocess, args)
        pre = Preprocess(Ac, _grid(args.box, None, Ac.wave), args.preprocess_halfwidth)
    config = ResampleConfig(args.subdivisions, args.cube_side, args.cap, args.greedy)

    if args.scheme == "s":
        report = run_scheme_s(A, grid, threshold_frac=args.threshold, workers=workers)
    elif args.scheme == "ar":
        report = run_scheme_ar(A, read_dictionary(args.dictionary), grid, tol=args.tol,
                               significance=args.significance, margin=args.margin,
                               resolution=args.resolution, preprocess=pre,
                               explained=args.explained, workers=workers)
    elif args.scheme == "m":
        report = run_scheme_m(A, read_dictionary(args.dictionary), (grid, small_grid), config,
                              tol=args.tol, significance=args.significance,
                              threshold_frac=args.threshold, min_value=args.min_value,
                              margin=args.margin, preprocess=pre,
                              explained=args.explained, workers=workers)
    else:
        report = run_enhanced_m(A, A2, read_dictionary(args.dictionary),
                                read_dictionary(args.dict2), (grid, small_grid), config,
                                tol=args.tol, significance=args.significance,
                                threshold_frac=args.threshold, min_value=args.min_value,
                                margin=args.margin, preprocess=pre,
                              explained=args.explained, workers=workers)

    os.makedirs(args.out, exist_ok=True)
    for name, fld in sorted(report.fields.items()):
        write_field(fld, os.path.join(args.out, f"field_{name}.txt"))
    ext = "json" if args.format == "json" else "txt"
    path = os.path.join(args.out, f"report.{ext}")
    with open(path, "w") as fh:
        fh.write(report.to_json() if args.format == "json" else report.to_text())
    sys.stdout.write(report.to_text(include_timing=True))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse reports bad usage with status 2; here that is invalid input
        return 1 if exc.code == 2 else int(exc.code or 0)
    try:
        if args.command == "forward":
            return cmd_forward(args)
        if args.command == "dict":
            return cmd_dict(args)
        return cmd_run(args, parser)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"emlocate: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"emlocate: error: {exc}", file=sys.stderr)
        return 2
    except EmlocateError as exc:
        print(f"emlocate: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
