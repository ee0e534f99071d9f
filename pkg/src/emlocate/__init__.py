"""Locating multiple multi-scale electromagnetic scatterers from far-field data.

Direct sampling schemes (S for small, AR for regular-size components with an
augmented reference dictionary, M and enhanced M for mixed scenes) together
with the far-field oracle used to synthesize data.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    EmlocateError, IncompatibleError, NumericalError, ParseError, TruncationError,
    ValidationError,
)
from .sph import QuadratureRule, lebedev_rule, t2_inner, t2_norm  # noqa: E402
from .farfield import (  # noqa: E402
    FarFieldPattern, IncidentWave, apply_noise, read_pattern, translate_phase, write_pattern,
)
from .forward import (  # noqa: E402
    Material, Pose, Scene, SceneComponent, eval_far_field, make_shape, make_sphere,
    scene_far_field,
)
from .dictionary import Dictionary, build_dictionary, read_dictionary, write_dictionary  # noqa: E402
from .indicators import (  # noqa: E402
    SamplingGrid, evaluate_grid, find_peaks, indicator_r, indicator_s, trim,
)
from .schemes import (  # noqa: E402
    ReconstructionReport, ResampleConfig, run_enhanced_m, run_scheme_ar, run_scheme_m,
    run_scheme_s,
)

__all__ = [
    "EmlocateError", "IncompatibleError", "NumericalError", "ParseError", "TruncationError",
    "ValidationError", "QuadratureRule", "lebedev_rule", "t2_inner", "t2_norm",
    "FarFieldPattern", "IncidentWave", "apply_noise", "read_pattern", "translate_phase",
    "write_pattern", "Material", "Pose", "Scene", "SceneComponent", "eval_far_field",
    "make_shape", "make_sphere", "scene_far_field", "Dictionary", "build_dictionary",
    "read_dictionary", "write_dictionary", "SamplingGrid", "evaluate_grid", "find_peaks",
    "indicator_r", "indicator_s", "trim", "ReconstructionReport", "ResampleConfig",
    "run_enhanced_m", "run_scheme_ar", "run_scheme_m", "run_scheme_s",
]
