"""henonren: numerical renormalization toolkit for Henon-like maps."""

from .geometry import Interval, Rect
from .maps import (
    ChartConjugatedMap,
    Embedded1D,
    HenonMap,
    LinearMap,
    OrbitCocycle,
    embed_1d,
    evaluate,
    jacobian,
    orbit_cocycle,
    profile_1d,
    thinness,
)
from .unimodal import (
    KneadingFlags,
    NormalizationAffine,
    RenType,
    UnimodalMap,
    doubling,
    full_family_bisect,
    kneading_flags,
    nonlinearity_K,
    quadratic_map,
    ren_type,
    renorm_1d,
    renormalizable,
)

__version__ = "0.1.0"
