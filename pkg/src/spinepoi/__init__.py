"""spinepoi: per-vertebra coordinate frames and sub-voxel anatomical
landmarks from vertebra subregion label volumes."""

from .anatomy import (
    CenterlineSpline,
    SpineInstance,
    Subregion,
    VertebraInstance,
    assemble_spine,
    center_of_mass,
    craniocaudal_axis,
    fit_centerline,
)
from .errors import SpinePoiError
from .grid import (
    AffineFrame,
    Convention,
    LabelVolume,
    OccupancyField,
    convert_convention,
    sample_occupancy,
    voxel_to_world,
    world_to_voxel,
)
from .labels import LabelDictionary, default_dictionary
from .orientation import (
    LocalFrame,
    OrientationMethod,
    OrientationStats,
    angular_deviation,
    build_frame,
    evaluate_orientation,
    orthogonalize,
    posterior_raw,
)
from .poi import (
    BisectionConfig,
    ExtractConfig,
    Landmark,
    PoiSet,
    RayConfig,
    corner_bisection_2d,
    corpus_cardinal_pois,
    corpus_corners,
    extract_all,
    flavum_points,
    lateral_shift_mm,
    process_tip_pois,
    raycast_surface_point,
    retarget,
    shift_factor,
    shifted_pois,
)

__version__ = "0.1.0"

__all__ = [
    "AffineFrame",
    "BisectionConfig",
    "CenterlineSpline",
    "Convention",
    "ExtractConfig",
    "LabelDictionary",
    "LabelVolume",
    "Landmark",
    "LocalFrame",
    "OccupancyField",
    "OrientationMethod",
    "OrientationStats",
    "PoiSet",
    "RayConfig",
    "SpineInstance",
    "SpinePoiError",
    "Subregion",
    "VertebraInstance",
    "angular_deviation",
    "assemble_spine",
    "build_frame",
    "center_of_mass",
    "convert_convention",
    "corner_bisection_2d",
    "corpus_cardinal_pois",
    "corpus_corners",
    "craniocaudal_axis",
    "default_dictionary",
    "evaluate_orientation",
    "extract_all",
    "fit_centerline",
    "flavum_points",
    "lateral_shift_mm",
    "orthogonalize",
    "posterior_raw",
    "process_tip_pois",
    "raycast_surface_point",
    "retarget",
    "sample_occupancy",
    "shift_factor",
    "shifted_pois",
    "voxel_to_world",
    "world_to_voxel",
]
