"""Geodesic flows on surfaces with flat cylinders.

Modules:

``surface``   presets, charts, warp profile, gluing checks
``flow``      geodesic flow across charts, transits, rank tags
``periodic``  closed geodesics, shooting, shadowing searches
``measure``   atomic measures, occupancy, Prohorov distances
``lab``       scenario runner and command-line interface
"""

from .errors import (ConfigError, ContractViolation, InvalidParameter, InvalidSurface, LabError,
                     NotApplicable, NotHyperbolic, OutOfDomain, ReductionFailure, RefineFailure,
                     SizeLimit, StiffnessFailure)
from .flow import integrate, is_rank_one, transit_report
from .surface import (CylinderSpec, SurfaceModel, UnitTangent, build_cylinder_with_funnels,
                      build_flat_cylinder_torus, build_flat_ended_torus, build_from_config)

__version__ = "0.1.0"

__all__ = [
    "LabError", "ConfigError", "ContractViolation", "InvalidParameter", "InvalidSurface",
    "NotApplicable", "NotHyperbolic", "OutOfDomain", "ReductionFailure", "RefineFailure",
    "SizeLimit", "StiffnessFailure", "integrate", "is_rank_one", "transit_report",
    "CylinderSpec", "SurfaceModel", "UnitTangent", "build_cylinder_with_funnels",
    "build_flat_cylinder_torus", "build_flat_ended_torus", "build_from_config",
]
