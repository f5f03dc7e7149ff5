"""Multi-agent Compton-camera radiation mapping.

The package splits into geometry primitives (:mod:`cone_mapper.core`), the
detector response model (:mod:`cone_mapper.physics`), list-mode iterative
reconstruction (:mod:`cone_mapper.recon`), the measurement simulator
(:mod:`cone_mapper.sim`), search strategies and multi-agent path planning
(:mod:`cone_mapper.strategy`), the closed-loop mission driver
(:mod:`cone_mapper.mission`), flat-text configs (:mod:`cone_mapper.config`)
and a small command line front end (:mod:`cone_mapper.cli`).
"""

from cone_mapper.core import (
    ComptonCone,
    ConfigurationError,
    GridMap,
    Position3,
    SensorPose,
    Viewpoint,
    grid_from_config,
    polar_angles,
)
from cone_mapper.physics import (
    AttenuationModel,
    DetectorGeometry,
    InfeasibleEnergyError,
    LookupTable,
    build_chord_lookup,
    compton_angle,
)
from cone_mapper.recon import (
    IntensityField,
    SensitivityField,
    mlem,
    sensitivity_update,
    system_row,
)

__version__ = "0.1.0"

__all__ = [
    "AttenuationModel",
    "ComptonCone",
    "ConfigurationError",
    "DetectorGeometry",
    "GridMap",
    "InfeasibleEnergyError",
    "IntensityField",
    "LookupTable",
    "Position3",
    "SensitivityField",
    "SensorPose",
    "Viewpoint",
    "build_chord_lookup",
    "compton_angle",
    "grid_from_config",
    "mlem",
    "polar_angles",
    "sensitivity_update",
    "system_row",
]
