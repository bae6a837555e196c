"""Action-space trajectory prediction with a differentiable kinematic bicycle model."""
from . import data, kinematics, metrics, models, numeric, raster
from .errors import (ActionSpaceError, ConfigurationError, ContractError, DataError, DimensionError, DomainError,
                     InfeasibleTurnError, NumericError, SchemaError)
from .kinematics import Action, State, VehicleGeometry, rollout, step

__version__ = "0.1.0"
