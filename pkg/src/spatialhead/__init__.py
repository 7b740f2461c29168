"""Spatial classification heads (GAP, GWAP, flatten and depthwise variants) on a numpy autodiff core."""

from .errors import ConfigError, ContractError, DataError, FrameworkError, NumericError, ShapeError
from .tensor import Tensor

__all__ = ["ConfigError", "ContractError", "DataError", "FrameworkError", "NumericError", "ShapeError", "Tensor"]
__version__ = "0.1.0"
