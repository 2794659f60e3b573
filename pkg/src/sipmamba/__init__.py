"""Radial scan orders, selective state-space blocks and bidirectional cross-modal fusion."""

from .errors import ContractError, CoverageError, DimensionError, NumericError, SipMambaError
from .scan_orders import GridShape, ScanMode, ScanOrder, build_scan_order, locality_score

__version__ = "0.1.0"

__all__ = [
    "ContractError", "CoverageError", "DimensionError", "NumericError", "SipMambaError",
    "GridShape", "ScanMode", "ScanOrder", "build_scan_order", "locality_score",
]
