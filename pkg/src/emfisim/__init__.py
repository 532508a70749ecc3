"""Simulated electromagnetic fault injection on neural-network weight blobs."""

from .errors import (
    DegenerateBaseline,
    EmfiSimError,
    InvalidQuant,
    InvalidReal,
    LengthMismatch,
    ManifestMismatch,
    OutOfBounds,
    ShapeMismatch,
    UnknownTensor,
)
from .formats import FormatKind, FpClass, FpParts, QuantParams
from .faults import EmfiPatternParams, FaultMask, FaultModel, FaultOp, FaultRecord
from .store import TensorMeta, WeightStore

__version__ = "0.1.0"
