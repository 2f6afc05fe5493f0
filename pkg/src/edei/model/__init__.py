from .config import DESK_MODEL, ModelConfig
from .network import (
    DualExposureNet,
    ModelOutputs,
    SerialDualExposureNet,
    SinglePathNet,
    count_parameters,
    fusion_parameters,
    path_parameters,
)

__all__ = [
    "DESK_MODEL",
    "ModelConfig",
    "DualExposureNet",
    "ModelOutputs",
    "SerialDualExposureNet",
    "SinglePathNet",
    "count_parameters",
    "fusion_parameters",
    "path_parameters",
]
