"""Dual-exposure imaging with events: synthesis, network, training, eval."""

__version__ = "0.1.0"

from .core import (
    Event,
    EventStream,
    ExposureSample,
    ExposureTiming,
    Frame,
    FrameSequence,
    validate_sample,
)
from .representation import VoxelGrid, perturb_window, voxelize
from .synthesis import (
    DegradationParams,
    SimulatorConfig,
    SynthesisRecipe,
    interpolate,
    make_sample,
    simulate_events,
    synth_long,
    synth_short,
)

__all__ = [
    "Event",
    "EventStream",
    "ExposureSample",
    "ExposureTiming",
    "Frame",
    "FrameSequence",
    "validate_sample",
    "VoxelGrid",
    "perturb_window",
    "voxelize",
    "DegradationParams",
    "SimulatorConfig",
    "SynthesisRecipe",
    "interpolate",
    "make_sample",
    "simulate_events",
    "synth_long",
    "synth_short",
]
