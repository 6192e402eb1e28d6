"""Pixel-space perception and reaching control for a simulated planar arm.

A convolutional decoder learned from (joint angles -> camera image) pairs
serves as the visual forward model. Gradient descent on the variational
free energy drives both state estimation (the belief over joint angles) and
action (joint velocities), using only pixel-space prediction errors.
"""

__version__ = "0.1.0"

from . import arm, benchmark, dataset, decoder, engine, nn, presets, report
from .errors import (
    ConfigError,
    DataError,
    DimensionError,
    FormatError,
    NumericError,
    PixelArmError,
    StateError,
)

__all__ = [
    "arm",
    "benchmark",
    "dataset",
    "decoder",
    "engine",
    "nn",
    "presets",
    "report",
    "ConfigError",
    "DataError",
    "DimensionError",
    "FormatError",
    "NumericError",
    "PixelArmError",
    "StateError",
]
