"""Simulator and dispatch policies for dynamic pickup-and-delivery with
dedicated vehicles and randomly appearing crowdshippers."""

__version__ = "0.1.0"

from .traveltime import (
    AVERAGE_SPEED_KM_MIN,
    Geography,
    Location,
    SpeedProfile,
    TravelTimeModel,
    default_model,
)

__all__ = [
    "AVERAGE_SPEED_KM_MIN",
    "Geography",
    "Location",
    "SpeedProfile",
    "TravelTimeModel",
    "default_model",
    "__version__",
]
