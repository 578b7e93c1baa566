"""Abridged Petri nets: model definition, Monte Carlo simulation, and a
Markov-chain oracle for small exponential models."""

from . import gallery
from .engine import (InternalError, LivelockError, Replication, Simulator, TraceRecord,
                     run_replication)
from .markov import (UnsupportedModel, VanishingCycle, count_states, expected_sensors, explore,
                     transient, window_average)
from .model import (AgeAction, ColorLeak, Exponential, Fixed, Immediate, LayerTemplate, Net,
                    SimulationSettings, TokenSpec, Transition, Trigger, Uniform, ValidationError,
                    Violation, Weibull, color_shift, expand_layers, transition, validate)
from .modelio import ParseError, load, parse, serialize
from .runner import run_replications, stream_seed
from .stats import SensorReport, SensorSpec, aggregate

__version__ = "0.1.0"

__all__ = [
    "AgeAction", "ColorLeak", "Exponential", "Fixed", "Immediate", "InternalError",
    "LayerTemplate", "LivelockError", "Net", "ParseError", "Replication", "SensorReport",
    "SensorSpec", "SimulationSettings", "Simulator", "TokenSpec", "TraceRecord", "Transition",
    "Trigger", "Uniform", "UnsupportedModel", "ValidationError", "VanishingCycle", "Violation",
    "Weibull", "aggregate", "color_shift", "count_states", "expand_layers", "expected_sensors",
    "explore", "gallery", "load",
    "parse", "run_replication", "run_replications", "serialize", "stream_seed", "transient",
    "transition", "validate", "window_average",
]
