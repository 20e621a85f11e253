"""Single-cascade semantics: confidence scoring, the forwarding decision, and accuracy.

A two-model cascade keeps a sample on the device when the light model's
confidence gap clears the device threshold and otherwise escalates it to the
heavy server model. The threshold is the one knob the scheduler turns.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyTraceError, InvalidDistributionError, InvalidTargetError
from .trace import TraceRecord, TraceSet

# Resolution of the calibration scan; 201 uniform points over [0, 1].
CALIBRATION_GRID_STEP = 0.005
CALIBRATION_GRID = tuple(round(i * CALIBRATION_GRID_STEP, 3) for i in range(201))


@dataclass(frozen=True, slots=True)
class Threshold:
    """A forwarding decision threshold, always clamped to [0, 1].

    0 never forwards; 1 forwards everything except samples with a confidence
    gap of exactly 1.
    """

    value: float

    def __post_init__(self):
        v = float(self.value)
        if v < 0.0:
            v = 0.0
        elif v > 1.0:
            v = 1.0
        object.__setattr__(self, "value", v)


class Decision(enum.Enum):
    KEEP_LOCAL = "keep_local"
    FORWARD = "forward"


LOCATION_LOCAL = "local"
LOCATION_SERVER = "server"


@dataclass(frozen=True, slots=True)
class CascadeOutcome:
    location: str  # LOCATION_LOCAL or LOCATION_SERVER
    correct: bool


def bvsb(softmax: Sequence[float]) -> float:
    """Confidence gap of a softmax vector: largest minus second-largest entry."""
    probs = np.asarray(softmax, dtype=np.float64)
    if probs.ndim != 1 or probs.size < 2:
        raise InvalidDistributionError("softmax vector must be 1-D with at least 2 entries")
    if probs.min() < 0.0:
        raise InvalidDistributionError("softmax entries must be non-negative")
    if abs(float(probs.sum()) - 1.0) > 1e-6:
        raise InvalidDistributionError(f"softmax entries must sum to 1, got {probs.sum()}")
    top2 = np.partition(probs, -2)[-2:]
    return float(top2[1] - top2[0])


def decide(score: float, threshold: Threshold) -> Decision:
    """Keep the sample local iff its confidence gap reaches the threshold."""
    if not 0.0 <= score <= 1.0:
        raise InvalidDistributionError(f"score must be in [0, 1], got {score}")
    return Decision.KEEP_LOCAL if score >= threshold.value else Decision.FORWARD


def cascade_outcome(record: TraceRecord, threshold: Threshold) -> CascadeOutcome:
    """Where the sample ends up and whether the answering model was right."""
    if decide(record.bvsb, threshold) is Decision.KEEP_LOCAL:
        return CascadeOutcome(LOCATION_LOCAL, record.light_correct)
    return CascadeOutcome(LOCATION_SERVER, record.heavy_correct)


def cascade_accuracy(trace: TraceSet, threshold: Threshold) -> float:
    """Fraction of trace samples the cascade answers correctly at this threshold."""
    if len(trace) == 0:
        raise EmptyTraceError("cascade_accuracy needs a non-empty trace")
    keep = trace.bvsb >= threshold.value
    correct = np.where(keep, trace.light_correct, trace.heavy_correct)
    return float(correct.mean())


def calibrate_static_threshold(calibration_trace: TraceSet,
                               target_forward_rate: float = 0.30,
                               accuracy_tolerance: float = 0.01) -> Threshold:
    """Pick a fixed threshold from the calibration grid.

    Scans the 201-point grid for the threshold whose forward rate is closest
    to the target (ties go to the lower threshold). If that choice costs more
    than accuracy_tolerance of cascade accuracy relative to the best grid
    point, falls back to the lowest threshold within the tolerance of the
    maximum.
    """
    if len(calibration_trace) == 0:
        raise EmptyTraceError("calibration needs a non-empty trace")
    if not 0.0 < target_forward_rate < 1.0:
        raise InvalidTargetError(
            f"target_forward_rate must be in (0, 1), got {target_forward_rate}")
    if accuracy_tolerance < 0.0:
        raise InvalidTargetError(
            f"accuracy_tolerance must be non-negative, got {accuracy_tolerance}")

    grid = np.asarray(CALIBRATION_GRID)
    n = len(calibration_trace)
    # forward rate and accuracy at every grid point, vectorized over the grid
    forwarded = calibration_trace.bvsb[None, :] < grid[:, None]
    rates = forwarded.sum(axis=1) / n
    correct = np.where(forwarded,
                       calibration_trace.heavy_correct[None, :],
                       calibration_trace.light_correct[None, :])
    accuracies = correct.sum(axis=1) / n

    best = int(np.argmin(np.abs(rates - target_forward_rate)))  # argmin → lowest on ties
    max_acc = float(accuracies.max())
    if accuracies[best] < max_acc - accuracy_tolerance:
        within = np.nonzero(accuracies >= max_acc - accuracy_tolerance)[0]
        best = int(within[0])
    return Threshold(float(grid[best]))
