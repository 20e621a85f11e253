"""Per-sample trace data model: synthetic generation, CSV ingestion, forward-rate estimation.

A trace stands in for running the real model pair. Each record keeps the light
model's confidence gap (difference of the two largest softmax probabilities)
and the correctness of both models on that sample, which is all the cascade
semantics ever look at.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Iterator, Union

import numpy as np

from .errors import (
    EmptyTraceError,
    InvalidParamsError,
    TraceParseError,
    TraceRangeError,
)

TRACE_CSV_HEADER = "sample_index,bvsb,light_correct,heavy_correct"

SOURCE_SYNTHETIC = "synthetic"
SOURCE_FILE = "file"


@dataclass(frozen=True, slots=True)
class TraceRecord:
    sample_index: int
    bvsb: float
    light_correct: bool
    heavy_correct: bool


class TraceSet:
    """Ordered, immutable collection of trace records backed by numpy arrays.

    sample_index values are implicit and consecutive from 0; the columns are
    exposed both as arrays (for vectorized math) and as TraceRecord views.
    """

    __slots__ = ("bvsb", "light_correct", "heavy_correct", "source",
                 "light_model_name", "heavy_model_name")

    def __init__(self, bvsb, light_correct, heavy_correct,
                 source: str = SOURCE_SYNTHETIC,
                 light_model_name: str = "light",
                 heavy_model_name: str = "heavy"):
        bvsb = np.asarray(bvsb, dtype=np.float64)
        light = np.asarray(light_correct, dtype=bool)
        heavy = np.asarray(heavy_correct, dtype=bool)
        if not (bvsb.shape == light.shape == heavy.shape) or bvsb.ndim != 1:
            raise InvalidParamsError("trace columns must be 1-D and equal length")
        if bvsb.size and (bvsb.min() < 0.0 or bvsb.max() > 1.0):
            raise InvalidParamsError("bvsb values must lie in [0, 1]")
        bvsb.setflags(write=False)
        light.setflags(write=False)
        heavy.setflags(write=False)
        self.bvsb = bvsb
        self.light_correct = light
        self.heavy_correct = heavy
        self.source = source
        self.light_model_name = light_model_name
        self.heavy_model_name = heavy_model_name

    def __len__(self) -> int:
        return int(self.bvsb.size)

    def __getitem__(self, i: int) -> TraceRecord:
        if not -len(self) <= i < len(self):
            raise IndexError(i)
        i = i % len(self) if len(self) else i
        return TraceRecord(i, float(self.bvsb[i]),
                           bool(self.light_correct[i]), bool(self.heavy_correct[i]))

    def __iter__(self) -> Iterator[TraceRecord]:
        for i in range(len(self)):
            yield self[i]

    @property
    def light_accuracy(self) -> float:
        return float(self.light_correct.mean()) if len(self) else 0.0

    @property
    def heavy_accuracy(self) -> float:
        return float(self.heavy_correct.mean()) if len(self) else 0.0


@dataclass(frozen=True)
class SyntheticTraceParams:
    """Knobs for generating a synthetic trace.

    Correctness bits are drawn first (light as a Bernoulli, heavy conditioned
    on the light outcome so the light/heavy error correlation is explicit);
    the confidence gap is then drawn from a Beta distribution whose shape
    depends on whether the light model was right. The marginal heavy accuracy
    is la*hc + (1-la)*hw.
    """

    light_accuracy: float
    heavy_accuracy_given_light_correct: float
    heavy_accuracy_given_light_wrong: float
    bvsb_shape_correct: tuple[float, float] = (5.0, 1.0)
    bvsb_shape_wrong: tuple[float, float] = (1.2, 3.0)
    count: int = 5000

    def validate(self) -> None:
        probs = {
            "light_accuracy": self.light_accuracy,
            "heavy_accuracy_given_light_correct": self.heavy_accuracy_given_light_correct,
            "heavy_accuracy_given_light_wrong": self.heavy_accuracy_given_light_wrong,
        }
        for name, p in probs.items():
            if not 0.0 <= p <= 1.0:
                raise InvalidParamsError(f"{name} must be in [0, 1], got {p}")
        for name, shape in (("bvsb_shape_correct", self.bvsb_shape_correct),
                            ("bvsb_shape_wrong", self.bvsb_shape_wrong)):
            if len(shape) != 2 or shape[0] <= 0 or shape[1] <= 0:
                raise InvalidParamsError(f"{name} must be a pair of positive reals, got {shape}")
        if self.count <= 0:
            raise InvalidParamsError(f"count must be positive, got {self.count}")
        marginal = self.marginal_heavy_accuracy
        if not 0.0 <= marginal <= 1.0:
            raise InvalidParamsError(f"marginal heavy accuracy {marginal} outside [0, 1]")

    @property
    def marginal_heavy_accuracy(self) -> float:
        la = self.light_accuracy
        return la * self.heavy_accuracy_given_light_correct + \
            (1.0 - la) * self.heavy_accuracy_given_light_wrong


def generate_synthetic_trace(params: SyntheticTraceParams, seed,
                             light_model_name: str = "synthetic-light",
                             heavy_model_name: str = "synthetic-heavy") -> TraceSet:
    """Generate a trace; a pure function of (params, seed).

    The seed may be an int or a sequence of ints (numpy SeedSequence entropy).
    """
    params.validate()
    rng = np.random.default_rng(seed)
    n = params.count
    light = rng.random(n) < params.light_accuracy
    heavy_p = np.where(light, params.heavy_accuracy_given_light_correct,
                       params.heavy_accuracy_given_light_wrong)
    heavy = rng.random(n) < heavy_p
    ac, bc = params.bvsb_shape_correct
    aw, bw = params.bvsb_shape_wrong
    bvsb_correct = rng.beta(ac, bc, n)
    bvsb_wrong = rng.beta(aw, bw, n)
    bvsb = np.where(light, bvsb_correct, bvsb_wrong)
    return TraceSet(bvsb, light, heavy, source=SOURCE_SYNTHETIC,
                    light_model_name=light_model_name, heavy_model_name=heavy_model_name)


def _parse_bool(field: str, raw: str, row: int) -> bool:
    if raw == "0":
        return False
    if raw == "1":
        return True
    raise TraceParseError(row, f"{field} must be 0 or 1, got {raw!r}")


def load_trace_csv(source: Union[str, bytes, io.IOBase],
                   light_model_name: str = "file-light",
                   heavy_model_name: str = "file-heavy") -> TraceSet:
    """Load a trace from CSV text.

    Accepts a path, raw bytes/str content containing a newline, or a file-like
    object. Format: header `sample_index,bvsb,light_correct,heavy_correct`,
    booleans as 0/1, LF line endings, no quoting.
    """
    if hasattr(source, "read"):
        data = source.read()
    elif isinstance(source, bytes):
        data = source
    elif isinstance(source, str) and "\n" not in source:
        with open(source, "rb") as fh:
            data = fh.read()
    else:
        data = source
    if isinstance(data, bytes):
        text = data.decode("utf-8")
    else:
        text = data

    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise EmptyTraceError("trace file is empty")
    header = lines[0].rstrip("\r")
    if header != TRACE_CSV_HEADER:
        raise TraceParseError(1, f"expected header {TRACE_CSV_HEADER!r}, got {header!r}")
    if len(lines) == 1:
        raise EmptyTraceError("trace file has a header but no records")

    bvsb, light, heavy = [], [], []
    for row_no, line in enumerate(lines[1:], start=2):
        fields = line.rstrip("\r").split(",")
        if len(fields) != 4:
            raise TraceParseError(row_no, f"expected 4 fields, got {len(fields)}")
        try:
            idx = int(fields[0])
            score = float(fields[1])
        except ValueError as exc:
            raise TraceParseError(row_no, str(exc)) from None
        if idx != row_no - 2:
            raise TraceParseError(row_no, f"sample_index {idx} is not consecutive from 0")
        if not 0.0 <= score <= 1.0:
            raise TraceRangeError(row_no, f"bvsb {score} outside [0, 1]")
        bvsb.append(score)
        light.append(_parse_bool("light_correct", fields[2], row_no))
        heavy.append(_parse_bool("heavy_correct", fields[3], row_no))

    return TraceSet(bvsb, light, heavy, source=SOURCE_FILE,
                    light_model_name=light_model_name, heavy_model_name=heavy_model_name)


def write_trace_csv(trace: TraceSet, stream) -> None:
    """Write a trace in the CSV format load_trace_csv accepts."""
    stream.write(TRACE_CSV_HEADER + "\n")
    for rec in trace:
        stream.write(f"{rec.sample_index},{rec.bvsb!r},"
                     f"{int(rec.light_correct)},{int(rec.heavy_correct)}\n")


def trace_forward_rate(trace: TraceSet, threshold: float) -> float:
    """Fraction of records whose confidence gap falls strictly below threshold.

    This is the empirical probability that a device holding this trace would
    forward a sample at the given decision threshold. Empty trace yields 0.
    """
    if not 0.0 <= threshold <= 1.0:
        raise InvalidParamsError(f"threshold must be in [0, 1], got {threshold}")
    if len(trace) == 0:
        return 0.0
    return float((trace.bvsb < threshold).mean())
