"""Trace data model: context samples, traces, transmission records and the trace CSV format."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np

TICK = 1.0
TICK_TOLERANCE = 0.01
HEADER = ("t", "x", "y", "velocity", "rsrp", "rsrq", "sinr", "cqi", "ta", "freq", "cell_id")
SCENARIOS = ("suburban", "highway")
DIRECTIONS = ("uplink", "downlink")


class TraceError(ValueError):
    """Base class for malformed or invalid traces."""


class TraceParseError(TraceError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class TraceValidationError(TraceError):
    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True, slots=True)
class GeoPosition:
    """Local planar position in meters (x east, y north)."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite position ({self.x}, {self.y})")

    def distance(self, other: GeoPosition) -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True, slots=True)
class ContextSample:
    t: float
    pos: GeoPosition
    velocity: float
    rsrp: float
    rsrq: float
    sinr: float
    cqi: int
    ta: int
    carrier_freq: float
    cell_id: int


@dataclass(frozen=True)
class Trace:
    samples: tuple[ContextSample, ...]
    scenario: str = "suburban"
    mno: str = "A"
    direction: str = "uplink"
    tick: float = TICK

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if not self.samples:
            raise TraceValidationError(["trace has no samples"])

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def t0(self) -> float:
        return self.samples[0].t

    @property
    def t_end(self) -> float:
        return self.samples[-1].t

    def index_of(self, t: float) -> int:
        """Index of the sample at time ``t``; raises IndexError outside the trace."""
        k = int(round((t - self.t0) / self.tick))
        if k < 0 or k >= len(self.samples):
            raise IndexError(f"t={t} outside trace [{self.t0}, {self.t_end}]")
        return k


@dataclass(frozen=True, slots=True)
class TransmissionRecord:
    t_start: float
    payload: float
    measured_rate: float
    aoi: float
    pos: GeoPosition
    duration: float = field(init=False)

    def __post_init__(self):
        if not self.measured_rate > 0:
            raise ValueError(f"measured_rate must be > 0, got {self.measured_rate}")
        if self.aoi < 0:
            raise ValueError(f"aoi must be >= 0, got {self.aoi}")
        object.__setattr__(self, "duration", self.payload * 8 / 1e6 / self.measured_rate)


def _sample_violations(s: ContextSample) -> list[str]:
    out = []
    if not 0 <= s.cqi <= 15:
        out.append(f"cqi={s.cqi} outside [0, 15]")
    if s.ta < 0:
        out.append(f"ta={s.ta} negative")
    if not s.velocity >= 0:
        out.append(f"velocity={s.velocity} negative")
    if not s.carrier_freq > 0:
        out.append(f"freq={s.carrier_freq} not positive")
    for name in ("t", "velocity", "rsrp", "rsrq", "sinr", "carrier_freq"):
        if not math.isfinite(getattr(s, name)):
            out.append(f"{name} not finite")
    return out


def validate_trace(trace: Trace) -> list[str]:
    """Return every invariant violation of ``trace`` as ``"sample <i>: ..."`` strings."""
    violations = []
    samples = trace.samples
    if not samples:
        return ["trace has no samples"]
    if trace.scenario not in SCENARIOS:
        violations.append(f"scenario {trace.scenario!r} not one of {SCENARIOS}")
    if trace.direction not in DIRECTIONS:
        violations.append(f"direction {trace.direction!r} not one of {DIRECTIONS}")
    if abs(trace.tick - TICK) > TICK * TICK_TOLERANCE:
        violations.append(f"tick {trace.tick} s is not {TICK} s")
    for i, s in enumerate(samples):
        violations.extend(f"sample {i}: {v}" for v in _sample_violations(s))
        if i == 0:
            continue
        step = s.t - samples[i - 1].t
        if step <= 0:
            violations.append(f"sample {i}: t={s.t} not strictly increasing")
        elif abs(step - trace.tick) > trace.tick * TICK_TOLERANCE:
            violations.append(f"sample {i}: tick spacing {step} s deviates from {trace.tick} s")
    return violations


def _fmt(x: float) -> str:
    return np.format_float_positional(x, unique=True, trim="-")


def write_trace(trace: Trace, out: TextIO | None = None) -> str:
    """Serialize ``trace`` as CSV. Returns the text; also writes it to ``out`` if given."""
    if not trace.samples:
        raise TraceValidationError(["trace has no samples"])
    lines = [f"# scenario={trace.scenario} mno={trace.mno} direction={trace.direction}",
             ",".join(HEADER)]
    for s in trace.samples:
        lines.append(",".join((
            _fmt(s.t), _fmt(s.pos.x), _fmt(s.pos.y), _fmt(s.velocity), _fmt(s.rsrp),
            _fmt(s.rsrq), _fmt(s.sinr), str(s.cqi), str(s.ta), _fmt(s.carrier_freq),
            str(s.cell_id))))
    text = "\n".join(lines) + "\n"
    if out is not None:
        out.write(text)
    return text


def _parse_meta(line: str) -> dict[str, str]:
    meta = {}
    for tok in line.lstrip("#").split():
        key, _, value = tok.partition("=")
        if key in ("scenario", "mno", "direction") and value:
            meta[key] = value
    return meta


def parse_trace(text: str | TextIO | Iterable[str], **meta) -> Trace:
    """Parse trace CSV. An optional leading ``# key=value`` comment sets scenario/mno/direction.

    Keyword arguments override the comment metadata.
    """
    if isinstance(text, str):
        text = io.StringIO(text)
    header_seen = False
    file_meta: dict[str, str] = {}
    samples: list[ContextSample] = []
    for lineno, raw in enumerate(text, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if not header_seen:
                file_meta.update(_parse_meta(line))
            continue
        cols = [c.strip() for c in line.split(",")]
        if not header_seen:
            if tuple(cols) != HEADER:
                raise TraceParseError(f"expected header {','.join(HEADER)!r}, got {line!r}", lineno)
            header_seen = True
            continue
        if len(cols) != len(HEADER):
            raise TraceParseError(f"expected {len(HEADER)} columns, got {len(cols)}", lineno)
        vals = {}
        for name, col in zip(HEADER, cols):
            try:
                vals[name] = int(col) if name in ("cqi", "ta", "cell_id") else float(col)
            except ValueError:
                raise TraceParseError(f"malformed value {col!r} for field {name}", lineno) from None
        try:
            pos = GeoPosition(vals["x"], vals["y"])
        except ValueError as e:
            raise TraceParseError(str(e), lineno) from None
        s = ContextSample(t=vals["t"], pos=pos, velocity=vals["velocity"], rsrp=vals["rsrp"],
                          rsrq=vals["rsrq"], sinr=vals["sinr"], cqi=vals["cqi"], ta=vals["ta"],
                          carrier_freq=vals["freq"], cell_id=vals["cell_id"])
        bad = _sample_violations(s)
        if bad:
            raise TraceParseError("; ".join(bad), lineno)
        if samples and s.t <= samples[-1].t:
            raise TraceValidationError([f"line {lineno}: t={s.t} not strictly increasing"])
        samples.append(s)
    if not header_seen:
        raise TraceParseError("missing header row")
    if not samples:
        raise TraceValidationError(["trace has no samples"])
    file_meta.update(meta)
    trace = Trace(samples, **file_meta)
    violations = validate_trace(trace)
    if violations:
        raise TraceValidationError(violations)
    return trace
