"""Network traces: piecewise-constant bottleneck link schedules.

A trace is an ordered list of segments, each fixing the bottleneck link's
capacity, one-way delay, and loss probability from its start time until the
next segment begins. Traces are immutable after construction and can be
shared read-only across concurrently running simulations.

File format (UTF-8 text, one trace per file)::

    rtctrace v1 duration_ms=30000
    # start_ms capacity_kbps owd_ms loss_rate
    0 2000.0 25.0 0.0
    10000 1000.0 25.0 0.01

Lines starting with ``#`` are comments. Floats are serialized with
``repr`` so that a serialize/parse round trip is bit-exact.
"""

from __future__ import annotations

import math
import random
from bisect import bisect_right
from dataclasses import dataclass

__all__ = [
    "LinkParams",
    "NetworkTrace",
    "TraceError",
    "TraceGenConfig",
    "TraceParseError",
    "TraceSegment",
    "TraceValidationError",
    "parse_trace",
    "sample_trace",
    "serialize_trace",
    "trace_at",
]

TRACE_MAGIC = "rtctrace v1"


class TraceError(ValueError):
    """Base class for trace file and trace construction errors."""


class TraceParseError(TraceError):
    """Malformed trace file syntax; message carries the line number."""


class TraceValidationError(TraceError):
    """Structurally valid file whose values violate a trace invariant."""


@dataclass(frozen=True)
class LinkParams:
    """Bottleneck link parameters in force over one trace segment."""

    capacity_kbps: float
    owd_ms: float
    loss_rate: float

    def validate(self, where: str = "link params") -> None:
        if not (math.isfinite(self.capacity_kbps) and self.capacity_kbps > 0):
            raise TraceValidationError(f"{where}: capacity must be > 0, got {self.capacity_kbps}")
        if not (math.isfinite(self.owd_ms) and self.owd_ms >= 0):
            raise TraceValidationError(f"{where}: one-way delay must be >= 0, got {self.owd_ms}")
        if not (0.0 <= self.loss_rate <= 1.0):
            raise TraceValidationError(f"{where}: loss rate must be in [0, 1], got {self.loss_rate}")


@dataclass(frozen=True)
class TraceSegment:
    start_ms: int
    params: LinkParams


@dataclass(frozen=True)
class NetworkTrace:
    """Piecewise-constant link schedule; segment changes are stepwise."""

    segments: tuple[TraceSegment, ...]
    duration_ms: int

    def __post_init__(self) -> None:
        if not self.segments:
            raise TraceValidationError("trace has no segments")
        if self.segments[0].start_ms != 0:
            raise TraceValidationError(
                f"first segment must start at 0 ms, got {self.segments[0].start_ms}"
            )
        prev = -1
        for i, seg in enumerate(self.segments):
            if seg.start_ms <= prev:
                raise TraceValidationError(
                    f"segment {i}: start time {seg.start_ms} not strictly after {prev}"
                )
            seg.params.validate(where=f"segment {i}")
            prev = seg.start_ms
        if self.duration_ms <= self.segments[-1].start_ms:
            raise TraceValidationError(
                f"duration {self.duration_ms} ms must exceed last segment start {prev} ms"
            )
        object.__setattr__(self, "_starts", [s.start_ms for s in self.segments])

    def params_at(self, t_ms: float) -> LinkParams:
        return trace_at(self, t_ms)


def trace_at(trace: NetworkTrace, t_ms: float) -> LinkParams:
    """Parameters in force at time ``t_ms`` (left-closed segment intervals)."""
    if not (0 <= t_ms < trace.duration_ms):
        raise TraceValidationError(
            f"time {t_ms} ms outside trace range [0, {trace.duration_ms})"
        )
    starts = trace._starts  # type: ignore[attr-defined]
    idx = bisect_right(starts, t_ms) - 1
    return trace.segments[idx].params


def parse_trace(text: str) -> NetworkTrace:
    """Parse a trace file; raises :class:`TraceParseError` with the line number."""
    duration_ms: int | None = None
    segments: list[TraceSegment] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if duration_ms is None:
            parts = line.split()
            if len(parts) != 3 or parts[0] != "rtctrace" or parts[1] != "v1":
                raise TraceParseError(f"line {lineno}: expected header '{TRACE_MAGIC} duration_ms=<int>'")
            key, _, value = parts[2].partition("=")
            if key != "duration_ms" or not value:
                raise TraceParseError(f"line {lineno}: expected duration_ms=<int> in header")
            try:
                duration_ms = int(value)
            except ValueError:
                raise TraceParseError(f"line {lineno}: duration_ms is not an integer: {value!r}") from None
            continue
        fields = line.split()
        if len(fields) != 4:
            raise TraceParseError(
                f"line {lineno}: expected 4 fields (start_ms capacity_kbps owd_ms loss_rate), got {len(fields)}"
            )
        try:
            start_ms = int(fields[0])
        except ValueError:
            raise TraceParseError(f"line {lineno}: start_ms is not an integer: {fields[0]!r}") from None
        try:
            cap, owd, loss = (float(fields[i]) for i in (1, 2, 3))
        except ValueError:
            raise TraceParseError(f"line {lineno}: non-numeric segment field in {fields[1:]!r}") from None
        segments.append(TraceSegment(start_ms, LinkParams(cap, owd, loss)))
    if duration_ms is None:
        raise TraceParseError("empty trace file: missing header line")
    return NetworkTrace(tuple(segments), duration_ms)


def serialize_trace(trace: NetworkTrace) -> str:
    """Canonical text form; ``parse_trace(serialize_trace(t)) == t`` bit-exactly."""
    lines = [f"{TRACE_MAGIC} duration_ms={trace.duration_ms}"]
    for seg in trace.segments:
        p = seg.params
        lines.append(f"{seg.start_ms} {p.capacity_kbps!r} {p.owd_ms!r} {p.loss_rate!r}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class TraceGenConfig:
    """Random trace generator settings.

    Capacity is sampled log-uniform over its range so low-rate links are as
    common as high-rate ones; delay, loss, and segment durations are uniform.
    """

    capacity_range_kbps: tuple[float, float] = (300.0, 8000.0)
    delay_range_ms: tuple[float, float] = (10.0, 100.0)
    loss_range: tuple[float, float] = (0.0, 0.02)
    segment_duration_range_s: tuple[float, float] = (2.0, 15.0)
    duration_s: float = 30.0
    seed: int = 0

    def validate(self) -> None:
        for name, (lo, hi) in (
            ("capacity_range_kbps", self.capacity_range_kbps),
            ("delay_range_ms", self.delay_range_ms),
            ("loss_range", self.loss_range),
            ("segment_duration_range_s", self.segment_duration_range_s),
        ):
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise TraceValidationError(f"{name}: empty or non-finite range ({lo}, {hi})")
        if self.capacity_range_kbps[0] <= 0:
            raise TraceValidationError("capacity_range_kbps must be positive")
        if self.delay_range_ms[0] < 0:
            raise TraceValidationError("delay_range_ms must be non-negative")
        if not (0 <= self.loss_range[0] and self.loss_range[1] <= 1):
            raise TraceValidationError("loss_range must lie within [0, 1]")
        if self.segment_duration_range_s[0] <= 0:
            raise TraceValidationError("segment_duration_range_s must be positive")
        if self.duration_s <= 0:
            raise TraceValidationError("duration_s must be positive")


def sample_trace(cfg: TraceGenConfig) -> NetworkTrace:
    """Draw one random trace; deterministic in ``cfg.seed``."""
    cfg.validate()
    rng = random.Random(cfg.seed)
    duration_ms = round(cfg.duration_s * 1000)
    log_lo, log_hi = (math.log(x) for x in cfg.capacity_range_kbps)
    segments: list[TraceSegment] = []
    start = 0
    while start < duration_ms:
        params = LinkParams(
            capacity_kbps=math.exp(rng.uniform(log_lo, log_hi)),
            owd_ms=rng.uniform(*cfg.delay_range_ms),
            loss_rate=rng.uniform(*cfg.loss_range),
        )
        segments.append(TraceSegment(start, params))
        start += max(1, round(rng.uniform(*cfg.segment_duration_range_s) * 1000))
    return NetworkTrace(tuple(segments), duration_ms)
