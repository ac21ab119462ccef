"""Deterministic discrete-event simulation of a bottleneck link.

Models serialization at the link rate, a drop-tail FIFO queue bounded by
queuing delay, propagation delay, and Bernoulli loss. Runs as fast as the
host allows (no real-time pacing). Time is integer microseconds everywhere
inside this module; millisecond values at the API boundary are converted
exactly, which keeps event ordering free of float round-off.

A :class:`NetSim` instance owns all of its state (heap, links, RNG streams)
and is single-threaded; independent instances never share mutable state and
can be moved between threads as whole units.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass
from heapq import heappop, heappush
from typing import Callable

from .traces import LinkParams, NetworkTrace

__all__ = [
    "BottleneckLink",
    "CrossTrafficConfig",
    "CrossTrafficModel",
    "DROPPED_LOSS",
    "DROPPED_QUEUE",
    "EnqueueResult",
    "NetSim",
    "QUEUED",
    "SimPacket",
    "format_event_csv",
    "serialization_delay_ms",
    "serialization_delay_us",
]

MS = 1000  # microseconds per millisecond

# enqueue outcomes (drops are results, not errors)
QUEUED = "queued"
DROPPED_LOSS = "dropped_loss"
DROPPED_QUEUE = "dropped_queue"

# event kinds, dispatched in (time, insertion order)
_EV_ENTER = 0
_EV_DEPART = 1
_EV_ARRIVE = 2
_EV_SEGMENT = 3

EVENT_LOG_HEADER = "time_us,event,flow,id,size,detail"


class SimPacket:
    """A simulated packet record (not a wire-format datagram)."""

    __slots__ = ("id", "flow", "size", "send_time_us", "arrival_time_us",
                 "payload_tag", "ser_capacity_kbps")

    def __init__(self, pkt_id: int, flow: str, size: int, send_time_us: int,
                 payload_tag: object = None):
        if size <= 0:
            raise ValueError(f"packet size must be > 0, got {size}")
        self.id = pkt_id
        self.flow = flow
        self.size = size
        self.send_time_us = send_time_us
        self.arrival_time_us: int | None = None
        self.payload_tag = payload_tag
        # capacity that governed this packet's serialization, set at service start
        self.ser_capacity_kbps: float | None = None

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return (f"SimPacket(id={self.id}, flow={self.flow!r}, size={self.size}, "
                f"send={self.send_time_us}us, arrive={self.arrival_time_us}us)")


class EnqueueResult:
    """Outcome of offering a packet to a link."""

    __slots__ = ("status", "departure_us", "arrival_us")

    def __init__(self, status: str, departure_us: int | None = None,
                 arrival_us: int | None = None):
        self.status = status
        self.departure_us = departure_us
        self.arrival_us = arrival_us


def serialization_delay_ms(size_bytes: int, capacity_kbps: float) -> float:
    """Time to clock ``size_bytes`` onto a ``capacity_kbps`` link, in ms."""
    if capacity_kbps <= 0:
        raise ValueError(f"capacity must be > 0, got {capacity_kbps}")
    return size_bytes * 8.0 / capacity_kbps


def serialization_delay_us(size_bytes: int, capacity_kbps: float) -> int:
    if capacity_kbps <= 0:
        raise ValueError(f"capacity must be > 0, got {capacity_kbps}")
    return round(size_bytes * 8000.0 / capacity_kbps)


class _FlowCounters:
    __slots__ = ("sent", "delivered", "dropped_loss", "dropped_queue")

    def __init__(self) -> None:
        self.sent = 0
        self.delivered = 0
        self.dropped_loss = 0
        self.dropped_queue = 0

    @property
    def in_flight(self) -> int:
        return self.sent - self.delivered - self.dropped_loss - self.dropped_queue


class BottleneckLink:
    """Single FIFO link: loss draw, drop-tail by queuing delay, then service.

    The queue bound is expressed as milliseconds of queuing delay at the
    current capacity, so its byte size tracks the link rate. Parameter
    changes apply to packets whose serialization starts after the change;
    a packet mid-serialization completes at the old rate.
    """

    __slots__ = ("name", "sim", "params", "queue_limit_ms", "apply_loss", "rng",
                 "sink", "_queue", "_queued_bits", "_serving", "busy_until_us",
                 "counters", "follow_trace")

    def __init__(self, sim: "NetSim", name: str, params: LinkParams,
                 queue_limit_ms: float = 500.0, apply_loss: bool = True,
                 loss_seed: int = 0,
                 sink: Callable[[SimPacket, int], None] | None = None,
                 follow_trace: bool = True):
        self.name = name
        self.sim = sim
        self.params = params
        self.queue_limit_ms = queue_limit_ms
        self.apply_loss = apply_loss
        self.rng = random.Random(loss_seed)
        self.sink = sink
        self._queue: deque[SimPacket] = deque()
        self._queued_bits = 0
        self._serving = False
        self.busy_until_us = 0  # projected, per the constant-rate service formula
        self.counters: dict[str, _FlowCounters] = {}
        self.follow_trace = follow_trace

    def counters_for(self, flow: str) -> _FlowCounters:
        c = self.counters.get(flow)
        if c is None:
            c = self.counters[flow] = _FlowCounters()
        return c

    def set_params(self, params: LinkParams) -> None:
        self.params = params

    def enqueue(self, pkt: SimPacket, now_us: int) -> EnqueueResult:
        """Offer ``pkt`` to the link at ``now_us``; packets may be dropped.

        Returns the projected departure/arrival computed at the current
        capacity; the authoritative times come from the event stream and
        match the projection whenever no segment boundary intervenes.
        """
        counters = self.counters_for(pkt.flow)
        counters.sent += 1
        params = self.params
        if self.apply_loss and params.loss_rate > 0.0 and self.rng.random() < params.loss_rate:
            counters.dropped_loss += 1
            self.sim._record_drop(self, pkt, now_us, DROPPED_LOSS)
            return EnqueueResult(DROPPED_LOSS)
        bits = pkt.size * 8
        if (self._queued_bits + bits) / params.capacity_kbps > self.queue_limit_ms:
            counters.dropped_queue += 1
            self.sim._record_drop(self, pkt, now_us, DROPPED_QUEUE)
            return EnqueueResult(DROPPED_QUEUE)
        self._queue.append(pkt)
        self._queued_bits += bits
        if not self._serving:
            self._start_service(now_us)
        ser_us = serialization_delay_us(pkt.size, params.capacity_kbps)
        departure = max(now_us, self.busy_until_us) + ser_us
        self.busy_until_us = departure
        arrival = departure + round(params.owd_ms * MS)
        return EnqueueResult(QUEUED, departure_us=departure, arrival_us=arrival)

    def _start_service(self, now_us: int) -> None:
        head = self._queue[0]
        head.ser_capacity_kbps = self.params.capacity_kbps
        ser_us = serialization_delay_us(head.size, self.params.capacity_kbps)
        self._serving = True
        self.sim._schedule(now_us + ser_us, _EV_DEPART, self, None)

    def _depart(self, now_us: int) -> None:
        pkt = self._queue.popleft()
        self._queued_bits -= pkt.size * 8
        arrival = now_us + round(self.params.owd_ms * MS)
        self.sim._schedule(arrival, _EV_ARRIVE, self, pkt)
        if self._queue:
            self._start_service(now_us)
        else:
            self._serving = False

    def _arrive(self, pkt: SimPacket, now_us: int) -> None:
        pkt.arrival_time_us = now_us
        self.counters_for(pkt.flow).delivered += 1
        self.sim._record_delivery(self, pkt, now_us)
        if self.sink is not None:
            self.sink(pkt, now_us)


class NetSim:
    """Event loop over one or more links, optionally driven by a trace.

    Events at equal times dispatch in insertion order (stable ties), and all
    randomness comes from per-link seeded streams, so a run is a pure
    function of (trace, seeds, offered packets).
    """

    def __init__(self, trace: NetworkTrace | None = None,
                 event_log: Callable[[str], None] | None = None):
        self.trace = trace
        self.current_time_us = 0
        self._heap: list[tuple[int, int, int, object, object]] = []
        self._seq = 0
        self.links: list[BottleneckLink] = []
        self.delivered: list[SimPacket] = []
        self.drops: list[tuple[SimPacket, str, str]] = []  # (pkt, link name, reason)
        self.event_log = event_log
        if trace is not None:
            for seg in trace.segments[1:]:
                self._schedule(seg.start_ms * MS, _EV_SEGMENT, seg.params, None)

    def add_link(self, name: str, queue_limit_ms: float = 500.0,
                 apply_loss: bool = True, loss_seed: int = 0,
                 sink: Callable[[SimPacket, int], None] | None = None,
                 params: LinkParams | None = None,
                 follow_trace: bool = True) -> BottleneckLink:
        if params is None:
            if self.trace is None:
                raise ValueError("link needs explicit params when no trace is attached")
            params = self.trace.segments[0].params
        link = BottleneckLink(self, name, params, queue_limit_ms, apply_loss,
                              loss_seed, sink, follow_trace)
        self.links.append(link)
        return link

    def send(self, link: BottleneckLink, pkt: SimPacket) -> None:
        """Schedule ``pkt`` to enter ``link`` at its send time."""
        if pkt.send_time_us < self.current_time_us:
            raise ValueError(
                f"packet send time {pkt.send_time_us}us precedes current time "
                f"{self.current_time_us}us"
            )
        self._schedule(pkt.send_time_us, _EV_ENTER, link, pkt)

    def _schedule(self, t_us: int, kind: int, a: object, b: object) -> None:
        self._seq += 1
        heappush(self._heap, (t_us, self._seq, kind, a, b))

    def run_until(self, t_us: int) -> tuple[list[SimPacket], list[tuple[SimPacket, str, str]]]:
        """Dispatch every event with time <= ``t_us``; advance the clock to it.

        Returns packets delivered and drops recorded by this call.
        """
        if t_us < self.current_time_us:
            raise ValueError(f"cannot run backwards to {t_us}us from {self.current_time_us}us")
        self.delivered = []
        self.drops = []
        heap = self._heap
        while heap and heap[0][0] <= t_us:
            time_us, _, kind, a, b = heappop(heap)
            if kind == _EV_ENTER:
                a.enqueue(b, time_us)
            elif kind == _EV_DEPART:
                a._depart(time_us)
            elif kind == _EV_ARRIVE:
                a._arrive(b, time_us)
            else:  # _EV_SEGMENT
                for link in self.links:
                    if link.follow_trace:
                        link.set_params(a)
                if self.event_log is not None:
                    self.event_log(f"{time_us},segment,-,-,-,cap={a.capacity_kbps}")
        self.current_time_us = t_us
        return self.delivered, self.drops

    def _record_delivery(self, link: BottleneckLink, pkt: SimPacket, now_us: int) -> None:
        self.delivered.append(pkt)
        if self.event_log is not None:
            self.event_log(format_event_csv(now_us, "deliver", pkt, link.name))

    def _record_drop(self, link: BottleneckLink, pkt: SimPacket, now_us: int, reason: str) -> None:
        self.drops.append((pkt, link.name, reason))
        if self.event_log is not None:
            self.event_log(format_event_csv(now_us, reason, pkt, link.name))


def format_event_csv(time_us: int, event: str, pkt: SimPacket, detail: str) -> str:
    """One row of the optional debug event log (not consumed programmatically)."""
    return f"{time_us},{event},{pkt.flow},{pkt.id},{pkt.size},{detail}"


@dataclass
class CrossTrafficConfig:
    """Competing traffic on the forward bottleneck: off, constant, or AIMD."""

    mode: str = "off"  # off | constant | aimd
    rate_kbps: float = 500.0
    aimd_growth_kbps: float = 50.0
    aimd_backoff: float = 0.5
    aimd_min_kbps: float = 50.0
    packet_bytes: int = 1200

    def validate(self) -> None:
        if self.mode not in ("off", "constant", "aimd"):
            raise ValueError(f"unknown cross-traffic mode {self.mode!r}")
        if self.rate_kbps < 0:
            raise ValueError("cross-traffic rate must be >= 0")
        if not (0 < self.aimd_backoff < 1):
            raise ValueError("aimd_backoff must be in (0, 1)")


class CrossTrafficModel:
    """Tracks the cross flow's offered rate across control intervals."""

    def __init__(self, cfg: CrossTrafficConfig):
        cfg.validate()
        self.cfg = cfg
        self.rate_kbps = cfg.rate_kbps

    def offered_bytes(self, interval_ms: float, delivered: int = 0, lost: int = 0) -> int:
        """Bytes to inject over the next interval, after applying feedback.

        AIMD grows additively on loss-free feedback and backs off
        multiplicatively as soon as any loss is reported.
        """
        if interval_ms <= 0:
            raise ValueError(f"interval must be > 0, got {interval_ms}")
        cfg = self.cfg
        if cfg.mode == "off":
            return 0
        if cfg.mode == "aimd":
            if lost > 0:
                self.rate_kbps = max(cfg.aimd_min_kbps, self.rate_kbps * cfg.aimd_backoff)
            else:
                self.rate_kbps += cfg.aimd_growth_kbps
        return round(self.rate_kbps * interval_ms / 8.0)
