"""Simulated RTC endpoints: paced media sender and stats-gathering receiver.

The sender emits synthetic video frames (split into MTU-sized chunks) plus a
constant audio stream, totalling its target bitrate. The receiver accumulates
per-window delivery statistics; windows are closed once per environment step.
Round-trip time is measured with echoed timestamps riding the feedback
channel: the receiver's feedback acknowledges the most recent media packet,
and the sample (forward delay of that packet plus reverse delay of the
feedback) is credited to the window in which the feedback lands.

All endpoint state is owned by one :class:`CallSession`, which is owned by
one simulator instance; sessions are independent of each other.
"""

from __future__ import annotations

from dataclasses import dataclass

from .netsim import MS, CrossTrafficConfig, CrossTrafficModel, NetSim, SimPacket
from .traces import NetworkTrace

__all__ = [
    "CallSession",
    "FeedbackMessage",
    "MediaConfig",
    "MediaReceiver",
    "MediaSender",
    "ObservationWindow",
]


@dataclass
class MediaConfig:
    """Synthetic media model: 30 fps video chunks plus 50 pps audio."""

    frame_interval_ms: float = 100.0 / 3.0
    max_packet_bytes: int = 1200
    audio_pps: int = 50
    audio_packet_bytes: int = 100
    feedback_bytes: int = 80
    min_target_kbps: float = 10.0
    max_target_kbps: float = 8000.0

    @property
    def audio_kbps(self) -> float:
        return self.audio_pps * self.audio_packet_bytes * 8.0 / 1000.0


@dataclass
class FeedbackMessage:
    """Receiver report: bandwidth estimate plus echoed-timestamp RTT probe.

    ``echo_send_time_us`` is the send timestamp of the most recent media
    packet, ``echo_hold_us`` how long the receiver held it before this
    report; together with the report's own arrival they yield one RTT sample.
    """

    estimate_kbps: float
    receiver_time_us: int
    echo_send_time_us: int | None = None
    echo_hold_us: int = 0


@dataclass
class ObservationWindow:
    """Receiver statistics for one fixed window (default 50 ms).

    ``valid`` is False when no packet arrived; rate and loss are then zero,
    the packet interval degenerates to the window length, and the RTT carries
    the last known value so downstream consumers always see a defined state.
    """

    receive_rate_kbps: float
    avg_interval_ms: float
    loss_rate: float
    avg_rtt_ms: float
    valid: bool
    start_ms: float = 0.0
    len_ms: float = 50.0
    received: int = 0
    lost: int = 0
    rtt_is_measured: bool = False


class MediaSender:
    """Paces video frames and audio packets at the current target bitrate.

    Feedback estimates are clamped to [min_target, max_target] kb/s and take
    effect at the next packetize call. Video frame size is the target minus
    the fixed audio rate, so the long-run emitted bitrate matches the target;
    fractional frame bytes carry over as pacing debt.
    """

    def __init__(self, cfg: MediaConfig, initial_target_kbps: float, start_us: int = 0):
        self.cfg = cfg
        self.target_bitrate_kbps = self._clamp(initial_target_kbps)
        self.next_seq = 0
        self.pacing_debt_bytes = 0.0
        self._frame_index = 0
        self._audio_index = 0
        self._origin_us = start_us

    def _clamp(self, kbps: float) -> float:
        return min(max(kbps, self.cfg.min_target_kbps), self.cfg.max_target_kbps)

    def on_feedback(self, msg: FeedbackMessage, now_us: int) -> int | None:
        """Apply the estimate; returns an RTT sample in microseconds if the
        message carried an echo."""
        self.target_bitrate_kbps = self._clamp(msg.estimate_kbps)
        if msg.echo_send_time_us is None:
            return None
        return (now_us - msg.echo_send_time_us) - msg.echo_hold_us

    def packetize(self, interval_us: int, now_us: int) -> list[SimPacket]:
        """Emit all media packets with send times in [now, now + interval)."""
        if interval_us <= 0:
            raise ValueError(f"interval must be > 0, got {interval_us}")
        cfg = self.cfg
        end_us = now_us + interval_us
        frame_interval_us = cfg.frame_interval_ms * MS
        audio_interval_us = 1_000_000.0 / cfg.audio_pps
        video_kbps = max(0.0, self.target_bitrate_kbps - cfg.audio_kbps)
        frame_bytes_exact = video_kbps * frame_interval_us / 8000.0

        emissions: list[tuple[int, int]] = []  # (send_time_us, size_bytes)
        t = self._origin_us + round(self._frame_index * frame_interval_us)
        while t < end_us:
            self.pacing_debt_bytes += frame_bytes_exact
            nbytes = int(self.pacing_debt_bytes)
            self.pacing_debt_bytes -= nbytes
            while nbytes > 0:
                chunk = min(nbytes, cfg.max_packet_bytes)
                emissions.append((t, chunk))
                nbytes -= chunk
            self._frame_index += 1
            t = self._origin_us + round(self._frame_index * frame_interval_us)
        t = self._origin_us + round(self._audio_index * audio_interval_us)
        while t < end_us:
            emissions.append((t, cfg.audio_packet_bytes))
            self._audio_index += 1
            t = self._origin_us + round(self._audio_index * audio_interval_us)

        emissions.sort(key=lambda e: e[0])  # sequence numbers follow send order
        packets = []
        for send_us, size in emissions:
            self.next_seq += 1
            packets.append(SimPacket(self.next_seq, "media", size, send_us))
        return packets


class MediaReceiver:
    """Accumulates per-window stats from delivered media packets.

    Sequence gaps count as losses; the simulator never reorders, so gaps are
    definitive. Duplicates cannot occur in-simulator but are counted once and
    flagged defensively.
    """

    def __init__(self, window_len_ms: float = 50.0):
        self.window_len_ms = window_len_ms
        self.highest_seq = 0
        self.duplicates = 0
        self.last_rtt_ms = 0.0
        self._rtt_ever_measured = False
        self.last_media_send_us: int | None = None
        self.last_media_arrival_us: int | None = None
        self._bytes = 0
        self._count = 0
        self._losses = 0
        self._first_arrival_us = 0
        self._last_arrival_us = 0
        self._rtt_sum_ms = 0.0
        self._rtt_n = 0

    def on_media(self, pkt: SimPacket, now_us: int) -> None:
        if pkt.id <= self.highest_seq:
            self.duplicates += 1
            return
        self._losses += pkt.id - self.highest_seq - 1
        self.highest_seq = pkt.id
        if self._count == 0:
            self._first_arrival_us = now_us
        self._last_arrival_us = now_us
        self._count += 1
        self._bytes += pkt.size
        self.last_media_send_us = pkt.send_time_us
        self.last_media_arrival_us = now_us

    def add_rtt_sample(self, rtt_us: int) -> None:
        self._rtt_sum_ms += rtt_us / MS
        self._rtt_n += 1

    def make_feedback(self, estimate_kbps: float, now_us: int) -> FeedbackMessage:
        if self.last_media_arrival_us is None:
            return FeedbackMessage(estimate_kbps, now_us)
        return FeedbackMessage(
            estimate_kbps,
            now_us,
            echo_send_time_us=self.last_media_send_us,
            echo_hold_us=now_us - self.last_media_arrival_us,
        )

    def close_window(self, start_us: int, len_us: int) -> ObservationWindow:
        """Summarize and reset the window accumulators (once per step)."""
        n = self._count
        losses = self._losses
        len_ms = len_us / MS
        if self._rtt_n > 0:
            rtt_ms = self._rtt_sum_ms / self._rtt_n
            self.last_rtt_ms = rtt_ms
            self._rtt_ever_measured = True
        else:
            rtt_ms = self.last_rtt_ms
        if n > 0:
            rate_kbps = self._bytes * 8000.0 / len_us
            interval_ms = ((self._last_arrival_us - self._first_arrival_us) / MS / (n - 1)
                           if n >= 2 else len_ms)
            loss_rate = losses / (losses + n)
        else:
            rate_kbps = 0.0
            interval_ms = len_ms
            loss_rate = 0.0
        window = ObservationWindow(
            receive_rate_kbps=rate_kbps,
            avg_interval_ms=interval_ms,
            loss_rate=loss_rate,
            avg_rtt_ms=rtt_ms,
            valid=n > 0,
            start_ms=start_us / MS,
            len_ms=len_ms,
            received=n,
            lost=losses,
            rtt_is_measured=self._rtt_ever_measured,
        )
        self._bytes = 0
        self._count = 0
        self._losses = 0
        self._rtt_sum_ms = 0.0
        self._rtt_n = 0
        return window


class CallSession:
    """One caller/callee pair over a trace-driven bottleneck.

    The forward link carries media (and cross traffic if enabled) with loss
    applied; the feedback link mirrors the trace's capacity and delay but is
    loss-free and carries only receiver reports.
    """

    def __init__(self, trace: NetworkTrace, seed: int = 0,
                 media: MediaConfig | None = None,
                 queue_limit_ms: float = 500.0,
                 cross: CrossTrafficConfig | None = None,
                 initial_target_kbps: float = 300.0,
                 event_log=None):
        self.media_cfg = media or MediaConfig()
        self.sim = NetSim(trace=trace, event_log=event_log)
        self.forward = self.sim.add_link(
            "forward", queue_limit_ms=queue_limit_ms, apply_loss=True,
            loss_seed=seed * 2 + 1, sink=self._on_forward_arrival)
        self.feedback_link = self.sim.add_link(
            "feedback", queue_limit_ms=queue_limit_ms, apply_loss=False,
            loss_seed=seed * 2 + 2, sink=self._on_feedback_arrival)
        self.sender = MediaSender(self.media_cfg, initial_target_kbps)
        self.receiver = MediaReceiver()
        self.cross = CrossTrafficModel(cross or CrossTrafficConfig())
        self._fb_seq = 0
        self._cross_seq = 0
        self._cross_delivered_seen = 0
        self._cross_lost_seen = 0

    def _on_forward_arrival(self, pkt: SimPacket, now_us: int) -> None:
        if pkt.flow == "media":
            self.receiver.on_media(pkt, now_us)
        # cross-traffic deliveries only feed the AIMD loop via link counters

    def _on_feedback_arrival(self, pkt: SimPacket, now_us: int) -> None:
        rtt_us = self.sender.on_feedback(pkt.payload_tag, now_us)
        if rtt_us is not None:
            self.receiver.add_rtt_sample(rtt_us)

    def send_feedback(self, estimate_kbps: float, now_us: int) -> None:
        msg = self.receiver.make_feedback(estimate_kbps, now_us)
        self._fb_seq += 1
        pkt = SimPacket(self._fb_seq, "feedback", self.media_cfg.feedback_bytes,
                        now_us, payload_tag=msg)
        self.sim.send(self.feedback_link, pkt)

    def emit_media(self, interval_us: int, now_us: int) -> int:
        """Packetize the next interval and hand everything to the link."""
        packets = self.sender.packetize(interval_us, now_us)
        for pkt in packets:
            self.sim.send(self.forward, pkt)
        self._emit_cross(interval_us, now_us)
        return len(packets)

    def _emit_cross(self, interval_us: int, now_us: int) -> None:
        if self.cross.cfg.mode == "off":
            return
        counters = self.forward.counters_for("cross")
        delivered = counters.delivered - self._cross_delivered_seen
        lost = (counters.dropped_loss + counters.dropped_queue) - self._cross_lost_seen
        self._cross_delivered_seen = counters.delivered
        self._cross_lost_seen = counters.dropped_loss + counters.dropped_queue
        total = self.cross.offered_bytes(interval_us / MS, delivered, lost)
        size = self.cross.cfg.packet_bytes
        n = (total + size - 1) // size
        for i in range(n):
            self._cross_seq += 1
            chunk = min(size, total - i * size)
            t = now_us + (i * interval_us) // max(n, 1)
            self.sim.send(self.forward, SimPacket(self._cross_seq, "cross", chunk, t))

    def advance(self, t_us: int) -> None:
        self.sim.run_until(t_us)

    def close_window(self, start_us: int, len_us: int) -> ObservationWindow:
        return self.receiver.close_window(start_us, len_us)

    def media_totals(self) -> dict[str, int]:
        c = self.forward.counters_for("media")
        return {
            "sent": c.sent,
            "delivered": c.delivered,
            "dropped_loss": c.dropped_loss,
            "dropped_queue": c.dropped_queue,
            "in_flight": c.in_flight,
        }
