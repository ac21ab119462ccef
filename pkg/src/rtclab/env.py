"""RL environment for receiver-side bandwidth estimation.

Each step covers exactly 50 ms of simulated time: the agent's bandwidth
estimate is signalled to the sender over the (latency-bearing) feedback
path, the simulator advances one window, and the receiver's window
statistics become the next state and the reward.

State is the scaled 4-vector [receive rate, packet interval, loss rate,
RTT]; the action is a sigmoid output in (0, 1) mapped linearly onto
(0, 8000) kb/s. Reward is ``0.6*ln(4R + 1) - D - 10*L`` with R the receive
rate in Mb/s, D the average RTT in seconds, and L the loss fraction.

One environment instance per agent worker; instances are independent and
fully deterministic in (trace, seed, action sequence). The per-step info
dict carries the ground-truth capacity for metrics only; policies consume
the state vector alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .endpoints import CallSession, MediaConfig, ObservationWindow
from .netsim import MS, CrossTrafficConfig
from .traces import NetworkTrace, TraceValidationError, trace_at

__all__ = [
    "Action",
    "EnvConfig",
    "EpisodeFinishedError",
    "RtcEnv",
    "StateScaling",
    "StepResult",
    "reward",
    "scale_state",
]

ACTION_EPS = 1e-9


@dataclass(frozen=True)
class StateScaling:
    """Divisors bringing the raw window stats to a common order of magnitude."""

    rate_div: float = 1000.0      # kb/s -> Mb/s-sized numbers
    interval_div: float = 100.0   # ms -> ~unit
    rtt_div: float = 1000.0       # ms -> s


@dataclass(frozen=True)
class Action:
    """Agent output: sigmoid value in (0, 1) and its mapped bandwidth."""

    raw: float
    mapped_kbps: float

    @classmethod
    def from_raw(cls, raw: float, max_kbps: float = 8000.0) -> "Action":
        raw = min(max(raw, ACTION_EPS), 1.0 - ACTION_EPS)
        return cls(raw, raw * max_kbps)

    @classmethod
    def from_kbps(cls, kbps: float, max_kbps: float = 8000.0) -> "Action":
        return cls.from_raw(kbps / max_kbps, max_kbps)


@dataclass
class EnvConfig:
    trace: NetworkTrace
    seed: int = 0
    step_len_ms: int = 50
    warmup_estimate_kbps: float = 300.0
    action_max_kbps: float = 8000.0
    scaling: StateScaling = field(default_factory=StateScaling)
    media: MediaConfig = field(default_factory=MediaConfig)
    queue_limit_ms: float = 500.0
    cross: CrossTrafficConfig = field(default_factory=CrossTrafficConfig)

    def validate(self) -> None:
        if self.step_len_ms <= 0:
            raise ValueError(f"step_len_ms must be > 0, got {self.step_len_ms}")
        if self.trace is None:
            raise TraceValidationError("environment needs a trace")
        if self.trace.duration_ms < self.step_len_ms:
            raise TraceValidationError(
                f"trace duration {self.trace.duration_ms} ms shorter than one "
                f"{self.step_len_ms} ms step"
            )


@dataclass
class StepResult:
    state: np.ndarray
    reward: float
    done: bool
    info: dict


class EpisodeFinishedError(RuntimeError):
    """step() was called after the trace was exhausted."""


def scale_state(window: ObservationWindow, scaling: StateScaling = StateScaling()) -> np.ndarray:
    """Scaled state vector [rate, interval, loss, rtt]; always finite."""
    return np.array([
        window.receive_rate_kbps / scaling.rate_div,
        window.avg_interval_ms / scaling.interval_div,
        window.loss_rate,
        window.avg_rtt_ms / scaling.rtt_div,
    ], dtype=np.float64)


def reward(window: ObservationWindow) -> float:
    """Per-step reward: throughput, log-saturated, minus delay and loss."""
    r_mbps = window.receive_rate_kbps / 1000.0
    d_s = window.avg_rtt_ms / 1000.0
    return 0.6 * math.log(4.0 * r_mbps + 1.0) - d_s - 10.0 * window.loss_rate


class RtcEnv:
    """Episodic 50 ms-step environment over one trace.

    ``reset`` rebuilds the simulated call and runs a single warm-up step at
    a fixed default estimate so the first state reflects real deliveries.
    An episode lasts ``trace.duration_ms / step_len_ms`` windows, warm-up
    included.
    """

    def __init__(self, cfg: EnvConfig):
        cfg.validate()
        self.cfg = cfg
        self.total_steps = cfg.trace.duration_ms // cfg.step_len_ms
        self._step_len_us = cfg.step_len_ms * MS
        self._session: CallSession | None = None
        self._steps_done = 0
        self.last_window: ObservationWindow | None = None
        self.last_info: dict | None = None

    @property
    def done(self) -> bool:
        return self._steps_done >= self.total_steps

    @property
    def steps_done(self) -> int:
        return self._steps_done

    def reset(self) -> np.ndarray:
        cfg = self.cfg
        self._session = CallSession(
            cfg.trace, seed=cfg.seed, media=cfg.media,
            queue_limit_ms=cfg.queue_limit_ms, cross=cfg.cross,
            initial_target_kbps=cfg.warmup_estimate_kbps,
        )
        self._steps_done = 0
        result = self._advance_one_window(Action.from_kbps(
            cfg.warmup_estimate_kbps, cfg.action_max_kbps))
        return result.state

    def step(self, action: Action) -> StepResult:
        if self._session is None:
            raise EpisodeFinishedError("reset() must be called before step()")
        if self.done:
            raise EpisodeFinishedError(
                f"trace exhausted after {self.total_steps} windows")
        return self._advance_one_window(action)

    def _advance_one_window(self, action: Action) -> StepResult:
        session = self._session
        now_us = self._steps_done * self._step_len_us
        session.send_feedback(action.mapped_kbps, now_us)
        session.emit_media(self._step_len_us, now_us)
        session.advance(now_us + self._step_len_us)
        window = session.close_window(now_us, self._step_len_us)
        self._steps_done += 1
        capacity = trace_at(self.cfg.trace, now_us / MS).capacity_kbps
        info = {"window": window, "capacity_kbps": capacity,
                "estimate_kbps": action.mapped_kbps}
        self.last_window = window
        self.last_info = info
        return StepResult(
            state=scale_state(window, self.cfg.scaling),
            reward=reward(window),
            done=self.done,
            info=info,
        )

    def media_totals(self) -> dict[str, int]:
        if self._session is None:
            return {"sent": 0, "delivered": 0, "dropped_loss": 0,
                    "dropped_queue": 0, "in_flight": 0}
        return self._session.media_totals()


def with_trace(cfg: EnvConfig, trace: NetworkTrace, seed: int) -> EnvConfig:
    """Copy of ``cfg`` bound to a different trace and seed."""
    return replace(cfg, trace=trace, seed=seed)
