"""Bandwidth estimators behind one interface: observe a window, emit kb/s.

Both the UKF baseline and the learned policy implement ``reset()`` plus
``observe(window) -> kb/s`` so the evaluation harness can A/B them on
identical traces. The oracle and fixed estimators exist for pipeline
sanity checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .endpoints import ObservationWindow
from .env import StateScaling, scale_state
from .neural import PolicyConfig, RecurrentPolicy, load_params
from .traces import NetworkTrace, trace_at
from .ukf import RuleControllerState, UkfConfig, rule_control, ukf_step

__all__ = [
    "BandwidthEstimator",
    "FixedEstimator",
    "OracleEstimator",
    "PolicyEstimator",
    "UkfEstimator",
    "UkfEstimatorConfig",
    "load_policy_estimator",
]


class BandwidthEstimator:
    """Interface: one estimate per closed window."""

    name = "estimator"

    def reset(self) -> None:
        raise NotImplementedError

    def observe(self, window: ObservationWindow) -> float:
        raise NotImplementedError


@dataclass
class UkfEstimatorConfig:
    ukf: UkfConfig = field(default_factory=UkfConfig)
    initial_estimate_kbps: float = 300.0
    # hold-mode probing: grow toward the filter's bandwidth mean while the
    # current estimate is being delivered in full, so the controller can
    # discover headroom even when queues stay flat
    probe_factor: float = 1.05
    probe_delivery_ratio: float = 0.9


class UkfEstimator(BandwidthEstimator):
    """UKF + delay-gradient rule controller."""

    name = "ukf"

    def __init__(self, cfg: UkfEstimatorConfig | None = None):
        self.cfg = cfg or UkfEstimatorConfig()
        self.reset()

    def reset(self) -> None:
        self.state = self.cfg.ukf.initial_state()
        self.ctrl = RuleControllerState(estimate_kbps=self.cfg.initial_estimate_kbps)
        self._prev_rtt_ms: float | None = None
        self._last_estimate = self.cfg.initial_estimate_kbps

    def observe(self, window: ObservationWindow) -> float:
        if not window.valid:
            return self._last_estimate
        delta = 0.0 if self._prev_rtt_ms is None else window.avg_rtt_ms - self._prev_rtt_ms
        self._prev_rtt_ms = window.avg_rtt_ms
        self.state, mean = ukf_step(
            self.state, np.array([window.receive_rate_kbps, delta]),
            last_sent_kbps=self._last_estimate)
        self.ctrl.last_receive_rate_kbps = window.receive_rate_kbps
        estimate = rule_control(self.ctrl, mean[0], mean[1])
        if (self.ctrl.mode == "hold"
                and window.receive_rate_kbps >= self.cfg.probe_delivery_ratio * estimate
                and mean[0] > estimate):
            probed = min(estimate * self.cfg.probe_factor, mean[0], self.ctrl.max_kbps)
            self.ctrl.estimate_kbps = probed
            estimate = probed
        self._last_estimate = estimate
        return estimate


class PolicyEstimator(BandwidthEstimator):
    """Learned recurrent policy driven deterministically (mean action)."""

    name = "rnn"

    def __init__(self, policy: RecurrentPolicy,
                 scaling: StateScaling = StateScaling(),
                 action_max_kbps: float = 8000.0):
        self.policy = policy
        self.scaling = scaling
        self.action_max_kbps = action_max_kbps
        self.reset()

    def reset(self) -> None:
        self._hidden = self.policy.initial_hidden(1)

    def observe(self, window: ObservationWindow) -> float:
        state = scale_state(window, self.scaling)[None, :]
        raw, _, _, self._hidden = self.policy.act(state, self._hidden,
                                                  deterministic=True)
        return float(raw[0]) * self.action_max_kbps


class OracleEstimator(BandwidthEstimator):
    """Reads the true capacity off the trace; pipeline upper bound."""

    name = "oracle"

    def __init__(self, trace: NetworkTrace, step_len_ms: float = 50.0):
        self.trace = trace
        self.step_len_ms = step_len_ms

    def reset(self) -> None:
        pass

    def observe(self, window: ObservationWindow) -> float:
        # the estimate sent now governs the next window
        t = min(window.start_ms + window.len_ms, self.trace.duration_ms - 1)
        return trace_at(self.trace, t).capacity_kbps


class FixedEstimator(BandwidthEstimator):
    """Constant output, e.g. 0 to probe the sender's floor behavior."""

    def __init__(self, kbps: float, name: str = "fixed"):
        self.kbps = kbps
        self.name = name

    def reset(self) -> None:
        pass

    def observe(self, window: ObservationWindow) -> float:
        return self.kbps


def load_policy_estimator(checkpoint_path, cfg: PolicyConfig | None = None,
                          scaling: StateScaling = StateScaling()) -> PolicyEstimator:
    """Build a policy estimator from a checkpoint, validating tensor names."""
    arrays = load_params(checkpoint_path)
    hidden = arrays["gru.U_z"].shape[0] if "gru.U_z" in arrays else 64
    trunk = arrays["trunk.W"].shape[1] if "trunk.W" in arrays else 64
    state_dim = arrays["trunk.W"].shape[0] if "trunk.W" in arrays else 4
    if cfg is None:
        cfg = PolicyConfig(state_dim=state_dim, trunk_dim=trunk, hidden_dim=hidden)
    policy = RecurrentPolicy(cfg, seed=0)
    policy.load_param_arrays(arrays)
    return PolicyEstimator(policy, scaling=scaling)
