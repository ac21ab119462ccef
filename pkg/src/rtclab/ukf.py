"""Unscented Kalman Filter plus rule controller: the non-learned baseline.

The filter tracks a 2-dim state, [available bandwidth kb/s, queuing-delay
gradient ms/step], with a random-walk process model. The measurement is the
windowed receive rate and the window-to-window RTT delta; the measurement
model caps the predicted receive rate at the rate most recently sent, since
delivery can never exceed the offered load. The rule controller converts the
filtered delay gradient into multiplicative rate decisions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RuleControllerState",
    "UkfConfig",
    "UkfState",
    "UtParams",
    "rule_control",
    "sigma_points",
    "ukf_step",
]

JITTER = 1e-9


@dataclass(frozen=True)
class UtParams:
    """Unscented-transform spread parameters."""

    alpha: float = 0.5
    beta: float = 2.0
    kappa: float = 0.0

    def validate(self) -> None:
        if not (0 < self.alpha <= 1):
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.kappa < 0:
            raise ValueError(f"kappa must be >= 0, got {self.kappa}")


def sigma_points(mean: np.ndarray, cov: np.ndarray, params: UtParams
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Deterministic sample of (mean, cov): 2n+1 points plus UT weights.

    Returns ``(points, w_mean, w_cov)`` with ``points[0] == mean`` and the
    rest at mean +/- columns of the scaled Cholesky factor. Mean weights sum
    to 1 exactly. A non-PD covariance gets one jittered retry before failing.
    """
    params.validate()
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    n = mean.shape[0]
    lam = params.alpha ** 2 * (n + params.kappa) - n
    scale = n + lam
    if scale <= 0:
        raise ValueError(f"n + lambda must be > 0, got {scale}")
    try:
        root = np.linalg.cholesky(scale * cov)
    except np.linalg.LinAlgError:
        try:
            root = np.linalg.cholesky(scale * (cov + JITTER * np.eye(n)))
        except np.linalg.LinAlgError:
            raise np.linalg.LinAlgError(
                "covariance is not positive definite even after jitter") from None
    points = np.empty((2 * n + 1, n))
    points[0] = mean
    for i in range(n):
        points[1 + i] = mean + root[:, i]
        points[1 + n + i] = mean - root[:, i]
    w_mean = np.full(2 * n + 1, 1.0 / (2.0 * scale))
    w_cov = w_mean.copy()
    w_mean[0] = lam / scale
    w_cov[0] = lam / scale + (1.0 - params.alpha ** 2 + params.beta)
    return points, w_mean, w_cov


@dataclass
class UkfConfig:
    """Filter priors and noise levels; all tunable, none published upstream."""

    prior_mean: tuple[float, float] = (300.0, 0.0)
    prior_std: tuple[float, float] = (500.0, 5.0)
    process_std: tuple[float, float] = (150.0, 1.0)
    measurement_std: tuple[float, float] = (200.0, 1.0)
    ut: UtParams = field(default_factory=UtParams)
    divergence_trace: float = 1e8

    def initial_state(self) -> "UkfState":
        return UkfState(
            mean=np.array(self.prior_mean, dtype=np.float64),
            cov=np.diag(np.square(self.prior_std)).astype(np.float64),
            config=self,
        )


@dataclass
class UkfState:
    mean: np.ndarray
    cov: np.ndarray
    config: UkfConfig
    diverged: bool = False

    @property
    def bandwidth_kbps(self) -> float:
        return float(self.mean[0])

    @property
    def delay_gradient_ms(self) -> float:
        return float(self.mean[1])


def _measure(points: np.ndarray, last_sent_kbps: float) -> np.ndarray:
    """Predicted measurement per sigma point: receive rate saturates at the
    offered rate, the delay gradient is observed directly."""
    out = points.copy()
    np.minimum(out[:, 0], last_sent_kbps, out=out[:, 0])
    return out


def ukf_step(state: UkfState, z, last_sent_kbps: float = math.inf
             ) -> tuple[UkfState, np.ndarray]:
    """One predict/update cycle; returns the new state and filtered mean.

    The process model is a random walk (predict adds process noise only).
    If the covariance trace blows past the divergence guard, the filter is
    re-initialized from its priors and flagged.
    """
    cfg = state.config
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError(f"measurement must be finite, got {z}")
    q = np.diag(np.square(cfg.process_std))
    rm = np.diag(np.square(cfg.measurement_std))

    mean_pred = state.mean.copy()
    cov_pred = state.cov + q

    points, w_mean, w_cov = sigma_points(mean_pred, cov_pred, cfg.ut)
    z_points = _measure(points, last_sent_kbps)
    z_pred = w_mean @ z_points
    dz = z_points - z_pred
    dx = points - mean_pred
    s = (dz * w_cov[:, None]).T @ dz + rm
    c = (dx * w_cov[:, None]).T @ dz
    gain = c @ np.linalg.inv(s)
    mean_new = mean_pred + gain @ (z - z_pred)
    cov_new = cov_pred - gain @ s @ gain.T
    cov_new = 0.5 * (cov_new + cov_new.T)  # keep symmetric against round-off

    if np.trace(cov_new) > cfg.divergence_trace:
        fresh = cfg.initial_state()
        fresh.diverged = True
        return fresh, fresh.mean.copy()
    new_state = UkfState(mean=mean_new, cov=cov_new, config=cfg, diverged=False)
    return new_state, mean_new.copy()


@dataclass
class RuleControllerState:
    """Delay-gradient rate controller: multiplicative increase/decrease.

    A gradient above the overuse threshold means the queue is building, so
    back off below the measured receive rate; a gradient below the underuse
    threshold triggers multiplicative growth; anything between holds. The
    output is always clamped to [min, max] kb/s and never exceeds the
    filter's bandwidth mean.
    """

    estimate_kbps: float = 300.0
    mode: str = "hold"  # increase | hold | decrease
    overuse_threshold_ms: float = 2.0
    underuse_threshold_ms: float = -2.0
    up_factor: float = 1.05
    down_factor: float = 0.85
    min_kbps: float = 10.0
    max_kbps: float = 8000.0
    last_receive_rate_kbps: float = 0.0

    def validate(self) -> None:
        if not (self.down_factor < 1.0 < self.up_factor):
            raise ValueError("need down_factor < 1 < up_factor")


def rule_control(ctrl: RuleControllerState, ukf_bandwidth_kbps: float,
                 delay_gradient_ms: float) -> float:
    """Apply one controller decision; mutates ``ctrl`` and returns the estimate."""
    if not (math.isfinite(ukf_bandwidth_kbps) and math.isfinite(delay_gradient_ms)):
        raise ValueError("controller inputs must be finite")
    if delay_gradient_ms > ctrl.overuse_threshold_ms:
        ctrl.mode = "decrease"
        estimate = ctrl.estimate_kbps * ctrl.down_factor
        if ctrl.last_receive_rate_kbps > 0:
            estimate = min(estimate, ctrl.last_receive_rate_kbps * ctrl.down_factor)
    elif delay_gradient_ms < ctrl.underuse_threshold_ms:
        ctrl.mode = "increase"
        estimate = ctrl.estimate_kbps * ctrl.up_factor
    else:
        ctrl.mode = "hold"
        estimate = ctrl.estimate_kbps
    estimate = min(estimate, ukf_bandwidth_kbps)
    ctrl.estimate_kbps = min(max(estimate, ctrl.min_kbps), ctrl.max_kbps)
    return ctrl.estimate_kbps
