"""Recurrent actor-critic over the 4-dim link state.

Shared trunk: linear(4 -> trunk) + leaky ReLU (slope 0.01) + GRU. Two heads
read the same recurrent features: the actor emits a pre-sigmoid action mean
(squashed to (0, 1)), the critic a scalar value. Exploration is a single
learnable log-std on the pre-sigmoid variable; sampled values are squashed
through the same sigmoid, and log-probabilities include the squash Jacobian.

Forward passes on a parameter snapshot are pure; a single trainer mutates
parameters between rollout phases (snapshot-and-swap).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Var, concat_rows
from .layers import (GruCellParams, fan_in_uniform, gru_cell, gru_cell_tape,
                     gru_init, leaky_relu, sigmoid)

__all__ = [
    "MEAN_EPS",
    "PolicyConfig",
    "RecurrentPolicy",
    "squashed_logp",
]

MEAN_EPS = 1e-6  # sigmoid outputs are clamped to [eps, 1-eps] for finite log-probs
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PolicyConfig:
    state_dim: int = 4
    trunk_dim: int = 64
    hidden_dim: int = 64
    leaky_slope: float = 0.01
    log_std_init: float = -1.0
    log_std_bounds: tuple[float, float] = (-4.0, 1.0)


def squashed_logp(action_raw: np.ndarray, mean_presig: np.ndarray,
                  log_std: float) -> np.ndarray:
    """Log-density of a squashed-Gaussian action already clamped to (0, 1)."""
    u = np.log(action_raw) - np.log1p(-action_raw)  # logit
    std = math.exp(log_std)
    gauss = -0.5 * ((u - mean_presig) / std) ** 2 - log_std - 0.5 * LOG_2PI
    return gauss - np.log(action_raw * (1.0 - action_raw))


class RecurrentPolicy:
    """GRU actor-critic with named parameters, numpy and taped forwards."""

    def __init__(self, cfg: PolicyConfig = PolicyConfig(), seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        trunk_w = fan_in_uniform(rng, (cfg.state_dim, cfg.trunk_dim), cfg.state_dim)
        gru = gru_init(rng, cfg.trunk_dim, cfg.hidden_dim)
        actor_w = fan_in_uniform(rng, (cfg.hidden_dim, 1), cfg.hidden_dim)
        critic_w = fan_in_uniform(rng, (cfg.hidden_dim, 1), cfg.hidden_dim)
        self._params: dict[str, Var] = {
            "trunk.W": Var(trunk_w),
            "trunk.b": Var(np.zeros(cfg.trunk_dim)),
            "gru.W_z": Var(gru.W_z), "gru.W_r": Var(gru.W_r), "gru.W_n": Var(gru.W_n),
            "gru.U_z": Var(gru.U_z), "gru.U_r": Var(gru.U_r), "gru.U_n": Var(gru.U_n),
            "gru.b_z": Var(gru.b_z), "gru.b_r": Var(gru.b_r), "gru.b_n": Var(gru.b_n),
            "actor.W": Var(actor_w),
            "actor.b": Var(np.zeros(1)),
            "critic.W": Var(critic_w),
            "critic.b": Var(np.zeros(1)),
            "log_std": Var(np.array([cfg.log_std_init])),
        }

    # -- parameter plumbing ---------------------------------------------------

    def params(self) -> dict[str, Var]:
        return self._params

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_param_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(arrays)
        if missing:
            raise ValueError(f"missing parameter tensors: {sorted(missing)}")
        for name, var in self._params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.size != var.data.size:
                raise ValueError(
                    f"tensor '{name}' has {arr.size} values, expected {var.data.size}")
            var.data = arr.reshape(var.data.shape).copy()

    def gru_param_struct(self) -> GruCellParams:
        p = self._params
        return GruCellParams(
            W_z=p["gru.W_z"].data, W_r=p["gru.W_r"].data, W_n=p["gru.W_n"].data,
            U_z=p["gru.U_z"].data, U_r=p["gru.U_r"].data, U_n=p["gru.U_n"].data,
            b_z=p["gru.b_z"].data, b_r=p["gru.b_r"].data, b_n=p["gru.b_n"].data,
        )

    def log_std_value(self) -> float:
        lo, hi = self.cfg.log_std_bounds
        return float(np.clip(self._params["log_std"].data[0], lo, hi))

    def initial_hidden(self, n: int) -> np.ndarray:
        return np.zeros((n, self.cfg.hidden_dim))

    # -- inference (no graph) ---------------------------------------------------

    def forward_np(self, states: np.ndarray, hidden: np.ndarray
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Returns (pre-sigmoid action mean, value, next hidden), batched."""
        p = self._params
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        x = leaky_relu(states @ p["trunk.W"].data + p["trunk.b"].data,
                       self.cfg.leaky_slope)
        h_next = gru_cell(self.gru_param_struct(), x, hidden)
        mean = (h_next @ p["actor.W"].data + p["actor.b"].data)[:, 0]
        value = (h_next @ p["critic.W"].data + p["critic.b"].data)[:, 0]
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(value))):
            raise FloatingPointError("non-finite policy head output")
        return mean, value, h_next

    def act(self, states: np.ndarray, hidden: np.ndarray,
            rng: np.random.Generator | None = None, deterministic: bool = False
            ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Sample (or take the mean of) the squashed action distribution.

        Returns (action raw in (0,1), log-prob, value, next hidden).
        """
        mean, value, h_next = self.forward_np(states, hidden)
        log_std = self.log_std_value()
        if deterministic or rng is None:
            u = mean
        else:
            u = mean + math.exp(log_std) * rng.standard_normal(mean.shape[0])
        raw = np.clip(sigmoid(u), MEAN_EPS, 1.0 - MEAN_EPS)
        logp = squashed_logp(raw, mean, log_std)
        return raw, logp, value, h_next

    # -- training forward (tape) -------------------------------------------------

    def forward_chunk_tape(self, states: np.ndarray, h0: np.ndarray,
                           dones: np.ndarray) -> tuple[Var, Var, Var]:
        """Unroll the trunk+GRU over contiguous chunks.

        ``states`` is (B, L, state_dim), ``h0`` the stored hidden at each
        chunk start, ``dones`` (B, L) episode-end flags; the hidden state is
        zeroed after a terminal step so no gradient flows across episodes.
        Returns (mean_presig, value, clamped log_std); the first two are
        stacked to (L*B, 1) in time-major blocks (all of step 0, then 1, ...).
        """
        p = self._params
        _, length, _ = states.shape
        gru_p = {k.split(".", 1)[1]: v for k, v in p.items() if k.startswith("gru.")}
        h = Var(h0)
        hs: list[Var] = []
        for t in range(length):
            if t > 0:
                h = h * (1.0 - dones[:, t - 1:t])  # zero hidden after a terminal
            x_t = (Var(states[:, t, :]) @ p["trunk.W"] + p["trunk.b"]
                   ).leaky_relu(self.cfg.leaky_slope)
            h = gru_cell_tape(gru_p, x_t, h)
            hs.append(h)
        h_stack = concat_rows(hs)  # (L*B, hidden), time-major
        mean = h_stack @ p["actor.W"] + p["actor.b"]
        value = h_stack @ p["critic.W"] + p["critic.b"]
        lo, hi = self.cfg.log_std_bounds
        log_std = p["log_std"].clip(lo, hi)
        return mean, value, log_std
