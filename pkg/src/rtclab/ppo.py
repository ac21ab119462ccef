"""PPO training loop for the recurrent policy.

Rollouts are collected from a set of environments stepped synchronously in
lockstep (one policy forward per step, batched across environments), which
is deterministic for any worker count. Episodes draw traces from the corpus
with per-environment seeded RNGs and auto-reset on completion; the GRU
hidden state is zeroed at episode boundaries.

Updates use GAE advantages (normalized per batch) and the clipped surrogate
objective; minibatches are contiguous sequence chunks replayed from stored
per-step hidden states, so truncated backprop stays within chunks.
"""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .env import Action, EnvConfig, RtcEnv
from .neural import Adam, RecurrentPolicy, PolicyConfig, Var, backward, clip_grad_norm
from .neural.checkpoint import save_params
from .neural.policy import LOG_2PI
from .traces import NetworkTrace

__all__ = [
    "PpoConfig",
    "PpoDiagnostics",
    "RolloutBuffer",
    "TrainResult",
    "TrainingAbortedError",
    "VecEnvRunner",
    "collect_rollouts",
    "compute_gae",
    "ppo_update",
    "train",
]

TRAIN_LOG_HEADER = ["iteration", "steps", "mean_reward", "policy_loss",
                    "value_loss", "entropy", "clip_fraction"]


class TrainingAbortedError(RuntimeError):
    """Raised when an update hit a non-finite loss; old parameters were kept."""


@dataclass
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    epochs: int = 4
    minibatch_size: int = 1024
    chunk_len: int = 64
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    horizon: int = 512
    workers: int = 8
    max_grad_norm: float = 0.5
    learning_rate: float = 3e-5

    def validate(self) -> None:
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if not (0.0 <= self.gae_lambda <= 1.0):
            raise ValueError(f"gae_lambda must be in [0, 1], got {self.gae_lambda}")
        if self.clip_epsilon <= 0:
            raise ValueError(f"clip_epsilon must be > 0, got {self.clip_epsilon}")
        if self.horizon % self.chunk_len != 0:
            raise ValueError(
                f"horizon {self.horizon} must be a multiple of chunk_len {self.chunk_len}")
        if self.workers < 1 or self.epochs < 1:
            raise ValueError("workers and epochs must be >= 1")


@dataclass
class RolloutBuffer:
    """Fixed-horizon transition storage, time-major (horizon, n_envs)."""

    states: np.ndarray    # (T, N, state_dim)
    actions: np.ndarray   # (T, N) raw in (0, 1)
    logps: np.ndarray     # (T, N)
    rewards: np.ndarray   # (T, N)
    values: np.ndarray    # (T, N)
    dones: np.ndarray     # (T, N) 1.0 at episode-ending steps
    hiddens: np.ndarray   # (T, N, hidden) hidden fed to the policy at t
    bootstrap_values: np.ndarray  # (N,) value of the state after the last step

    @property
    def horizon(self) -> int:
        return self.states.shape[0]

    @property
    def n_envs(self) -> int:
        return self.states.shape[1]


class VecEnvRunner:
    """Synchronous bank of environments over a trace corpus.

    Each slot runs one episode at a time; on completion it re-seeds and
    resets on a freshly drawn trace. Fully deterministic in the base seed.
    """

    def __init__(self, corpus: Sequence[NetworkTrace], n_envs: int, seed: int,
                 env_factory: Callable[[NetworkTrace, int], EnvConfig] | None = None):
        if not corpus:
            raise ValueError("trace corpus is empty")
        self.corpus = list(corpus)
        self.env_factory = env_factory or (lambda tr, s: EnvConfig(trace=tr, seed=s))
        self._rngs = [random.Random((seed << 20) ^ (i * 2654435761 & 0x7FFFFFFF))
                      for i in range(n_envs)]
        self.envs: list[RtcEnv] = []
        states = []
        for i in range(n_envs):
            env, state = self._fresh_env(i)
            self.envs.append(env)
            states.append(state)
        self.states = np.stack(states)

    def _fresh_env(self, i: int) -> tuple[RtcEnv, np.ndarray]:
        rng = self._rngs[i]
        trace = self.corpus[rng.randrange(len(self.corpus))]
        env = RtcEnv(self.env_factory(trace, rng.getrandbits(31)))
        return env, env.reset()

    def step(self, raw_actions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Advance every env one window; returns (rewards, dones) and swaps
        completed episodes for fresh ones in place."""
        n = len(self.envs)
        rewards = np.empty(n)
        dones = np.zeros(n)
        for i in range(n):
            result = self.envs[i].step(Action.from_raw(float(raw_actions[i])))
            rewards[i] = result.reward
            if result.done:
                dones[i] = 1.0
                self.envs[i], self.states[i] = self._fresh_env(i)
            else:
                self.states[i] = result.state
        return rewards, dones


def collect_rollouts(policy: RecurrentPolicy, runner: VecEnvRunner, horizon: int,
                     rng: np.random.Generator, hidden: np.ndarray
                     ) -> tuple[RolloutBuffer, np.ndarray]:
    """Roll the policy for ``horizon`` steps per env on a parameter snapshot.

    ``hidden`` carries recurrent state across calls within an episode and is
    zeroed at episode boundaries; the updated hidden is returned for the next
    collection phase.
    """
    n = len(runner.envs)
    state_dim = runner.states.shape[1]
    buf = RolloutBuffer(
        states=np.empty((horizon, n, state_dim)),
        actions=np.empty((horizon, n)),
        logps=np.empty((horizon, n)),
        rewards=np.empty((horizon, n)),
        values=np.empty((horizon, n)),
        dones=np.empty((horizon, n)),
        hiddens=np.empty((horizon, n, hidden.shape[1])),
        bootstrap_values=np.empty(n),
    )
    for t in range(horizon):
        buf.states[t] = runner.states
        buf.hiddens[t] = hidden
        raw, logp, value, hidden = policy.act(runner.states, hidden, rng)
        rewards, dones = runner.step(raw)
        buf.actions[t] = raw
        buf.logps[t] = logp
        buf.values[t] = value
        buf.rewards[t] = rewards
        buf.dones[t] = dones
        if dones.any():
            hidden = hidden * (1.0 - dones)[:, None]
    _, boot_value, _ = policy.forward_np(runner.states, hidden)
    buf.bootstrap_values[:] = boot_value
    return buf, hidden


def compute_gae(buf: RolloutBuffer, gamma: float, lam: float
                ) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and value targets (both (T, N)).

    Terminal steps cut the bootstrap: no value flows across ``done``.
    Advantages are returned raw; normalization happens per update batch.
    """
    horizon = buf.horizon
    adv = np.zeros_like(buf.rewards)
    last = np.zeros(buf.n_envs)
    for t in reversed(range(horizon)):
        nonterminal = 1.0 - buf.dones[t]
        next_value = buf.values[t + 1] if t + 1 < horizon else buf.bootstrap_values
        delta = buf.rewards[t] + gamma * next_value * nonterminal - buf.values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
    targets = adv + buf.values
    return adv, targets


@dataclass
class PpoDiagnostics:
    policy_loss: float = 0.0
    value_loss: float = 0.0
    entropy: float = 0.0
    clip_fraction: float = 0.0
    approx_kl: float = 0.0
    grad_norm: float = 0.0
    updates: int = 0
    aborted: bool = False


def _time_major_flat(x: np.ndarray) -> np.ndarray:
    """(B, L) or (B, L, F) chunk arrays -> (L*B, 1|F), step 0's batch first."""
    if x.ndim == 2:
        return x.T.reshape(-1, 1)
    return x.transpose(1, 0, 2).reshape(-1, x.shape[2])


def ppo_update(policy: RecurrentPolicy, optimizer: Adam, buf: RolloutBuffer,
               advantages: np.ndarray, targets: np.ndarray, cfg: PpoConfig,
               rng: np.random.Generator) -> PpoDiagnostics:
    """Clipped-surrogate epochs over contiguous sequence chunks.

    On any non-finite loss the update stops, parameters and optimizer state
    roll back to their pre-update snapshot, and the diagnostics flag the
    abort; the caller decides whether to continue.
    """
    cfg.validate()
    horizon, n_envs = buf.rewards.shape
    length = cfg.chunk_len
    flat_adv = advantages.reshape(-1)
    mean, std = flat_adv.mean(), flat_adv.std()
    norm_adv = (advantages - mean) / max(std, 1e-8)

    chunks = [(env, t0) for env in range(n_envs) for t0 in range(0, horizon, length)]
    per_batch = max(1, cfg.minibatch_size // length)

    params = policy.params()
    snapshot = policy.param_arrays()
    adam_snapshot = (optimizer.step_count,
                     {k: v.copy() for k, v in optimizer.m.items()},
                     {k: v.copy() for k, v in optimizer.v.items()})
    diag = PpoDiagnostics()
    eps = cfg.clip_epsilon
    ent_const = 0.5 * (1.0 + LOG_2PI)

    for _ in range(cfg.epochs):
        order = rng.permutation(len(chunks))
        for start in range(0, len(chunks), per_batch):
            group = [chunks[i] for i in order[start:start + per_batch]]
            states = np.stack([buf.states[t0:t0 + length, e] for e, t0 in group])
            dones = np.stack([buf.dones[t0:t0 + length, e] for e, t0 in group])
            h0 = np.stack([buf.hiddens[t0, e] for e, t0 in group])
            actions = _time_major_flat(np.stack(
                [buf.actions[t0:t0 + length, e] for e, t0 in group]))
            old_logp = _time_major_flat(np.stack(
                [buf.logps[t0:t0 + length, e] for e, t0 in group]))
            adv = _time_major_flat(np.stack(
                [norm_adv[t0:t0 + length, e] for e, t0 in group]))
            tgt = _time_major_flat(np.stack(
                [targets[t0:t0 + length, e] for e, t0 in group]))

            mean_v, value_v, log_std_v = policy.forward_chunk_tape(states, h0, dones)
            u = np.log(actions) - np.log1p(-actions)
            jacobian = np.log(actions * (1.0 - actions))
            diff = Var(u) - mean_v
            inv_std = (-log_std_v).exp()
            gauss = (diff * inv_std).square() * -0.5 - log_std_v - 0.5 * LOG_2PI
            logp_new = gauss - jacobian
            ratio = (logp_new - old_logp).exp()
            surrogate = (ratio * adv).minimum(ratio.clip(1.0 - eps, 1.0 + eps) * adv)
            policy_loss = -surrogate.mean()
            value_loss = (value_v - tgt).square().mean()
            entropy = (log_std_v + ent_const).mean()
            total = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy

            if not np.isfinite(total.data):
                policy.load_param_arrays(snapshot)
                optimizer.step_count = adam_snapshot[0]
                optimizer.m = adam_snapshot[1]
                optimizer.v = adam_snapshot[2]
                diag.aborted = True
                return diag

            backward(total, params)
            diag.grad_norm += clip_grad_norm(params, cfg.max_grad_norm)
            optimizer.step()

            ratio_np = ratio.data
            diag.policy_loss += float(policy_loss.data)
            diag.value_loss += float(value_loss.data)
            diag.entropy += float(entropy.data)
            diag.clip_fraction += float(np.mean(np.abs(ratio_np - 1.0) > eps))
            diag.approx_kl += float(np.mean(old_logp - logp_new.data))
            diag.updates += 1

    if diag.updates:
        for name in ("policy_loss", "value_loss", "entropy", "clip_fraction",
                     "approx_kl", "grad_norm"):
            setattr(diag, name, getattr(diag, name) / diag.updates)
    return diag


@dataclass
class TrainResult:
    log_rows: list[dict]
    final_params: dict[str, np.ndarray]
    best_params: dict[str, np.ndarray]
    best_eval_reward: float
    checkpoint_path: Path | None = None
    best_checkpoint_path: Path | None = None
    log_path: Path | None = None


def train(corpus: Sequence[NetworkTrace], cfg: PpoConfig, iterations: int,
          seed: int = 0, policy_cfg: PolicyConfig = PolicyConfig(),
          out_dir: str | Path | None = None,
          env_factory: Callable[[NetworkTrace, int], EnvConfig] | None = None,
          eval_traces: Sequence[NetworkTrace] | None = None,
          eval_every: int = 10,
          progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Full training run: collect, GAE, update, log, checkpoint.

    The best checkpoint is chosen by deterministic-policy mean reward on
    ``eval_traces`` when given, else by rollout mean reward. Deterministic
    for a fixed seed (workers are stepped synchronously, never in parallel
    threads).
    """
    cfg.validate()
    if not corpus:
        raise ValueError("trace corpus is empty")
    policy = RecurrentPolicy(policy_cfg, seed=seed)
    optimizer = Adam(policy.params(), lr=cfg.learning_rate)
    runner = VecEnvRunner(corpus, cfg.workers, seed, env_factory)
    action_rng = np.random.default_rng(seed + 1)
    update_rng = np.random.default_rng(seed + 2)
    hidden = policy.initial_hidden(cfg.workers)

    best_reward = -math.inf
    best_params = policy.param_arrays()
    log_rows: list[dict] = []

    def eval_reward() -> float:
        if eval_traces:
            from .evaluate import evaluate
            from .estimators import PolicyEstimator
            summary, _ = evaluate(PolicyEstimator(policy), eval_traces, seed=seed)
            return summary.reward_mean
        return log_rows[-1]["mean_reward"] if log_rows else -math.inf

    aborted = False
    for it in range(1, iterations + 1):
        buf, hidden = collect_rollouts(policy, runner, cfg.horizon, action_rng, hidden)
        adv, targets = compute_gae(buf, cfg.gamma, cfg.gae_lambda)
        diag = ppo_update(policy, optimizer, buf, adv, targets, cfg, update_rng)
        row = {
            "iteration": it,
            "steps": it * cfg.horizon * cfg.workers,
            "mean_reward": float(buf.rewards.mean()),
            "policy_loss": diag.policy_loss,
            "value_loss": diag.value_loss,
            "entropy": diag.entropy,
            "clip_fraction": diag.clip_fraction,
        }
        log_rows.append(row)
        if progress is not None:
            progress(row)
        if diag.aborted:
            aborted = True
            break
        if it % eval_every == 0 or it == iterations:
            candidate = eval_reward()
            if candidate > best_reward:
                best_reward = candidate
                best_params = policy.param_arrays()

    if iterations == 0:
        best_params = policy.param_arrays()

    result = TrainResult(
        log_rows=log_rows,
        final_params=policy.param_arrays(),
        best_params=best_params,
        best_eval_reward=best_reward,
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.checkpoint_path = out / "checkpoint.bin"
        result.best_checkpoint_path = out / "checkpoint_best.bin"
        result.log_path = out / "training_log.csv"
        save_params(result.checkpoint_path, result.final_params)
        save_params(result.best_checkpoint_path, result.best_params)
        with open(result.log_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=TRAIN_LOG_HEADER)
            writer.writeheader()
            writer.writerows(log_rows)
    if aborted:
        raise TrainingAbortedError(
            f"non-finite loss at iteration {len(log_rows)}; parameters rolled back, "
            f"partial log retained")
    return result
