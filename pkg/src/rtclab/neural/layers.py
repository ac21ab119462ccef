"""Network building blocks: linear layers and GRU cells, in two flavors.

Every layer has a plain-numpy forward (used on the rollout hot path, no
graph bookkeeping) and a taped forward over :class:`Var` (used in training
updates). Both compute identical arithmetic.

Conventions: activations are row vectors, batched as (batch, features);
input weights are (in_features, out_features); recurrent weights are
(hidden, hidden); biases are (features,).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Var

__all__ = [
    "GruCellParams",
    "fan_in_uniform",
    "gru_cell",
    "gru_cell_tape",
    "gru_init",
    "leaky_relu",
    "linear",
    "linear_init",
    "linear_tape",
    "orthogonal",
    "sigmoid",
]


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def leaky_relu(x, slope: float = 0.01):
    """Identity for x >= 0, ``slope * x`` below; works on arrays and Vars."""
    if isinstance(x, Var):
        return x.leaky_relu(slope)
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, x, slope * x)


# -- initializers -------------------------------------------------------------

def fan_in_uniform(rng: np.random.Generator, shape: tuple[int, ...],
                   fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def orthogonal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Orthogonal matrix via QR of a Gaussian draw, sign-fixed for uniqueness."""
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(q[:rows, :cols])


def linear_init(rng: np.random.Generator, in_dim: int, out_dim: int
                ) -> tuple[np.ndarray, np.ndarray]:
    w = fan_in_uniform(rng, (in_dim, out_dim), in_dim)
    b = np.zeros(out_dim)
    return w, b


# -- linear -------------------------------------------------------------------

def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ w + b


def linear_tape(x: Var, w: Var, b: Var) -> Var:
    return x @ w + b


# -- GRU ------------------------------------------------------------------------

@dataclass
class GruCellParams:
    """Gate parameters; W_* act on the input, U_* on the hidden state."""

    W_z: np.ndarray
    W_r: np.ndarray
    W_n: np.ndarray
    U_z: np.ndarray
    U_r: np.ndarray
    U_n: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_n: np.ndarray

    def check_shapes(self) -> None:
        in_dim, hidden = self.W_z.shape
        for name in ("W_r", "W_n"):
            if getattr(self, name).shape != (in_dim, hidden):
                raise ValueError(f"{name} must be ({in_dim}, {hidden})")
        for name in ("U_z", "U_r", "U_n"):
            if getattr(self, name).shape != (hidden, hidden):
                raise ValueError(f"{name} must be ({hidden}, {hidden})")
        for name in ("b_z", "b_r", "b_n"):
            if getattr(self, name).shape != (hidden,):
                raise ValueError(f"{name} must be ({hidden},)")


def gru_init(rng: np.random.Generator, in_dim: int, hidden: int) -> GruCellParams:
    """Recurrent weights orthogonal, input weights fan-in uniform, zero biases."""
    return GruCellParams(
        W_z=fan_in_uniform(rng, (in_dim, hidden), in_dim),
        W_r=fan_in_uniform(rng, (in_dim, hidden), in_dim),
        W_n=fan_in_uniform(rng, (in_dim, hidden), in_dim),
        U_z=orthogonal(rng, hidden, hidden),
        U_r=orthogonal(rng, hidden, hidden),
        U_n=orthogonal(rng, hidden, hidden),
        b_z=np.zeros(hidden),
        b_r=np.zeros(hidden),
        b_n=np.zeros(hidden),
    )


def gru_cell(p: GruCellParams, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """One GRU update on plain arrays.

    z = sigm(x W_z + h U_z + b_z)
    r = sigm(x W_r + h U_r + b_r)
    n = tanh(x W_n + r * (h U_n + b_n))
    h' = (1 - z) * n + z * h
    """
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if x.shape[-1] != p.W_z.shape[0] or h.shape[-1] != p.U_z.shape[0]:
        raise ValueError(
            f"shape mismatch: x has {x.shape[-1]} features (want {p.W_z.shape[0]}), "
            f"h has {h.shape[-1]} (want {p.U_z.shape[0]})")
    z = sigmoid(x @ p.W_z + h @ p.U_z + p.b_z)
    r = sigmoid(x @ p.W_r + h @ p.U_r + p.b_r)
    n = np.tanh(x @ p.W_n + r * (h @ p.U_n + p.b_n))
    return (1.0 - z) * n + z * h


def gru_cell_tape(p: dict[str, Var], x: Var, h: Var) -> Var:
    """Taped twin of :func:`gru_cell`; ``p`` maps gate names to Vars."""
    z = (x @ p["W_z"] + h @ p["U_z"] + p["b_z"]).sigmoid()
    r = (x @ p["W_r"] + h @ p["U_r"] + p["b_r"]).sigmoid()
    n = (x @ p["W_n"] + r * (h @ p["U_n"] + p["b_n"])).tanh()
    return (1.0 - z) * n + z * h
