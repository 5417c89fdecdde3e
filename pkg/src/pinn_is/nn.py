"""Fully-connected networks on the autodiff tape, Adam, and checkpoints."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import autodiff as ad

ACTIVATIONS = ("sine", "tanh", "swish", "sigmoid", "relu")

_ACT_FN = {
    "sine": ad.sin,
    "tanh": ad.tanh,
    "swish": ad.swish,
    "sigmoid": ad.sigmoid,
    "relu": ad.relu,
}

CHECKPOINT_TAG = "pinn-is-checkpoint v1"


class TrainingError(RuntimeError):
    """Raised when optimisation meets non-finite numbers."""


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int
    output_dim: int
    hidden_widths: tuple[int, ...]
    activation: str = "sine"
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        object.__setattr__(self, "activation", self.activation.lower())
        if not self.hidden_widths:
            raise ValueError("hidden_widths must be non-empty")
        if min((self.input_dim, self.output_dim) + self.hidden_widths) < 1:
            raise ValueError("all layer widths must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; choose from {ACTIVATIONS}")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.input_dim,) + self.hidden_widths + (self.output_dim,)


@dataclass
class Parameters:
    """Weights ``W_l`` (fan_in x fan_out) and row-vector biases ``b_l`` (1 x fan_out)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def flat_list(self) -> list[np.ndarray]:
        """[W1, b1, W2, b2, ...]; the order parameters are registered on a tape."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @classmethod
    def from_flat_list(cls, arrays) -> "Parameters":
        arrays = list(arrays)
        return cls([np.array(a) for a in arrays[0::2]], [np.array(a) for a in arrays[1::2]])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.flat_list()])

    def with_vector(self, vec: np.ndarray) -> "Parameters":
        arrays, offset = [], 0
        for a in self.flat_list():
            arrays.append(np.asarray(vec[offset : offset + a.size], dtype=float).reshape(a.shape))
            offset += a.size
        return Parameters.from_flat_list(arrays)

    def copy(self) -> "Parameters":
        return Parameters.from_flat_list(self.flat_list())


def init(config: NetworkConfig) -> Parameters:
    """Glorot-uniform weights, zero biases; deterministic in ``init_seed``."""
    rng = np.random.default_rng(config.init_seed)
    sizes = config.layer_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros((1, fan_out)))
    return Parameters(weights, biases)


@dataclass
class TapeParameters:
    """Parameter nodes registered on a tape, in ``Parameters.flat_list`` order."""

    weights: list
    biases: list

    @classmethod
    def register(cls, tape: ad.Tape, params: Parameters) -> "TapeParameters":
        ws, bs = [], []
        for w, b in zip(params.weights, params.biases):
            ws.append(tape.parameter(w))
            bs.append(tape.parameter(b))
        return cls(ws, bs)


def forward(params, activation: str, x, tape: ad.Tape | None = None) -> list:
    """Build ``sigma(... sigma(x W1 + b1) ...) W_L + b_L`` on the tape.

    ``x`` is a list of ``(B, 1)`` coordinate nodes (one per input dimension).
    ``params`` is either :class:`Parameters` (registered on ``tape`` first) or
    :class:`TapeParameters`. Returns one ``(B, 1)`` node per output.
    """
    if isinstance(params, Parameters):
        if tape is None:
            raise ValueError("a tape is required to register Parameters")
        params = TapeParameters.register(tape, params)
    act = _ACT_FN[activation.lower()]
    fan_in = params.weights[0].shape[0]
    if len(x) != fan_in:
        raise ad.DimensionError(f"network expects {fan_in} inputs, got {len(x)}")
    h = x[0] if len(x) == 1 else ad.hstack(*x)
    last = len(params.weights) - 1
    for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = ad.affine(h, w, b)
        if layer < last:
            h = act(h)
    k = params.weights[-1].shape[1]
    return [ad.col(h, j) for j in range(k)] if k > 1 else [h]


def predict(params: Parameters, activation: str, points: np.ndarray) -> np.ndarray:
    """Plain numpy forward pass, ``points`` of shape (B, d) -> (B, k)."""
    act = {
        "sine": np.sin,
        "tanh": np.tanh,
        "swish": lambda z: z * expit(z),
        "sigmoid": expit,
        "relu": lambda z: np.maximum(z, 0.0),
    }[activation.lower()]
    h = np.asarray(points, dtype=float)
    last = len(params.weights) - 1
    for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if layer < last:
            h = act(h)
    return h


# ------------------------------------------------------------------------ Adam


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Parameters, **kw) -> "AdamState":
        flat = params.flat_list()
        return cls([np.zeros_like(a) for a in flat], [np.zeros_like(a) for a in flat], **kw)


def adam_step(state: AdamState, params: Parameters, grad, lr: float):
    """One bias-corrected Adam update; returns new (params, state)."""
    flat = params.flat_list()
    grad = list(grad)
    if len(grad) != len(flat) or any(np.shape(g) != a.shape for g, a in zip(grad, flat)):
        raise ad.DimensionError("gradient does not match parameter shapes")
    if not all(np.all(np.isfinite(g)) for g in grad):
        raise TrainingError("non-finite gradient entries")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_params, new_m, new_v = [], [], []
    for theta, g, m, v in zip(flat, grad, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        new_params.append(theta - lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(new_m, new_v, t, b1, b2, state.eps)
    return Parameters.from_flat_list(new_params), new_state


# ------------------------------------------------------------------ checkpoints
# Text format, so byte order never matters:
#   line 1   : "pinn-is-checkpoint v1"
#   line 2   : "layers <L>"
#   per layer: "W <rows> <cols>" then rows lines of cols floats (row-major),
#              "b 1 <cols>" then one line of cols floats.
# Floats are written with 17 significant digits and round-trip exactly.


def save_checkpoint(params: Parameters, path) -> None:
    lines = [CHECKPOINT_TAG, f"layers {len(params.weights)}"]
    for w, b in zip(params.weights, params.biases):
        for tag, a in (("W", w), ("b", b)):
            lines.append(f"{tag} {a.shape[0]} {a.shape[1]}")
            lines.extend(" ".join(f"{x:.17g}" for x in row) for row in a)
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> Parameters:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != CHECKPOINT_TAG:
        raise ValueError(f"{path}: not a {CHECKPOINT_TAG!r} file")
    n_layers = int(lines[1].split()[1])
    pos, weights, biases = 2, [], []
    for _ in range(n_layers):
        for target in (weights, biases):
            _, rows, cols = lines[pos].split()
            rows, cols = int(rows), int(cols)
            data = [[float(x) for x in lines[pos + 1 + r].split()] for r in range(rows)]
            a = np.array(data, dtype=float).reshape(rows, cols)
            target.append(a)
            pos += 1 + rows
    return Parameters(weights, biases)

