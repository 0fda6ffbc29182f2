"""
Dense feed-forward networks with exact reverse-mode gradients.

Plain numpy, float64 throughout:

- MlpParams / init_mlp     ReLU hidden layers, linear | tanh | softmax head
- mlp_forward / mlp_backward
- AdamState / adam_step    bias-corrected Adam, pure (returns new values)
- polyak_update            slow target tracking
- PadSpec / encode_neighborhood   zero-padded neighborhood feature vectors
- pack_params / unpack_params     shape header + little-endian f64 stream

Containers are treated as values: every update returns fresh arrays and never
mutates its inputs.
"""

import logging
import struct
from dataclasses import dataclass
from typing import List, Mapping, Optional

import numpy as np

logger = logging.getLogger(__name__)

LINEAR = "linear"
TANH = "tanh"
SOFTMAX = "softmax"
HEADS = (LINEAR, TANH, SOFTMAX)

SOFTMAX_TEMPERATURE = 1.0

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8

_COUNT = struct.Struct("<I")
_SHAPE = struct.Struct("<II")
_F64 = np.dtype("<f8")


@dataclass
class MlpParams:
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    head: str = LINEAR
    scale: float = 1.0

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown output head {self.head!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("weights and biases must be non-empty lists of equal length")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {k}: weight {w.shape} and bias {b.shape} do not match")
            if k and w.shape[0] != self.weights[k - 1].shape[1]:
                raise ValueError(f"layer {k}: input size {w.shape[0]} does not chain")

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    @property
    def output_dim(self):
        return self.weights[-1].shape[1]

    @property
    def layer_sizes(self):
        return [self.input_dim] + [w.shape[1] for w in self.weights]

    def arrays(self):
        """Parameter arrays in layer order: w0, b0, w1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def with_arrays(self, arrays):
        return MlpParams(list(arrays[0::2]), list(arrays[1::2]), self.head, self.scale)

    def copy(self):
        return self.with_arrays([a.copy() for a in self.arrays()])

    def same_shape(self, other):
        return [a.shape for a in self.arrays()] == [a.shape for a in other.arrays()]

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def init_mlp(sizes, head, rng, scale=1.0):
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization."""
    if len(sizes) < 2:
        raise ValueError("an MLP needs at least an input and an output size")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(weights, biases, head, scale)


def zeros_like(params):
    return params.with_arrays([np.zeros_like(a) for a in params.arrays()])


@dataclass
class ForwardCache:
    params: MlpParams
    inputs: List[np.ndarray]
    pre_activations: List[np.ndarray]
    output: np.ndarray
    single: bool


def _apply_head(z, params):
    if params.head == TANH:
        return params.scale * np.tanh(z)
    if params.head == SOFTMAX:
        shifted = z / SOFTMAX_TEMPERATURE
        shifted = shifted - shifted.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)
    return z


def mlp_forward(params, x):
    """Forward pass over one input vector or a batch of row vectors."""
    batch = np.asarray(x, dtype=np.float64)
    single = batch.ndim == 1
    if single:
        batch = batch[None, :]
    if batch.ndim != 2 or batch.shape[1] != params.input_dim:
        raise ValueError(f"input shape {np.shape(x)} does not match network input {params.input_dim}")
    if not np.all(np.isfinite(batch)):
        raise ValueError("non-finite network input")
    inputs, pre = [], []
    h = batch
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w + b
        pre.append(z)
        if k < last:
            h = np.maximum(z, 0.0)
    out = _apply_head(pre[-1], params)
    cache = ForwardCache(params, inputs, pre, out, single)
    return (out[0] if single else out), cache


def mlp_backward(params, cache, upstream):
    """
    Reverse-mode gradients of ``sum(upstream * output)``.

    Returns (parameter gradients as MlpParams, gradient w.r.t. the input).
    """
    if cache.params is not params:
        raise ValueError("forward cache was produced by a different parameter set")
    g = np.asarray(upstream, dtype=np.float64)
    if cache.single:
        g = g[None, :] if g.ndim == 1 else g
    if g.shape != cache.output.shape:
        raise ValueError(f"upstream shape {g.shape} does not match output {cache.output.shape}")

    out = cache.output
    if params.head == TANH:
        t = out / params.scale
        dz = g * params.scale * (1.0 - t * t)
    elif params.head == SOFTMAX:
        dz = out * (g - np.sum(g * out, axis=1, keepdims=True)) / SOFTMAX_TEMPERATURE
    else:
        dz = g

    n_layers = len(params.weights)
    d_weights = [None] * n_layers
    d_biases = [None] * n_layers
    dx = None
    for k in range(n_layers - 1, -1, -1):
        d_weights[k] = cache.inputs[k].T @ dz
        d_biases[k] = dz.sum(axis=0)
        dx = dz @ params.weights[k].T
        if k:
            dz = dx * (cache.pre_activations[k - 1] > 0.0)
    grads = MlpParams(d_weights, d_biases, params.head, params.scale)
    return grads, (dx[0] if cache.single else dx)


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0
    lr: float = 0.01
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPSILON

    def copy(self):
        return AdamState([a.copy() for a in self.m], [a.copy() for a in self.v],
                         self.t, self.lr, self.beta1, self.beta2, self.epsilon)


def adam_init(params, lr):
    zeros = [np.zeros_like(a) for a in params.arrays()]
    return AdamState(zeros, [z.copy() for z in zeros], 0, lr)


def adam_step(params, grads, state):
    """One bias-corrected Adam step; returns (new params, new state)."""
    if not state.lr > 0:
        raise ValueError(f"learning rate must be > 0, got {state.lr}")
    if not params.same_shape(grads):
        raise ValueError("gradient shapes do not match parameter shapes")
    if not grads.is_finite():
        raise FloatingPointError("non-finite gradient passed to adam_step")
    t = state.t + 1
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params.arrays(), grads.arrays(), state.m, state.v):
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        new_params.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(new_m, new_v, t, state.lr, state.beta1, state.beta2, state.epsilon)
    return params.with_arrays(new_params), new_state


def polyak_update(target, online, rate):
    """target' = (1 - rate) * target + rate * online, written as a step toward online."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"polyak rate must lie in [0, 1], got {rate}")
    if not target.same_shape(online):
        raise ValueError("target and online networks have different shapes")
    if rate == 1.0:
        return target.with_arrays([o.copy() for o in online.arrays()])
    return target.with_arrays(
        [t + rate * (o - t) for t, o in zip(target.arrays(), online.arrays())]
    )


@dataclass(frozen=True)
class PadSpec:
    """Fixed-width layout for a neighborhood: slot 0 is the subject, then ascending ids."""

    max_neighbors: int
    state_dim: int
    action_dim: int = 0

    @property
    def slot_dim(self):
        return self.state_dim + self.action_dim

    @property
    def critic_length(self):
        return self.max_neighbors * self.slot_dim

    @property
    def policy_length(self):
        return self.max_neighbors * self.state_dim

    def action_slice(self, slot=0):
        start = slot * self.slot_dim + self.state_dim
        return slice(start, start + self.action_dim)


def canonical_order(ids, subject):
    return [subject] + sorted(j for j in ids if j != subject)


def encode_neighborhood(states: Mapping[int, np.ndarray], actions: Optional[Mapping[int, np.ndarray]],
                        subject, spec: PadSpec):
    """
    Zero-padded feature vector for ``subject``'s neighborhood.

    With ``actions`` the layout is [s, a] per slot (critic input), without it
    only states are laid out (policy input).

    Agent ids are not encoded: ids only fix the slot order, so two
    neighborhoods with the same features in the same slots encode identically
    whatever agents hold them. Networks stay shared-shape across agents.
    """
    if subject not in states:
        raise ValueError(f"subject {subject} is missing from the neighborhood states")
    order = canonical_order(states.keys(), subject)
    if len(order) > spec.max_neighbors:
        raise ValueError(
            f"{len(order)} agents in the neighborhood of {subject}, max_neighbors={spec.max_neighbors}"
        )
    width = spec.state_dim if actions is None else spec.slot_dim
    encoded = np.zeros(spec.max_neighbors * width, dtype=np.float64)
    for slot, j in enumerate(order):
        state = np.asarray(states[j], dtype=np.float64)
        if state.shape != (spec.state_dim,):
            raise ValueError(f"agent {j}: state shape {state.shape}, expected ({spec.state_dim},)")
        start = slot * width
        encoded[start:start + spec.state_dim] = state
        if actions is not None:
            if j not in actions:
                raise ValueError(f"agent {j}: action missing from the neighborhood")
            action = np.asarray(actions[j], dtype=np.float64)
            if action.shape != (spec.action_dim,):
                raise ValueError(f"agent {j}: action shape {action.shape}, expected ({spec.action_dim},)")
            encoded[start + spec.state_dim:start + width] = action
    return encoded


def pack_params(params):
    """Shape header (layer count, rows/cols per layer) then weights and biases as f64 LE."""
    parts = [_COUNT.pack(len(params.weights))]
    for w in params.weights:
        parts.append(_SHAPE.pack(*w.shape))
    for w, b in zip(params.weights, params.biases):
        parts.append(np.ascontiguousarray(w, dtype=_F64).tobytes())
        parts.append(np.ascontiguousarray(b, dtype=_F64).tobytes())
    return b"".join(parts)


def unpack_params(buf, offset=0, head=LINEAR, scale=1.0):
    """Inverse of pack_params; returns (params, offset after the blob)."""
    view = memoryview(buf)
    try:
        (count,) = _COUNT.unpack_from(view, offset)
        offset += _COUNT.size
        shapes = []
        for _ in range(count):
            shapes.append(_SHAPE.unpack_from(view, offset))
            offset += _SHAPE.size
    except struct.error as e:
        raise ValueError(f"truncated parameter header: {e}") from e
    if count == 0:
        raise ValueError("parameter blob declares zero layers")
    weights, biases = [], []
    for rows, cols in shapes:
        for n, shape in ((rows * cols, (rows, cols)), (cols, (cols,))):
            end = offset + n * _F64.itemsize
            if end > len(view):
                raise ValueError("truncated parameter data")
            data = np.frombuffer(view[offset:end], dtype=_F64).astype(np.float64)
            (weights if len(shape) == 2 else biases).append(data.reshape(shape))
            offset = end
    return MlpParams(weights, biases, head, scale), offset
