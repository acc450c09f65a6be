"""Dense layers, parameter storage, Adam, learning-rate schedule and clipping."""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .exceptions import ShapeError, TrainingError

__all__ = [
    "LinearLayer",
    "ParamStore",
    "AdamState",
    "init_linear",
    "linear_forward",
    "relu",
    "softmax",
    "adam_step",
    "cosine_lr",
    "clip_global_norm",
    "weight_decay_term",
]


@dataclass
class LinearLayer:
    """Affine map ``x -> W x + b``.

    ``weight`` has shape ``(out, in)``; a stacked layer holding one copy per
    head has shape ``(M, out, in)`` with bias ``(M, out)``.
    """

    weight: Tensor
    bias: Tensor

    def __post_init__(self):
        w, b = self.weight.shape, self.bias.shape
        if len(w) < 2 or w[:-1] != b:
            raise ShapeError(f"weight {w} and bias {b} are inconsistent")

    @property
    def in_features(self):
        return self.weight.shape[-1]

    @property
    def out_features(self):
        return self.weight.shape[-2]

    @property
    def stacked(self):
        return self.weight.ndim == 3

    def parameters(self):
        return [self.weight, self.bias]


def init_linear(rng, fan_in, fan_out, copies=None):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for weights and biases.

    With ``copies`` set, returns a stacked layer whose copies are drawn one
    after another from ``rng``, each independently.
    """
    bound = 1.0 / math.sqrt(fan_in)
    if copies is None:
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = rng.uniform(-bound, bound, size=fan_out)
    else:
        ws, bs = [], []
        for _ in range(copies):
            ws.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            bs.append(rng.uniform(-bound, bound, size=fan_out))
        w, b = np.stack(ws), np.stack(bs)
    return LinearLayer(Tensor(w, requires_grad=True), Tensor(b, requires_grad=True))


def linear_forward(layer, x):
    """Apply ``layer`` to ``x``.

    ``x`` may be a vector ``(in,)``, a batch ``(B, in)`` or, for stacked
    layers, a per-copy batch ``(M, B, in)``.  Stacked layers return
    ``(M, B, out)``.
    """
    x = ag.as_tensor(x)
    if x.shape[-1] != layer.in_features:
        raise ShapeError(f"input width {x.shape[-1]} != layer in-dim {layer.in_features}")
    if x.ndim == 1:
        if layer.stacked:
            raise ShapeError("stacked layers need batched input")
        return (layer.weight @ x.reshape(-1, 1)).reshape(-1) + layer.bias
    if layer.stacked:
        # (B, in) or (M, B, in) @ (M, in, out) -> (M, B, out)
        out = x @ layer.weight.swapaxes(-1, -2)
        return out + layer.bias.reshape(layer.bias.shape[0], 1, -1)
    return x @ layer.weight.T + layer.bias


def relu(x):
    return ag.relu(ag.as_tensor(x))


def softmax(logits, temperature=1.0, axis=-1):
    """Temperature-scaled, max-subtracted softmax.

    Accepts arrays or tensors; returns a numpy array for array input.
    """
    if isinstance(logits, Tensor):
        return ag.softmax(logits, axis=axis, temperature=temperature)
    return ag.softmax(Tensor(logits), axis=axis, temperature=temperature).data


class ParamStore:
    """Ordered collection of named trainable tensors."""

    def __init__(self, items=()):
        self._params = OrderedDict()
        for name, p in items:
            self.add(name, p)

    def add(self, name, tensor):
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        tensor.requires_grad = True
        tensor.name = name
        self._params[name] = tensor

    def __iter__(self):
        return iter(self._params.items())

    def __len__(self):
        return len(self._params)

    def __getitem__(self, name):
        return self._params[name]

    def names(self):
        return list(self._params)

    def tensors(self):
        return list(self._params.values())

    def size(self):
        return sum(p.data.size for p in self._params.values())

    def zero_grad(self):
        for p in self._params.values():
            p.grad = np.zeros_like(p.data)

    def grads(self):
        return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self._params.values()]

    def grad_norm(self):
        return math.sqrt(sum(float(np.sum(g * g)) for g in self.grads()))

    def state_dict(self):
        return OrderedDict((n, p.data.copy()) for n, p in self._params.items())

    def load_state_dict(self, state):
        if list(state) != list(self._params):
            raise KeyError("parameter names do not match")
        for n, arr in state.items():
            p = self._params[n]
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ShapeError(f"{n}: shape {arr.shape} != {p.data.shape}")
            p.data = arr.copy()


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(store, state, lr):
    """One bias-corrected Adam update of every parameter in ``store``."""
    for name, p in store:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in store:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return store


def cosine_lr(epoch, total_epochs, lr0):
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


def clip_global_norm(store, max_norm):
    """Rescale gradients so their joint L2 norm is at most ``max_norm``.

    Returns the scale factor that was applied (1.0 when untouched).
    """
    norm = store.grad_norm()
    if norm <= max_norm:
        return 1.0
    scale = max_norm / norm
    for _, p in store:
        if p.grad is not None:
            p.grad = p.grad * scale
    return scale


def weight_decay_term(store, coefficient):
    """Explicit ``coefficient / 2 * sum(theta ** 2)`` over all parameters."""
    total = None
    for _, p in store:
        sq = (p * p).sum()
        total = sq if total is None else total + sq
    return total * (0.5 * coefficient)
