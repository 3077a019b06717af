"""Multilayer perceptrons and the Adam optimizer on top of the tape engine."""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, affine, relu, tanh


_ACTIVATIONS = {"relu": relu, "tanh": tanh}


class MLP:
    """Fully connected network; ``n_layers`` linear layers, ReLU between them.

    Weights and biases use a fan-in-scaled uniform init, U(-1/sqrt(fan_in),
    1/sqrt(fan_in)).
    """

    def __init__(self, in_dim: int, out_dim: int, hidden: int, n_layers: int,
                 rng: np.random.Generator, activation: str = "relu"):
        if n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.hidden = hidden
        self.n_layers = n_layers
        self.activation = activation
        self._act = _ACTIVATIONS[activation]
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        dims = [in_dim] + [hidden] * (n_layers - 1) + [out_dim]
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(d_in)
            w = Tensor(rng.uniform(-bound, bound, size=(d_in, d_out)), requires_grad=True)
            b = Tensor(rng.uniform(-bound, bound, size=(d_out,)), requires_grad=True)
            self.weights.append(w)
            self.biases.append(b)

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = affine(h, w, b)
            if i != last:
                h = self._act(h)
        return h

    def parameters(self) -> list[Tensor]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend((w, b))
        return params

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"layers.{i}.weight", w))
            out.append((f"layers.{i}.bias", b))
        return out


class AdamState:
    """Per-parameter moment accumulators plus the shared step counter."""

    def __init__(self, params: list[Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update, in place on ``params``."""
    if len(grads) != len(params) or len(state.m) != len(params):
        raise ShapeError("adam_step: params/grads/state length mismatch")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise ShapeError(f"adam_step: grad shape {g.shape} != param shape {p.data.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Adam:
    """Wrapper reading gradients from ``p.grad`` (as set by ``backward``)."""

    def __init__(self, params: list[Tensor], lr: float, **kwargs):
        self.params = params
        self.state = AdamState(params, lr, **kwargs)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = value

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data)
                 for p in self.params]
        adam_step(self.params, grads, self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
