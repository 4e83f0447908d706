"""Dense multilayer network whose connections are individually gated.

Conventions: a layer's weight matrix ``W`` has shape ``(out, in)``, batches are
row-major ``(n, features)``, so a layer computes ``act(h @ (W * g).T + b)``.
Gate logits ``phi`` share ``W``'s shape.  Biases are never gated.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .gates import GateParams, GateSample, soft_gate_grad
from .rng import Rng

ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True)
class LayerSpec:
    input_size: int
    output_size: int
    activation: str = "relu"

    def __post_init__(self):
        if self.input_size < 1 or self.output_size < 1:
            raise ValueError(f"layer sizes must be >= 1, got {self.input_size}->{self.output_size}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


def mlp_specs(sizes: Sequence[int]) -> list[LayerSpec]:
    """ReLU hidden layers, identity output: ``[784, 300, 100, 10]`` -> 3 specs."""
    if len(sizes) < 2:
        raise ValueError("need at least an input and an output size")
    last = len(sizes) - 2
    return [
        LayerSpec(sizes[k], sizes[k + 1], "identity" if k == last else "relu")
        for k in range(len(sizes) - 1)
    ]


@dataclass
class Layer:
    spec: LayerSpec
    W: np.ndarray
    b: np.ndarray
    phi: np.ndarray


@dataclass
class GatedNetwork:
    layers: list[Layer]
    tau: float = 1.0

    @property
    def specs(self) -> list[LayerSpec]:
        return [layer.spec for layer in self.layers]

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0].spec.input_size] + [l.spec.output_size for l in self.layers]

    @property
    def n_gates(self) -> int:
        return sum(layer.W.size for layer in self.layers)

    def gate_params(self) -> GateParams:
        return GateParams(np.concatenate([l.phi.ravel() for l in self.layers]), self.tau)

    def split(self, flat: np.ndarray) -> list[np.ndarray]:
        """Cut a length-d gate vector into per-layer ``(out, in)`` blocks."""
        flat = np.asarray(flat)
        if flat.size != self.n_gates:
            raise ValueError(f"expected {self.n_gates} gate values, got {flat.size}")
        out, start = [], 0
        for layer in self.layers:
            stop = start + layer.W.size
            out.append(flat[start:stop].reshape(layer.W.shape))
            start = stop
        return out

    def copy(self) -> "GatedNetwork":
        return copy.deepcopy(self)


def _check_chain(specs: Sequence[LayerSpec]) -> None:
    if not specs:
        raise ValueError("network needs at least one layer")
    for k in range(len(specs) - 1):
        if specs[k].output_size != specs[k + 1].input_size:
            raise ValueError(
                f"layer {k} outputs {specs[k].output_size} but layer {k + 1} "
                f"expects {specs[k + 1].input_size}"
            )


def init_network(
    specs: Sequence[LayerSpec],
    init_retain_prob: float = 0.5,
    rng: Rng | None = None,
    tau: float = 1.0,
) -> GatedNetwork:
    """He-normal weights (std = sqrt(2 / fan_in)), zero biases, constant gate logits."""
    if not 0.0 < init_retain_prob < 1.0:
        raise ValueError(f"init_retain_prob must lie in (0, 1), got {init_retain_prob}")
    _check_chain(specs)
    rng = rng if rng is not None else Rng(0)
    phi0 = float(np.log(init_retain_prob) - np.log1p(-init_retain_prob))
    layers = []
    for spec in specs:
        shape = (spec.output_size, spec.input_size)
        W = rng.normal(shape, scale=np.sqrt(2.0 / spec.input_size))
        layers.append(Layer(spec, W, np.zeros(spec.output_size), np.full(shape, phi0)))
    return GatedNetwork(layers, tau=tau)


@dataclass
class ForwardTape:
    x: np.ndarray
    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    post: list[np.ndarray]
    gates: GateSample
    hard: list[np.ndarray] = field(default_factory=list)


@dataclass
class Gradients:
    dW: list[np.ndarray]
    db: list[np.ndarray]
    dphi: list[np.ndarray]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for group in (self.dW, self.db, self.dphi) for a in group])


def _dense_forward(layers, masks, x):
    h = x
    inputs, pre, post = [], [], []
    for layer, g in zip(layers, masks):
        inputs.append(h)
        Weff = layer.W if g is None else layer.W * g
        z = h @ Weff.T + layer.b
        a = np.maximum(z, 0.0) if layer.spec.activation == "relu" else z
        pre.append(z)
        post.append(a)
        h = a
    return h, inputs, pre, post


def _check_input(net: GatedNetwork, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.layers[0].spec.input_size:
        raise ValueError(
            f"input batch must have shape (n, {net.layers[0].spec.input_size}), got {x.shape}"
        )
    return x


def forward(net: GatedNetwork, gates: GateSample, x: np.ndarray):
    """Gated forward pass; returns last-layer scores and a tape for :func:`backward`."""
    x = _check_input(net, x)
    hard = net.split(gates.hard)
    out, inputs, pre, post = _dense_forward(net.layers, hard, x)
    return out, ForwardTape(x, inputs, pre, post, gates, hard)


def forward_masked(net: GatedNetwork, mask: np.ndarray | None, x: np.ndarray) -> np.ndarray:
    """Deterministic forward with a fixed binary mask (``None`` = dense)."""
    x = _check_input(net, x)
    masks = [None] * len(net.layers) if mask is None else net.split(mask)
    return _dense_forward(net.layers, masks, x)[0]


def backward(
    net: GatedNetwork,
    tape: ForwardTape,
    d_out: np.ndarray,
    d_gates: np.ndarray | float | None = None,
) -> Gradients:
    """Reverse pass through a gated forward.

    ``d_out`` is dLoss/d(scores).  ``d_gates`` is an optional extra gradient
    with respect to the gate values themselves (e.g. from a density penalty),
    scalar or length-d.  Gate gradients reach ``phi`` through the soft path:
    d loss / d phi = (d loss / d g) * soft * (1 - soft) / tau.
    """
    if len(tape.pre) != len(net.layers) or tape.gates.hard.size != net.n_gates:
        raise ValueError("tape does not match network")
    d_out = np.asarray(d_out, dtype=np.float64)
    if d_out.shape != tape.post[-1].shape:
        raise ValueError(f"upstream gradient shape {d_out.shape} != output shape {tape.post[-1].shape}")

    soft = net.split(tape.gates.soft)
    extra = None
    if d_gates is not None:
        extra = net.split(np.broadcast_to(np.asarray(d_gates, dtype=np.float64), (net.n_gates,)))

    L = len(net.layers)
    dW, db, dphi = [None] * L, [None] * L, [None] * L
    grad = d_out
    for k in reversed(range(L)):
        layer, g = net.layers[k], tape.hard[k]
        if layer.spec.activation == "relu":
            grad = grad * (tape.pre[k] > 0)
        dWeff = grad.T @ tape.inputs[k]
        dW[k] = dWeff * g
        db[k] = grad.sum(axis=0)
        dg = dWeff * layer.W
        if extra is not None:
            dg = dg + extra[k]
        dphi[k] = dg * soft_gate_grad(soft[k], tape.gates.tau)
        if k > 0:
            grad = grad @ (layer.W * g)
    return Gradients(dW, db, dphi)


def effective_density(gates: GateSample, mode: str = "hard") -> float:
    """Global mean gate value over all d gates."""
    if mode == "hard":
        return float(np.mean(gates.hard))
    if mode == "soft":
        return float(np.mean(gates.soft))
    raise ValueError(f"mode must be 'hard' or 'soft', got {mode!r}")


def deterministic_gates(net: GatedNetwork) -> np.ndarray:
    """Flat binary mask with 1 wherever sigmoid(phi) >= 0.5."""
    return (net.gate_params().logits >= 0.0).astype(np.float64)
