"""Dense feed-forward networks with hand-written backprop and Adam.

Networks are plain values: a list of ``Layer(W, b, activation)`` with ``W`` of
shape ``(fan_in, fan_out)``. Inputs may be a single vector or a row-per-sample
matrix; gradients returned by :func:`backward` are summed over rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

LEAKY_SLOPE = 0.01
ACTIVATIONS = ("leaky_relu", "sigmoid", "tanh", "identity")


class NonFiniteGradientError(FloatingPointError):
    """Raised when an optimizer step is fed NaN or infinite gradients."""


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray
    activation: str = "identity"


@dataclass
class Network:
    layers: list[Layer]

    def __post_init__(self):
        for i, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"layer {i}: unknown activation {layer.activation!r}")
            if layer.b.shape != (layer.W.shape[1],):
                raise ValueError(f"layer {i}: bias shape {layer.b.shape} does not match W {layer.W.shape}")
            if i and self.layers[i - 1].W.shape[1] != layer.W.shape[0]:
                raise ValueError(f"layer {i}: fan-in {layer.W.shape[0]} != previous fan-out "
                                 f"{self.layers[i - 1].W.shape[1]}")

    @property
    def input_dim(self) -> int:
        return self.layers[0].W.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].W.shape[1]

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.W, layer.b]
        return out

    def copy(self) -> "Network":
        return Network([Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers])

    def __call__(self, x):
        return forward(self, x)


@dataclass
class GradientBundle:
    """Gradients for every parameter of a :class:`Network`, in ``params()`` order."""

    params: list[np.ndarray]
    input: np.ndarray | None = None

    def norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in self.params)))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.params)

    def scaled(self, c: float) -> "GradientBundle":
        return GradientBundle([g * c for g in self.params], None if self.input is None else self.input * c)

    def __add__(self, other: "GradientBundle") -> "GradientBundle":
        return GradientBundle([a + b for a, b in zip(self.params, other.params)])

    def flat(self) -> np.ndarray:
        return np.concatenate([g.ravel() for g in self.params])


def init_network(sizes: Sequence[int], rng: np.random.Generator, hidden: str = "leaky_relu",
                 output: str = "identity") -> Network:
    """Glorot-uniform weights, zero biases. ``sizes`` includes input and output widths."""
    if len(sizes) < 2:
        raise ValueError("need at least input and output sizes")
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-lim, lim, size=(fan_in, fan_out))
        act = output if i == len(sizes) - 2 else hidden
        layers.append(Layer(W, np.zeros(fan_out), act))
    return Network(layers)


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "leaky_relu":
        return np.where(z > 0, z, LEAKY_SLOPE * z)
    if name == "sigmoid":
        return sigmoid(z)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "leaky_relu":
        return np.where(z > 0, 1.0, LEAKY_SLOPE)
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _as_rows(net: Network, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    rows = x[None, :] if single else x
    if rows.ndim != 2 or rows.shape[1] != net.input_dim:
        raise ValueError(f"input shape {x.shape} incompatible with network input_dim {net.input_dim}")
    return rows, single


def _forward_cache(net: Network, rows: np.ndarray):
    zs, acts = [], [rows]
    h = rows
    for layer in net.layers:
        z = h @ layer.W + layer.b
        h = _act(layer.activation, z)
        zs.append(z)
        acts.append(h)
    return zs, acts


def forward(net: Network, x) -> np.ndarray:
    rows, single = _as_rows(net, x)
    h = rows
    for layer in net.layers:
        h = _act(layer.activation, h @ layer.W + layer.b)
    return h[0] if single else h


def backward(net: Network, x, upstream) -> GradientBundle:
    """Vector-Jacobian product of ``upstream`` through the network.

    Returns gradients of ``sum(upstream * forward(net, x))`` w.r.t. every
    parameter (summed over rows) and w.r.t. the input.
    """
    rows, single = _as_rows(net, x)
    g = np.asarray(upstream, dtype=float)
    g = g[None, :] if single else g
    if g.shape != (rows.shape[0], net.output_dim):
        raise ValueError(f"upstream shape {np.shape(upstream)} does not match output "
                         f"({rows.shape[0]}, {net.output_dim})")
    zs, acts = _forward_cache(net, rows)
    grads: list[np.ndarray] = []
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        delta = g * _act_grad(layer.activation, zs[i], acts[i + 1])
        grads = [acts[i].T @ delta, delta.sum(axis=0)] + grads
        g = delta @ layer.W.T
    return GradientBundle(grads, g[0] if single else g)


def get_flat(net: Network) -> np.ndarray:
    return np.concatenate([p.ravel() for p in net.params()])


def set_flat(net: Network, flat: np.ndarray) -> None:
    i = 0
    for p in net.params():
        p[...] = flat[i:i + p.size].reshape(p.shape)
        i += p.size
    if i != flat.size:
        raise ValueError(f"flat vector has {flat.size} entries, network has {i}")


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    max_grad_norm: float | None = 10.0

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], learning_rate: float = 1e-3, **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], learning_rate, **kw)

    @classmethod
    def for_network(cls, net: Network, learning_rate: float = 1e-3, **kw) -> "AdamState":
        return cls.for_params(net.params(), learning_rate, **kw)


def clip_by_norm(grads: list[np.ndarray], max_norm: float | None) -> list[np.ndarray]:
    if max_norm is None:
        return grads
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if norm > max_norm:
        return [g * (max_norm / norm) for g in grads]
    return grads


def adam_update(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState) -> None:
    """In-place Adam descent step on raw arrays, with global-norm clipping."""
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ValueError("gradient shapes do not match parameters")
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise NonFiniteGradientError(f"non-finite gradient at Adam step {state.step + 1}; step rejected")
    grads = clip_by_norm(list(grads), state.max_grad_norm)
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)


def adam_step(net: Network, grads: GradientBundle, state: AdamState) -> tuple[Network, AdamState]:
    """Descend ``grads`` on ``net`` in place. Returns the same objects for chaining."""
    adam_update(net.params(), grads.params, state)
    return net, state


# --------------------------------------------------------------------------
# checkpoints: one JSON header line, then raw little-endian float64 parameters


def save_network(path: str, net: Network, **meta) -> None:
    header = {"format": "vlbirl-net-v1",
              "layers": [{"in": l.W.shape[0], "out": l.W.shape[1], "activation": l.activation} for l in net.layers],
              "meta": meta}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(get_flat(net).astype("<f8").tobytes())


def load_network(path: str) -> tuple[Network, dict]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        flat = np.frombuffer(fh.read(), dtype="<f8").astype(float)
    if header.get("format") != "vlbirl-net-v1":
        raise ValueError(f"{path}: not a network checkpoint")
    layers = [Layer(np.zeros((d["in"], d["out"])), np.zeros(d["out"]), d["activation"]) for d in header["layers"]]
    net = Network(layers)
    set_flat(net, flat)
    return net, header.get("meta", {})


def save_arrays(path: str, arrays: dict[str, np.ndarray], **meta) -> None:
    """Same framing as :func:`save_network` for named raw arrays (tabular tables)."""
    header = {"format": "vlbirl-arrays-v1", "meta": meta,
              "arrays": [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()]}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for v in arrays.values():
            fh.write(np.asarray(v, dtype="<f8").tobytes())


def load_arrays(path: str) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        flat = np.frombuffer(fh.read(), dtype="<f8").astype(float)
    if header.get("format") != "vlbirl-arrays-v1":
        raise ValueError(f"{path}: not an array checkpoint")
    out, i = {}, 0
    for d in header["arrays"]:
        n = int(np.prod(d["shape"])) if d["shape"] else 1
        out[d["name"]] = flat[i:i + n].reshape(d["shape"])
        i += n
    return out, header.get("meta", {})
