"""Minimal feed-forward approximators with hand-rolled reverse-mode gradients.

Everything is plain float64 numpy: forward passes are pure, gradients are
exact (validated against finite differences in the test suite), and updates
are deterministic given the seed and batch order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")


class ShapeError(ValueError):
    pass


class NonFiniteError(RuntimeError):
    """A loss or parameter became NaN/Inf; carries the offending batch index if known."""

    def __init__(self, message: str, batch_index: int | None = None):
        super().__init__(message)
        self.batch_index = batch_index


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "identity":
        return z
    raise ValueError(f"unknown activation {kind!r}")


def _activate_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(z.dtype)
    if kind == "tanh":
        return 1.0 - a * a
    if kind == "identity":
        return np.ones_like(z)
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class Layer:
    w: np.ndarray  # (fan_in, fan_out)
    b: np.ndarray  # (fan_out,)
    activation: str

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.w.ndim != 2 or self.b.shape != (self.w.shape[1],):
            raise ShapeError(f"inconsistent layer shapes {self.w.shape} / {self.b.shape}")


class Mlp:
    """Dense network; ``output_scale`` rescales the final activation (used to
    map a tanh head onto the action box)."""

    def __init__(self, layers: list[Layer], output_scale: float = 1.0):
        for prev, nxt in zip(layers, layers[1:]):
            if prev.w.shape[1] != nxt.w.shape[0]:
                raise ShapeError("adjacent layer shapes do not compose")
        self.layers = layers
        self.output_scale = float(output_scale)

    @property
    def input_dim(self) -> int:
        return self.layers[0].w.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].w.shape[1]

    def forward(self, x: np.ndarray) -> np.ndarray:
        squeeze = np.asarray(x).ndim == 1
        a = np.atleast_2d(np.asarray(x, dtype=float))
        if a.shape[1] != self.input_dim:
            raise ShapeError(f"input width {a.shape[1]} != expected {self.input_dim}")
        for layer in self.layers:
            a = _activate(a @ layer.w + layer.b, layer.activation)
        a = a * self.output_scale
        return a[0] if squeeze else a

    def forward_cached(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        """Forward pass retaining per-layer (input, pre-activation, activation)."""
        a = np.atleast_2d(np.asarray(x, dtype=float))
        if a.shape[1] != self.input_dim:
            raise ShapeError(f"input width {a.shape[1]} != expected {self.input_dim}")
        cache = []
        for layer in self.layers:
            z = a @ layer.w + layer.b
            out = _activate(z, layer.activation)
            cache.append((a, z, out))
            a = out
        return a * self.output_scale, cache

    def clone(self) -> "Mlp":
        return Mlp(
            [Layer(l.w.copy(), l.b.copy(), l.activation) for l in self.layers],
            output_scale=self.output_scale,
        )

    def check_finite(self) -> None:
        for i, layer in enumerate(self.layers):
            if not (np.isfinite(layer.w).all() and np.isfinite(layer.b).all()):
                raise NonFiniteError(f"non-finite parameters in layer {i}")


def init_mlp(
    input_dim: int,
    hidden: tuple[int, ...],
    output_dim: int,
    rng: np.random.Generator,
    output_activation: str = "identity",
    output_scale: float = 1.0,
) -> Mlp:
    """Relu hidden layers with uniform +-1/sqrt(fan_in) initialization."""
    dims = (input_dim, *hidden, output_dim)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=fan_out)
        act = output_activation if i == len(dims) - 2 else "relu"
        layers.append(Layer(w, b, act))
    return Mlp(layers, output_scale=output_scale)


# -- gradients ----------------------------------------------------------------------


def backprop(net: Mlp, cache: list, grad_out: np.ndarray) -> tuple[list, np.ndarray]:
    """Propagate d(loss)/d(scaled output) back through the cached forward pass.

    Returns per-layer ``(dw, db)`` pairs and d(loss)/d(input).
    """
    grad = np.atleast_2d(grad_out) * net.output_scale
    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        a_in, z, a_out = cache[i]
        delta = grad * _activate_grad(z, a_out, layer.activation)
        grads[i] = (a_in.T @ delta, delta.sum(axis=0))
        grad = delta @ layer.w.T
    return grads, grad


def loss_and_param_grads(net: Mlp, inputs: np.ndarray, loss_fn) -> tuple[float, list, np.ndarray]:
    """Mean-batch loss and its gradient w.r.t. every parameter (and the inputs).

    ``loss_fn`` maps the network outputs to ``(per_sample_losses, grad_wrt_outputs)``
    where the gradient is taken per sample. A non-finite per-sample loss raises
    :class:`NonFiniteError` carrying the first offending batch index.
    """
    outputs, cache = net.forward_cached(inputs)
    per_sample, grad_out = loss_fn(outputs)
    per_sample = np.asarray(per_sample, dtype=float)
    finite = np.isfinite(per_sample)
    if not finite.all():
        idx = int(np.argmin(finite))
        raise NonFiniteError(f"non-finite loss at batch index {idx}", batch_index=idx)
    n = len(per_sample)
    grads, grad_in = backprop(net, cache, np.asarray(grad_out) / n)
    return float(per_sample.mean()), grads, grad_in


def zero_grads_like(net: Mlp) -> list:
    return [(np.zeros_like(l.w), np.zeros_like(l.b)) for l in net.layers]


def add_grads(a: list, b: list) -> list:
    return [(aw + bw, ab + bb) for (aw, ab), (bw, bb) in zip(a, b)]


def flatten_params(net: Mlp) -> np.ndarray:
    return np.concatenate([np.concatenate([l.w.ravel(), l.b.ravel()]) for l in net.layers])


def set_flat_params(net: Mlp, vec: np.ndarray) -> None:
    offset = 0
    for layer in net.layers:
        for arr in (layer.w, layer.b):
            size = arr.size
            arr[...] = vec[offset : offset + size].reshape(arr.shape)
            offset += size
    if offset != vec.size:
        raise ShapeError(f"parameter vector length {vec.size} != expected {offset}")


def flatten_grads(grads: list) -> np.ndarray:
    return np.concatenate([np.concatenate([dw.ravel(), db.ravel()]) for dw, db in grads])


# -- optimization -------------------------------------------------------------------


@dataclass
class Adam:
    """Bias-corrected adaptive-moment optimizer state for one network."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def _ensure_state(self, net: Mlp) -> None:
        if not self.m:
            self.m = zero_grads_like(net)
            self.v = zero_grads_like(net)

    def apply(self, net: Mlp, grads: list) -> None:
        """One descent step along ``grads``; parameters stay finite or we raise."""
        self._ensure_state(net)
        self.step_count += 1
        bias1 = 1.0 - self.beta1**self.step_count
        bias2 = 1.0 - self.beta2**self.step_count
        for layer, (dw, db), m_pair, v_pair in zip(net.layers, grads, self.m, self.v):
            for param, grad, m, v in ((layer.w, dw, m_pair[0], v_pair[0]),
                                      (layer.b, db, m_pair[1], v_pair[1])):
                m *= self.beta1
                m += (1.0 - self.beta1) * grad
                v *= self.beta2
                v += (1.0 - self.beta2) * grad * grad
                param -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
        net.check_finite()


def polyak_update(target: Mlp, source: Mlp, rho: float) -> None:
    """target <- rho * target + (1 - rho) * source, elementwise."""
    for t_layer, s_layer in zip(target.layers, source.layers):
        if t_layer.w.shape != s_layer.w.shape:
            raise ShapeError("target and source shapes differ")
        t_layer.w *= rho
        t_layer.w += (1.0 - rho) * s_layer.w
        t_layer.b *= rho
        t_layer.b += (1.0 - rho) * s_layer.b


# -- persistence --------------------------------------------------------------------


def net_to_dict(net: Mlp) -> dict:
    return {
        "layers": [
            {"w": l.w.tolist(), "b": l.b.tolist(), "act": l.activation} for l in net.layers
        ],
        "output_scale": net.output_scale,
    }


def net_from_dict(data: dict) -> Mlp:
    layers = [
        Layer(np.asarray(l["w"], dtype=float), np.asarray(l["b"], dtype=float), l["act"])
        for l in data["layers"]
    ]
    return Mlp(layers, output_scale=data.get("output_scale", 1.0))


def optimizer_to_dict(opt: Adam) -> dict:
    return {
        "lr": opt.lr,
        "beta1": opt.beta1,
        "beta2": opt.beta2,
        "eps": opt.eps,
        "step_count": opt.step_count,
        "m": [{"w": mw.tolist(), "b": mb.tolist()} for mw, mb in opt.m],
        "v": [{"w": vw.tolist(), "b": vb.tolist()} for vw, vb in opt.v],
    }


def optimizer_from_dict(data: dict) -> Adam:
    opt = Adam(
        lr=data["lr"], beta1=data["beta1"], beta2=data["beta2"], eps=data["eps"],
        step_count=data["step_count"],
    )
    opt.m = [(np.asarray(p["w"], dtype=float), np.asarray(p["b"], dtype=float)) for p in data["m"]]
    opt.v = [(np.asarray(p["w"], dtype=float), np.asarray(p["b"], dtype=float)) for p in data["v"]]
    return opt


def save_checkpoint(path: str | Path, net: Mlp, optimizer: Adam | None = None) -> None:
    payload = net_to_dict(net)
    if optimizer is not None:
        payload["optimizer"] = optimizer_to_dict(optimizer)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, separators=(",", ":")))


def load_checkpoint(path: str | Path) -> tuple[Mlp, Adam | None]:
    data = json.loads(Path(path).read_text())
    optimizer = optimizer_from_dict(data["optimizer"]) if "optimizer" in data else None
    return net_from_dict(data), optimizer
