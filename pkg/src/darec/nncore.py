"""Small dense neural-network substrate.

Everything here works in float64 on numpy arrays. Layers compute
``y = act(x @ W.T + b)`` with ``W`` stored as (out, in), so a single sample
is a 1-D vector and a mini-batch is a 2-D array with one row per sample.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

ACTIVATIONS = ("sigmoid", "identity", "relu")
CHECKPOINT_MAGIC = b"DARECNN1"


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one use (``"init"``, ``"shuffle"``, ...) of a root seed."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def init_normal(shape, std: float, seed) -> np.ndarray:
    """I.i.d. normal(0, std**2) matrix; ``std=0`` gives zeros (used for biases)."""
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    if any(s <= 0 for s in shape):
        raise ValueError(f"dimensions must be positive, got {shape}")
    if std < 0:
        raise ValueError("std must be non-negative")
    if std == 0:
        return np.zeros(shape)
    return _as_rng(seed).normal(0.0, std, size=shape)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # exp(-log(1 + e^-x)) avoids overflow warnings for large |x|
    return np.exp(-np.logaddexp(0.0, -x))


def activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "sigmoid":
        return sigmoid(z)
    if kind == "identity":
        return z
    if kind == "relu":
        return np.maximum(z, 0.0)
    raise ValueError(f"unknown activation {kind!r}")


def activation_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    """Derivative of the activation, given pre-activation ``z`` and output ``a``."""
    if kind == "sigmoid":
        return a * (1.0 - a)
    if kind == "identity":
        return np.ones_like(z)
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    raise ValueError(f"unknown activation {kind!r}")


class Param:
    """A parameter array together with its accumulated gradient."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, value: np.ndarray, name: str = ""):
        self.value = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(self.value)):
            raise ValueError(f"parameter {name!r} has non-finite entries")
        self.grad = np.zeros_like(self.value)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.value.shape})"


class Dense:
    """Affine map followed by an elementwise activation."""

    def __init__(self, n_in: int, n_out: int, activation: str = "sigmoid",
                 std: float = 0.01, seed=None, name: str = "layer"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.W = Param(init_normal((n_out, n_in), std, seed), f"{name}.W")
        self.b = Param(np.zeros(n_out), f"{name}.b")
        self.activation = activation

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @property
    def n_out(self) -> int:
        return self.W.shape[0]

    def params(self) -> list[Param]:
        return [self.W, self.b]

    def forward(self, x: np.ndarray):
        if x.shape[-1] != self.n_in:
            raise ValueError(f"{self.W.name}: expected input width {self.n_in}, got {x.shape[-1]}")
        z = x @ self.W.value.T + self.b.value
        a = activate(z, self.activation)
        return a, (x, z, a)

    def backward(self, cache, grad_out: np.ndarray) -> np.ndarray:
        x, z, a = cache
        if grad_out.shape != a.shape:
            raise ValueError(f"{self.W.name}: upstream gradient shape {grad_out.shape} != {a.shape}")
        dz = grad_out * activation_grad(z, a, self.activation)
        if dz.ndim == 1:
            self.W.grad += np.outer(dz, x)
            self.b.grad += dz
        else:
            self.W.grad += dz.T @ x
            self.b.grad += dz.sum(axis=0)
        return dz @ self.W.value


class MLP:
    """A chain of :class:`Dense` layers."""

    def __init__(self, layers: Sequence[Dense]):
        layers = list(layers)
        if not layers:
            raise ValueError("an MLP needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.n_out != nxt.n_in:
                raise ValueError(f"layer widths do not chain: {prev.n_out} -> {nxt.n_in}")
        self.layers = layers

    @classmethod
    def build(cls, sizes: Sequence[int], activations: Sequence[str], std: float = 0.01,
              seed=None, name: str = "mlp") -> "MLP":
        """``sizes`` lists input width then each layer's output width."""
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        rng = _as_rng(seed)
        return cls([Dense(sizes[i], sizes[i + 1], activations[i], std=std, seed=rng,
                          name=f"{name}.{i}")
                    for i in range(len(activations))])

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    @property
    def widths(self) -> list[int]:
        return [self.n_in] + [layer.n_out for layer in self.layers]

    def params(self) -> list[Param]:
        return [p for layer in self.layers for p in layer.params()]

    def forward(self, x: np.ndarray):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, caches, grad_out: np.ndarray) -> np.ndarray:
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            grad_out = layer.backward(cache, grad_out)
        return grad_out


def mlp_forward(net: MLP, x: np.ndarray):
    return net.forward(np.asarray(x, dtype=np.float64))


def mlp_backward(net: MLP, cache, grad_out: np.ndarray) -> np.ndarray:
    return net.backward(cache, np.asarray(grad_out, dtype=np.float64))


def zero_grads(params: Iterable[Param]) -> None:
    for p in params:
        p.zero_grad()


def squared_norm(params: Iterable[Param]) -> float:
    return float(sum(np.sum(p.value * p.value) for p in params))


def add_l2_grad(params: Iterable[Param], strength: float) -> None:
    """Accumulate the gradient of ``strength * sum(theta**2)``."""
    if strength:
        for p in params:
            p.grad += 2.0 * strength * p.value


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: Sequence[Param], state: AdamState) -> None:
    """One bias-corrected Adam update in place. Gradients are left untouched."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for i, p in enumerate(params):
        m = state.m.get(i)
        if m is None:
            m = state.m[i] = np.zeros_like(p.value)
            state.v[i] = np.zeros_like(p.value)
        v = state.v[i]
        if m.shape != p.value.shape:
            raise ValueError(f"optimizer state shape mismatch for {p.name!r}")
        m *= b1
        m += (1.0 - b1) * p.grad
        v *= b2
        v += (1.0 - b2) * p.grad * p.grad
        p.value -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def grad_check(loss_fn: Callable[[], float], params: Sequence[Param], h: float = 1e-5) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``loss_fn`` must zero the gradients, evaluate the loss and run the
    backward pass, so that after a call each ``Param.grad`` holds the analytic
    gradient at the current values.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    base = loss_fn()
    if not np.isfinite(base):
        raise FloatingPointError("loss is not finite")
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.value.reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + h
            up = loss_fn()
            flat[j] = old - h
            down = loss_fn()
            flat[j] = old
            if not (np.isfinite(up) and np.isfinite(down)):
                raise FloatingPointError("loss is not finite")
            num = (up - down) / (2.0 * h)
            a = g.reshape(-1)[j]
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
    loss_fn()
    return worst


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named tensors in the ``DARECNN1`` binary layout.

    Per tensor: u32 name length, UTF-8 name, u32 rows, u32 cols, then
    rows*cols little-endian float64 values in row-major order. Vectors are
    stored as 1 x n.
    """
    out = bytearray(CHECKPOINT_MAGIC)
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ValueError(f"tensor {name!r} must be 1-D or 2-D")
        raw = name.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack("<II", *arr.shape)
        out += np.ascontiguousarray(arr).tobytes()
    Path(path).write_bytes(bytes(out))


def load_tensors(path) -> dict[str, np.ndarray]:
    """Read a ``DARECNN1`` file; every tensor comes back 2-D."""
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a DARECNN1 checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    tensors = {}
    while pos < len(data):
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + n].decode("utf-8")
        pos += n
        rows, cols = struct.unpack_from("<II", data, pos)
        pos += 8
        size = rows * cols * 8
        if pos + size > len(data):
            raise ValueError(f"{path}: truncated tensor {name!r}")
        tensors[name] = np.frombuffer(data, dtype="<f8", count=rows * cols,
                                      offset=pos).reshape(rows, cols).astype(np.float64)
        pos += size
    return tensors


def params_to_tensors(params: Iterable[Param]) -> dict[str, np.ndarray]:
    return {p.name: p.value for p in params}


def load_into(params: Iterable[Param], tensors: dict[str, np.ndarray]) -> None:
    for p in params:
        if p.name not in tensors:
            raise KeyError(f"checkpoint has no tensor {p.name!r}")
        arr = tensors[p.name]
        if arr.size != p.value.size:
            raise ValueError(f"tensor {p.name!r} has {arr.size} entries, expected {p.value.size}")
        p.value[...] = arr.reshape(p.value.shape)
