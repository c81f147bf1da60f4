"""Dense SeLU multi-layer perceptrons and flat parameter storage.

Hidden layers use SeLU, the output layer is affine. The forward pass,
the input Jacobian and the input JVP all accept either numpy arrays
(fast evaluation) or tape `Node`s (training); the Jacobian is assembled
in the graph as a product of per-layer weight matrices and diagonal
activation-derivative factors, so its entries can appear inside any
scalar that `tape.grad` differentiates with respect to the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tape
from .tape import Node, T, einsum, expand_last, matmul, selu, selu_prime


@dataclass(frozen=True)
class MLPSpec:
    """Architecture: in_dim -> hidden[0] -> ... -> hidden[-1] -> out_dim."""

    in_dim: int
    out_dim: int
    hidden: tuple[int, ...] = ()

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("all layer widths must be positive")
        object.__setattr__(self, "hidden", tuple(self.hidden))

    def layer_dims(self):
        """(fan_in, fan_out) per affine layer."""
        dims = (self.in_dim,) + self.hidden + (self.out_dim,)
        return [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]

    def param_count(self):
        return sum((fi + 1) * fo for fi, fo in self.layer_dims())


def init_mlp(spec: MLPSpec, rng: np.random.Generator):
    """Glorot-uniform weights, zero biases; returns [(W, b), ...]."""
    params = []
    for fan_in, fan_out in spec.layer_dims():
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        params.append((w, np.zeros(fan_out)))
    return params


def mlp_forward(spec: MLPSpec, params, x):
    """Apply the network to x of shape (..., in_dim)."""
    _check_dim(x, spec.in_dim)
    a = x
    for w, b in params[:-1]:
        a = selu(matmul_vec(a, w) + b)
    w, b = params[-1]
    return matmul_vec(a, w) + b


def mlp_input_jacobian(spec: MLPSpec, params, x):
    """d output / d input, shape (B, out_dim, in_dim), for x of shape (B, in_dim).

    Entries stay differentiable with respect to the parameters when
    params/x are tape nodes.
    """
    _check_dim(x, spec.in_dim)
    a = x
    jac = None
    for w, b in params[:-1]:
        z = matmul_vec(a, w) + b
        s = selu_prime(z)  # (B, h)
        if jac is None:
            jac = expand_last(s) * w  # (B, h, in)
        else:
            jac = expand_last(s) * matmul(w, jac)
        a = selu(z)
    w, _ = params[-1]
    if jac is None:
        batch = x.shape[0] if isinstance(x, Node) else np.asarray(x).shape[0]
        return einsum("oi,b->boi", w, np.ones(batch))
    return matmul(w, jac)


def mlp_input_jvp(spec: MLPSpec, params, x, v):
    """Jacobian-vector product d output/d input . v without forming the matrix."""
    _check_dim(x, spec.in_dim)
    _check_dim(v, spec.in_dim)
    a = x
    u = v
    for w, b in params[:-1]:
        z = matmul_vec(a, w) + b
        u = selu_prime(z) * matmul_vec(u, w)
        a = selu(z)
    w, _ = params[-1]
    return matmul_vec(u, w)


def matmul_vec(x, w):
    """x @ w.T for x of shape (..., in) against a weight matrix (out, in)."""
    if isinstance(x, Node) or isinstance(w, Node):
        xs = x.shape if isinstance(x, Node) else np.asarray(x).shape
        if len(xs) == 1:
            return tape.reshape(matmul(tape.reshape(x, (1, xs[0])), T(w)), (-1,))
        return matmul(x, T(w))
    x = np.asarray(x)
    w = np.asarray(w)
    return x @ w.T


def _check_dim(x, d):
    shape = x.shape if isinstance(x, Node) else np.asarray(x).shape
    if shape[-1] != d:
        raise ValueError(f"last axis must have size {d}, got {shape[-1]}")


# -- flat parameter storage ------------------------------------------------


@dataclass
class ParamVector:
    """Flat float64 parameter array with a named-segment layout."""

    values: np.ndarray
    layout: tuple[tuple[str, tuple[int, ...]], ...]
    _offsets: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.layout = tuple((name, tuple(shape)) for name, shape in self.layout)
        offsets = {}
        pos = 0
        for name, shape in self.layout:
            size = int(np.prod(shape)) if shape else 1
            offsets[name] = (pos, size, shape)
            pos += size
        if pos != self.values.size:
            raise ValueError(f"layout sums to {pos} but values has {self.values.size} entries")
        self._offsets = offsets

    @classmethod
    def from_dict(cls, segments):
        """Build from an ordered {name: array} mapping."""
        layout = tuple((name, np.asarray(a).shape) for name, a in segments.items())
        values = np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in segments.values()]) \
            if segments else np.zeros(0)
        return cls(values, layout)

    def view(self, name):
        """Writable reshaped view of one segment."""
        pos, size, shape = self._offsets[name]
        return self.values[pos:pos + size].reshape(shape)

    def unpack(self):
        return {name: self.view(name).copy() for name, _ in self.layout}

    def names(self):
        return [name for name, _ in self.layout]

    def segment_slice(self, name):
        pos, size, _ = self._offsets[name]
        return slice(pos, pos + size)

    def copy(self):
        return ParamVector(self.values.copy(), self.layout)

    @property
    def size(self):
        return self.values.size


def mlp_segments(prefix: str, spec: MLPSpec):
    """Layout entries for one network's weights and biases."""
    out = []
    for i, (fan_in, fan_out) in enumerate(spec.layer_dims()):
        out.append((f"{prefix}.W{i}", (fan_out, fan_in)))
        out.append((f"{prefix}.b{i}", (fan_out,)))
    return out


def mlp_params_from(pv: ParamVector, prefix: str, spec: MLPSpec, as_nodes=False):
    """Extract [(W, b), ...] for one network, optionally as tape leaves."""
    out = []
    for i in range(len(spec.layer_dims())):
        w = pv.view(f"{prefix}.W{i}")
        b = pv.view(f"{prefix}.b{i}")
        if as_nodes:
            w, b = tape.leaf(w), tape.leaf(b)
        out.append((w, b))
    return out
