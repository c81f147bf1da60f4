"""Reverse-mode differentiation on numpy arrays.

A tiny expression tape: every operation records its parents and a VJP
closure, and `grad` walks the graph once in reverse topological order.
Values are whole float64 arrays rather than scalars, so a batched loss
builds a graph of a few dozen nodes instead of millions.

All public ops dispatch on type: given plain arrays they compute with
numpy and return an array (no tape overhead), given at least one `Node`
they extend the graph. This lets model code be written once and serve
both fast evaluation and training.

Second-order use (gradients of expressions containing network input
Jacobians) works because the Jacobians are assembled in the forward
graph from `selu_prime` nodes, whose own derivative (`selu'' `) is just
another primitive; a single reverse sweep then suffices.
"""

from __future__ import annotations

import numpy as np

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772


class Node:
    """One value in the expression graph."""

    __slots__ = ("value", "_parents", "_vjp", "needs")

    # make numpy defer to the reflected operators below
    __array_ufunc__ = None

    def __init__(self, value, parents=(), vjp=None, needs=False):
        self.value = np.asarray(value, dtype=np.float64)
        self._parents = parents
        self._vjp = vjp
        self.needs = needs

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(shape={self.value.shape}, needs={self.needs})"

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Node):
            raise TypeError("division only by constants")
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __pow__(self, n):
        return powi(self, n)

    def __getitem__(self, idx):
        return getitem(self, idx)


def leaf(value):
    """Differentiable input (a parameter)."""
    return Node(value, needs=True)


def constant(value):
    return Node(value)


def _wrap(x):
    return x if isinstance(x, Node) else Node(x)


def _any_node(*xs):
    return any(isinstance(x, Node) for x in xs)


def _make(value, parents, vjp):
    needs = any(p.needs for p in parents)
    if not needs:
        return Node(value)
    return Node(value, parents, vjp, True)


def _unbroadcast(g, shape):
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- arithmetic ----------------------------------------------------------


def add(a, b):
    if not _any_node(a, b):
        return np.add(a, b)
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value

    def vjp(g):
        return (
            _unbroadcast(g, av.shape) if a.needs else None,
            _unbroadcast(g, bv.shape) if b.needs else None,
        )

    return _make(av + bv, (a, b), vjp)


def sub(a, b):
    if not _any_node(a, b):
        return np.subtract(a, b)
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value

    def vjp(g):
        return (
            _unbroadcast(g, av.shape) if a.needs else None,
            _unbroadcast(-g, bv.shape) if b.needs else None,
        )

    return _make(av - bv, (a, b), vjp)


def mul(a, b):
    if not _any_node(a, b):
        return np.multiply(a, b)
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value

    def vjp(g):
        return (
            _unbroadcast(g * bv, av.shape) if a.needs else None,
            _unbroadcast(g * av, bv.shape) if b.needs else None,
        )

    return _make(av * bv, (a, b), vjp)


def neg(a):
    if not isinstance(a, Node):
        return -np.asarray(a)
    return _make(-a.value, (a,), lambda g: (-g if a.needs else None,))


def powi(a, n):
    n = int(n)
    if n < 1:
        raise ValueError("integer power >= 1 only")
    if not isinstance(a, Node):
        return np.asarray(a) ** n
    av = a.value

    def vjp(g):
        return (g * n * av ** (n - 1) if a.needs else None,)

    return _make(av**n, (a,), vjp)


def square(a):
    return powi(a, 2)


def absolute(a):
    if not isinstance(a, Node):
        return np.abs(a)
    av = a.value

    def vjp(g):
        return (g * np.sign(av) if a.needs else None,)

    return _make(np.abs(av), (a,), vjp)


def matmul(a, b):
    """np.matmul with broadcasting over leading (batch) axes; operands must be >= 2-D."""
    if not _any_node(a, b):
        return np.matmul(a, b)
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2:
        raise ValueError("matmul operands must have ndim >= 2")

    def vjp(g):
        ga = gb = None
        if a.needs:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(bv, -1, -2)), av.shape)
        if b.needs:
            gb = _unbroadcast(np.matmul(np.swapaxes(av, -1, -2), g), bv.shape)
        return ga, gb

    return _make(np.matmul(av, bv), (a, b), vjp)


# -- shape ops -----------------------------------------------------------


def transpose(a, axes=None):
    if not isinstance(a, Node):
        return np.transpose(a, axes)
    av = a.value
    if axes is None:
        axes = tuple(range(av.ndim))[::-1]
    inv = tuple(np.argsort(axes))

    def vjp(g):
        return (np.transpose(g, inv) if a.needs else None,)

    return _make(np.transpose(av, axes), (a,), vjp)


def T(a):
    """Transpose of the last two axes."""
    if not isinstance(a, Node):
        return np.swapaxes(a, -1, -2)
    ax = tuple(range(a.value.ndim - 2)) + (a.value.ndim - 1, a.value.ndim - 2)
    return transpose(a, ax)


def reshape(a, shape):
    if not isinstance(a, Node):
        return np.reshape(a, shape)
    old = a.value.shape

    def vjp(g):
        return (g.reshape(old) if a.needs else None,)

    return _make(a.value.reshape(shape), (a,), vjp)


def expand_last(a):
    """Append a trailing singleton axis."""
    if not isinstance(a, Node):
        return np.asarray(a)[..., None]
    return reshape(a, a.value.shape + (1,))


def getitem(a, idx):
    if not isinstance(a, Node):
        return np.asarray(a)[idx]
    av = a.value

    def vjp(g):
        out = np.zeros_like(av)
        out[idx] = g
        return (out if a.needs else None,)

    return _make(av[idx], (a,), vjp)


def concat(parts, axis=-1):
    if not _any_node(*parts):
        return np.concatenate(parts, axis=axis)
    parts = [_wrap(p) for p in parts]
    sizes = [p.value.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        gs = np.split(g, splits, axis=axis)
        return tuple(gi if p.needs else None for p, gi in zip(parts, gs))

    return _make(np.concatenate([p.value for p in parts], axis=axis), tuple(parts), vjp)


def fill_tril(vec, n):
    """Scatter a flat vector of length n(n+1)/2 into an n x n lower triangle."""
    rows, cols = np.tril_indices(n)
    if not isinstance(vec, Node):
        out = np.zeros((n, n))
        out[rows, cols] = vec
        return out
    if vec.value.shape != (rows.size,):
        raise ValueError(f"expected {rows.size} entries for a {n}x{n} lower triangle")
    out = np.zeros((n, n))
    out[rows, cols] = vec.value

    def vjp(g):
        return (g[rows, cols] if vec.needs else None,)

    return _make(out, (vec,), vjp)


# -- reductions ----------------------------------------------------------


def sum_(a, axis=None, keepdims=False):
    if not isinstance(a, Node):
        return np.sum(a, axis=axis, keepdims=keepdims)
    av = a.value

    def vjp(g):
        if not a.needs:
            return (None,)
        if axis is None:
            return (np.broadcast_to(g, av.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, av.shape).copy(),)

    return _make(np.sum(av, axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a, axis=None, keepdims=False):
    if not isinstance(a, Node):
        return np.mean(a, axis=axis, keepdims=keepdims)
    av = a.value
    count = av.size if axis is None else av.shape[axis]
    return sum_(a, axis=axis, keepdims=keepdims) / count


# -- nonlinearities -------------------------------------------------------


def _selu_np(x):
    return SELU_LAMBDA * np.where(x >= 0, x, SELU_ALPHA * np.expm1(x))


def _selu_prime_np(x):
    # x = 0 takes the positive branch.
    return SELU_LAMBDA * np.where(x >= 0, 1.0, SELU_ALPHA * np.exp(x))


def _selu_second_np(x):
    return SELU_LAMBDA * np.where(x >= 0, 0.0, SELU_ALPHA * np.exp(x))


def selu(a):
    if not isinstance(a, Node):
        return _selu_np(np.asarray(a, dtype=np.float64))
    av = a.value

    def vjp(g):
        return (g * _selu_prime_np(av) if a.needs else None,)

    return _make(_selu_np(av), (a,), vjp)


def selu_prime(a):
    """selu'(x) as a differentiable primitive (its derivative is selu'')."""
    if not isinstance(a, Node):
        return _selu_prime_np(np.asarray(a, dtype=np.float64))
    av = a.value

    def vjp(g):
        return (g * _selu_second_np(av) if a.needs else None,)

    return _make(_selu_prime_np(av), (a,), vjp)


# -- einsum ---------------------------------------------------------------


def _parse_einsum(spec, n_ops):
    if "..." in spec:
        raise ValueError("ellipsis not supported")
    lhs, _, out = spec.partition("->")
    if not _:
        raise ValueError("einsum spec must contain '->'")
    in_specs = lhs.split(",")
    if len(in_specs) != n_ops:
        raise ValueError("operand count does not match spec")
    for s in in_specs:
        if len(set(s)) != len(s):
            raise ValueError("repeated index within one operand is not supported")
    return in_specs, out


def einsum(spec, *ops):
    arrs = [o.value if isinstance(o, Node) else np.asarray(o, dtype=np.float64) for o in ops]
    if not _any_node(*ops):
        return np.einsum(spec, *arrs)
    in_specs, out_spec = _parse_einsum(spec, len(ops))
    nodes = [_wrap(o) for o in ops]
    value = np.einsum(spec, *arrs)

    def vjp(g):
        grads = []
        for i, node in enumerate(nodes):
            if not node.needs:
                grads.append(None)
                continue
            others = [arrs[j] for j in range(len(arrs)) if j != i]
            other_specs = [in_specs[j] for j in range(len(arrs)) if j != i]
            avail = set("".join(other_specs) + out_spec)
            target = in_specs[i]
            present = "".join(c for c in target if c in avail)
            sub = ",".join(other_specs + [out_spec]) + "->" + present
            partial = np.einsum(sub, *others, g)
            if present != target:
                # indices summed only inside this operand: gradient broadcasts
                idx = tuple(slice(None) if c in avail else None for c in target)
                partial = np.broadcast_to(partial[idx], arrs[i].shape).copy()
            grads.append(partial)
        return tuple(grads)

    return _make(value, tuple(nodes), vjp)


# -- reverse sweep --------------------------------------------------------


def grad(root, leaves):
    """Gradient of a scalar `root` with respect to each node in `leaves`.

    Returns a list of arrays aligned with `leaves`; a leaf that does not
    influence the root gets zeros.
    """
    if not isinstance(root, Node):
        raise TypeError("grad root must be a Node")
    if root.value.size != 1:
        raise ValueError("grad root must be scalar")

    # iterative postorder over the needs-subgraph
    topo = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.needs and id(p) not in visited:
                stack.append((p, False))

    grads = {id(root): np.ones_like(root.value)}
    for node in reversed(topo):
        g = grads.get(id(node))
        if g is None or node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.needs:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg

    out = []
    for lf in leaves:
        g = grads.get(id(lf))
        out.append(np.zeros_like(lf.value) if g is None else np.asarray(g))
    return out
