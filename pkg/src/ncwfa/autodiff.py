"""Minimal reverse-mode automatic differentiation over numpy arrays.

A computation is expressed once against an "ops namespace" and can then run
in two modes:

* ``np_ops``   -- plain numpy; returns ndarrays (inference path).
* ``grad_ops`` -- returns ``Var`` nodes that record vector-Jacobian products;
  ``backward`` on a scalar result fills every leaf's ``.grad``.

Both namespaces execute the same underlying numpy calls in the same order, so
a formula evaluated through either one produces bit-identical values.  The
operator set is the small fixed family the density losses need: einsum
contractions, elementwise arithmetic, tanh/exp/log, axis sums, log-sum-exp
and a lower clip.
"""

import numpy as np

from .prob_core import logsumexp_arr


class Var:
    """A node in the tape: value plus recorded pullbacks to its parents."""

    __slots__ = ("value", "grad", "parents")

    def __init__(self, value, parents=()):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.parents = parents  # tuple of (Var, vjp) pairs

    @property
    def shape(self):
        return self.value.shape


def value_of(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to `shape`."""
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def backward(root: Var):
    """Accumulate gradients of a scalar `root` into every reachable leaf."""
    if root.value.size != 1:
        raise ValueError("backward expects a scalar loss")
    topo = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    root.grad = np.ones_like(root.value)
    for node in reversed(topo):
        if node.grad is None:
            continue
        for parent, vjp in node.parents:
            g = vjp(node.grad)
            parent.grad = g if parent.grad is None else parent.grad + g


class _NumpyOps:
    """The formula vocabulary, executed eagerly on ndarrays."""

    @staticmethod
    def add(a, b):
        return np.add(a, b)

    @staticmethod
    def sub(a, b):
        return np.subtract(a, b)

    @staticmethod
    def mul(a, b):
        return np.multiply(a, b)

    @staticmethod
    def div(a, b):
        return np.divide(a, b)

    @staticmethod
    def neg(a):
        return np.negative(a)

    @staticmethod
    def einsum(spec, *args):
        return np.einsum(spec, *args)

    @staticmethod
    def tanh(a):
        return np.tanh(a)

    @staticmethod
    def exp(a):
        return np.exp(a)

    @staticmethod
    def log(a):
        return np.log(a)

    @staticmethod
    def sum(a, axis=None, keepdims=False):
        return np.sum(a, axis=axis, keepdims=keepdims)

    @staticmethod
    def logsumexp(a, axis=-1, keepdims=False):
        return logsumexp_arr(a, axis=axis, keepdims=keepdims)

    @staticmethod
    def clip_min(a, low):
        return np.maximum(a, low)


class _GradOps:
    """The same vocabulary, recording the tape.  Non-Var inputs are constants."""

    @staticmethod
    def add(a, b):
        out = np.add(value_of(a), value_of(b))
        parents = []
        if isinstance(a, Var):
            parents.append((a, lambda g, s=a.shape: _unbroadcast(g, s)))
        if isinstance(b, Var):
            parents.append((b, lambda g, s=b.shape: _unbroadcast(g, s)))
        return Var(out, tuple(parents))

    @staticmethod
    def sub(a, b):
        out = np.subtract(value_of(a), value_of(b))
        parents = []
        if isinstance(a, Var):
            parents.append((a, lambda g, s=a.shape: _unbroadcast(g, s)))
        if isinstance(b, Var):
            parents.append((b, lambda g, s=b.shape: _unbroadcast(-g, s)))
        return Var(out, tuple(parents))

    @staticmethod
    def mul(a, b):
        av, bv = value_of(a), value_of(b)
        parents = []
        if isinstance(a, Var):
            parents.append((a, lambda g, s=a.shape: _unbroadcast(g * bv, s)))
        if isinstance(b, Var):
            parents.append((b, lambda g, s=b.shape: _unbroadcast(g * av, s)))
        return Var(np.multiply(av, bv), tuple(parents))

    @staticmethod
    def div(a, b):
        av, bv = value_of(a), value_of(b)
        parents = []
        if isinstance(a, Var):
            parents.append((a, lambda g, s=a.shape: _unbroadcast(g / bv, s)))
        if isinstance(b, Var):
            parents.append((b, lambda g, s=b.shape: _unbroadcast(-g * av / (bv * bv), s)))
        return Var(np.divide(av, bv), tuple(parents))

    @staticmethod
    def neg(a):
        out = np.negative(value_of(a))
        parents = ()
        if isinstance(a, Var):
            parents = ((a, lambda g: -g),)
        return Var(out, parents)

    @staticmethod
    def einsum(spec, *args):
        in_specs, out_spec = spec.split("->")
        in_specs = in_specs.split(",")
        values = [value_of(a) for a in args]
        out = np.einsum(spec, *values)
        parents = []
        for i, a in enumerate(args):
            if not isinstance(a, Var):
                continue
            other_specs = [s for j, s in enumerate(in_specs) if j != i]
            other_vals = [values[j] for j in range(len(args)) if j != i]
            back = ",".join([out_spec] + other_specs) + "->" + in_specs[i]

            def vjp(g, back=back, other_vals=tuple(other_vals)):
                return np.einsum(back, g, *other_vals)

            parents.append((a, vjp))
        return Var(out, tuple(parents))

    @staticmethod
    def tanh(a):
        out = np.tanh(value_of(a))
        parents = ()
        if isinstance(a, Var):
            parents = ((a, lambda g: g * (1.0 - out * out)),)
        return Var(out, parents)

    @staticmethod
    def exp(a):
        out = np.exp(value_of(a))
        parents = ()
        if isinstance(a, Var):
            parents = ((a, lambda g: g * out),)
        return Var(out, parents)

    @staticmethod
    def log(a):
        av = value_of(a)
        parents = ()
        if isinstance(a, Var):
            parents = ((a, lambda g: g / av),)
        return Var(np.log(av), parents)

    @staticmethod
    def sum(a, axis=None, keepdims=False):
        av = value_of(a)
        out = np.sum(av, axis=axis, keepdims=keepdims)
        parents = ()
        if isinstance(a, Var):

            def vjp(g, shape=av.shape):
                g = np.asarray(g)
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                return np.broadcast_to(g, shape)

            parents = ((a, vjp),)
        return Var(out, parents)

    @staticmethod
    def logsumexp(a, axis=-1, keepdims=False):
        av = value_of(a)
        out = logsumexp_arr(av, axis=axis, keepdims=keepdims)
        parents = ()
        if isinstance(a, Var):

            def vjp(g):
                m = np.max(av, axis=axis, keepdims=True)
                e = np.exp(av - m)
                soft = e / e.sum(axis=axis, keepdims=True)
                g = np.asarray(g)
                if not keepdims:
                    g = np.expand_dims(g, axis)
                return g * soft

            parents = ((a, vjp),)
        return Var(out, parents)

    @staticmethod
    def clip_min(a, low):
        av = value_of(a)
        out = np.maximum(av, low)
        parents = ()
        if isinstance(a, Var):
            parents = ((a, lambda g: g * (av > low)),)
        return Var(out, parents)


np_ops = _NumpyOps()
grad_ops = _GradOps()
