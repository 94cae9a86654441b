"""Tape-based reverse-mode differentiation.

Every primitive works elementwise on numpy arrays with broadcasting, so a
batch of segments is carried through one tape node instead of thousands of
scalar nodes. The same primitive functions accept plain floats/arrays; in that
case nothing is recorded and the numpy result is returned directly, which lets
the simulator share one code path between fitting and evaluation.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tape", "Var", "DomainError", "TapeError", "record", "backward",
    "add", "sub", "mul", "div", "neg", "sin", "cos", "tanh", "exp", "clip",
    "minimum", "maximum", "square", "sqrt", "relu", "matmul", "sum", "mean",
    "stack", "reshape", "value_of", "is_var", "PRIMITIVES",
]


class DomainError(ArithmeticError):
    """Primitive evaluated outside its domain (division by zero, sqrt < 0)."""


class TapeError(ValueError):
    """Misuse of the tape: foreign nodes, non-scalar loss, non-leaf params."""


class Tape:
    """Ordered list of primitive records.

    Each record is ``(kind, input_ids, vjps)`` where ``vjps[k]`` maps the
    output adjoint to the contribution for ``input_ids[k]``. Records are
    appended in evaluation order, so the list is topologically sorted.
    """

    def __init__(self):
        self.kinds: list[str] = []
        self.inputs: list[tuple[int, ...]] = []
        self.vjps: list[tuple] = []
        self.shapes: list[tuple[int, ...]] = []

    def __len__(self):
        return len(self.kinds)

    def var(self, value) -> "Var":
        """Create a leaf node."""
        value = np.asarray(value, dtype=float)
        return self._push("leaf", value, (), ())

    def _push(self, kind, value, inputs, vjps) -> "Var":
        self.kinds.append(kind)
        self.inputs.append(inputs)
        self.vjps.append(vjps)
        self.shapes.append(np.shape(value))
        return Var(value, self, len(self.kinds) - 1)


class Var:
    __slots__ = ("value", "tape", "index")
    __array_priority__ = 1000  # numpy defers binary ops to Var

    def __init__(self, value, tape: Tape, index: int):
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Var({self.value!r}, node={self.index})"

    def __len__(self):
        return len(self.value)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        if exponent == 2:
            return square(self)
        raise TapeError("only square (** 2) is supported")

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return _getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)


def is_var(x) -> bool:
    return isinstance(x, Var)


def value_of(x):
    return x.value if isinstance(x, Var) else x


def _tape_of(*xs) -> Tape | None:
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise TapeError("inputs belong to different tapes")
    return tape


def _unbroadcast(g, shape):
    """Sum an adjoint back down to ``shape`` after numpy broadcasting."""
    g = np.asarray(g)
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _elementwise(kind, out, args, partials):
    """Record an elementwise op given its local partial arrays."""
    tape = _tape_of(*args)
    inputs, vjps = [], []
    for x, d in zip(args, partials):
        if isinstance(x, Var):
            shape = x.shape
            inputs.append(x.index)
            vjps.append(lambda g, d=d, shape=shape: _unbroadcast(g * d, shape))
    return tape._push(kind, out, tuple(inputs), tuple(vjps))


# -- elementwise primitives ------------------------------------------------

def add(a, b):
    out = value_of(a) + value_of(b)
    if _tape_of(a, b) is None:
        return out
    return _elementwise("add", out, (a, b), (1.0, 1.0))


def sub(a, b):
    out = value_of(a) - value_of(b)
    if _tape_of(a, b) is None:
        return out
    return _elementwise("sub", out, (a, b), (1.0, -1.0))


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    out = av * bv
    if _tape_of(a, b) is None:
        return out
    return _elementwise("mul", out, (a, b), (bv, av))


def div(a, b):
    av, bv = value_of(a), value_of(b)
    tape = _tape_of(a, b)
    if np.any(np.asarray(bv) == 0):
        where = f" at node {len(tape)}" if tape is not None else ""
        raise DomainError(f"division by zero{where}")
    out = av / bv
    if tape is None:
        return out
    return _elementwise("div", out, (a, b), (1.0 / bv, -out / bv))


def neg(a):
    if not isinstance(a, Var):
        return -a
    return _elementwise("neg", -a.value, (a,), (-1.0,))


def sin(a):
    if not isinstance(a, Var):
        return np.sin(a)
    return _elementwise("sin", np.sin(a.value), (a,), (np.cos(a.value),))


def cos(a):
    if not isinstance(a, Var):
        return np.cos(a)
    return _elementwise("cos", np.cos(a.value), (a,), (-np.sin(a.value),))


def tanh(a):
    if not isinstance(a, Var):
        return np.tanh(a)
    out = np.tanh(a.value)
    return _elementwise("tanh", out, (a,), (1.0 - out * out,))


def exp(a):
    if not isinstance(a, Var):
        return np.exp(a)
    out = np.exp(a.value)
    return _elementwise("exp", out, (a,), (out,))


def square(a):
    if not isinstance(a, Var):
        return a * a
    return _elementwise("square", a.value * a.value, (a,), (2.0 * a.value,))


def sqrt(a):
    av = value_of(a)
    if np.any(np.asarray(av) < 0):
        where = f" at node {len(a.tape)}" if isinstance(a, Var) else ""
        raise DomainError(f"sqrt of negative value{where}")
    out = np.sqrt(av)
    if not isinstance(a, Var):
        return out
    with np.errstate(divide="ignore"):
        d = np.where(out > 0, 0.5 / np.where(out > 0, out, 1.0), np.inf)
    return _elementwise("sqrt", out, (a,), (d,))


def clip(a, lo, hi):
    """Clip with the interior-branch subgradient at the bounds.

    Only ``a`` is differentiated; the bounds are constants.
    """
    av = value_of(a)
    out = np.clip(av, lo, hi)
    if not isinstance(a, Var):
        return out
    active = ((av >= lo) & (av <= hi)).astype(float)
    return _elementwise("clip", out, (a,), (active,))


def maximum(a, b):
    """Elementwise max; ties route the derivative to ``a``."""
    av, bv = value_of(a), value_of(b)
    out = np.maximum(av, bv)
    if _tape_of(a, b) is None:
        return out
    pick_a = (np.asarray(av) >= np.asarray(bv)).astype(float)
    return _elementwise("max", out, (a, b), (pick_a, 1.0 - pick_a))


def minimum(a, b):
    """Elementwise min; ties route the derivative to ``a``."""
    av, bv = value_of(a), value_of(b)
    out = np.minimum(av, bv)
    if _tape_of(a, b) is None:
        return out
    pick_a = (np.asarray(av) <= np.asarray(bv)).astype(float)
    return _elementwise("min", out, (a, b), (pick_a, 1.0 - pick_a))


def relu(a):
    return maximum(a, 0.0)


# -- structural primitives -------------------------------------------------

def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    out = av @ bv
    tape = _tape_of(a, b)
    if tape is None:
        return out
    inputs, vjps = [], []
    if isinstance(a, Var):
        inputs.append(a.index)
        if np.ndim(bv) == 1:
            vjps.append(lambda g: np.multiply.outer(g, bv))
        else:
            vjps.append(lambda g: g @ bv.T)
    if isinstance(b, Var):
        inputs.append(b.index)
        if np.ndim(av) == 1:
            vjps.append(lambda g: np.multiply.outer(av, g))
        else:
            vjps.append(lambda g: av.T @ g)
    return tape._push("matmul", out, tuple(inputs), tuple(vjps))


def sum(a, axis=None):  # noqa: A001 - mirrors numpy naming
    if not isinstance(a, Var):
        return np.sum(a, axis=axis)
    shape = a.shape
    out = np.sum(a.value, axis=axis)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape).copy()

    return a.tape._push("sum", out, (a.index,), (vjp,))


def mean(a, axis=None):
    n = np.size(value_of(a)) if axis is None else np.shape(value_of(a))[axis]
    return mul(sum(a, axis=axis), 1.0 / n)


def stack(xs, axis=-1):
    values = [np.broadcast_to(value_of(x), np.shape(value_of(xs[0]))) for x in xs]
    out = np.stack(values, axis=axis)
    tape = _tape_of(*xs)
    if tape is None:
        return out
    inputs, vjps = [], []
    for k, x in enumerate(xs):
        if isinstance(x, Var):
            shape = x.shape
            inputs.append(x.index)
            vjps.append(lambda g, k=k, shape=shape:
                        _unbroadcast(np.take(g, k, axis=axis), shape))
    return tape._push("stack", out, tuple(inputs), tuple(vjps))


def reshape(a, shape):
    if not isinstance(a, Var):
        return np.reshape(a, shape)
    old = a.shape
    return a.tape._push("reshape", np.reshape(a.value, shape), (a.index,),
                        (lambda g: np.reshape(g, old),))


def _getitem(a: Var, key):
    out = a.value[key]
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, key, g)
        return full

    return a.tape._push("index", np.array(out, dtype=float), (a.index,), (vjp,))


PRIMITIVES = {
    "add": add, "sub": sub, "mul": mul, "div": div, "neg": neg, "sin": sin,
    "cos": cos, "tanh": tanh, "exp": exp, "clip": clip, "min": minimum,
    "max": maximum, "square": square, "sqrt": sqrt,
}


def record(op_kind: str, *inputs, **kwargs):
    """Apply primitive ``op_kind`` to ``inputs`` and record it on their tape."""
    try:
        fn = PRIMITIVES[op_kind]
    except KeyError:
        raise TapeError(f"unknown primitive {op_kind!r}") from None
    return fn(*inputs, **kwargs)


def backward(loss: Var, params) -> np.ndarray:
    """Gradient of a scalar ``loss`` with respect to leaf ``params``.

    Returns the partials concatenated in the order of ``params`` (each leaf
    flattened C-style), i.e. the layout of the flattened parameter vector.
    """
    if not isinstance(loss, Var):
        raise TapeError("loss is not on a tape")
    tape = loss.tape
    if np.size(loss.value) != 1:
        raise TapeError("loss must be a scalar node")
    for p in params:
        if not isinstance(p, Var) or p.tape is not tape:
            raise TapeError("parameter is not on the loss tape")
        if tape.kinds[p.index] != "leaf":
            raise TapeError(f"parameter node {p.index} is not a leaf")

    adj: list = [None] * (loss.index + 1)
    adj[loss.index] = np.ones(tape.shapes[loss.index])
    for i in range(loss.index, -1, -1):
        g = adj[i]
        if g is None:
            continue
        for j, vjp in zip(tape.inputs[i], tape.vjps[i]):
            contrib = vjp(g)
            adj[j] = contrib if adj[j] is None else adj[j] + contrib

    parts = []
    for p in params:
        g = adj[p.index] if p.index < len(adj) else None
        parts.append(np.zeros(p.shape).ravel() if g is None
                     else np.asarray(g, dtype=float).ravel())
    return np.concatenate(parts) if parts else np.zeros(0)
