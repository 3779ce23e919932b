"""Small reverse-mode differentiation engine over numpy arrays.

Values taking part in a gradient computation are wrapped in :class:`Var`
objects owned by a :class:`Tape`. Every primitive below accepts plain
arrays as well; when none of its arguments is a ``Var`` it simply evaluates
with numpy and records nothing. This lets the demapper, the shaping decoder
and the BP decoder be written once and used both for fast simulation and for
training.

Example::

    tape = Tape()
    x = tape.var([1.0, 2.0])
    y = ad.sum(ad.exp(x) * x)
    (gx,) = tape.gradient(y, [x])
"""

import numpy as np

__all__ = [
    "Tape", "Var", "value",
    "add", "sub", "mul", "div", "neg", "power", "exp", "log", "sqrt",
    "square", "tanh", "arctanh", "sigmoid", "softplus", "log_sigmoid",
    "relu", "clip", "sum", "mean", "logsumexp", "matmul", "take",
    "segment_sum", "spmatmul", "getitem", "reshape", "transpose", "concatenate",
    "stack", "where",
]


class Tape:
    """Records primitive operations in evaluation order.

    Nodes are appended as they are created, so the record is already in
    topological order and the backward pass is a single reverse sweep.
    """

    def __init__(self):
        self._nodes = []

    def __len__(self):
        return len(self._nodes)

    def var(self, value):
        """Wrap ``value`` as a differentiable leaf."""
        return Var(np.array(value, dtype=float), self)

    def _push(self, value, parents):
        out = Var(value, self)
        self._nodes.append((out, parents))
        return out

    def gradient(self, target, sources, seed=None):
        """Gradients of ``target`` with respect to each of ``sources``.

        ``target`` is usually a scalar; for array targets ``seed`` gives the
        cotangent (defaults to ones).
        """
        if seed is None:
            seed = np.ones_like(target.value)
        keep = {id(s) for s in sources}
        grads = {id(target): np.asarray(seed, dtype=float)}
        for out, parents in reversed(self._nodes):
            key = id(out)
            g = grads.get(key) if key in keep else grads.pop(key, None)
            if g is None:
                continue
            for parent, vjp in parents:
                contrib = vjp(g)
                pk = id(parent)
                if pk in grads:
                    grads[pk] = grads[pk] + contrib
                else:
                    grads[pk] = contrib
        return [grads.get(id(s), np.zeros_like(s.value)) for s in sources]


class Var:
    """An array value tracked by a tape."""

    __slots__ = ("value", "tape")
    __array_ufunc__ = None  # make ndarray (op) Var dispatch to Var's reflected op

    def __init__(self, value, tape):
        self.value = value
        self.tape = tape

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    @property
    def T(self):
        return transpose(self)

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var({self.value!r})"

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)


def value(x):
    """The numpy value behind ``x`` (identity for plain arrays)."""
    return x.value if isinstance(x, Var) else np.asarray(x)


def _emit(out, parents):
    parents = [(p, f) for p, f in parents if isinstance(p, Var)]
    if not parents:
        return out
    return parents[0][0].tape._push(out, parents)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- elementwise -----------------------------------------------------------

def add(a, b):
    av, bv = value(a), value(b)
    return _emit(av + bv, [
        (a, lambda g: _unbroadcast(g, av.shape)),
        (b, lambda g: _unbroadcast(g, bv.shape)),
    ])


def sub(a, b):
    av, bv = value(a), value(b)
    return _emit(av - bv, [
        (a, lambda g: _unbroadcast(g, av.shape)),
        (b, lambda g: _unbroadcast(-g, bv.shape)),
    ])


def mul(a, b):
    av, bv = value(a), value(b)
    return _emit(av * bv, [
        (a, lambda g: _unbroadcast(g * bv, av.shape)),
        (b, lambda g: _unbroadcast(g * av, bv.shape)),
    ])


def div(a, b):
    av, bv = value(a), value(b)
    out = av / bv
    return _emit(out, [
        (a, lambda g: _unbroadcast(g / bv, av.shape)),
        (b, lambda g: _unbroadcast(-g * out / bv, bv.shape)),
    ])


def neg(a):
    return _emit(-value(a), [(a, lambda g: -g)])


def power(a, p):
    """``a ** p`` for a constant exponent."""
    av = value(a)
    return _emit(av ** p, [(a, lambda g: g * p * av ** (p - 1))])


def exp(a):
    out = np.exp(value(a))
    return _emit(out, [(a, lambda g: g * out)])


def log(a):
    av = value(a)
    return _emit(np.log(av), [(a, lambda g: g / av)])


def sqrt(a):
    out = np.sqrt(value(a))
    return _emit(out, [(a, lambda g: 0.5 * g / out)])


def square(a):
    av = value(a)
    return _emit(av * av, [(a, lambda g: 2.0 * g * av)])


def tanh(a):
    out = np.tanh(value(a))
    return _emit(out, [(a, lambda g: g * (1.0 - out * out))])


def arctanh(a):
    av = value(a)
    return _emit(np.arctanh(av), [(a, lambda g: g / (1.0 - av * av))])


def _sigmoid(x):
    # evaluated through tanh: no overflow warnings for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a):
    out = _sigmoid(value(a))
    return _emit(out, [(a, lambda g: g * out * (1.0 - out))])


def softplus(a):
    av = value(a)
    return _emit(np.logaddexp(0.0, av), [(a, lambda g: g * _sigmoid(av))])


def log_sigmoid(a):
    av = value(a)
    return _emit(-np.logaddexp(0.0, -av), [(a, lambda g: g * _sigmoid(-av))])


def relu(a):
    av = value(a)
    return _emit(np.maximum(av, 0.0), [(a, lambda g: g * (av > 0))])


def clip(a, lo, hi):
    """Clamp to ``[lo, hi]``; the gradient is zero where clamping is active."""
    av = value(a)
    inside = (av >= lo) & (av <= hi)
    return _emit(np.clip(av, lo, hi), [(a, lambda g: g * inside)])


def where(cond, a, b):
    """Select from ``a`` where the constant mask ``cond`` holds, else ``b``."""
    cond = np.asarray(cond, dtype=bool)
    av, bv = value(a), value(b)
    return _emit(np.where(cond, av, bv), [
        (a, lambda g: _unbroadcast(np.where(cond, g, 0.0), av.shape)),
        (b, lambda g: _unbroadcast(np.where(cond, 0.0, g), bv.shape)),
    ])


# -- reductions ------------------------------------------------------------

def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        axes = sorted(ax % len(shape) for ax in axes)
        for ax in axes:
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def sum(a, axis=None, keepdims=False):
    av = value(a)
    return _emit(av.sum(axis=axis, keepdims=keepdims), [
        (a, lambda g: _expand_reduced(g, av.shape, axis, keepdims).copy()),
    ])


def mean(a, axis=None, keepdims=False):
    av = value(a)
    count = av.size // np.asarray(av.sum(axis=axis, keepdims=keepdims)).size
    return div(sum(a, axis=axis, keepdims=keepdims), float(count))


def logsumexp(a, axis=-1, keepdims=False):
    """Max-shifted ``log(sum(exp(a)))`` along one axis."""
    av = value(a)
    mx = np.max(av, axis=axis, keepdims=True)
    e = np.exp(av - mx)
    s = e.sum(axis=axis, keepdims=True)
    out = mx + np.log(s)
    weights = e / s
    res = out if keepdims else np.squeeze(out, axis=axis)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return g * weights

    return _emit(res, [(a, vjp)])


# -- linear algebra and indexing ------------------------------------------

def matmul(a, b):
    av, bv = value(a), value(b)

    def ga(g):
        if bv.ndim == 1:
            return _unbroadcast(np.multiply.outer(g, bv), av.shape)
        return _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)

    def gb(g):
        if bv.ndim == 1:
            return _unbroadcast((av * g[..., None]).reshape(-1, bv.shape[0]).sum(0), bv.shape)
        return _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)

    return _emit(av @ bv, [(a, ga), (b, gb)])


def _scatter_add(g, idx, axis, size):
    """Sum slices of ``g`` into ``size`` bins along ``axis`` by index ``idx``."""
    idx = np.asarray(idx)
    nd_out = g.ndim - idx.ndim + 1
    axis = axis % nd_out
    lead = g.shape[:axis]
    trail = g.shape[axis + idx.ndim:]
    gm = g.reshape(lead + (idx.size,) + trail)
    gm = np.moveaxis(gm, axis, -1)
    outer = gm.shape[:-1]
    rows = int(np.prod(outer, dtype=np.int64))
    flat = gm.reshape(rows, idx.size)
    offs = (np.arange(rows)[:, None] * size + idx.ravel()[None, :]).ravel()
    acc = np.bincount(offs, weights=flat.ravel(), minlength=rows * size)
    return np.moveaxis(acc.reshape(outer + (size,)), -1, axis)


def take(a, idx, axis=-1):
    """Gather ``a`` along ``axis`` with a constant integer index array."""
    av = value(a)
    idx = np.asarray(idx)
    ax = axis % av.ndim
    return _emit(np.take(av, idx, axis=ax), [
        (a, lambda g: _scatter_add(g, idx, ax, av.shape[ax])),
    ])


def segment_sum(a, idx, size, axis=-1):
    """Scatter-add entries of ``a`` along ``axis`` into ``size`` bins."""
    av = value(a)
    idx = np.asarray(idx)
    ax = axis % av.ndim
    out = _scatter_add(av, idx, ax, size)
    return _emit(out, [(a, lambda g: np.take(g, idx, axis=ax))])


def spmatmul(a, S):
    """``a @ S`` for a constant scipy sparse matrix ``S`` (last axis of ``a``)."""
    av = value(a)
    lead = av.shape[:-1]
    flat = av.reshape(-1, av.shape[-1])
    out = np.asarray((S.T @ flat.T).T).reshape(lead + (S.shape[1],))

    def vjp(g):
        gf = g.reshape(-1, S.shape[1])
        return np.asarray((S @ gf.T).T).reshape(av.shape)

    return _emit(out, [(a, vjp)])


def getitem(a, key):
    av = value(a)

    def vjp(g):
        z = np.zeros_like(av)
        np.add.at(z, key, g)
        return z

    return _emit(av[key], [(a, vjp)])


def reshape(a, shape):
    av = value(a)
    return _emit(av.reshape(shape), [(a, lambda g: g.reshape(av.shape))])


def transpose(a, axes=None):
    av = value(a)
    out = np.transpose(av, axes)
    inv = None if axes is None else np.argsort(axes)
    return _emit(out, [(a, lambda g: np.transpose(g, inv))])


def concatenate(items, axis=0):
    vals = [value(x) for x in items]
    out = np.concatenate(vals, axis=axis)
    ax = axis % out.ndim
    bounds = np.cumsum([v.shape[ax] for v in vals])[:-1]
    parents = []
    for i, x in enumerate(items):
        def vjp(g, i=i):
            return np.split(g, bounds, axis=ax)[i]
        parents.append((x, vjp))
    return _emit(out, parents)


def stack(items, axis=0):
    vals = [value(x) for x in items]
    out = np.stack(vals, axis=axis)
    ax = axis % out.ndim
    parents = []
    for i, x in enumerate(items):
        def vjp(g, i=i):
            return np.take(g, i, axis=ax)
        parents.append((x, vjp))
    return _emit(out, parents)
