"""Dense tensor arithmetic with reverse-mode automatic differentiation.

Everything trainable in this repository flows through the `Tensor` class:
a numpy array plus an optional gradient accumulator and a record of the
primitive that produced it. Calling `backward()` on a scalar loss replays
the recorded adjoints in reverse creation order (creation order is a
topological order of the graph), so two backward passes over identical
forwards are bit-identical.

Element type is a run-mode switch: verification suites run in 64-bit with
strict numerics (tiny divisors raise), training runs in 32-bit with
clamped divisors. See `run_mode`.
"""

import itertools
import json
from contextlib import contextmanager

import numpy as np

from .errors import InputError, NumericalError, ShapeError


class Mode:
    def __init__(self, name, dtype, strict, eps_div):
        self.name = name
        self.dtype = dtype
        self.strict = strict
        self.eps_div = eps_div

    def __repr__(self):
        return f"Mode({self.name})"


VERIFY = Mode("verify", np.float64, strict=True, eps_div=1e-12)
TRAIN = Mode("train", np.float32, strict=False, eps_div=1e-6)
_MODES = {"verify": VERIFY, "train": TRAIN}

_mode = VERIFY


def current_mode():
    return _mode


def set_mode(name):
    global _mode
    if name not in _MODES:
        raise InputError(f"unknown run mode {name!r}; expected one of {sorted(_MODES)}")
    _mode = _MODES[name]


@contextmanager
def run_mode(name):
    """Temporarily switch the element type / strictness, e.g. run_mode('train')."""
    global _mode
    prev = _mode
    set_mode(name)
    try:
        yield _mode
    finally:
        _mode = prev


_ids = itertools.count()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _mode.dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._id = next(_ids)

    # ---- basic introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def detach(self):
        out = Tensor(self.data, requires_grad=False, dtype=self.data.dtype)
        return out

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # ---- operator sugar ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap_scalar(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sigmoid(self):
        return sigmoid(self)

    def silu(self):
        return silu(self)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce_max(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes or None)


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad=False):
    return Tensor(np.zeros(shape, dtype=_mode.dtype), requires_grad=requires_grad)


def ones(shape, requires_grad=False):
    return Tensor(np.ones(shape, dtype=_mode.dtype), requires_grad=requires_grad)


def _wrap_scalar(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _make(data, parents, backward):
    out = Tensor(data, dtype=data.dtype)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


# ---- binary elementwise ops --------------------------------------------------
# Binary ops require equal shapes or a scalar operand; no other broadcasting.


def _check_binary(a, b, opname):
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{opname}: shapes {a.shape} and {b.shape} are neither equal nor scalar")


def _reduce_to(g, shape):
    # adjoint of scalar broadcast: sum everything back to the scalar's shape
    if g.shape == tuple(shape):
        return g
    return np.sum(g).reshape(shape)


def add(a, b):
    a = a if isinstance(a, Tensor) else _wrap_scalar(a, b)
    b = _wrap_scalar(b, a)
    _check_binary(a, b, "add")
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g, a.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(g, b.shape))

    return _make(out_data, (a, b), backward)


def sub(a, b):
    a = a if isinstance(a, Tensor) else _wrap_scalar(a, b)
    b = _wrap_scalar(b, a)
    _check_binary(a, b, "sub")
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g, a.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(-g, b.shape))

    return _make(out_data, (a, b), backward)


def mul(a, b):
    a = a if isinstance(a, Tensor) else _wrap_scalar(a, b)
    b = _wrap_scalar(b, a)
    _check_binary(a, b, "mul")
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(g * a.data, b.shape))

    return _make(out_data, (a, b), backward)


def _safe_denominator(d):
    """Apply the run-mode divisor policy: strict modes raise, training clamps."""
    eps = _mode.eps_div
    small = np.abs(d) < eps
    if not small.any():
        return d
    if _mode.strict:
        raise NumericalError(
            f"division by |denominator| < {eps:g} in verification mode "
            f"(min |d| = {np.abs(d).min():.3g})"
        )
    sign = np.where(d < 0, -1.0, 1.0).astype(d.dtype)
    return np.where(small, sign * eps, d)


def div(a, b):
    a = a if isinstance(a, Tensor) else _wrap_scalar(a, b)
    b = _wrap_scalar(b, a)
    _check_binary(a, b, "div")
    denom = _safe_denominator(b.data)
    out_data = a.data / denom

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g / denom, a.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(-g * a.data / (denom * denom), b.shape))

    return _make(out_data, (a, b), backward)


# ---- unary elementwise ops ---------------------------------------------------


def neg(a):
    def backward(g):
        a._accumulate(-g)

    return _make(-a.data, (a,), backward)


def exp(a):
    out_data = np.exp(a.data)

    def backward(g):
        a._accumulate(g * out_data)

    return _make(out_data, (a,), backward)


def log(a):
    out_data = np.log(a.data)

    def backward(g):
        a._accumulate(g / a.data)

    return _make(out_data, (a,), backward)


def _sigmoid(x):
    # stable in both tails
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    out_data = _sigmoid(a.data)

    def backward(g):
        a._accumulate(g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), backward)


def silu(a):
    s = _sigmoid(a.data)
    out_data = a.data * s

    def backward(g):
        a._accumulate(g * s * (1.0 + a.data * (1.0 - s)))

    return _make(out_data, (a,), backward)


def pow_scalar(a, c):
    c = float(c)
    out_data = a.data ** c

    def backward(g):
        a._accumulate(g * c * a.data ** (c - 1.0))

    return _make(out_data, (a,), backward)


# ---- structured ops ----------------------------------------------------------


def matmul(a, b):
    """Matrix product on the trailing two axes; leading axes must match exactly."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            b._accumulate(np.swapaxes(a.data, -1, -2) @ g)

    return _make(out_data, (a, b), backward)


def _parse_einsum(subscripts, n_ops):
    if "->" not in subscripts:
        raise ShapeError("einsum: explicit '->' output required")
    lhs, rhs = subscripts.split("->")
    terms = lhs.split(",")
    if len(terms) != n_ops:
        raise ShapeError(f"einsum: {len(terms)} terms for {n_ops} operands")
    for term in terms:
        bare = term.replace("...", "")
        if len(set(bare)) != len(bare):
            raise ShapeError(f"einsum: repeated index within one term {term!r} is unsupported")
    for i, term in enumerate(terms):
        others = set(rhs.replace("...", ""))
        for j, other in enumerate(terms):
            if j != i:
                others |= set(other.replace("...", ""))
        missing = set(term.replace("...", "")) - others
        if missing:
            raise ShapeError(
                f"einsum: index {missing} of term {term!r} appears nowhere else; "
                "its adjoint is not defined"
            )
    return terms, rhs


def einsum(subscripts, *ops):
    """Multi-linear contraction; each operand's adjoint is itself an einsum."""
    terms, rhs = _parse_einsum(subscripts, len(ops))
    arrays = [op.data for op in ops]
    out_data = np.einsum(subscripts, *arrays)

    def backward(g):
        for i, op in enumerate(ops):
            if not op.requires_grad:
                continue
            in_terms = [rhs] + [terms[j] for j in range(len(ops)) if j != i]
            in_arrays = [g] + [arrays[j] for j in range(len(ops)) if j != i]
            spec = ",".join(in_terms) + "->" + terms[i]
            op._accumulate(np.einsum(spec, *in_arrays))

    return _make(out_data, ops, backward)


def bias_add(a, b):
    """Add a vector along the last axis: out[..., i] = a[..., i] + b[i]."""
    if b.ndim != 1 or b.shape[0] != a.shape[-1]:
        raise ShapeError(f"bias_add: bias {b.shape} does not match last axis of {a.shape}")
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g.reshape(-1, b.shape[0]).sum(axis=0))

    return _make(out_data, (a, b), backward)


def mul_const(a, const):
    """Elementwise multiply by a fixed (non-differentiable) array, e.g. a causal mask."""
    const = np.asarray(const, dtype=a.data.dtype)
    out_data = a.data * const
    if out_data.shape != a.shape:
        raise ShapeError(f"mul_const: constant {const.shape} must not broadcast {a.shape} up")

    def backward(g):
        a._accumulate(g * const)

    return _make(out_data, (a,), backward)


def add_const(a, const):
    """Elementwise add a fixed array (used for -inf style masking)."""
    const = np.asarray(const, dtype=a.data.dtype)
    out_data = a.data + const
    if out_data.shape != a.shape:
        raise ShapeError(f"add_const: constant {const.shape} must not broadcast {a.shape} up")

    def backward(g):
        a._accumulate(g)

    return _make(out_data, (a,), backward)


def cumsum(a, axis):
    out_data = np.cumsum(a.data, axis=axis)

    def backward(g):
        rev = np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)
        a._accumulate(rev)

    return _make(out_data, (a,), backward)


def pairwise_diff(a, axis=-2):
    """All-pairs differences along `axis`: out[..., t, s, :] = a[..., t, :] - a[..., s, :].

    The paired axis is inserted right after `axis`; used for log-space decay
    products exp(L_t - L_s), which never overflow for s <= t.
    """
    if axis != -2:
        raise ShapeError("pairwise_diff: only axis=-2 (time before channels) is supported")
    out_data = a.data[..., :, None, :] - a.data[..., None, :, :]

    def backward(g):
        a._accumulate(g.sum(axis=-2) - g.sum(axis=-3))

    return _make(out_data, (a,), backward)


def transpose(a, axes=None):
    out_data = np.transpose(a.data, axes)
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)

    def backward(g):
        a._accumulate(np.transpose(g, inv))

    return _make(out_data, (a,), backward)


def reshape(a, shape):
    out_data = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return _make(out_data, (a,), backward)


def slice_axis(a, axis, start, stop):
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out_data = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        a._accumulate(full)

    return _make(out_data, (a,), backward)


def concat(tensors, axis):
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _make(out_data, tuple(tensors), backward)


def embedding(weight, ids):
    """Row gather: out[..., :] = weight[ids[...], :]. ids is a plain int array."""
    ids = np.asarray(ids)
    if ids.min() < 0 or ids.max() >= weight.shape[0]:
        raise InputError(
            f"embedding: id out of range [0, {weight.shape[0]}) "
            f"(got min {ids.min()}, max {ids.max()})"
        )
    out_data = weight.data[ids]

    def backward(g):
        dw = np.zeros_like(weight.data)
        np.add.at(dw, ids, g)
        weight._accumulate(dw)

    return _make(out_data, (weight,), backward)


# ---- reductions ----------------------------------------------------------------


def reduce_sum(a, axis=None, keepdims=False):
    _check_axis(a, axis)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape).copy())

    return _make(np.asarray(out_data), (a,), backward)


def reduce_mean(a, axis=None, keepdims=False):
    _check_axis(a, axis)
    count = a.size if axis is None else a.shape[axis]
    out_data = a.data.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape) / count)

    return _make(np.asarray(out_data), (a,), backward)


def reduce_max(a, axis=None, keepdims=False):
    """Max reduction; at ties the subgradient goes to the first maximal index."""
    _check_axis(a, axis)
    out_data = a.data.max(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            mask = np.zeros(a.size)
            mask[np.argmax(a.data)] = 1.0
            a._accumulate((mask * np.sum(g)).reshape(a.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
            mask = np.zeros_like(a.data)
            np.put_along_axis(mask, idx, 1.0, axis=axis)
            a._accumulate(mask * gg)

    return _make(np.asarray(out_data), (a,), backward)


def _check_axis(a, axis):
    if axis is None:
        return
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"invalid axis {axis} for shape {a.shape}")


# ---- fused layers ---------------------------------------------------------------


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then apply the affine."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias must be ({d},), got {gain.shape}/{bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * gain.data + bias.data

    def backward(g):
        if gain.requires_grad:
            gain._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gh = g * gain.data
            m1 = gh.mean(axis=-1, keepdims=True)
            m2 = (gh * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(inv * (gh - m1 - xhat * m2))

    return _make(out_data, (x, gain, bias), backward)


def cross_entropy_logits(logits, targets, ignore_index=-1):
    """Mean negative log-softmax over non-ignored positions (max-subtraction stabilized)."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy_logits: expected (n, V) logits, got {logits.shape}")
    n, v = logits.shape
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (n,):
        raise ShapeError(f"cross_entropy_logits: targets shape {targets.shape} != ({n},)")
    keep = targets != ignore_index
    count = int(keep.sum())
    if count == 0:
        raise InputError("empty loss: every position carries ignore_index")
    bad = keep & ((targets < 0) | (targets >= v))
    if bad.any():
        raise InputError(f"cross_entropy_logits: target out of [0, {v}) at position {np.argmax(bad)}")

    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    safe_t = np.where(keep, targets, 0)
    picked = logp[np.arange(n), safe_t]
    out_data = np.asarray(-(picked * keep).sum() / count)

    def backward(g):
        p = np.exp(logp)
        p[np.arange(n), safe_t] -= 1.0
        p[~keep] = 0.0
        logits._accumulate(g * p / count)

    return _make(out_data, (logits,), backward)


# ---- backward pass ---------------------------------------------------------------


def backward(loss):
    """Accumulate gradients of `loss` into every reachable requires_grad tensor.

    Repeated calls accumulate; the caller zeroes grads between steps.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    nodes = []
    seen = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(t._parents)
    # creation order is a topological order of the forward graph
    nodes.sort(key=lambda t: t._id, reverse=True)
    loss._accumulate(np.ones_like(loss.data))
    for t in nodes:
        if t._backward is not None and t.grad is not None:
            t._backward(t.grad)


# ---- serialization ----------------------------------------------------------------

_DTYPE_TAGS = {np.dtype(np.float64): "<f8", np.dtype(np.float32): "<f4"}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


def save_tensor(path, t):
    """Flat little-endian binary with a one-line JSON shape header."""
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    tag = _DTYPE_TAGS[np.dtype(arr.dtype)]
    header = json.dumps({"shape": list(arr.shape), "dtype": tag}).encode() + b"\n"
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(arr, dtype=tag).tobytes())


def load_tensor(path, requires_grad=False):
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode())
        raw = f.read()
    dtype = _TAG_DTYPES[header["dtype"]]
    arr = np.frombuffer(raw, dtype=header["dtype"]).astype(dtype).reshape(header["shape"])
    return Tensor(arr, requires_grad=requires_grad, dtype=dtype)
