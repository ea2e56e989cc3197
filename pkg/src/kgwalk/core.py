"""Minimal define-by-run reverse-mode autodiff on numpy arrays.

Every op records its parents and a closure mapping the output gradient to
parent gradients. ``Tensor.backward`` walks the tape in reverse topological
order. The tape is rebuilt on every forward pass and released by backward.
"""

from __future__ import annotations

import contextlib
from collections import OrderedDict

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Run ops without recording them on the tape."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class ShapeError(ValueError):
    pass


def _check(cond, op, *shapes):
    if not cond:
        raise ShapeError(f"{op}: incompatible shapes " + " and ".join(str(s) for s in shapes))


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_spent", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._spent = False
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def backward(self):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf on the tape."""
        if self._spent:
            raise RuntimeError("backward() called twice on the same recorded computation")
        if self.data.size != 1:
            raise ShapeError(f"backward: loss must be a scalar, got shape {self.shape}")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if node._backward is None:
                # leaf
                if g is not None:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            if g is None:
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            node._parents = ()
            node._backward = None
        self._spent = True


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), backward)


def relu(x):
    pos = x.data > 0

    def backward(g):
        return (g * pos,)

    return _make(x.data * pos, (x,), backward)


def sigmoid(x):
    out = _np_sigmoid(x.data)

    def backward(g):
        return (g * out * (1.0 - out),)

    return _make(out, (x,), backward)


def tanh(x):
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _make(out, (x,), backward)


def log_sigmoid(x):
    """Numerically stable log(sigmoid(x))."""
    d = x.data
    out = -np.logaddexp(0.0, -d)

    def backward(g):
        return (g * _np_sigmoid(-d),)

    return _make(out, (x,), backward)


def square(x):
    d = x.data

    def backward(g):
        return (2.0 * g * d,)

    return _make(d * d, (x,), backward)


def _np_sigmoid(d):
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# ---------------------------------------------------------------- reductions

def sum(x, axis=None):
    shape = x.shape

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(x.data.sum(axis=axis)), (x,), backward)


def mean(x, axis=None):
    n = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis), 1.0 / n)


# ---------------------------------------------------------------- structure

def matmul(a, b):
    _check(a.data.ndim == 2 and b.data.ndim == 2 and a.shape[1] == b.shape[0],
           "matmul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def backward(g):
        return g @ bd.T, ad.T @ g

    return _make(ad @ bd, (a, b), backward)


def linear(x, weight, bias=None):
    """x @ weight.T + bias, with x of shape (B, in) and weight (out, in)."""
    _check(x.data.ndim == 2 and weight.data.ndim == 2 and x.shape[1] == weight.shape[1],
           "linear", x.shape, weight.shape)
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        _check(bias.shape == (wd.shape[0],), "linear bias", bias.shape, wd.shape)
        out = out + bias.data

    def backward(g):
        grads = [g @ wd, g.T @ xd]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, backward)


def concat(tensors, axis=-1):
    tensors = list(tensors)
    ref = tensors[0].shape
    for t in tensors[1:]:
        _check(len(t.shape) == len(ref), "concat", ref, t.shape)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def getitem(x, key):
    shape = x.shape
    dtype = x.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, key, g)
        return (full,)

    return _make(x.data[key], (x,), backward)


def gather(table, idx):
    """Row lookup: ``table[idx]`` for an integer index array of any shape."""
    idx = np.asarray(idx)
    shape = table.shape
    dtype = table.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, shape[1]))
        return (full,)

    return _make(table.data[idx], (table,), backward)


def bmv(mat, vec):
    """Batched matrix-vector product: (B, K, d) x (B, d) -> (B, K)."""
    _check(mat.data.ndim == 3 and vec.data.ndim == 2 and mat.shape[0] == vec.shape[0]
           and mat.shape[2] == vec.shape[1], "bmv", mat.shape, vec.shape)
    md, vd = mat.data, vec.data

    def backward(g):
        return g[:, :, None] * vd[:, None, :], np.einsum("bk,bkd->bd", g, md)

    return _make(np.einsum("bkd,bd->bk", md, vd), (mat, vec), backward)


def pick(x, idx):
    """Select one column per row: out[b] = x[b, idx[b]]."""
    idx = np.asarray(idx)
    rows = np.arange(x.shape[0])
    shape, dtype = x.shape, x.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        full[rows, idx] = g
        return (full,)

    return _make(x.data[rows, idx], (x,), backward)


# ---------------------------------------------------------------- softmax

def _masked_log_softmax_np(logits, mask):
    z = np.where(mask, logits, -np.inf)
    zmax = z.max(axis=-1, keepdims=True)
    zmax = np.where(np.isfinite(zmax), zmax, 0.0)
    ex = np.where(mask, np.exp(z - zmax), 0.0)
    tot = ex.sum(axis=-1, keepdims=True)
    tot = np.where(tot > 0, tot, 1.0)
    logp = np.where(mask, z - zmax - np.log(tot), 0.0)
    p = ex / tot
    return logp, p


def masked_softmax_np(logits, mask):
    return _masked_log_softmax_np(logits, mask)[1]


def masked_log_softmax(logits, mask):
    """Log-softmax over the last axis restricted to ``mask``.

    Masked positions get log-prob 0 in the output (not -inf) so downstream
    products stay finite; their probability is exactly 0.
    """
    mask = np.asarray(mask, dtype=bool)
    _check(mask.shape == logits.shape, "masked_log_softmax", logits.shape, mask.shape)
    logp, p = _masked_log_softmax_np(logits.data, mask)

    def backward(g):
        g = np.where(mask, g, 0.0)
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _make(logp, (logits,), backward)


def masked_entropy(logits, mask):
    """Entropy of the masked softmax distribution per row."""
    mask = np.asarray(mask, dtype=bool)
    _check(mask.shape == logits.shape, "masked_entropy", logits.shape, mask.shape)
    logp, p = _masked_log_softmax_np(logits.data, mask)
    ent = -(p * logp).sum(axis=-1)

    def backward(g):
        # dH/dz_i = -p_i (log p_i + H)
        return (np.where(mask, -g[..., None] * p * (logp + ent[..., None]), 0.0),)

    return _make(ent, (logits,), backward)


# ---------------------------------------------------------------- dropout

def dropout(x, rate, train, rng):
    if not train or rate <= 0.0:
        return x
    if not 0.0 <= rate <= 0.95:
        raise ValueError(f"dropout rate {rate} outside [0, 0.95]")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)

    def backward(g):
        return (g * keep,)

    return _make(x.data * keep, (x,), backward)


# ---------------------------------------------------------------- parameters

class Parameter(Tensor):
    __slots__ = ("trainable",)

    def __init__(self, data, name=None, trainable=True):
        super().__init__(data, requires_grad=True, name=name)
        self.trainable = trainable


def xavier_uniform(shape, rng, dtype=np.float32):
    fan_out, fan_in = shape[0], shape[1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class ParameterTable:
    """Named parameter arrays with fixed shapes."""

    def __init__(self):
        self._params = OrderedDict()

    def add(self, name, data, trainable=True):
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        p = Parameter(np.array(data), name=name, trainable=trainable)
        self._params[name] = p
        return p

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def names(self, prefix=None):
        return [n for n in self._params if prefix is None or n.startswith(prefix)]

    def items(self):
        return self._params.items()

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def state_dict(self):
        return OrderedDict((n, p.data.copy()) for n, p in self._params.items())

    def load_state_dict(self, state, strict=True):
        for name, arr in state.items():
            if name not in self._params:
                if strict:
                    raise KeyError(f"unexpected parameter {name!r}")
                continue
            p = self._params[name]
            if p.data.shape != arr.shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} != parameter shape {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)
        if strict:
            missing = set(self._params) - set(state)
            if missing:
                raise KeyError(f"missing parameters: {sorted(missing)}")

    def astype(self, dtype):
        for p in self._params.values():
            p.data = p.data.astype(dtype)
        return self

    def checksum(self, names=None):
        import hashlib

        h = hashlib.sha256()
        for n in names if names is not None else self._params:
            h.update(n.encode())
            h.update(np.ascontiguousarray(self._params[n].data).tobytes())
        return h.hexdigest()


def clip_grad_norm(params, names, max_norm):
    grads = [params[n].grad for n in names if params[n].grad is not None]
    if not grads:
        return 0.0
    total = float(np.sqrt(np.sum([np.sum(g.astype(np.float64) ** 2) for g in grads])))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for n in names:
            if params[n].grad is not None:
                params[n].grad = params[n].grad * scale
    return total


class Adam:
    """Adam with bias correction. Only updates the names passed to ``step``."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, names=None):
        if names is None:
            names = [n for n, p in self.params.items() if p.trainable]
        names = [n for n in names if self.params[n].grad is not None]
        bad = [n for n in names if not np.all(np.isfinite(self.params[n].grad))]
        if bad:
            raise FloatingPointError(f"non-finite gradient in {bad}; step aborted")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for n in names:
            p = self.params[n]
            g = p.grad
            if n not in self.m:
                self.m[n] = np.zeros_like(p.data)
                self.v[n] = np.zeros_like(p.data)
            m = self.m[n] = b1 * self.m[n] + (1 - b1) * g
            v = self.v[n] = b2 * self.v[n] + (1 - b2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.dtype, copy=False)


# ---------------------------------------------------------------- LSTM

def init_lstm(params, prefix, input_dim, hidden_dim, num_layers, rng, dtype=np.float32):
    for layer in range(num_layers):
        in_dim = input_dim if layer == 0 else hidden_dim
        W = xavier_uniform((4 * hidden_dim, in_dim + hidden_dim), rng, dtype)
        b = np.zeros(4 * hidden_dim, dtype=dtype)
        b[hidden_dim:2 * hidden_dim] = 1.0  # forget gate
        params.add(f"{prefix}.{layer}.W", W)
        params.add(f"{prefix}.{layer}.b", b)


def lstm_cell(x, h, c, W, b):
    """One LSTM step, gate order (input, forget, cell, output)."""
    H = h.shape[1]
    _check(W.shape == (4 * H, x.shape[1] + H), "lstm_cell", x.shape, h.shape, W.shape)
    z = linear(concat([x, h], axis=1), W, b)
    i = sigmoid(z[:, :H])
    f = sigmoid(z[:, H:2 * H])
    g = tanh(z[:, 2 * H:3 * H])
    o = sigmoid(z[:, 3 * H:])
    c_new = f * c + i * g
    h_new = o * tanh(c_new)
    return h_new, c_new


def lstm_stack_step(params, prefix, num_layers, x, state):
    """Advance every layer by one input; returns new state [(h, c), ...]."""
    new_state = []
    inp = x
    for layer in range(num_layers):
        h, c = state[layer]
        h, c = lstm_cell(inp, h, c, params[f"{prefix}.{layer}.W"], params[f"{prefix}.{layer}.b"])
        new_state.append((h, c))
        inp = h
    return new_state


def zero_state(batch, hidden_dim, num_layers, dtype=np.float32):
    return [(Tensor(np.zeros((batch, hidden_dim), dtype=dtype)),
             Tensor(np.zeros((batch, hidden_dim), dtype=dtype))) for _ in range(num_layers)]


# ---------------------------------------------------------------- checkpoint

_MAGIC = b"KGWALK-CKPT"
_VERSION = 1


def save_checkpoint(path, arrays, meta=None):
    """Write named arrays as a versioned container with little-endian payloads."""
    meta = dict(meta or {})
    with open(path, "wb") as f:
        f.write(_MAGIC + b" %d\n" % _VERSION)
        f.write(b"%d\n" % len(meta))
        for k, v in meta.items():
            f.write(f"{k}={v}\n".encode())
        f.write(b"%d\n" % len(arrays))
        for name, arr in arrays.items():
            arr = np.asarray(arr)
            code = {"f": "f", "i": "i", "u": "i", "b": "i"}[arr.dtype.kind] + str(max(arr.dtype.itemsize, 4))
            le = arr.astype("<" + code)
            shape = ",".join(str(s) for s in arr.shape)
            f.write(f"{name}\t{code}\t{shape}\n".encode())
            f.write(np.ascontiguousarray(le).tobytes())


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns (arrays, meta)."""
    with open(path, "rb") as f:
        head = f.readline().split()
        if not head or head[0] != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        if int(head[1]) != _VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {head[1].decode()}")
        meta = {}
        for _ in range(int(f.readline())):
            k, _, v = f.readline().decode().rstrip("\n").partition("=")
            meta[k] = v
        arrays = OrderedDict()
        for _ in range(int(f.readline())):
            name, code, shape = f.readline().decode().rstrip("\n").split("\t")
            shape = tuple(int(s) for s in shape.split(",")) if shape else ()
            dt = np.dtype("<" + code)
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(count * dt.itemsize)
            arrays[name] = np.frombuffer(buf, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    return arrays, meta
