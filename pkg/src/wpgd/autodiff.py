"""Minimal reverse-mode automatic differentiation on float64 numpy arrays.

A Tensor wraps an ndarray plus the graph edges needed for one backward pass.
The op set is exactly what the bundled classifier architectures and the
attack/smoothing losses need: dense and 1-D conv layers, pooling, batch
normalization, dropout, softmax and cross-entropy, plus a few glue ops.
No higher-order gradients, no GPU, no dynamic shapes.
"""

import numpy as np

__all__ = [
    "ShapeMismatchError",
    "Tensor",
    "add",
    "avg_pool1d",
    "backward",
    "batch_norm",
    "conv1d",
    "cross_entropy",
    "dense",
    "dropout",
    "global_average_pool",
    "log",
    "matmul",
    "mean_all",
    "multiply",
    "relu",
    "reshape",
    "select_class",
    "sigmoid",
    "softmax",
]


class ShapeMismatchError(ValueError):
    """Operands with incompatible shapes; the message names both."""


class Tensor:
    """A node in the computation graph: cached output plus backward edges."""

    __slots__ = ("data", "grad", "op", "_parents", "_backward")

    def __init__(self, data, parents=(), op="leaf", backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.op = op
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return multiply(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _ensure(t):
    return t if isinstance(t, Tensor) else Tensor(t, op="const")


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _accumulate(node, contribution):
    node.grad = contribution if node.grad is None else node.grad + contribution


def _topo_order(root):
    """Parents-before-children ordering; deterministic for a fixed graph."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss, leaves):
    """Gradients of a scalar `loss` with respect to each tensor in `leaves`.

    Leaves not reachable from the loss get a zero gradient of their shape.
    """
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
    leaves = list(leaves)
    order = _topo_order(loss)
    for node in order:
        node.grad = None
    for leaf in leaves:
        leaf.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    return {
        leaf: leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        for leaf in leaves
    }


# ---------------------------------------------------------------------------
# elementwise and linear ops


def add(a, b):
    a, b = _ensure(a), _ensure(b)
    try:
        out_data = a.data + b.data
    except ValueError:
        raise ShapeMismatchError(
            f"add: incompatible shapes {a.data.shape} and {b.data.shape}"
        ) from None

    def _back(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return Tensor(out_data, (a, b), "add", _back)


def multiply(a, b):
    a, b = _ensure(a), _ensure(b)
    try:
        out_data = a.data * b.data
    except ValueError:
        raise ShapeMismatchError(
            f"multiply: incompatible shapes {a.data.shape} and {b.data.shape}"
        ) from None

    def _back(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return Tensor(out_data, (a, b), "multiply", _back)


def matmul(a, b):
    a, b = _ensure(a), _ensure(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatchError(
            f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}"
        )
    out_data = a.data @ b.data

    def _back(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return Tensor(out_data, (a, b), "matmul", _back)


def dense(x, weight, bias):
    """Affine layer x @ weight + bias for x of shape (batch, features)."""
    x, weight, bias = _ensure(x), _ensure(weight), _ensure(bias)
    if (
        x.data.ndim != 2
        or weight.data.ndim != 2
        or x.data.shape[1] != weight.data.shape[0]
        or bias.data.shape != (weight.data.shape[1],)
    ):
        raise ShapeMismatchError(
            f"dense: incompatible shapes x={x.data.shape}, "
            f"weight={weight.data.shape}, bias={bias.data.shape}"
        )
    out_data = x.data @ weight.data + bias.data

    def _back(g):
        _accumulate(x, g @ weight.data.T)
        _accumulate(weight, x.data.T @ g)
        _accumulate(bias, g.sum(axis=0))

    return Tensor(out_data, (x, weight, bias), "dense", _back)


def relu(x):
    x = _ensure(x)
    mask = x.data > 0  # subgradient at 0 taken as 0
    out_data = np.where(mask, x.data, 0.0)

    def _back(g):
        _accumulate(x, g * mask)

    return Tensor(out_data, (x,), "relu", _back)


def sigmoid(x):
    x = _ensure(x)
    z = x.data
    out_data = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), 0.0)
    neg = z < 0
    if neg.any():
        e = np.exp(z[neg])
        out_data[neg] = e / (1.0 + e)

    def _back(g):
        _accumulate(x, g * out_data * (1.0 - out_data))

    return Tensor(out_data, (x,), "sigmoid", _back)


def log(x):
    x = _ensure(x)
    out_data = np.log(x.data)

    def _back(g):
        _accumulate(x, g / x.data)

    return Tensor(out_data, (x,), "log", _back)


def reshape(x, shape):
    x = _ensure(x)
    out_data = x.data.reshape(shape)

    def _back(g):
        _accumulate(x, g.reshape(x.data.shape))

    return Tensor(out_data, (x,), "reshape", _back)


def mean_all(x):
    """Mean over every element; returns a scalar tensor."""
    x = _ensure(x)
    out_data = np.asarray(x.data.mean())

    def _back(g):
        _accumulate(x, np.broadcast_to(g / x.data.size, x.data.shape))

    return Tensor(out_data, (x,), "mean_all", _back)


def select_class(x, index):
    """Column `index` of a (batch, classes) tensor."""
    x = _ensure(x)
    if x.data.ndim != 2:
        raise ShapeMismatchError(
            f"select_class: expected 2-D (batch, classes), got {x.data.shape}"
        )
    if not 0 <= index < x.data.shape[1]:
        raise IndexError(f"class index {index} out of range for {x.data.shape}")
    out_data = x.data[:, index].copy()

    def _back(g):
        gx = np.zeros_like(x.data)
        gx[:, index] = g
        _accumulate(x, gx)

    return Tensor(out_data, (x,), "select_class", _back)


# ---------------------------------------------------------------------------
# convolution and pooling (inputs are (batch, channels, length))


def conv1d(x, weight, bias=None, stride=1, padding=0):
    """1-D convolution via im2col.

    x: (B, Cin, L); weight: (Cout, Cin, K); padding is an int (symmetric) or
    a (left, right) pair. Output length is (L + pad_l + pad_r - K)//stride + 1.
    """
    x, weight = _ensure(x), _ensure(weight)
    if bias is not None:
        bias = _ensure(bias)
    if x.data.ndim != 3 or weight.data.ndim != 3:
        raise ShapeMismatchError(
            f"conv1d: expected x (B, Cin, L) and weight (Cout, Cin, K), "
            f"got {x.data.shape} and {weight.data.shape}"
        )
    batch, c_in, length = x.data.shape
    c_out, c_in_w, kernel = weight.data.shape
    if c_in != c_in_w:
        raise ShapeMismatchError(
            f"conv1d: channel mismatch, x has {c_in}, weight has {c_in_w} "
            f"(shapes {x.data.shape} vs {weight.data.shape})"
        )
    pad_l, pad_r = (padding, padding) if isinstance(padding, int) else padding
    padded_len = length + pad_l + pad_r
    out_len = (padded_len - kernel) // stride + 1
    if out_len < 1:
        raise ShapeMismatchError(
            f"conv1d: input length {length} (padded {padded_len}) shorter than "
            f"kernel {kernel}"
        )

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad_l, pad_r)))
    sb, sc, sl = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp,
        shape=(batch, c_in, out_len, kernel),
        strides=(sb, sc, sl * stride, sl),
    )
    cols = windows.transpose(0, 2, 1, 3).reshape(batch * out_len, c_in * kernel)
    wmat = weight.data.reshape(c_out, c_in * kernel)
    out_data = (
        (cols @ wmat.T).reshape(batch, out_len, c_out).transpose(0, 2, 1)
    )
    if bias is not None:
        if bias.data.shape != (c_out,):
            raise ShapeMismatchError(
                f"conv1d: bias shape {bias.data.shape} does not match "
                f"output channels ({c_out},)"
            )
        out_data = out_data + bias.data[None, :, None]

    def _back(g):
        g2 = g.transpose(0, 2, 1).reshape(batch * out_len, c_out)
        _accumulate(weight, (g2.T @ cols).reshape(weight.data.shape))
        gcols = (g2 @ wmat).reshape(batch, out_len, c_in, kernel)
        gcols = gcols.transpose(0, 2, 1, 3)
        gxp = np.zeros((batch, c_in, padded_len))
        for k in range(kernel):
            gxp[:, :, k : k + stride * out_len : stride] += gcols[:, :, :, k]
        _accumulate(x, gxp[:, :, pad_l : pad_l + length])
        if bias is not None:
            _accumulate(bias, g.sum(axis=(0, 2)))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor(out_data, parents, "conv1d", _back)


def avg_pool1d(x, width):
    """Non-overlapping average pooling; a trailing remainder is dropped."""
    x = _ensure(x)
    if x.data.ndim != 3:
        raise ShapeMismatchError(f"avg_pool1d: expected (B, C, L), got {x.data.shape}")
    batch, channels, length = x.data.shape
    out_len = length // width
    if out_len < 1:
        raise ShapeMismatchError(
            f"avg_pool1d: length {length} shorter than pool width {width}"
        )
    used = out_len * width
    out_data = x.data[:, :, :used].reshape(batch, channels, out_len, width).mean(axis=3)

    def _back(g):
        gx = np.zeros_like(x.data)
        gx[:, :, :used] = np.repeat(g / width, width, axis=2)
        _accumulate(x, gx)

    return Tensor(out_data, (x,), "avg_pool1d", _back)


def global_average_pool(x):
    """(B, C, L) -> (B, C) mean over the time axis."""
    x = _ensure(x)
    if x.data.ndim != 3:
        raise ShapeMismatchError(
            f"global_average_pool: expected (B, C, L), got {x.data.shape}"
        )
    length = x.data.shape[2]
    out_data = x.data.mean(axis=2)

    def _back(g):
        _accumulate(x, np.broadcast_to(g[:, :, None] / length, x.data.shape))

    return Tensor(out_data, (x,), "global_average_pool", _back)


def batch_norm(x, gamma, beta, running_mean, running_var, training,
               momentum=0.9, eps=1e-5):
    """Per-channel normalization of (B, C, L) activations.

    In training mode the batch statistics are used and the running buffers
    (plain ndarrays, mutated in place) are updated; in evaluation mode the
    frozen running statistics are used so gradients are deterministic.
    """
    x, gamma, beta = _ensure(x), _ensure(gamma), _ensure(beta)
    if x.data.ndim != 3:
        raise ShapeMismatchError(f"batch_norm: expected (B, C, L), got {x.data.shape}")
    channels = x.data.shape[1]
    if gamma.data.shape != (channels,) or beta.data.shape != (channels,):
        raise ShapeMismatchError(
            f"batch_norm: gamma/beta shapes {gamma.data.shape}/{beta.data.shape} "
            f"do not match channel count ({channels},)"
        )
    if training:
        mu = x.data.mean(axis=(0, 2))
        var = x.data.var(axis=(0, 2))
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mu = running_mean
        var = running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None]) * inv[None, :, None]
    out_data = gamma.data[None, :, None] * xhat + beta.data[None, :, None]

    def _back(g):
        g_xhat = g * gamma.data[None, :, None]
        if training:
            m1 = g_xhat.mean(axis=(0, 2))
            m2 = (g_xhat * xhat).mean(axis=(0, 2))
            gx = inv[None, :, None] * (
                g_xhat - m1[None, :, None] - xhat * m2[None, :, None]
            )
        else:
            gx = g_xhat * inv[None, :, None]
        _accumulate(x, gx)
        _accumulate(gamma, (g * xhat).sum(axis=(0, 2)))
        _accumulate(beta, g.sum(axis=(0, 2)))

    return Tensor(out_data, (x, gamma, beta), "batch_norm", _back)


def dropout(x, rate, rng, training):
    """Inverted dropout; identity when not training or rate == 0."""
    x = _ensure(x)
    if not training or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    out_data = x.data * mask

    def _back(g):
        _accumulate(x, g * mask)

    return Tensor(out_data, (x,), "dropout", _back)


# ---------------------------------------------------------------------------
# classification head


def softmax(x, axis=-1):
    x = _ensure(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def _back(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        _accumulate(x, out_data * (g - dot))

    return Tensor(out_data, (x,), "softmax", _back)


def cross_entropy(logits, label):
    """Softmax cross-entropy on raw logits.

    logits is (K,) with an integer label, or (B, K) with a length-B label
    array; the batched form returns the mean loss so gradients scale with
    1/B. Returns a scalar tensor.
    """
    logits = _ensure(logits)
    z = logits.data
    squeeze = z.ndim == 1
    if squeeze:
        z = z[None, :]
    if z.ndim != 2:
        raise ShapeMismatchError(f"cross_entropy: expected (B, K) logits, got {logits.data.shape}")
    labels = np.atleast_1d(np.asarray(label, dtype=np.intp))
    batch, classes = z.shape
    if labels.shape != (batch,):
        raise ShapeMismatchError(
            f"cross_entropy: {batch} logit rows but labels of shape {labels.shape}"
        )
    if labels.min() < 0 or labels.max() >= classes:
        raise ValueError(
            f"cross_entropy: labels must be in [0, {classes}), got "
            f"range [{labels.min()}, {labels.max()}]"
        )
    shifted = z - z.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    rows = np.arange(batch)
    out_data = np.asarray(-log_p[rows, labels].mean())

    def _back(g):
        gx = np.exp(log_p)
        gx[rows, labels] -= 1.0
        gx *= g / batch
        _accumulate(logits, gx[0] if squeeze else gx)

    return Tensor(out_data, (logits,), "cross_entropy", _back)
