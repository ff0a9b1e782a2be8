"""Dense float64 tensors with tape-based reverse-mode differentiation.

Values are numpy float64 arrays. While a Tape is active, every operation on
tensors that require gradients appends one node (inputs, output, backward
rule) to the tape; ``Tape.backward`` walks the nodes exactly once in reverse
and accumulates gradients into ``Tensor.grad``. With no tape active the same
functions run forward-only, which is how inference and finite-difference
probes execute.

Only the primitives the model needs live here. Layer norm and batch norm are
composed from those primitives, so their gradients come for free; softmax and
cross-entropy are fused primitives for numerical stability.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DimensionError, NumericError, StateError
from .kernels import col2im, im2col

_TAPES: list["Tape"] = []


def grad_enabled() -> bool:
    return bool(_TAPES)


class _Node:
    __slots__ = ("op", "inputs", "out", "backward")

    def __init__(self, op, inputs, out, backward):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.backward = backward


class Tape:
    """Ordered record of operations, replayed in reverse by ``backward``."""

    def __init__(self):
        self._nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _TAPES.pop()
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss: "Tensor") -> None:
        """Accumulate d(loss)/d(input) into .grad of every recorded tensor."""
        if loss.data.size != 1:
            raise DimensionError("backward expects a scalar loss, got shape %s" % (loss.shape,))
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self._nodes):
            g = node.out.grad
            if g is None:
                continue  # output never reached the loss
            for t, gt in zip(node.inputs, node.backward(g)):
                if gt is None or not t.requires_grad:
                    continue
                t.grad = gt if t.grad is None else t.grad + gt


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return "Tensor(shape=%s, requires_grad=%s)" % (self.shape, self.requires_grad)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(op: str, inputs: tuple, out_data: np.ndarray, backward) -> Tensor:
    """Wrap an op result; record a node when a tape is active and needed."""
    rg = grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=rg)
    if rg:
        _TAPES[-1]._nodes.append(_Node(op, inputs, out, backward))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g back down to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and linear-algebra primitives


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        "add",
        (a, b),
        a.data + b.data,
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        "sub",
        (a, b),
        a.data - b.data,
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        "mul",
        (a, b),
        a.data * b.data,
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data / b.data

    def backward(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * out / b.data, b.data.shape),
        )

    return _make("div", (a, b), out, backward)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _make("neg", (a,), -a.data, lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul requires rank >= 2 operands")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError("matmul inner dims differ: %s vs %s" % (a.shape, b.shape))
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return ga, gb

    return _make("matmul", (a, b), np.matmul(ad, bd), backward)


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out = np.sqrt(a.data)
    if np.isnan(out).any():
        raise NumericError("sqrt of negative value")
    return _make("sqrt", (a,), out, lambda g: (g * 0.5 / out,))


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ConfigError("leaky_relu slope must lie in (0, 1), got %r" % slope)
    a = _as_tensor(a)
    # x == 0 takes the identity branch, so the subgradient there is 1.
    factor = np.where(a.data >= 0.0, 1.0, slope)
    return _make("leaky_relu", (a,), a.data * factor, lambda g: (g * factor,))


# ---------------------------------------------------------------------------
# reductions and shape ops


def _expand_reduced(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(ax % len(shape) for ax in axes)
    if not keepdims:
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)
    return _make(
        "sum", (x,), out, lambda g: (_expand_reduced(g, x.data.shape, axis, keepdims).copy(),)
    )


def tmean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out = np.mean(x.data, axis=axis, keepdims=keepdims)
    count = x.data.size / max(out.size, 1)

    def backward(g):
        return (_expand_reduced(g, x.data.shape, axis, keepdims) / count,)

    return _make("mean", (x,), out, backward)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    return _make(
        "reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(x.data.shape),)
    )


def transpose(x, axes) -> Tensor:
    x = _as_tensor(x)
    inv = tuple(np.argsort(axes))
    return _make(
        "transpose", (x,), x.data.transpose(axes), lambda g: (g.transpose(inv),)
    )


def concat(tensors, axis: int = -1) -> Tensor:
    ts = tuple(_as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _make("concat", ts, np.concatenate([t.data for t in ts], axis=axis), backward)


def narrow(x, axis: int, start: int, length: int) -> Tensor:
    x = _as_tensor(x)
    if not (0 <= start and length >= 0 and start + length <= x.shape[axis]):
        raise DimensionError(
            "narrow [%d:%d) out of range for axis %d of %s" % (start, start + length, axis, x.shape)
        )
    idx = tuple(
        slice(start, start + length) if d == axis % x.ndim else slice(None)
        for d in range(x.ndim)
    )

    def backward(g):
        gx = np.zeros(x.data.shape, dtype=np.float64)
        gx[idx] = g
        return (gx,)

    return _make("narrow", (x,), x.data[idx].copy(), backward)


# ---------------------------------------------------------------------------
# fused primitives


def softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    if not np.isfinite(x.data).all():
        raise NumericError("softmax input contains non-finite values")
    # Max subtraction is a detached shift; the softmax value is unchanged.
    z = x.data - x.data.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    y = ez / ez.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((g - dot) * y,)

    return _make("softmax", (x,), y, backward)


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood with a fused, shift-stable log-softmax."""
    logits = _as_tensor(logits)
    if logits.ndim != 2:
        raise DimensionError("cross_entropy expects (N, n_class) logits")
    if not np.isfinite(logits.data).all():
        raise NumericError("cross_entropy logits contain non-finite values")
    labels = np.asarray(labels)
    n, n_class = logits.shape
    if labels.shape != (n,):
        raise DimensionError("labels shape %s does not match batch %d" % (labels.shape, n))
    if labels.size and (labels.min() < 0 or labels.max() >= n_class):
        raise IndexError("label outside [0, %d)" % n_class)

    z = logits.data
    m = z.max(axis=1, keepdims=True)
    ez = np.exp(z - m)
    sez = ez.sum(axis=1, keepdims=True)
    p = ez / sez
    rows = np.arange(n)
    nll = -((z - m)[rows, labels] - np.log(sez[:, 0]))
    out = np.asarray(nll.mean())

    def backward(g):
        gz = p.copy()
        gz[rows, labels] -= 1.0
        return (g * gz / n,)

    return _make("cross_entropy", (logits,), out, backward)


# ---------------------------------------------------------------------------
# convolution primitives


def _conv_out_size(hw: int, k: int, stride: int, padding: int) -> int:
    span = hw + 2 * padding - k
    if span < 0 or span % stride != 0:
        raise DimensionError(
            "conv geometry invalid: size %d, kernel %d, stride %d, padding %d"
            % (hw, k, stride, padding)
        )
    return span // stride + 1


def conv2d(x, w, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x (N, Ci, H, W) with w (Co, Ci, k, k)."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise DimensionError("conv2d expects NCHW input and square OIkk weights")
    n, ci, h, wd = x.shape
    co, ciw, k, _ = w.shape
    if ciw != ci:
        raise DimensionError("conv2d channels differ: input %d, weight %d" % (ci, ciw))
    ho = _conv_out_size(h, k, stride, padding)
    wo = _conv_out_size(wd, k, stride, padding)

    xd, wdat = x.data, w.data
    pad = ((0, 0), (0, 0), (padding, padding), (padding, padding))
    xp = np.ascontiguousarray(np.pad(xd, pad))
    cols = im2col(xp, k, stride, ho, wo)
    wm = wdat.reshape(co, ci * k * k)
    out = np.matmul(wm, cols).reshape(n, co, ho, wo)

    inputs = (x, w) if bias is None else (x, w, bias)
    if bias is not None:
        out = out + bias.data.reshape(1, co, 1, 1)

    def backward(g):
        gm = g.reshape(n, co, ho * wo)
        # Recompute the column matrix instead of keeping it alive; the
        # padded input is cheap next to a saved (N, Ci*k*k, P) buffer.
        cols_b = im2col(np.ascontiguousarray(np.pad(xd, pad)), k, stride, ho, wo)
        gw = np.matmul(gm, cols_b.swapaxes(1, 2)).sum(axis=0).reshape(wdat.shape)
        gcols = np.matmul(wm.T, gm)
        gxp = col2im(gcols, ci, h + 2 * padding, wd + 2 * padding, k, stride, ho, wo)
        gx = gxp[:, :, padding : padding + h, padding : padding + wd]
        if bias is None:
            return gx, gw
        return gx, gw, gm.sum(axis=(0, 2))

    return _make("conv2d", inputs, out, backward)


def deconv2d(x, w, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution of x (N, Ci, H, W) with w (Ci, Co, k, k).

    Output spatial size is (H - 1) * stride + k - 2 * padding; the operation
    is the adjoint of conv2d with the same stride and padding.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise DimensionError("deconv2d expects NCHW input and square IOkk weights")
    n, ci, h, wd = x.shape
    ciw, co, k, _ = w.shape
    if ciw != ci:
        raise DimensionError("deconv2d channels differ: input %d, weight %d" % (ci, ciw))
    hd = (h - 1) * stride + k - 2 * padding
    wdout = (wd - 1) * stride + k - 2 * padding
    if hd < 1 or wdout < 1:
        raise DimensionError("deconv2d output would be empty")

    xd, wdat = x.data, w.data
    xm = np.ascontiguousarray(xd.reshape(n, ci, h * wd))
    wm = wdat.reshape(ci, co * k * k)
    cols = np.matmul(wm.T, xm)
    ypad = col2im(cols, co, hd + 2 * padding, wdout + 2 * padding, k, stride, h, wd)
    out = ypad[:, :, padding : padding + hd, padding : padding + wdout]

    inputs = (x, w) if bias is None else (x, w, bias)
    if bias is not None:
        out = out + bias.data.reshape(1, co, 1, 1)

    def backward(g):
        pad = ((0, 0), (0, 0), (padding, padding), (padding, padding))
        gp = np.ascontiguousarray(np.pad(g, pad))
        gcols = im2col(gp, k, stride, h, wd)
        gx = np.matmul(wm, gcols).reshape(xd.shape)
        gw = np.matmul(xm, gcols.swapaxes(1, 2)).sum(axis=0).reshape(wdat.shape)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _make("deconv2d", inputs, out, backward)


# ---------------------------------------------------------------------------
# normalization, composed from primitives


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit (population) variance."""
    x = _as_tensor(x)
    mu = tmean(x, axis=-1, keepdims=True)
    xc = sub(x, mu)
    var = tmean(mul(xc, xc), axis=-1, keepdims=True)
    xhat = div(xc, sqrt(add(var, eps)))
    return add(mul(xhat, gamma), beta)


def batch_norm(
    x,
    gamma,
    beta,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    batches: int,
    momentum: float = 0.1,
    eps: float = 1e-5,
    train: bool = True,
):
    """Channel normalization for NCHW input.

    Train mode normalizes with current-batch statistics (population variance
    over batch and spatial axes) and returns updated running stats blended
    with `momentum`. Eval mode requires at least one prior train step and
    uses the running stats as constants.

    Returns (out, running_mean, running_var, batches).
    """
    x = _as_tensor(x)
    if x.ndim != 4:
        raise DimensionError("batch_norm expects NCHW input")
    c = x.shape[1]
    shape = (1, c, 1, 1)
    gamma_r = reshape(gamma, shape)
    beta_r = reshape(beta, shape)

    if train:
        axes = (0, 2, 3)
        mu = tmean(x, axis=axes, keepdims=True)
        xc = sub(x, mu)
        var = tmean(mul(xc, xc), axis=axes, keepdims=True)
        xhat = div(xc, sqrt(add(var, eps)))
        rm = (1.0 - momentum) * running_mean + momentum * mu.data.reshape(c)
        rv = (1.0 - momentum) * running_var + momentum * var.data.reshape(c)
        out = add(mul(xhat, gamma_r), beta_r)
        return out, rm, rv, batches + 1

    if batches == 0:
        raise StateError("batch_norm eval requested before any train-mode batch")
    scale = 1.0 / np.sqrt(running_var + eps)
    xhat = mul(sub(x, Tensor(running_mean.reshape(shape))), Tensor(scale.reshape(shape)))
    out = add(mul(xhat, gamma_r), beta_r)
    return out, running_mean, running_var, batches
