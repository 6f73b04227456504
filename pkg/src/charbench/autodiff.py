"""Dense tensors with tape-based reverse-mode differentiation.

Operations record themselves on the active :class:`Tape` whenever at least one
input requires a gradient. Outside a tape (or with only constant inputs) the
forward runs without bookkeeping, which is how frozen feature extractors are
evaluated cheaply.

All array math is numpy; the dtype of the inputs is preserved so the same
primitives run in float32 for training and float64 for gradient checks.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """An n-dimensional array that may carry a gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if dtype is None and arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[_Node] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Node:
    inputs: tuple
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
    # weak, so a finished graph is not a reference cycle (tensor -> node -> tensor)
    # and its activations are freed as soon as the caller drops them
    output: weakref.ref


class Tape:
    """Records differentiable operations in execution order.

    Use as a context manager; nested tapes are allowed and only the innermost
    one records.
    """

    _stack: list = []

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._stack.pop()

    @classmethod
    def current(cls) -> Optional["Tape"]:
        return cls._stack[-1] if cls._stack else None

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def _record(out: Tensor, inputs: Sequence[Tensor], rule) -> Tensor:
    tape = Tape.current()
    if tape is None or not any(t.requires_grad for t in inputs):
        return out
    out.requires_grad = True
    node = _Node(tuple(inputs), rule, weakref.ref(out))
    out._node = node
    tape.nodes.append(node)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``grad`` on every tensor that requires one.

    Gradients accumulate across calls; clear them with :func:`zero_grads`.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        out = node.output()
        if out is None:  # dropped before backward, so nothing downstream used it
            continue
        g_out = grads.pop(id(out), None)
        if g_out is None:
            continue
        in_grads = node.backward(g_out)
        for t, g in zip(node.inputs, in_grads):
            if g is None or not t.requires_grad:
                continue
            key = id(t)
            if t._node is None:
                leaves[key] = t
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
    if loss._node is None and loss.requires_grad:
        leaves[id(loss)] = loss
    for key, t in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        g = g.astype(t.data.dtype, copy=False).reshape(t.shape)
        t.grad = g.copy() if t.grad is None else t.grad + g


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# elementwise and shape primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (g, g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    out = Tensor(a.data * b.data)
    return _record(out, (a, b), lambda g: (g * b.data, g * a.data))


def tensor_sum(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum(), dtype=x.dtype))
    return _record(out, (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape))
    return _record(out, (x,), lambda g: (g.reshape(x.shape),))


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0).astype(x.dtype, copy=False))
    return _record(out, (x,), lambda g: (g * mask,))


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"linear: input {x.shape} incompatible with weight {weight.shape}"
        )
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias {bias.shape} != ({weight.shape[0]},)")
    y = x.data @ weight.data.T
    if bias is not None:
        y = y + bias.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def rule(g):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return _record(Tensor(y), inputs, rule)


def concat_channels(inputs: Sequence[Tensor]) -> Tensor:
    inputs = list(inputs)
    if not inputs:
        raise ShapeError("concat_channels: no inputs")
    n, _, h, w = inputs[0].shape
    for t in inputs[1:]:
        if t.data.ndim != 4 or (t.shape[0], t.shape[2], t.shape[3]) != (n, h, w):
            raise ShapeError(
                f"concat_channels: {t.shape} does not match batch/spatial {(n, h, w)}"
            )
    if len(inputs) == 1:
        out = Tensor(inputs[0].data.copy())
        return _record(out, inputs, lambda g: (g,))
    offsets = np.cumsum([0] + [t.shape[1] for t in inputs])
    out = Tensor(np.concatenate([t.data for t in inputs], axis=1))
    return _record(
        out,
        inputs,
        lambda g: [g[:, offsets[i] : offsets[i + 1]] for i in range(len(inputs))],
    )


def dropout(x: Tensor, p: float, train: bool, rng: Optional[np.random.Generator]) -> Tensor:
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs a seeded generator")
    keep = rng.random(x.shape) >= p
    scale = np.asarray(1.0 / (1.0 - p), dtype=x.dtype)
    mask = keep.astype(x.dtype) * scale
    out = Tensor(x.data * mask)
    return _record(out, (x,), lambda g: (g * mask,))


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} != ({n},)")
    if n < 1:
        raise ShapeError("softmax_cross_entropy: empty batch")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"label out of range [0, {c})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    loss = -logp[np.arange(n), labels].mean()
    out = Tensor(np.asarray(loss, dtype=logits.dtype))

    def rule(g):
        grad = np.exp(logp)
        grad[np.arange(n), labels] -= 1
        return (grad * (g / n),)

    return _record(out, (logits,), rule)


# ---------------------------------------------------------------------------
# spatial primitives


def _pair(v) -> tuple:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def _windows(xp: np.ndarray, kernel, stride, out_hw) -> np.ndarray:
    kh, kw = kernel
    sh, sw = stride
    oh, ow = out_hw
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, : (oh - 1) * sh + 1 : sh, : (ow - 1) * sw + 1 : sw]


def _scatter_windows(dwin: np.ndarray, padded_shape, stride) -> np.ndarray:
    """Adjoint of :func:`_windows`; ``dwin`` is (N, C, oh, ow, kh, kw)."""
    _, _, oh, ow, kh, kw = dwin.shape
    sh, sw = stride
    dxp = np.zeros(padded_shape, dtype=dwin.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + (oh - 1) * sh + 1 : sh, j : j + (ow - 1) * sw + 1 : sw] += (
                dwin[..., i, j]
            )
    return dxp


def _unpad(a: np.ndarray, pad) -> np.ndarray:
    ph, pw = pad
    h, w = a.shape[2], a.shape[3]
    return a[:, :, ph : h - ph, pw : w - pw]


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride=1, padding=0) -> Tensor:
    stride, padding = _pair(stride), _pair(padding)
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-d input and weight, got {x.shape}, {weight.shape}")
    n, c, h, w = x.shape
    f, wc, kh, kw = weight.shape
    if wc != c:
        raise ShapeError(f"conv2d: input channels {c} != weight channels {wc}")
    if bias is not None and bias.shape != (f,):
        raise ShapeError(f"conv2d: bias {bias.shape} != ({f},)")
    if min(stride) < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    oh = conv_output_size(h, kh, stride[0], padding[0])
    ow = conv_output_size(w, kw, stride[1], padding[1])
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d: non-positive output size {oh}x{ow} for input {h}x{w}")

    if kh == kw == 1 and padding == (0, 0):
        xs = x.data[:, :, :: stride[0], :: stride[1]]
        y = np.einsum("nchw,fc->nfhw", xs, weight.data[:, :, 0, 0], optimize=True)
        cols = None
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding[0],) * 2, (padding[1],) * 2))
        win = _windows(xp, (kh, kw), stride, (oh, ow))
        # (N, oh, ow, C, kh, kw) contiguous im2col matrix
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * oh * ow, -1)
        y = (cols @ weight.data.reshape(f, -1).T).reshape(n, oh, ow, f).transpose(0, 3, 1, 2)
    if bias is not None:
        y = y + bias.data[None, :, None, None]
    out = Tensor(np.ascontiguousarray(y))
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def rule(g):
        grads = [None, None]
        if cols is None:
            w2 = weight.data[:, :, 0, 0]
            grads[1] = np.einsum("nfhw,nchw->fc", g, xs, optimize=True)[:, :, None, None]
            if x.requires_grad:
                dx = np.zeros_like(x.data)
                dx[:, :, :: stride[0], :: stride[1]] = np.einsum("nfhw,fc->nchw", g, w2, optimize=True)
                grads[0] = dx
        else:
            g2 = g.transpose(0, 2, 3, 1).reshape(n * oh * ow, f)
            grads[1] = (g2.T @ cols).reshape(weight.shape)
            if x.requires_grad:
                dcols = (g2 @ weight.data.reshape(f, -1)).reshape(n, oh, ow, c, kh, kw)
                dxp = _scatter_windows(dcols.transpose(0, 3, 1, 2, 4, 5), xp.shape, stride)
                grads[0] = _unpad(dxp, padding)
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return _record(out, inputs, rule)


def maxpool2d(x: Tensor, kernel, stride=None, padding=0) -> Tensor:
    kernel = _pair(kernel)
    stride = kernel if stride is None else _pair(stride)
    padding = _pair(padding)
    if min(stride) < 1:
        raise ValueError(f"maxpool2d: stride must be >= 1, got {stride}")
    n, c, h, w = x.shape
    oh = conv_output_size(h, kernel[0], stride[0], padding[0])
    ow = conv_output_size(w, kernel[1], stride[1], padding[1])
    if oh < 1 or ow < 1:
        raise ShapeError(f"maxpool2d: non-positive output size {oh}x{ow} for input {h}x{w}")
    xp = x.data
    if padding != (0, 0):
        xp = np.pad(xp, ((0, 0), (0, 0), (padding[0],) * 2, (padding[1],) * 2),
                    constant_values=-np.inf)
    win = _windows(xp, kernel, stride, (oh, ow)).reshape(n, c, oh, ow, -1)
    # argmax returns the first maximal element in row-major window order
    arg = win.argmax(axis=-1)
    y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    out = Tensor(np.ascontiguousarray(y))

    def rule(g):
        onehot = np.zeros((n, c, oh, ow, kernel[0] * kernel[1]), dtype=g.dtype)
        np.put_along_axis(onehot, arg[..., None], g[..., None], axis=-1)
        dxp = _scatter_windows(onehot.reshape(n, c, oh, ow, *kernel), xp.shape, stride)
        return (_unpad(dxp, padding),)

    return _record(out, (x,), rule)


def avgpool2d(x: Tensor, kernel, stride=None, padding=0) -> Tensor:
    """Average pooling; zero padding counts toward the divisor."""
    kernel = _pair(kernel)
    stride = kernel if stride is None else _pair(stride)
    padding = _pair(padding)
    n, c, h, w = x.shape
    oh = conv_output_size(h, kernel[0], stride[0], padding[0])
    ow = conv_output_size(w, kernel[1], stride[1], padding[1])
    if oh < 1 or ow < 1:
        raise ShapeError(f"avgpool2d: non-positive output size {oh}x{ow} for input {h}x{w}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding[0],) * 2, (padding[1],) * 2))
    area = kernel[0] * kernel[1]
    win = _windows(xp, kernel, stride, (oh, ow))
    out = Tensor(np.ascontiguousarray(win.sum(axis=(-2, -1)) / area).astype(x.dtype))

    def rule(g):
        dwin = np.broadcast_to((g / area)[..., None, None], (n, c, oh, ow, *kernel))
        return (_unpad(_scatter_windows(dwin, xp.shape, stride), padding),)

    return _record(out, (x,), rule)


def _adaptive_bounds(size: int, out: int):
    return [((i * size) // out, -((-(i + 1) * size) // out)) for i in range(out)]


def adaptive_avgpool2d(x: Tensor, out_hw) -> Tensor:
    oh, ow = _pair(out_hw)
    n, c, h, w = x.shape
    if oh > h or ow > w or oh < 1 or ow < 1:
        raise ShapeError(f"adaptive_avgpool2d: output {oh}x{ow} larger than input {h}x{w}")
    if (oh, ow) == (h, w):
        out = Tensor(x.data.copy())
        return _record(out, (x,), lambda g: (g,))
    rows, cols = _adaptive_bounds(h, oh), _adaptive_bounds(w, ow)
    y = np.empty((n, c, oh, ow), dtype=x.dtype)
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            y[:, :, i, j] = x.data[:, :, r0:r1, c0:c1].mean(axis=(2, 3))
    out = Tensor(y)

    def rule(g):
        dx = np.zeros_like(x.data)
        for i, (r0, r1) in enumerate(rows):
            for j, (c0, c1) in enumerate(cols):
                area = (r1 - r0) * (c1 - c0)
                dx[:, :, r0:r1, c0:c1] += (g[:, :, i, j] / area)[:, :, None, None]
        return (dx,)

    return _record(out, (x,), rule)


class RunningStats:
    """Per-channel running mean/variance buffers of a batchnorm layer."""

    def __init__(self, channels: int, dtype=np.float32):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running: RunningStats,
    train: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Batch normalization over (N, H, W) per channel.

    In train mode the running buffers are updated in place with the unbiased
    batch variance, ``running = (1 - momentum) * running + momentum * batch``.
    """
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm2d: affine shapes {gamma.shape}/{beta.shape} != ({c},)")
    m = n * h * w
    if m < 1:
        raise ShapeError("batchnorm2d: empty input")
    g4 = gamma.data[None, :, None, None]
    b4 = beta.data[None, :, None, None]
    if not train:
        inv = 1.0 / np.sqrt(running.var + eps)
        scale = (gamma.data * inv).astype(x.dtype)
        shift = (beta.data - running.mean * gamma.data * inv).astype(x.dtype)
        out = Tensor(x.data * scale[None, :, None, None] + shift[None, :, None, None])

        def rule_eval(g):
            xhat = (x.data - running.mean[None, :, None, None]) * inv[None, :, None, None]
            return (
                g * scale[None, :, None, None],
                (g * xhat).sum(axis=(0, 2, 3)),
                g.sum(axis=(0, 2, 3)),
            )

        return _record(out, (x, gamma, beta), rule_eval)

    if m < 2:
        raise ShapeError("batchnorm2d: train mode needs at least 2 values per channel")
    mean = x.data.mean(axis=(0, 2, 3))
    centered = x.data - mean[None, :, None, None]
    var = (centered * centered).mean(axis=(0, 2, 3))
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv[None, :, None, None]
    out = Tensor((xhat * g4 + b4).astype(x.dtype, copy=False))
    running.mean[...] = (1 - momentum) * running.mean + momentum * mean
    running.var[...] = (1 - momentum) * running.var + momentum * var * (m / (m - 1))

    def rule(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = g * g4
        dx = (inv[None, :, None, None] / m) * (
            m * dxhat
            - dxhat.sum(axis=(0, 2, 3), keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        )
        return dx, dgamma, dbeta

    return _record(out, (x, gamma, beta), rule)


# ---------------------------------------------------------------------------
# finite-difference oracle


@dataclass
class GradCheckResult:
    op_name: str
    max_rel_error: float
    passed: bool


def grad_check(
    op: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    tolerance: float = 1e-4,
    step: float = 1e-3,
    op_name: str = "",
    seed: int = 0,
) -> GradCheckResult:
    """Compare analytic gradients of ``op`` with central differences.

    The op output is reduced to a scalar by a fixed random projection so every
    output coordinate contributes. Everything runs in float64. The relative
    error of each coordinate is ``|analytic - numeric| / max(1, |numeric|)``.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    probe_rng = np.random.default_rng(seed)
    with Tape():
        probe_shape = op(*[Tensor(a.copy()) for a in arrays]).shape
    projection = probe_rng.standard_normal(probe_shape)

    def scalar(vals) -> float:
        y = op(*[Tensor(v) for v in vals])
        return float(np.sum(y.data * projection))

    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    with Tape() as tape:
        y = op(*leaves)
        loss = tensor_sum(mul(y, Tensor(projection)))
        tape.backward(loss)

    worst = 0.0
    for k, arr in enumerate(arrays):
        analytic = leaves[k].grad
        if analytic is None:
            analytic = np.zeros_like(arr)
        flat = arr.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            f_plus = scalar(arrays)
            flat[idx] = orig - step
            f_minus = scalar(arrays)
            flat[idx] = orig
            numeric = (f_plus - f_minus) / (2 * step)
            err = abs(analytic.reshape(-1)[idx] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return GradCheckResult(op_name, float(worst), bool(worst <= tolerance))


def _away_from_zero(rng, shape, margin=0.05):
    v = rng.uniform(-1, 1, size=shape)
    return np.sign(v) * (np.abs(v) + margin) + (v == 0) * margin


def _distinct(rng, shape, gap=0.01):
    # values on a grid with spacing >> finite-difference step so window maxima never swap
    size = int(np.prod(shape))
    return (rng.permutation(size) * gap - size * gap / 2).reshape(shape)


def _gradcheck_cases():
    """Each entry maps an op name to (callable, input sampler)."""

    def bn_train(x, g, b):
        return batchnorm2d(x, g, b, RunningStats(x.shape[1], np.float64), train=True)

    def bn_eval(x, g, b):
        stats = RunningStats(x.shape[1], np.float64)
        stats.mean[:] = [0.1, -0.2, 0.3]
        stats.var[:] = [0.5, 1.5, 2.0]
        return batchnorm2d(x, g, b, stats, train=False)

    def drop(x):
        return dropout(x, 0.5, True, np.random.default_rng(7))

    return {
        "conv2d": (
            lambda x, w, b: conv2d(x, w, b, stride=1, padding=1),
            lambda r: [r.standard_normal((1, 2, 5, 5)), r.standard_normal((3, 2, 3, 3)),
                       r.standard_normal(3)],
        ),
        "conv2d_strided": (
            lambda x, w, b: conv2d(x, w, b, stride=(2, 1), padding=(0, 1)),
            lambda r: [r.standard_normal((2, 2, 6, 5)), r.standard_normal((2, 2, 3, 1)),
                       r.standard_normal(2)],
        ),
        "conv2d_1x1": (
            lambda x, w, b: conv2d(x, w, b),
            lambda r: [r.standard_normal((2, 3, 4, 4)), r.standard_normal((2, 3, 1, 1)),
                       r.standard_normal(2)],
        ),
        "maxpool2d": (
            lambda x: maxpool2d(x, 2, 2),
            lambda r: [_distinct(r, (1, 1, 6, 6))],
        ),
        "maxpool2d_overlap": (
            lambda x: maxpool2d(x, 3, 2, padding=1),
            lambda r: [_distinct(r, (1, 2, 5, 5))],
        ),
        "avgpool2d": (
            lambda x: avgpool2d(x, 3, 1, padding=1),
            lambda r: [r.standard_normal((1, 2, 4, 4))],
        ),
        "adaptive_avgpool2d": (
            lambda x: adaptive_avgpool2d(x, 3),
            lambda r: [r.standard_normal((1, 2, 7, 7))],
        ),
        "linear": (
            linear,
            lambda r: [r.standard_normal((2, 4)), r.standard_normal((3, 4)), r.standard_normal(3)],
        ),
        "relu": (relu, lambda r: [_away_from_zero(r, (3, 4))]),
        "batchnorm2d_train": (
            bn_train,
            lambda r: [r.standard_normal((4, 3, 2, 2)), r.standard_normal(3), r.standard_normal(3)],
        ),
        "batchnorm2d_eval": (
            bn_eval,
            lambda r: [r.standard_normal((2, 3, 2, 2)), r.standard_normal(3), r.standard_normal(3)],
        ),
        "concat_channels": (
            lambda a, b: concat_channels([a, b]),
            lambda r: [r.standard_normal((1, 2, 3, 3)), r.standard_normal((1, 5, 3, 3))],
        ),
        "dropout": (drop, lambda r: [r.standard_normal((3, 4))]),
        "softmax_cross_entropy": (
            lambda z: softmax_cross_entropy(z, [0, 4, 2]),
            lambda r: [r.standard_normal((3, 5))],
        ),
    }


GRADCHECK_OPS = tuple(_gradcheck_cases())


def run_gradcheck_suite(ops=None, seeds=range(10), tolerance: float = 1e-4) -> list[GradCheckResult]:
    """Grad-check each primitive over several seeds; one result per op (worst seed)."""
    cases = _gradcheck_cases()
    names = list(cases) if ops is None else list(ops)
    results = []
    for name in names:
        if name not in cases:
            raise KeyError(f"unknown op {name!r}")
        fn, sampler = cases[name]
        worst = 0.0
        for seed in seeds:
            rng = np.random.default_rng(seed)
            res = grad_check(fn, sampler(rng), tolerance, op_name=name, seed=seed)
            worst = max(worst, res.max_rel_error)
        results.append(GradCheckResult(name, worst, worst <= tolerance))
    return results
