"""Dense float64 tensors with a recording tape for reverse-mode gradients.

Operations run eagerly on numpy arrays. When a :class:`Tape` is active and at
least one input requires a gradient, the operation is appended to the tape
together with its backward rule; :meth:`Tape.backward` replays the records in
reverse order.

Only scalar-tensor broadcasting is supported. Everything else needs matching
shapes or an explicit reshape.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Tape",
    "backward",
    "tensor",
    "matmul",
    "softmax",
    "conv2d",
    "relu",
    "sigmoid",
    "upsample_bilinear",
    "global_avg_pool",
    "fully_connected",
    "concat",
    "add",
    "sub",
    "mul",
    "scale",
    "channel_scale",
    "transpose",
    "reshape",
    "maxpool2d",
    "sum",
    "mean",
    "bce_with_logits",
]


class ShapeError(ValueError):
    """Raised when operand extents do not agree."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_leaf", "_tape", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=np.float64)  # always a private copy
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._leaf = True
        self._tape: Optional[Tape] = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        # internal constructor: takes ownership of a freshly computed array
        out = cls.__new__(cls)
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        arr.flags.writeable = False
        out.data = arr
        out.requires_grad = requires_grad
        out.grad = None
        out.name = None
        out._leaf = False
        out._tape = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def tensor(data, requires_grad: bool = False, name: Optional[str] = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


@dataclass
class _Record:
    name: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


_state = threading.local()


def _active_tape() -> Optional["Tape"]:
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Ordered log of differentiable operations.

    Use as a context manager; a tape belongs to the thread that entered it.

    >>> x = Tensor([1.0, 2.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = sum(mul(x, x))
    >>> tape.backward(loss)
    >>> x.grad.tolist()
    [2.0, 4.0]
    """

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor) -> None:
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise ValueError("loss was not recorded on this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
        leaves: dict[int, Tensor] = {}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.output), None)
            if g is None:
                continue
            for t, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if t._leaf:
                    leaves[key] = t
        for key, t in leaves.items():
            g = grads[key].reshape(t.shape)
            t.grad = g.copy() if t.grad is None else t.grad + g

    def first_nonfinite(self) -> Optional[_Record]:
        """Earliest recorded operation whose output holds NaN or inf."""
        for rec in self.records:
            if not np.all(np.isfinite(rec.output.data)):
                return rec
        return None


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every reachable leaf."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        raise ValueError("loss is not reachable from any requires_grad leaf on a tape")
    loss._tape.backward(loss)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(name: str, out: np.ndarray, inputs: tuple, rule) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    res = Tensor._wrap(out, needs)
    if needs:
        tape = _active_tape()
        if tape is not None:
            tape.records.append(_Record(name, inputs, res, rule))
            res._tape = tape
    return res


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        a = _as_tensor(a)
        c = float(b)
        return _emit("add_scalar", a.data + c, (a,), lambda g: (g,))
    if not isinstance(a, Tensor):
        return add(b, a)
    _same_shape("add", a, b)
    return _emit("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    a = _as_tensor(a)
    _same_shape("sub", a, b)
    return _emit("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return scale(a, b)
    if not isinstance(a, Tensor):
        return scale(b, a)
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _emit("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit("scale", a.data * c, (a,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    # np.maximum keeps NaN so divergence stays visible downstream
    return _emit("relu", np.maximum(x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return _emit("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def channel_scale(x: Tensor, g: Tensor) -> Tensor:
    """``out[c, ...] = x[c, ...] * g[c]`` for a length-C gate ``g``."""
    if g.ndim != 1 or g.shape[0] != x.shape[0]:
        raise ShapeError(f"channel_scale: gate {g.shape} does not match channels of {x.shape}")
    bshape = (-1,) + (1,) * (x.ndim - 1)
    xd, gd = x.data, g.data.reshape(bshape)
    axes = tuple(range(1, x.ndim))

    def rule(go):
        return go * gd, (go * xd).sum(axis=axes)

    return _emit("channel_scale", xd * gd, (x, g), rule)


# ---------------------------------------------------------------- reductions


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    return _emit("sum", np.array(x.data.sum()), (x,), lambda g: (np.full(shape, g.item()),))


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return _emit("mean", np.array(x.data.mean()), (x,), lambda g: (np.full(shape, g.item() / n),))


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel mean of a C×H×W map."""
    if x.ndim != 3:
        raise ShapeError(f"global_avg_pool expects C×H×W, got {x.shape}")
    C, H, W = x.shape
    n = H * W
    return _emit(
        "global_avg_pool",
        x.data.mean(axis=(1, 2)),
        (x,),
        lambda g: (np.broadcast_to((g / n)[:, None, None], (C, H, W)),),
    )


# ---------------------------------------------------------------- shape ops


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {src} as {shape}") from exc
    return _emit("reshape", out, (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got {x.shape}")
    return _emit("transpose", x.data.T, (x,), lambda g: (g.T,))


def concat(xs: Sequence[Tensor]) -> Tensor:
    """Stack C_i×H×W maps along the channel axis."""
    xs = tuple(xs)
    if not xs:
        raise ShapeError("concat of an empty list")
    tail = xs[0].shape[1:]
    for t in xs[1:]:
        if t.shape[1:] != tail:
            raise ShapeError(f"concat: trailing extents {t.shape[1:]} vs {tail}")
    bounds = np.cumsum([0] + [t.shape[0] for t in xs])

    def rule(g):
        return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(xs)))

    return _emit("concat", np.concatenate([t.data for t in xs], axis=0), xs, rule)


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects matrices, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner extents differ ({a.shape} x {b.shape})")
    ad, bd = a.data, b.data
    return _emit("matmul", ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def fully_connected(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Affine map ``w @ x + b`` with ``w`` of shape D_out×D_in."""
    if x.ndim != 1 or w.ndim != 2 or w.shape[1] != x.shape[0]:
        raise ShapeError(f"fully_connected: weight {w.shape} incompatible with input {x.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"fully_connected: bias {b.shape} != ({w.shape[0]},)")
    xd, wd = x.data, w.data
    out = wd @ xd
    if b is None:
        return _emit("fully_connected", out, (x, w), lambda g: (wd.T @ g, np.outer(g, xd)))
    return _emit(
        "fully_connected",
        out + b.data,
        (x, w, b),
        lambda g: (wd.T @ g, np.outer(g, xd), g),
    )


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for rank {x.ndim}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def rule(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", y, (x,), rule)


# ---------------------------------------------------------------- convolution


def _pad_amount(k: int, padding) -> int:
    if padding == "same":
        return k // 2
    if padding == "valid":
        return 0
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, padding="same") -> Tensor:
    """2-D cross-correlation of a C_in×H×W map with a C_out×C_in×k×k kernel."""
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeError(f"conv2d expects C×H×W input and 4-d kernel, got {x.shape}, {w.shape}")
    Cout, Cin, kh, kw = w.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv2d needs an odd square kernel, got {kh}×{kw}")
    if x.shape[0] != Cin:
        raise ShapeError(f"conv2d: input has {x.shape[0]} channels, kernel expects {Cin}")
    if b is not None and b.shape != (Cout,):
        raise ShapeError(f"conv2d: bias {b.shape} != ({Cout},)")
    k, s = kh, int(stride)
    p = _pad_amount(k, padding)
    _, H, W = x.shape
    wd = w.data

    if k == 1 and s == 1:
        # pointwise: a plain channel-mixing matmul
        xf = x.data.reshape(Cin, H * W)
        wm = wd.reshape(Cout, Cin)
        out = (wm @ xf).reshape(Cout, H, W)
        if b is not None:
            out = out + b.data[:, None, None]

        def rule1(g):
            gf = g.reshape(Cout, H * W)
            gx = (wm.T @ gf).reshape(Cin, H, W)
            gw = (gf @ xf.T).reshape(wd.shape)
            return (gx, gw) if b is None else (gx, gw, gf.sum(axis=1))

        return _emit("conv2d", out, (x, w) if b is None else (x, w, b), rule1)

    Hp, Wp = H + 2 * p, W + 2 * p
    Ho, Wo = (Hp - k) // s + 1, (Wp - k) // s + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv2d: input {x.shape} too small for kernel {k} with padding {padding!r}")
    if p:
        xp = np.zeros((Cin, Hp, Wp))
        xp[:, p : p + H, p : p + W] = x.data
    else:
        xp = x.data
    # im2col: (Cin·k·k) × (Ho·Wo)
    cols = np.empty((Cin, k, k, Ho, Wo))
    for di in range(k):
        for dj in range(k):
            cols[:, di, dj] = xp[:, di : di + s * Ho : s, dj : dj + s * Wo : s]
    cols = cols.reshape(Cin * k * k, Ho * Wo)
    wm = wd.reshape(Cout, Cin * k * k)
    out = (wm @ cols).reshape(Cout, Ho, Wo)
    if b is not None:
        out = out + b.data[:, None, None]

    def rule(g):
        gf = g.reshape(Cout, Ho * Wo)
        gw = (gf @ cols.T).reshape(wd.shape)
        gcols = (wm.T @ gf).reshape(Cin, k, k, Ho, Wo)
        gxp = np.zeros((Cin, Hp, Wp))
        for di in range(k):
            for dj in range(k):
                gxp[:, di : di + s * Ho : s, dj : dj + s * Wo : s] += gcols[:, di, dj]
        gx = gxp[:, p : p + H, p : p + W] if p else gxp
        return (gx, gw) if b is None else (gx, gw, g.sum(axis=(1, 2)))

    return _emit("conv2d", out, (x, w) if b is None else (x, w, b), rule)


def maxpool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pooling; H and W must be multiples of ``size``."""
    C, H, W = x.shape
    if H % size or W % size:
        raise ShapeError(f"maxpool2d: {H}×{W} is not a multiple of {size}")
    blocks = x.data.reshape(C, H // size, size, W // size, size).transpose(0, 1, 3, 2, 4)
    blocks = blocks.reshape(C, H // size, W // size, size * size)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def rule(g):
        gb = np.zeros(blocks.shape)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(C, H // size, W // size, size, size).transpose(0, 1, 3, 2, 4)
        return (gb.reshape(C, H, W),)

    return _emit("maxpool2d", out, (x,), rule)


@lru_cache(maxsize=256)
def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row i holds the corner-aligned linear interpolation weights for output i."""
    m = np.zeros((n_out, n_in))
    if n_out == 1 or n_in == 1:
        # a lone output sample sits on the first input sample
        m[:, 0] = 1.0
        return _frozen(m)
    for i in range(n_out):
        src = i * (n_in - 1) / (n_out - 1)
        lo = min(int(np.floor(src)), n_in - 2)
        frac = src - lo
        m[i, lo] += 1.0 - frac
        m[i, lo + 1] += frac
    return _frozen(m)


def _frozen(m: np.ndarray) -> np.ndarray:
    m.flags.writeable = False
    return m


def upsample_bilinear(x: Tensor, size) -> Tensor:
    """Resize C×H×W to C×H''×W'' with corner-aligned bilinear sampling.

    Works for shrinking as well; resizing to the current size returns the
    input values unchanged.
    """
    Ho, Wo = int(size[0]), int(size[1])
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"upsample_bilinear: target {size} must be positive")
    C, H, W = x.shape
    if (Ho, Wo) == (H, W):
        return _emit("upsample_bilinear", x.data.copy(), (x,), lambda g: (g,))
    ry = _interp_matrix(H, Ho)
    rx = _interp_matrix(W, Wo)
    out = (ry @ x.data) @ rx.T
    return _emit("upsample_bilinear", out, (x,), lambda g: ((ry.T @ g) @ rx,))


# ---------------------------------------------------------------- losses


def bce_with_logits(logits: Tensor, target, weights=None, reduce: bool = True) -> Tensor:
    """Sum over pixels of weighted binary cross entropy on ``sigmoid(logits)``.

    ``target`` and ``weights`` are plain arrays (not differentiated). The
    log-sum-exp form keeps the value finite for saturated logits. With
    ``reduce=False`` the per-pixel map is returned instead of its sum.
    """
    z = logits.data
    t = np.asarray(target, dtype=np.float64)
    if t.shape != z.shape:
        raise ShapeError(f"bce_with_logits: target {t.shape} vs logits {z.shape}")
    wts = np.ones_like(z) if weights is None else np.asarray(weights, dtype=np.float64)
    # -t*log(sig(z)) - (1-t)*log(1-sig(z)) = softplus(z) - t*z
    softplus = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    p = _sigmoid(z)
    if not reduce:
        return _emit("bce_with_logits", wts * (softplus - t * z), (logits,), lambda g: (g * wts * (p - t),))
    val = np.sum(wts * (softplus - t * z))
    return _emit("bce_with_logits", np.array(val), (logits,), lambda g: (g.item() * wts * (p - t),))
