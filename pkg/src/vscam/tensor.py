"""Dense tensors with a record-and-replay reverse-mode gradient tape.

Tensors wrap numpy arrays. When attached to a :class:`Tape`, every operation
appends a node holding the backward rule, so gradients of a scalar output
with respect to *any* recorded intermediate (not just leaves) can be read
back by node id after ``backward``.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "TapeError",
    "tensor",
    "matmul",
    "conv2d",
    "elementwise",
    "add",
    "bias_add",
    "sub",
    "mul",
    "relu",
    "gelu",
    "scale",
    "reduce",
    "reduce_sum",
    "reduce_mean",
    "reduce_max",
    "avgpool2d",
    "reshape",
    "transpose",
    "narrow",
    "concat",
    "set_check_finite",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class TapeError(RuntimeError):
    """Tape misuse: backward on a consumed tape, mixing tapes, etc."""


_DTYPES = {"single": np.float32, "double": np.float64}

# When enabled (tests do this), every forward op asserts its output is finite.
_check_finite = False


def set_check_finite(enabled: bool) -> None:
    global _check_finite
    _check_finite = bool(enabled)


class _Node:
    __slots__ = ("inputs", "backward")

    def __init__(self, inputs, backward):
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Append-only record of operations, replayed in reverse by backward().

    A tape is single-owner: one inference (or training step) per tape, and
    ``backward`` may be called once.
    """

    def __init__(self, precision: str = "single"):
        if precision not in _DTYPES:
            raise ValueError(f"unknown precision {precision!r}")
        self.precision = precision
        self.dtype = _DTYPES[precision]
        self.nodes: list[_Node] = []
        self.grads: dict[int, np.ndarray] = {}
        self.consumed = False

    def record(self, input_ids: Sequence[int], backward: Optional[Callable]) -> int:
        node_id = len(self.nodes)
        for iid in input_ids:
            if iid >= node_id:
                raise TapeError("tape nodes must reference earlier nodes only")
        self.nodes.append(_Node(tuple(input_ids), backward))
        return node_id

    def leaf(self, data) -> "Tensor":
        """Register an array as a tracked leaf tensor."""
        arr = np.asarray(data, dtype=self.dtype)
        node_id = self.record((), None)
        return Tensor(arr, tape=self, node_id=node_id)

    def backward(self, root, seed: Optional[np.ndarray] = None) -> dict[int, np.ndarray]:
        """Populate and return grads[node_id] = d(root)/d(node) for all reached nodes.

        ``root`` is a tracked Tensor or a node id. Without an explicit seed the
        root must be scalar-shaped and is seeded with ones.
        """
        if self.consumed:
            raise TapeError("backward() already ran on this tape")
        if isinstance(root, Tensor):
            if root.tape is not self:
                raise TapeError("root tensor belongs to a different tape")
            root_id = root.node_id
            root_shape = root.data.shape
        else:
            root_id = int(root)
            root_shape = None
        if seed is None:
            if root_shape is not None and int(np.prod(root_shape)) != 1:
                raise TapeError("root must be scalar-shaped unless a seed gradient is given")
            seed = np.ones(root_shape if root_shape is not None else (), dtype=self.dtype)
        else:
            seed = np.asarray(seed, dtype=self.dtype)

        grads: dict[int, np.ndarray] = {root_id: seed}
        for nid in range(root_id, -1, -1):
            g = grads.get(nid)
            if g is None:
                continue
            node = self.nodes[nid]
            if node.backward is None:
                continue
            for iid, gin in zip(node.inputs, node.backward(g)):
                if gin is None:
                    continue
                acc = grads.get(iid)
                grads[iid] = gin if acc is None else acc + gin
        self.grads = grads
        self.consumed = True
        return grads


class Tensor:
    """Dense n-d array, optionally tracked on a tape via node_id."""

    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data, tape: Optional[Tape] = None, node_id: Optional[int] = None):
        self.data = np.asarray(data, dtype=tape.dtype if tape is not None else None)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float64)
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def tracked(self) -> bool:
        return self.tape is not None

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, tracked={self.tracked})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)


def tensor(data, tape: Optional[Tape] = None) -> Tensor:
    """Make a Tensor; if a tape is given it becomes a tracked leaf."""
    if tape is not None:
        return tape.leaf(data)
    return Tensor(np.asarray(data, dtype=np.float64))


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _common_tape(operands: Iterable[Tensor]) -> Optional[Tape]:
    tape = None
    for t in operands:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise TapeError("operands belong to different tapes")
    return tape


def apply_op(operands: Sequence[Tensor], out_data: np.ndarray,
             backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    """Wrap a computed result, recording the backward rule if any input is tracked.

    ``backward(grad_out)`` must return one gradient array (or None) per operand,
    in order. This is the extension point other modules use for custom ops.
    """
    tape = _common_tape(operands)
    if _check_finite and not np.all(np.isfinite(out_data)):
        raise FloatingPointError("non-finite values in forward result")
    if tape is None:
        return Tensor(out_data)
    out_data = np.asarray(out_data, dtype=tape.dtype)
    input_ids = tuple(t.node_id for t in operands if t.tape is not None)
    tracked_mask = [t.tape is not None for t in operands]

    def tape_backward(grad_out):
        gs = backward(grad_out)
        return [g for g, tr in zip(gs, tracked_mask) if tr]

    node_id = tape.record(input_ids, tape_backward)
    return Tensor(out_data, tape=tape, node_id=node_id)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shapes do not chain: {a.data.shape} x {b.data.shape}")
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def backward(g):
        return (g @ bd.T, ad.T @ g)

    return apply_op((a, b), out, backward)


def _im2col(xp: np.ndarray, k: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    c = xp.shape[0]
    cols = np.empty((c, k, k, out_h, out_w), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, i:i + stride * out_h:stride, j:j + stride * out_w:stride]
    return cols.reshape(c * k * k, out_h * out_w)


def _col2im(cols: np.ndarray, c: int, hp: int, wp: int, k: int, stride: int,
            out_h: int, out_w: int) -> np.ndarray:
    xp = np.zeros((c, hp, wp), dtype=cols.dtype)
    cols = cols.reshape(c, k, k, out_h, out_w)
    for i in range(k):
        for j in range(k):
            xp[:, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += cols[:, i, j]
    return xp


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation on a C_in x H x W tensor with a C_out x C_in x k x k kernel."""
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if x.data.ndim != 3 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d expects CxHxW input and OxIxkxk kernel, got {x.data.shape} and {kernel.data.shape}")
    c_out, c_in, kh, kw = kernel.data.shape
    if kh != kw:
        raise ShapeError("only square kernels are supported")
    c, h, w = x.data.shape
    if c != c_in:
        raise ShapeError(f"input has {c} channels, kernel expects {c_in}")
    k = kh
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < k or wp < k:
        raise ShapeError(f"kernel {k}x{k} larger than padded input {hp}x{wp}")
    out_h = (hp - k) // stride + 1
    out_w = (wp - k) // stride + 1

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    cols = _im2col(xp, k, stride, out_h, out_w)
    wmat = kernel.data.reshape(c_out, c_in * k * k)
    out = (wmat @ cols).reshape(c_out, out_h, out_w)

    def backward(g):
        gmat = g.reshape(c_out, out_h * out_w)
        dker = (gmat @ cols.T).reshape(c_out, c_in, k, k)
        dcols = wmat.T @ gmat
        dxp = _col2im(dcols, c, hp, wp, k, stride, out_h, out_w)
        dx = dxp[:, padding:padding + h, padding:padding + w] if padding else dxp
        return (dx, dker)

    return apply_op((x, kernel), out, backward)


# ---------------------------------------------------------------------------
# elementwise

def _binary_shapes(a: Tensor, b: Tensor):
    # Only exact-shape and scalar broadcast are supported.
    if a.data.shape == b.data.shape:
        return
    if a.data.size == 1 or b.data.size == 1:
        return
    raise ShapeError(f"incompatible shapes for elementwise op: {a.data.shape} vs {b.data.shape}")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    # gradient of a scalar operand broadcast over the other shape
    return np.sum(g).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b)
    out = a.data + b.data
    ash, bsh = a.data.shape, b.data.shape
    return apply_op((a, b), out, lambda g: (_reduce_to(g, ash), _reduce_to(g, bsh)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b)
    out = a.data - b.data
    ash, bsh = a.data.shape, b.data.shape
    return apply_op((a, b), out, lambda g: (_reduce_to(g, ash), _reduce_to(-g, bsh)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b)
    out = a.data * b.data
    ad, bd = a.data, b.data
    return apply_op((a, b), out,
                    lambda g: (_reduce_to(g * bd, ad.shape), _reduce_to(g * ad, bd.shape)))


def scale(x, factor: float) -> Tensor:
    x = _as_tensor(x)
    f = float(factor)
    return apply_op((x,), x.data * f, lambda g: (g * f,))


def bias_add(x, b, axis: int) -> Tensor:
    """Add a 1-d bias along one axis of x (dedicated op; no general broadcasting)."""
    x, b = _as_tensor(x), _as_tensor(b)
    if b.data.ndim != 1 or b.data.shape[0] != x.data.shape[axis]:
        raise ShapeError(f"bias of shape {b.data.shape} does not fit axis {axis} of {x.data.shape}")
    expand = [None] * x.data.ndim
    expand[axis] = slice(None)
    out = x.data + b.data[tuple(expand)]
    other_axes = tuple(a for a in range(x.data.ndim) if a != axis)

    def backward(g):
        g = np.asarray(g)
        return (g, g.sum(axis=other_axes) if other_axes else g.copy())

    return apply_op((x, b), out, backward)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return apply_op((x,), np.where(mask, x.data, 0.0), lambda g: (g * mask,))


_GELU_C = 0.044715
_SQRT_2_OVER_PI = float(np.sqrt(2.0 / np.pi))


def gelu(x) -> Tensor:
    """GELU, tanh approximation: 0.5x(1 + tanh(sqrt(2/pi)(x + 0.044715x^3)))."""
    x = _as_tensor(x)
    xd = x.data
    u = _SQRT_2_OVER_PI * (xd + _GELU_C * xd ** 3)
    t = np.tanh(u)
    out = 0.5 * xd * (1.0 + t)

    def backward(g):
        du = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * xd ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t ** 2) * du),)

    return apply_op((x,), out, backward)


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "relu": relu, "gelu": gelu, "scale": scale}


def elementwise(op: str, *operands) -> Tensor:
    """Dispatch by name: add, sub, mul, relu, gelu, scale."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*operands)


# ---------------------------------------------------------------------------
# reductions

def _norm_axes(axes, ndim: int):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(a % ndim for a in axes)
    if len(set(axes)) != len(axes):
        raise ValueError("duplicate reduction axes")
    for a in axes:
        if not 0 <= a < ndim:
            raise ValueError(f"axis {a} out of range for ndim {ndim}")
    return axes


def reduce_sum(x, axes=None) -> Tensor:
    x = _as_tensor(x)
    ax = _norm_axes(axes, x.data.ndim)
    out = np.sum(x.data, axis=ax)
    shape = x.data.shape

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),)

    return apply_op((x,), out, backward)


def reduce_mean(x, axes=None) -> Tensor:
    x = _as_tensor(x)
    ax = _norm_axes(axes, x.data.ndim)
    count = int(np.prod([x.data.shape[a] for a in ax])) if ax else 1
    if count == 0:
        raise ValueError("mean over an empty axis")
    out = np.mean(x.data, axis=ax)
    shape = x.data.shape

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, ax), shape) / count,)

    return apply_op((x,), out, backward)


def reduce_max(x, axes=None) -> Tensor:
    """Max reduction; the gradient routes to the first argmax along the axis."""
    x = _as_tensor(x)
    ax = _norm_axes(axes, x.data.ndim)
    for a in ax:
        if x.data.shape[a] == 0:
            raise ValueError("max over an empty axis")
    # Move reduced axes to the end and flatten them so argmax is 1-d.
    keep = tuple(a for a in range(x.data.ndim) if a not in ax)
    perm = keep + ax
    moved = np.transpose(x.data, perm)
    lead = moved.shape[:len(keep)]
    flat = moved.reshape(lead + (-1,))
    arg = np.argmax(flat, axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    shape = x.data.shape

    def backward(g):
        dflat = np.zeros_like(flat)
        np.put_along_axis(dflat, arg[..., None], np.asarray(g)[..., None], axis=-1)
        dmoved = dflat.reshape(moved.shape)
        return (np.transpose(dmoved, np.argsort(perm)).reshape(shape),)

    return apply_op((x,), out, backward)


_REDUCE = {"sum": reduce_sum, "mean": reduce_mean, "max": reduce_max}


def reduce(op: str, x, axes=None) -> Tensor:
    try:
        fn = _REDUCE[op]
    except KeyError:
        raise ValueError(f"unknown reduce op {op!r}") from None
    return fn(x, axes)


def avgpool2d(x, out_h: int, out_w: int) -> Tensor:
    """Non-overlapping window means over a CxHxW tensor; H, W must divide evenly."""
    x = _as_tensor(x)
    if x.data.ndim != 3:
        raise ShapeError(f"avgpool2d expects CxHxW, got {x.data.shape}")
    c, h, w = x.data.shape
    if h % out_h or w % out_w:
        raise ShapeError(f"input {h}x{w} not divisible into {out_h}x{out_w} windows")
    ph, pw = h // out_h, w // out_w
    windows = x.data.reshape(c, out_h, ph, out_w, pw)
    out = windows.mean(axis=(2, 4))

    def backward(g):
        gx = np.broadcast_to(g[:, :, None, :, None], (c, out_h, ph, out_w, pw))
        return ((gx / (ph * pw)).reshape(c, h, w),)

    return apply_op((x,), out, backward)


# ---------------------------------------------------------------------------
# structural ops

def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(shape)
    old = x.data.shape
    out = x.data.reshape(shape)
    return apply_op((x,), out, lambda g: (np.asarray(g).reshape(old),))


def transpose(x, axes=None) -> Tensor:
    x = _as_tensor(x)
    perm = tuple(axes) if axes is not None else tuple(reversed(range(x.data.ndim)))
    inv = np.argsort(perm)
    out = np.transpose(x.data, perm)
    return apply_op((x,), out, lambda g: (np.transpose(np.asarray(g), inv),))


def narrow(x, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    x = _as_tensor(x)
    if not 0 <= start <= start + length <= x.data.shape[axis]:
        raise ShapeError(f"narrow [{start}:{start + length}] out of range for axis {axis} of {x.data.shape}")
    slicer = [slice(None)] * x.data.ndim
    slicer[axis] = slice(start, start + length)
    slicer = tuple(slicer)
    out = x.data[slicer]
    shape = x.data.shape

    def backward(g):
        gx = np.zeros(shape, dtype=np.asarray(g).dtype)
        gx[slicer] = g
        return (gx,)

    return apply_op((x,), out, backward)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    sizes = [p.data.shape[axis] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        g = np.asarray(g)
        slicer = [slice(None)] * g.ndim
        gs = []
        for i in range(len(parts)):
            slicer[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
            gs.append(g[tuple(slicer)])
        return gs

    return apply_op(parts, out, backward)
