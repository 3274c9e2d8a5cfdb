"""Reverse-mode automatic differentiation on dense float64 arrays.

Every operation records its inputs and a backward rule on the output
tensor (define-by-run). ``backward()`` on a scalar walks the recorded
graph once in reverse topological order and accumulates ``dLoss/dLeaf``
into ``grad`` additively, so a tensor feeding two consumers receives
the sum of both contributions.

Tensors are immutable after creation except for gradient accumulation;
a graph is confined to the thread that built it. Separate graphs on
separate threads share no state.
"""

from __future__ import annotations

import numpy as np

# Guard constants. Divisions clamp the denominator magnitude, sqrt
# clamps its backward slope, exp clips its argument below the float64
# overflow threshold so finite inputs never produce NaN/Inf.
DIV_EPS = 1e-12
SQRT_EPS = 1e-12
EXP_MAX = 709.0


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible, naming the op."""


def _fmt(shape):
    return "x".join(str(s) for s in shape)


class Tensor:
    """Dense float64 array participating in the differentiation graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        """Leaf sharing this tensor's values, cut from the graph."""
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)  # own the buffer
            if self.grad.shape != self.data.shape:
                self.grad = np.broadcast_to(self.grad, self.data.shape).copy()
        else:
            self.grad += g

    def backward(self):
        """Populate ``grad`` on every reachable tensor that requires it.

        Repeated calls without ``zero_grad`` accumulate.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {_fmt(self.shape)}"
            )
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # ------------------------------------------------------------------
    # operator sugar
    # ------------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def __repr__(self):
        return f"Tensor(shape={_fmt(self.shape)}, op={self._op}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    """Wrap arrays/scalars as constant tensors; pass tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _result(data, parents, backward, op):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    else:
        out._op = op
    return out


def _unbroadcast(g, shape):
    """Reduce a broadcast gradient back to the operand's shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ----------------------------------------------------------------------
# elementwise arithmetic (numpy broadcasting rules)
# ----------------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: cannot broadcast {_fmt(a.shape)} with {_fmt(b.shape)}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _result(data, (a, b), backward, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: cannot broadcast {_fmt(a.shape)} with {_fmt(b.shape)}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _result(data, (a, b), backward, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: cannot broadcast {_fmt(a.shape)} with {_fmt(b.shape)}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _result(data, (a, b), backward, "mul")


def _clamped(denom):
    small = np.abs(denom) < DIV_EPS
    if not small.any():
        return denom
    sign = np.where(denom < 0, -1.0, 1.0)
    return np.where(small, sign * DIV_EPS, denom)


def div(a, b):
    """Elementwise division; |denominator| clamped to DIV_EPS."""
    a, b = as_tensor(a), as_tensor(b)
    denom = _clamped(np.asarray(b.data, dtype=np.float64))
    try:
        data = a.data / denom
    except ValueError:
        raise ShapeError(f"div: cannot broadcast {_fmt(a.shape)} with {_fmt(b.shape)}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / denom, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * data / denom, b.shape))

    return _result(data, (a, b), backward, "div")


def exp(a):
    a = as_tensor(a)
    data = np.exp(np.minimum(a.data, EXP_MAX))

    def backward(g):
        a._accumulate(g * data)

    return _result(data, (a,), backward, "exp")


def absolute(a):
    """Elementwise |a| with subgradient 0 at exact zeros."""
    a = as_tensor(a)
    data = np.abs(a.data)

    def backward(g):
        a._accumulate(g * np.sign(a.data))

    return _result(data, (a,), backward, "abs")


def sqrt(a):
    """Elementwise square root; negatives clipped to 0, slope clamped."""
    a = as_tensor(a)
    data = np.sqrt(np.maximum(a.data, 0.0))

    def backward(g):
        a._accumulate(g * 0.5 / np.maximum(data, SQRT_EPS))

    return _result(data, (a,), backward, "sqrt")


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    data = np.where(mask, a.data, 0.0)

    def backward(g):
        a._accumulate(g * mask)

    return _result(data, (a,), backward, "relu")


# ----------------------------------------------------------------------
# reductions and reshaping
# ----------------------------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape).copy())

    return _result(data, (a,), backward, "sum")


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for ax in axes:
            n *= a.shape[ax]
    out = tsum(a, axis=axis, keepdims=keepdims)
    return mul(out, 1.0 / n)


def tmax(a, axis):
    """Maximum along one axis; subgradient flows to the first argmax."""
    a = as_tensor(a)
    data = a.data.max(axis=axis)
    arg = np.expand_dims(a.data.argmax(axis=axis), axis)

    def backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, arg, np.expand_dims(g, axis), axis)
        a._accumulate(full)

    return _result(data, (a,), backward, "max")


def reshape(a, shape):
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return _result(data, (a,), backward, "reshape")


def transpose(a, axes):
    a = as_tensor(a)
    data = a.data.transpose(axes)
    inv = np.argsort(axes)

    def backward(g):
        a._accumulate(g.transpose(inv))

    return _result(data, (a,), backward, "transpose")


def flip(a, axes):
    a = as_tensor(a)
    data = np.flip(a.data, axes)

    def backward(g):
        a._accumulate(np.flip(g, axes))

    return _result(data, (a,), backward, "flip")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            i != axis and t.shape[i] != ref[i] for i in range(len(ref))
        ):
            raise ShapeError(
                f"concat: shapes {_fmt(t.shape)} and {_fmt(ref)} differ off axis {axis}"
            )
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, splits, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t._accumulate(piece)

    return _result(data, tuple(tensors), backward, "concat")


def take(a, key):
    """Basic indexing/slicing with gradient scatter on backward."""
    a = as_tensor(a)
    data = a.data[key]

    def backward(g):
        full = np.zeros_like(a.data)
        full[key] = g
        a._accumulate(full)

    return _result(np.ascontiguousarray(data), (a,), backward, "take")


def gather_rows(a, idx):
    """Select rows along axis 0 by an integer index array."""
    a = as_tensor(a)
    idx = np.asarray(idx)
    data = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accumulate(full)

    return _result(data, (a,), backward, "gather_rows")


# ----------------------------------------------------------------------
# linear algebra and network primitives
# ----------------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(
            f"matmul: expects 2-D operands, got {_fmt(a.shape)} @ {_fmt(b.shape)}"
        )
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul: inner extents differ, {_fmt(a.shape)} @ {_fmt(b.shape)}"
        )
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _result(data, (a, b), backward, "matmul")


def bmm(a, b):
    """Batched matrix multiply: [B, M, K] @ [B, K, N] -> [B, M, N]."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(
            f"bmm: expects [B,M,K] @ [B,K,N], got {_fmt(a.shape)} @ {_fmt(b.shape)}"
        )
    data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.matmul(g, b.data.transpose(0, 2, 1)))
        if b.requires_grad:
            b._accumulate(np.matmul(a.data.transpose(0, 2, 1), g))

    return _result(data, (a, b), backward, "bmm")


def fully_connected(x, weight, bias=None):
    """x [B, F_in] times weight [F_in, F_out], plus optional bias [F_out]."""
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


def softmax(a, axis=-1):
    """Numerically stable softmax along ``axis``; rows sum to 1."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        a._accumulate(data * (g - dot))

    return _result(data, (a,), backward, "softmax")


def l2_norm(a, axis=-1, keepdims=False):
    """Euclidean norm along ``axis`` (sqrt slope clamped near zero)."""
    return sqrt(tsum(mul(a, a), axis=axis, keepdims=keepdims))


def _pad_spatial(x, pads):
    """Zero-pad trailing spatial axes; pads is ((lo, hi), ...) per axis."""
    x = as_tensor(x)
    nlead = x.ndim - len(pads)
    full = [(0, 0)] * nlead + list(pads)
    data = np.pad(x.data, full)
    crop = tuple(
        slice(lo, data.shape[i] - hi) for i, (lo, hi) in enumerate(full)
    )

    def backward(g):
        x._accumulate(g[crop])

    return _result(data, (x,), backward, "pad")


def _dilate_spatial(x, stride):
    """Insert stride-1 zeros between entries of the trailing spatial axes."""
    x = as_tensor(x)
    nsp = len(stride)
    lead = x.shape[: x.ndim - nsp]
    sp = x.shape[x.ndim - nsp:]
    out_sp = tuple((s - 1) * st + 1 for s, st in zip(sp, stride))
    data = np.zeros(lead + out_sp, dtype=np.float64)
    sel = (Ellipsis,) + tuple(slice(None, None, st) for st in stride)
    data[sel] = x.data

    def backward(g):
        x._accumulate(g[sel])

    return _result(data, (x,), backward, "dilate")


def _corr2d(x, w, stride):
    """Core valid cross-correlation: x [B,C,H,W] with w [O,C,kh,kw]."""
    B, C, H, W = x.shape
    O, Cw, kh, kw = w.shape
    if C != Cw:
        raise ShapeError(f"conv2d: input channels {C} != kernel channels {Cw}")
    if H < kh or W < kw:
        raise ShapeError(
            f"conv2d: kernel {kh}x{kw} larger than padded input {H}x{W}"
        )
    sh, sw = stride
    # cols layout [B, C*kh*kw, OH*OW] keeps source rows contiguous during
    # the gather and lets BLAS absorb every transpose afterwards
    windows = np.lib.stride_tricks.sliding_window_view(x.data, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::sh, ::sw]  # [B, C, OH, OW, kh, kw]
    OH, OW = windows.shape[2], windows.shape[3]
    cols = windows.transpose(0, 1, 4, 5, 2, 3).reshape(B, C * kh * kw, OH * OW)
    wmat = w.data.reshape(O, C * kh * kw)
    data = np.matmul(wmat, cols).reshape(B, O, OH, OW)

    def backward(g):
        if w.requires_grad:
            gmat = g.reshape(B, O, OH * OW)
            dw = np.matmul(gmat, cols.transpose(0, 2, 1)).sum(axis=0)
            w._accumulate(dw.reshape(w.shape))
        if x.requires_grad:
            # dx = full correlation of the stride-dilated grad with the
            # channel-swapped, spatially flipped kernel.
            gt = Tensor(g)
            gd = _dilate_spatial(gt, (sh, sw)).data
            pt, pl = kh - 1, kw - 1
            pb = H - 1 - (OH - 1) * sh
            pr = W - 1 - (OW - 1) * sw
            gp = np.pad(gd, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
            wflip = np.flip(w.data, (2, 3)).transpose(1, 0, 2, 3)  # [C,O,kh,kw]
            win = np.lib.stride_tricks.sliding_window_view(gp, (kh, kw), axis=(2, 3))
            c2 = win.transpose(0, 1, 4, 5, 2, 3).reshape(B, O * kh * kw, H * W)
            dx = np.matmul(wflip.reshape(C, O * kh * kw), c2)
            x._accumulate(dx.reshape(B, C, H, W))

    return _result(data, (x, w), backward, "conv2d")


def conv2d(x, w, b=None, stride=1, padding=0):
    """2-D convolution (cross-correlation), x [B,C,H,W], w [O,C,kh,kw]."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(
            f"conv2d: expects 4-D input/kernel, got {_fmt(x.shape)} and {_fmt(w.shape)}"
        )
    s = (stride, stride) if isinstance(stride, int) else tuple(stride)
    p = (padding, padding) if isinstance(padding, int) else tuple(padding)
    if p != (0, 0):
        x = _pad_spatial(x, ((p[0], p[0]), (p[1], p[1])))
    out = _corr2d(x, w, s)
    if b is not None:
        out = add(out, reshape(as_tensor(b), (1, -1, 1, 1)))
    return out


def _conv_transpose2d_s2k4(x, w, b):
    """Fast path for the kernel-4 / stride-2 / pad-1 upsampler: each
    output parity class is a 2x2 correlation over the padded input, so
    none of the zeros of the dilated formulation are touched."""
    B, C, H, W = x.shape
    O = w.shape[1]
    xp = _pad_spatial(x, ((1, 1), (1, 1)))
    wk = transpose(w, (1, 0, 2, 3))  # [O, C, 4, 4]
    parts = []
    for a in (0, 1):
        for c in (0, 1):
            sub = xp[:, :, a:a + H + 1, c:c + W + 1]
            kern = wk[:, :, 3 - a::-2, 3 - c::-2]  # taps [3-a, 1-a] x [3-c, 1-c]
            parts.append(reshape(_corr2d(sub, kern, (1, 1)), (B, O, H, W, 1)))
    grid = reshape(concat(parts, axis=4), (B, O, H, W, 2, 2))
    grid = transpose(grid, (0, 1, 2, 4, 3, 5))  # [B, O, H, a, W, c]
    out = reshape(grid, (B, O, 2 * H, 2 * W))
    if b is not None:
        out = add(out, reshape(as_tensor(b), (1, -1, 1, 1)))
    return out


def conv_transpose2d(x, w, b=None, stride=2, padding=0):
    """Transposed 2-D convolution, x [B,C,H,W], w [C,O,kh,kw].

    Realized as the adjoint of conv2d: dilate by the stride, pad by
    k-1-p, then correlate with the flipped, channel-swapped kernel.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(
            f"conv_transpose2d: expects 4-D input/kernel, got "
            f"{_fmt(x.shape)} and {_fmt(w.shape)}"
        )
    if x.shape[1] != w.shape[0]:
        raise ShapeError(
            f"conv_transpose2d: input channels {x.shape[1]} != kernel channels {w.shape[0]}"
        )
    s = (stride, stride) if isinstance(stride, int) else tuple(stride)
    p = (padding, padding) if isinstance(padding, int) else tuple(padding)
    kh, kw = w.shape[2], w.shape[3]
    if kh - 1 - p[0] < 0 or kw - 1 - p[1] < 0:
        raise ShapeError(f"conv_transpose2d: padding {p} exceeds kernel-1 {kh - 1},{kw - 1}")
    if s == (2, 2) and p == (1, 1) and (kh, kw) == (4, 4):
        return _conv_transpose2d_s2k4(x, w, b)
    xd = _dilate_spatial(x, s)
    xp = _pad_spatial(xd, ((kh - 1 - p[0], kh - 1 - p[0]), (kw - 1 - p[1], kw - 1 - p[1])))
    wk = transpose(flip(w, (2, 3)), (1, 0, 2, 3))
    out = _corr2d(xp, wk, (1, 1))
    if b is not None:
        out = add(out, reshape(as_tensor(b), (1, -1, 1, 1)))
    return out


def _corr1d(x, w, stride):
    """Core valid cross-correlation: x [B,C,L] with w [O,C,k]."""
    B, C, L = x.shape
    O, Cw, k = w.shape
    if C != Cw:
        raise ShapeError(f"conv1d: input channels {C} != kernel channels {Cw}")
    if L < k:
        raise ShapeError(f"conv1d: kernel {k} larger than padded input {L}")
    windows = np.lib.stride_tricks.sliding_window_view(x.data, k, axis=2)
    windows = windows[:, :, ::stride]  # [B, C, OL, k]
    OL = windows.shape[2]
    cols = windows.transpose(0, 1, 3, 2).reshape(B, C * k, OL)
    data = np.matmul(w.data.reshape(O, C * k), cols)  # [B, O, OL]

    def backward(g):
        if w.requires_grad:
            dw = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0)
            w._accumulate(dw.reshape(w.shape))
        if x.requires_grad:
            gd = _dilate_spatial(Tensor(g), (stride,)).data
            pl = k - 1
            pr = L - 1 - (OL - 1) * stride
            gp = np.pad(gd, ((0, 0), (0, 0), (pl, pr)))
            wflip = np.flip(w.data, 2).transpose(1, 0, 2)
            win = np.lib.stride_tricks.sliding_window_view(gp, k, axis=2)
            c2 = win.transpose(0, 1, 3, 2).reshape(B, O * k, L)
            dx = np.matmul(wflip.reshape(C, O * k), c2)
            x._accumulate(dx)

    return _result(data, (x, w), backward, "conv1d")


def conv1d(x, w, b=None, stride=1, padding=0):
    """1-D convolution, x [B,C,L], w [O,C,k]."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(
            f"conv1d: expects 3-D input/kernel, got {_fmt(x.shape)} and {_fmt(w.shape)}"
        )
    if padding:
        x = _pad_spatial(x, ((padding, padding),))
    out = _corr1d(x, w, stride)
    if b is not None:
        out = add(out, reshape(as_tensor(b), (1, -1, 1)))
    return out


def conv_transpose1d(x, w, b=None, stride=2, padding=0):
    """Transposed 1-D convolution, x [B,C,L], w [C,O,k]."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(
            f"conv_transpose1d: expects 3-D input/kernel, got "
            f"{_fmt(x.shape)} and {_fmt(w.shape)}"
        )
    if x.shape[1] != w.shape[0]:
        raise ShapeError(
            f"conv_transpose1d: input channels {x.shape[1]} != kernel channels {w.shape[0]}"
        )
    k = w.shape[2]
    if k - 1 - padding < 0:
        raise ShapeError(f"conv_transpose1d: padding {padding} exceeds kernel-1 {k - 1}")
    xd = _dilate_spatial(x, (stride,))
    xp = _pad_spatial(xd, ((k - 1 - padding, k - 1 - padding),))
    wk = transpose(flip(w, 2), (1, 0, 2))
    out = _corr1d(xp, wk, 1)
    if b is not None:
        out = add(out, reshape(as_tensor(b), (1, -1, 1)))
    return out


def batch_norm(x, gamma, beta, running_mean, running_var, training,
               momentum=0.1, eps=1e-5):
    """Batch normalization over all axes except the channel axis (1).

    Supports [B,F], [B,C,L] and [B,C,H,W] inputs. In training mode the
    batch statistics normalize and update the running buffers in place;
    in eval mode the running buffers normalize (so repeated eval
    forwards are bit-identical). Biased variance throughout.
    """
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError(f"batch_norm: expects batched input, got {_fmt(x.shape)}")
    axes = (0,) + tuple(range(2, x.ndim))
    shape = (1, x.shape[1]) + (1,) * (x.ndim - 2)
    gamma_b = reshape(as_tensor(gamma), shape)
    beta_b = reshape(as_tensor(beta), shape)
    if training:
        if x.shape[0] < 1:
            raise ShapeError("batch_norm: training requires batch size >= 1")
        mean = tmean(x, axis=axes, keepdims=True)
        centered = sub(x, mean)
        var = tmean(mul(centered, centered), axis=axes, keepdims=True)
        if momentum > 0:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean.data.reshape(-1)
            running_var *= 1.0 - momentum
            running_var += momentum * var.data.reshape(-1)
        xhat = div(centered, sqrt(add(var, eps)))
    else:
        rm = running_mean.reshape(shape)
        rv = running_var.reshape(shape)
        xhat = div(sub(x, rm), np.sqrt(rv + eps))
    return add(mul(gamma_b, xhat), beta_b)
