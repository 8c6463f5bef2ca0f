"""Minimal dense-tensor engine with tape-based reverse-mode differentiation.

Tensors are strictly rank-4 (batch, channels, height, width), double
precision, row-major. Operations are pure functions: they read their
operands, produce a fresh tensor, and (when any operand belongs to a Tape)
record a closure that maps the output gradient to operand gradients.
Scalars live as [1,1,1,1] tensors; per-channel vectors as [1,C,1,1].

Binary operations accept a plain ndarray or float on either side, treated
as a constant (no gradient is routed to it). Tensors from two different
tapes must never meet in one operation.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DomainError, ShapeError

__all__ = [
    "Tensor", "Tape", "backward", "wrap_leaves",
    "conv2d", "concat_channels", "split_channels", "pointwise",
    "global_avg_pool", "upsample_nearest", "take_flat",
    "sum_all", "mean_all",
    "add", "sub", "mul", "div", "minimum", "maximum",
    "neg", "scale", "exp", "log", "sigmoid", "silu", "relu",
    "softplus", "arctan", "pow_const", "clamp",
]


class Tape:
    """Ordered record of operations for one differentiation pass.

    Recording order is a valid topological order, so a single reversed
    sweep propagates gradients. A tape is single-writer: do not record
    onto one tape from concurrent threads.
    """

    def __init__(self):
        self._tensors = []            # node_id -> Tensor
        self._nodes = []              # (out_id, parent_ids, backward_fn)
        self._produced = set()        # node_ids that are op outputs

    def _register(self, tensor):
        node_id = len(self._tensors)
        self._tensors.append(tensor)
        return node_id

    def _record(self, out, parents, backward_fn):
        parent_ids = tuple(p.node_id if isinstance(p, Tensor) else None for p in parents)
        self._nodes.append((out.node_id, parent_ids, backward_fn))
        self._produced.add(out.node_id)

    def leaves(self):
        """Tensors registered on this tape that are not op outputs."""
        return [t for t in self._tensors if t.node_id not in self._produced]

    def __len__(self):
        return len(self._nodes)


class Tensor:
    """Rank-4 float64 array, optionally registered on a tape.

    Attributes:
        data: contiguous float64 ndarray of shape (N, C, H, W).
        grad: same-shape gradient buffer, populated by backward().
        tape: owning Tape, or None for untraced/constant tensors.
        node_id: identity within the tape (None when untraced).
    """

    __slots__ = ("data", "grad", "tape", "node_id")

    def __init__(self, data, tape=None):
        arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        if arr.ndim != 4:
            raise ShapeError(f"tensors are rank-4 (N,C,H,W); got rank {arr.ndim} with shape {arr.shape}")
        self.data = arr
        self.grad = None
        self.tape = tape
        self.node_id = tape._register(self) if tape is not None else None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor; shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, tape={'yes' if self.tape is not None else 'no'})"

    # arithmetic sugar; constants allowed on either side
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(self, other)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(self, other)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)


def wrap_leaves(arrays, tape=None) -> dict:
    """Bind a name -> ndarray mapping as leaf tensors on one tape."""
    return {name: Tensor(arr, tape) for name, arr in arrays.items()}


def _common_tape(operands):
    tape = None
    for op in operands:
        if isinstance(op, Tensor) and op.tape is not None:
            if tape is None:
                tape = op.tape
            elif tape is not op.tape:
                raise ConfigError("operands are recorded on different tapes")
    return tape


def _op_output(data, parents, backward_fn):
    """Wrap an op result; record the closure when any parent is taped."""
    tape = _common_tape(parents)
    out = Tensor(data, tape)
    if tape is not None:
        tape._record(out, parents, backward_fn)
    return out


def backward(tape: Tape, root: Tensor):
    """Propagate gradients from a scalar root through every recorded op.

    Populates .grad on every tensor registered on the tape (zeros for
    tensors that do not contribute to the root) and returns a dict of
    node_id -> gradient for the tape's leaves. Re-running backward on the
    same tape recomputes from scratch and yields identical gradients.
    """
    if not isinstance(root, Tensor) or root.tape is not tape:
        raise ConfigError("backward root must be a tensor recorded on the given tape")
    if root.shape != (1, 1, 1, 1):
        raise ShapeError(f"backward root must be scalar [1,1,1,1]; got {root.shape}")

    grads = {root.node_id: np.ones((1, 1, 1, 1))}
    for out_id, parent_ids, fn in reversed(tape._nodes):
        g = grads.get(out_id)
        if g is None:
            continue
        for pid, pg in zip(parent_ids, fn(g)):
            if pid is None or pg is None:
                continue
            acc = grads.get(pid)
            grads[pid] = pg if acc is None else acc + pg

    for t in tape._tensors:
        g = grads.get(t.node_id)
        t.grad = np.zeros_like(t.data) if g is None else np.ascontiguousarray(g)
    return {t.node_id: t.grad for t in tape.leaves()}


# ---------------------------------------------------------------------------
# elementwise machinery

def _const_data(x):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1, 1, 1)
    if arr.ndim != 4:
        raise ShapeError(f"constant operands must be scalar or rank-4; got shape {arr.shape}")
    return arr

def _data_of(x):
    return x.data if isinstance(x, Tensor) else _const_data(x)

def _unbroadcast(g, shape):
    # sum the gradient over axes that were broadcast up from `shape`
    for ax in range(4):
        if shape[ax] == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _binary(a, b, forward, grad_a, grad_b):
    ad, bd = _data_of(a), _data_of(b)
    try:
        out = forward(ad, bd)
    except ValueError as e:
        raise ShapeError(f"binary op on incompatible shapes {ad.shape} and {bd.shape}") from e

    def backward_fn(g):
        ga = _unbroadcast(grad_a(g, ad, bd), ad.shape) if isinstance(a, Tensor) else None
        gb = _unbroadcast(grad_b(g, ad, bd), bd.shape) if isinstance(b, Tensor) else None
        return ga, gb

    return _op_output(out, (a, b), backward_fn)


def add(a, b):
    return _binary(a, b, np.add, lambda g, ad, bd: g, lambda g, ad, bd: g)

def sub(a, b):
    return _binary(a, b, np.subtract, lambda g, ad, bd: g, lambda g, ad, bd: -g)

def mul(a, b):
    return _binary(a, b, np.multiply, lambda g, ad, bd: g * bd, lambda g, ad, bd: g * ad)

def div(a, b):
    return _binary(a, b, np.divide, lambda g, ad, bd: g / bd,
                   lambda g, ad, bd: -g * ad / (bd * bd))

def minimum(a, b):
    # ties route the gradient to the first operand
    return _binary(a, b, np.minimum,
                   lambda g, ad, bd: g * (ad <= bd),
                   lambda g, ad, bd: g * (ad > bd))

def maximum(a, b):
    return _binary(a, b, np.maximum,
                   lambda g, ad, bd: g * (ad >= bd),
                   lambda g, ad, bd: g * (ad < bd))


def _unary(x, out_data, grad_fn):
    return _op_output(out_data, (x,), lambda g: (grad_fn(g),))


def neg(x):
    return _unary(x, -x.data, lambda g: -g)

def scale(x, c: float):
    c = float(c)
    return _unary(x, x.data * c, lambda g: g * c)

def exp(x):
    out = np.exp(x.data)
    return _unary(x, out, lambda g: g * out)

def log(x):
    if np.any(x.data <= 0.0):
        raise DomainError("log requires strictly positive inputs")
    xd = x.data
    return _unary(x, np.log(xd), lambda g: g / xd)

def sigmoid(x):
    s = 1.0 / (1.0 + np.exp(-x.data))
    return _unary(x, s, lambda g: g * s * (1.0 - s))

def silu(x):
    xd = x.data
    s = 1.0 / (1.0 + np.exp(-xd))
    return _unary(x, xd * s, lambda g: g * (s + xd * s * (1.0 - s)))

def relu(x):
    xd = x.data
    return _unary(x, np.maximum(xd, 0.0), lambda g: g * (xd > 0.0))

def softplus(x):
    xd = x.data
    s = 1.0 / (1.0 + np.exp(-xd))
    return _unary(x, np.logaddexp(0.0, xd), lambda g: g * s)

def arctan(x):
    xd = x.data
    return _unary(x, np.arctan(xd), lambda g: g / (1.0 + xd * xd))

def pow_const(x, exponent: float):
    e = float(exponent)
    xd = x.data
    if e != int(e) and np.any(xd < 0.0):
        raise DomainError("fractional powers require non-negative inputs")
    return _unary(x, xd ** e, lambda g: g * e * xd ** (e - 1.0))

def clamp(x, lo: float, hi: float):
    xd = x.data
    inside = (xd >= lo) & (xd <= hi)
    return _unary(x, np.clip(xd, lo, hi), lambda g: g * inside)


_UNARY_KINDS = {"sigmoid": sigmoid, "silu": silu, "relu": relu}
_BINARY_KINDS = {"add": add, "mul": mul}


def pointwise(x: Tensor, kind: str, other=None, value=None) -> Tensor:
    """Elementwise op dispatcher: sigmoid, silu, relu, add, mul, scale.

    Binary kinds require `other` with a shape exactly matching `x`;
    "scale" requires a float `value`.
    """
    if kind in _UNARY_KINDS:
        return _UNARY_KINDS[kind](x)
    if kind in _BINARY_KINDS:
        if other is None:
            raise ConfigError(f"pointwise '{kind}' needs a second operand")
        if _data_of(other).shape != x.shape:
            raise ShapeError(
                f"pointwise '{kind}' requires matching shapes; got {x.shape} and {_data_of(other).shape}")
        return _BINARY_KINDS[kind](x, other)
    if kind == "scale":
        if value is None:
            raise ConfigError("pointwise 'scale' needs a value")
        return scale(x, value)
    raise ConfigError(f"unknown pointwise kind '{kind}'")


# ---------------------------------------------------------------------------
# reductions and structural ops

def sum_all(x: Tensor) -> Tensor:
    out = np.full((1, 1, 1, 1), x.data.sum())
    return _unary(x, out, lambda g: np.full(x.shape, g.reshape(-1)[0]))

def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.data.size)


def concat_channels(parts) -> Tensor:
    """Concatenate tensors along the channel axis, in list order."""
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_channels needs at least one tensor")
    n, _, h, w = parts[0].shape
    for i, p in enumerate(parts[1:], start=1):
        pn, _, ph, pw = p.shape
        if (pn, ph, pw) != (n, h, w):
            raise ShapeError(
                f"concat_channels part {i} has N/H/W {(pn, ph, pw)}, expected {(n, h, w)}")
    out = np.concatenate([p.data for p in parts], axis=1)
    sizes = [p.shape[1] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return _op_output(out, tuple(parts), backward_fn)


def split_channels(x: Tensor, sizes) -> list:
    """Split along the channel axis; exact inverse of concat_channels."""
    sizes = [int(s) for s in sizes]
    if any(s <= 0 for s in sizes):
        raise ShapeError(f"split sizes must be positive; got {sizes}")
    if sum(sizes) != x.shape[1]:
        raise ShapeError(f"split sizes {sizes} sum to {sum(sizes)}, input has {x.shape[1]} channels")

    outs = []
    start = 0
    for s in sizes:
        lo, hi = start, start + s
        piece = np.ascontiguousarray(x.data[:, lo:hi])

        def backward_fn(g, lo=lo, hi=hi):
            gx = np.zeros_like(x.data)
            gx[:, lo:hi] = g
            return (gx,)

        outs.append(_op_output(piece, (x,), backward_fn))
        start = hi
    return outs


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial extent, producing [N, C, 1, 1]."""
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / (h * w)
    return _unary(x, out, lambda g: np.broadcast_to(g * inv, x.shape).copy())


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Nearest-neighbour spatial upsampling by an integer factor."""
    f = int(factor)
    if f < 1:
        raise ConfigError(f"upsample factor must be >= 1; got {factor}")
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, f, axis=2), f, axis=3)
    return _unary(x, out, lambda g: g.reshape(n, c, h, f, w, f).sum(axis=(3, 5)))


def take_flat(x: Tensor, indices) -> Tensor:
    """Gather values by flat (row-major) index into a [1,1,1,K] tensor.

    Repeated indices are allowed; their gradients accumulate.
    """
    idx = np.asarray(indices, dtype=np.intp).reshape(-1)
    if idx.size == 0:
        raise ShapeError("take_flat needs at least one index")
    if idx.min() < 0 or idx.max() >= x.data.size:
        raise ShapeError(f"take_flat index out of range for {x.data.size} elements")
    out = x.data.reshape(-1)[idx].reshape(1, 1, 1, idx.size)

    def backward_fn(g):
        gx = np.zeros(x.data.size)
        np.add.at(gx, idx, g.reshape(-1))
        return gx.reshape(x.shape)

    return _unary(x, out, backward_fn)


# ---------------------------------------------------------------------------
# convolution

def _pair(v, name):
    if isinstance(v, (tuple, list)):
        a, b = int(v[0]), int(v[1])
    else:
        a = b = int(v)
    if name == "stride" and (a < 1 or b < 1):
        raise ConfigError(f"stride must be positive; got {v}")
    if name == "padding" and (a < 0 or b < 0):
        raise ConfigError(f"padding must be non-negative; got {v}")
    return a, b


def _patches_view(xp, kh, kw, sh, sw, ho, wo):
    n, c = xp.shape[:2]
    sn, sc, srow, scol = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, kh, kw, ho, wo),
        strides=(sn, sc, srow, scol, sh * srow, sw * scol),
        writeable=False,
    )


def _col2im(grad_patches, xp_shape, sh, sw):
    n, c, hp, wp = xp_shape
    _, _, kh, kw, ho, wo = grad_patches.shape
    gxp = np.zeros(xp_shape)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += grad_patches[:, :, i, j]
    return gxp


def conv2d(x: Tensor, weight: Tensor, bias=None, stride=1, padding=0, groups: int = 1) -> Tensor:
    """2-D cross-correlation over [N,C,H,W] with weight [C_out, C_in/groups, kh, kw].

    stride/padding may be an int or an (h, w) pair. bias, when given, is a
    [1, C_out, 1, 1] tensor. Output extents follow standard convolution
    arithmetic and must be positive. Differentiable w.r.t. input, weight,
    and bias.
    """
    sh, sw = _pair(stride, "stride")
    ph, pw = _pair(padding, "padding")
    n, c, h, w = x.shape
    c_out, c_in_g, kh, kw = weight.shape
    if groups < 1 or c % groups or c_out % groups:
        raise ShapeError(f"groups={groups} must divide input channels {c} and output channels {c_out}")
    if c_in_g * groups != c:
        raise ShapeError(
            f"weight expects {c_in_g * groups} input channels (C_in/groups={c_in_g}, groups={groups}), input has {c}")
    if bias is not None and bias.shape != (1, c_out, 1, 1):
        raise ShapeError(f"bias must have shape (1, {c_out}, 1, 1); got {bias.shape}")

    hp, wp = h + 2 * ph, w + 2 * pw
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    if ho < 1 or wo < 1:
        raise ConfigError(
            f"non-positive output extent: input {h}x{w}, kernel {kh}x{kw}, stride {(sh, sw)}, padding {(ph, pw)}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    patches = _patches_view(xp, kh, kw, sh, sw, ho, wo)

    if groups == 1:
        ckk = c * kh * kw
        cols = patches.reshape(n, ckk, ho * wo)
        wmat = weight.data.reshape(c_out, ckk)
        out = np.matmul(wmat, cols).reshape(n, c_out, ho, wo)
    else:
        cg, cog = c // groups, c_out // groups
        p7 = patches.reshape(n, groups, cg, kh, kw, ho, wo)
        w5 = weight.data.reshape(groups, cog, cg, kh, kw)
        out = np.einsum("ngcijhw,gocij->ngohw", p7, w5, optimize=True).reshape(n, c_out, ho, wo)

    if bias is not None:
        out = out + bias.data

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward_fn(g):
        go = np.ascontiguousarray(g)
        if groups == 1:
            gflat = go.reshape(n, c_out, ho * wo)
            gw = np.einsum("bon,bkn->ok", gflat, cols, optimize=True).reshape(weight.shape)
            gcols = np.matmul(wmat.T, gflat)
            gpatches = gcols.reshape(n, c, kh, kw, ho, wo)
        else:
            g6 = go.reshape(n, groups, cog, ho, wo)
            gw = np.einsum("ngohw,ngcijhw->gocij", g6, p7, optimize=True).reshape(weight.shape)
            gpatches = np.einsum("ngohw,gocij->ngcijhw", g6, w5, optimize=True
                                 ).reshape(n, c, kh, kw, ho, wo)
        gxp = _col2im(gpatches, xp.shape, sh, sw)
        gx = gxp[:, :, ph:ph + h, pw:pw + w] if (ph or pw) else gxp
        gx = np.ascontiguousarray(gx)
        if bias is None:
            return gx, gw
        return gx, gw, go.sum(axis=(0, 2, 3)).reshape(1, c_out, 1, 1)

    return _op_output(out, parents, backward_fn)
