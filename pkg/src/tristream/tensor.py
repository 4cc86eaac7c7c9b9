"""Dense tensors with reverse-mode differentiation on a linear tape.

Every differentiable operation appends one node to the active ``Tape``.
Because nodes are stored in execution order, walking the tape backwards
visits each node after all of its consumers, which is exactly the order
gradient accumulation needs. A tape is confined to a single thread.

Layout convention: feature maps are channels-last, ``[H, W, C]`` or
``[N, H, W, C]``; vectors batches are ``[N, D]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, InsufficientDataError, NonFiniteError, ShapeError

DEFAULT_DTYPE = np.float64

# Cheap NaN/Inf guard after every op; flip off only for throwaway speed runs.
FINITE_CHECKS = True

_ACTIVE_TAPE: "Tape | None" = None


def _check_finite(arr: np.ndarray, where: str) -> None:
    if FINITE_CHECKS and not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by {where}")


class Tensor:
    """N-dimensional array, optionally tracked for gradients.

    ``data`` is treated as immutable once the tensor has been consumed by an
    op; the only sanctioned mutation is gradient accumulation into ``grad``
    and parameter updates between steps.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        _check_finite(g, "backward")
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class TapeNode:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward_fn: "callable"


@dataclass
class Tape:
    """Ordered record of executed differentiable operations."""

    nodes: list[TapeNode] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        self._prev = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._prev


def active_tape() -> Tape | None:
    return _ACTIVE_TAPE


def _record(out_data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn, name: str) -> Tensor:
    _check_finite(out_data, name)
    needs = _ACTIVE_TAPE is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs, dtype=out_data.dtype)
    if needs:
        _ACTIVE_TAPE.nodes.append(TapeNode(out, inputs, backward_fn))
    return out


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tracked tensor on the tape."""
    tape = tape if tape is not None else _ACTIVE_TAPE
    if tape is None:
        raise ContractError("backward called with no tape")
    if loss.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        g_out = node.out.grad
        if g_out is None:
            continue
        grads = node.backward_fn(g_out)
        for t, g in zip(node.inputs, grads):
            if g is None or not t.requires_grad:
                continue
            t.accumulate_grad(g)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` over the axes that were broadcast to produce it."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(out, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(out, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _record(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        return (-g,)

    return _record(-a.data, (a,), bw, "neg")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def bw(g):
        return (g * mask,)

    return _record(np.maximum(a.data, 0.0), (a,), bw, "relu")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def bw(g):
        return (g * out,)

    return _record(out, (a,), bw, "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    out = np.log(a.data)

    def bw(g):
        return (g / a.data,)

    return _record(out, (a,), bw, "log")


def clamp_min(a, floor: float) -> Tensor:
    a = as_tensor(a)
    mask = a.data > floor

    def bw(g):
        return (g * mask,)

    return _record(np.maximum(a.data, floor), (a,), bw, "clamp_min")


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _record(out, (a, b), bw, "matmul")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("transpose expects a 2-D tensor")

    def bw(g):
        return (g.T,)

    return _record(a.data.T.copy(), (a,), bw, "transpose")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    orig = a.shape

    def bw(g):
        return (g.reshape(orig),)

    return _record(a.data.reshape(shape), (a,), bw, "reshape")


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, tuple(tensors), bw, "concat")


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Slice ``length`` entries from ``start`` along ``axis``."""
    a = as_tensor(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def bw(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _record(a.data[idx].copy(), (a,), bw, "narrow")


def gather_last(a, indices) -> Tensor:
    """Pick one entry per row from the last axis: out[n] = a[n, indices[n]]."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("gather_last expects a 2-D tensor")
    idx = np.asarray(indices, dtype=np.int64)
    rows = np.arange(a.shape[0])
    out = a.data[rows, idx]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, (rows, idx), g)
        return (full,)

    return _record(out, (a,), bw, "gather_last")


# ---------------------------------------------------------------------------
# reductions


def _norm_axes(axes, ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(ax % ndim for ax in axes)


def tsum(a, axes=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes_n = _norm_axes(axes, a.ndim)
    out = a.data.sum(axis=axes_n, keepdims=keepdims)

    def bw(g):
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axes_n)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _record(out, (a,), bw, "sum")


def tmean(a, axes=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes_n = _norm_axes(axes, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes_n]))
    out = a.data.mean(axis=axes_n, keepdims=keepdims)

    def bw(g):
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axes_n)
        return (np.broadcast_to(gg, a.shape).copy() / count,)

    return _record(out, (a,), bw, "mean")


def reduce_max(a, axes) -> Tensor:
    """Max over ``axes``; gradient routes to the first (lowest-index) argmax."""
    a = as_tensor(a)
    axes_n = sorted(_norm_axes(axes, a.ndim))
    kept = [i for i in range(a.ndim) if i not in axes_n]
    moved = np.moveaxis(a.data, axes_n, range(len(kept), a.ndim))
    outer = moved.shape[: len(kept)]
    flat = moved.reshape(outer + (-1,))
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, idx[..., None], g[..., None], axis=-1)
        gmoved = gflat.reshape(moved.shape)
        return (np.moveaxis(gmoved, range(len(kept), a.ndim), axes_n),)

    return _record(out, (a,), bw, "reduce_max")


def softmax(a, axis: int = -1) -> Tensor:
    """Stable softmax along ``axis`` (max-subtraction before exponentiation)."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return ((g - inner) * out,)

    return _record(out, (a,), bw, "softmax")


def logsumexp(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    out = np.log(np.exp(a.data - m).sum(axis=axis, keepdims=True)) + m
    out = out.squeeze(axis)

    def bw(g):
        soft = np.exp(a.data - np.expand_dims(out, axis))
        return (np.expand_dims(g, axis) * soft,)

    return _record(out, (a,), bw, "logsumexp")


def log1p_sum_exp(a, mask=None, axis: int = -1) -> Tensor:
    """Stable ``log(1 + sum_j exp(a_j))`` over masked entries of ``axis``.

    Entries where ``mask`` is False are excluded from the sum; an all-False
    row yields exactly 0 (= log 1). The implicit ``+1`` term makes the result
    safe for arbitrarily negative inputs.
    """
    a = as_tensor(a)
    if mask is None:
        masked = a.data
        keep = np.ones_like(a.data, dtype=bool)
    else:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
        masked = np.where(keep, a.data, -np.inf)
    with np.errstate(invalid="ignore"):
        m = masked.max(axis=axis, keepdims=True)
    m = np.maximum(m, 0.0)  # account for the implicit exp(0) term
    terms = np.where(keep, np.exp(np.where(keep, a.data, 0.0) - m), 0.0)
    out = (np.log(np.exp(-m) + terms.sum(axis=axis, keepdims=True)) + m).squeeze(axis)

    def bw(g):
        z = np.where(keep, a.data - np.expand_dims(out, axis), -np.inf)
        return (np.expand_dims(g, axis) * np.exp(z),)

    return _record(out, (a,), bw, "log1p_sum_exp")


# ---------------------------------------------------------------------------
# convolution


def conv2d(x, kernel, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution, channels-last.

    ``x`` is ``[H, W, Cin]`` or ``[N, H, W, Cin]``; ``kernel`` is
    ``[kh, kw, Cin, Cout]`` with odd kh/kw. Output spatial dims are
    ``floor((H + 2*padding - kh)/stride) + 1`` and likewise for W.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    single = x.ndim == 3
    if single:
        xv = x.data[None]
    elif x.ndim == 4:
        xv = x.data
    else:
        raise ShapeError(f"conv2d input must be 3-D or 4-D, got {x.shape}")
    if kernel.ndim != 4:
        raise ShapeError(f"conv2d kernel must be 4-D, got {kernel.shape}")
    kh, kw, cin, cout = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ContractError(f"kernel dims must be odd, got {kh}x{kw}")
    if stride < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ContractError(f"padding must be >= 0, got {padding}")
    n, h, w, cx = xv.shape
    if cx != cin:
        raise ShapeError(f"input channels {cx} != kernel channels {cin}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {h}x{w}")

    if padding:
        xp = np.pad(xv, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    else:
        xp = xv
    sn, sh, sw, sc = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, ho, wo, kh, kw, cin),
        strides=(sn, sh * stride, sw * stride, sh, sw, sc),
        writeable=False,
    )
    cols = np.ascontiguousarray(view).reshape(n * ho * wo, kh * kw * cin)
    wmat = kernel.data.reshape(kh * kw * cin, cout)
    out = (cols @ wmat).reshape(n, ho, wo, cout)
    if single:
        out = out[0]

    def bw(g):
        gm = g.reshape(n * ho * wo, cout)
        gk = (cols.T @ gm).reshape(kernel.shape)
        gcols = (gm @ wmat.T).reshape(n, ho, wo, kh, kw, cin)
        gxp = np.zeros_like(xp)
        for a_ in range(kh):
            for b_ in range(kw):
                gxp[:, a_ : a_ + stride * ho : stride, b_ : b_ + stride * wo : stride, :] += gcols[
                    :, :, :, a_, b_, :
                ]
        gx = gxp[:, padding : padding + h, padding : padding + w, :] if padding else gxp
        return (gx[0] if single else gx), gk

    return _record(out, (x, kernel), bw, "conv2d")


# ---------------------------------------------------------------------------
# batch normalization


@dataclass
class BNState:
    """Running statistics for one batch-norm layer."""

    mean: np.ndarray
    var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    @classmethod
    def create(cls, dim: int, eps: float = 1e-5, momentum: float = 0.1) -> "BNState":
        return cls(np.zeros(dim, dtype=DEFAULT_DTYPE), np.ones(dim, dtype=DEFAULT_DTYPE), eps, momentum)


def batchnorm(x, gamma, beta, state: BNState, training: bool) -> Tensor:
    """Normalize ``[N, D]`` per feature; affine with gamma/beta.

    Train mode uses (biased) batch statistics and updates the running
    stats in-place (running variance gets the unbiased estimate). Eval
    mode normalizes with the stored running statistics.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 2:
        raise ShapeError(f"batchnorm expects [N, D], got {x.shape}")
    n = x.shape[0]
    if training:
        if n < 2:
            raise InsufficientDataError(f"batchnorm train mode needs N >= 2, got {n}")
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        m = state.momentum
        state.mean = (1.0 - m) * state.mean + m * mu
        state.var = (1.0 - m) * state.var + m * var * n / (n - 1)
    else:
        mu = state.mean
        var = state.var
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mu) * inv_std
    out = gamma.data * xhat + beta.data

    def bw(g):
        gbeta = g.sum(axis=0)
        ggamma = (g * xhat).sum(axis=0)
        if training:
            gx = gamma.data * inv_std * (g - g.mean(axis=0) - xhat * (g * xhat).mean(axis=0))
        else:
            gx = g * gamma.data * inv_std
        return gx, ggamma, gbeta

    return _record(out, (x, gamma, beta), bw, "batchnorm")


# ---------------------------------------------------------------------------
# part-weighted spatial pooling


def weighted_pool(weights, features) -> Tensor:
    """Average ``features`` over space, weighted per part channel.

    ``weights``: ``[N, h, w, P]`` soft assignments, ``features``:
    ``[N, h, w, C]``. Returns ``[N, P, C]`` where each entry is
    ``(1/(h*w)) * sum_ij weights[n,i,j,p] * features[n,i,j,c]``.
    """
    weights, features = as_tensor(weights), as_tensor(features)
    if weights.ndim != 4 or features.ndim != 4:
        raise ShapeError("weighted_pool expects [N,h,w,P] weights and [N,h,w,C] features")
    if weights.shape[:3] != features.shape[:3]:
        raise ShapeError(f"spatial dims differ: {weights.shape} vs {features.shape}")
    n, h, w, _ = weights.shape
    npix = h * w
    out = np.einsum("nijp,nijc->npc", weights.data, features.data) / npix

    def bw(g):
        gw = np.einsum("npc,nijc->nijp", g, features.data) / npix
        gf = np.einsum("npc,nijp->nijc", g, weights.data) / npix
        return gw, gf

    return _record(out, (weights, features), bw, "weighted_pool")


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(DEFAULT_DTYPE)
