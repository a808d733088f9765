"""Minimal reverse-mode autodiff over float32 numpy arrays.

Values are stored as float32; reductions accumulate in float64 before casting
back. Each result tensor records its parents and a closure producing parent
gradients, and `backward` walks the graph in reverse topological order.
Gradients accumulate into `.grad` of leaf tensors only; call `zero_grads`
between optimizer steps.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (inference / FD probes)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_f64")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float32)
        self.grad = None
        self.requires_grad = bool(requires_grad) and _GRAD_ENABLED
        self._parents = ()
        self._backward = None
        self._f64 = None

    @classmethod
    def _wrap(cls, data, parents, backward):
        """Internal: result node. `backward(g)` returns per-parent gradients."""
        out = object.__new__(cls)
        out.data = data
        out.grad = None
        out._f64 = None
        needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        out._parents = tuple(parents) if needs else ()
        out._backward = backward if needs else None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        # scalar reductions keep a float64 shadow so finite differences of
        # loss values are not limited by the float32 cast
        if self._f64 is not None:
            return self._f64
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def is_leaf(self) -> bool:
        return not self._parents

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"

    # -- shape ops as methods -------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce_max(self, axis, keepdims)

    def backward(self):
        backward(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return np.ascontiguousarray(g.reshape(shape), dtype=np.float32)


def _f32(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float32)


def _shadow_binary(out: Tensor, a: Tensor, b: Tensor, op) -> Tensor:
    """Propagate the float64 scalar shadow through scalar arithmetic."""
    if out.size == 1 and a.size == 1 and b.size == 1:
        out._f64 = op(a.item(), b.item())
    return out


def _shadow_unary(out: Tensor, a: Tensor, op) -> Tensor:
    if out.size == 1 and a.size == 1:
        out._f64 = op(a.item())
    return out


# -- elementwise ---------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data
    res = Tensor._wrap(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))
    return _shadow_binary(res, a, b, lambda x, y: x + y)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data
    res = Tensor._wrap(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))
    return _shadow_binary(res, a, b, lambda x, y: x - y)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data
    res = Tensor._wrap(
        out, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape))
    )
    return _shadow_binary(res, a, b, lambda x, y: x * y)


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data / b.data
    def back(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )
    res = Tensor._wrap(out, (a, b), back)
    # numpy semantics for the scalar shadow too: x/0 -> inf, not an exception
    return _shadow_binary(res, a, b, lambda x, y: float(np.float64(x) / np.float64(y)))


def neg(a: Tensor) -> Tensor:
    res = Tensor._wrap(-a.data, (a,), lambda g: (-g,))
    return _shadow_unary(res, a, lambda x: -x)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    res = Tensor._wrap(_f32(a.data * s), (a,), lambda g: (_f32(g * s),))
    return _shadow_unary(res, a, lambda x: x * s)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    return Tensor._wrap(out, (a,), lambda g: (g * (a.data > 0),))


_GELU_C = np.float32(np.sqrt(2.0 / np.pi))
_GELU_A = np.float32(0.044715)


def gelu(a: Tensor) -> Tensor:
    # tanh form: 0.5*x*(1 + tanh(c*(x + 0.044715*x^3)))
    x = a.data
    inner = _GELU_C * (x + _GELU_A * x * x * x)
    t = np.tanh(inner)
    out = _f32(0.5 * x * (1.0 + t))
    def back(g):
        dt = (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
        return (_f32(g * (0.5 * (1.0 + t) + 0.5 * x * dt)),)
    return Tensor._wrap(out, (a,), back)


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return Tensor._wrap(t, (a,), lambda g: (_f32(g * (1.0 - t * t)),))


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return Tensor._wrap(e, (a,), lambda g: (g * e,))


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)
    return Tensor._wrap(out, (a,), lambda g: (g / a.data,))


def absolute(a: Tensor) -> Tensor:
    # subgradient 0 at the origin
    return Tensor._wrap(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def sqrt(a: Tensor) -> Tensor:
    r = np.sqrt(a.data)
    res = Tensor._wrap(r, (a,), lambda g: (_f32(g * 0.5 / r),))
    return _shadow_unary(res, a, np.sqrt)


def sin(a: Tensor) -> Tensor:
    return Tensor._wrap(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


# -- matmul ---------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must have ndim >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data
    def back(g):
        da = g @ np.swapaxes(b.data, -1, -2)
        db = np.swapaxes(a.data, -1, -2) @ g
        return (_unbroadcast(da, a.shape), _unbroadcast(db, b.shape))
    return Tensor._wrap(out, (a, b), back)


# -- reductions (float64 accumulation) ------------------------------------


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    axis = axis if axis >= 0 else axis + ndim
    if not 0 <= axis < ndim:
        raise ValueError(f"axis {axis} out of range for ndim {ndim}")
    return axis


def reduce_sum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axis = _norm_axis(axis, a.ndim)
    acc = np.sum(a.data, axis=axis, keepdims=keepdims, dtype=np.float64)
    out = _f32(acc)
    def back(g):
        if axis is None:
            return (np.broadcast_to(_f32(g), a.shape).copy(),)
        ge = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(ge, a.shape).astype(np.float32),)
    res = Tensor._wrap(out, (a,), back)
    if res.size == 1:
        res._f64 = float(np.asarray(acc).reshape(()))
    return res


def reduce_mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axis = _norm_axis(axis, a.ndim)
    n = a.size if axis is None else a.shape[axis]
    acc = np.mean(a.data, axis=axis, keepdims=keepdims, dtype=np.float64)
    out = _f32(acc)
    def back(g):
        if axis is None:
            return (np.broadcast_to(_f32(g / n), a.shape).copy(),)
        ge = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(_f32(ge / n), a.shape).astype(np.float32),)
    res = Tensor._wrap(out, (a,), back)
    if res.size == 1:
        res._f64 = float(np.asarray(acc).reshape(()))
    return res


def reduce_max(a: Tensor, axis=None, keepdims=False) -> Tensor:
    """Max reduction; backward routes to the first argmax (lowest flat index)."""
    axis = _norm_axis(axis, a.ndim)
    out = np.max(a.data, axis=axis, keepdims=keepdims)
    def back(g):
        da = np.zeros_like(a.data)
        if axis is None:
            da.reshape(-1)[int(np.argmax(a.data))] = float(np.asarray(g).reshape(()))
        else:
            idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
            ge = g if keepdims else np.expand_dims(g, axis)
            np.put_along_axis(da, idx, np.asarray(ge, dtype=np.float32), axis)
        return (da,)
    return Tensor._wrap(out, (a,), back)


# -- normalization / attention helpers -------------------------------------


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if d == 0:
        raise ValueError("layer_norm over an empty axis")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError("gain/bias must match the last axis")
    mu = x.data.mean(axis=-1, keepdims=True, dtype=np.float64).astype(np.float32)
    var = np.square(x.data - mu).mean(axis=-1, keepdims=True, dtype=np.float64).astype(np.float32)
    inv = 1.0 / np.sqrt(var + np.float32(eps))
    xhat = (x.data - mu) * inv
    out = _f32(xhat * gain.data + bias.data)
    def back(g):
        lead = tuple(range(g.ndim - 1))
        dgain = np.sum(g * xhat, axis=lead, dtype=np.float64).astype(np.float32)
        dbias = np.sum(g, axis=lead, dtype=np.float64).astype(np.float32)
        gd = g * gain.data
        m1 = gd.mean(axis=-1, keepdims=True)
        m2 = (gd * xhat).mean(axis=-1, keepdims=True)
        dx = _f32(inv * (gd - m1 - xhat * m2))
        return (dx, dgain, dbias)
    return Tensor._wrap(out, (x, gain, bias), back)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _norm_axis(axis, x.ndim)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = _f32(e / np.sum(e, axis=axis, keepdims=True))
    def back(g):
        dot = np.sum(g * s, axis=axis, keepdims=True)
        return (_f32(s * (g - dot)),)
    return Tensor._wrap(s, (x,), back)


# -- shape manipulation -----------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)
    return Tensor._wrap(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = np.argsort(axes)
    out = np.transpose(a.data, axes)
    return Tensor._wrap(out, (a,), lambda g: (np.ascontiguousarray(np.transpose(g, inv)),))


def concat(tensors, axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    axis = _norm_axis(axis, tensors[0].ndim)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    def back(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, bounds, axis=axis))
    return Tensor._wrap(out, tuple(tensors), back)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    axis = _norm_axis(axis, a.ndim)
    if start < 0 or start + length > a.shape[axis]:
        raise ValueError(f"narrow [{start}, {start + length}) out of bounds on axis {axis}")
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    out = np.ascontiguousarray(a.data[sl])
    def back(g):
        da = np.zeros_like(a.data)
        da[sl] = g
        return (da,)
    return Tensor._wrap(out, (a,), back)


def split(a: Tensor, sizes, axis: int):
    """Partition an axis into consecutive chunks of the given sizes."""
    if sum(sizes) != a.shape[_norm_axis(axis, a.ndim)]:
        raise ValueError("split sizes must sum to the axis length")
    pieces, start = [], 0
    for s in sizes:
        pieces.append(narrow(a, axis, start, s))
        start += s
    return pieces


def _scatter_rows(idx_flat: np.ndarray, values: np.ndarray, length: int) -> np.ndarray:
    """Accumulate values[..., k] into out[..., idx_flat[k]] row by row."""
    lead = values.shape[:-1]
    rows = values.reshape(-1, values.shape[-1])
    out = np.empty((rows.shape[0], length), dtype=np.float32)
    for i in range(rows.shape[0]):
        out[i] = np.bincount(idx_flat, weights=rows[i].astype(np.float64), minlength=length)
    return out.reshape(lead + (length,))


def take(a: Tensor, idx: np.ndarray) -> Tensor:
    """Gather along the last axis: out[..., *idx.shape] = a[..., idx]."""
    idx = np.asarray(idx)
    out = np.ascontiguousarray(a.data[..., idx])
    length = a.shape[-1]
    idx_flat = idx.reshape(-1)
    def back(g):
        flat = g.reshape(g.shape[: a.ndim - 1] + (idx.size,))
        return (_scatter_rows(idx_flat, flat, length),)
    return Tensor._wrap(out, (a,), back)


def overlap_add(frames: Tensor, hop: int, out_len: int) -> Tensor:
    """Sum frames [..., T, n] into a signal [..., out_len] at stride `hop`."""
    t, n = frames.shape[-2], frames.shape[-1]
    if out_len < (t - 1) * hop + n:
        raise ValueError("out_len too short for the framing")
    idx = (np.arange(t)[:, None] * hop + np.arange(n)[None, :]).reshape(-1)
    flat = frames.data.reshape(frames.shape[:-2] + (t * n,))
    out = _scatter_rows(idx, flat, out_len)
    def back(g):
        return (np.ascontiguousarray(g[..., idx].reshape(frames.shape)),)
    return Tensor._wrap(out, (frames,), back)


# -- FFT bridge (complex stored as a trailing re/im axis) -------------------


def rfft_pack(a: Tensor) -> Tensor:
    """Real FFT of the last axis -> [..., n//2 + 1, 2] (re, im channels)."""
    n = a.shape[-1]
    if n % 2:
        raise ValueError("rfft_pack requires an even length")
    spec = np.fft.rfft(a.data.astype(np.float64), axis=-1)
    out = np.stack([spec.real, spec.imag], axis=-1).astype(np.float32)
    def back(g):
        gc = g[..., 0].astype(np.float64) + 1j * g[..., 1].astype(np.float64)
        # adjoint: halve the doubly-represented interior bins, keep DC/Nyquist;
        # imag parts at DC/Nyquist are structurally zero in the forward map
        gc[..., 1:-1] *= 0.5
        gc[..., 0] = gc[..., 0].real
        gc[..., -1] = gc[..., -1].real
        return ((n * np.fft.irfft(gc, n=n, axis=-1)).astype(np.float32),)
    return Tensor._wrap(out, (a,), back)


def irfft_pack(a: Tensor, n: int) -> Tensor:
    """Inverse real FFT of [..., F, 2] -> [..., n]; F must equal n//2 + 1."""
    f = a.shape[-2]
    if a.shape[-1] != 2 or f != n // 2 + 1 or n % 2:
        raise ValueError("irfft_pack expects [..., n//2+1, 2] with even n")
    spec = a.data[..., 0].astype(np.float64) + 1j * a.data[..., 1].astype(np.float64)
    out = np.fft.irfft(spec, n=n, axis=-1).astype(np.float32)
    def back(g):
        r = np.fft.rfft(g.astype(np.float64), axis=-1)
        dh = r * (2.0 / n)
        dh[..., 0] = r[..., 0] / n
        dh[..., -1] = r[..., -1] / n
        dg = np.stack([dh.real, dh.imag], axis=-1).astype(np.float32)
        dg[..., 0, 1] = 0.0   # imag at DC/Nyquist never reaches the output
        dg[..., -1, 1] = 0.0
        return (dg,)
    return Tensor._wrap(out, (a,), back)


def complex_abs(a: Tensor) -> Tensor:
    """Magnitude of a trailing (re, im) pair; guarded backward at zero."""
    if a.shape[-1] != 2:
        raise ValueError("complex_abs expects a trailing re/im axis of length 2")
    re = a.data[..., 0].astype(np.float64)
    im = a.data[..., 1].astype(np.float64)
    mag = np.hypot(re, im)
    out = mag.astype(np.float32)
    def back(g):
        denom = np.maximum(mag, 1e-12)
        gg = g.astype(np.float64) / denom
        return (np.stack([gg * re, gg * im], axis=-1).astype(np.float32),)
    return Tensor._wrap(out, (a,), back)


# -- backward pass ----------------------------------------------------------


def _topo_order(root: Tensor):
    order, seen, stack = [], set(), [(root, False)]
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
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into `.grad` of every reachable leaf."""
    if loss.size != 1:
        raise ValueError("backward requires a scalar loss")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    buffers = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = buffers.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf():
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in buffers:
                buffers[key] = buffers[key] + pg
            else:
                buffers[key] = pg


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


# -- finite-difference verification -----------------------------------------


@dataclass
class GradcheckReport:
    max_rel_err: float
    tol: float
    n_checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def gradcheck(f, x: Tensor, h: float = 1e-3, tol: float = 1e-3, rng=None,
              max_entries: int | None = None, floor: float = 1.0,
              coords=None) -> GradcheckReport:
    """Compare analytic gradients of scalar-valued `f` against central differences.

    The relative error per coordinate is |analytic - numeric| divided by
    max(|analytic|, |numeric|, floor); `floor` sets the scale below which the
    comparison is effectively absolute. Set `coords` (flat indices) to pin the
    probed entries, or `max_entries` to subsample them.
    """
    x.grad = None
    loss = f(x)
    backward(loss)
    analytic = np.zeros(x.size, dtype=np.float64) if x.grad is None else x.grad.reshape(-1).astype(np.float64)

    if coords is None:
        coords = np.arange(x.size)
        if max_entries is not None and x.size > max_entries:
            rng = rng or np.random.default_rng(0)
            coords = rng.choice(x.size, size=max_entries, replace=False)
    flat = x.data.reshape(-1)
    max_err = 0.0
    with no_grad():
        for i in coords:
            orig = flat[i]
            hi = np.float32(orig + h)
            lo = np.float32(orig - h)
            flat[i] = hi
            fp = f(x).item()
            flat[i] = lo
            fm = f(x).item()
            flat[i] = orig
            numeric = (fp - fm) / (float(hi) - float(lo))
            err = abs(analytic[i] - numeric) / max(abs(analytic[i]), abs(numeric), floor)
            max_err = max(max_err, err)
    return GradcheckReport(max_rel_err=float(max_err), tol=tol, n_checked=len(coords))
