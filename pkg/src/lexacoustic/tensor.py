"""Dense tensors with a reverse-mode gradient tape.

Every primitive here records itself on the active :class:`Tape` (if any)
together with a closure that maps the output gradient to input gradients.
Backward replays the tape in exact reverse order.

Layout conventions used by the model code:

* a batch of grids is ``(B, rows, T)`` (rows = embedding dim or MFCC count)
* time is always the last axis
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Tape", "ShapeError", "as_tensor", "add", "sub", "mul", "linear",
    "relu", "sigmoid", "tanh", "concat", "stack", "reshape", "take_rows",
    "embedding_grid", "conv_time", "conv_time_batch", "max_pool_time",
    "max_pool_window", "softmax", "cross_entropy", "softmax_cross_entropy",
    "dropout", "sum_", "mean", "lstm_step", "lstm_step_fused", "fuse_lstm_gates", "gradient_errors", "grad_check",
]


class ShapeError(ValueError):
    pass


class Tensor:
    """Immutable array value. ``requires_grad`` marks leaves and tape outputs."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        arr = arr.view()
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return np.array(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __getitem__(self, idx):
        return _index(self, idx)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)


_active: list["Tape"] = []


class Tape:
    """Ordered record of primitive ops; use as a context manager.

    >>> x = Tensor(3.0, requires_grad=True)
    >>> with Tape() as tape:
    ...     y = mul(x, x)
    >>> float(tape.gradient(y, [x])[0])
    6.0
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self):
        _active.append(self)
        return self

    def __exit__(self, *exc):
        _active.remove(self)
        return False

    def gradient(self, loss: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of scalar ``loss`` w.r.t. each tensor in ``wrt``.

        Tensors that do not influence ``loss`` get exact zeros.
        """
        if loss.data.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, backward in reversed(self.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return [grads.get(id(t), np.zeros_like(t.data)) for t in wrt]


def _record(data: np.ndarray, inputs: tuple[Tensor, ...], backward: Callable) -> Tensor:
    needs = bool(_active) and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        _active[-1].records.append((out, inputs, backward))
    return out


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or np.float64))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    return a, b


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _record(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape),
                              _unbroadcast(g * a.data, b.shape)))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _record(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    z = x.data
    e = np.exp(-np.abs(z))
    y = np.where(z >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype)
    return _record(y, (x,), lambda g: (g * y * (1 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _record(y, (x,), lambda g: (g * (1 - y * y),))


# ---------------------------------------------------------------- structural

def reshape(x: Tensor, shape) -> Tensor:
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def _basic(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(k, (int, slice, type(Ellipsis))) for k in items)


def _index(x: Tensor, idx) -> Tensor:
    basic = _basic(idx)

    def backward(g):
        gx = np.zeros_like(x.data)
        if basic:
            gx[idx] = g
        else:
            np.add.at(gx, idx, g)
        return (gx,)
    return _record(x.data[idx], (x,), backward)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = list(xs)
    data = np.concatenate([x.data for x in xs], axis=axis)
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))
    return _record(data, tuple(xs), backward)


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = list(xs)
    data = np.stack([x.data for x in xs], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(xs)))
    return _record(data, tuple(xs), backward)


def take_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """``x[idx]`` along axis 0 for an integer index array of any shape."""
    idx = np.asarray(idx, dtype=np.int64)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)
    return _record(x.data[idx], (x,), backward)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)
    return _record(np.asarray(data, dtype=x.dtype), (x,), backward)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return mul(sum_(x, axis=axis), np.asarray(1.0 / n, dtype=x.dtype))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` for ``x`` of shape (..., in) and weight (out, in)."""
    if x.shape[-1] != weight.shape[-1]:
        raise ShapeError(f"linear: input dim {x.shape[-1]} vs weight {weight.shape}")
    y = x.data @ weight.data.T
    if bias is not None:
        y = y + bias.data
    x2 = x.data.reshape(-1, x.shape[-1])

    def backward(g):
        g2 = g.reshape(-1, weight.shape[0])
        gx = (g2 @ weight.data).reshape(x.shape) if x.requires_grad else None
        gw = g2.T @ x2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)
    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _record(y, inputs, backward)


def embedding_grid(table: Tensor, ids: np.ndarray, pad_id: int = 0) -> Tensor:
    """Look up ``ids`` (N, T) in ``table`` (V, d) and return grids (N, d, T).

    The gradient row of ``pad_id`` is always zero so the padding vector
    never moves.
    """
    ids = np.asarray(ids, dtype=np.int64)
    data = table.data[ids].transpose(0, 2, 1)

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g.transpose(0, 2, 1))
        gt[pad_id] = 0
        return (gt,)
    return _record(data, (table,), backward)


# ---------------------------------------------------------------- convolution

def _offset(width: int) -> int:
    # taps cover y - offset .. y - offset + width - 1
    return (width - 1) // 2


def conv_time_batch(x: Tensor, filters: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-length convolution over the last axis.

    x: (B, d, T); filters: (K, d, w); bias: (K,). Returns (B, K, T), with
    ``out[b, k, y] = sum_{i,j} x[b, i, y + j - off] * filters[k, i, j] + bias[k]``
    and zeros outside ``[0, T)``.
    """
    if x.data.ndim != 3 or filters.data.ndim != 3:
        raise ShapeError(f"conv_time_batch: expected (B,d,T) and (K,d,w), got {x.shape} and {filters.shape}")
    B, d, T = x.shape
    K, fd, w = filters.shape
    if fd != d:
        raise ShapeError(f"filter height {fd} does not match input height {d}")
    if T < 1:
        raise ShapeError("conv_time_batch: empty time axis")
    off = _offset(w)
    padded = np.zeros((B, d, T + w - 1), dtype=x.dtype)
    padded[:, :, off:off + T] = x.data
    cols = np.lib.stride_tricks.sliding_window_view(padded, w, axis=2)  # (B, d, T, w)
    cols = cols.transpose(0, 2, 1, 3).reshape(B * T, d * w)
    fmat = filters.data.reshape(K, d * w)
    out = (cols @ fmat.T).reshape(B, T, K).transpose(0, 2, 1)
    if bias is not None:
        out = out + bias.data[None, :, None]

    def backward(g):
        g2 = g.transpose(0, 2, 1).reshape(B * T, K)
        gf = (g2.T @ cols).reshape(K, d, w) if filters.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ fmat).reshape(B, T, d, w)
            gpad = np.zeros_like(padded)
            for j in range(w):
                gpad[:, :, j:j + T] += gcols[:, :, :, j].transpose(0, 2, 1)
            gx = gpad[:, :, off:off + T]
        if bias is None:
            return gx, gf
        return gx, gf, g.sum(axis=(0, 2))
    inputs = (x, filters) if bias is None else (x, filters, bias)
    return _record(np.ascontiguousarray(out), inputs, backward)


def conv_time(grid: Tensor, filt: Tensor) -> Tensor:
    """Single grid (d, T) convolved with one filter (d, w); returns length-T vector."""
    grid, filt = as_tensor(grid), as_tensor(filt)
    if grid.data.ndim != 2 or filt.data.ndim != 2:
        raise ShapeError(f"conv_time: expected 2-D grid and filter, got {grid.shape} and {filt.shape}")
    if filt.shape[0] != grid.shape[0]:
        raise ShapeError(f"filter height {filt.shape[0]} does not match input height {grid.shape[0]}")
    out = conv_time_batch(reshape(grid, (1,) + grid.shape), reshape(filt, (1,) + filt.shape))
    return reshape(out, (grid.shape[1],))


# ---------------------------------------------------------------- pooling

def max_pool_time(x: Tensor, lengths: np.ndarray | None = None) -> Tensor:
    """Max over the last axis; positions ``>= lengths`` are excluded.

    Gradient goes to the first argmax on ties.
    """
    T = x.shape[-1]
    if T < 1:
        raise ShapeError("max_pool_time: empty input")
    data = x.data
    if lengths is not None:
        lengths = np.asarray(lengths)
        if np.any(lengths < 1):
            raise ShapeError("max_pool_time: every length must be >= 1")
        valid = np.arange(T) < lengths.reshape(lengths.shape + (1,) * (x.data.ndim - lengths.ndim))
        data = np.where(valid, data, -np.inf)
    arg = np.argmax(data, axis=-1)
    out = np.take_along_axis(x.data, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, arg[..., None], g[..., None], axis=-1)
        return (gx,)
    return _record(out, (x,), backward)


def max_pool_window(x: Tensor, window: tuple[int, int]) -> Tensor:
    """Non-overlapping max pooling on the last two axes (H, W).

    Output is ceil(H/ph) x ceil(W/pw); the last partial window pools what
    remains. Ties resolve to the first cell in row-major window order.
    """
    ph, pw = window
    if ph < 1 or pw < 1:
        raise ShapeError(f"max_pool_window: window must be positive, got {window}")
    *lead, H, W = x.shape
    oh, ow = -(-H // ph), -(-W // pw)
    padded = np.full(tuple(lead) + (oh * ph, ow * pw), -np.inf, dtype=x.dtype)
    padded[..., :H, :W] = x.data
    blocks = padded.reshape(tuple(lead) + (oh, ph, ow, pw))
    blocks = np.moveaxis(blocks, -3, -2).reshape(tuple(lead) + (oh, ow, ph * pw))
    arg = np.argmax(blocks, axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros(blocks.shape, dtype=x.dtype)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = np.moveaxis(gb.reshape(tuple(lead) + (oh, ow, ph, pw)), -2, -3)
        gb = gb.reshape(tuple(lead) + (oh * ph, ow * pw))
        return (gb[..., :H, :W],)
    return _record(np.ascontiguousarray(out), (x,), backward)


# ---------------------------------------------------------------- softmax / loss

def _softmax_np(z: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(z: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; entries where ``mask`` is False get probability 0."""
    z = as_tensor(z)
    y = _softmax_np(z.data, mask)

    def backward(g):
        return (y * (g - np.sum(g * y, axis=-1, keepdims=True)),)
    return _record(y, (z,), backward)


def cross_entropy(probs: Tensor, label: int) -> Tensor:
    """``-log probs[label]`` for a single distribution."""
    probs = as_tensor(probs)
    if not 0 <= label < probs.shape[-1]:
        raise IndexError(f"label {label} out of range for {probs.shape[-1]} classes")
    p = probs.data[label]
    with np.errstate(divide="ignore"):
        loss = -np.log(p)

    def backward(g):
        gp = np.zeros_like(probs.data)
        gp[label] = -g / p
        return (gp,)
    return _record(np.asarray(loss, dtype=probs.dtype), (probs,), backward)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of softmax(logits) (N, C) against integer labels (N,)."""
    labels = np.asarray(labels, dtype=np.int64)
    N, C = logits.shape
    if np.any((labels < 0) | (labels >= C)):
        raise IndexError(f"labels out of range for {C} classes")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(N), labels].mean()

    def backward(g):
        grad = np.exp(logp)
        grad[np.arange(N), labels] -= 1
        return (grad * (g / N),)
    return _record(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1 - rate)
    return _record(x.data * keep, (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------- LSTM

LSTM_GATES = ("i", "f", "o", "g")


def lstm_step(x: Tensor, h: Tensor, c: Tensor, params: dict[str, Tensor],
              prefix: str = "ctx.lstm") -> tuple[Tensor, Tensor]:
    """One LSTM cell step.

    ``params`` holds ``{prefix}.W{gate}`` of shape (H, D + H) and
    ``{prefix}.b{gate}`` of shape (H,) for gates i, f, o (sigmoid) and g (tanh).
    Works on single vectors or on batches (..., D).
    """
    return lstm_step_fused(x, h, c, *fuse_lstm_gates(params, prefix))


def fuse_lstm_gates(params: dict[str, Tensor], prefix: str = "ctx.lstm") -> tuple[Tensor, Tensor]:
    """Stack the per-gate weights into one (4H, D + H) matrix and (4H,) bias."""
    W = concat([params[f"{prefix}.W{g}"] for g in LSTM_GATES], axis=0)
    b = concat([params[f"{prefix}.b{g}"] for g in LSTM_GATES], axis=0)
    return W, b


def lstm_step_fused(x: Tensor, h: Tensor, c: Tensor, W: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    H = h.shape[-1]
    if W.shape != (4 * H, x.shape[-1] + H) or c.shape[-1] != H:
        raise ShapeError(f"lstm_step: x {x.shape}, h {h.shape}, c {c.shape} vs stacked weight {W.shape}")
    pre = linear(concat([x, h], axis=-1), W, b)
    i = sigmoid(pre[..., 0:H])
    f = sigmoid(pre[..., H:2 * H])
    o = sigmoid(pre[..., 2 * H:3 * H])
    g = tanh(pre[..., 3 * H:])
    c_new = add(mul(f, c), mul(i, g))
    h_new = mul(o, tanh(c_new))
    return h_new, c_new


# ---------------------------------------------------------------- gradient check

def gradient_errors(fn: Callable[[dict[str, Tensor]], Tensor], params: dict[str, np.ndarray],
                    eps: float = 1e-5, max_coords: int | None = None,
                    rng: np.random.Generator | None = None) -> dict[str, float]:
    """Per-parameter max relative error between tape gradients and central differences.

    Error for a coordinate is ``|g_ad - g_fd| / max(1, |g_ad|, |g_fd|)``.
    ``max_coords`` samples that many coordinates per parameter instead of all.
    """
    params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    leaves = {k: Tensor(v, requires_grad=True, name=k) for k, v in params.items()}
    with Tape() as tape:
        loss = fn(leaves)
    names = list(leaves)
    analytic = dict(zip(names, tape.gradient(loss, [leaves[k] for k in names])))

    def value(name, flat_idx, delta):
        arr = params[name].copy()
        arr.flat[flat_idx] += delta
        trial = {k: Tensor(arr if k == name else v) for k, v in params.items()}
        return float(fn(trial).data)

    rng = rng or np.random.default_rng(0)
    errors = {}
    for name in names:
        size = params[name].size
        coords: Iterable[int] = range(size)
        if max_coords is not None and size > max_coords:
            coords = rng.choice(size, size=max_coords, replace=False)
        worst = 0.0
        for k in coords:
            fd = (value(name, k, eps) - value(name, k, -eps)) / (2 * eps)
            ad = float(analytic[name].flat[k])
            worst = max(worst, abs(ad - fd) / max(1.0, abs(ad), abs(fd)))
        errors[name] = worst
    return errors


def grad_check(fn: Callable[[dict[str, Tensor]], Tensor], params: dict[str, np.ndarray],
               eps: float = 1e-5, max_coords: int | None = None) -> float:
    """Max relative gradient error over all parameters (see :func:`gradient_errors`)."""
    errs = gradient_errors(fn, params, eps=eps, max_coords=max_coords)
    return max(errs.values(), default=0.0)
