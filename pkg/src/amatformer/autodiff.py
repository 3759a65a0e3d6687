"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Operations record themselves on a Tape when at least one input carries one;
inputs without a tape are constants and contribute no gradient. backward()
replays the records once, in reverse, accumulating gradients by summation,
so the whole thing is an explicit Wengert list rather than a graph walk.

All floating-point work happens in the process-wide default dtype (float64
unless changed via set_default_dtype / default_dtype), which keeps tests in
double precision while training and benchmarks run in float32.
"""

import contextlib
import threading

import numpy as np

from .errors import DegenerateWidth, NonFiniteValue, NotScalar, ShapeMismatch

_STATE = threading.local()


def get_default_dtype():
    return getattr(_STATE, "dtype", np.float64)


def set_default_dtype(dtype):
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}")
    _STATE.dtype = dtype


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily switch the process default float dtype."""
    prev = get_default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


class MacCounter:
    """Running count of multiply-accumulate ops performed by matmul/linear."""

    def __init__(self):
        self.macs = 0

    @property
    def flops(self):
        # one MAC = one multiply + one add
        return 2 * self.macs


@contextlib.contextmanager
def count_macs():
    """Count matmul MACs executed inside the block (forward passes only)."""
    counter = MacCounter()
    prev = getattr(_STATE, "mac_counter", None)
    _STATE.mac_counter = counter
    try:
        yield counter
    finally:
        _STATE.mac_counter = prev


def _tally_macs(n):
    counter = getattr(_STATE, "mac_counter", None)
    if counter is not None:
        counter.macs += n


class Tensor:
    """A numpy array plus the tape (if any) that its history lives on."""

    __slots__ = ("value", "tape", "name")

    def __init__(self, value, tape=None, name=None):
        self.value = np.asarray(value, dtype=get_default_dtype())
        self.tape = tape
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    def item(self):
        return self.value.item()

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.value.shape}, tape={self.tape is not None}{tag})"


class Tape:
    """Ordered record of operations for one forward pass.

    parameter() registers a leaf tensor; backward() later returns a gradient
    for every registered parameter even if the loss never touched it.
    """

    def __init__(self):
        self._records = []
        self._params = []

    def parameter(self, value, name=None):
        if isinstance(value, Tensor):
            value = value.value
        t = Tensor(value, tape=self, name=name)
        self._params.append(t)
        return t

    @property
    def parameters(self):
        return list(self._params)

    def _record(self, out, inputs, backward_fn):
        self._records.append((out, inputs, backward_fn))

    def __len__(self):
        return len(self._records)


def _lift(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _tape_of(*tensors):
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is not None and tape is not t.tape:
                raise ValueError("operands recorded on different tapes")
            tape = t.tape
    return tape


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_check(a_shape, b_shape, op):
    try:
        np.broadcast_shapes(a_shape, b_shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: cannot broadcast {a_shape} with {b_shape}") from None


def _register(out, tape, inputs, backward_fn):
    if tape is not None:
        tape._record(out, inputs, backward_fn)
    return out


# ---------------------------------------------------------------------------
# elementwise and arithmetic primitives


def add(a, b):
    a, b = _lift(a), _lift(b)
    _broadcast_check(a.shape, b.shape, "add")
    tape = _tape_of(a, b)
    out = Tensor(a.value + b.value, tape)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _register(out, tape, (a, b), backward)


def sub(a, b):
    a, b = _lift(a), _lift(b)
    _broadcast_check(a.shape, b.shape, "sub")
    tape = _tape_of(a, b)
    out = Tensor(a.value - b.value, tape)

    def backward(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _register(out, tape, (a, b), backward)


def mul(a, b):
    a, b = _lift(a), _lift(b)
    _broadcast_check(a.shape, b.shape, "mul")
    tape = _tape_of(a, b)
    out = Tensor(a.value * b.value, tape)
    av, bv = a.value, b.value

    def backward(g):
        return _unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)

    return _register(out, tape, (a, b), backward)


def scale(a, k):
    """Multiply by a python scalar constant."""
    a = _lift(a)
    k = float(k)
    tape = _tape_of(a)
    out = Tensor(a.value * k, tape)
    return _register(out, tape, (a,), lambda g: (g * k,))


def neg(a):
    a = _lift(a)
    tape = _tape_of(a)
    out = Tensor(-a.value, tape)
    return _register(out, tape, (a,), lambda g: (-g,))


def relu(a):
    a = _lift(a)
    tape = _tape_of(a)
    mask = a.value > 0
    out = Tensor(np.where(mask, a.value, 0.0), tape)
    return _register(out, tape, (a,), lambda g: (g * mask,))


def tanh(a):
    a = _lift(a)
    tape = _tape_of(a)
    out = Tensor(np.tanh(a.value), tape)
    y = out.value
    return _register(out, tape, (a,), lambda g: (g * (1.0 - y * y),))


def exp(a):
    a = _lift(a)
    tape = _tape_of(a)
    out = Tensor(np.exp(a.value), tape)
    y = out.value
    return _register(out, tape, (a,), lambda g: (g * y,))


def log(a):
    a = _lift(a)
    tape = _tape_of(a)
    out = Tensor(np.log(a.value), tape)
    av = a.value
    return _register(out, tape, (a,), lambda g: (g / av,))


def clip_min(a, floor):
    """Elementwise max(a, floor); zero gradient on the floored region."""
    a = _lift(a)
    floor = float(floor)
    tape = _tape_of(a)
    mask = a.value > floor
    out = Tensor(np.where(mask, a.value, floor), tape)
    return _register(out, tape, (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    a, b = _lift(a), _lift(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    _tally_macs(a.shape[0] * a.shape[1] * b.shape[1])
    tape = _tape_of(a, b)
    out = Tensor(a.value @ b.value, tape)
    av, bv = a.value, b.value

    def backward(g):
        return g @ bv.T, av.T @ g

    return _register(out, tape, (a, b), backward)


def transpose(a):
    a = _lift(a)
    tape = _tape_of(a)
    out = Tensor(a.value.T, tape)
    return _register(out, tape, (a,), lambda g: (g.T,))


def linear(m, w, b=None):
    """Affine map rows(m) @ w + b with w of shape (c_in, c_out)."""
    m, w = _lift(m), _lift(w)
    if m.value.ndim != 2 or w.value.ndim != 2 or m.shape[1] != w.shape[0]:
        raise ShapeMismatch(f"linear: {m.shape} @ {w.shape}")
    _tally_macs(m.shape[0] * m.shape[1] * w.shape[1])
    y = m.value @ w.value
    if b is None:
        tape = _tape_of(m, w)
        out = Tensor(y, tape)
        mv, wv = m.value, w.value

        def backward(g):
            return g @ wv.T, mv.T @ g

        return _register(out, tape, (m, w), backward)
    b = _lift(b)
    if b.shape != (w.shape[1],):
        raise ShapeMismatch(f"linear bias: {b.shape} vs ({w.shape[1]},)")
    tape = _tape_of(m, w, b)
    out = Tensor(y + b.value, tape)
    mv, wv = m.value, w.value

    def backward(g):
        return g @ wv.T, mv.T @ g, g.sum(axis=0)

    return _register(out, tape, (m, w, b), backward)


def hstack(parts):
    """Concatenate 2-d tensors along columns."""
    parts = [_lift(p) for p in parts]
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeMismatch(f"hstack: row counts differ {sorted(rows)}")
    tape = _tape_of(*parts)
    out = Tensor(np.hstack([p.value for p in parts]), tape)
    widths = [p.shape[1] for p in parts]
    splits = np.cumsum(widths)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.hsplit(g, splits))

    return _register(out, tape, tuple(parts), backward)


def take_cols(a, lo, hi):
    a = _lift(a)
    tape = _tape_of(a)
    out = Tensor(a.value[:, lo:hi], tape)
    shape = a.shape

    def backward(g):
        da = np.zeros(shape, dtype=g.dtype)
        da[:, lo:hi] = g
        return (da,)

    return _register(out, tape, (a,), backward)


def take_rows(a, idx):
    """Gather rows a[idx]; scatter-adds the gradient back (repeats allowed)."""
    a = _lift(a)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeMismatch(f"take_rows: index shape {idx.shape}")
    tape = _tape_of(a)
    out = Tensor(a.value[idx], tape)
    shape = a.shape

    def backward(g):
        da = np.zeros(shape, dtype=g.dtype)
        np.add.at(da, idx, g)
        return (da,)

    return _register(out, tape, (a,), backward)


def gather_entries(a, rows, cols):
    """Pick entries a[rows[i], cols[i]] as a column vector."""
    a = _lift(a)
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    if rows.shape != cols.shape or rows.ndim != 1:
        raise ShapeMismatch(f"gather_entries: {rows.shape} vs {cols.shape}")
    tape = _tape_of(a)
    out = Tensor(a.value[rows, cols].reshape(-1, 1), tape)
    shape = a.shape

    def backward(g):
        da = np.zeros(shape, dtype=g.dtype)
        np.add.at(da, (rows, cols), g[:, 0])
        return (da,)

    return _register(out, tape, (a,), backward)


# ---------------------------------------------------------------------------
# reductions and normalizations


def sum_all(a):
    a = _lift(a)
    tape = _tape_of(a)
    out = Tensor(np.array([[a.value.sum()]]), tape)
    shape = a.shape

    def backward(g):
        return (np.full(shape, g[0, 0], dtype=g.dtype),)

    return _register(out, tape, (a,), backward)


def mean_all(a):
    a = _lift(a)
    tape = _tape_of(a)
    out = Tensor(np.array([[a.value.mean()]]), tape)
    shape, size = a.shape, a.value.size

    def backward(g):
        return (np.full(shape, g[0, 0] / size, dtype=g.dtype),)

    return _register(out, tape, (a,), backward)


def softmax_rows(a):
    """Row-wise softmax with max subtraction, so huge logits stay finite."""
    a = _lift(a)
    if a.value.ndim != 2:
        raise ShapeMismatch(f"softmax_rows: expected 2-d, got {a.shape}")
    tape = _tape_of(a)
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor(y, tape)

    def backward(g):
        return ((g - (g * y).sum(axis=1, keepdims=True)) * y,)

    return _register(out, tape, (a,), backward)


def logsumexp_rows(a):
    """Stable log-sum-exp over each row, shape (p, q) -> (p, 1)."""
    a = _lift(a)
    tape = _tape_of(a)
    m = a.value.max(axis=1, keepdims=True)
    out_v = m + np.log(np.exp(a.value - m).sum(axis=1, keepdims=True))
    out = Tensor(out_v, tape)
    av = a.value

    def backward(g):
        return (g * np.exp(av - out_v),)

    return _register(out, tape, (a,), backward)


def logsumexp_cols(a):
    """Stable log-sum-exp over each column, shape (p, q) -> (1, q)."""
    a = _lift(a)
    tape = _tape_of(a)
    m = a.value.max(axis=0, keepdims=True)
    out_v = m + np.log(np.exp(a.value - m).sum(axis=0, keepdims=True))
    out = Tensor(out_v, tape)
    av = a.value

    def backward(g):
        return (g * np.exp(av - out_v),)

    return _register(out, tape, (a,), backward)


def layer_norm(x, gain, bias, eps=1e-5):
    """Standardize each row to zero mean / unit variance, then gain & bias.

    Population variance with an eps inside the square root: a constant row
    maps to bias exactly because the centered values are zero.
    """
    x, gain, bias = _lift(x), _lift(gain), _lift(bias)
    if x.value.ndim != 2:
        raise ShapeMismatch(f"layer_norm: expected 2-d, got {x.shape}")
    c = x.shape[1]
    if c < 2:
        raise DegenerateWidth(f"layer_norm over width {c}")
    if gain.shape != (c,) or bias.shape != (c,):
        raise ShapeMismatch(f"layer_norm params: {gain.shape}, {bias.shape} vs ({c},)")
    tape = _tape_of(x, gain, bias)
    mu = x.value.mean(axis=1, keepdims=True)
    centered = x.value - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = Tensor(xhat * gain.value + bias.value, tape)
    gv = gain.value

    def backward(g):
        dxhat = g * gv
        dx = inv * (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _register(out, tape, (x, gain, bias), backward)


def l2_normalize_rows(a, eps=1e-12):
    a = _lift(a)
    tape = _tape_of(a)
    r = np.sqrt((a.value * a.value).sum(axis=1, keepdims=True))
    r = np.maximum(r, eps)
    y = a.value / r
    out = Tensor(y, tape)

    def backward(g):
        return ((g - y * (y * g).sum(axis=1, keepdims=True)) / r,)

    return _register(out, tape, (a,), backward)


# ---------------------------------------------------------------------------
# task-shaped primitives


def pad_dustbin(s, z):
    """Append one dustbin row and column (corner included) filled with z."""
    s, z = _lift(s), _lift(z)
    if s.value.ndim != 2:
        raise ShapeMismatch(f"pad_dustbin: expected 2-d, got {s.shape}")
    if z.value.size != 1:
        raise ShapeMismatch(f"pad_dustbin: z must be scalar, got {z.shape}")
    n, m = s.shape
    tape = _tape_of(s, z)
    padded = np.full((n + 1, m + 1), z.value.reshape(()), dtype=s.value.dtype)
    padded[:n, :m] = s.value
    out = Tensor(padded, tape)
    z_shape = z.shape

    def backward(g):
        dz = g[n, :].sum() + g[:n, m].sum()
        return g[:n, :m].copy(), np.full(z_shape, dz, dtype=g.dtype)

    return _register(out, tape, (s, z), backward)


def bce_with_logits(logits, targets):
    """Elementwise binary cross-entropy on logits, numerically stable.

    Uses max(x, 0) - x*t + log1p(exp(-|x|)); targets are treated as
    constants even if a tensor is passed.
    """
    logits = _lift(logits)
    t = targets.value if isinstance(targets, Tensor) else np.asarray(targets, dtype=get_default_dtype())
    if t.shape != logits.shape:
        raise ShapeMismatch(f"bce_with_logits: {logits.shape} vs {t.shape}")
    x = logits.value
    tape = _tape_of(logits)
    out = Tensor(np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x))), tape)
    sig = np.empty_like(x)
    pos = x >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    sig[~pos] = ex / (1.0 + ex)

    def backward(g):
        return (g * (sig - t),)

    return _register(out, tape, (logits,), backward)


# ---------------------------------------------------------------------------
# reverse pass


def backward(tape, loss):
    """Return {parameter Tensor: gradient array} for a scalar recorded loss.

    Single reverse sweep over the tape; each record is visited once and
    gradients from multiple consumers accumulate by summation.
    """
    if not isinstance(loss, Tensor) or loss.tape is not tape:
        raise ValueError("loss was not computed on this tape")
    if loss.size != 1:
        raise NotScalar(f"loss has shape {loss.shape}")
    if not np.isfinite(loss.value).all():
        raise NonFiniteValue("loss is not finite")

    grads = {loss: np.ones_like(loss.value)}
    for out, inputs, backward_fn in reversed(tape._records):
        g = grads.pop(out, None)
        if g is None:
            continue
        parts = backward_fn(g)
        for inp, part in zip(inputs, parts):
            if inp.tape is None or part is None:
                continue
            acc = grads.get(inp)
            grads[inp] = part if acc is None else acc + part
    return {p: grads.get(p, np.zeros_like(p.value)) for p in tape._params}


def grad_check(f, arrays, h=1e-5):
    """Compare tape gradients of f against central finite differences.

    f takes one Tensor per input array and returns a scalar Tensor. Runs in
    float64 regardless of the ambient dtype. Returns the worst relative
    error max|ad - fd| / max(1, |ad|, |fd|) across all coordinates.
    """
    with default_dtype(np.float64):
        arrays = [np.array(a, dtype=np.float64) for a in arrays]
        tape = Tape()
        params = [tape.parameter(a) for a in arrays]
        loss = f(*params)
        grads = backward(tape, loss)
        worst = 0.0
        for a, p in zip(arrays, params):
            ad = grads[p]
            for i in range(a.size):
                orig = a.flat[i]
                a.flat[i] = orig + h
                hi = f(*(Tensor(x) for x in arrays)).value.item()
                a.flat[i] = orig - h
                lo = f(*(Tensor(x) for x in arrays)).value.item()
                a.flat[i] = orig
                fd = (hi - lo) / (2.0 * h)
                err = abs(ad.flat[i] - fd) / max(1.0, abs(ad.flat[i]), abs(fd))
                worst = max(worst, err)
        return worst
