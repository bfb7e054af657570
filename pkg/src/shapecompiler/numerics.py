"""Dense tensors with reverse-mode automatic differentiation.

A small tape-based engine over NumPy arrays: each differentiable op records
a TapeNode holding its parents and a vector-Jacobian closure, and
``backward`` walks the tape in reverse topological order. All reductions
use NumPy's fixed evaluation order, so identical inputs give bit-identical
outputs within one build.

f32 is the training dtype; gradient checks build their graphs in f64.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeConformanceError

log = logging.getLogger(__name__)

DEFAULT_DTYPE = np.float32


class TapeNode:
    """One recorded op: kind, parent tensors, and the VJP closure."""

    __slots__ = ("op", "parents", "vjp")

    def __init__(self, op, parents, vjp):
        self.op = op
        self.parents = parents
        self.vjp = vjp


class Tensor:
    """N-d array with optional gradient tracking.

    Tensors are immutable values once created; ``grad`` is the only field
    mutated (by ``backward`` / ``zero_grad``).
    """

    __slots__ = ("data", "requires_grad", "grad", "node", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        """Constant view of this tensor (stop-gradient)."""
        return Tensor(self.data, requires_grad=False)

    def backward(self):
        backward(self)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    # operator sugar used throughout the model code
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    def __rmul__(self, other):
        return mul(_as_tensor(other, self.dtype), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0, self.dtype))

    def __sub__(self, other):
        return add(self, -_as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), -self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _tracked(*tensors):
    return any(t.requires_grad or t.node is not None for t in tensors)


def _make(data, op, parents, vjp):
    out = Tensor(data)
    if _tracked(*parents):
        out.node = TapeNode(op, tuple(parents), vjp)
    return out


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of NumPy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------

def add(a, b):
    if not isinstance(b, Tensor):
        b = _as_tensor(b, a.dtype)
    if not isinstance(a, Tensor):
        a = _as_tensor(a, b.dtype)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeConformanceError("add", [a.shape, b.shape])

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(data, "add", (a, b), vjp)


def mul(a, b):
    if not isinstance(b, Tensor):
        b = _as_tensor(b, a.dtype)
    if not isinstance(a, Tensor):
        a = _as_tensor(a, b.dtype)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeConformanceError("mul", [a.shape, b.shape])

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(data, "mul", (a, b), vjp)


def matmul(a, b):
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeConformanceError("matmul", [a.shape, b.shape])
    data = a.data @ b.data

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(data, "matmul", (a, b), vjp)


def relu(x):
    data = np.maximum(x.data, 0)

    def vjp(g):
        # subgradient at exactly 0 is 0 by convention
        return (g * (x.data > 0),)

    return _make(data, "relu", (x,), vjp)


def softmax_last_axis(x):
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((g - dot) * y,)

    return _make(y, "softmax-last-axis", (x,), vjp)


def layer_normalize(x, gamma, beta, eps=1e-5):
    """Normalize over the last axis; gamma/beta have that axis's width."""
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise ShapeConformanceError("layer-normalize", [x.shape, gamma.shape, beta.shape])
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = gamma.data * xhat + beta.data

    def vjp(g):
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        lead = tuple(range(x.data.ndim - 1))
        dgamma = (g * xhat).sum(axis=lead)
        dbeta = g.sum(axis=lead)
        return dx, dgamma, dbeta

    return _make(data, "layer-normalize", (x, gamma, beta), vjp)


@dataclass
class BatchNormState:
    """Running statistics for one batch-normalize site (not on the tape)."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, width, momentum=0.1, eps=1e-5, dtype=DEFAULT_DTYPE):
        return cls(np.zeros(width, dtype=dtype), np.ones(width, dtype=dtype),
                   momentum, eps)


def batch_normalize(x, gamma, beta, state, training, update_stats=True):
    """Normalize over all leading axes, per trailing feature.

    Training mode uses batch statistics and (unless `update_stats` is off,
    e.g. for a metric pass) updates the running buffers in place; eval mode
    applies the frozen running statistics, making the op a per-feature
    affine map.
    """
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise ShapeConformanceError("batch-normalize", [x.shape, gamma.shape, beta.shape])
    lead = tuple(range(x.data.ndim - 1))
    eps = state.eps
    if training:
        n = x.data.size // x.data.shape[-1]
        flat = x.data.reshape(n, x.data.shape[-1])
        mu = flat.mean(axis=0)
        xhat = flat - mu
        var = np.einsum("nd,nd->d", xhat, xhat) / n
        inv = 1.0 / np.sqrt(var + eps)
        xhat *= inv
        if update_stats:
            m = state.momentum
            state.running_mean += (m * (mu - state.running_mean)).astype(
                state.running_mean.dtype)
            state.running_var += (m * (var - state.running_var)).astype(
                state.running_var.dtype)
        out = xhat * gamma.data
        out += beta.data

        def vjp(g):
            gflat = g.reshape(n, -1)
            dx = gflat * gamma.data
            m1 = dx.mean(axis=0)
            m2 = np.einsum("nd,nd->d", dx, xhat) / n
            dgamma = np.einsum("nd,nd->d", gflat, xhat)
            dx -= m1
            dx -= xhat * m2
            dx *= inv
            return dx.reshape(x.shape), dgamma, gflat.sum(axis=0)

        return _make(out.reshape(x.shape), "batch-normalize",
                     (x, gamma, beta), vjp)

    inv = 1.0 / np.sqrt(state.running_var + eps)
    xhat = (x.data - state.running_mean) * inv

    def vjp(g):
        dx = g * (gamma.data * inv)
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(gamma.data * xhat + beta.data, "batch-normalize", (x, gamma, beta), vjp)


def embedding_gather(table, ids):
    """Row lookup `table[ids]`; gradients scatter-add back into the table."""
    ids = np.asarray(ids)
    if table.data.ndim != 2:
        raise ShapeConformanceError("embedding-gather", [table.shape], "table must be 2-d")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(
            f"embedding-gather: id out of range [0, {table.shape[0]})")
    data = table.data[ids]

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _make(data, "embedding-gather", (table,), vjp)


def max_pool_over_axis(x, axis):
    """Max over one axis; the gradient routes to the first argmax."""
    axis = int(axis)
    data = x.data.max(axis=axis)
    idx = np.expand_dims(x.data.argmax(axis=axis), axis)

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis)
        return (gx,)

    return _make(data, "max-pool-over-axis", (x,), vjp)


def concat(tensors, axis=-1):
    shapes = [t.shape for t in tensors]
    base = [list(s) for s in shapes]
    ax = axis if axis >= 0 else len(shapes[0]) + axis
    for s in base:
        s[ax] = -1
    if any(s != base[0] for s in base):
        raise ShapeConformanceError("concat", shapes)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([s[ax] for s in shapes])[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(data, "concat", tuple(tensors), vjp)


def reshape(x, shape):
    shape = tuple(shape)
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeConformanceError("reshape", [x.shape], f"target {shape}")

    def vjp(g):
        return (g.reshape(x.shape),)

    return _make(data, "reshape", (x,), vjp)


def transpose(x, axes):
    """Permute axes (internal helper for attention heads)."""
    axes = tuple(axes)
    data = x.data.transpose(axes)
    inv = tuple(np.argsort(axes))

    def vjp(g):
        return (g.transpose(inv),)

    return _make(data, "transpose", (x,), vjp)


def cross_entropy_with_logits(logits, targets):
    """Mean over rows of -log softmax(logits)[target].

    `logits` is (..., V); `targets` holds integer class ids with the
    leading shape of `logits`.
    """
    targets = np.asarray(targets)
    if targets.shape != logits.shape[:-1]:
        raise ShapeConformanceError(
            "cross-entropy-with-logits", [logits.shape, targets.shape])
    v = logits.shape[-1]
    flat = logits.data.reshape(-1, v)
    tflat = targets.reshape(-1).astype(np.int64)
    if tflat.size == 0:
        raise ContractError("cross-entropy-with-logits: empty target batch")
    if tflat.min() < 0 or tflat.max() >= v:
        raise ContractError(f"cross-entropy-with-logits: target outside [0, {v})")
    m = flat.max(axis=-1, keepdims=True)
    e = np.exp(flat - m)
    z = e.sum(axis=-1, keepdims=True)
    lse = (m + np.log(z)).reshape(-1)
    picked = flat[np.arange(tflat.size), tflat]
    n = tflat.size
    data = np.asarray((lse - picked).sum() / n, dtype=logits.dtype)

    def vjp(g):
        soft = e / z
        soft[np.arange(n), tflat] -= 1.0
        return ((g * soft / n).reshape(logits.shape),)

    return _make(data, "cross-entropy-with-logits", (logits,), vjp)


def squared_l2(a, b=None):
    """Sum of squared entries of `a` (or of `a - b`)."""
    if b is None:
        diff = a.data
        parents = (a,)
    else:
        if a.shape != b.shape:
            raise ShapeConformanceError("squared-L2", [a.shape, b.shape])
        diff = a.data - b.data
        parents = (a, b)
    data = np.asarray((diff * diff).sum(), dtype=a.dtype)

    def vjp(g):
        ga = 2.0 * g * diff
        if b is None:
            return (ga,)
        return ga, -ga

    return _make(data, "squared-L2", parents, vjp)


def straight_through(x, value):
    """Forward `value`, backward identity onto `x` (the quantizer estimator)."""
    if x.shape != value.shape:
        raise ShapeConformanceError("straight-through", [x.shape, value.shape])

    def vjp(g):
        return (g,)

    return _make(np.array(value.data if isinstance(value, Tensor) else value),
                 "straight-through", (x,), vjp)


def batch_gather(x, idx):
    """Per-batch row lookup: x (B, N, F), idx (B, ...) -> (B, ..., F)."""
    idx = np.asarray(idx)
    b, n, f = x.shape
    if idx.shape[0] != b:
        raise ShapeConformanceError("batch-gather", [x.shape, idx.shape])
    batch = np.arange(b).reshape((b,) + (1,) * (idx.ndim - 1))
    data = x.data[batch, idx]

    def vjp(g):
        gx = np.zeros_like(x.data)
        flat_batch = np.broadcast_to(batch, idx.shape).reshape(-1)
        np.add.at(gx, (flat_batch, idx.reshape(-1)), g.reshape(-1, f))
        return (gx,)

    return _make(data, "batch-gather", (x,), vjp)


def select_index(x, i, axis=0):
    """Slice one index off an axis; gradient scatters back."""
    i = int(i)
    data = np.take(x.data, i, axis=axis)

    def vjp(g):
        gx = np.zeros_like(x.data)
        sl = [slice(None)] * x.data.ndim
        sl[axis] = i
        gx[tuple(sl)] = g
        return (gx,)

    return _make(data, "select-index", (x,), vjp)


def custom_op(name, data, parents, vjp):
    """Register an externally computed forward value with its VJP.

    Lets other modules (e.g. the point-set distances) participate in the
    tape without widening the core op set.
    """
    return _make(np.asarray(data), name, tuple(parents), vjp)


_PUBLIC_OPS = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "relu": relu,
    "softmax-last-axis": softmax_last_axis,
    "batch-normalize": batch_normalize,
    "layer-normalize": layer_normalize,
    "embedding-gather": embedding_gather,
    "max-pool-over-axis": max_pool_over_axis,
    "concat": concat,
    "reshape": reshape,
    "cross-entropy-with-logits": cross_entropy_with_logits,
    "squared-L2": squared_l2,
}


def apply(op_kind, *inputs, **kwargs):
    """Dispatch one op from the fixed public set."""
    try:
        fn = _PUBLIC_OPS[op_kind]
    except KeyError:
        raise ContractError(f"unknown op kind {op_kind!r}")
    return fn(*inputs, **kwargs)


def op_kinds():
    return tuple(_PUBLIC_OPS)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def backward(loss):
    """Accumulate dLoss/dLeaf into every reachable requires_grad leaf.

    Leaves outside the graph are untouched; call ``zero_grad`` on the full
    parameter set first so non-participating parameters hold zeros.
    """
    if loss.data.ndim != 0:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss.node is None:
        if loss.requires_grad:
            if loss.grad is None:
                loss.grad = np.zeros_like(loss.data)
            loss.grad += np.ones((), dtype=loss.dtype)
        return
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        t, done = stack.pop()
        if done:
            order.append(t)
            continue
        if id(t) in seen or t.node is None:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for p in t.node.parents:
            stack.append((p, False))

    grads = {id(loss): np.ones((), dtype=loss.dtype)}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        parent_grads = t.node.vjp(g)
        for p, pg in zip(t.node.parents, parent_grads):
            if pg is None:
                continue
            if p.node is not None:
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            elif p.requires_grad:
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
                p.grad += pg.astype(p.dtype, copy=False)


def zero_grad(params):
    """Reset gradients to zeros for an iterable or dict of tensors."""
    if isinstance(params, dict):
        params = params.values()
    for p in params:
        p.grad = np.zeros_like(p.data)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(fn, point, eps=1e-5):
    """Max relative error between analytic and central-difference gradients.

    `fn` maps a list of f64 tensors to a scalar Tensor. The relative error
    per coordinate is |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    tensors = [Tensor(np.asarray(p, dtype=np.float64), requires_grad=True)
               for p in point]
    zero_grad(tensors)
    loss = fn(tensors)
    if not np.isfinite(loss.data):
        raise ContractError("grad_check: non-finite loss at the base point")
    backward(loss)

    worst = 0.0
    for t in tensors:
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = fn(tensors).data
            flat[i] = orig - eps
            lo = fn(tensors).data
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise ContractError("grad_check: non-finite probe value")
            numeric = (hi - lo) / (2 * eps)
            analytic = t.grad.reshape(-1)[i]
            denom = max(1.0, abs(analytic), abs(numeric))
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst


# ---------------------------------------------------------------------------
# optimizer and schedule
# ---------------------------------------------------------------------------

@dataclass
class OptimState:
    """Adam moments, one slot per parameter, plus the shared step counter."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update in place over a name->Tensor dict.

    Parameters with ``grad is None`` are treated as zero-gradient (their
    moments still decay).
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m += (1.0 - beta1) * (g - m)
        v += (1.0 - beta2) * (g * g - v)
        mhat = m / bc1
        vhat = v / bc2
        p.data -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.dtype, copy=False)
    return state


@dataclass(frozen=True)
class LrSchedule:
    """Cosine annealing from lr0 down to minimum over total_steps."""

    lr0: float
    total_steps: int
    minimum: float = 0.0


def cosine_lr(schedule, step):
    """Annealed rate at `step`; steps past the horizon clamp to the minimum."""
    if step > schedule.total_steps:
        log.warning("cosine_lr: step %d beyond horizon %d, clamping",
                    step, schedule.total_steps)
        return schedule.minimum
    if schedule.total_steps == 0:
        return schedule.minimum
    frac = step / schedule.total_steps
    return schedule.minimum + 0.5 * (schedule.lr0 - schedule.minimum) * (
        1.0 + math.cos(math.pi * frac))
