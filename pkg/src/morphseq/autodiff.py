"""Reverse-mode automatic differentiation over dense numpy arrays.

A ``Tape`` records every operation applied to ``Tensor`` values while it is
active; ``Tape.backward`` replays the record in reverse to accumulate
gradients. With no active tape the same operations run as plain numpy
computations, which is how inference paths avoid bookkeeping overhead.

Training code uses float32 arrays. Gradient checking builds the same graph
from float64 leaves (see ``grad_check``).

Tapes are single-writer: one thread builds a tape and calls backward on it.
Tensors whose data is never mutated may be shared across threads.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "NonFiniteError",
    "tensor",
    "add",
    "mul",
    "matmul",
    "tanh",
    "sigmoid",
    "softmax",
    "concat",
    "lookup",
    "reduce_sum",
    "reduce_mean",
    "slice_last",
    "reshape",
    "stack",
    "dot_last",
    "attn_mix",
    "softmax_xent",
    "bce_logits",
    "grad_check",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf."""


class Tensor:
    """A value in the computation graph.

    Leaves (parameters, constants) have no parents. Operation results carry
    references to their parent tensors and one pull-back per parent that maps
    the output gradient to that parent's gradient contribution.
    """

    __slots__ = ("data", "op", "parents", "pulls")

    def __init__(self, data, dtype=None, op: str = "leaf", parents=(), pulls=()):
        self.data = np.asarray(data, dtype=dtype)
        self.op = op
        self.parents = parents
        self.pulls = pulls

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
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.data.shape}, dtype={self.data.dtype})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, dtype=np.float32) -> Tensor:
    """Create a leaf tensor, defaulting to float32 storage."""
    return Tensor(np.asarray(data, dtype=dtype))


_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of operations, enabling reverse-mode differentiation.

    Nodes are appended in creation order, which is automatically a
    topological order (an operation's inputs exist before it runs). After
    ``backward`` the ``gradients`` map holds an array per tensor that is an
    ancestor of the loss, keyed by tensor identity.
    """

    def __init__(self):
        self._nodes: list[Tensor] = []
        self.gradients: dict[Tensor, np.ndarray] = {}

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        popped = _TAPES.pop()
        if popped is not self:  # pragma: no cover - misuse guard
            raise RuntimeError("tape stack corrupted: exited a non-innermost tape")
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Populate and return gradients of ``loss`` w.r.t. all its ancestors.

        The gradient of the loss w.r.t. itself is 1. A tensor consumed by
        several downstream operations receives the sum of all partials.
        """
        if loss.size != 1:
            raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
        on_tape = {id(n) for n in self._nodes}
        if id(loss) not in on_tape:
            raise ValueError("backward: loss is not a node on this tape")
        grads: dict[Tensor, np.ndarray] = {loss: np.ones_like(loss.data)}
        for node in reversed(self._nodes):
            g = grads.get(node)
            if g is None:
                continue  # not an ancestor of the loss
            for parent, pull in zip(node.parents, node.pulls):
                pg = pull(g)
                if pg.shape != parent.data.shape:  # pragma: no cover - op bug guard
                    raise ShapeError(
                        f"backward({node.op}): gradient shape {pg.shape} does "
                        f"not match input shape {parent.data.shape}"
                    )
                acc = grads.get(parent)
                grads[parent] = pg if acc is None else acc + pg
        self.gradients = grads
        return grads


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _check_finite(op: str, data: np.ndarray) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op}: operation produced non-finite values")


def _node(op: str, data: np.ndarray, parents: Sequence[Tensor], pulls: Sequence[Callable]) -> Tensor:
    _check_finite(op, data)
    out = Tensor(data, op=op, parents=tuple(parents), pulls=tuple(pulls))
    if _TAPES:
        _TAPES[-1]._nodes.append(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    """Elementwise addition with numpy broadcasting."""
    ad, bd = _data(a), _data(b)
    try:
        out = ad + bd
    except ValueError:
        raise ShapeError(f"add: shapes {ad.shape} and {bd.shape} do not broadcast") from None
    parents, pulls = [], []
    if isinstance(a, Tensor):
        parents.append(a)
        pulls.append(lambda g, s=ad.shape: _unbroadcast(g, s))
    if isinstance(b, Tensor):
        parents.append(b)
        pulls.append(lambda g, s=bd.shape: _unbroadcast(g, s))
    return _node("add", out, parents, pulls)


def mul(a, b) -> Tensor:
    """Elementwise multiplication with numpy broadcasting.

    Dropout is expressed through this op: the mask is a constant array, so
    the same (scaled) zero pattern applies in forward and backward passes.
    """
    ad, bd = _data(a), _data(b)
    try:
        out = ad * bd
    except ValueError:
        raise ShapeError(f"mul: shapes {ad.shape} and {bd.shape} do not broadcast") from None
    parents, pulls = [], []
    if isinstance(a, Tensor):
        parents.append(a)
        pulls.append(lambda g, s=ad.shape, o=bd: _unbroadcast(g * o, s))
    if isinstance(b, Tensor):
        parents.append(b)
        pulls.append(lambda g, s=bd.shape, o=ad: _unbroadcast(g * o, s))
    return _node("mul", out, parents, pulls)


def matmul(a, b) -> Tensor:
    """Matrix product: supports (n,k)@(k,m), (n,k)@(k,) and (k,)@(k,m)."""
    ad, bd = _data(a), _data(b)
    ok = (
        (ad.ndim == 2 and bd.ndim == 2 and ad.shape[1] == bd.shape[0])
        or (ad.ndim == 2 and bd.ndim == 1 and ad.shape[1] == bd.shape[0])
        or (ad.ndim == 1 and bd.ndim == 2 and ad.shape[0] == bd.shape[0])
    )
    if not ok:
        raise ShapeError(f"matmul: shapes {ad.shape} and {bd.shape} are incompatible")
    out = ad @ bd
    parents, pulls = [], []
    if isinstance(a, Tensor):
        if bd.ndim == 2:
            pull_a = lambda g, o=bd: g @ o.T
        else:  # (n,k)@(k,) -> (n,)
            pull_a = lambda g, o=bd: np.outer(g, o)
        parents.append(a)
        pulls.append(pull_a)
    if isinstance(b, Tensor):
        if ad.ndim == 2:
            pull_b = lambda g, o=ad: o.T @ g
        else:  # (k,)@(k,m) -> (m,)
            pull_b = lambda g, o=ad: np.outer(o, g)
        parents.append(b)
        pulls.append(pull_b)
    return _node("matmul", out, parents, pulls)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(_data(x))
    if not isinstance(x, Tensor):
        return _node("tanh", y, (), ())
    return _node("tanh", y, (x,), (lambda g, o=y: g * (1.0 - o * o),))


def sigmoid(x: Tensor) -> Tensor:
    """Logistic sigmoid, computed via tanh for overflow-free evaluation."""
    xd = _data(x)
    y = 0.5 * (1.0 + np.tanh(0.5 * xd))
    if not isinstance(x, Tensor):
        return _node("sigmoid", y, (), ())
    return _node("sigmoid", y, (x,), (lambda g, o=y: g * o * (1.0 - o),))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, with max subtraction for stability."""
    xd = _data(x)
    if xd.ndim < 1 or xd.shape[-1] < 1:
        raise ShapeError(f"softmax: need a non-empty last axis, got shape {xd.shape}")
    z = xd - xd.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    if not isinstance(x, Tensor):
        return _node("softmax", y, (), ())

    def pull(g, o=y):
        return o * (g - (g * o).sum(axis=-1, keepdims=True))

    return _node("softmax", y, (x,), (pull,))


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    """Concatenate along an axis; gradients are split back at the seams."""
    datas = [_data(p) for p in parts]
    try:
        out = np.concatenate(datas, axis=axis)
    except ValueError:
        shapes = [d.shape for d in datas]
        raise ShapeError(f"concat: shapes {shapes} do not align on axis {axis}") from None
    ax = axis if axis >= 0 else out.ndim + axis
    parents, pulls = [], []
    offset = 0
    for p, d in zip(parts, datas):
        width = d.shape[ax]
        if isinstance(p, Tensor):
            sl = (slice(None),) * ax + (slice(offset, offset + width),)
            parents.append(p)
            pulls.append(lambda g, s=sl: g[s])
        offset += width
    return _node("concat", out, parents, pulls)


def lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of an embedding table; backward scatter-adds into it."""
    ids = np.asarray(ids, dtype=np.int64)
    td = _data(table)
    if ids.size and (ids.min() < 0 or ids.max() >= td.shape[0]):
        raise ShapeError(
            f"lookup: id out of range for table with {td.shape[0]} rows "
            f"(ids span [{ids.min()}, {ids.max()}])"
        )
    out = td[ids]
    if not isinstance(table, Tensor):
        return _node("lookup", out, (), ())

    def pull(g, o=td, ix=ids):
        gt = np.zeros_like(o)
        np.add.at(gt, ix, g)
        return gt

    return _node("lookup", out, (table,), (pull,))


def reduce_sum(x: Tensor) -> Tensor:
    xd = _data(x)
    out = np.asarray(xd.sum())
    if not isinstance(x, Tensor):
        return _node("sum", out, (), ())
    return _node("sum", out, (x,), (lambda g, s=xd.shape, dt=xd.dtype: np.full(s, g, dtype=dt),))


def reduce_mean(x: Tensor) -> Tensor:
    xd = _data(x)
    out = np.asarray(xd.mean())
    if not isinstance(x, Tensor):
        return _node("mean", out, (), ())
    n = xd.size
    return _node(
        "mean", out, (x,), (lambda g, s=xd.shape, dt=xd.dtype: np.full(s, g / n, dtype=dt),)
    )


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    """Slice along the last axis; backward zero-pads the complement."""
    xd = _data(x)
    if not (0 <= start <= stop <= xd.shape[-1]):
        raise ShapeError(f"slice_last: range [{start}:{stop}] invalid for shape {xd.shape}")
    out = xd[..., start:stop]

    def pull(g, s=xd.shape, dt=xd.dtype):
        z = np.zeros(s, dtype=dt)
        z[..., start:stop] = g
        return z

    if not isinstance(x, Tensor):
        return _node("slice", out, (), ())
    return _node("slice", out, (x,), (pull,))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    xd = _data(x)
    try:
        out = xd.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {xd.shape} as {shape}") from None
    if not isinstance(x, Tensor):
        return _node("reshape", out, (), ())
    return _node("reshape", out, (x,), (lambda g, s=xd.shape: g.reshape(s),))


def stack(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Stack equal-shaped tensors along a new axis."""
    datas = [_data(p) for p in parts]
    try:
        out = np.stack(datas, axis=axis)
    except ValueError:
        raise ShapeError(f"stack: shapes {[d.shape for d in datas]} differ") from None
    parents, pulls = [], []
    for i, p in enumerate(parts):
        if isinstance(p, Tensor):
            parents.append(p)
            pulls.append(lambda g, j=i: np.take(g, j, axis=axis))
    return _node("stack", out, parents, pulls)


def dot_last(x: Tensor, v: Tensor) -> Tensor:
    """Contract the last axis of ``x`` with a vector: (..., h) x (h,) -> (...)."""
    xd, vd = _data(x), _data(v)
    if vd.ndim != 1 or xd.shape[-1] != vd.shape[0]:
        raise ShapeError(f"dot_last: shapes {xd.shape} and {vd.shape} are incompatible")
    out = xd @ vd
    parents, pulls = [], []
    if isinstance(x, Tensor):
        parents.append(x)
        pulls.append(lambda g, o=vd: g[..., None] * o)
    if isinstance(v, Tensor):
        parents.append(v)
        pulls.append(lambda g, o=xd: o.reshape(-1, o.shape[-1]).T @ g.reshape(-1))
    return _node("dot_last", out, parents, pulls)


def attn_mix(h: Tensor, w: Tensor) -> Tensor:
    """Weighted sum of per-position states: (b,n,h) x (b,n) -> (b,h)."""
    hd, wd = _data(h), _data(w)
    if hd.ndim != 3 or wd.ndim != 2 or hd.shape[:2] != wd.shape:
        raise ShapeError(f"attn_mix: shapes {hd.shape} and {wd.shape} are incompatible")
    out = np.einsum("bnh,bn->bh", hd, wd)
    parents, pulls = [], []
    if isinstance(h, Tensor):
        parents.append(h)
        pulls.append(lambda g, o=wd: o[:, :, None] * g[:, None, :])
    if isinstance(w, Tensor):
        parents.append(w)
        pulls.append(lambda g, o=hd: np.einsum("bnh,bh->bn", o, g))
    return _node("attn_mix", out, parents, pulls)


def softmax_xent(logits: Tensor, targets) -> Tensor:
    """Per-row cross-entropy of softmax(logits) against integer targets.

    Fused with the softmax through a max-subtracted log-sum-exp so large
    logits cannot overflow. Returns one loss per row; callers mask and
    reduce as needed.
    """
    ld = _data(logits)
    t = np.asarray(targets, dtype=np.int64)
    if ld.ndim != 2 or t.shape != (ld.shape[0],):
        raise ShapeError(f"softmax_xent: shapes {ld.shape} and {t.shape} are incompatible")
    if t.size and (t.min() < 0 or t.max() >= ld.shape[1]):
        raise ShapeError(f"softmax_xent: target id out of range for {ld.shape[1]} classes")
    m = ld.max(axis=-1, keepdims=True)
    z = ld - m
    lse = np.log(np.exp(z).sum(axis=-1)) + m[:, 0]
    rows = np.arange(ld.shape[0])
    out = lse - ld[rows, t]
    if not isinstance(logits, Tensor):
        return _node("softmax_xent", out, (), ())

    def pull(g, o=ld, ix=t):
        zz = o - o.max(axis=-1, keepdims=True)
        e = np.exp(zz)
        p = e / e.sum(axis=-1, keepdims=True)
        p[np.arange(o.shape[0]), ix] -= 1.0
        return g[:, None] * p

    return _node("softmax_xent", out, (logits,), (pull,))


def bce_logits(logits: Tensor, targets) -> Tensor:
    """Elementwise binary cross-entropy of sigmoid(logits) against targets.

    Uses max(x,0) - x*z + log1p(exp(-|x|)), which is exact and overflow-free.
    Gradients flow to the logits only; targets are constants.
    """
    ld = _data(logits)
    z = _data(targets)
    if ld.shape != z.shape:
        raise ShapeError(f"bce_logits: shapes {ld.shape} and {z.shape} differ")
    out = np.maximum(ld, 0.0) - ld * z + np.log1p(np.exp(-np.abs(ld)))
    if not isinstance(logits, Tensor):
        return _node("bce_logits", out, (), ())

    def pull(g, o=ld, t=z):
        s = 0.5 * (1.0 + np.tanh(0.5 * o))
        return g * (s - t)

    return _node("bce_logits", out, (logits,), (pull,))


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Compare analytic gradients of ``f`` against central finite differences.

    ``f`` must build a scalar loss from the given float64 leaf tensors.
    Returns the maximum over all input entries of
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """
    for x in inputs:
        if x.data.dtype != np.float64:
            raise ValueError("grad_check: inputs must be float64 tensors")
    with Tape() as tape:
        loss = f(*inputs)
    if loss.size != 1:
        raise ValueError("grad_check: f must produce a scalar loss")
    grads = tape.backward(loss)
    worst = 0.0
    for x in inputs:
        analytic = grads.get(x, np.zeros_like(x.data))
        numeric = np.zeros_like(x.data)
        flat = x.data.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(f(*inputs).data)
            flat[i] = orig - eps
            down = float(f(*inputs).data)
            flat[i] = orig
            nflat[i] = (up - down) / (2.0 * eps)
        rel = np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
        if rel.size:
            worst = max(worst, float(rel.max()))
    return worst
