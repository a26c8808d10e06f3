"""Small dense reverse-mode autodiff on float64 numpy arrays.

Operations record themselves on the active :class:`Tape` when any input
requires a gradient::

    w = Tensor.param(rng.uniform(size=(3, 2)))
    with Tape() as tape:
        loss = sum_all(relu(matmul(x, w)))
    (dw,) = tape.gradient(loss, [w])

Only the op set needed for hypergraph convolution, a bilinear incidence
decoder and softmax classification is provided.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

BCE_CLAMP = 1e-12

_active = threading.local()


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


def _finite(a: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} contains NaN or Inf")
    return a


class Tensor:
    """A float64 array with an optional accumulated gradient."""

    __slots__ = ("data", "requires_grad", "grad", "_tape_id")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._tape_id: int | None = None

    @classmethod
    def param(cls, data) -> "Tensor":
        return cls(_finite(np.array(data, dtype=np.float64), "parameter"), requires_grad=True)

    @classmethod
    def const(cls, data) -> "Tensor":
        return cls(_finite(np.asarray(data, dtype=np.float64), "input"))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor.const(x)


@dataclass
class _Op:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


@dataclass
class Tape:
    """Records differentiable ops executed inside its ``with`` block."""

    ops: list[_Op] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        stack = getattr(_active, "stack", None)
        if stack is None:
            stack = _active.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _active.stack.pop()

    def _record(self, out: Tensor, inputs: tuple[Tensor, ...], backward) -> None:
        out.requires_grad = True
        out._tape_id = id(self)
        self.ops.append(_Op(out, inputs, backward))

    def gradient(self, loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of scalar ``loss`` w.r.t. ``params``.

        Every recorded op is visited once, in reverse order. Parameters
        with no path to the loss get zero gradients. The gradient is also
        stored on ``p.grad``.
        """
        if loss._tape_id != id(self):
            raise TapeError("loss was not produced under this tape")
        if loss.data.size != 1:
            raise TapeError("loss must be a scalar")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for op in reversed(self.ops):
            g_out = grads.pop(id(op.out), None)
            if g_out is None:
                continue
            for inp, g in zip(op.inputs, op.backward(g_out)):
                if g is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
        out = []
        for p in params:
            g = grads.get(id(p))
            g = np.zeros_like(p.data) if g is None else g
            p.grad = g
            out.append(g)
        return out


def _tape() -> Tape | None:
    stack = getattr(_active, "stack", None)
    return stack[-1] if stack else None


def _emit(data: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    tape = _tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape._record(out, inputs, backward)
    return out


# ---------------------------------------------------------------------------
# ops


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    A, B = a.data, b.data
    return _emit(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def sparse_matmul(a: sp.spmatrix, b) -> Tensor:
    """``a @ b`` for a constant sparse ``a``; differentiable in ``b`` only."""
    b = _as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    a = sp.csr_matrix(a)
    a_t = a.T.tocsr()
    return _emit(np.asarray(a @ b.data), (b,), lambda g: (np.asarray(a_t @ g),))


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    return _emit(a.data.T.copy(), (a,), lambda g: (g.T,))


def add_bias(x, b) -> Tensor:
    """Add a row vector ``b`` (shape ``(cols,)``) to every row of ``x``."""
    x, b = _as_tensor(x), _as_tensor(b)
    if b.data.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"bias shape {b.shape} does not match {x.shape}")
    return _emit(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)))


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return _emit(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid_array(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    s = sigmoid_array(x.data)
    return _emit(s, (x,), lambda g: (g * s * (1.0 - s),))


def dropout(x, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; ``rate=0`` is the identity."""
    x = _as_tensor(x)
    if rate <= 0.0:
        return x
    keep = (rng.random(x.shape, dtype=np.float32) >= rate) / (1.0 - rate)
    return _emit(x.data * keep, (x,), lambda g: (g * keep,))


def mean_pool_matrix(groups: Sequence[Iterable[int]], num_rows: int, allow_empty: bool = False) -> sp.csr_matrix:
    """Sparse ``len(groups) x num_rows`` averaging operator."""
    rows, cols, vals = [], [], []
    for i, grp in enumerate(groups):
        idx = np.unique(np.fromiter((int(j) for j in grp), dtype=np.int64))
        if idx.size == 0:
            if allow_empty:
                continue
            raise ShapeError(f"group {i} is empty")
        if idx[0] < 0 or idx[-1] >= num_rows:
            raise ShapeError(f"group {i} indexes outside [0, {num_rows})")
        rows.append(np.full(idx.size, i))
        cols.append(idx)
        vals.append(np.full(idx.size, 1.0 / idx.size))
    if not rows:
        return sp.csr_matrix((len(groups), num_rows))
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(len(groups), num_rows),
    )


def group_mean(x, groups) -> Tensor:
    """Row ``i`` of the output is the mean of ``x`` over ``groups[i]``.

    ``groups`` is either a list of index collections or a prebuilt sparse
    averaging operator (see :func:`mean_pool_matrix`).
    """
    x = _as_tensor(x)
    pool = groups if sp.issparse(groups) else mean_pool_matrix(groups, x.shape[0])
    if pool.shape[1] != x.shape[0]:
        raise ShapeError(f"pool expects {pool.shape[1]} rows, got {x.shape[0]}")
    pool = sp.csr_matrix(pool)
    pool_t = pool.T.tocsr()
    return _emit(np.asarray(pool @ x.data), (x,), lambda g: (np.asarray(pool_t @ g),))


def sum_all(x) -> Tensor:
    x = _as_tensor(x)
    shape = x.shape
    return _emit(np.array(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),))


def bce_loss(pred, target, mask: np.ndarray | None = None) -> Tensor:
    """Summed binary cross-entropy; predictions clamped to ``[1e-12, 1-1e-12]``.

    ``mask`` (same shape, 0/1) restricts the sum to selected entries.
    """
    pred = _as_tensor(pred)
    t = np.asarray(target, dtype=np.float64)
    if t.shape != pred.shape:
        raise ShapeError(f"bce shapes differ: {pred.shape} vs {t.shape}")
    m = np.ones_like(t) if mask is None else np.asarray(mask, dtype=np.float64)
    p = np.clip(pred.data, BCE_CLAMP, 1.0 - BCE_CLAMP)
    loss = -np.sum(m * (t * np.log(p) + (1.0 - t) * np.log1p(-p)))
    inside = (pred.data > BCE_CLAMP) & (pred.data < 1.0 - BCE_CLAMP)

    def back(g):
        return (float(g) * m * inside * (-(t / p) + (1.0 - t) / (1.0 - p)),)

    return _emit(np.array(loss), (pred,), back)


def bce_with_logits_loss(logits, target, mask: np.ndarray | None = None) -> Tensor:
    """``bce_loss(sigmoid(logits), target)`` computed stably in one pass.

    No clamping is needed; gradients are ``sigmoid(z) - t`` per entry.
    ``target`` may be a scipy sparse 0/1 matrix, which avoids dense
    target arithmetic on large, mostly-zero incidence matrices.
    """
    logits = _as_tensor(logits)
    z = logits.data
    if target.shape != z.shape:
        raise ShapeError(f"bce shapes differ: {z.shape} vs {target.shape}")
    if sp.issparse(target):
        coo = sp.coo_matrix(target)
        pos = (coo.row, coo.col)
        t_vals = coo.data.astype(np.float64)
        t = None
    else:
        t = np.asarray(target, dtype=np.float64)
    m = None if mask is None else np.asarray(mask, dtype=np.float64)

    e = np.abs(z)
    np.negative(e, out=e)
    np.exp(e, out=e)  # e = exp(-|z|)
    per = np.log1p(e)
    per += np.maximum(z, 0.0)
    if t is None:
        per[pos] -= z[pos] * t_vals
    else:
        per -= z * t
    loss = per.sum() if m is None else (per * m).sum()
    del per

    def back(g):
        d = e + 1.0
        np.divide(e, d, out=d)  # sigmoid(-|z|)
        np.subtract(1.0, d, out=d, where=z >= 0)  # sigmoid(z)
        if t is None:
            d[pos] -= t_vals
        else:
            d -= t
        if m is not None:
            d *= m
        d *= float(g)
        return (d,)

    return _emit(np.array(loss), (logits,), back)


def softmax_ce_loss(logits, labels, mask: np.ndarray | None = None) -> Tensor:
    """Mean cross-entropy over rows selected by ``mask`` (bool or 0/1)."""
    logits = _as_tensor(logits)
    z = logits.data
    n, c = z.shape
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (n,):
        raise ShapeError(f"labels shape {y.shape} does not match {n} rows")
    if y.size and (y.min() < 0 or y.max() >= c):
        raise ShapeError(f"labels must lie in [0, {c})")
    sel = np.ones(n, dtype=bool) if mask is None else np.asarray(mask).astype(bool)
    k = int(sel.sum())
    if k == 0:
        raise ShapeError("softmax_ce_loss: every row is masked out")
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsum
    rows = np.flatnonzero(sel)
    loss = -logp[rows, y[rows]].sum() / k

    def back(g):
        d = np.zeros_like(z)
        d[rows] = np.exp(logp[rows])
        d[rows, y[rows]] -= 1.0
        return (d * (float(g) / k),)

    return _emit(np.array(loss), (logits,), back)


# ---------------------------------------------------------------------------
# parameters and optimizer


@dataclass
class Linear:
    """Affine map ``x @ weight + bias`` with ``weight`` of shape (in, out)."""

    weight: Tensor
    bias: Tensor | None = None

    @classmethod
    def init(cls, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True) -> "Linear":
        bound = np.sqrt(1.0 / d_in)
        w = Tensor.param(rng.uniform(-bound, bound, size=(d_in, d_out)))
        b = Tensor.param(rng.uniform(-bound, bound, size=d_out)) if bias else None
        return cls(w, b)

    @property
    def d_in(self) -> int:
        return self.weight.shape[0]

    @property
    def d_out(self) -> int:
        return self.weight.shape[1]

    def params(self) -> list[Tensor]:
        return [self.weight] if self.bias is None else [self.weight, self.bias]

    def __call__(self, x) -> Tensor:
        out = sparse_matmul(x, self.weight) if sp.issparse(x) else matmul(x, self.weight)
        return out if self.bias is None else add_bias(out, self.bias)


class Adam:
    """Adam with coupled L2 weight decay on a chosen subset of parameters."""

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 0.01,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
        decay: Sequence[Tensor] = (),
    ):
        self.params = list(params)
        self.lr, self.betas, self.eps = lr, betas, eps
        self.weight_decay = weight_decay
        decay_ids = {id(p) for p in decay}
        self._decay = [id(p) in decay_ids for p in self.params]
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ShapeError("one gradient per parameter expected")
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if g.shape != p.data.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
            if self._decay[i] and self.weight_decay:
                g = g + self.weight_decay * p.data
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            m_hat = self.m[i] / c1
            v_hat = self.v[i] / c2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
