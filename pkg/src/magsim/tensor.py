"""Dense 2-D tensors with reverse-mode automatic differentiation.

Everything is float64 and row-major.  A Tensor participates in gradient
computation only while attached to a Tape; detached tensors are plain
value carriers and never receive gradient.  The tape records operations
in execution order and replays them in reverse for backprop.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, ShapeError, TapeError


class Tape:
    """Ordered record of differentiable operations.

    Recording order equals the reverse order of gradient replay.  A tape
    can be backpropagated through once; re-running backward without
    re-recording is an error.
    """

    def __init__(self):
        self._nodes = []  # backward closures, execution order
        self._consumed = False

    def __len__(self):
        return len(self._nodes)

    def _record(self, backward_fn):
        self._nodes.append(backward_fn)

    def backward(self, loss: "Tensor"):
        if self._consumed:
            raise TapeError("backward already ran on this tape; record a fresh tape")
        if loss.tape is not self:
            raise TapeError("loss tensor is not attached to this tape")
        if loss.data.shape != (1, 1):
            raise ShapeError(f"backward needs a 1x1 scalar, got {loss.data.shape}")
        self._consumed = True
        loss.grad = np.ones((1, 1))
        for fn in reversed(self._nodes):
            fn()
        # break closure->tensor->tape reference cycles so intermediate
        # arrays are freed by refcount, not the cyclic collector
        self._nodes.clear()


class Tensor:
    """A rows x cols float64 matrix, optionally attached to a Tape."""

    __slots__ = ("data", "tape", "grad")

    def __init__(self, data, tape: Tape | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got ndim={arr.ndim}")
        self.data = arr
        self.tape = tape
        self.grad = None

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]

    def _bump(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor({self.rows}x{self.cols}, taped={self.tape is not None})"


def _out_tape(*operands):
    """Tape for an op result: the single tape its operands live on, if any."""
    tapes = {id(t.tape): t.tape for t in operands if isinstance(t, Tensor) and t.tape is not None}
    if len(tapes) > 1:
        raise TapeError("operands live on different tapes")
    return next(iter(tapes.values())) if tapes else None


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise ShapeError(f"matmul: {a.data.shape} x {b.data.shape}")
    tape = _out_tape(a, b)
    out = Tensor(a.data @ b.data, tape)
    if tape is not None:
        a_data, b_data = a.data, b.data

        def backward():
            if out.grad is None:
                return
            if a.tape is tape:
                a._bump(out.grad @ b_data.T)
            if b.tape is tape:
                b._bump(a_data.T @ out.grad)

        tape._record(backward)
    return out


def spmm(adj, h: Tensor) -> Tensor:
    """Row-normalized sparse adjacency times dense: each output row is the
    mean over in-neighbors of ``h``; isolated nodes yield a zero row."""
    from .graph import CsrMatrix  # local import to avoid a cycle

    if not isinstance(adj, CsrMatrix):
        raise TypeError("spmm expects a CsrMatrix adjacency")
    if not adj.normalized:
        raise ContractError(
            f"spmm requires a row-normalized adjacency "
            f"({adj.num_rows}x{adj.num_cols}, normalized=False)"
        )
    if adj.num_cols != h.rows:
        raise ShapeError(f"spmm: adjacency {adj.num_rows}x{adj.num_cols} vs h {h.data.shape}")
    tape = _out_tape(h)
    sp = adj.scipy()
    out = Tensor(sp @ h.data, tape)
    if tape is not None:
        sp_t = sp.T.tocsr()

        def backward():
            if out.grad is None:
                return
            h._bump(sp_t @ out.grad)

        tape._record(backward)
    return out


def relu(x: Tensor) -> Tensor:
    tape = _out_tape(x)
    out = Tensor(np.maximum(x.data, 0.0), tape)
    if tape is not None:
        mask = x.data > 0.0

        def backward():
            if out.grad is None:
                return
            x._bump(out.grad * mask)

        tape._record(backward)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a 1 x cols row vector (bias broadcast)."""
    if a.data.shape != b.data.shape and not (b.rows == 1 and b.cols == a.cols):
        raise ShapeError(f"add: {a.data.shape} + {b.data.shape}")
    tape = _out_tape(a, b)
    out = Tensor(a.data + b.data, tape)
    if tape is not None:
        broadcast = b.data.shape != a.data.shape

        def backward():
            if out.grad is None:
                return
            if a.tape is tape:
                a._bump(out.grad)
            if b.tape is tape:
                b._bump(out.grad.sum(axis=0, keepdims=True) if broadcast else out.grad)

        tape._record(backward)
    return out


def scale(x: Tensor, c: float) -> Tensor:
    tape = _out_tape(x)
    out = Tensor(x.data * c, tape)
    if tape is not None:

        def backward():
            if out.grad is None:
                return
            x._bump(out.grad * c)

        tape._record(backward)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product of same-shape tensors."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul: {a.data.shape} * {b.data.shape}")
    tape = _out_tape(a, b)
    out = Tensor(a.data * b.data, tape)
    if tape is not None:
        a_data, b_data = a.data, b.data

        def backward():
            if out.grad is None:
                return
            if a.tape is tape:
                a._bump(out.grad * b_data)
            if b.tape is tape:
                b._bump(out.grad * a_data)

        tape._record(backward)
    return out


def concat_cols(tensors) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat_cols of nothing")
    n = tensors[0].rows
    if any(t.rows != n for t in tensors):
        raise ShapeError(f"concat_cols: row counts differ: {[t.rows for t in tensors]}")
    tape = _out_tape(*tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=1), tape)
    if tape is not None:
        widths = [t.cols for t in tensors]
        offsets = np.cumsum([0] + widths)

        def backward():
            if out.grad is None:
                return
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.tape is tape:
                    t._bump(out.grad[:, lo:hi])

        tape._record(backward)
    return out


def row_select(x: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.rows):
        raise ShapeError(f"row_select: index out of range for {x.rows} rows")
    tape = _out_tape(x)
    out = Tensor(x.data[idx], tape)
    if tape is not None:

        def backward():
            if out.grad is None:
                return
            g = np.zeros_like(x.data)
            np.add.at(g, idx, out.grad)
            x._bump(g)

        tape._record(backward)
    return out


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout: train-time activations are divided by the keep
    probability so eval mode is the identity."""
    if not 0.0 <= rate < 1.0:
        raise ShapeError(f"dropout rate must be in [0,1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.data.shape) < keep) / keep
    tape = _out_tape(x)
    out = Tensor(x.data * mask, tape)
    if tape is not None:

        def backward():
            if out.grad is None:
                return
            x._bump(out.grad * mask)

        tape._record(backward)
    return out


def sum_all(x: Tensor) -> Tensor:
    """Reduce to a 1x1 scalar tensor."""
    tape = _out_tape(x)
    out = Tensor([[x.data.sum()]], tape)
    if tape is not None:

        def backward():
            if out.grad is None:
                return
            x._bump(np.full_like(x.data, out.grad[0, 0]))

        tape._record(backward)
    return out


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Numerically stabilized row softmax (max subtraction)."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy_smoothed(logits: Tensor, labels, smoothing: float) -> Tensor:
    """Mean smoothed negative log-likelihood over rows.

    The target distribution puts 1-s on the true class and s/(C-1) on each
    of the others.  Softmax and log are fused with max subtraction.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.data.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} vs {n} logit rows")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ShapeError(f"label out of range [0,{c})")
    if not 0.0 <= smoothing < 1.0:
        raise ShapeError(f"smoothing must be in [0,1), got {smoothing}")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z

    target = np.full((n, c), smoothing / (c - 1) if c > 1 else 0.0)
    target[np.arange(n), labels] = 1.0 - smoothing

    loss = -(target * log_p).sum() / n
    tape = _out_tape(logits)
    out = Tensor([[loss]], tape)
    if tape is not None:
        p = np.exp(log_p)

        def backward():
            if out.grad is None:
                return
            logits._bump(out.grad[0, 0] * (p - target) / n)

        tape._record(backward)
    return out


class AdamState:
    """Per-parameter first/second moment buffers plus a step counter."""

    def __init__(self):
        self.step = 0
        self.m = {}
        self.v = {}


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              weight_decay: float = 0.0, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8):
    """One Adam update, in place on the ``params`` arrays.

    Weight decay is added to the raw gradient before the moment updates;
    that single convention is used everywhere in the package.
    """
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if weight_decay:
            g = g + weight_decay * p
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
