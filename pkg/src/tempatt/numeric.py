"""Dense 2-D float64 arrays with reverse-mode gradient computation.

Two things live here: ``Matrix``, a thin wrapper around a C-contiguous
float64 numpy array, and ``GradTape``, an append-only record of primitive
operations that can be replayed forward or swept backward to accumulate
gradients.

Primitives run untaped (plain numpy) unless a ``GradTape`` is active as a
context manager. Live execution and ``GradTape.replay`` share the same
forward kernels, so a replay reproduces every recorded output bit for bit;
leaf values are snapshotted at registration time, so later in-place updates
of parameters (e.g. an optimizer step) do not invalidate the tape.

A tape and the matrices recorded on it form a single-owner unit. The active
tape is tracked per execution context, so distinct tapes may run on distinct
threads without shared state.
"""

from __future__ import annotations

import contextvars
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError

_ACTIVE_TAPE: contextvars.ContextVar["GradTape | None"] = contextvars.ContextVar(
    "tempatt_active_tape", default=None
)

# GELU tanh-approximation constants (exact-erf form not needed at the
# tolerances used anywhere in this package).
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


class Matrix:
    """A rows x cols matrix of 64-bit reals, stored row-major.

    Entries are finite by construction; any operation that would produce
    NaN or Inf raises ``NumericError`` instead of returning.
    """

    __slots__ = ("array",)

    def __init__(self, values, *, copy: bool = True):
        if copy:
            arr = np.array(values, dtype=np.float64, order="C")
        else:
            arr = np.ascontiguousarray(values, dtype=np.float64)
        if arr.ndim == 1:
            raise ShapeError("matrix must be 2-D; wrap row data as [[...]]")
        if arr.ndim != 2:
            raise ShapeError(f"matrix must be 2-D, got {arr.ndim}-D")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"matrix must be nonempty, got {arr.shape[0]}x{arr.shape[1]}")
        if not np.isfinite(arr).all():
            raise NumericError("matrix entries must be finite")
        self.array = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Matrix":
        # Trusted path for op outputs: fresh, finite, C-order float64 2-D.
        m = object.__new__(cls)
        m.array = arr
        return m

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "Matrix":
        return cls(np.zeros((rows, cols)), copy=False)

    @property
    def rows(self) -> int:
        return self.array.shape[0]

    @property
    def cols(self) -> int:
        return self.array.shape[1]

    @property
    def data(self) -> np.ndarray:
        """Row-major flat view of the entries (read-only)."""
        flat = self.array.ravel()
        flat.flags.writeable = False
        return flat

    def tolist(self) -> list[list[float]]:
        return self.array.tolist()

    def copy(self) -> "Matrix":
        return Matrix(self.array)

    def __repr__(self) -> str:
        return f"Matrix({self.rows}x{self.cols})"


@dataclass
class _Node:
    op: str  # "leaf" or a primitive name
    inputs: tuple[int, ...]  # node indices of the inputs, empty for leaves
    value: np.ndarray  # output snapshot
    meta: tuple  # op constants needed for replay / backward


class GradTape:
    """Ordered record of primitive operations for reverse accumulation.

    Use as a context manager; primitives executed inside the ``with`` block
    are recorded. ``backward`` then visits the record once, in reverse
    order (creation order is topological by construction), and accumulates
    a gradient for every leaf. Leaves never reached from the loss get a
    zero gradient.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._index: dict[int, int] = {}  # id(Matrix) -> node index
        self._keepalive: list[Matrix] = []  # pins ids for the tape's lifetime
        self._grads: list[np.ndarray | None] | None = None
        self._token = None

    def __enter__(self) -> "GradTape":
        if _ACTIVE_TAPE.get() is not None:
            raise ContractError("a GradTape is already active in this context")
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self._nodes)

    def watch(self, m: Matrix) -> None:
        """Register ``m`` as a leaf so it is guaranteed a gradient entry."""
        self._leaf(m)

    def _leaf(self, m: Matrix) -> int:
        idx = self._index.get(id(m))
        if idx is None:
            idx = len(self._nodes)
            # Snapshot: in-place updates of the matrix after recording must
            # not change what the tape saw.
            self._nodes.append(_Node("leaf", (), m.array.copy(), ()))
            self._index[id(m)] = idx
            self._keepalive.append(m)
        return idx

    def _record(self, op: str, inputs: Sequence[Matrix], out: Matrix, meta: tuple) -> None:
        in_idx = tuple(self._leaf(m) for m in inputs)
        idx = len(self._nodes)
        self._nodes.append(_Node(op, in_idx, out.array, meta))
        self._index[id(out)] = idx
        self._keepalive.append(out)

    def grad(self, m: Matrix) -> np.ndarray:
        """Gradient of the last ``backward`` loss w.r.t. ``m`` (zeros if unreachable)."""
        if self._grads is None:
            raise ContractError("backward has not been run on this tape")
        idx = self._index.get(id(m))
        if idx is None:
            return np.zeros_like(m.array)
        g = self._grads[idx]
        return np.zeros_like(m.array) if g is None else g

    def replay(self) -> None:
        """Recompute every op node from the recorded leaves.

        Raises ``NumericError`` if any recomputed output differs bit for bit
        from the recorded one.
        """
        values: list[np.ndarray] = []
        for node in self._nodes:
            if node.op == "leaf":
                values.append(node.value)
                continue
            out = _FORWARD[node.op]([values[i] for i in node.inputs], node.meta)
            if not np.array_equal(out, node.value):
                raise NumericError(f"replay mismatch in op {node.op!r}")
            values.append(out)


def backward(tape: GradTape, loss: Matrix) -> None:
    """Reverse accumulation from ``loss`` over everything recorded on ``tape``.

    ``loss`` must be a 1x1 matrix recorded on the tape. Afterwards
    ``tape.grad(m)`` returns d(loss)/d(m) for any matrix the tape saw.
    """
    idx = tape._index.get(id(loss))
    if idx is None:
        raise ContractError("loss was not recorded on this tape")
    if loss.array.shape != (1, 1):
        raise ContractError(f"loss must be a 1x1 scalar, got {loss.rows}x{loss.cols}")

    grads: list[np.ndarray | None] = [None] * len(tape._nodes)
    grads[idx] = np.ones((1, 1))
    for i in range(idx, -1, -1):
        g = grads[i]
        node = tape._nodes[i]
        if g is None or node.op == "leaf":
            continue
        values = [tape._nodes[j].value for j in node.inputs]
        in_grads = _BACKWARD[node.op](g, node, values)
        for j, gj in zip(node.inputs, in_grads):
            if gj is None:
                continue
            grads[j] = gj if grads[j] is None else grads[j] + gj
    tape._grads = grads


# ---------------------------------------------------------------------------
# Forward kernels (shared between live execution and replay).
# ---------------------------------------------------------------------------


def _fwd_matmul(ins, meta):
    return ins[0] @ ins[1]


def _fwd_transpose(ins, meta):
    return np.ascontiguousarray(ins[0].T)


def _fwd_add(ins, meta):
    return ins[0] + ins[1]


def _fwd_add_rowvec(ins, meta):
    return ins[0] + ins[1]


def _fwd_scale(ins, meta):
    return ins[0] * meta[0]


def _fwd_mul_rows(ins, meta):
    s = np.asarray(meta[0], dtype=np.float64)
    return ins[0] * s[:, None]


def _fwd_softmax_rows(ins, meta):
    x = ins[0]
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _fwd_layer_norm(ins, meta):
    x, gain, bias = ins
    eps = meta[0]
    mu = x.mean(axis=1, keepdims=True)
    d = x - mu
    var = (d * d).mean(axis=1, keepdims=True)
    xhat = d / np.sqrt(var + eps)
    return xhat * gain + bias


def _fwd_gelu(ins, meta):
    x = ins[0]
    u = _GELU_C * (x + _GELU_A * x**3)
    return 0.5 * x * (1.0 + np.tanh(u))


def _fwd_gather_rows(ins, meta):
    ids = np.asarray(meta[0], dtype=np.intp)
    return ins[0][ids, :].copy()


def _fwd_concat_cols(ins, meta):
    return np.concatenate(ins, axis=1)


def _fwd_frobenius(ins, meta):
    a = ins[0]
    return np.array([[math.sqrt(float((a * a).sum()))]])


def _fwd_div_scalar(ins, meta):
    return ins[0] / ins[1][0, 0]


def _fwd_cross_entropy_rows(ins, meta):
    logits = ins[0]
    targets = np.asarray(meta[0], dtype=np.intp)
    m = logits.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True))
    nll = lse[:, 0] - logits[np.arange(logits.shape[0]), targets]
    return np.array([[nll.mean()]])


_FORWARD: dict[str, Callable] = {
    "matmul": _fwd_matmul,
    "transpose": _fwd_transpose,
    "add": _fwd_add,
    "add_rowvec": _fwd_add_rowvec,
    "scale": _fwd_scale,
    "mul_rows": _fwd_mul_rows,
    "softmax_rows": _fwd_softmax_rows,
    "layer_norm": _fwd_layer_norm,
    "gelu": _fwd_gelu,
    "gather_rows": _fwd_gather_rows,
    "concat_cols": _fwd_concat_cols,
    "frobenius": _fwd_frobenius,
    "div_scalar": _fwd_div_scalar,
    "cross_entropy_rows": _fwd_cross_entropy_rows,
}


# ---------------------------------------------------------------------------
# Backward kernels. Each returns one gradient (or None) per input, aligned
# with the node's input order. Returned arrays are never mutated afterwards.
# ---------------------------------------------------------------------------


def _bwd_matmul(g, node, ins):
    a, b = ins
    return [g @ b.T, a.T @ g]


def _bwd_transpose(g, node, ins):
    return [np.ascontiguousarray(g.T)]


def _bwd_add(g, node, ins):
    return [g, g]


def _bwd_add_rowvec(g, node, ins):
    return [g, g.sum(axis=0, keepdims=True)]


def _bwd_scale(g, node, ins):
    return [g * node.meta[0]]


def _bwd_mul_rows(g, node, ins):
    s = np.asarray(node.meta[0], dtype=np.float64)
    return [g * s[:, None]]


def _bwd_softmax_rows(g, node, ins):
    y = node.value
    return [y * (g - (g * y).sum(axis=1, keepdims=True))]


def _bwd_layer_norm(g, node, ins):
    x, gain, bias = ins
    eps = node.meta[0]
    m = x.shape[1]
    mu = x.mean(axis=1, keepdims=True)
    d = x - mu
    var = (d * d).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = d * inv
    dxhat = g * gain
    dx = inv * (
        dxhat
        - dxhat.mean(axis=1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
    )
    dgain = (g * xhat).sum(axis=0, keepdims=True)
    dbias = g.sum(axis=0, keepdims=True)
    return [dx, dgain, dbias]


def _bwd_gelu(g, node, ins):
    x = ins[0]
    u = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(u)
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return [g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)]


def _bwd_gather_rows(g, node, ins):
    ids = np.asarray(node.meta[0], dtype=np.intp)
    gz = np.zeros_like(ins[0])
    np.add.at(gz, ids, g)
    return [gz]


def _bwd_concat_cols(g, node, ins):
    widths = node.meta[0]
    out = []
    start = 0
    for w in widths:
        out.append(np.ascontiguousarray(g[:, start : start + w]))
        start += w
    return out


def _bwd_frobenius(g, node, ins):
    a = ins[0]
    f = node.value[0, 0]
    if f == 0.0:
        return [np.zeros_like(a)]
    return [a * (g[0, 0] / f)]


def _bwd_div_scalar(g, node, ins):
    a, s = ins
    s0 = s[0, 0]
    ga = g / s0
    gs = np.array([[-float((g * a).sum()) / (s0 * s0)]])
    return [ga, gs]


def _bwd_cross_entropy_rows(g, node, ins):
    logits = ins[0]
    targets = np.asarray(node.meta[0], dtype=np.intp)
    n = logits.shape[0]
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    p = e / e.sum(axis=1, keepdims=True)
    p[np.arange(n), targets] -= 1.0
    return [p * (g[0, 0] / n)]


_BACKWARD: dict[str, Callable] = {
    "matmul": _bwd_matmul,
    "transpose": _bwd_transpose,
    "add": _bwd_add,
    "add_rowvec": _bwd_add_rowvec,
    "scale": _bwd_scale,
    "mul_rows": _bwd_mul_rows,
    "softmax_rows": _bwd_softmax_rows,
    "layer_norm": _bwd_layer_norm,
    "gelu": _bwd_gelu,
    "gather_rows": _bwd_gather_rows,
    "concat_cols": _bwd_concat_cols,
    "frobenius": _bwd_frobenius,
    "div_scalar": _bwd_div_scalar,
    "cross_entropy_rows": _bwd_cross_entropy_rows,
}


# ---------------------------------------------------------------------------
# Public operations.
# ---------------------------------------------------------------------------


def _apply(op: str, inputs: tuple[Matrix, ...], meta: tuple = ()) -> Matrix:
    out_arr = _FORWARD[op]([m.array for m in inputs], meta)
    if not np.isfinite(out_arr).all():
        raise NumericError(f"{op} produced non-finite values")
    out = Matrix._wrap(np.ascontiguousarray(out_arr))
    tape = _ACTIVE_TAPE.get()
    if tape is not None:
        tape._record(op, inputs, out, meta)
    return out


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product a @ b."""
    if a.cols != b.rows:
        raise ShapeError(f"matmul shape mismatch: {a.rows}x{a.cols} @ {b.rows}x{b.cols}")
    return _apply("matmul", (a, b))


def transpose(a: Matrix) -> Matrix:
    return _apply("transpose", (a,))


def add(a: Matrix, b: Matrix) -> Matrix:
    """Elementwise sum of two same-shape matrices."""
    if a.array.shape != b.array.shape:
        raise ShapeError(f"add shape mismatch: {a.rows}x{a.cols} + {b.rows}x{b.cols}")
    return _apply("add", (a, b))


def add_rowvec(a: Matrix, v: Matrix) -> Matrix:
    """Add a 1 x cols row vector to every row of ``a``."""
    if v.rows != 1 or v.cols != a.cols:
        raise ShapeError(
            f"add_rowvec needs a 1x{a.cols} vector, got {v.rows}x{v.cols} for {a.rows}x{a.cols}"
        )
    return _apply("add_rowvec", (a, v))


def scale(a: Matrix, c: float) -> Matrix:
    """Multiply every entry by the constant ``c`` (not differentiable in c)."""
    if not math.isfinite(c):
        raise ContractError("scale constant must be finite")
    return _apply("scale", (a,), (float(c),))


def mul_rows(a: Matrix, scales: Sequence[float]) -> Matrix:
    """Multiply row i by the constant ``scales[i]``."""
    s = tuple(float(v) for v in scales)
    if len(s) != a.rows:
        raise ShapeError(f"mul_rows needs {a.rows} scales, got {len(s)}")
    if not all(math.isfinite(v) for v in s):
        raise ContractError("row scales must be finite")
    return _apply("mul_rows", (a,), (s,))


def softmax_rows(m: Matrix) -> Matrix:
    """Row-wise softmax, stabilized by subtracting each row's max."""
    return _apply("softmax_rows", (m,))


def layer_norm(x: Matrix, gain: Matrix, bias: Matrix, eps: float = 1e-5) -> Matrix:
    """Normalize each row to mean 0 / variance 1 (with ``eps``), then scale and shift."""
    if gain.rows != 1 or gain.cols != x.cols or bias.rows != 1 or bias.cols != x.cols:
        raise ShapeError(
            f"layer_norm needs 1x{x.cols} gain/bias, got {gain.rows}x{gain.cols} "
            f"and {bias.rows}x{bias.cols}"
        )
    if not eps > 0:
        raise ContractError("layer_norm eps must be > 0")
    return _apply("layer_norm", (x, gain, bias), (float(eps),))


def gelu(a: Matrix) -> Matrix:
    """GELU activation (tanh approximation)."""
    return _apply("gelu", (a,))


def gather_rows(a: Matrix, ids: Sequence[int]) -> Matrix:
    """Select rows ``ids`` of ``a`` (differentiable table lookup)."""
    ids_t = tuple(int(i) for i in ids)
    if len(ids_t) == 0:
        raise ContractError("gather_rows needs at least one row id")
    if any(i < 0 or i >= a.rows for i in ids_t):
        raise ShapeError(f"gather_rows id out of range for {a.rows} rows: {ids_t}")
    return _apply("gather_rows", (a,), (ids_t,))


def concat_cols(parts: Sequence[Matrix]) -> Matrix:
    """Concatenate matrices with equal row counts along columns."""
    if len(parts) == 0:
        raise ContractError("concat_cols needs at least one matrix")
    rows = parts[0].rows
    if any(p.rows != rows for p in parts):
        raise ShapeError("concat_cols inputs must share the row count")
    widths = tuple(p.cols for p in parts)
    return _apply("concat_cols", tuple(parts), (widths,))


def frobenius(m: Matrix) -> Matrix:
    """Frobenius norm as a differentiable 1x1 matrix."""
    return _apply("frobenius", (m,))


def frobenius_norm(m: Matrix) -> float:
    """Frobenius norm as a plain float (no tape involvement)."""
    return math.sqrt(float((m.array * m.array).sum()))


def div_scalar(a: Matrix, s: Matrix) -> Matrix:
    """Divide ``a`` by the 1x1 scalar ``s`` (differentiable in both)."""
    if s.array.shape != (1, 1):
        raise ShapeError(f"div_scalar divisor must be 1x1, got {s.rows}x{s.cols}")
    if s.array[0, 0] == 0.0:
        raise NumericError("division by zero scalar")
    return _apply("div_scalar", (a, s))


def cross_entropy_rows(logits: Matrix, targets: Sequence[int]) -> Matrix:
    """Mean negative log-likelihood of ``targets`` under row-wise softmax (1x1)."""
    tgt = tuple(int(t) for t in targets)
    if len(tgt) != logits.rows:
        raise ShapeError(f"cross_entropy_rows needs {logits.rows} targets, got {len(tgt)}")
    if any(t < 0 or t >= logits.cols for t in tgt):
        raise ContractError(f"target id out of range for {logits.cols} classes")
    return _apply("cross_entropy_rows", (logits,), (tgt,))
