"""
diffcore.py
Reverse-mode differentiable numerics for densea.

A Tape records every operation as a node (op-kind, input node ids, cached
forward value, backward rule). Matrix handles are 2-D float64 values bound to
one tape. Parameters are named trainable blocks that are bound to a fresh tape
on every forward pass; Tape.backward scatters the adjoints into their .grad
buffers.
"""

import logging
import hashlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np
from scipy.special import expit

# Probability floor inside the cross-entropy terms.
EPS_PROB = 1e-12


class DimensionError(ValueError):
    """Operand shapes do not fit the operation."""


class NumericError(ArithmeticError):
    """A forward value went non-finite, or the tape was misused."""


# ------------------------------------------------------------
# Tape & Matrix
# ------------------------------------------------------------

@dataclass
class _Node:
    op: str
    inputs: tuple[int, ...]
    value: np.ndarray
    backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]]


class Tape:
    """Append-only computation record. One tape per forward pass."""

    def __init__(self) -> None:
        self.nodes: list[_Node] = []
        self.grads: list[Optional[np.ndarray]] = []
        self.clamped = 0  # cross-entropy probability clamps on this tape
        self._bound: dict[int, tuple["Parameter", "Matrix"]] = {}
        self._backward_done = False

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, op: str, inputs: Sequence["Matrix"], value, backward=None) -> "Matrix":
        value = np.asarray(value, dtype=np.float64)
        if value.ndim != 2:
            raise DimensionError(f"{op}: expected a 2-D value, got shape {value.shape}")
        if not np.all(np.isfinite(value)):
            raise NumericError(f"Non-finite value produced by '{op}'")
        for m in inputs:
            if m.tape is not self:
                raise DimensionError(f"{op}: operands belong to different tapes")
        self.nodes.append(_Node(op, tuple(m.id for m in inputs), value, backward))
        return Matrix(self, len(self.nodes) - 1)

    def constant(self, value) -> "Matrix":
        """Leaf node that receives no parameter update."""
        arr = np.array(value, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        return self.record("const", (), arr)

    def bind(self, param: "Parameter") -> "Matrix":
        """Leaf node for a parameter; each parameter is bound once per tape."""
        hit = self._bound.get(id(param))
        if hit is not None:
            return hit[1]
        leaf = self.record(f"param:{param.name}", (), param.value.copy())
        self._bound[id(param)] = (param, leaf)
        return leaf

    def backward(self, root: "Matrix") -> None:
        """Accumulate adjoints from a 1x1 root, then scatter into parameter grads."""
        if self._backward_done:
            raise NumericError("backward() already ran on this tape; build a new tape")
        if root.tape is not self:
            raise DimensionError("backward root belongs to another tape")
        if root.shape != (1, 1):
            raise DimensionError(f"backward root must be 1x1, got {root.shape}")

        grads: list[Optional[np.ndarray]] = [None] * len(self.nodes)
        grads[root.id] = np.ones((1, 1))

        # Topological order is the insertion order; each node is visited once.
        for i in range(root.id, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or node.backward is None:
                continue
            for j, gin in zip(node.inputs, node.backward(g)):
                if gin is None:
                    continue
                grads[j] = gin if grads[j] is None else grads[j] + gin

        self.grads = grads
        self._backward_done = True

        for param, leaf in self._bound.values():
            g = grads[leaf.id]
            if g is not None and param.trainable:
                param.grad += g

    def grad(self, m: "Matrix") -> np.ndarray:
        """Adjoint of a node after backward (zeros when unreached)."""
        if not self._backward_done:
            raise NumericError("grad() requested before backward()")
        g = self.grads[m.id]
        return np.zeros_like(m.value) if g is None else g


class Matrix:
    """Handle to one tape node."""

    __slots__ = ("tape", "id")

    def __init__(self, tape: Tape, node_id: int) -> None:
        self.tape = tape
        self.id = node_id

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.id].value

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    def item(self) -> float:
        if self.shape != (1, 1):
            raise DimensionError(f"item() needs a 1x1 matrix, got {self.shape}")
        return float(self.value[0, 0])

    def __repr__(self) -> str:
        return f"Matrix(shape={self.shape}, node={self.id})"

    def _lift(self, other) -> "Matrix":
        return other if isinstance(other, Matrix) else self.tape.constant(other)

    def __add__(self, other):
        return add(self, self._lift(other))

    def __radd__(self, other):
        return add(self._lift(other), self)

    def __sub__(self, other):
        return sub(self, self._lift(other))

    def __rsub__(self, other):
        return sub(self._lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, self._lift(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, self._lift(other))


# ------------------------------------------------------------
# Parameters & Modules
# ------------------------------------------------------------

@dataclass(eq=False)
class Parameter:
    name: str
    value: np.ndarray
    trainable: bool = True
    grad: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.value = np.array(self.value, dtype=np.float64)
        if self.value.ndim != 2:
            raise DimensionError(f"Parameter '{self.name}' must be 2-D, got {self.value.shape}")
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def size(self) -> int:
        return int(self.value.size)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)


def uniform_init(rng: np.random.Generator, shape: tuple[int, int], fan_in: int) -> np.ndarray:
    """Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Container of Parameters and sub-Modules, walked in attribute order."""

    def _children(self) -> Iterator[tuple[str, object]]:
        for key, val in vars(self).items():
            if isinstance(val, (Parameter, Module)):
                yield key, val
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, (Parameter, Module)):
                        yield key, item

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        seen: set[str] = set()
        for _, child in self._children():
            params = [child] if isinstance(child, Parameter) else child.parameters()
            for p in params:
                if p.name in seen:
                    raise ValueError(f"Duplicate parameter name '{p.name}'")
                seen.add(p.name)
                out.append(p)
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            if p.name not in state:
                raise KeyError(f"Missing parameter '{p.name}' in state")
            arr = np.asarray(state[p.name], dtype=np.float64)
            if arr.shape != p.shape:
                raise DimensionError(f"'{p.name}': expected {p.shape}, got {arr.shape}")
            p.value = arr.copy()
            p.zero_grad()

    def digest(self) -> str:
        """SHA-256 over every parameter value, in order."""
        h = hashlib.sha256()
        for p in self.parameters():
            h.update(p.name.encode("utf-8"))
            h.update(np.ascontiguousarray(p.value).tobytes())
        return h.hexdigest()


class Linear(Module):
    """Row-vector affine map x @ W + b."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, name: str) -> None:
        self.W = Parameter(f"{name}.W", uniform_init(rng, (in_dim, out_dim), in_dim))
        self.b = Parameter(f"{name}.b", uniform_init(rng, (1, out_dim), in_dim))

    def __call__(self, tape: Tape, x: Matrix) -> Matrix:
        return add(matmul(x, tape.bind(self.W)), tape.bind(self.b))


class LSTMCell(Module):
    """Single LSTM cell; gate order i, f, o, g along the 4*hidden axis."""

    def __init__(self, in_dim: int, hidden_dim: int, rng: np.random.Generator, name: str) -> None:
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        fan_in = in_dim + hidden_dim
        self.W = Parameter(f"{name}.W", uniform_init(rng, (fan_in, 4 * hidden_dim), fan_in))
        self.b = Parameter(f"{name}.b", uniform_init(rng, (1, 4 * hidden_dim), fan_in))


def count_trainable(module: Module) -> int:
    return sum(p.size for p in module.parameters() if p.trainable)


# ------------------------------------------------------------
# Elementwise / structural ops
# ------------------------------------------------------------

def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _check_broadcast(op: str, a: Matrix, b: Matrix) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise DimensionError(f"{op}: cannot combine shapes {a.shape} and {b.shape}")


def add(a: Matrix, b: Matrix) -> Matrix:
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return a.tape.record(
        "add", (a, b), a.value + b.value,
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def sub(a: Matrix, b: Matrix) -> Matrix:
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return a.tape.record(
        "sub", (a, b), a.value - b.value,
        lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)),
    )


def mul(a: Matrix, b: Matrix) -> Matrix:
    _check_broadcast("mul", a, b)
    av, bv = a.value, b.value
    return a.tape.record(
        "mul", (a, b), av * bv,
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def scale(a: Matrix, k: float) -> Matrix:
    return a.tape.record("scale", (a,), a.value * k, lambda g: (g * k,))


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product; a.cols must equal b.rows."""
    if a.tape is not b.tape:
        raise DimensionError("matmul: operands belong to different tapes")
    if a.cols != b.rows:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    av, bv = a.value, b.value
    return a.tape.record("matmul", (a, b), av @ bv, lambda g: (g @ bv.T, av.T @ g))


def transpose(a: Matrix) -> Matrix:
    return a.tape.record("transpose", (a,), a.value.T, lambda g: (g.T,))


def sigmoid(a: Matrix) -> Matrix:
    y = expit(a.value)
    return a.tape.record("sigmoid", (a,), y, lambda g: (g * y * (1.0 - y),))


def tanh(a: Matrix) -> Matrix:
    y = np.tanh(a.value)
    return a.tape.record("tanh", (a,), y, lambda g: (g * (1.0 - y * y),))


def exp(a: Matrix) -> Matrix:
    with np.errstate(over="ignore"):
        y = np.exp(a.value)
    return a.tape.record("exp", (a,), y, lambda g: (g * y,))


def log(a: Matrix) -> Matrix:
    x = a.value
    if np.any(x <= 0):
        raise NumericError("log of a non-positive value")
    return a.tape.record("log", (a,), np.log(x), lambda g: (g / x,))


def clamped_log(a: Matrix, floor: float = EPS_PROB) -> Matrix:
    """log(max(a, floor)); no gradient through clamped entries."""
    x = a.value
    live = x > floor
    safe = np.where(live, x, floor)
    return a.tape.record("clamped_log", (a,), np.log(safe), lambda g: (np.where(live, g / safe, 0.0),))


def softplus(a: Matrix) -> Matrix:
    x = a.value
    return a.tape.record("softplus", (a,), np.logaddexp(0.0, x), lambda g: (g * expit(x),))


def softmax_row(v: Matrix) -> Matrix:
    """Row-wise softmax with max-subtraction."""
    if v.cols == 0 or v.rows == 0:
        raise DimensionError("softmax_row: empty input")
    z = v.value - v.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)
    return v.tape.record(
        "softmax", (v,), y,
        lambda g: (y * (g - (g * y).sum(axis=1, keepdims=True)),),
    )


def concat_cols(parts: Sequence[Matrix]) -> Matrix:
    if not parts:
        raise DimensionError("concat_cols: nothing to concatenate")
    rows = {p.rows for p in parts}
    if len(rows) != 1:
        raise DimensionError(f"concat_cols: row counts differ {[p.shape for p in parts]}")
    widths = [p.cols for p in parts]
    bounds = np.cumsum([0] + widths)

    def _back(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return parts[0].tape.record("concat_cols", tuple(parts), np.hstack([p.value for p in parts]), _back)


def stack_rows(parts: Sequence[Matrix]) -> Matrix:
    if not parts:
        raise DimensionError("stack_rows: nothing to stack")
    cols = {p.cols for p in parts}
    if len(cols) != 1:
        raise DimensionError(f"stack_rows: column counts differ {[p.shape for p in parts]}")
    heights = [p.rows for p in parts]
    bounds = np.cumsum([0] + heights)

    def _back(g):
        return tuple(g[bounds[i]:bounds[i + 1], :] for i in range(len(parts)))

    return parts[0].tape.record("stack_rows", tuple(parts), np.vstack([p.value for p in parts]), _back)


def slice_cols(a: Matrix, start: int, stop: int) -> Matrix:
    if not 0 <= start < stop <= a.cols:
        raise DimensionError(f"slice_cols: [{start}:{stop}] outside {a.shape}")
    shape = a.shape

    def _back(g):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return (out,)

    return a.tape.record("slice_cols", (a,), a.value[:, start:stop], _back)


def row(a: Matrix, i: int) -> Matrix:
    if not 0 <= i < a.rows:
        raise DimensionError(f"row: index {i} outside {a.shape}")
    shape = a.shape

    def _back(g):
        out = np.zeros(shape)
        out[i:i + 1, :] = g
        return (out,)

    return a.tape.record("row", (a,), a.value[i:i + 1, :], _back)


def sum_all(a: Matrix) -> Matrix:
    shape = a.shape
    return a.tape.record("sum", (a,), a.value.sum().reshape(1, 1), lambda g: (np.full(shape, g[0, 0]),))


def total(terms: Iterable[Matrix]) -> Matrix:
    """Sum of 1x1 terms in iteration order."""
    terms = list(terms)
    if not terms:
        raise DimensionError("total: no terms")
    acc = terms[0]
    for t in terms[1:]:
        acc = add(acc, t)
    return acc


# ------------------------------------------------------------
# Losses
# ------------------------------------------------------------

def _check_simplex(op: str, dist: Matrix) -> None:
    if dist.rows != 1:
        raise DimensionError(f"{op}: expected a row vector, got {dist.shape}")
    s = dist.value.sum()
    if abs(s - 1.0) > 1e-6:
        raise NumericError(f"{op}: prediction is not on the simplex (sum={s:.8f})")


def cross_entropy(pred_dist: Matrix, target_class: int) -> Matrix:
    """-log(pred[target]); the probability is clamped at EPS_PROB."""
    _check_simplex("cross_entropy", pred_dist)
    k = int(target_class)
    if not 0 <= k < pred_dist.cols:
        raise IndexError(f"cross_entropy: class {k} outside 0..{pred_dist.cols - 1}")
    p = float(pred_dist.value[0, k])
    shape = pred_dist.shape
    tape = pred_dist.tape
    if p <= EPS_PROB:
        tape.clamped += 1
        logging.debug(f"cross_entropy: clamped p={p:.3e} for class {k}")
        return tape.record("cross_entropy", (pred_dist,), [[-np.log(EPS_PROB)]], lambda g: (np.zeros(shape),))

    def _back(g):
        out = np.zeros(shape)
        out[0, k] = -g[0, 0] / p
        return (out,)

    return tape.record("cross_entropy", (pred_dist,), [[-np.log(p)]], _back)


def soft_cross_entropy(pred_dist: Matrix, target_dist) -> Matrix:
    """
    -sum_k t_k log(p_k). The target is a constant array or a Matrix on the
    same tape; a Matrix target receives -log(p) as its gradient.
    """
    _check_simplex("soft_cross_entropy", pred_dist)
    attached = isinstance(target_dist, Matrix)
    t = target_dist.value if attached else np.asarray(target_dist, dtype=np.float64).reshape(1, -1)
    if t.shape != pred_dist.shape:
        raise DimensionError(f"soft_cross_entropy: target {t.shape} vs prediction {pred_dist.shape}")
    p = pred_dist.value
    live = p > EPS_PROB
    if not np.all(live[t > 0]):
        pred_dist.tape.clamped += int(np.sum(~live & (t > 0)))
    safe = np.where(live, p, EPS_PROB)
    log_p = np.log(safe)
    value = -(t * log_p).sum()
    if attached:
        return pred_dist.tape.record(
            "soft_cross_entropy", (pred_dist, target_dist), [[value]],
            lambda g: (np.where(live, -g[0, 0] * t / safe, 0.0), -g[0, 0] * log_p),
        )
    return pred_dist.tape.record(
        "soft_cross_entropy", (pred_dist,), [[value]],
        lambda g: (np.where(live, -g[0, 0] * t / safe, 0.0),),
    )


def mse(pred: Matrix, target) -> Matrix:
    """(pred - target)^2 for 1x1 operands; target may be a float or a Matrix."""
    if pred.shape != (1, 1):
        raise DimensionError(f"mse: expected a 1x1 prediction, got {pred.shape}")
    if isinstance(target, Matrix):
        diff = float(pred.value[0, 0] - target.value[0, 0])
        return pred.tape.record(
            "mse", (pred, target), [[diff * diff]],
            lambda g: (2.0 * diff * g, -2.0 * diff * g),
        )
    diff = float(pred.value[0, 0] - float(target))
    return pred.tape.record("mse", (pred,), [[diff * diff]], lambda g: (2.0 * diff * g,))


def squared_distance(a: Matrix, b) -> Matrix:
    """||a - b||^2 where b is a constant array or a Matrix of the same shape."""
    if isinstance(b, Matrix):
        if a.shape != b.shape:
            raise DimensionError(f"squared_distance: {a.shape} vs {b.shape}")
        d = a.value - b.value
        return a.tape.record("sqdist", (a, b), [[float((d * d).sum())]], lambda g: (2.0 * d * g, -2.0 * d * g))
    bv = np.asarray(b, dtype=np.float64)
    if bv.size != a.value.size:
        raise DimensionError(f"squared_distance: {a.shape} vs {bv.shape}")
    d = a.value - bv.reshape(a.shape)
    return a.tape.record("sqdist", (a,), [[float((d * d).sum())]], lambda g: (2.0 * d * g,))


# ------------------------------------------------------------
# LSTM
# ------------------------------------------------------------

def lstm_step(tape: Tape, x: Matrix, h_prev: Matrix, c_prev: Matrix, cell: LSTMCell) -> tuple[Matrix, Matrix]:
    """
    One LSTM recurrence as a single fused node with a hand-written backward.
    Returns (h, c).
    """
    H = cell.hidden_dim
    if x.shape != (1, cell.in_dim):
        raise DimensionError(f"lstm_step: input {x.shape}, cell expects (1, {cell.in_dim})")
    if h_prev.shape != (1, H) or c_prev.shape != (1, H):
        raise DimensionError(f"lstm_step: state {h_prev.shape}/{c_prev.shape}, cell expects (1, {H})")

    W = tape.bind(cell.W)
    b = tape.bind(cell.b)
    Wv = W.value
    xh = np.hstack([x.value, h_prev.value])
    z = xh @ Wv + b.value
    i = expit(z[:, :H])
    f = expit(z[:, H:2 * H])
    o = expit(z[:, 2 * H:3 * H])
    g_ = np.tanh(z[:, 3 * H:])
    c_old = c_prev.value
    c = f * c_old + i * g_
    tc = np.tanh(c)
    h = o * tc
    in_dim = cell.in_dim

    def _back(grad):
        dh = grad[:, :H]
        dc = grad[:, H:] + dh * o * (1.0 - tc * tc)
        d_i = dc * g_ * i * (1.0 - i)
        d_f = dc * c_old * f * (1.0 - f)
        d_o = dh * tc * o * (1.0 - o)
        d_g = dc * i * (1.0 - g_ * g_)
        dz = np.hstack([d_i, d_f, d_o, d_g])
        dxh = dz @ Wv.T
        return (dxh[:, :in_dim], dxh[:, in_dim:], dc * f, xh.T @ dz, dz)

    hc = tape.record("lstm", (x, h_prev, c_prev, W, b), np.hstack([h, c]), _back)
    return slice_cols(hc, 0, H), slice_cols(hc, H, 2 * H)


# ------------------------------------------------------------
# Verification harness
# ------------------------------------------------------------

def _evaluate(f: Callable[[Tape], Matrix]) -> float:
    out = f(Tape())
    val = out.item()
    if not np.isfinite(val):
        raise NumericError("grad_check: objective is non-finite")
    return val


def grad_check(f: Callable[[Tape], Matrix], params: Sequence[Parameter], h: float = 1e-5) -> float:
    """
    Compare analytic gradients of scalar objective `f` against central
    differences. Returns max |analytic - numeric| / max(1, |analytic|).
    """
    if h <= 0:
        raise ValueError("grad_check: step h must be positive")
    for p in params:
        p.zero_grad()
    tape = Tape()
    out = f(tape)
    if not np.isfinite(out.item()):
        raise NumericError("grad_check: objective is non-finite")
    tape.backward(out)
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, a in zip(params, analytic):
        for idx in np.ndindex(p.shape):
            orig = p.value[idx]
            p.value[idx] = orig + h
            f_plus = _evaluate(f)
            p.value[idx] = orig - h
            f_minus = _evaluate(f)
            p.value[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            err = abs(a[idx] - numeric) / max(1.0, abs(a[idx]))
            worst = max(worst, err)
    for p in params:
        p.zero_grad()
    return worst


# ------------------------------------------------------------
# Optimizer
# ------------------------------------------------------------

class SGD:
    """SGD with heavy-ball momentum and global-norm gradient clipping."""

    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3, momentum: float = 0.9,
                 clip_norm: Optional[float] = 5.0) -> None:
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = [p for p in params if p.trainable]
        self.lr = lr
        self.momentum = momentum
        self.clip_norm = clip_norm
        self._velocity = [np.zeros_like(p.value) for p in self.params]

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float((p.grad * p.grad).sum()) for p in self.params)))

    def step(self) -> float:
        """Apply one update; returns the pre-clip global gradient norm."""
        norm = self.grad_norm()
        if not np.isfinite(norm):
            raise NumericError("SGD: non-finite gradient norm")
        factor = 1.0
        if self.clip_norm is not None and norm > self.clip_norm:
            factor = self.clip_norm / norm
        for p, v in zip(self.params, self._velocity):
            v *= self.momentum
            v += factor * p.grad
            p.value -= self.lr * v
        return norm

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
