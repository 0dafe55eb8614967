"""Minimal reverse-mode differentiable tensor core.

Tensors wrap float64 numpy arrays of rank 0..3 (rank 0 only for scalar loss
values). Every operation records its inputs and a backward closure on the
output node; `backward` materializes the recorded graph in topological order
and walks it once in reverse. Subgraphs that cannot influence any
grad-requiring leaf are pruned at construction, so constant inputs cost
nothing during the backward pass.

The plain-numpy kernels (`gelu_np`, `softmax_np`, `layer_norm_np`) are shared
with the vectorized evaluation paths elsewhere in the package so that both
routes compute with identical formulas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DimensionError,
    DomainError,
    EmptyGroupError,
    EvaluationError,
)

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715
LAYER_NORM_EPS = 1e-5


# ---------------------------------------------------------------------------
# numpy kernels (shared by tape ops and batched evaluation)
# ---------------------------------------------------------------------------

def gelu_np(x: np.ndarray) -> np.ndarray:
    """tanh-form GELU: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))."""
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_A * x**3)))


def softmax_np(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-subtracted exponential normalization along `axis`."""
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def layer_norm_np(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = np.mean(x, axis=-1, keepdims=True)
    var = np.mean((x - mu) ** 2, axis=-1, keepdims=True)
    return gamma * (x - mu) / np.sqrt(var + LAYER_NORM_EPS) + beta


# ---------------------------------------------------------------------------
# tensor and tape
# ---------------------------------------------------------------------------

class Tensor:
    """A float64 array participating in a recorded differentiable graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 3:
            raise DimensionError(f"tensors are limited to rank 3, got rank {arr.ndim}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x, requires_grad: bool = False) -> Tensor:
    """Coerce arrays/lists/floats to Tensor; passes Tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x, requires_grad=requires_grad)


def parameter(data) -> Tensor:
    """A leaf tensor that accumulates gradients."""
    return Tensor(np.array(data, dtype=np.float64, copy=True), requires_grad=True)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    """Build an interior node; prunes bookkeeping when no parent needs grads."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Reverse-accumulate gradients of a scalar `root` into its leaves.

    Visits every recorded operation exactly once, in reverse topological
    order. Gradients accumulate across calls until `zero_grads`.
    """
    if root.data.shape != ():
        raise DimensionError(f"backward requires a scalar root, got shape {root.data.shape}")
    order = _topo_order(root)
    _accum(root, np.ones((), dtype=np.float64)) if root.requires_grad else None
    if root.grad is None:
        root.grad = np.ones((), dtype=np.float64)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise DimensionError(f"add: shapes {a.data.shape} and {b.data.shape} differ")

    def bw(g):
        _accum(a, g)
        _accum(b, g)

    return _node(a.data + b.data, (a, b), bw)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def bw(g):
        _accum(x, g * c)

    return _node(x.data * c, (x,), bw)


def mul_const(x: Tensor, c: np.ndarray) -> Tensor:
    """Elementwise product with a constant array (no gradient into `c`)."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape != x.data.shape:
        raise DimensionError(f"mul_const: shapes {x.data.shape} and {c.shape} differ")

    def bw(g):
        _accum(x, g * c)

    return _node(x.data * c, (x,), bw)


def sum_all(x: Tensor) -> Tensor:
    def bw(g):
        _accum(x, np.full(x.data.shape, float(g)))

    return _node(np.asarray(x.data.sum()), (x,), bw)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape, dtype=np.int64)) != x.data.size:
        raise DimensionError(f"reshape: cannot view {x.data.shape} as {shape}")

    def bw(g):
        _accum(x, g.reshape(x.data.shape))

    return _node(x.data.reshape(shape), (x,), bw)


def stack_rows(xs: Sequence[Tensor]) -> Tensor:
    """Stack k rank-1 tensors of equal length into a [k, d] tensor."""
    if len(xs) == 0:
        raise EmptyGroupError("stack_rows: empty input list")
    for x in xs:
        if x.data.ndim != 1 or x.data.shape != xs[0].data.shape:
            raise DimensionError("stack_rows: inputs must be rank-1 and same length")
    xs = tuple(xs)

    def bw(g):
        for i, x in enumerate(xs):
            _accum(x, g[i])

    return _node(np.stack([x.data for x in xs]), xs, bw)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """y = x @ w + b for x of rank 1 or 2; w is [d_in, d_out], b is [d_out]."""
    if x.data.ndim not in (1, 2) or w.data.ndim != 2 or b.data.ndim != 1:
        raise DimensionError(
            f"linear: expected x rank 1-2, w rank 2, b rank 1; "
            f"got {x.data.shape}, {w.data.shape}, {b.data.shape}"
        )
    if x.data.shape[-1] != w.data.shape[0] or w.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"linear: inner dimensions disagree: x {x.data.shape}, w {w.data.shape}, b {b.data.shape}"
        )
    x2 = x.data if x.data.ndim == 2 else x.data[None, :]
    y = x2 @ w.data + b.data

    def bw(g):
        g2 = g if g.ndim == 2 else g[None, :]
        if x.requires_grad:
            _accum(x, (g2 @ w.data.T).reshape(x.data.shape))
        if w.requires_grad:
            _accum(w, x2.T @ g2)
        if b.requires_grad:
            _accum(b, g2.sum(axis=0))

    return _node(y if x.data.ndim == 2 else y[0], (x, w, b), bw)


def gelu(x: Tensor) -> Tensor:
    u = _GELU_C * (x.data + _GELU_A * x.data**3)
    t = np.tanh(u)
    y = 0.5 * x.data * (1.0 + t)

    def bw(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x.data**2)
        _accum(x, g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t**2) * du))

    return _node(y, (x,), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """Per-row zero-mean/unit-variance normalization with affine output."""
    if x.data.ndim not in (1, 2):
        raise DimensionError(f"layer_norm: expected rank 1-2 input, got {x.data.shape}")
    d = x.data.shape[-1]
    if d < 2:
        raise DimensionError(f"layer_norm: normalized dimension must be >= 2, got {d}")
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise DimensionError(
            f"layer_norm: gamma/beta must have shape ({d},); "
            f"got {gamma.data.shape}, {beta.data.shape}"
        )
    mu = np.mean(x.data, axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc**2, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    xhat = xc * inv

    def bw(g):
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            _accum(beta, g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gamma.data
            m1 = np.mean(dxhat, axis=-1, keepdims=True)
            m2 = np.mean(dxhat * xhat, axis=-1, keepdims=True)
            _accum(x, inv * (dxhat - m1 - xhat * m2))

    return _node(gamma.data * xhat + beta.data, (x, gamma, beta), bw)


def softmax(x: Tensor) -> Tensor:
    """Simplex projection of a rank-1 logit vector (max-stabilized)."""
    if x.data.ndim != 1:
        raise DimensionError(f"softmax: expected rank-1 input, got {x.data.shape}")
    y = softmax_np(x.data)

    def bw(g):
        _accum(x, y * (g - float(np.dot(g, y))))

    return _node(y, (x,), bw)


@dataclass
class AttentionParams:
    """Projection weights for multi-head cross-attention (all [d, d] / [d])."""

    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor

    def tensors(self) -> tuple[Tensor, ...]:
        return (self.wq, self.bq, self.wk, self.bk, self.wv, self.bv, self.wo, self.bo)

    def named(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        names = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")
        return [(prefix + n, t) for n, t in zip(names, self.tensors())]


def cross_attention(q: Tensor, kv: Tensor, params: AttentionParams, heads: int) -> Tensor:
    """Multi-head scaled dot-product attention of one query row over kv rows.

    q is [1, d], kv is [m, d]; per-head scale is 1/sqrt(d/heads); head outputs
    are concatenated and passed through the output projection. Differentiable
    with respect to q, kv, and all eight projection tensors.
    """
    if q.data.ndim != 2 or q.data.shape[0] != 1:
        raise DimensionError(f"cross_attention: q must be [1, d], got {q.data.shape}")
    if kv.data.ndim != 2 or kv.data.shape[0] < 1:
        raise DimensionError(f"cross_attention: kv must be [m>=1, d], got {kv.data.shape}")
    d = q.data.shape[1]
    if kv.data.shape[1] != d:
        raise DimensionError(
            f"cross_attention: q and kv widths differ: {q.data.shape} vs {kv.data.shape}"
        )
    if heads < 1 or d % heads != 0:
        raise ConfigError(f"cross_attention: width {d} not divisible by heads {heads}")
    m = kv.data.shape[0]
    dh = d // heads
    alpha = 1.0 / math.sqrt(dh)

    wq, bq, wk, bk, wv, bv, wo, bo = (t.data for t in params.tensors())
    Q = q.data @ wq + bq                       # [1, d]
    K = kv.data @ wk + bk                      # [m, d]
    V = kv.data @ wv + bv                      # [m, d]
    Qh = Q.reshape(1, heads, dh).transpose(1, 0, 2)    # [H, 1, dh]
    Kh = K.reshape(m, heads, dh).transpose(1, 0, 2)    # [H, m, dh]
    Vh = V.reshape(m, heads, dh).transpose(1, 0, 2)    # [H, m, dh]
    S = (Qh @ Kh.transpose(0, 2, 1)) * alpha           # [H, 1, m]
    A = softmax_np(S, axis=-1)
    O = (A @ Vh).transpose(1, 0, 2).reshape(1, d)      # [1, d]
    Y = O @ wo + bo

    def bw(g):
        if params.wo.requires_grad:
            _accum(params.wo, O.T @ g)
        if params.bo.requires_grad:
            _accum(params.bo, g.sum(axis=0))
        dO = (g @ wo.T).reshape(1, heads, dh).transpose(1, 0, 2)   # [H, 1, dh]
        dA = dO @ Vh.transpose(0, 2, 1)                            # [H, 1, m]
        dVh = A.transpose(0, 2, 1) @ dO                            # [H, m, dh]
        dS = A * (dA - np.sum(dA * A, axis=-1, keepdims=True))     # softmax rows
        dS = dS * alpha
        dQh = dS @ Kh                                              # [H, 1, dh]
        dKh = dS.transpose(0, 2, 1) @ Qh                           # [H, m, dh]
        dQ = dQh.transpose(1, 0, 2).reshape(1, d)
        dK = dKh.transpose(1, 0, 2).reshape(m, d)
        dV = dVh.transpose(1, 0, 2).reshape(m, d)
        if params.wq.requires_grad:
            _accum(params.wq, q.data.T @ dQ)
        if params.bq.requires_grad:
            _accum(params.bq, dQ.sum(axis=0))
        if params.wk.requires_grad:
            _accum(params.wk, kv.data.T @ dK)
        if params.bk.requires_grad:
            _accum(params.bk, dK.sum(axis=0))
        if params.wv.requires_grad:
            _accum(params.wv, kv.data.T @ dV)
        if params.bv.requires_grad:
            _accum(params.bv, dV.sum(axis=0))
        if q.requires_grad:
            _accum(q, dQ @ wq.T)
        if kv.requires_grad:
            _accum(kv, dK @ wk.T + dV @ wv.T)

    return _node(Y, (q, kv) + params.tensors(), bw)


def mean_over_first_axis(xs: Sequence[Tensor]) -> Tensor:
    """Elementwise arithmetic mean of a nonempty list of same-shape tensors."""
    if len(xs) == 0:
        raise EmptyGroupError("mean_over_first_axis: empty group")
    shape = xs[0].data.shape
    for x in xs:
        if x.data.shape != shape:
            raise DimensionError(
                f"mean_over_first_axis: shapes {shape} and {x.data.shape} differ"
            )
    xs = tuple(xs)
    k = len(xs)
    acc = xs[0].data.copy()
    for x in xs[1:]:
        acc += x.data

    def bw(g):
        share = g / k
        for x in xs:
            _accum(x, share)

    return _node(acc / k, xs, bw)


def weighted_sum(ws: Tensor, xs: Sequence[Tensor]) -> Tensor:
    """sum_i ws[i] * xs[i]; differentiable in the weights and the operands."""
    if ws.data.ndim != 1:
        raise DimensionError(f"weighted_sum: weights must be rank 1, got {ws.data.shape}")
    k = ws.data.shape[0]
    if len(xs) != k:
        raise DimensionError(f"weighted_sum: {k} weights but {len(xs)} operands")
    shape = xs[0].data.shape
    for x in xs:
        if x.data.shape != shape:
            raise DimensionError(f"weighted_sum: operand shapes {shape} vs {x.data.shape}")
    xs = tuple(xs)
    acc = ws.data[0] * xs[0].data
    for i in range(1, k):
        acc = acc + ws.data[i] * xs[i].data

    def bw(g):
        if ws.requires_grad:
            _accum(ws, np.array([float(np.sum(g * x.data)) for x in xs]))
        for i, x in enumerate(xs):
            if x.requires_grad:
                _accum(x, ws.data[i] * g)

    return _node(acc, (ws,) + xs, bw)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise concatenation [n, d1] + [n, d2] -> [n, d1+d2], a's columns first."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(
            f"concat_channels: expected rank-2 inputs, got {a.data.shape}, {b.data.shape}"
        )
    if a.data.shape[0] != b.data.shape[0]:
        raise DimensionError(
            f"concat_channels: first dimensions differ: {a.data.shape} vs {b.data.shape}"
        )
    d1 = a.data.shape[1]

    def bw(g):
        _accum(a, g[:, :d1])
        _accum(b, g[:, d1:])

    return _node(np.concatenate([a.data, b.data], axis=1), (a, b), bw)


def neg_entropy(w: Tensor, floor: float = 0.0) -> Tensor:
    """sum_k w_k * log(w_k) with the convention 0*log(0) = 0.

    A positive `floor` clamps w below the log (training uses 1e-12) so the
    gradient stays finite at simplex corners; the forward value at exact
    zeros is unaffected by the clamp.
    """
    if w.data.ndim != 1:
        raise DimensionError(f"neg_entropy: expected rank-1 input, got {w.data.shape}")
    if np.any(w.data < 0.0):
        raise DomainError(f"neg_entropy: negative component {w.data.min()}")
    if floor > 0.0:
        logw = np.log(np.maximum(w.data, floor))
        value = float(np.dot(w.data, logw))

        def bw(g):
            _accum(w, float(g) * np.where(w.data > floor, logw + 1.0, logw))

    else:
        pos = w.data > 0.0
        logw = np.where(pos, np.log(np.where(pos, w.data, 1.0)), 0.0)
        value = float(np.dot(w.data, logw))

        def bw(g):
            # At exact zeros the convention pins the value; gradient left 0.
            _accum(w, float(g) * np.where(pos, logw + 1.0, 0.0))

    return _node(np.asarray(value), (w,), bw)


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean of elementwise squared differences."""
    if pred.data.shape != target.data.shape:
        raise DimensionError(
            f"mse: shapes {pred.data.shape} and {target.data.shape} differ"
        )
    diff = pred.data - target.data
    n = diff.size

    def bw(g):
        base = float(g) * 2.0 * diff / n
        _accum(pred, base)
        if target.requires_grad:
            _accum(target, -base)

    return _node(np.asarray(np.mean(diff**2)), (pred, target), bw)


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    """Outcome of comparing recorded gradients against central differences."""

    max_rel_error: float
    max_abs_error: float
    checked: int
    passed: bool
    tol: float
    abs_tol: float
    worst: tuple[int, int] | None = None  # (param index, flat element index)

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} max_rel={self.max_rel_error:.3e} "
            f"max_abs={self.max_abs_error:.3e} over {self.checked} elements"
        )


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-6,
    tol: float = 1e-6,
    abs_tol: float = 1e-10,
    small: float = 1e-8,
    max_elements_per_tensor: int | None = None,
    sample_seed: int = 0,
) -> GradCheckReport:
    """Compare recorded gradients of scalar `f` against central differences.

    Every element of every parameter is perturbed by +-step unless
    `max_elements_per_tensor` caps the count, in which case a seeded sample
    of elements per tensor is used (large configurations only). Elements
    whose analytic gradient magnitude is below `small` are held to the
    absolute criterion `abs_tol` instead of the relative one.
    """
    if not (1e-7 <= step <= 1e-4):
        raise ConfigError(f"grad_check: step {step} outside [1e-7, 1e-4]")

    zero_grads(params)
    out = f()
    if out.data.shape != ():
        raise EvaluationError(f"grad_check: objective returned shape {out.data.shape}")
    if not np.isfinite(out.data):
        raise EvaluationError("grad_check: objective is non-finite at the base point")
    backward(out)
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params
    ]

    def value() -> float:
        v = float(f().data)
        if not math.isfinite(v):
            raise EvaluationError("grad_check: objective became non-finite under perturbation")
        return v

    from .rng import SplitMix64  # local import to keep module load order simple

    picker = SplitMix64(sample_seed)
    max_rel = 0.0
    max_abs = 0.0
    worst = None
    checked = 0
    passed = True
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        n = flat.size
        if max_elements_per_tensor is not None and n > max_elements_per_tensor:
            idxs = np.unique(picker.integers(max_elements_per_tensor, n))
        else:
            idxs = np.arange(n)
        an_flat = analytic[pi].reshape(-1)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + step
            f_plus = value()
            flat[i] = orig - step
            f_minus = value()
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * step)
            an = an_flat[i]
            diff = abs(an - fd)
            checked += 1
            if abs(an) < small and abs(fd) < small:
                if diff > max_abs:
                    max_abs = diff
                if diff > abs_tol:
                    passed = False
                    worst = (pi, int(i))
            else:
                rel = diff / max(abs(an), abs(fd))
                if rel > max_rel:
                    max_rel = rel
                    worst = worst if rel <= tol else (pi, int(i))
                if rel > tol:
                    passed = False
    return GradCheckReport(
        max_rel_error=max_rel,
        max_abs_error=max_abs,
        checked=checked,
        passed=passed,
        tol=tol,
        abs_tol=abs_tol,
        worst=worst,
    )
