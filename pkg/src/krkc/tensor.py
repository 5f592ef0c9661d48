"""Reverse-mode automatic differentiation on float64 numpy storage.

A :class:`Tensor` wraps a numpy array together with an optional gradient
buffer.  Operations build a computation graph by recording parent tensors
and a backward closure on each result; calling :meth:`Tensor.backward` on a
scalar loss walks the graph in reverse topological order and accumulates
``dLoss/dX`` into every reachable tensor that requires gradients.

The operation set is deliberately small: affine layers, pointwise
nonlinearities, row-wise (log-)softmax with temperature, reductions,
index gathers, pairwise squared distances, row normalisation and
concatenation.  That is exactly what the training losses need, and each
backward rule is simple enough to verify against central finite
differences (see :func:`finite_difference_check`).

Everything is float64.  Inputs are validated for shape and finiteness up
front so that a bad batch fails loudly at the op boundary instead of
surfacing as a NaN three calls later.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

Array = np.ndarray


class TensorError(ValueError):
    """Raised for shape mismatches, non-finite inputs and misuse of ops."""


def _as_f64(data) -> Array:
    arr = np.asarray(data, dtype=np.float64)
    return arr


class Tensor:
    """A float64 array with an autodiff graph attached.

    Attributes:
        data: the numpy value, always float64.
        grad: accumulated gradient of the same shape, or ``None`` until a
            backward pass writes to it.
        requires_grad: whether gradients should flow into this tensor.
            Results of ops inherit ``True`` if any input requires grad.
    """

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "_op")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _op: str = "leaf",
    ) -> None:
        self.data = _as_f64(data)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._backward: Callable[[], None] | None = None
        self._parents = _parents
        self._op = _op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise TensorError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate gradients of this scalar into the graph's leaves.

        Gradients add onto whatever is already stored, so callers that
        reuse leaf tensors across losses must clear them in between.
        """
        if self.data.size != 1:
            raise TensorError(
                f"backward() starts from a scalar loss, got shape {self.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        _accumulate(self, np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op!r}, requires_grad={self.requires_grad})"

    # Operator sugar; the module-level functions hold the real logic.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)


def _accumulate(t: Tensor, g: Array) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _check_finite(op: str, *tensors: Tensor) -> None:
    for t in tensors:
        if not np.all(np.isfinite(t.data)):
            raise TensorError(f"{op}: non-finite input (shape {t.shape})")


def _result(data: Array, op: str, parents: tuple[Tensor, ...]) -> Tensor:
    rg = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=rg, _parents=parents if rg else (), _op=op)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def stop_gradient(t: Tensor) -> Tensor:
    """Detach: same values, no parents, never receives gradient."""
    return Tensor(t.data, requires_grad=False, _op="stop_gradient")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise TensorError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    _check_finite("matmul", a, b)
    out = _result(a.data @ b.data, "matmul", (a, b))
    if out.requires_grad:
        def _bw() -> None:
            g = out.grad
            if a.requires_grad:
                _accumulate(a, g @ b.data.T)
            if b.requires_grad:
                _accumulate(b, a.data.T @ g)
        out._backward = _bw
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a (C,) bias added to each row of (N, C)."""
    bias = a.ndim == 2 and b.ndim == 1 and b.shape[0] == a.shape[1]
    if not bias and a.shape != b.shape:
        raise TensorError(f"add: incompatible shapes {a.shape} + {b.shape}")
    _check_finite("add", a, b)
    out = _result(a.data + b.data, "add", (a, b))
    if out.requires_grad:
        def _bw() -> None:
            g = out.grad
            if a.requires_grad:
                _accumulate(a, g)
            if b.requires_grad:
                _accumulate(b, g.sum(axis=0) if bias else g)
        out._backward = _bw
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise TensorError(f"sub: incompatible shapes {a.shape} - {b.shape}")
    _check_finite("sub", a, b)
    out = _result(a.data - b.data, "sub", (a, b))
    if out.requires_grad:
        def _bw() -> None:
            g = out.grad
            if a.requires_grad:
                _accumulate(a, g)
            if b.requires_grad:
                _accumulate(b, -g)
        out._backward = _bw
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise TensorError(f"mul: incompatible shapes {a.shape} * {b.shape}")
    _check_finite("mul", a, b)
    out = _result(a.data * b.data, "mul", (a, b))
    if out.requires_grad:
        def _bw() -> None:
            g = out.grad
            if a.requires_grad:
                _accumulate(a, g * b.data)
            if b.requires_grad:
                _accumulate(b, g * a.data)
        out._backward = _bw
    return out


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = _result(a.data * s, "scale", (a,))
    if out.requires_grad:
        def _bw() -> None:
            _accumulate(a, out.grad * s)
        out._backward = _bw
    return out


def add_scalar(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = _result(a.data + s, "add_scalar", (a,))
    if out.requires_grad:
        def _bw() -> None:
            _accumulate(a, out.grad)
        out._backward = _bw
    return out


def relu(a: Tensor) -> Tensor:
    _check_finite("relu", a)
    mask = a.data > 0.0
    out = _result(np.where(mask, a.data, 0.0), "relu", (a,))
    if out.requires_grad:
        def _bw() -> None:
            _accumulate(a, out.grad * mask)
        out._backward = _bw
    return out


def clamp_min(a: Tensor, lo: float) -> Tensor:
    """Lower clamp.  Gradient is zero wherever the clamp is active."""
    lo = float(lo)
    mask = a.data > lo
    out = _result(np.where(mask, a.data, lo), "clamp_min", (a,))
    if out.requires_grad:
        def _bw() -> None:
            _accumulate(a, out.grad * mask)
        out._backward = _bw
    return out


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0.0):
        raise TensorError("sqrt: negative input")
    root = np.sqrt(a.data)
    out = _result(root, "sqrt", (a,))
    if out.requires_grad:
        def _bw() -> None:
            _accumulate(a, out.grad * 0.5 / root)
        out._backward = _bw
    return out


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise TensorError("log: non-positive input")
    out = _result(np.log(a.data), "log", (a,))
    if out.requires_grad:
        def _bw() -> None:
            _accumulate(a, out.grad / a.data)
        out._backward = _bw
    return out


def _softmax_rows(z: Array) -> Array:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows(a: Tensor, temperature: float = 1.0) -> Tensor:
    """Row-wise softmax of ``a / temperature`` for a 2-D tensor."""
    if a.ndim != 2:
        raise TensorError(f"softmax_rows: expected 2-D logits, got {a.shape}")
    if temperature <= 0.0:
        raise TensorError(f"softmax_rows: temperature must be positive, got {temperature}")
    _check_finite("softmax_rows", a)
    inv_t = 1.0 / float(temperature)
    p = _softmax_rows(a.data * inv_t)
    out = _result(p, "softmax_rows", (a,))
    if out.requires_grad:
        def _bw() -> None:
            g = out.grad
            dot = (g * p).sum(axis=1, keepdims=True)
            _accumulate(a, (g - dot) * p * inv_t)
        out._backward = _bw
    return out


def log_softmax_rows(a: Tensor, temperature: float = 1.0) -> Tensor:
    if a.ndim != 2:
        raise TensorError(f"log_softmax_rows: expected 2-D logits, got {a.shape}")
    if temperature <= 0.0:
        raise TensorError(f"log_softmax_rows: temperature must be positive, got {temperature}")
    _check_finite("log_softmax_rows", a)
    inv_t = 1.0 / float(temperature)
    z = a.data * inv_t
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = _result(shifted - lse, "log_softmax_rows", (a,))
    if out.requires_grad:
        p = np.exp(shifted - lse)
        def _bw() -> None:
            g = out.grad
            _accumulate(a, (g - p * g.sum(axis=1, keepdims=True)) * inv_t)
        out._backward = _bw
    return out


def sum_all(a: Tensor) -> Tensor:
    out = _result(np.asarray(a.data.sum()), "sum_all", (a,))
    if out.requires_grad:
        def _bw() -> None:
            _accumulate(a, np.full_like(a.data, float(out.grad)))
        out._backward = _bw
    return out


def mean_all(a: Tensor) -> Tensor:
    if a.data.size == 0:
        raise TensorError("mean_all: empty tensor")
    n = a.data.size
    out = _result(np.asarray(a.data.mean()), "mean_all", (a,))
    if out.requires_grad:
        def _bw() -> None:
            _accumulate(a, np.full_like(a.data, float(out.grad) / n))
        out._backward = _bw
    return out


def pick_rows(a: Tensor, columns: Sequence[int]) -> Tensor:
    """Gather ``a[i, columns[i]]`` into a 1-D tensor of length N."""
    if a.ndim != 2:
        raise TensorError(f"pick_rows: expected 2-D input, got {a.shape}")
    idx = np.asarray(columns, dtype=np.int64)
    if idx.ndim != 1 or idx.shape[0] != a.shape[0]:
        raise TensorError(
            f"pick_rows: need one column per row, got {idx.shape} for {a.shape}"
        )
    if np.any(idx < 0) or np.any(idx >= a.shape[1]):
        raise TensorError(f"pick_rows: column index out of range for {a.shape}")
    rows = np.arange(a.shape[0])
    out = _result(a.data[rows, idx], "pick_rows", (a,))
    if out.requires_grad:
        def _bw() -> None:
            g = np.zeros_like(a.data)
            np.add.at(g, (rows, idx), out.grad)
            _accumulate(a, g)
        out._backward = _bw
    return out


def gather_pairs(a: Tensor, rows: Sequence[int], cols: Sequence[int]) -> Tensor:
    """Gather ``a[rows[k], cols[k]]`` into a 1-D tensor."""
    if a.ndim != 2:
        raise TensorError(f"gather_pairs: expected 2-D input, got {a.shape}")
    r = np.asarray(rows, dtype=np.int64)
    c = np.asarray(cols, dtype=np.int64)
    if r.shape != c.shape or r.ndim != 1:
        raise TensorError(f"gather_pairs: index shape mismatch {r.shape} vs {c.shape}")
    if np.any(r < 0) or np.any(r >= a.shape[0]) or np.any(c < 0) or np.any(c >= a.shape[1]):
        raise TensorError(f"gather_pairs: index out of range for {a.shape}")
    out = _result(a.data[r, c], "gather_pairs", (a,))
    if out.requires_grad:
        def _bw() -> None:
            g = np.zeros_like(a.data)
            np.add.at(g, (r, c), out.grad)
            _accumulate(a, g)
        out._backward = _bw
    return out


def pairwise_sqdist(x: Tensor) -> Tensor:
    """All-pairs squared Euclidean distances between rows of ``x``.

    Returns an (N, N) tensor with D[i, j] = ||x_i - x_j||^2.  Tiny negative
    values from cancellation are floored at zero; the floor carries no
    gradient, matching the true derivative at coincident rows only up to
    the usual subgradient choice.
    """
    if x.ndim != 2:
        raise TensorError(f"pairwise_sqdist: expected 2-D input, got {x.shape}")
    _check_finite("pairwise_sqdist", x)
    sq = (x.data * x.data).sum(axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (x.data @ x.data.T)
    np.maximum(d, 0.0, out=d)
    out = _result(d, "pairwise_sqdist", (x,))
    if out.requires_grad:
        def _bw() -> None:
            g = out.grad
            h = g + g.T
            _accumulate(x, 2.0 * (h.sum(axis=1)[:, None] * x.data - h @ x.data))
        out._backward = _bw
    return out


def l2_normalize_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale each row to unit Euclidean norm (norms floored at ``eps``)."""
    if x.ndim != 2:
        raise TensorError(f"l2_normalize_rows: expected 2-D input, got {x.shape}")
    _check_finite("l2_normalize_rows", x)
    norms = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    norms = np.maximum(norms, eps)
    y = x.data / norms
    out = _result(y, "l2_normalize_rows", (x,))
    if out.requires_grad:
        def _bw() -> None:
            g = out.grad
            dot = (g * y).sum(axis=1, keepdims=True)
            _accumulate(x, (g - dot * y) / norms)
        out._backward = _bw
    return out


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two 2-D tensors along columns."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise TensorError(f"concat_cols: incompatible shapes {a.shape}, {b.shape}")
    out = _result(np.concatenate([a.data, b.data], axis=1), "concat_cols", (a, b))
    if out.requires_grad:
        na = a.shape[1]
        def _bw() -> None:
            g = out.grad
            if a.requires_grad:
                _accumulate(a, g[:, :na])
            if b.requires_grad:
                _accumulate(b, g[:, na:])
        out._backward = _bw
    return out


def take_cols(a: Tensor, start: int, stop: int) -> Tensor:
    """Slice columns [start, stop) of a 2-D tensor."""
    if a.ndim != 2:
        raise TensorError(f"take_cols: expected 2-D input, got {a.shape}")
    if not (0 <= start <= stop <= a.shape[1]):
        raise TensorError(f"take_cols: bad range [{start}, {stop}) for {a.shape}")
    out = _result(a.data[:, start:stop].copy(), "take_cols", (a,))
    if out.requires_grad:
        def _bw() -> None:
            g = np.zeros_like(a.data)
            g[:, start:stop] = out.grad
            _accumulate(a, g)
        out._backward = _bw
    return out


class AdamState:
    """First/second moment buffers and step counter for a parameter list.

    The buffers are positional: ``adam_step`` must be called with the same
    parameters, in the same order, that the state was built from.
    """

    def __init__(
        self,
        params: Iterable[Tensor],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.params = list(params)
        if not self.params:
            raise TensorError("AdamState: empty parameter list")
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]


def adam_step(params: Sequence[Tensor], state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update; gradients are consumed and cleared.

    Every parameter must hold a gradient (a parameter that never received
    one indicates a broken graph, so it is an error rather than a skip).
    """
    params = list(params)
    if len(params) != len(state.params):
        raise TensorError(
            f"adam_step: {len(params)} params vs state built for {len(state.params)}"
        )
    for i, p in enumerate(params):
        if p is not state.params[i]:
            raise TensorError(f"adam_step: parameter {i} is not the one the state tracks")
        if p.grad is None:
            raise TensorError(f"adam_step: parameter {i} has no gradient")
        if p.grad.shape != p.data.shape:
            raise TensorError(
                f"adam_step: gradient shape {p.grad.shape} != parameter shape {p.data.shape}"
            )
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for i, p in enumerate(params):
        g = p.grad
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        p.grad = None


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def finite_difference_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    guard: float = 1e-6,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` rebuilds the scalar loss from the current parameter values; it is
    re-evaluated twice per coordinate with the coordinate nudged by ``±h``.
    The relative error at a coordinate is |analytic - numeric| divided by
    (|numeric| + ``guard``); the guard keeps coordinates whose true
    gradient is zero from amplifying floating-point noise.
    """
    if not (0.0 < h <= 1e-2):
        raise TensorError(f"finite_difference_check: h out of range: {h}")
    params = list(params)
    zero_grads(params)
    loss = f()
    if loss.data.size != 1:
        raise TensorError("finite_difference_check: f() must return a scalar")
    if not np.isfinite(loss.data).all():
        raise TensorError("finite_difference_check: non-finite loss")
    loss.backward()
    analytic = [
        np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params
    ]
    worst = 0.0
    for p, ag in zip(params, analytic):
        flat = p.data.reshape(-1)
        aflat = ag.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = f().item()
            flat[k] = orig - h
            down = f().item()
            flat[k] = orig
            numeric = (up - down) / (2.0 * h)
            rel = abs(aflat[k] - numeric) / (abs(numeric) + guard)
            if rel > worst:
                worst = rel
    zero_grads(params)
    return worst
