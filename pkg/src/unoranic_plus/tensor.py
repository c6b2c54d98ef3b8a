"""Dense tensors with reverse-mode automatic differentiation.

The engine is deliberately small: a ``Tensor`` wraps a contiguous row-major
numpy buffer, and every differentiable operation records its parents together
with one vector-Jacobian callback per parent. Because outputs are created
after their inputs, the recorded graph is already in topological order; a
``backward()`` call walks it exactly once in reverse, accumulating gradients
additively across fan-out.

Conventions, fixed so results are reproducible:

* Tensors are immutable once produced by an op; ops never alias their inputs
  (``reshape``/``transpose`` copy).
* Reductions use numpy's pairwise-tree summation order.
* Training runs in float32; gradient checks switch the whole engine to
  float64 via :func:`using_dtype` because float32 finite differences are too
  noisy for tight tolerances.
* GELU uses the exact Gaussian-CDF (erf) form, not the tanh approximation.
* Any non-finite value produced by a forward op raises ``NonFiniteError``
  immediately instead of propagating silently.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "DimensionError",
    "NonFiniteError",
    "BackwardStateError",
    "default_dtype",
    "set_default_dtype",
    "using_dtype",
    "no_grad",
    "gelu",
    "softmax_lastdim",
    "layernorm",
    "mse",
    "cross_entropy",
]


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """Raised when a forward op produces NaN or Inf."""


class BackwardStateError(RuntimeError):
    """Raised when backward() is called twice on the same recorded graph."""


_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True
_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def default_dtype() -> np.dtype:
    return np.dtype(_DEFAULT_DTYPE)


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}; use float32 or float64")
    _DEFAULT_DTYPE = dtype.type


@contextlib.contextmanager
def using_dtype(dtype):
    """Temporarily switch the engine-wide default real dtype."""
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference paths; also detaches probes)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by op '{op}'")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, inverting numpy's trailing-dim broadcast."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """N-dimensional array with optional gradient tracking.

    ``data`` is always a contiguous row-major numpy array of the engine's
    real dtype. ``grad`` is populated (same shape as ``data``) by a backward
    pass through a graph this tensor participates in.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fns", "_op", "_backward_ran")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor initialized with non-finite values")
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fns: tuple[Optional[Callable[[np.ndarray], np.ndarray]], ...] = ()
        self._op = "leaf"
        self._backward_ran = False

    # ------------------------------------------------------------------
    # basic introspection
    # ------------------------------------------------------------------

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
        if self.size != 1:
            raise DimensionError(f"item() requires a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        grad_flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op!r}{grad_flag})"

    def detach(self) -> "Tensor":
        """Constant copy sharing no graph history."""
        return Tensor(self.data.copy(), requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    # ------------------------------------------------------------------
    # graph construction and backward pass
    # ------------------------------------------------------------------

    @staticmethod
    def _record(
        data: np.ndarray,
        op: str,
        parents: Sequence["Tensor"],
        grad_fns: Sequence[Optional[Callable[[np.ndarray], np.ndarray]]],
    ) -> "Tensor":
        _check_finite(data, op)
        out = Tensor.__new__(Tensor)
        out.data = np.ascontiguousarray(data)
        out.grad = None
        out._backward_ran = False
        out._op = op
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._grad_fns = tuple(grad_fns)
        else:
            out.requires_grad = False
            out._parents = ()
            out._grad_fns = ()
        return out

    def backward(self, leaves: Iterable["Tensor"] = ()) -> None:
        """Populate ``grad`` on every reachable ``requires_grad`` tensor.

        Must be called on a scalar. Gradients accumulate additively across
        fan-out. Leaves passed via ``leaves`` that the graph never reaches
        receive an explicit zero gradient. Calling backward twice on the same
        recorded graph is a state error; build a new forward pass first.
        """
        if self.size != 1:
            raise DimensionError(f"backward() requires a scalar, got shape {self.shape}")
        if self._backward_ran:
            raise BackwardStateError(
                "backward() already consumed this graph; run a new forward pass"
            )
        self._backward_ran = True

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        # `order` is topological (parents before children), so walking it in
        # reverse consumes every node's accumulated output-grad exactly once.
        flowing: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            grad = flowing.pop(id(node), None)
            if grad is None:
                continue
            if node.requires_grad and not node._parents:
                node.grad = grad if node.grad is None else node.grad + grad
            for parent, grad_fn in zip(node._parents, node._grad_fns):
                if grad_fn is None or not parent.requires_grad:
                    continue
                contribution = grad_fn(grad)
                key = id(parent)
                if key in flowing:
                    flowing[key] = flowing[key] + contribution
                else:
                    flowing[key] = contribution

        for leaf in leaves:
            if leaf.requires_grad and leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)

    # ------------------------------------------------------------------
    # elementwise arithmetic
    # ------------------------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    @staticmethod
    def _broadcast_guard(a: "Tensor", b: "Tensor", op: str) -> None:
        try:
            np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise DimensionError(
                f"{op}: shapes {a.shape} and {b.shape} are not broadcast-compatible"
            ) from None

    def __add__(self, other) -> "Tensor":
        other = self._coerce(other)
        self._broadcast_guard(self, other, "add")
        return Tensor._record(
            self.data + other.data,
            "add",
            (self, other),
            (
                lambda g, s=self.shape: _unbroadcast(g, s),
                lambda g, s=other.shape: _unbroadcast(g, s),
            ),
        )

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        other = self._coerce(other)
        self._broadcast_guard(self, other, "sub")
        return Tensor._record(
            self.data - other.data,
            "sub",
            (self, other),
            (
                lambda g, s=self.shape: _unbroadcast(g, s),
                lambda g, s=other.shape: _unbroadcast(-g, s),
            ),
        )

    def __rsub__(self, other) -> "Tensor":
        return self._coerce(other) - self

    def __mul__(self, other) -> "Tensor":
        other = self._coerce(other)
        self._broadcast_guard(self, other, "mul")
        return Tensor._record(
            self.data * other.data,
            "mul",
            (self, other),
            (
                lambda g, o=other.data, s=self.shape: _unbroadcast(g * o, s),
                lambda g, o=self.data, s=other.shape: _unbroadcast(g * o, s),
            ),
        )

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return Tensor._record(-self.data, "neg", (self,), (lambda g: -g,))

    def scale(self, factor: float) -> "Tensor":
        """Multiply by a Python scalar (no second tensor operand recorded)."""
        factor = float(factor)
        return Tensor._record(
            self.data * factor, "scale", (self,), (lambda g, f=factor: g * f,)
        )

    def __pow__(self, exponent: float) -> "Tensor":
        exponent = float(exponent)
        out = self.data**exponent
        return Tensor._record(
            out,
            "power",
            (self,),
            (lambda g, x=self.data, p=exponent: g * p * x ** (p - 1.0),),
        )

    # ------------------------------------------------------------------
    # shape manipulation (always copies; no views in this engine)
    # ------------------------------------------------------------------

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        original = self.shape
        return Tensor._record(
            self.data.reshape(shape).copy(),
            "reshape",
            (self,),
            (lambda g, s=original: g.reshape(s),),
        )

    def transpose(self, axes: Sequence[int]) -> "Tensor":
        axes = tuple(axes)
        inverse = tuple(np.argsort(axes))
        return Tensor._record(
            np.transpose(self.data, axes).copy(),
            "transpose",
            (self,),
            (lambda g, inv=inverse: np.transpose(g, inv),),
        )

    def index0(self, i: int) -> "Tensor":
        """Select slice i along axis 0 (copying); gradient scatters back."""
        if self.ndim < 1 or not 0 <= i < self.shape[0]:
            raise DimensionError(f"index0: index {i} out of range for shape {self.shape}")

        def grad_fn(g, i=i, shape=self.shape, dtype=self.data.dtype):
            full = np.zeros(shape, dtype=dtype)
            full[i] = g
            return full

        return Tensor._record(self.data[i].copy(), "index0", (self,), (grad_fn,))

    # ------------------------------------------------------------------
    # reductions
    # ------------------------------------------------------------------

    def _spread(self, grad: np.ndarray, axis, keepdims: bool) -> np.ndarray:
        if axis is None:
            return np.broadcast_to(grad, self.shape).copy()
        if not keepdims:
            grad = np.expand_dims(grad, axis)
        return np.broadcast_to(grad, self.shape).copy()

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return Tensor._record(
            np.sum(self.data, axis=axis, keepdims=keepdims),
            "sum",
            (self,),
            (lambda g, a=axis, k=keepdims: self._spread(g, a, k),),
        )

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = np.mean(self.data, axis=axis, keepdims=keepdims)
        if axis is None:
            count = self.size
        elif isinstance(axis, tuple):
            count = int(np.prod([self.shape[a] for a in axis]))
        else:
            count = self.shape[axis]
        return Tensor._record(
            out,
            "mean",
            (self,),
            (lambda g, a=axis, k=keepdims, n=count: self._spread(g, a, k) / n,),
        )

    # ------------------------------------------------------------------
    # matmul
    # ------------------------------------------------------------------

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product contracting a[.., m, k] with b[.., k, n]."""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul: inner extents differ, got {a.shape} and {b.shape}"
        )
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(
            f"matmul: batch extents of {a.shape} and {b.shape} do not broadcast"
        ) from None

    def grad_a(g, bd=b.data, sa=a.shape):
        return _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), sa)

    def grad_b(g, ad=a.data, sb=b.shape):
        return _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), sb)

    return Tensor._record(out, "matmul", (a, b), (grad_a, grad_b))


# ----------------------------------------------------------------------
# nonlinearities and losses
# ----------------------------------------------------------------------


def gelu(x: Tensor) -> Tensor:
    """GELU in the exact form x * Phi(x) with Phi the standard normal CDF."""
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    out = x.data * cdf

    def grad_fn(g, xd=x.data, c=cdf):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
        return g * (c + xd * pdf)

    return Tensor._record(out, "gelu", (x,), (grad_fn,))


def softmax_lastdim(x: Tensor) -> Tensor:
    """Row-stochastic softmax over the last axis, stabilized by max-shift."""
    if x.shape[-1] < 1:
        raise DimensionError(f"softmax: empty last axis in shape {x.shape}")
    shifted = x.data - np.max(x.data, axis=-1, keepdims=True)
    exps = np.exp(shifted)
    probs = exps / np.sum(exps, axis=-1, keepdims=True)

    def grad_fn(g, p=probs):
        dot = np.sum(g * p, axis=-1, keepdims=True)
        return p * (g - dot)

    return Tensor._record(probs, "softmax", (x,), (grad_fn,))


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine.

    Composed from primitive ops so the backward pass through the statistics
    falls out of the recorded graph.
    """
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise DimensionError(
            f"layernorm: affine shapes {gamma.shape}/{beta.shape} do not match "
            f"feature extent of {x.shape}"
        )
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = (var + eps) ** -0.5
    return centered * inv_std * gamma + beta


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over all elements; gradient 2*(pred-target)/N."""
    if pred.shape != target.shape:
        raise DimensionError(
            f"mse: shapes differ, got {pred.shape} and {target.shape}"
        )
    diff = pred.data - target.data
    out = np.mean(diff * diff)
    n = pred.size

    return Tensor._record(
        np.asarray(out, dtype=pred.data.dtype),
        "mse",
        (pred, target),
        (
            lambda g, d=diff, n=n: g * 2.0 * d / n,
            lambda g, d=diff, n=n: g * -2.0 * d / n,
        ),
    )


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits).

    Fused op: the forward pass uses the log-sum-exp trick and the backward
    pass is (softmax - onehot) / N, which avoids materializing log ops.
    """
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy: logits must be 2-D, got {logits.shape}")
    n, k = logits.shape
    if labels.shape != (n,):
        raise DimensionError(
            f"cross_entropy: labels shape {labels.shape} does not match logits {logits.shape}"
        )
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"cross_entropy: labels outside [0, {k})")
    shifted = logits.data - np.max(logits.data, axis=-1, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=-1))
    picked = shifted[np.arange(n), labels]
    out = np.mean(lse - picked)

    def grad_fn(g, s=shifted, lab=labels, n=n):
        probs = np.exp(s - np.log(np.sum(np.exp(s), axis=-1, keepdims=True)))
        probs[np.arange(n), lab] -= 1.0
        return g * probs / n

    return Tensor._record(
        np.asarray(out, dtype=logits.data.dtype), "cross_entropy", (logits,), (grad_fn,)
    )
