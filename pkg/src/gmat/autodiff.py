"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tensor`` wraps a numpy array and remembers the primitive that produced it,
so a forward computation leaves behind a define-by-run record.  Node ids are
assigned in creation order, which is already a topological order of the
record; ``grad`` walks reachable nodes once in reverse id order and
accumulates adjoints.

Design notes:

* float64 everywhere — downstream code compares small gradient magnitudes.
* Elementwise primitives broadcast like numpy; the backward pass sums the
  adjoint over broadcast axes.
* ``max`` reductions route the adjoint through the (first) argmax entry only;
  the selection itself carries no gradient.
* ``logsumexp`` shifts by the max so inputs of magnitude up to ~1e300 stay
  finite.
* The backward pass normally skips per-primitive finiteness checks for speed;
  if a non-finite gradient reaches a requested leaf, the pass is re-run in
  checked mode to name the offending primitive.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, NumericError

_ids = itertools.count()


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum adjoint ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    """One node of the computation record: data, adjoint slot, and backward hook."""

    __slots__ = ("data", "grad", "nid", "_parents", "_bwd", "_op")

    def __init__(self, data, _parents: tuple = (), _bwd: Callable | None = None,
                 _op: str = "leaf"):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.nid = next(_ids)
        self._parents = _parents
        self._bwd = _bwd
        self._op = _op

    # --- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(op={self._op}, shape={self.shape}, nid={self.nid})"

    # --- arithmetic -----------------------------------------------------
    def __add__(self, other):
        a, b = self, lift(other)
        out = Tensor(a.data + b.data, (a, b), _op="add")
        out._bwd = lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
        return out

    __radd__ = __add__

    def __sub__(self, other):
        a, b = self, lift(other)
        out = Tensor(a.data - b.data, (a, b), _op="subtract")
        out._bwd = lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))
        return out

    def __rsub__(self, other):
        return lift(other) - self

    def __mul__(self, other):
        a, b = self, lift(other)
        out = Tensor(a.data * b.data, (a, b), _op="multiply")
        out._bwd = lambda g: (_unbroadcast(g * b.data, a.shape),
                              _unbroadcast(g * a.data, b.shape))
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self, lift(other)
        out = Tensor(a.data / b.data, (a, b), _op="divide")
        out._bwd = lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * a.data / (b.data * b.data), b.shape))
        return out

    def __rtruediv__(self, other):
        return lift(other) / self

    def __neg__(self):
        return self * -1.0

    def __matmul__(self, other):
        a, b = self, lift(other)
        if a.ndim != 2 or b.ndim != 2:
            raise ContractError("matmul supports 2-D operands only")
        out = Tensor(a.data @ b.data, (a, b), _op="matmul")
        out._bwd = lambda g: (g @ b.data.T, a.data.T @ g)
        return out

    # --- elementwise functions -------------------------------------------
    def exp(self):
        out = Tensor(np.exp(self.data), (self,), _op="exp")
        out._bwd = lambda g: (g * out.data,)
        return out

    def log(self):
        out = Tensor(np.log(self.data), (self,), _op="log")
        out._bwd = lambda g: (g / self.data,)
        return out

    def sqrt(self):
        out = Tensor(np.sqrt(self.data), (self,), _op="sqrt")
        out._bwd = lambda g: (g / (2.0 * out.data),)
        return out

    # --- shape ops -------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.shape
        out = Tensor(self.data.reshape(shape), (self,), _op="reshape")
        out._bwd = lambda g: (g.reshape(src),)
        return out

    def broadcast_to(self, shape):
        src = self.shape
        out = Tensor(np.broadcast_to(self.data, shape).copy(), (self,), _op="broadcast")
        out._bwd = lambda g: (_unbroadcast(g, src),)
        return out

    # --- reductions --------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        src = self.shape
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,), _op="sum")

        def bwd(g):
            if axis is None:
                return (np.broadcast_to(g, src).copy(),)
            gk = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gk, src).copy(),)

        out._bwd = bwd
        return out

    def max(self, axis=None, keepdims: bool = False):
        """Max-reduce with stop-gradient selection: the adjoint flows only
        through the first-argmax entry along the reduced axis."""
        src = self.shape
        data = self.data
        out = Tensor(data.max(axis=axis, keepdims=keepdims), (self,), _op="max")

        def bwd(g):
            gi = np.zeros(src)
            if axis is None:
                flat = int(np.argmax(data))
                gi.reshape(-1)[flat] = g if np.ndim(g) == 0 else g.reshape(())
            else:
                idx = np.expand_dims(np.argmax(data, axis=axis), axis)
                gk = g if keepdims else np.expand_dims(g, axis)
                np.put_along_axis(gi, idx, gk, axis=axis)
            return (gi,)

        out._bwd = bwd
        return out


def lift(x) -> Tensor:
    """Wrap a scalar or array as a constant leaf (no-op on Tensors)."""
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return lift(np.array(x, dtype=np.float64))


def maximum(a, b) -> Tensor:
    """Elementwise max; the adjoint follows the winning side (ties -> first)."""
    a, b = lift(a), lift(b)
    mask = a.data >= b.data
    out = Tensor(np.where(mask, a.data, b.data), (a, b), _op="maximum")
    out._bwd = lambda g: (_unbroadcast(g * mask, a.shape),
                          _unbroadcast(g * ~mask, b.shape))
    return out


def relu(x) -> Tensor:
    return maximum(x, 0.0)


def logsumexp(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Stable log-sum-exp (shift by max); finite for |x| up to ~1e300."""
    x = lift(x)
    m = x.data.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    shifted = np.exp(x.data - m)
    total = shifted.sum(axis=axis, keepdims=True)
    res = m + np.log(total)
    if not keepdims and axis is not None:
        res = np.squeeze(res, axis=axis)
    elif not keepdims:
        res = res.reshape(())
    out = Tensor(res, (x,), _op="logsumexp")

    def bwd(g):
        soft = shifted / total
        if axis is None:
            return (soft * g.reshape((1,) * x.ndim),)
        gk = g if keepdims else np.expand_dims(g, axis)
        return (soft * gk,)

    out._bwd = bwd
    return out


def gaussian_sample(mu: Tensor, log_sigma: Tensor, rng: np.random.Generator) -> Tensor:
    """Reparameterized draw ``mu + exp(log_sigma) * eps`` with recorded eps.

    The adjoint reaches ``mu`` with coefficient 1 and ``log_sigma`` with
    coefficient ``eps * exp(log_sigma)``.  ``log_sigma = -inf`` is the
    sigma-zero mode flag: the draw then equals ``mu`` exactly.
    """
    mu, log_sigma = lift(mu), lift(log_sigma)
    if mu.shape != log_sigma.shape:
        raise ContractError(
            f"gaussian_sample shape mismatch: {mu.shape} vs {log_sigma.shape}")
    eps = rng.standard_normal(mu.shape)
    with np.errstate(over="ignore"):
        sigma = np.exp(log_sigma.data)
    out = Tensor(mu.data + sigma * eps, (mu, log_sigma), _op="gaussian_sample")
    out._bwd = lambda g: (g, g * eps * sigma)
    return out


def _reachable(loss: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    nodes: list[Tensor] = []
    stack = [loss]
    while stack:
        node = stack.pop()
        if node.nid in seen:
            continue
        seen.add(node.nid)
        nodes.append(node)
        stack.extend(node._parents)
    nodes.sort(key=lambda n: n.nid, reverse=True)
    return nodes


def _backward(loss: Tensor, nodes: list[Tensor], check: bool) -> dict[int, np.ndarray]:
    adjoint: dict[int, np.ndarray] = {loss.nid: np.ones_like(loss.data)}
    with np.errstate(all="ignore"):
        for node in nodes:
            g = adjoint.get(node.nid)
            if g is None or node._bwd is None:
                continue
            for parent, pg in zip(node._parents, node._bwd(g)):
                if check and not np.all(np.isfinite(pg)):
                    raise NumericError(
                        f"non-finite gradient produced by primitive '{node._op}'")
                acc = adjoint.get(parent.nid)
                adjoint[parent.nid] = pg if acc is None else acc + pg
    return adjoint


def grad(loss: Tensor, params: Sequence[Tensor]) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to leaf ``params``.

    Parameters absent from the record map to zero arrays.  Populates ``.grad``
    on every param.  Raises ``NumericError`` naming the primitive if a
    non-finite gradient reaches any requested leaf.
    """
    if loss.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    nodes = _reachable(loss)
    adjoint = _backward(loss, nodes, check=False)
    result: dict[Tensor, np.ndarray] = {}
    bad = False
    for p in params:
        g = adjoint.get(p.nid)
        if g is None:
            g = np.zeros_like(p.data)
        elif not np.all(np.isfinite(g)):
            bad = True
        p.grad = g
        result[p] = g
    if bad:
        # Re-run with per-primitive checking to identify the culprit.
        _backward(loss, nodes, check=True)
        raise NumericError("non-finite gradient of unidentified origin")
    return result


def finite_difference_check(loss_builder: Callable[[list[Tensor]], Tensor],
                            params: Iterable[np.ndarray],
                            step: float) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_builder`` must be a deterministic function of its parameter leaves
    (freeze any sampling).  Relative error per coordinate is
    ``|analytic - central| / (|central| + 1e-8)``.
    """
    if not step > 0:
        raise ContractError("finite-difference step must be > 0")
    base = [np.array(p, dtype=np.float64) for p in params]

    def value(arrays) -> float:
        return float(loss_builder([Tensor(a.copy()) for a in arrays]).data)

    leaves = [Tensor(a.copy()) for a in base]
    analytic = grad(loss_builder(leaves), leaves)
    worst = 0.0
    for i, arr in enumerate(base):
        an = analytic[leaves[i]]
        flat = arr.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            f_plus = value(base)
            flat[j] = orig - step
            f_minus = value(base)
            flat[j] = orig
            central = (f_plus - f_minus) / (2.0 * step)
            err = abs(an.reshape(-1)[j] - central) / (abs(central) + 1e-8)
            worst = max(worst, err)
    return worst
