"""Minimal reverse-mode autodiff over dense float64 matrices.

Every value is a 2-d array.  A :class:`Tape` records primitive ops in
execution order; :meth:`Tape.backward` replays them in reverse once and
returns gradients for the registered parameters.
"""
from __future__ import annotations

from typing import Callable

import numpy as np
import scipy.sparse as sp


class TapeError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "name", "_tape")

    def __init__(self, value, requires_grad=False, name=None, tape=None):
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._tape = tape

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"


def _as2d(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        return a.reshape(1, 1)
    if a.ndim == 1:
        return a.reshape(-1, 1)
    if a.ndim != 2:
        raise ValueError(f"expected at most 2 dims, got shape {a.shape}")
    return a


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Tape:
    """Records ops on :class:`Tensor` values for one backward pass."""

    def __init__(self):
        self._ops: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.params: dict[str, Tensor] = {}
        self._consumed = False

    # -- leaves -----------------------------------------------------------
    def param(self, value, name: str) -> Tensor:
        if name in self.params:
            raise TapeError(f"parameter {name!r} registered twice")
        t = Tensor(_as2d(value).copy(), requires_grad=True, name=name, tape=self)
        self.params[name] = t
        return t

    def const(self, value, name=None) -> Tensor:
        return Tensor(_as2d(value), requires_grad=False, name=name, tape=self)

    def _record(self, value, inputs, backward, op) -> Tensor:
        if not np.all(np.isfinite(value)):
            raise FloatingPointError(f"non-finite result in {op}")
        needs = any(t.requires_grad for t in inputs)
        out = Tensor(value, requires_grad=needs, name=op, tape=self)
        if needs:
            self._ops.append((out, inputs, backward))
        return out

    # -- primitives -------------------------------------------------------
    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape[1] != b.shape[0]:
            raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")

        def back(g):
            return g @ b.value.T, a.value.T @ g
        return self._record(a.value @ b.value, (a, b), back, "matmul")

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        """Elementwise sum; ``b`` may also be a (1, cols) row broadcast over ``a``."""
        if a.shape == b.shape:
            return self._record(a.value + b.value, (a, b), lambda g: (g, g), "add")
        if b.shape == (1, a.shape[1]):
            return self._record(a.value + b.value, (a, b),
                                lambda g: (g, g.sum(axis=0, keepdims=True)), "add")
        raise ValueError(f"add shape mismatch {a.shape} + {b.shape}")

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ValueError(f"mul shape mismatch {a.shape} * {b.shape}")
        return self._record(a.value * b.value, (a, b),
                            lambda g: (g * b.value, g * a.value), "mul")

    def scale(self, a: Tensor, c: float) -> Tensor:
        c = float(c)
        return self._record(a.value * c, (a,), lambda g: (g * c,), "scale")

    def row_mean(self, x: Tensor, agg) -> Tensor:
        """Left-multiply by a constant row-averaging matrix ``agg`` (sparse or dense)."""
        if agg.shape[1] != x.shape[0]:
            raise ValueError(f"row_mean shape mismatch {agg.shape} @ {x.shape}")
        aggT = agg.T.tocsr() if sp.issparse(agg) else agg.T

        def back(g):
            return (np.asarray(aggT @ g),)
        return self._record(np.asarray(agg @ x.value), (x,), back, "row_mean")

    def relu(self, x: Tensor) -> Tensor:
        mask = x.value > 0
        return self._record(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,), "relu")

    def log(self, x: Tensor) -> Tensor:
        if np.any(x.value <= 0):
            raise FloatingPointError("log of non-positive value")
        return self._record(np.log(x.value), (x,), lambda g: (g / x.value,), "log")

    def gather(self, x: Tensor, idx) -> Tensor:
        idx = np.asarray(idx, dtype=np.int64)
        n = x.shape[0]

        def back(g):
            out = np.zeros((n, g.shape[1]))
            np.add.at(out, idx, g)
            return (out,)
        return self._record(x.value[idx], (x,), back, "gather")

    def column(self, x: Tensor, j: int) -> Tensor:
        shape = x.shape

        def back(g):
            out = np.zeros(shape)
            out[:, j] = g[:, 0]
            return (out,)
        return self._record(x.value[:, j:j + 1].copy(), (x,), back, "column")

    def concat(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape[0] != b.shape[0]:
            raise ValueError("concat row mismatch")
        ca = a.shape[1]
        return self._record(np.hstack([a.value, b.value]), (a, b),
                            lambda g: (g[:, :ca], g[:, ca:]), "concat")

    def rowdot(self, a: Tensor, b: Tensor) -> Tensor:
        """Row-wise inner products, shape (n, 1)."""
        if a.shape != b.shape:
            raise ValueError(f"rowdot shape mismatch {a.shape} . {b.shape}")
        return self._record(np.sum(a.value * b.value, axis=1, keepdims=True), (a, b),
                            lambda g: (g * b.value, g * a.value), "rowdot")

    def sum(self, x: Tensor) -> Tensor:
        shape = x.shape
        return self._record(np.array([[x.value.sum()]]), (x,),
                            lambda g: (np.full(shape, g[0, 0]),), "sum")

    def weighted_sum(self, x: Tensor, w) -> Tensor:
        """``sum(x * w)`` with a constant weight array of the same shape."""
        w = _as2d(w)
        if w.shape != x.shape:
            raise ValueError(f"weighted_sum shape mismatch {x.shape} vs {w.shape}")
        return self._record(np.array([[np.sum(x.value * w)]]), (x,),
                            lambda g: (g[0, 0] * w,), "weighted_sum")

    def softmax(self, x: Tensor) -> Tensor:
        z = x.value - x.value.max(axis=1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=1, keepdims=True)

        def back(g):
            return (p * (g - np.sum(g * p, axis=1, keepdims=True)),)
        return self._record(p, (x,), back, "softmax")

    def softmax_ce(self, logits: Tensor, labels) -> Tensor:
        """Mean softmax cross-entropy over rows."""
        y = np.asarray(labels, dtype=np.int64).reshape(-1)
        n = logits.shape[0]
        if y.shape[0] != n or n == 0:
            raise ValueError("softmax_ce needs one label per row")
        z = logits.value - logits.value.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1))
        loss = np.mean(lse - z[np.arange(n), y])
        p = np.exp(z - lse[:, None])

        def back(g):
            d = p.copy()
            d[np.arange(n), y] -= 1.0
            return (d * (g[0, 0] / n),)
        return self._record(np.array([[loss]]), (logits,), back, "softmax_ce")

    def abs_mean_diff(self, p: Tensor, groups, zeta: int) -> Tensor:
        """``sum_a |mean(p over group a) - mean(p over the rest)|`` for a (n, 1) column.

        Groups that are empty, or whose complement is empty, contribute nothing.
        """
        s = np.asarray(groups, dtype=np.int64).reshape(-1)
        if p.shape != (s.shape[0], 1):
            raise ValueError("abs_mean_diff expects an (n, 1) column and one group per row")
        v = p.value[:, 0]
        total = 0.0
        coef = np.zeros(s.shape[0])
        for a in range(zeta):
            inside = s == a
            na, nr = int(inside.sum()), int((~inside).sum())
            if na == 0 or nr == 0:
                continue
            diff = v[inside].mean() - v[~inside].mean()
            total += abs(diff)
            sign = np.sign(diff)
            coef += np.where(inside, sign / na, -sign / nr)
        return self._record(np.array([[total]]), (p,),
                            lambda g: ((g[0, 0] * coef)[:, None],), "abs_mean_diff")

    def segment_log_softmax(self, q: Tensor, ptr) -> Tensor:
        """Log-softmax of a (n, 1) column within contiguous segments ``ptr[i]:ptr[i+1]``."""
        ptr = np.asarray(ptr, dtype=np.int64)
        if q.shape[1] != 1 or ptr[-1] != q.shape[0] or ptr[0] != 0:
            raise ValueError("segment_log_softmax expects an (n, 1) column covered by ptr")
        lens = np.diff(ptr)
        if np.any(lens <= 0):
            raise ValueError("empty segment")
        seg = np.repeat(np.arange(lens.size), lens)
        v = q.value[:, 0]
        mx = np.maximum.reduceat(v, ptr[:-1])
        z = v - mx[seg]
        lse = np.log(np.add.reduceat(np.exp(z), ptr[:-1]))
        out = z - lse[seg]
        prob = np.exp(out)

        def back(g):
            gs = np.add.reduceat(g[:, 0], ptr[:-1])
            return ((g[:, 0] - prob * gs[seg])[:, None],)
        return self._record(out[:, None], (q,), back, "segment_log_softmax")

    # -- reverse pass -----------------------------------------------------
    def backward(self, loss: Tensor, wrt: list[Tensor] | tuple = ()) -> dict[str, np.ndarray]:
        """Gradients of ``loss`` for every registered parameter.

        Gradients for intermediate tensors listed in ``wrt`` are stored on their
        ``.grad`` attribute (zeros when the loss does not depend on them).
        """
        if self._consumed:
            raise TapeError("tape already consumed")
        if loss.shape != (1, 1):
            raise TapeError(f"loss must be scalar, got shape {loss.shape}")
        self._consumed = True
        keep = {id(t) for t in wrt}
        kept: dict[int, np.ndarray] = {}
        grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
        for out, inputs, back in reversed(self._ops):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            if id(out) in keep:
                kept[id(out)] = g
            for t, gi in zip(inputs, back(g)):
                if not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        for t in wrt:
            g = kept.get(id(t), grads.get(id(t)))
            t.grad = np.zeros_like(t.value) if g is None else g
        result = {}
        for name, t in self.params.items():
            g = grads.get(id(t))
            t.grad = np.zeros_like(t.value) if g is None else g
            result[name] = t.grad
        self._ops.clear()
        return result


__all__ = ["Tape", "Tensor", "TapeError", "glorot_uniform"]
