"""Vectorised interval arithmetic for sound intensity upper bounds.

A :class:`Box` holds elementwise ``lo``/``hi`` arrays.  Every operation
returns a box containing ``f(x)`` for all ``x`` in the input box.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["Interval", "Box", "point", "affine", "dot_rows", "normalized_attention", "softmax_pool_hull"]


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    def __contains__(self, x: float) -> bool:
        return self.lo <= x <= self.hi

    def __add__(self, o: "Interval") -> "Interval":
        return Interval(self.lo + o.lo, self.hi + o.hi)

    def tanh(self) -> "Interval":
        return Interval(math.tanh(self.lo), math.tanh(self.hi))

    def exp(self) -> "Interval":
        return Interval(math.exp(self.lo), math.exp(self.hi))


class Box:
    __slots__ = ("lo", "hi")

    def __init__(self, lo, hi=None):
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = self.lo if hi is None else np.asarray(hi, dtype=np.float64)
        if self.lo.shape != self.hi.shape:
            raise ValueError("lo/hi shape mismatch")
        if np.any(self.lo > self.hi):
            raise ValueError("box with lo > hi")

    @property
    def shape(self):
        return self.lo.shape

    @property
    def centre(self):
        return 0.5 * (self.lo + self.hi)

    @property
    def radius(self):
        return 0.5 * (self.hi - self.lo)

    def __add__(self, other: "Box") -> "Box":
        return Box(self.lo + other.lo, self.hi + other.hi)

    def tanh(self) -> "Box":
        return Box(np.tanh(self.lo), np.tanh(self.hi))

    def exp(self) -> "Box":
        return Box(np.exp(self.lo), np.exp(self.hi))

    def relu(self) -> "Box":
        return Box(np.maximum(self.lo, 0.0), np.maximum(self.hi, 0.0))

    def softplus(self, tau) -> "Box":
        from .autodiff import PRIMITIVES  # stable softplus, monotone in x for tau > 0
        f = PRIMITIVES["softplus"].forward
        tau = np.broadcast_to(np.asarray(tau, dtype=np.float64), self.lo.shape)
        return Box(f(self.lo, tau), f(self.hi, tau))

    def hull(self, other: "Box") -> "Box":
        return Box(np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi))

    def intersect(self, other: "Box") -> "Box":
        lo, hi = np.maximum(self.lo, other.lo), np.minimum(self.hi, other.hi)
        return Box(lo, np.maximum(lo, hi))

    def contains(self, x, atol: float = 0.0) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.lo - atol) and np.all(x <= self.hi + atol))

    @staticmethod
    def concat(boxes, axis: int = -1) -> "Box":
        return Box(np.concatenate([b.lo for b in boxes], axis=axis), np.concatenate([b.hi for b in boxes], axis=axis))

    def __repr__(self):
        return f"Box(lo={self.lo}, hi={self.hi})"


def point(x) -> Box:
    return Box(x)


def affine(W: np.ndarray, x: Box, b: np.ndarray | None = None) -> Box:
    """``W @ x (+ b)`` for a point matrix and a box vector (last axis)."""
    c = x.centre @ W.T
    r = x.radius @ np.abs(W).T
    if b is not None:
        c = c + b
    return Box(c - r, c + r)


def dot_rows(A: np.ndarray, x: Box) -> Box:
    """Interval of ``A[j] . x`` for every row ``j`` of a point matrix."""
    c = A @ x.centre
    r = np.abs(A) @ x.radius
    return Box(c - r, c + r)


def _fractional_extreme(values: np.ndarray, a_lo: np.ndarray, a_hi: np.ndarray, maximise: bool) -> np.ndarray:
    # max (or min) over a in [a_lo, a_hi] of sum(v a) / (1 + sum a), per column of values.
    # The optimum puts a_j at its upper end exactly for v_j above the optimum value, so
    # scanning the sorted thresholds is exact.
    n, D = values.shape
    order = np.argsort(-values if maximise else values, axis=0, kind="stable")
    v = np.take_along_axis(values, order, axis=0)
    lo = a_lo[order]
    hi = a_hi[order]
    base_num = (v * lo).sum(axis=0)
    base_den = 1.0 + lo.sum(axis=0)
    d_num = np.cumsum(v * (hi - lo), axis=0)
    d_den = np.cumsum(hi - lo, axis=0)
    cand = np.vstack([base_num[None, :] / base_den[None, :], (base_num + d_num) / (base_den + d_den)])
    return cand.max(axis=0) if maximise else cand.min(axis=0)


def normalized_attention(scores: Box, values: np.ndarray, optional=None) -> Box:
    """Bound ``sum_j v_j a_j / (1 + sum_j a_j)`` with ``a_j = exp(score_j)``.

    ``scores`` is a box of shape ``(n,)``; ``values`` is a point matrix
    ``(n, D)``.  Entries flagged in ``optional`` may also be absent
    (weight 0).  The result always lies in the hull of ``{0} U {v_j}``; the
    exact linear-fractional extremes over the weight box are returned,
    intersected with that hull.
    """
    n, D = values.shape
    if n == 0:
        return Box(np.zeros(D))
    with np.errstate(over="ignore"):        # overflow falls back to the hull below
        a_lo, a_hi = np.exp(scores.lo), np.exp(scores.hi)
    if optional is not None:
        a_lo = np.where(optional, 0.0, a_lo)
    hull = Box(np.minimum(values.min(axis=0), 0.0), np.maximum(values.max(axis=0), 0.0))
    if not np.all(np.isfinite(a_hi)):
        return hull
    tight = Box(_fractional_extreme(values, a_lo, a_hi, False), _fractional_extreme(values, a_lo, a_hi, True))
    return tight.intersect(hull)


def softmax_pool_hull(boxes: list[Box]) -> Box:
    """Any softmax-weighted average of elements lies in the hull of their boxes."""
    lo = np.min([b.lo for b in boxes], axis=0)
    hi = np.max([b.hi for b in boxes], axis=0)
    return Box(lo, hi)
