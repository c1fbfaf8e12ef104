"""Continuous-time attention: the head formula and the residual layer update.

A head returns ``sum_j v_j a_j / (1 + sum_j a_j)`` with
``a_j = exp(k_j . q / sqrt(d_kq))``.  The extra 1 acts like a dummy history
element with zero value, so an empty (or irrelevant) history gives a zero
contribution and the layer reduces to its residual input.
"""
from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = ["attention_head", "attend", "layer_embed", "layer_norm", "feed_forward"]


def attention_head(query: Tensor, keys: Tensor, values: Tensor) -> Tensor:
    """One query vector ``(d_kq,)`` against ``n`` keys ``(n, d_kq)`` / values ``(n, d_v)``."""
    n, dv = values.shape
    if n == 0:
        return Tensor(np.zeros(dv))
    scale = 1.0 / math.sqrt(query.shape[0])
    scores = ad.mul(ad.matmul(keys, query), scale)
    c = max(0.0, float(scores.value.max()))
    a = ad.exp(ad.sub(scores, c))
    num = ad.matmul(a, values)
    den = ad.add(ad.sum(a), math.exp(-c))
    return ad.div(num, den)


def attend(queries: Tensor, keys: Tensor, values: Tensor, mask: np.ndarray) -> Tensor:
    """Batched heads: row ``i`` of ``queries`` attends to keys where ``mask[i]`` is true.

    Rows with no visible key come out as exact zeros.
    """
    N = queries.shape[0]
    n, dv = values.shape
    mask = np.asarray(mask, dtype=bool)
    if N == 0:
        return Tensor(np.zeros((0, dv)))
    if n == 0 or not mask.any():
        return Tensor(np.zeros((N, dv)))
    scale = 1.0 / math.sqrt(queries.shape[1])
    scores = ad.mul(ad.matmul(queries, ad.transpose(keys)), scale)
    sv = scores.value
    c = np.maximum(np.max(np.where(mask, sv, -np.inf), axis=1), 0.0)
    # shifting masked entries by their own value keeps exp() finite; the mask then zeroes them
    shift = np.where(mask, c[:, None], sv)
    a = ad.mul(ad.exp(ad.sub(scores, shift)), mask.astype(np.float64))
    num = ad.matmul(a, values)
    den = ad.add(ad.sum(a, axis=1), np.exp(-c))
    return ad.div(num, ad.expand(ad.reshape(den, (N, 1)), (N, dv)))


def layer_embed(previous: Tensor, head_outputs: list[Tensor]) -> Tensor:
    """Residual update ``previous + tanh(sum of head outputs)``."""
    if not head_outputs:
        return previous
    total = head_outputs[0]
    for h in head_outputs[1:]:
        total = ad.add(total, h)
    return ad.add(previous, ad.tanh(total))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise layer normalisation of a matrix ``(N, D)``."""
    N, D = x.shape
    mean = ad.expand(ad.reshape(ad.mul(ad.sum(x, axis=1), 1.0 / D), (N, 1)), (N, D))
    centred = ad.sub(x, mean)
    var = ad.mul(ad.sum(ad.mul(centred, centred), axis=1), 1.0 / D)
    std = ad.expand(ad.reshape(ad.sqrt(ad.add(var, eps)), (N, 1)), (N, D))
    return ad.add(ad.mul(ad.div(centred, std), ad.expand(gain, (N, D))), ad.expand(bias, (N, D)))


def feed_forward(x: Tensor, W1: Tensor, b1: Tensor, W2: Tensor, b2: Tensor) -> Tensor:
    N = x.shape[0]
    h = ad.relu(ad.add(ad.matmul(x, ad.transpose(W1)), ad.expand(b1, (N, W1.shape[0]))))
    return ad.add(ad.matmul(h, ad.transpose(W2)), ad.expand(b2, (N, W2.shape[0])))
