"""Weighted cross-entropy losses. Both return (mean loss, gradient wrt logits)."""

import numpy as np


def log_softmax(z):
    m = z.max(axis=1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


def softmax(z):
    return np.exp(log_softmax(z))


def weighted_ce_loss(logits, labels, weights=None):
    """Mean over the batch of ``-w[y] * log softmax(z)[y]``."""
    z = np.atleast_2d(logits)
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n, k = z.shape
    w = np.ones(k, dtype=z.dtype) if weights is None else np.asarray(weights, dtype=z.dtype)
    ls = log_softmax(z)
    wy = w[y]
    loss = -(wy * ls[np.arange(n), y]).sum() / n
    grad = np.exp(ls)
    grad[np.arange(n), y] -= 1
    grad *= (wy / n)[:, None]
    return float(loss), grad.astype(z.dtype, copy=False)


def bce_loss(logits, targets, weights=None):
    """Binary cross-entropy on one sigmoid logit per sample.

    ``weights`` holds the (negative, positive) class weights.
    """
    z = np.asarray(logits).reshape(len(np.atleast_1d(targets)), -1)[:, 0]
    y = np.atleast_1d(np.asarray(targets)).astype(z.dtype)
    n = len(y)
    w = np.ones(2, dtype=z.dtype) if weights is None else np.asarray(weights, dtype=z.dtype)
    wy = w[y.astype(np.int64)]
    per = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    loss = (wy * per).sum() / n
    e = np.exp(-np.abs(z))
    sig = np.where(z >= 0, 1 / (1 + e), e / (1 + e))
    grad = (wy * (sig - y) / n).astype(z.dtype)
    return float(loss), grad[:, None]
