"""Classifier head trained on pooled feature maps: conv -> ReLU -> linear -> ReLU -> dropout -> linear.

Forward and backward passes are written out by hand in float64. The head
emits one logit per sample, and ``sigmoid(logit)`` is the probability that
the volume is positive (malignant).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import LengthMismatch, ShapeMismatch, ShapeUnsupported

PROB_EPS = 1e-7
PARAM_ORDER = ("conv.weight", "conv.bias", "fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias")


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def bce_loss(p, t) -> float:
    """Mean binary cross-entropy; probabilities are clamped to [1e-7, 1 - 1e-7]."""
    p = np.atleast_1d(np.asarray(p, dtype=np.float64))
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if p.shape != t.shape or p.ndim != 1:
        raise LengthMismatch(f"probabilities {p.shape} and targets {t.shape} must be equal-length vectors")
    if p.size == 0:
        raise LengthMismatch("bce_loss needs at least one sample")
    pc = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    return float(-np.mean(t * np.log(pc) + (1.0 - t) * np.log(1.0 - pc)))


class ClassifierHead:
    """Trainable head for feature maps of shape ``input_shape = (C, H, W)``.

    Dropout acts on the hidden activations only. It uses inverted scaling,
    so inference needs no rescale and the expected train-mode logit equals
    the inference logit.
    """

    def __init__(self, input_shape, conv_filters=64, conv_kernel=3, conv_stride=1, hidden=1024, dropout=0.5, seed=0):
        c, h, w = (int(d) for d in input_shape)
        if not 0.0 <= dropout < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {dropout}")
        ho = (h - conv_kernel) // conv_stride + 1 if h >= conv_kernel else 0
        wo = (w - conv_kernel) // conv_stride + 1 if w >= conv_kernel else 0
        if ho < 1 or wo < 1:
            raise ShapeUnsupported(f"feature map {input_shape} smaller than conv kernel {conv_kernel}")
        self.input_shape = (c, h, w)
        self.conv_filters = conv_filters
        self.conv_kernel = conv_kernel
        self.conv_stride = conv_stride
        self.hidden = hidden
        self.dropout = dropout
        self.conv_out = (ho, wo)
        self.in_dim = conv_filters * ho * wo

        rng = np.random.default_rng([seed, 14])
        fan_conv = c * conv_kernel * conv_kernel
        self.params = {
            "conv.weight": rng.normal(0, np.sqrt(2.0 / fan_conv), (conv_filters, c, conv_kernel, conv_kernel)),
            "conv.bias": np.zeros(conv_filters),
            "fc1.weight": rng.normal(0, np.sqrt(2.0 / self.in_dim), (self.in_dim, hidden)),
            "fc1.bias": np.zeros(hidden),
            "fc2.weight": rng.normal(0, np.sqrt(1.0 / hidden), (hidden,)),
            "fc2.bias": np.zeros(1),
        }

    def config(self) -> dict:
        return {
            "input_shape": "x".join(str(d) for d in self.input_shape),
            "conv_filters": self.conv_filters,
            "conv_kernel": self.conv_kernel,
            "conv_stride": self.conv_stride,
            "hidden": self.hidden,
            "dropout": self.dropout,
        }

    def copy_params(self) -> dict:
        return {k: v.copy() for k, v in self.params.items()}

    def _as_batch(self, fm):
        fm = np.asarray(fm, dtype=np.float64)
        single = fm.ndim == 3
        if single:
            fm = fm[None]
        if fm.ndim != 4 or fm.shape[1:] != self.input_shape:
            raise ShapeMismatch(f"head expects feature maps of shape {self.input_shape}, got {fm.shape[-3:]}")
        return fm, single

    def _forward(self, x, train_mode, rng):
        k, s, f = self.conv_kernel, self.conv_stride, self.conv_filters
        n = x.shape[0]
        ho, wo = self.conv_out
        windows = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
        cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, -1)
        wc = self.params["conv.weight"].reshape(f, -1).T
        z = cols @ wc + self.params["conv.bias"]
        a = np.maximum(z, 0.0)
        flat = a.reshape(n, self.in_dim)
        pre1 = flat @ self.params["fc1.weight"] + self.params["fc1.bias"]
        hid = np.maximum(pre1, 0.0)
        if train_mode and self.dropout > 0:
            if rng is None:
                raise ValueError("train-mode forward needs an rng for dropout masks")
            mask = (rng.random(hid.shape) >= self.dropout) / (1.0 - self.dropout)
        else:
            mask = None
        hd = hid * mask if mask is not None else hid
        logit = hd @ self.params["fc2.weight"] + self.params["fc2.bias"][0]
        cache = (cols, z, flat, pre1, hd, mask)
        return logit, cache

    def logits(self, fm, train_mode=False, rng=None):
        x, single = self._as_batch(fm)
        logit, _ = self._forward(x, train_mode, rng)
        return float(logit[0]) if single else logit

    def forward(self, fm, train_mode=False, rng=None):
        """P(positive) for one ``C x H x W`` map (float) or a batch (vector)."""
        x, single = self._as_batch(fm)
        logit, _ = self._forward(x, train_mode, rng)
        p = sigmoid(logit)
        return float(p[0]) if single else p

    def backward(self, fm, targets, train_mode=False, rng=None):
        """Mean BCE over the batch and its gradient for every parameter."""
        x, _ = self._as_batch(fm)
        t = np.atleast_1d(np.asarray(targets, dtype=np.float64))
        if t.shape != (x.shape[0],):
            raise LengthMismatch(f"{x.shape[0]} feature maps but {t.size} targets")
        n = x.shape[0]
        logit, (cols, z, flat, pre1, hd, mask) = self._forward(x, train_mode, rng)
        p = sigmoid(logit)
        loss = bce_loss(p, t)

        # d loss / d logit; zero where the clamp is active
        inside = (p > PROB_EPS) & (p < 1.0 - PROB_EPS)
        dlogit = np.where(inside, p - t, 0.0) / n

        grads = {}
        grads["fc2.weight"] = hd.T @ dlogit
        grads["fc2.bias"] = np.array([dlogit.sum()])
        dh = np.outer(dlogit, self.params["fc2.weight"])
        if mask is not None:
            dh *= mask
        dpre1 = dh * (pre1 > 0)
        grads["fc1.weight"] = flat.T @ dpre1
        grads["fc1.bias"] = dpre1.sum(axis=0)
        dz = (dpre1 @ self.params["fc1.weight"].T).reshape(z.shape) * (z > 0)
        grads["conv.weight"] = (cols.T @ dz).T.reshape(self.params["conv.weight"].shape)
        grads["conv.bias"] = dz.sum(axis=0)
        return loss, grads
