"""NumPy layers with explicit backward passes. Activations are NHWC."""
from __future__ import annotations

import numpy as np


class Layer:
    """A layer owns named parameters (views into the model's parameter dict)."""

    params: dict = {}

    def forward(self, x, training, rng):
        raise NotImplementedError

    def backward(self, dout, grads):
        raise NotImplementedError


def _colsum(a: np.ndarray) -> np.ndarray:
    # column sums through BLAS; much faster than an axis-0 reduction for tall arrays
    return np.ones(a.shape[0], dtype=a.dtype) @ a


def same_padding(k: int) -> tuple[int, int]:
    # extra row/column goes after, as in TensorFlow's "same"
    total = k - 1
    return total // 2, total - total // 2


class Conv2D(Layer):
    """Stride-1 'same' convolution via im2col."""

    def __init__(self, name, params, kernel):
        self.name = name
        self.params = params
        self.k = kernel
        self.pad = same_padding(kernel)

    def _cols(self, xp, h, w):
        n, _, _, c = xp.shape
        s = xp.strides
        patches = np.lib.stride_tricks.as_strided(
            xp, shape=(n, h, w, self.k, self.k, c),
            strides=(s[0], s[1], s[2], s[1], s[2], s[3]), writeable=False)
        return patches.reshape(n * h * w, self.k * self.k * c)

    def forward(self, x, training, rng):
        W, b = self.params[f"{self.name}.W"], self.params[f"{self.name}.b"]
        n, h, w, c = x.shape
        lo, hi = self.pad
        cols = self._cols(np.pad(x, ((0, 0), (lo, hi), (lo, hi), (0, 0))), h, w)
        out = cols @ W.reshape(-1, W.shape[-1])
        out += b
        self.cache = (cols, x.shape)
        return out.reshape(n, h, w, W.shape[-1])

    def backward(self, dout, grads):
        W = self.params[f"{self.name}.W"]
        cols, (n, h, w, c) = self.cache
        self.cache = None
        d2 = dout.reshape(-1, W.shape[-1])
        grads[f"{self.name}.W"] = (cols.T @ d2).reshape(W.shape)
        grads[f"{self.name}.b"] = _colsum(d2)
        lo, hi = self.pad
        k = self.k
        if c >= 8:
            # full correlation of the padded output gradient with the flipped kernel
            dp = np.pad(dout, ((0, 0), (k - 1 - lo, k - 1 - hi), (k - 1 - lo, k - 1 - hi), (0, 0)))
            wf = W[::-1, ::-1].transpose(0, 1, 3, 2).reshape(-1, c)
            return (self._cols(dp, h, w) @ wf).reshape(n, h, w, c)
        # few input channels: scatter the column gradients back by shifted adds
        dcols = (d2 @ W.reshape(-1, W.shape[-1]).T).reshape(n, h, w, k, k, c)
        dxp = np.zeros((n, h + lo + hi, w + lo + hi, c), dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + h, j:j + w, :] += dcols[:, :, :, i, j, :]
        return dxp[:, lo:lo + h, lo:lo + w, :]


class ReLU(Layer):
    # when frozen, forward reuses the last mask (used by gradient checking)
    frozen = False

    def forward(self, x, training, rng):
        if self.frozen:
            return x * self.mask
        self.mask = x > 0
        return np.maximum(x, 0)

    def backward(self, dout, grads):
        return dout * self.mask


class BatchNorm(Layer):
    """Per-channel normalization over every axis but the last."""

    def __init__(self, name, params, buffers, momentum=0.9, eps=1e-5):
        self.name = name
        self.params = params
        self.buffers = buffers
        self.momentum = momentum
        self.eps = eps

    def forward(self, x, training, rng):
        gamma, beta = self.params[f"{self.name}.gamma"], self.params[f"{self.name}.beta"]
        flat = x.reshape(-1, x.shape[-1])
        if training:
            mean = _colsum(flat) / flat.shape[0]
            xc = flat - mean
            var = _colsum(xc * xc) / flat.shape[0]
            rm, rv = f"{self.name}.running_mean", f"{self.name}.running_var"
            self.buffers[rm] = self.momentum * self.buffers[rm] + (1 - self.momentum) * mean
            self.buffers[rv] = self.momentum * self.buffers[rv] + (1 - self.momentum) * var
        else:
            xc = flat - self.buffers[f"{self.name}.running_mean"]
            var = self.buffers[f"{self.name}.running_var"]
        inv = (1.0 / np.sqrt(var + self.eps)).astype(flat.dtype)
        xc *= inv
        self.cache = (xc, inv)
        out = xc * gamma
        out += beta
        return out.reshape(x.shape)

    def backward(self, dout, grads):
        gamma = self.params[f"{self.name}.gamma"]
        xhat, inv = self.cache
        d = dout.reshape(xhat.shape)
        m = d.shape[0]
        dgamma = _colsum(d * xhat)
        dbeta = _colsum(d)
        grads[f"{self.name}.gamma"] = dgamma
        grads[f"{self.name}.beta"] = dbeta
        # with dxhat = d * gamma, both batch sums of dxhat reduce to gamma * (dbeta, dgamma)
        dx = xhat * (-dgamma / m)
        dx += d
        dx -= dbeta / m
        dx *= gamma * inv
        return dx.reshape(dout.shape)


class MaxPool2(Layer):
    """2x2 max pool, stride 2. Ties route the gradient to the first maximum (row-major)."""

    frozen = False

    def forward(self, x, training, rng):
        a, b = x[:, 0::2, 0::2], x[:, 0::2, 1::2]
        c, d = x[:, 1::2, 0::2], x[:, 1::2, 1::2]
        if self.frozen:
            pick_b, pick_d, pick_bottom, _ = self.cache
            return np.where(pick_bottom, np.where(pick_d, d, c), np.where(pick_b, b, a))
        top, bottom = np.maximum(a, b), np.maximum(c, d)
        # strict comparisons keep the earlier candidate on ties
        self.cache = (b > a, d > c, bottom > top, x.shape)
        return np.maximum(top, bottom)

    def backward(self, dout, grads):
        pick_b, pick_d, pick_bottom, shape = self.cache
        dx = np.zeros(shape, dtype=dout.dtype)
        dtop = np.where(pick_bottom, 0, dout)
        dbottom = dout - dtop
        dx[:, 0::2, 1::2] = np.where(pick_b, dtop, 0)
        dx[:, 0::2, 0::2] = dtop - dx[:, 0::2, 1::2]
        dx[:, 1::2, 1::2] = np.where(pick_d, dbottom, 0)
        dx[:, 1::2, 0::2] = dbottom - dx[:, 1::2, 1::2]
        return dx


class Dropout(Layer):
    """Inverted dropout; identity outside training."""

    def __init__(self, rate):
        self.rate = rate

    def forward(self, x, training, rng):
        if not training or self.rate <= 0:
            self.mask = None
            return x
        keep = rng.random(x.shape, dtype=np.float32) >= self.rate
        self.mask = keep.astype(x.dtype) / x.dtype.type(1.0 - self.rate)
        return x * self.mask

    def backward(self, dout, grads):
        return dout if self.mask is None else dout * self.mask


class Flatten(Layer):
    def forward(self, x, training, rng):
        self.shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout, grads):
        return dout.reshape(self.shape)


class Dense(Layer):
    def __init__(self, name, params):
        self.name = name
        self.params = params

    def forward(self, x, training, rng):
        self.x = x
        return x @ self.params[f"{self.name}.W"] + self.params[f"{self.name}.b"]

    def backward(self, dout, grads):
        grads[f"{self.name}.W"] = self.x.T @ dout
        grads[f"{self.name}.b"] = dout.sum(axis=0)
        return dout @ self.params[f"{self.name}.W"].T


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(probs: np.ndarray, targets: np.ndarray) -> float:
    tiny = np.finfo(probs.dtype).tiny
    return float(-np.sum(targets * np.log(np.maximum(probs, tiny))) / probs.shape[0])
