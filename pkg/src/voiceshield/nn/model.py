"""Three-block convolutional classifier over 32x32 paired-embedding grids."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .layers import (BatchNorm, Conv2D, Dense, Dropout, Flatten, MaxPool2, ReLU, cross_entropy,
                     softmax)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    input_size: int = 32
    blocks: tuple[tuple[int, int], ...] = ((32, 4), (64, 3), (128, 3))  # (filters, kernel)
    dense: tuple[int, ...] = (128, 32)
    n_classes: int = 3
    conv_dropout: float = 0.25
    dense_dropout: float = 0.4
    block3_dropout: bool = True
    bn_momentum: float = 0.9

    @property
    def flat_size(self) -> int:
        side = self.input_size >> len(self.blocks)
        return side * side * self.blocks[-1][0]

    def to_json(self) -> dict:
        d = asdict(self)
        d["blocks"] = [list(b) for b in self.blocks]
        d["dense"] = list(self.dense)
        return d

    @classmethod
    def from_json(cls, d) -> "ModelSpec":
        d = dict(d)
        d["blocks"] = tuple(tuple(b) for b in d["blocks"])
        d["dense"] = tuple(d["dense"])
        return cls(**d)


class ConvNet:
    """Input batch-norm, three conv blocks, two regularized dense layers, softmax.

    Each block is conv -> ReLU -> batch-norm -> 2x2 max-pool -> dropout.
    L1/L2 penalties apply to the weights of the hidden dense layers only.
    """

    def __init__(self, spec: ModelSpec = ModelSpec(), seed: int = 0, dtype=np.float32,
                 l1: float = 1e-5, l2: float = 1e-4):
        self.spec = spec
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.l1, self.l2 = l1, l2
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.trained = False
        self._init_params(np.random.default_rng(seed))
        self._build()

    def _add_bn(self, name, channels):
        self.params[f"{name}.gamma"] = np.ones(channels, self.dtype)
        self.params[f"{name}.beta"] = np.zeros(channels, self.dtype)
        self.buffers[f"{name}.running_mean"] = np.zeros(channels, self.dtype)
        self.buffers[f"{name}.running_var"] = np.ones(channels, self.dtype)

    def _init_params(self, rng):
        spec = self.spec
        self._add_bn("in_bn", 1)
        cin = 1
        for i, (filters, k) in enumerate(spec.blocks, start=1):
            fan_in = k * k * cin
            self.params[f"conv{i}.W"] = (rng.standard_normal((k, k, cin, filters))
                                         * np.sqrt(2.0 / fan_in)).astype(self.dtype)
            self.params[f"conv{i}.b"] = np.zeros(filters, self.dtype)
            self._add_bn(f"bn{i}", filters)
            cin = filters
        fan_in = spec.flat_size
        for i, units in enumerate(spec.dense, start=1):
            self.params[f"dense{i}.W"] = (rng.standard_normal((fan_in, units))
                                          * np.sqrt(2.0 / fan_in)).astype(self.dtype)
            self.params[f"dense{i}.b"] = np.zeros(units, self.dtype)
            fan_in = units
        limit = np.sqrt(6.0 / (fan_in + spec.n_classes))
        self.params["out.W"] = rng.uniform(-limit, limit, (fan_in, spec.n_classes)).astype(self.dtype)
        self.params["out.b"] = np.zeros(spec.n_classes, self.dtype)

    def _build(self):
        spec, p, b = self.spec, self.params, self.buffers
        layers = [BatchNorm("in_bn", p, b, spec.bn_momentum)]
        for i, (_, k) in enumerate(spec.blocks, start=1):
            layers += [Conv2D(f"conv{i}", p, k), ReLU(), BatchNorm(f"bn{i}", p, b, spec.bn_momentum),
                       MaxPool2()]
            if i < len(spec.blocks) or spec.block3_dropout:
                layers.append(Dropout(spec.conv_dropout))
        layers.append(Flatten())
        for i in range(1, len(spec.dense) + 1):
            layers += [Dense(f"dense{i}", p), ReLU(), Dropout(spec.dense_dropout)]
        layers.append(Dense("out", p))
        self.layers = layers

    @property
    def regularized(self) -> list[str]:
        return [f"dense{i}.W" for i in range(1, len(self.spec.dense) + 1)]

    def _prepare(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        side = self.spec.input_size
        if x.ndim == 3:
            x = x[..., None]
        if x.shape[1:] != (side, side, 1):
            raise ValueError(f"expected inputs of shape (N, {side}, {side}), got {x.shape}")
        return x

    def logits(self, x, training=False, rng=None, trace=None) -> np.ndarray:
        h = self._prepare(x)
        rng = rng if rng is not None else np.random.default_rng(0)
        for layer in self.layers:
            h = layer.forward(h, training, rng)
            if trace is not None:
                trace.append((type(layer).__name__, h.shape))
        return h

    def forward(self, x, training=False, rng=None) -> np.ndarray:
        """Class probabilities, one row per input."""
        return softmax(self.logits(x, training, rng))

    def penalty(self) -> float:
        total = 0.0
        for name in self.regularized:
            w = self.params[name]
            total += self.l1 * float(np.abs(w).sum()) + self.l2 * float((w * w).sum())
        return total

    def loss_and_gradients(self, x, targets, rng=None, training=True):
        """Cross-entropy plus dense-weight L1/L2 penalty, and its gradient for every parameter."""
        targets = np.asarray(targets, dtype=self.dtype)
        probs = softmax(self.logits(x, training, rng))
        if not np.all(np.isfinite(probs)):
            raise FloatingPointError("non-finite activations in forward pass")
        loss = cross_entropy(probs, targets) + self.penalty()
        grads: dict[str, np.ndarray] = {}
        dout = (probs - targets) / probs.shape[0]
        for layer in reversed(self.layers):
            dout = layer.backward(dout, grads)
        for name in self.regularized:
            w = self.params[name]
            grads[name] = grads[name] + self.l1 * np.sign(w) + 2.0 * self.l2 * w
        return loss, grads

    def predict(self, x, batch_size: int = 32):
        """Arg-max labels and probabilities in inference mode."""
        if not self.trained:
            raise RuntimeError("model has not been trained or loaded")
        x = np.asarray(x)
        probs = np.concatenate([self.forward(x[i:i + batch_size])
                                for i in range(0, x.shape[0], batch_size)]) \
            if x.shape[0] else np.zeros((0, self.spec.n_classes))
        return np.argmax(probs, axis=1), probs

    def state(self):
        return ({k: v.copy() for k, v in self.params.items()},
                {k: v.copy() for k, v in self.buffers.items()})

    def load_state(self, state):
        params, buffers = state
        for k, v in params.items():
            self.params[k][...] = v
        for k, v in buffers.items():
            self.buffers[k] = v.copy()

    def n_parameters(self) -> int:
        return sum(v.size for v in self.params.values())


class Adam:
    """Adam with bias-corrected moment estimates."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(params[k].dtype)


def save_checkpoint(path, model: ConvNet, history=None, extra=None) -> None:
    doc = {"version": CHECKPOINT_VERSION, "spec": model.spec.to_json(), "seed": model.seed,
           "dtype": model.dtype.name, "l1": model.l1, "l2": model.l2,
           "params": {k: v.tolist() for k, v in sorted(model.params.items())},
           "buffers": {k: v.tolist() for k, v in sorted(model.buffers.items())},
           "history": history or [], "extra": extra or {}}
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_checkpoint(path) -> ConvNet:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    model = ConvNet(ModelSpec.from_json(doc["spec"]), doc["seed"], doc["dtype"],
                    doc["l1"], doc["l2"])
    for k, v in doc["params"].items():
        arr = np.asarray(v, dtype=model.dtype)
        if arr.shape != model.params[k].shape:
            raise ValueError(f"{path}: shape mismatch for {k}")
        model.params[k][...] = arr
    for k, v in doc["buffers"].items():
        model.buffers[k] = np.asarray(v, dtype=model.dtype)
    model.trained = True
    return model
