"""Central finite-difference gradient checking for ConvNet.

ReLU and max-pool make the loss piecewise smooth, and with tens of
thousands of activations almost any parameter probe moves some unit
across a kink. A central difference taken across a kink does not
estimate the derivative. The check therefore freezes the ReLU masks and
max-pool choices of the unperturbed forward pass while probing. The
frozen network is smooth in the parameters and agrees with the real one
(value and gradient) at the base point, and the differences use forward
passes only, so they stay independent of the backward code.
"""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .layers import MaxPool2, ReLU
from .model import ConvNet


@dataclass
class GradCheck:
    name: str
    index: tuple
    analytic: float
    numeric: float

    @property
    def rel_error(self) -> float:
        scale = max(abs(self.analytic), abs(self.numeric), 1e-6)
        return abs(self.analytic - self.numeric) / scale


@contextmanager
def frozen_kinks(model: ConvNet):
    """Reuse the last forward pass's ReLU masks and pool choices."""
    gates = [layer for layer in model.layers if isinstance(layer, (ReLU, MaxPool2))]
    for layer in gates:
        layer.frozen = True
    try:
        yield
    finally:
        for layer in gates:
            layer.frozen = False


def check_gradients(model: ConvNet, x, y, counts: dict[str, int], rng, step: float = 1e-4,
                    seed: int = 1) -> list[GradCheck]:
    """Compare analytic and central-difference gradients on sampled parameters.

    `counts` maps parameter names to how many distinct entries to check.
    Every evaluation uses the same dropout masks (drawn from `seed`).
    """
    def loss():
        return model.loss_and_gradients(x, y, np.random.default_rng(seed))[0]

    _, grads = model.loss_and_gradients(x, y, np.random.default_rng(seed))
    checks = []
    with frozen_kinks(model):
        for name, count in counts.items():
            p = model.params[name]
            for flat in rng.choice(p.size, size=count, replace=False):
                idx = np.unravel_index(int(flat), p.shape)
                old = p[idx]
                p[idx] = old + step
                up = loss()
                p[idx] = old - step
                down = loss()
                p[idx] = old
                checks.append(GradCheck(name, tuple(int(i) for i in idx),
                                        float(grads[name][idx]), (up - down) / (2 * step)))
    return checks
