"""Check the hand-written backward pass of the CNN against finite differences.

The ReLU masks and max-pool choices are frozen at the unperturbed point so
the central differences never straddle a kink.
"""
import numpy as np

from voiceshield.nn import ConvNet
from voiceshield.nn.gradcheck import check_gradients

rng = np.random.default_rng(0)
net = ConvNet(seed=0, dtype=np.float64)
x = rng.random((4, 32, 32))
y = np.eye(3)[[0, 1, 2, 0]]

counts = {name: min(2, p.size) for name, p in net.params.items()}
checks = check_gradients(net, x, y, counts, rng)
for c in checks:
    print(f"{c.name:>12} {str(c.index):>18}  analytic {c.analytic:+.6e}  numeric {c.numeric:+.6e}"
          f"  rel {c.rel_error:.1e}")
print("worst relative error:", max(c.rel_error for c in checks))
