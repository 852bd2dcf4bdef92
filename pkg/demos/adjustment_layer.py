"""
The adjustment layer
====================

Every block of UNet-LAL scales the first half of its channels by the
adversarial weight w. At w = 1 that scaling is a no-op, so the network is
exactly the plain encoder-decoder; at w = 0 those channels are switched off.
"""
import numpy as np

from lal import NetworkConfig, build_unet_lal, forward
from lal.network import block_layout, forward_tensor
from lal.tensor import Tensor, grad_check
from lal.training import LabelPair, lal_loss

cfg = NetworkConfig(depth=2, base_channels=4)
params = build_unet_lal(cfg, seed=0)
print("blocks:", [(name, b.in_channels, b.out_channels, b.split_n) for name, b in block_layout(cfg)])
print("parameters:", params.count())

# the head starts at zero, so a fresh network says 0.5 everywhere
x = np.random.default_rng(1).random((16, 16))
print("fresh output:", np.unique(forward(params, x, 0.3)))

# give it something to say
rng = np.random.default_rng(2)
for name, t in params.tensors.items():
    if name.endswith("bias") or name.startswith("head."):
        t.data[:] = rng.normal(0, 0.3, t.shape)

same = forward(params, x, 1.0).tobytes() == forward(params, x, 1.0, adjust=False).tobytes()
print("w=1 identical to the unadjusted network:", same)
for w in (0.0, 0.5, 1.0):
    print(f"w={w:.1f}  mean output {forward(params, x, w).mean():.4f}")

# analytic gradients against central differences for the loss at w = 0.4
labels = LabelPair(x > 0.6, x > 0.9)
report = grad_check(
    lambda g: lal_loss(forward_tensor(g, params, Tensor(x[None]), 0.4), labels, 0.4, graph=g),
    list(params))
print(f"grad check: max relative error {report.max_rel_error:.1e} over {report.checked} entries")
