"""Build a few layers by hand and audit their backward passes.

Every layer in voxkit carries its own analytic backward. The gradcheck
module compares those against central finite differences in float64, which
is the ground truth this whole library leans on.
"""

import numpy as np

import voxkit.gradcheck as gc
import voxkit.layers as L

rng = np.random.default_rng(0)

# a small conv + fc stack, forward only
params = L.ParameterSet()
conv = L.Conv2DLayer(params, "demo.conv", in_ch=1, out_ch=4, kernel=(3, 3), rng=rng)
fc = L.FullyConnected(params, "demo.fc", in_features=4, out_features=2, rng=rng)

x = rng.standard_normal((2, 1, 8, 8))
h = conv.forward(x, "train")
pooled = h.mean(axis=(2, 3))
y = fc.forward(pooled)
print(f"conv {x.shape} -> {h.shape}, pooled {pooled.shape}, fc -> {y.shape}")
print(f"parameters registered: {[p.name for p in params]}")

# backprop a made-up loss and look at the gradients
loss_grad = np.ones_like(y) / y.size
gp = fc.backward(loss_grad)
conv.backward(np.broadcast_to(gp[:, :, None, None], h.shape) / (8 * 8))
for p in params:
    print(f"  {p.name:14s} grad norm {np.linalg.norm(p.grad):.4e}")

# the finite-difference audit, a few components of the full suite
print("\nfinite-difference audit (5 seeds):")
rows = gc.run_suite(n_seeds=5, components=["conv2d", "fully_connected",
                                           "se_block", "attention_stats_pooling"])
for name, worst, tol, ok in rows:
    print(f"  {name:28s} worst rel err {worst:.3e}  tol {tol:.0e}  "
          f"{'ok' if ok else 'FAIL'}")
