"""A tour of the tape-based autodiff core.

Builds a two-layer network by hand, records the forward pass on a tape,
pulls gradients back out, and cross-checks one of them against central
finite differences.
"""

import numpy as np

from fedbatt import autodiff as ad
from fedbatt.autodiff import Tape, Tensor

rng = np.random.default_rng(0)

# a tiny regression-style problem: 8 points, 3 features, 2 logits
x = Tensor(rng.normal(size=(8, 3)))
w1, b1 = Tensor(rng.normal(size=(3, 16)) * 0.3), Tensor(np.zeros(16))
w2, b2 = Tensor(rng.normal(size=(16, 2)) * 0.3), Tensor(np.zeros(2))
labels = rng.integers(0, 2, size=8)

with Tape() as tape:
    hidden = ad.relu(ad.dense(x, w1, b1))
    loss = ad.softmax_cross_entropy(ad.dense(hidden, w2, b2), labels)
print(f"loss on random weights: {float(loss.data):.4f} "
      f"(chance would be {np.log(2):.4f})")

grads = tape.gradients(loss)
print(f"gradient shapes: w1 {grads[w1].shape}, b2 {grads[b2].shape}")

# spot-check dL/dw2[0, 0] against a symmetric difference quotient
step = 1e-6
def loss_at(delta):
    w2.data[0, 0] += delta
    hidden = np.maximum(x.data @ w1.data + b1.data, 0.0)
    logits = hidden @ w2.data + b2.data
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    w2.data[0, 0] -= delta
    return -log_p[np.arange(8), labels].mean()

numeric = (loss_at(step) - loss_at(-step)) / (2 * step)
print(f"analytic dL/dw2[0,0] = {grads[w2][0, 0]:+.8f}")
print(f"numeric  dL/dw2[0,0] = {numeric:+.8f}")

# a few steps of SGD drive the loss down
params = [w1, b1, w2, b2]
opt = ad.Sgd(params, lr=0.5)
for step_index in range(20):
    with Tape() as tape:
        hidden = ad.relu(ad.dense(x, w1, b1))
        loss = ad.softmax_cross_entropy(ad.dense(hidden, w2, b2), labels)
    opt.step(tape.gradients(loss))
print(f"loss after 20 SGD steps: {float(loss.data):.4f}")
