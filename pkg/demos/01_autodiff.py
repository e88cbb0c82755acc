"""Reverse-mode autodiff on f64 numpy arrays.

Builds a small expression, backpropagates it, and cross-checks one
gradient against central finite differences.
"""

import numpy as np

from attn_tutor import tensor as T
from attn_tutor.tensor import Tensor, backward, grad_check

rng = np.random.default_rng(0)

x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
w = Tensor(rng.normal(size=(4, 2)), requires_grad=True)

y = T.tanh(T.matmul(x, w))
loss = T.tmean(T.square(y))
backward(loss)

print("loss:", float(loss.data))
print("dL/dw:\n", w.grad)

err = grad_check(lambda t: T.tmean(T.square(T.tanh(T.matmul(t, w)))), x)
print(f"finite-difference max relative error: {err:.3e}")
assert err < 1e-4

probs = T.softmax(Tensor(rng.normal(size=(2, 5)), requires_grad=True))
print("softmax rows sum to:", probs.data.sum(axis=1))
