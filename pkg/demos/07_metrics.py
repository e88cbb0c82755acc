"""Attention-quality metrics: Spearman rank correlation with tie
handling, exact Earth Mover's Distance on the grid metric, its entropic
(sinkhorn) approximation, entropy, and histogram overlap.
"""

import numpy as np

from attn_tutor import metrics as ME

p = np.zeros((3, 3))
p[0, 0] = 1.0
q = np.zeros((3, 3))
q[0, 2] = 1.0
print("point masses two cells apart, emd:", ME.emd(p, q))

uniform = np.full((3, 3), 1.0 / 9.0)
print("entropy(uniform 3x3):", ME.entropy(uniform), "= ln 9 =", np.log(9.0))
print("overlap(point, uniform):", ME.overlap(p, uniform))

rng = np.random.default_rng(1)
a = rng.dirichlet(np.ones(16)).reshape(4, 4)
b = rng.dirichlet(np.ones(16)).reshape(4, 4)
exact = ME.emd(a, b)
approx = ME.sinkhorn_emd(a, b, epsilon=0.01)
print(f"exact emd {exact:.6f} vs sinkhorn {approx:.6f} "
      f"({abs(approx - exact) / exact:.2%} off)")

ranked = ME.rank_correlation(a.ravel(), b.ravel())
same = ME.rank_correlation(a.ravel(), (2.0 * a + 1.0).ravel())
print(f"rank correlation random pair {ranked:.3f}, monotone transform {same:.3f}")

ties = np.array([1.0, 1.0, 2.0, 3.0])
print("average ranks with ties:", ME.average_ranks(ties) / 2.0)
