"""Tensor-train basics: mode products, matricization, contraction.

A tensor train stores a huge tensor as a chain of small cores; contracting
feature vectors against the cores never materializes the dense tensor, which
is what makes length-l sequence functions with d^l values tractable.
"""

import numpy as np

from ncwfa import TTTrain, matricize, mode_product, rank_factorize, tt_contract_features, tt_to_dense

rng = np.random.default_rng(0)

# mode products: contract one axis of a tensor with a matrix
T = rng.normal(size=(2, 3, 2))
M = rng.normal(size=(5, 3))
Y = mode_product(T, M, axis=1)
print("mode product reshapes axis 1:", T.shape, "->", Y.shape)

# composition on the same axis collapses to a single product
A, B = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
lhs = mode_product(mode_product(T, A, 1), B, 1)
rhs = mode_product(T, B @ A, 1)
print("composition identity error:", np.abs(lhs - rhs).max())

# grouped matricization is just a disciplined reshape (row-major throughout)
flat = matricize(T, (1, 2))
print("grouping (1, 2):", T.shape, "->", flat.shape)

# a 3-core train over mode dimension 2 with bond dimension 4
d, k = 2, 4
tt = TTTrain([rng.normal(size=(d, k)), rng.normal(size=(k, d, k)), rng.normal(size=(k, d, k))])
feats = [rng.normal(size=d) for _ in range(3)]
fast = tt_contract_features(tt, feats)

dense = tt_to_dense(tt)  # (2, 2, 2, 4)
psi = np.kron(np.kron(feats[0], feats[1]), feats[2])
slow = psi @ matricize(dense, (3, 1))
print("TT contraction vs dense expansion:", np.abs(fast - slow).max())

# best low-rank factorization with the residual reported
Mat = rng.normal(size=(8, 3)) @ rng.normal(size=(3, 10))
for R in (1, 2, 3):
    fact = rank_factorize(Mat, R)
    print(f"rank {R}: residual {fact.residual:.3e}")
