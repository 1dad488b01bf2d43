"""Dense tensor algebra and tensor-train (TT) utilities.

Dense tensors are plain numpy arrays in C (row-major) order; that ordering is
used consistently for every matricization, vectorization and grouped reshape
in this package.  Conventions:

    mode axes are 0-indexed (numpy style)
    a TT train with uniform bond dimension k over mode dimension d has cores
        first core   (d, k)            -- or (k0, d, k) when a left boundary
                                          vector is attached
        middle cores (k, d, k)
        last core    (k, d, k)         -- train "ends in a transition core";
                                          the trailing bond doubles as output
                  or (k, p)            -- explicit output core
"""

import math
from typing import NamedTuple, Optional, Sequence

import numpy as np

# Entry-count cap for dense TT expansion; keeps oracle tests desk-scale.
DENSE_SIZE_CAP = 10**7

# Singular values below SV_CUTOFF * sigma_max count as zero in pseudoinverses.
SV_CUTOFF = 1e-10


def mode_product(tensor, matrix, axis):
    """Mode-`axis` product of `tensor` with `matrix` (or vector).

    For a matrix M of shape (m, d_axis) the result has `tensor`'s shape with
    dimension `axis` replaced by m, and satisfies the matricization identity
    unfold(Y, axis) = M @ unfold(T, axis).  A 1-d `matrix` is treated as the
    mode-`axis` vector product: the contracted axis is dropped.
    """
    tensor = np.asarray(tensor, dtype=float)
    matrix = np.asarray(matrix, dtype=float)
    if not 0 <= axis < tensor.ndim:
        raise ValueError(
            f"mode {axis} out of range for tensor of order {tensor.ndim}"
        )
    if matrix.ndim == 1:
        if matrix.shape[0] != tensor.shape[axis]:
            raise ValueError(
                f"mode {axis} has size {tensor.shape[axis]}, "
                f"vector has size {matrix.shape[0]}"
            )
        return np.tensordot(matrix, tensor, axes=(0, axis))
    if matrix.ndim != 2 or matrix.shape[1] != tensor.shape[axis]:
        raise ValueError(
            f"mode {axis} has size {tensor.shape[axis]}, "
            f"matrix has shape {matrix.shape}"
        )
    out = np.tensordot(matrix, tensor, axes=(1, axis))
    # tensordot puts the new dimension first; move it back to `axis`.
    return np.moveaxis(out, 0, axis)


def matricize(tensor, group_sizes: Sequence[int]):
    """Reshape `tensor` by grouping consecutive axes.

    `group_sizes` lists how many consecutive axes go into each group; the
    result has one dimension per group (so 1 group -> vector, 2 -> matrix).
    The rearrangement is a bijection: reshaping back restores the tensor
    bit-identically.
    """
    tensor = np.asarray(tensor)
    groups = list(group_sizes)
    if any(g < 1 for g in groups) or sum(groups) != tensor.ndim:
        raise ValueError(
            f"grouping {tuple(groups)} invalid for tensor of order {tensor.ndim}"
        )
    dims = []
    pos = 0
    for g in groups:
        dims.append(int(np.prod(tensor.shape[pos : pos + g], dtype=np.int64)))
        pos += g
    return tensor.reshape(tuple(dims))


class TTTrain:
    """Tensor train with a uniform bond dimension.

    Parameters
    ----------
    cores : list of arrays following the shape conventions above.
    left : optional (k0,) boundary vector.  When given, the first core is a
        (k0, d, k) transition core (or, for a train with zero mode-d cores,
        `cores` may be empty / a single output core).
    """

    def __init__(self, cores, left: Optional[np.ndarray] = None):
        self.cores = [np.asarray(c, dtype=float) for c in cores]
        self.left = None if left is None else np.asarray(left, dtype=float)
        if self.left is not None and self.left.ndim != 1:
            raise ValueError("left boundary must be a vector")
        self._validate()

    def _validate(self):
        cores = self.cores
        if not cores:
            if self.left is None:
                raise ValueError("empty train needs a left boundary vector")
            self.mode_dim = None
            self.rank = self.left.shape[0]
            self.has_output_core = False
            self.out_dim = self.rank
            return

        bond = None if self.left is None else self.left.shape[0]
        mode_dim = None
        for i, core in enumerate(cores):
            last = i == len(cores) - 1
            if core.ndim == 3:
                k_in, d, k_out = core.shape
                if bond is not None and k_in != bond:
                    raise ValueError(
                        f"core {i}: incoming bond {k_in} != previous bond {bond}"
                    )
                if bond is None and self.left is None and i > 0:
                    raise ValueError(f"core {i}: unexpected order-3 first core")
                if mode_dim is None:
                    mode_dim = d
                elif d != mode_dim:
                    raise ValueError(
                        f"core {i}: mode dimension {d} != {mode_dim}"
                    )
                bond = k_out
            elif core.ndim == 2:
                if i == 0 and self.left is None:
                    # leading (d, k) core
                    mode_dim, bond = core.shape[0], core.shape[1]
                elif last:
                    # trailing (k, p) output core
                    if core.shape[0] != bond:
                        raise ValueError(
                            f"output core bond {core.shape[0]} != {bond}"
                        )
                else:
                    raise ValueError(f"core {i}: order-2 core in the interior")
            else:
                raise ValueError(f"core {i}: cores must be order 2 or 3")
        self.mode_dim = mode_dim
        tail = cores[-1]
        self.has_output_core = tail.ndim == 2 and not (
            len(cores) == 1 and self.left is None
        )
        self.out_dim = tail.shape[-1]
        self.rank = tail.shape[0] if self.has_output_core else tail.shape[-1]

    @property
    def num_mode_cores(self) -> int:
        return len(self.cores) - (1 if self.has_output_core else 0)

    def __len__(self):
        return self.num_mode_cores


def tt_contract_features(tt: TTTrain, features) -> np.ndarray:
    """Contract every mode-d core of `tt` with the corresponding feature vector.

    Equivalent to left-multiplying the grouped matricization of the dense
    tensor by kron(features[0], ..., features[-1]) without materializing it;
    cost is linear in the number of cores.  With an empty feature list on a
    train with zero mode-d cores, returns the stored left boundary vector
    (empty product convention).
    """
    features = [np.asarray(f, dtype=float) for f in features]
    if len(features) != tt.num_mode_cores:
        raise ValueError(
            f"train consumes {tt.num_mode_cores} feature vectors, got {len(features)}"
        )
    for j, f in enumerate(features):
        if f.ndim != 1 or f.shape[0] != tt.mode_dim:
            raise ValueError(
                f"feature {j} must be a vector of length {tt.mode_dim}"
            )
    vec = tt.left
    fi = 0
    for core in tt.cores:
        if core.ndim == 3:
            vec = np.einsum("a,adb,d->b", vec, core, features[fi])
            fi += 1
        elif vec is None:  # leading (d, k) core
            vec = features[fi] @ core
            fi += 1
        else:  # trailing output core
            vec = vec @ core
    return vec


def tt_to_dense(tt: TTTrain, size_cap: int = DENSE_SIZE_CAP) -> np.ndarray:
    """Expand a tensor train to its dense tensor.

    Refuses to materialize more than `size_cap` entries.
    """
    n = tt.num_mode_cores
    size = (tt.mode_dim**n if n else 1) * tt.out_dim
    if size > size_cap:
        raise ValueError(
            f"dense expansion would hold {size} entries, cap is {size_cap}"
        )
    if not tt.cores:
        return tt.left.copy()
    if tt.left is not None:
        acc = np.tensordot(tt.left, tt.cores[0], axes=(0, 0))
        rest = tt.cores[1:]
    else:
        acc = tt.cores[0]
        rest = tt.cores[1:]
    for core in rest:
        acc = np.tensordot(acc, core, axes=(acc.ndim - 1, 0))
    return acc


class RankFactorization(NamedTuple):
    P: np.ndarray
    S: np.ndarray
    residual: float
    singular_values: np.ndarray
    U: np.ndarray
    Vt: np.ndarray


def rank_factorize(M, R: int) -> RankFactorization:
    """Best rank-R factorization M ~= P @ S in Frobenius norm.

    Split convention: P = U_R @ diag(s_R), S = Vt_R, so all scale sits on P.
    `residual` is the Frobenius norm of M - P @ S (the root sum of squared
    discarded singular values).
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError("rank_factorize expects a matrix")
    if not 1 <= R <= min(M.shape):
        raise ValueError(
            f"target rank {R} outside [1, {min(M.shape)}] for shape {M.shape}"
        )
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    P = U[:, :R] * s[:R]
    S = Vt[:R]
    residual = float(math.sqrt(np.sum(s[R:] ** 2)))
    return RankFactorization(P, S, residual, s, U[:, :R], Vt[:R])


def pinv_from_svd(U, s, Vt, cutoff: float = SV_CUTOFF):
    """Moore-Penrose pseudoinverse of U @ diag(s) @ Vt.

    Singular values at or below cutoff * s_max are treated as zero.
    """
    s = np.asarray(s, dtype=float)
    tol = cutoff * (s[0] if s.size else 0.0)
    inv = np.where(s > tol, 1.0 / np.where(s > tol, s, 1.0), 0.0)
    return (Vt.T * inv) @ U.T
