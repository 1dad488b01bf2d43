"""Continuous weighted automata over real-vector sequences.

Two model families live here:

* ``LinearCwfa`` -- the linear automaton: bilinear state updates and a linear
  termination map.  Multilinear in its inputs, so its value tensors on basis
  sequences have exact tensor-train structure.
* ``RnadeNcwfa`` -- the autoregressive density estimator: a nonlinear feature
  map feeds the bilinear state update, and a mixture-density termination head
  turns each state into the conditional density of the next observation.  The
  sum of per-prefix conditional log-densities is the sequence log-density.

The hidden-state update is time-invariant, which is what lets a trained model
evaluate sequences of any length.
"""

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .autodiff import np_ops
from .ghmm import GaussianHmm, as_sequence
from .prob_core import LOG_2PI, VARIANCE_FLOOR, components_log_liks, logsumexp_arr


def mixture_head_log_conditional(ops, x, h, V_beta, b_beta, V_mu, B_mu, V_sigma, B_sigma):
    """Batched conditional log-density under the mixture head.

    Written against an ops namespace so the inference path (numpy) and the
    training graph execute identical operations.  `x` is a constant (B, d)
    array; `h` and the parameters may be arrays or autodiff nodes.
    """
    logits = ops.add(ops.einsum("bk,mk->bm", h, V_beta), b_beta)
    log_beta = ops.sub(logits, ops.logsumexp(logits, axis=-1, keepdims=True))
    means = ops.add(ops.einsum("bk,kmd->bmd", h, V_mu), B_mu)
    raw = ops.add(ops.einsum("bk,kmd->bmd", h, V_sigma), B_sigma)
    variances = ops.clip_min(ops.exp(raw), VARIANCE_FLOOR)
    z = ops.sub(x[:, None, :], means)
    quad = ops.div(ops.mul(z, z), variances)
    comp = ops.mul(
        -0.5, ops.sum(ops.add(ops.add(LOG_2PI, ops.log(variances)), quad), axis=2)
    )
    return ops.logsumexp(ops.add(log_beta, comp), axis=1)


def recurrent_log_density_graph(ops, X, alpha, A, W, head_params, out_map=None):
    """Per-sequence log densities (B,) of a batch X (B, l, d) through the
    time-invariant recurrence with a tanh feature map and a mixture head."""
    B, l, _ = X.shape
    ones = np.ones(B)
    h = ops.einsum("k,b->bk", alpha, ones)
    total = None
    for t in range(l):
        x_t = X[:, t]
        h_eff = h if out_map is None else ops.einsum("ba,ak->bk", h, out_map)
        ll_t = mixture_head_log_conditional(ops, x_t, h_eff, *head_params)
        total = ll_t if total is None else ops.add(total, ll_t)
        if t + 1 < l:
            phi_t = ops.tanh(ops.einsum("bd,de->be", x_t, W))
            h = ops.einsum("ba,adc,bd->bc", h, A, phi_t)
    return total


@dataclass(frozen=True)
class TanhFeatureMap:
    """phi(x) = tanh(x @ W), entries in (-1, 1)."""

    W: np.ndarray  # (d_in, d_feat)

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        object.__setattr__(self, "W", W)
        if W.ndim != 2 or not np.all(np.isfinite(W)):
            raise ValueError("W must be a finite matrix")

    @property
    def in_dim(self):
        return self.W.shape[0]

    @property
    def out_dim(self):
        return self.W.shape[1]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"input has dimension {x.shape[-1]}, expected {self.in_dim}")
        # einsum keeps this path bit-identical to the training graph
        return np.tanh(np.einsum("...d,de->...e", x, self.W))


@dataclass(frozen=True)
class ConstantFeatureMap:
    """Input-independent feature vector; used by the exact constructions."""

    value: np.ndarray
    in_dim: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "value", np.asarray(self.value, dtype=float))

    @property
    def out_dim(self):
        return self.value.shape[0]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return self.value.copy()
        return np.broadcast_to(self.value, x.shape[:-1] + self.value.shape).copy()


@dataclass(frozen=True)
class MixtureDensityHead:
    """Trainable diagonal-covariance Gaussian-mixture head.

    Given a state h, mixing weights are softmax(V_beta @ h + b_beta), the
    component means are V_mu contracted with h plus B_mu, and the variances
    are exp of the analogous affine map, floored at VARIANCE_FLOOR.
    """

    V_beta: np.ndarray   # (m, k)
    b_beta: np.ndarray   # (m,)
    V_mu: np.ndarray     # (k, m, d)
    B_mu: np.ndarray     # (m, d)
    V_sigma: np.ndarray  # (k, m, d)
    B_sigma: np.ndarray  # (m, d)

    def __post_init__(self):
        for name in ("V_beta", "b_beta", "V_mu", "B_mu", "V_sigma", "B_sigma"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        m, k = self.V_beta.shape
        d = self.V_mu.shape[2]
        if self.b_beta.shape != (m,):
            raise ValueError("b_beta shape mismatch")
        for name, shape in (
            ("V_mu", (k, m, d)),
            ("B_mu", (m, d)),
            ("V_sigma", (k, m, d)),
            ("B_sigma", (m, d)),
        ):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} must have shape {shape}")

    @property
    def state_dim(self):
        return self.V_beta.shape[1]

    @property
    def obs_dim(self):
        return self.V_mu.shape[2]

    @property
    def n_mixtures(self):
        return self.V_beta.shape[0]

    @property
    def params(self):
        return (self.V_beta, self.b_beta, self.V_mu, self.B_mu, self.V_sigma, self.B_sigma)

    def mixture_parameters(self, h):
        """(log weights, means, variances) for a batch of states h: (B, k)."""
        h = np.asarray(h, dtype=float)
        logits = np.einsum("bk,mk->bm", h, self.V_beta) + self.b_beta
        log_beta = logits - logsumexp_arr(logits, axis=-1, keepdims=True)
        means = np.einsum("bk,kmd->bmd", h, self.V_mu) + self.B_mu
        variances = np.maximum(
            np.exp(np.einsum("bk,kmd->bmd", h, self.V_sigma) + self.B_sigma),
            VARIANCE_FLOOR,
        )
        return log_beta, means, variances

    def log_conditional(self, x, h):
        """Batched log density of x (B, d) under the mixture induced by h (B, k)."""
        return mixture_head_log_conditional(np_ops, np.asarray(x, dtype=float), h, *self.params)


@dataclass(frozen=True)
class StateWeightedGaussianHead:
    """Frozen head: the state entries are the mixing weights over fixed
    per-component Gaussians.  States must be nonnegative (probability-like);
    this is the head the Gaussian-HMM embedding uses."""

    components: tuple

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))

    @property
    def state_dim(self):
        return len(self.components)

    @property
    def obs_dim(self):
        return self.components[0].dim

    def log_conditional(self, x, h):
        comp = components_log_liks(self.components, x)  # (B, k)
        with np.errstate(divide="ignore"):
            logw = np.log(np.maximum(h, 0.0))
        return logsumexp_arr(logw + comp, axis=1)


Head = Union[MixtureDensityHead, StateWeightedGaussianHead]
FeatureMap = Union[TanhFeatureMap, ConstantFeatureMap]


@dataclass(frozen=True)
class RnadeNcwfa:
    """Autoregressive density automaton.

    alpha is the initial state, A the (state, feature, state) transition
    tensor, feature_map the input featurizer, head the conditional-density
    head.  out_map, when present, maps the internal state into the coordinate
    system the head was trained against (spectral recovery produces states in
    a factorization basis).
    """

    alpha: np.ndarray
    A: np.ndarray
    feature_map: FeatureMap
    head: Head
    out_map: Optional[np.ndarray] = None

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        A = np.asarray(self.A, dtype=float)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "A", A)
        if self.out_map is not None:
            object.__setattr__(self, "out_map", np.asarray(self.out_map, dtype=float))
        k = alpha.shape[0]
        if A.shape[0] != k or A.shape[2] != k:
            raise ValueError(f"transition tensor {A.shape} incompatible with {k} states")
        if A.shape[1] != self.feature_map.out_dim:
            raise ValueError(
                f"transition feature dimension {A.shape[1]} != feature map output "
                f"{self.feature_map.out_dim}"
            )
        head_in = k if self.out_map is None else self.out_map.shape[1]
        if self.out_map is not None and self.out_map.shape[0] != k:
            raise ValueError("out_map must have one row per state")
        if self.head.state_dim != head_in:
            raise ValueError(
                f"head expects states of dimension {self.head.state_dim}, got {head_in}"
            )
        if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(A))):
            raise ValueError("non-finite model parameters")

    @property
    def n_states(self):
        return self.alpha.shape[0]

    @property
    def obs_dim(self):
        return self.head.obs_dim

    def features(self, x):
        return self.feature_map(x)

    def step(self, h, x):
        """One state update: contract A with the state and the input features."""
        h = np.asarray(h, dtype=float)
        if h.shape[-1] != self.n_states:
            raise ValueError(f"state has dimension {h.shape[-1]}, expected {self.n_states}")
        phi = self.features(np.asarray(x, dtype=float))
        if h.ndim == 1:
            # run the batched kernel at B=1 so single and batched paths agree
            # bit for bit
            return np.einsum("ba,adc,bd->bc", h[None], self.A, phi[None])[0]
        return np.einsum("ba,adc,bd->bc", h, self.A, phi)

    def _head_input(self, h):
        return h if self.out_map is None else h @ self.out_map

    def conditional_log_density(self, x, h_prev) -> float:
        """log p(x | state h_prev)."""
        x = np.asarray(x, dtype=float).reshape(1, -1)
        h = np.asarray(h_prev, dtype=float).reshape(1, -1)
        return float(self.head.log_conditional(x, self._head_input(h))[0])

    def hidden_states(self, seq) -> np.ndarray:
        """States h_0 .. h_{l-1} fed to the head along `seq` (shape (l, k))."""
        seq = as_sequence(seq)
        states = np.empty((seq.shape[0], self.n_states))
        h = self.alpha
        for t in range(seq.shape[0]):
            states[t] = h
            if t + 1 < seq.shape[0]:
                h = self.step(h, seq[t])
        return states

    def sequence_log_density(self, seq) -> float:
        """Chain-rule log density: sum_t log p(x_t | x_<t)."""
        seq = as_sequence(seq)
        return float(self.batch_sequence_log_density(seq[None])[0])

    def batch_sequence_log_density(self, X) -> np.ndarray:
        """Log densities for a batch (B, l, d) of equal-length sequences."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 3:
            raise ValueError("expected a (batch, length, dim) array")
        if X.shape[-1] != self.obs_dim:
            raise ValueError(
                f"observations have dimension {X.shape[-1]}, model expects {self.obs_dim}"
            )
        if isinstance(self.head, MixtureDensityHead) and isinstance(
            self.feature_map, TanhFeatureMap
        ):
            # same graph the trainer differentiates, evaluated eagerly
            return recurrent_log_density_graph(
                np_ops, X, self.alpha, self.A, self.feature_map.W,
                self.head.params, out_map=self.out_map,
            )
        B, l, _ = X.shape
        h = np.broadcast_to(self.alpha, (B, self.n_states))
        total = np.zeros(B)
        for t in range(l):
            x = X[:, t]
            total = total + self.head.log_conditional(x, self._head_input(h))
            if t + 1 < l:
                h = self.step(h, x)
        return total


@dataclass(frozen=True)
class LinearCwfa:
    """Linear continuous automaton: f(x_1..x_n) = alpha' A(x_1) ... A(x_n) Omega."""

    alpha: np.ndarray  # (k,)
    A: np.ndarray      # (k, d, k)
    omega: np.ndarray  # (k, p)

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        A = np.asarray(self.A, dtype=float)
        omega = np.asarray(self.omega, dtype=float)
        if omega.ndim == 1:
            omega = omega[:, None]
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "omega", omega)
        k = alpha.shape[0]
        if A.ndim != 3 or A.shape[0] != k or A.shape[2] != k or omega.shape[0] != k:
            raise ValueError("inconsistent automaton dimensions")
        for arr in (alpha, A, omega):
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite automaton parameters")

    @property
    def n_states(self):
        return self.alpha.shape[0]

    @property
    def in_dim(self):
        return self.A.shape[1]

    @property
    def out_dim(self):
        return self.omega.shape[1]

    def apply(self, seq) -> np.ndarray:
        seq = as_sequence(seq)
        if seq.shape[1] != self.in_dim:
            raise ValueError(
                f"inputs have dimension {seq.shape[1]}, automaton expects {self.in_dim}"
            )
        h = self.alpha
        for x in seq:
            h = np.einsum("a,adc,d->c", h, self.A, x)
        return h @ self.omega

    def __call__(self, seq):
        return self.apply(seq)


def linear_cwfa_apply(cwfa: LinearCwfa, seq) -> np.ndarray:
    return cwfa.apply(seq)


def from_gaussian_hmm(hmm: GaussianHmm) -> RnadeNcwfa:
    """Embed a Gaussian HMM as a density automaton.

    The state carries the unconditioned state distribution: the initial state
    is the HMM's initial distribution, every feature slice of the transition
    tensor is the transition matrix, and the feature map is the constant
    vector (1/k, ..., 1/k), so each update multiplies the state by the
    transition matrix.  The head mixes the per-state emissions with the state
    entries as weights.  The resulting sequence log-density equals the HMM's
    factored (state-distribution) density product exactly.
    """
    k = hmm.n_states
    A = np.tile(hmm.trans[:, None, :], (1, k, 1))
    return RnadeNcwfa(
        alpha=hmm.init.copy(),
        A=A,
        feature_map=ConstantFeatureMap(np.full(k, 1.0 / k), in_dim=hmm.dim),
        head=StateWeightedGaussianHead(hmm.emissions),
    )


def shifting_construction() -> RnadeNcwfa:
    """Two-state automaton computing the shifting-mean unit-variance density.

    The hidden state after i-1 updates is (1, i); the head reads the second
    coordinate as the mean of a single unit-variance Gaussian, so step i
    contributes log N(o_i | i, 1).  No finite-state Gaussian HMM computes
    this density.
    """
    A = np.tile(np.array([[1.0, 1.0], [0.0, 1.0]])[:, None, :], (1, 2, 1))
    head = MixtureDensityHead(
        V_beta=np.zeros((1, 2)),
        b_beta=np.zeros(1),
        V_mu=np.array([[[0.0]], [[1.0]]]),  # mean = <h, (0, 1)>
        B_mu=np.zeros((1, 1)),
        V_sigma=np.zeros((2, 1, 1)),
        B_sigma=np.zeros((1, 1)),            # exp(0) = unit variance
    )
    return RnadeNcwfa(
        alpha=np.array([1.0, 1.0]),
        A=A,
        feature_map=ConstantFeatureMap(np.array([0.5, 0.5]), in_dim=1),
        head=head,
    )
