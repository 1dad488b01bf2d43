"""Gaussian hidden Markov models.

Sampling, exact sequence log-densities and an EM baseline.  Two different
sequence densities are exposed on purpose:

* ``log_density_forward`` -- the standard forward recursion, i.e. the true
  marginal over hidden paths.  This is the ground truth used by experiments.
* ``log_density_factored`` -- the product of per-step mixtures whose weights
  are the *unconditioned* state distribution ``init @ trans^(t-1)``.  This is
  the quantity a state-weighted mixture automaton built from the HMM computes;
  it coincides with the forward density only for one state (or degenerate
  observation models), and equivalence tests for those constructions must
  compare against this one.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .prob_core import LOG_2PI, DiagGaussian, FullGaussian, components_log_liks

_TINY_WEIGHT = 1e-8


@dataclass(frozen=True)
class GaussianHmm:
    init: np.ndarray           # (k,) initial state distribution
    trans: np.ndarray          # (k, k) row-stochastic transition matrix
    emissions: tuple           # k DiagGaussian / FullGaussian over R^d

    def __post_init__(self):
        init = np.asarray(self.init, dtype=float)
        trans = np.asarray(self.trans, dtype=float)
        object.__setattr__(self, "init", init)
        object.__setattr__(self, "trans", trans)
        object.__setattr__(self, "emissions", tuple(self.emissions))
        k = init.shape[0]
        if trans.shape != (k, k):
            raise ValueError("transition matrix shape does not match init")
        if len(self.emissions) != k:
            raise ValueError("one emission per state required")
        if np.any(init < 0) or abs(init.sum() - 1.0) > 1e-12:
            raise ValueError("init must be a probability vector")
        if np.any(trans < 0) or np.max(np.abs(trans.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("transition rows must sum to one")

    @property
    def n_states(self) -> int:
        return self.init.shape[0]

    @property
    def dim(self) -> int:
        return self.emissions[0].dim


def _draw_emission(g, rng):
    if isinstance(g, DiagGaussian):
        return g.mean + np.sqrt(g.var) * rng.standard_normal(g.dim)
    return g.mean + g.chol @ rng.standard_normal(g.dim)


def sample(hmm: GaussianHmm, length: int, rng, return_states: bool = False):
    """Draw one trajectory of `length` observations (optionally with states)."""
    if length < 1:
        raise ValueError("length must be >= 1")
    states = np.empty(length, dtype=int)
    obs = np.empty((length, hmm.dim))
    s = rng.choice(hmm.n_states, p=hmm.init)
    for t in range(length):
        states[t] = s
        obs[t] = _draw_emission(hmm.emissions[s], rng)
        if t + 1 < length:
            s = rng.choice(hmm.n_states, p=hmm.trans[s])
    return (obs, states) if return_states else obs


def sample_dataset(hmm: GaussianHmm, n: int, length: int, rng, return_states: bool = False):
    """(n, length, d) array of independent trajectories.

    Vectorized over trajectories (state paths evolve in parallel), so its
    random stream differs from n repeated `sample` calls; both are
    deterministic under a fixed generator state.
    """
    if n < 1 or length < 1:
        raise ValueError("n and length must be >= 1")
    k = hmm.n_states
    cdf_init = np.cumsum(hmm.init)
    cdf_trans = np.cumsum(hmm.trans, axis=1)
    states = np.empty((n, length), dtype=int)
    s = np.minimum((cdf_init < rng.random((n, 1))).sum(axis=1), k - 1)
    for t in range(length):
        states[:, t] = s
        if t + 1 < length:
            u = rng.random((n, 1))
            s = np.minimum((cdf_trans[s] < u).sum(axis=1), k - 1)
    z = rng.standard_normal((n, length, hmm.dim))
    obs = np.empty((n, length, hmm.dim))
    for si, g in enumerate(hmm.emissions):
        mask = states == si
        if isinstance(g, DiagGaussian):
            obs[mask] = g.mean + np.sqrt(g.var) * z[mask]
        else:
            obs[mask] = g.mean + z[mask] @ g.chol.T
    return (obs, states) if return_states else obs


def as_sequence(seq) -> np.ndarray:
    """Coerce to an (l, d) float array; 1-d input is a scalar sequence."""
    seq = np.asarray(seq, dtype=float)
    if seq.ndim == 1:
        seq = seq[:, None]
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise ValueError("a sequence must be a nonempty (length, dim) array")
    return seq


def emission_log_liks(hmm: GaussianHmm, X) -> np.ndarray:
    """Per-state observation log-likelihoods.

    X has shape (..., d); the result has shape (..., k).
    """
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != hmm.dim:
        raise ValueError(
            f"observations have dimension {X.shape[-1]}, model has {hmm.dim}"
        )
    return components_log_liks(hmm.emissions, X)


def _log_params(hmm):
    with np.errstate(divide="ignore"):
        return np.log(hmm.init), np.log(hmm.trans)


def log_density_forward(hmm: GaussianHmm, seq) -> float:
    """Log marginal density of `seq` over all hidden paths (forward algorithm)."""
    seq = as_sequence(seq)
    return float(log_density_forward_batch(hmm, seq[None])[0])


def log_density_forward_batch(hmm: GaussianHmm, X) -> np.ndarray:
    """Forward log-densities for a batch (B, l, d) of equal-length sequences."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 3:
        raise ValueError("expected a (batch, length, dim) array")
    ll = emission_log_liks(hmm, X)  # (B, l, k)
    log_init, log_trans = _log_params(hmm)
    la = log_init[None, :] + ll[:, 0, :]
    for t in range(1, X.shape[1]):
        la = logsumexp(la[:, :, None] + log_trans[None, :, :], axis=1) + ll[:, t, :]
    return logsumexp(la, axis=1)


def log_density_factored(hmm: GaussianHmm, seq) -> float:
    """Product of per-step mixtures with weights init @ trans^(t-1).

    This is not the forward marginal for k > 1; see the module docstring.
    """
    seq = as_sequence(seq)
    ll = emission_log_liks(hmm, seq)  # (l, k)
    w = hmm.init.copy()
    total = 0.0
    with np.errstate(divide="ignore"):
        for t in range(seq.shape[0]):
            total += logsumexp(np.log(w) + ll[t])
            w = w @ hmm.trans
    return float(total)


def shifting_hmm_log_density(seq) -> float:
    """Density of scalar observations under unit-variance Gaussians whose mean
    shifts with the time step: sum_i log N(o_i | i, 1), i starting at 1."""
    seq = np.asarray(seq, dtype=float).reshape(-1)
    steps = np.arange(1, seq.shape[0] + 1, dtype=float)
    return float(-0.5 * np.sum(LOG_2PI + (seq - steps) ** 2))


def random_hmm(states: int, dim: int, rng, cov: str = "diag") -> GaussianHmm:
    """Random HMM for synthetic experiments.

    init and transition rows ~ flat Dirichlet; means i.i.d. 2 * N(0,1);
    diagonal variances uniform in [0.5, 1.5].  For cov="full" each covariance
    gets a random orthogonal eigenbasis with the same eigenvalue law.
    """
    init = rng.dirichlet(np.ones(states))
    trans = rng.dirichlet(np.ones(states), size=states)
    emissions = []
    for _ in range(states):
        mean = 2.0 * rng.standard_normal(dim)
        eig = rng.uniform(0.5, 1.5, size=dim)
        if cov == "diag":
            emissions.append(DiagGaussian(mean, eig))
        elif cov == "full":
            q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
            emissions.append(FullGaussian(mean, (q * eig) @ q.T))
        else:
            raise ValueError(f"unknown covariance type {cov!r}")
    return GaussianHmm(init, trans, tuple(emissions))


@dataclass(frozen=True)
class EmConfig:
    max_iters: int = 100
    tol: float = 1e-6          # relative log-likelihood improvement
    seed: int = 0
    restarts: int = 3
    cov_type: str = "diag"

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


def _as_length_groups(dataset):
    groups = {}
    for seq in dataset:
        seq = as_sequence(seq)
        groups.setdefault(seq.shape[0], []).append(seq)
    return {l: np.stack(seqs) for l, seqs in sorted(groups.items())}


def _kmeanspp_centers(X, k, rng):
    centers = [X[rng.integers(len(X))]]
    for _ in range(k - 1):
        d2 = np.min(
            [np.sum((X - c) ** 2, axis=1) for c in centers], axis=0
        )
        total = d2.sum()
        if total <= 0:
            centers.append(X[rng.integers(len(X))])
            continue
        centers.append(X[rng.choice(len(X), p=d2 / total)])
    return np.stack(centers)


def _initial_model(pooled, k, rng, cov_type):
    means = _kmeanspp_centers(pooled, k, rng)
    pooled_var = pooled.var(axis=0) + 1e-6
    if cov_type == "diag":
        emissions = tuple(DiagGaussian(m, pooled_var) for m in means)
    else:
        emissions = tuple(FullGaussian(m, np.diag(pooled_var)) for m in means)
    init = rng.dirichlet(np.full(k, 5.0))
    trans = rng.dirichlet(np.full(k, 5.0), size=k)
    return GaussianHmm(init, trans, emissions)


def _e_step(hmm, batches):
    """Batched forward-backward.  Returns sufficient statistics and total LL."""
    k = hmm.n_states
    log_init, log_trans = _log_params(hmm)
    init_acc = np.zeros(k)
    trans_acc = np.zeros((k, k))
    w_sum = np.zeros(k)
    wx_sum = np.zeros((k, hmm.dim))
    wxx_sum = np.zeros((k, hmm.dim, hmm.dim))
    total_ll = 0.0
    for length, X in batches.items():
        ll = emission_log_liks(hmm, X)  # (B, l, k)
        B = X.shape[0]
        la = np.empty((B, length, k))
        la[:, 0] = log_init[None, :] + ll[:, 0]
        for t in range(1, length):
            la[:, t] = (
                logsumexp(la[:, t - 1][:, :, None] + log_trans[None], axis=1)
                + ll[:, t]
            )
        lb = np.zeros((B, length, k))
        for t in range(length - 2, -1, -1):
            lb[:, t] = logsumexp(
                log_trans[None] + (ll[:, t + 1] + lb[:, t + 1])[:, None, :], axis=2
            )
        seq_ll = logsumexp(la[:, -1], axis=1)  # (B,)
        total_ll += float(seq_ll.sum())
        log_gamma = la + lb - seq_ll[:, None, None]
        gamma = np.exp(log_gamma)
        init_acc += gamma[:, 0].sum(axis=0)
        if length > 1:
            # xi[b,t,i,j] = P(s_t = i, s_{t+1} = j | seq)
            log_xi = (
                la[:, :-1, :, None]
                + log_trans[None, None]
                + (ll[:, 1:] + lb[:, 1:])[:, :, None, :]
                - seq_ll[:, None, None, None]
            )
            trans_acc += np.exp(logsumexp(log_xi, axis=(0, 1)))
        g = gamma.reshape(-1, k)
        flat = X.reshape(-1, hmm.dim)
        w_sum += g.sum(axis=0)
        wx_sum += g.T @ flat
        wxx_sum += np.einsum("nk,nd,ne->kde", g, flat, flat)
    return {
        "init": init_acc,
        "trans": trans_acc,
        "w": w_sum,
        "wx": wx_sum,
        "wxx": wxx_sum,
        "ll": total_ll,
    }


def _m_step(stats, hmm, pooled, rng, cov_type):
    k = hmm.n_states
    init = stats["init"] / stats["init"].sum()
    trans_rows = stats["trans"]
    row_sums = trans_rows.sum(axis=1, keepdims=True)
    uniform = np.full((1, k), 1.0 / k)
    trans = np.where(row_sums > _TINY_WEIGHT, trans_rows / np.maximum(row_sums, _TINY_WEIGHT), uniform)
    trans = trans / trans.sum(axis=1, keepdims=True)
    pooled_var = pooled.var(axis=0) + 1e-6
    emissions = []
    for s in range(k):
        w = stats["w"][s]
        if w < _TINY_WEIGHT:
            # empty state: re-seed its emission from a random data point
            mean = pooled[rng.integers(len(pooled))]
            cov = np.diag(pooled_var)
        else:
            mean = stats["wx"][s] / w
            cov = stats["wxx"][s] / w - np.outer(mean, mean)
            cov = cov + 1e-6 * np.eye(hmm.dim)
        if cov_type == "diag":
            emissions.append(DiagGaussian(mean, np.maximum(np.diag(cov), 1e-6)))
        else:
            cov = 0.5 * (cov + cov.T)
            emissions.append(FullGaussian(mean, cov))
    return GaussianHmm(init, trans, tuple(emissions))


def _em_single(batches, pooled, k, cfg, rng):
    model = _initial_model(pooled, k, rng, cfg.cov_type)
    history = []
    prev_model = model
    for it in range(cfg.max_iters):
        stats = _e_step(model, batches)
        history.append(stats["ll"])
        if it > 0:
            gain = history[-1] - history[-2]
            if gain < -1e-12:
                # the diagonal regularization can cost a hair of likelihood
                # near convergence; keep the previous (better) model
                history.pop()
                return prev_model, history
            if gain < cfg.tol * abs(history[-2]):
                return model, history
        prev_model = model
        model = _m_step(stats, model, pooled, rng, cfg.cov_type)
    # iteration budget exhausted; score the final M-step for the trace
    final_ll = _e_step(model, batches)["ll"]
    if final_ll >= history[-1] - 1e-12:
        history.append(final_ll)
        return model, history
    return prev_model, history


def em_fit(dataset, k: int, cfg: EmConfig = EmConfig(), return_history: bool = False):
    """Fit a k-state Gaussian HMM by expectation maximization.

    Runs `cfg.restarts` independent k-means++-seeded starts and returns the
    model with the best training log-likelihood.  The per-iteration training
    log-likelihood is non-decreasing.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    batches = _as_length_groups(dataset)
    if not batches:
        raise ValueError("dataset is empty")
    pooled = np.concatenate([X.reshape(-1, X.shape[-1]) for X in batches.values()])
    master = np.random.default_rng(cfg.seed)
    best = None
    for _ in range(max(1, cfg.restarts)):
        rng = np.random.default_rng(master.integers(2**63))
        model, history = _em_single(batches, pooled, k, cfg, rng)
        if best is None or history[-1] > best[1][-1]:
            best = (model, history)
    model, history = best
    return (model, history) if return_history else model
