"""Gaussian HMMs: sampling, two exact sequence densities, and EM.

Two log-densities are exposed on purpose.  The forward algorithm gives the
true marginal over hidden paths and is the evaluation ground truth.  The
factored product reweights each step by the *unconditioned* state
distribution; it is what a state-weighted mixture automaton computes, and it
differs from the forward density as soon as observations carry state
information.
"""

import numpy as np

from ncwfa import EmConfig, em_fit, log_density_factored, log_density_forward, random_hmm, sample_dataset
from ncwfa.ghmm import log_density_forward_batch, shifting_hmm_log_density

rng = np.random.default_rng(7)
hmm = random_hmm(3, 2, rng)

seq = sample_dataset(hmm, 1, 6, rng)[0]
print("forward  log-density:", log_density_forward(hmm, seq))
print("factored log-density:", log_density_factored(hmm, seq))

# single-state chains make the two coincide
flat = random_hmm(1, 2, rng)
s = sample_dataset(flat, 1, 6, rng)[0]
print("k=1 gap:", abs(log_density_forward(flat, s) - log_density_factored(flat, s)))

# the shifting-mean density: mean = time step, variance 1
obs = np.array([1.0, 2.0, 2.5])
print("shifting-mean log-density of", obs, "=", shifting_hmm_log_density(obs))

# EM refit: on well-separated data the held-out likelihood matches the
# generator within a fraction of a nat per observation
train = sample_dataset(hmm, 300, 7, rng)
test = sample_dataset(hmm, 100, 7, rng)
model, history = em_fit(list(train), 3, EmConfig(seed=0), return_history=True)
print(f"EM iterations: {len(history)}, train LL trace monotone: {bool(np.all(np.diff(history) >= -1e-9))}")
got = log_density_forward_batch(model, test).mean() / 7
want = log_density_forward_batch(hmm, test).mean() / 7
print(f"held-out per-observation LL: refit {got:.3f} vs generator {want:.3f}")
