"""Independent oracles shared by test modules.

These deliberately avoid the library's own density code paths: emissions go
through scipy.stats and path sums are explicit loops.
"""

import itertools
import math

import numpy as np
from scipy.stats import multivariate_normal

from ncwfa.prob_core import DiagGaussian


def brute_force_log_density(hmm, seq):
    """Explicit sum over all k^l hidden paths."""
    seq = np.atleast_2d(np.asarray(seq, dtype=float))
    k, l = hmm.n_states, seq.shape[0]
    dens = []
    for g in hmm.emissions:
        cov = np.diag(g.var) if isinstance(g, DiagGaussian) else g.cov
        dens.append(multivariate_normal(mean=g.mean, cov=cov))
    total = 0.0
    for path in itertools.product(range(k), repeat=l):
        p = hmm.init[path[0]]
        for a, b in zip(path, path[1:]):
            p *= hmm.trans[a, b]
        for t, s in enumerate(path):
            p *= dens[s].pdf(seq[t])
        total += p
    return math.log(total)


def stationary_distribution(trans):
    vals, vecs = np.linalg.eig(np.asarray(trans).T)
    i = np.argmin(np.abs(vals - 1.0))
    pi = np.real(vecs[:, i])
    return pi / pi.sum()
