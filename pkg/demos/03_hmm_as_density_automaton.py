"""Two exact constructions of density automata.

First: any Gaussian HMM embeds into a state-weighted mixture automaton whose
per-prefix conditionals multiply out to the HMM's factored density, for
sequences of any length.  Second: a two-state automaton whose hidden state
counts time computes the shifting-mean density, which no finite-state
Gaussian HMM can represent - the state update is linear, yet the readout
mean grows without bound.
"""

import numpy as np

from ncwfa import from_gaussian_hmm, log_density_factored, random_hmm, sample, shifting_construction
from ncwfa.ghmm import shifting_hmm_log_density

rng = np.random.default_rng(21)

hmm = random_hmm(5, 2, rng, cov="full")
automaton = from_gaussian_hmm(hmm)
worst = 0.0
for _ in range(20):
    seq = sample(hmm, int(rng.integers(1, 40)), rng)
    worst = max(worst, abs(automaton.sequence_log_density(seq) - log_density_factored(hmm, seq)))
print("HMM embedding, max |density gap| over 20 sequences:", worst)

shift = shifting_construction()
seq = rng.normal(size=(6, 1)) + np.arange(1, 7)[:, None]
states = shift.hidden_states(seq)
print("hidden states count the step:")
print(states)
print("automaton:", shift.sequence_log_density(seq))
print("oracle:   ", shifting_hmm_log_density(seq[:, 0]))
