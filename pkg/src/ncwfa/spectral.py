"""Hankel tensor construction and spectral parameter recovery.

The recovery follows the classic scheme: factor the (L, L+1) unfolding of the
length-2L Hankel as P @ S, then read the automaton off the length-L and
length-(2L+1) Hankels through the pseudoinverses of P and S.  For the density
pipeline, the Hankel trains map length-j feature-basis sequences to the
hidden state (trailing dimension k), so the recovered automaton needs one
extra piece beyond initial weights and transitions: a readout (`out_map`)
that returns the factorization-basis state to the coordinate system the
trained head expects.  That readout is the termination formula of the linear
theory applied with the state dimension as the output.
"""

import warnings
from dataclasses import dataclass
from typing import Dict

import numpy as np

from .model import LinearCwfa, MixtureDensityHead, RnadeNcwfa, TanhFeatureMap
from .tensor_core import (
    SV_CUTOFF,
    TTTrain,
    matricize,
    mode_product,
    rank_factorize,
    tt_to_dense,
)
from .training import HankelFit, TrainConfig, fit_hankel

UNFOLDING_SIZE_CAP = 10**6


@dataclass(frozen=True)
class HankelSet:
    """Hankel trains of lengths L, 2L and 2L+1 over a common mode dimension."""

    H_L: TTTrain
    H_2L: TTTrain
    H_2L1: TTTrain
    L: int

    def __post_init__(self):
        lengths = (self.H_L.num_mode_cores, self.H_2L.num_mode_cores, self.H_2L1.num_mode_cores)
        if lengths != (self.L, 2 * self.L, 2 * self.L + 1):
            raise ValueError(
                f"train lengths {lengths} do not match (L, 2L, 2L+1) for L={self.L}"
            )
        if len({t.mode_dim for t in (self.H_L, self.H_2L, self.H_2L1)}) != 1:
            raise ValueError("trains must share a mode dimension")
        if len({t.out_dim for t in (self.H_L, self.H_2L, self.H_2L1)}) != 1:
            raise ValueError("trains must share an output dimension")

    @property
    def mode_dim(self):
        return self.H_L.mode_dim

    @property
    def out_dim(self):
        return self.H_L.out_dim


@dataclass(frozen=True)
class RecoveryInfo:
    rank: int
    numerical_rank: int
    singular_values: np.ndarray
    residual: float


def hankel_from_linear_cwfa(cwfa: LinearCwfa, l: int) -> TTTrain:
    """Exact Hankel train of a linear automaton's values on length-l basis
    sequences: leading core A contracted with alpha, then l-1 transition
    cores, then the termination matrix as output core."""
    if l < 1:
        raise ValueError("l must be >= 1")
    g1 = mode_product(cwfa.A, cwfa.alpha, 0)  # (d, k)
    cores = [g1] + [cwfa.A] * (l - 1) + [cwfa.omega]
    return TTTrain(cores)


def exact_hankel_trains(model: RnadeNcwfa, L: int) -> HankelSet:
    """Analytic Hankel trains of a density automaton's state function.

    Valid for models without an out_map whose transition tensor acts on
    feature space; the trailing bond of each train is the hidden state.
    """
    if model.out_map is not None:
        raise ValueError("model already carries a recovery readout")

    def train(l):
        g1 = mode_product(model.A, model.alpha, 0)
        return TTTrain([g1] + [model.A] * (l - 1))

    return HankelSet(train(L), train(2 * L), train(2 * L + 1), L)


def _dense(train: TTTrain):
    out = tt_to_dense(train)
    if out.size > UNFOLDING_SIZE_CAP:
        raise ValueError(f"unfolding with {out.size} entries exceeds the cap")
    return out


def _factorization_operators(hankels: HankelSet, R: int, split: str = "psigma",
                        sv_cutoff: float = SV_CUTOFF):
    """Pseudoinverse operators of the rank-R factorization of H_2L.

    split chooses where the singular values go: "psigma" puts them on P
    (P = U Sigma, S = V'), "sigmas" on S.  Singular values at or below
    sv_cutoff * sigma_max are treated as zero in the pseudoinverses; on
    gradient-estimated Hankels a loose cutoff keeps barely-supported
    directions from being amplified into unstable dynamics.  Returns
    (Pinv, SinvT, info).
    """
    L = hankels.L
    H2L = matricize(_dense(hankels.H_2L), (L, L + 1))
    fact = rank_factorize(H2L, R)
    s = fact.singular_values
    tol = sv_cutoff * s[0] if s.size else 0.0
    numerical_rank = int(np.sum(s > tol))
    if numerical_rank < R:
        warnings.warn(
            f"Hankel unfolding has numerical rank {numerical_rank} < requested {R}; "
            "proceeding with truncated pseudoinverses",
            RuntimeWarning,
        )
    s_r = s[:R]
    inv = np.where(s_r > tol, 1.0 / np.where(s_r > tol, s_r, 1.0), 0.0)
    if split == "psigma":
        Pinv = inv[:, None] * fact.U.T       # (U Sigma)^+
        SinvT = fact.Vt                      # ((V')^+)' = V'
    elif split == "sigmas":
        Pinv = fact.U.T                      # U^+
        SinvT = inv[:, None] * fact.Vt       # ((Sigma V')^+)'
    else:
        raise ValueError(f"unknown split {split!r}")
    info = RecoveryInfo(R, numerical_rank, s, fact.residual)
    return Pinv, SinvT, info


def _recover_operators(hankels: HankelSet, R: int, split: str = "psigma",
                       sv_cutoff: float = SV_CUTOFF):
    """alpha, transition tensor and termination matrix in the recovered basis."""
    L = hankels.L
    Pinv, SinvT, info = _factorization_operators(hankels, R, split, sv_cutoff)
    HL = _dense(hankels.H_L)
    alpha = SinvT @ matricize(HL, (L + 1,))
    omega = Pinv @ matricize(HL, (L, 1))
    H2L1 = matricize(_dense(hankels.H_2L1), (L, 1, L + 1))
    A = np.einsum("ru,uiv,sv->ris", Pinv, H2L1, SinvT)
    for arr in (alpha, omega, A):
        if not np.all(np.isfinite(arr)):
            raise np.linalg.LinAlgError("spectral recovery produced non-finite values")
    return alpha, A, omega, info


def recover_linear_cwfa(hankels: HankelSet, R: int, split: str = "psigma",
                        sv_cutoff: float = SV_CUTOFF):
    """Recover a linear automaton from exact Hankels of its function.

    At (and above) the true rank the recovered automaton computes the same
    function as the source, in a different state basis.
    """
    alpha, A, omega, info = _recover_operators(hankels, R, split, sv_cutoff)
    return LinearCwfa(alpha, A, omega), info


def recover_density_model(
    hankels: HankelSet,
    W: np.ndarray,
    head: MixtureDensityHead,
    R: int,
    split: str = "psigma",
    sv_cutoff: float = SV_CUTOFF,
):
    """Assemble a density automaton from Hankel trains plus a trained feature
    map and head.  The termination formula's output here is the hidden state
    itself, so it becomes the readout restoring the head's coordinates."""
    alpha, A, out_map, info = _recover_operators(hankels, R, split, sv_cutoff)
    model = RnadeNcwfa(
        alpha=alpha,
        A=A,
        feature_map=TanhFeatureMap(W),
        head=head,
        out_map=out_map,
    )
    return model, info


def trains_from_fit(fit: HankelFit, tail_completion: str = "stationary") -> HankelSet:
    """Hankel trains from a gradient fit.

    The likelihood never evaluates the final core of each train (step j
    consumes cores 1..j-1 only), so that core sits at its random
    initialization.  "stationary" completion replaces it with the deepest
    core the likelihood did identify, which is exactly the
    translation-invariance the recovery assumes of the underlying automaton;
    "keep" leaves the raw parameters.
    """
    lengths = sorted(fit.cores)
    L = lengths[0]
    completed = {}
    for l in lengths:
        cores = [c.copy() for c in fit.cores[l]]
        if tail_completion == "stationary":
            if l >= 3:
                cores[-1] = cores[-2].copy()
            elif l == 2:
                donor = fit.cores[lengths[-1]]
                cores[-1] = donor[-2].copy()
            else:  # l == 1: single (d, k) core; borrow the trained one
                cores[0] = fit.cores[lengths[1]][0].copy()
        elif tail_completion != "keep":
            raise ValueError(f"unknown tail completion {tail_completion!r}")
        completed[l] = TTTrain(cores)
    return HankelSet(completed[L], completed[2 * L], completed[2 * L + 1], L)


def spectral_learn(
    datasets: Dict[int, np.ndarray],
    cfg: TrainConfig,
    tail_completion: str = "stationary",
    full_output: bool = False,
):
    """Hankel training followed by spectral recovery (the two-stage learner).

    Gradient descent fits the per-length Hankel trains together with the
    shared feature map, head and initial vector; the transition tensor and
    initial weights are then recovered from the trains' unfoldings.
    """
    fit, history = fit_hankel(datasets, cfg)
    hankels = trains_from_fit(fit, tail_completion)
    R = cfg.rank or cfg.states
    model, info = recover_density_model(hankels, fit.W, fit.head, R, sv_cutoff=cfg.sv_cutoff)
    if full_output:
        return model, info, history
    return model
