"""Differentiable losses and gradient-descent training.

Two losses share one operator vocabulary (see autodiff):

* ``loss_direct`` -- negative log-likelihood through the recurrent model
  itself (repeated multiplication by the transition tensor).
* ``loss_hankel``   -- negative log-likelihood where the state fed to the head
  at step j is the prefix contraction of the first j-1 cores of a per-length
  Hankel train; the initial state h0 is a trained vector shared across
  lengths, as are the feature map and the head.

``fit_hankel`` cycles the three sequence lengths every epoch, keeping the
per-length cores private and everything else shared.  Early stopping tracks
validation NLL and the best snapshot is returned.  Long products through the
same tensor make gradients spiky, so every update is clipped at a global
norm.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .autodiff import Var, backward, grad_ops, np_ops
from .model import (
    MixtureDensityHead,
    RnadeNcwfa,
    TanhFeatureMap,
    mixture_head_log_conditional,
    recurrent_log_density_graph,
)

HEAD_PARAM_NAMES = ("V_beta", "b_beta", "V_mu", "B_mu", "V_sigma", "B_sigma")
GRAD_CLIP_NORM = 10.0


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 500
    patience: int = 10
    validation_fraction: float = 0.1
    batch_size: int = 32
    seed: int = 0
    states: int = 5
    mixtures: int = 5
    rank: Optional[int] = None      # spectral recovery rank; defaults to states
    hankel_length: int = 3          # L; training lengths are L, 2L, 2L+1
    sv_cutoff: float = 1e-10        # recovery pseudoinverse cutoff (rel. sigma_max)
    grad_clip: float = GRAD_CLIP_NORM
    tie_cores: bool = False         # share cores across positions and lengths

    def __post_init__(self):
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in (0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")


class ParamGraph:
    """Named parameter tensors with gradient buffers of matching shapes.

    For Hankel training, `core_name_map` lists, per sequence length, the
    parameter names of that train's cores in order; tied configurations put
    the same name at several positions.
    """

    def __init__(self, params: Dict[str, np.ndarray], core_name_map=None):
        self.params = {k: np.asarray(v, dtype=float) for k, v in params.items()}
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.core_name_map = core_name_map

    def zero_grads(self):
        for g in self.grads.values():
            g[...] = 0.0

    def names(self):
        return list(self.params)

    def copy_params(self):
        return {k: v.copy() for k, v in self.params.items()}


def _group_by_length(batch):
    groups = {}
    for seq in batch:
        seq = np.asarray(seq, dtype=float)
        if seq.ndim == 1:
            seq = seq[:, None]
        groups.setdefault(seq.shape[0], []).append(seq)
    return {l: np.stack(g) for l, g in sorted(groups.items())}


def _head_vars(vars_):
    return tuple(vars_[n] for n in HEAD_PARAM_NAMES)


def _collect_grads(graph, vars_):
    graph.zero_grads()
    for name, var in vars_.items():
        if var.grad is not None:
            graph.grads[name][...] = var.grad


def loss_direct(graph: ParamGraph, batch) -> float:
    """Negative log-likelihood of `batch` through the recurrent model.

    Sequences may have mixed lengths.  Fills graph.grads.
    """
    groups = _group_by_length(batch)
    vars_ = {name: Var(val) for name, val in graph.params.items()}
    total = None
    for _, X in groups.items():
        ll = recurrent_log_density_graph(
            grad_ops, X, vars_["alpha"], vars_["A"], vars_["W"], _head_vars(vars_)
        )
        s = grad_ops.sum(ll)
        total = s if total is None else grad_ops.add(total, s)
    loss = grad_ops.neg(total)
    backward(loss)
    _collect_grads(graph, vars_)
    return float(loss.value)


def hankel_log_density_graph(ops, X, h0, cores, W, head_params):
    """Per-sequence log densities where the step-j state is the contraction
    of the first j-1 cores with the features of x_1..x_{j-1}; h0 seeds step 1."""
    B, l, _ = X.shape
    ones = np.ones(B)
    h = ops.einsum("k,b->bk", h0, ones)
    total = None
    for t in range(l):
        x_t = X[:, t]
        ll_t = mixture_head_log_conditional(ops, x_t, h, *head_params)
        total = ll_t if total is None else ops.add(total, ll_t)
        if t + 1 < l:
            phi_t = ops.tanh(ops.einsum("bd,de->be", x_t, W))
            if t == 0:
                h = ops.einsum("bd,dk->bk", phi_t, cores[0])
            else:
                h = ops.einsum("ba,adc,bd->bc", h, cores[t], phi_t)
    return total


def core_names(length: int):
    return [f"G{length}_{i}" for i in range(length)]


def _train_core_names(graph: ParamGraph, length: int):
    if graph.core_name_map is not None:
        if length not in graph.core_name_map:
            raise ValueError(f"no Hankel train of length {length} in the parameter graph")
        return graph.core_name_map[length]
    return core_names(length)


def loss_hankel(graph: ParamGraph, batch) -> float:
    """Hankel-train negative log-likelihood for a single-length batch.

    The batch length selects the train; all sequences must have exactly that
    length.  Fills graph.grads (the final core of the train receives no
    gradient from this loss: step l only consumes the first l-1 cores).
    """
    groups = _group_by_length(batch)
    if len(groups) != 1:
        raise ValueError(
            f"loss_hankel expects a single-length batch, got lengths {sorted(groups)}"
        )
    (length, X), = groups.items()
    names = _train_core_names(graph, length)
    missing = [n for n in names if n not in graph.params]
    if missing:
        raise ValueError(f"no Hankel train of length {length} in the parameter graph")
    vars_ = {name: Var(val) for name, val in graph.params.items()}
    cores = [vars_[n] for n in names]
    ll = hankel_log_density_graph(
        grad_ops, X, vars_["h0"], cores, vars_["W"], _head_vars(vars_)
    )
    loss = grad_ops.neg(grad_ops.sum(ll))
    backward(loss)
    _collect_grads(graph, vars_)
    return float(loss.value)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: dict = field(default_factory=dict)


def adam_step(params, grads, state: AdamState, cfg: TrainConfig, names=None):
    """One bias-corrected Adam update; returns the new parameter dict.

    Only `names` (default: every key in grads) are stepped, each with its own
    timestep, so parameters absent from the current loss are left untouched.
    """
    if names is None:
        names = list(grads)
    out = dict(params)
    for n in names:
        g = grads[n]
        if n not in state.m:
            state.m[n] = np.zeros_like(g)
            state.v[n] = np.zeros_like(g)
            state.t[n] = 0
        state.t[n] += 1
        t = state.t[n]
        state.m[n] = cfg.beta1 * state.m[n] + (1.0 - cfg.beta1) * g
        state.v[n] = cfg.beta2 * state.v[n] + (1.0 - cfg.beta2) * (g * g)
        m_hat = state.m[n] / (1.0 - cfg.beta1**t)
        v_hat = state.v[n] / (1.0 - cfg.beta2**t)
        out[n] = params[n] - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return out


def clip_global_norm(grads, max_norm, names=None):
    """Scale the named gradients so their joint norm is at most max_norm."""
    if names is None:
        names = list(grads)
    total = np.sqrt(sum(float(np.sum(grads[n] ** 2)) for n in names))
    if not np.isfinite(total) or total <= max_norm:
        return grads, total
    scale = max_norm / total
    out = dict(grads)
    for n in names:
        out[n] = grads[n] * scale
    return out, total


def init_head_params(k, m, d, rng):
    return {
        "V_beta": 0.1 * rng.standard_normal((m, k)),
        "b_beta": 0.1 * rng.standard_normal(m),
        "V_mu": 0.1 * rng.standard_normal((k, m, d)),
        "B_mu": 0.1 * rng.standard_normal((m, d)),
        "V_sigma": 0.1 * rng.standard_normal((k, m, d)),
        "B_sigma": np.zeros((m, d)),  # start from unit variances
    }


def init_direct_params(cfg: TrainConfig, obs_dim: int, rng) -> ParamGraph:
    k, m, d = cfg.states, cfg.mixtures, obs_dim
    params = {
        "alpha": np.full(k, 1.0 / k),
        "A": 0.1 * rng.standard_normal((k, d, k)),
        "W": 0.1 * rng.standard_normal((d, d)),
    }
    params.update(init_head_params(k, m, d, rng))
    return ParamGraph(params)


def init_hankel_params(cfg: TrainConfig, obs_dim: int, lengths, rng) -> ParamGraph:
    k, m, d = cfg.states, cfg.mixtures, obs_dim
    params = {
        "h0": np.full(k, 1.0 / k),
        "W": 0.1 * rng.standard_normal((d, d)),
    }
    params.update(init_head_params(k, m, d, rng))
    name_map = {}
    if cfg.tie_cores:
        # one leading and one interior core shared by every train & position
        params["Gtied_0"] = 0.1 * rng.standard_normal((d, k))
        params["Gtied_mid"] = 0.1 * rng.standard_normal((k, d, k))
        for l in lengths:
            name_map[l] = ["Gtied_0"] + ["Gtied_mid"] * (l - 1)
    else:
        for l in lengths:
            params[f"G{l}_0"] = 0.1 * rng.standard_normal((d, k))
            for i in range(1, l):
                params[f"G{l}_{i}"] = 0.1 * rng.standard_normal((k, d, k))
            name_map[l] = core_names(l)
    return ParamGraph(params, core_name_map=name_map)


def model_from_direct_params(params) -> RnadeNcwfa:
    head = MixtureDensityHead(*(params[n] for n in HEAD_PARAM_NAMES))
    return RnadeNcwfa(
        alpha=params["alpha"],
        A=params["A"],
        feature_map=TanhFeatureMap(params["W"]),
        head=head,
    )


def _split_validation(n, fraction, rng):
    idx = rng.permutation(n)
    n_val = max(1, int(round(fraction * n)))
    if n_val >= n:
        n_val = n - 1 if n > 1 else 0
    return idx[n_val:], idx[:n_val]


def _batches(indices, batch_size, rng):
    order = rng.permutation(len(indices))
    shuffled = indices[order]
    return [shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)]


@dataclass
class FitResult:
    params: dict
    history: list          # (epoch, train_nll_per_seq, val_nll_per_seq)
    best_epoch: int
    best_val: float


def _early_stop_loop(state_step, val_loss_fn, cfg):
    """Shared epoch loop: step an epoch, score validation, track patience."""
    best_params = None
    best_val = np.inf
    best_epoch = -1
    history = []
    bad_epochs = 0
    for epoch in range(cfg.max_epochs):
        train_loss, params = state_step(epoch)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            val_loss = val_loss_fn(params)
        history.append((epoch, train_loss, val_loss))
        if np.isfinite(val_loss) and val_loss < best_val - 1e-12:
            best_val = val_loss
            best_epoch = epoch
            best_params = {k: v.copy() for k, v in params.items()}
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                break
    if best_params is None:  # never improved; fall back to the last state
        best_params = params
        best_epoch = len(history) - 1
        best_val = history[-1][2]
    return FitResult(best_params, history, best_epoch, best_val)


def fit_sgd(dataset, cfg: TrainConfig, obs_dim: Optional[int] = None):
    """Train a density automaton by direct gradient descent.

    Returns (model, history); history rows are (epoch, train NLL/seq,
    validation NLL/seq).
    """
    data = [np.asarray(s, dtype=float) for s in dataset]
    data = [s[:, None] if s.ndim == 1 else s for s in data]
    if not data:
        raise ValueError("dataset is empty")
    d = obs_dim or data[0].shape[1]
    rng = np.random.default_rng(cfg.seed)
    graph = init_direct_params(cfg, d, rng)
    train_idx, val_idx = _split_validation(len(data), cfg.validation_fraction, rng)
    val_groups = _group_by_length([data[i] for i in val_idx]) if len(val_idx) else {}
    state = AdamState()

    def epoch_step(epoch):
        total = 0.0
        count = 0
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            for idx in _batches(train_idx, cfg.batch_size, rng):
                batch = [data[i] for i in idx]
                loss = loss_direct(graph, batch)
                grads, _ = clip_global_norm(graph.grads, cfg.grad_clip)
                graph.params = adam_step(graph.params, grads, state, cfg)
                total += loss
                count += len(batch)
        return total / max(count, 1), graph.params

    def val_loss(params):
        if not val_groups:
            return np.nan
        total = 0.0
        count = 0
        head = tuple(params[n] for n in HEAD_PARAM_NAMES)
        for _, X in val_groups.items():
            ll = recurrent_log_density_graph(
                np_ops, X, params["alpha"], params["A"], params["W"], head
            )
            total -= float(np.sum(ll))
            count += X.shape[0]
        return total / count

    result = _early_stop_loop(epoch_step, val_loss, cfg)
    return model_from_direct_params(result.params), result.history


def fit_hankel(datasets, cfg: TrainConfig):
    """Train per-length Hankel trains with shared feature map, head and h0.

    `datasets` maps length -> (n, length, d) array (or list of sequences);
    lengths must be exactly L, 2L, 2L+1 for L = cfg.hankel_length.  Cycles
    the three lengths each epoch.  Returns (HankelFit, history).
    """
    L = cfg.hankel_length
    expected = [L, 2 * L, 2 * L + 1]
    groups = {}
    for l, arr in datasets.items():
        arr = np.stack([np.asarray(s, dtype=float) for s in arr])
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.shape[1] != l:
            raise ValueError(f"dataset keyed {l} holds sequences of length {arr.shape[1]}")
        groups[int(l)] = arr
    if sorted(groups) != expected:
        raise ValueError(f"need datasets of lengths {expected}, got {sorted(groups)}")
    d = groups[L].shape[2]
    rng = np.random.default_rng(cfg.seed)
    graph = init_hankel_params(cfg, d, expected, rng)
    splits = {}
    for l in expected:
        tr, va = _split_validation(groups[l].shape[0], cfg.validation_fraction, rng)
        splits[l] = (tr, va)
    state = AdamState()
    shared = ["h0", "W", *HEAD_PARAM_NAMES]

    def epoch_step(epoch):
        total = 0.0
        count = 0
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            for l in expected:
                train_idx, _ = splits[l]
                # step l consumes cores 0..l-2: a core name enters the update
                # set only if some position before the last uses it
                names = graph.core_name_map[l][:-1] if l > 1 else []
                involved = shared + list(dict.fromkeys(names))
                for idx in _batches(train_idx, cfg.batch_size, rng):
                    batch = groups[l][idx]
                    loss = loss_hankel(graph, batch)
                    grads, _ = clip_global_norm(graph.grads, cfg.grad_clip, involved)
                    graph.params = adam_step(graph.params, grads, state, cfg, involved)
                    total += loss
                    count += len(idx)
        return total / max(count, 1), graph.params

    def val_loss(params):
        total = 0.0
        count = 0
        head = tuple(params[n] for n in HEAD_PARAM_NAMES)
        for l in expected:
            _, va = splits[l]
            if not len(va):
                continue
            X = groups[l][va]
            cores = [params[n] for n in graph.core_name_map[l]]
            ll = hankel_log_density_graph(np_ops, X, params["h0"], cores, params["W"], head)
            total -= float(np.sum(ll))
            count += X.shape[0]
        return total / max(count, 1)

    result = _early_stop_loop(epoch_step, val_loss, cfg)
    return HankelFit.from_params(result.params, graph.core_name_map, cfg), result.history


@dataclass
class HankelFit:
    """Everything fit_hankel learned: per-length core stacks plus the shared
    feature map weights, head and initial vector."""

    cores: Dict[int, list]
    W: np.ndarray
    head: MixtureDensityHead
    h0: np.ndarray
    cfg: TrainConfig

    @classmethod
    def from_params(cls, params, core_name_map, cfg):
        cores = {l: [params[n] for n in names] for l, names in core_name_map.items()}
        head = MixtureDensityHead(*(params[n] for n in HEAD_PARAM_NAMES))
        return cls(cores=cores, W=params["W"], head=head, h0=params["h0"], cfg=cfg)


def grad_check(loss_fn, params, rel_tol=1e-4, step=1e-5):
    """Central finite differences against analytic gradients.

    loss_fn(params_dict) must return (value, grads_dict).  Returns a report
    dict: per-parameter max relative error, the overall max, and a pass flag.
    """
    _, grads = loss_fn(params)
    per_param = {}
    for name, p in params.items():
        fd = np.zeros_like(p)
        flat = p.ravel()
        fd_flat = fd.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi, _ = loss_fn(params)
            flat[i] = orig - step
            lo, _ = loss_fn(params)
            flat[i] = orig
            fd_flat[i] = (hi - lo) / (2.0 * step)
        a = grads[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(fd)), 1e-8)
        per_param[name] = float(np.max(np.abs(a - fd) / denom))
    worst = max(per_param.values()) if per_param else 0.0
    return {"per_param": per_param, "max_rel_err": worst, "passed": worst < rel_tol}
