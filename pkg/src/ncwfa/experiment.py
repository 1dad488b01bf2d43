"""Synthetic-experiment pipeline.

A declarative config describes: the generator HMM, the training lengths
(L, 2L, 2L+1), training sizes, noise levels, seeds, the test lengths, and the
model configurations.  The pipeline

    generate -> fit (em / spec / sgd per cell) -> evaluate -> report

writes everything as files: JSON-lines datasets, JSON models, CSV metrics
logs, one CSV report and a JSON manifest.  The report carries, per model and
test length, the mean log-likelihood and the mean log-likelihood ratio
against the ground-truth forward density; the manifest carries run metadata
(timings live there, never in the CSV, so reruns reproduce the report byte
for byte).
"""

import csv
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .ghmm import EmConfig, GaussianHmm, em_fit, log_density_forward_batch, random_hmm, sample_dataset
from .serialize import save_model
from .spectral import spectral_learn
from .training import TrainConfig, fit_sgd

KNOWN_MODELS = ("em", "spec", "sgd")
GROUND_TRUTH_NAME = "ground_truth"

REPORT_COLUMNS = [
    "model",
    "seed",
    "train_size",
    "noise_std",
    "test_length",
    "mean_log_likelihood",
    "std_over_seeds",
    "mean_log_ratio",
    "n_nonfinite",
]


@dataclass
class HmmSpec:
    states: int = 10
    obs_dim: int = 2
    seed: int = 12345
    cov: str = "diag"


@dataclass
class ExperimentConfig:
    hmm: HmmSpec = field(default_factory=HmmSpec)
    basis_length: int = 3                   # L; training lengths L, 2L, 2L+1
    train_sizes: List[int] = field(default_factory=lambda: [100, 1000])
    noise_stds: List[float] = field(default_factory=lambda: [0.0, 1.0])
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2])
    test_lengths: List[int] = field(default_factory=lambda: [8, 16, 32, 64, 100])
    test_size: int = 200
    models: Dict[str, dict] = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.hmm, dict):
            self.hmm = HmmSpec(**self.hmm)
        if not self.train_sizes or min(self.train_sizes) < 1:
            raise ValueError("train_sizes must be positive")
        if self.test_size < 1 or min(self.test_lengths, default=0) < 1:
            raise ValueError("test set sizes and lengths must be positive")
        if any(s < 0 for s in self.noise_stds):
            raise ValueError("noise stds must be nonnegative")
        if not self.seeds:
            raise ValueError("at least one seed required")
        for name in self.models:
            if name not in KNOWN_MODELS:
                raise ValueError(
                    f"unknown model name {name!r}; known: {', '.join(KNOWN_MODELS)}"
                )

    @property
    def train_lengths(self):
        L = self.basis_length
        return [L, 2 * L, 2 * L + 1]

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def train_config(self, method: str, seed: int) -> TrainConfig:
        spec = dict(self.models.get(method, {}))
        train_kw = dict(spec.pop("train", {}))
        kw = dict(
            states=spec.get("states", self.hmm.states),
            mixtures=spec.get("mixtures", self.hmm.states),
            rank=spec.get("rank"),
            hankel_length=self.basis_length,
            seed=seed,
        )
        if "sv_cutoff" in spec:
            kw["sv_cutoff"] = spec["sv_cutoff"]
        kw.update(train_kw)
        return TrainConfig(**kw)

    def em_config(self, seed: int) -> EmConfig:
        spec = dict(self.models.get("em", {}))
        return EmConfig(
            max_iters=spec.get("max_iters", 100),
            tol=spec.get("tol", 1e-5),
            seed=seed,
            restarts=spec.get("restarts", 3),
            cov_type=spec.get("cov_type", "diag"),
        )


# ---------------------------------------------------------------------------
# dataset files


def write_jsonl(path, data: np.ndarray, seed: int):
    """One sequence per line as a list of length-d lists; header first."""
    data = np.asarray(data, dtype=float)
    n, length, d = data.shape
    with open(path, "w") as fh:
        fh.write(json.dumps({"d": d, "length": length, "seed": seed}) + "\n")
        for seq in data:
            fh.write(json.dumps(seq.tolist()) + "\n")


def read_jsonl(path):
    with open(path) as fh:
        header = json.loads(fh.readline())
        seqs = [json.loads(line) for line in fh if line.strip()]
    data = np.asarray(seqs, dtype=float)
    if data.ndim == 2:  # defensive: scalar sequences stored flat
        data = data[:, :, None]
    return data, header


def _noise_name(std: float) -> str:
    return format(float(std), "g")


def train_file(out_dir, seed, size, noise, length):
    return Path(out_dir) / f"train_seed{seed}_size{size}_noise{_noise_name(noise)}_len{length}.jsonl"


def test_file(out_dir, length):
    return Path(out_dir) / f"test_len{length}.jsonl"


def make_generator_hmm(spec: HmmSpec) -> GaussianHmm:
    return random_hmm(spec.states, spec.obs_dim, np.random.default_rng(spec.seed), cov=spec.cov)


def generate_corpus(cfg: ExperimentConfig, out_dir) -> GaussianHmm:
    """Sample the generator HMM and write all train/test splits.

    Per seed, clean base samples are drawn once at the largest size; smaller
    sizes are prefixes and noisy variants add i.i.d. per-coordinate Gaussian
    noise to the same clean base, so noise 0 files equal the clean samples.
    Fully deterministic per config.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    hmm = make_generator_hmm(cfg.hmm)
    save_model(hmm, out_dir / "truth.json")
    max_size = max(cfg.train_sizes)
    for seed in cfg.seeds:
        for length in cfg.train_lengths:
            rng = np.random.default_rng([cfg.hmm.seed, 7, seed, length])
            clean = sample_dataset(hmm, max_size, length, rng)
            for noise_i, noise in enumerate(cfg.noise_stds):
                if noise > 0:
                    nrng = np.random.default_rng([cfg.hmm.seed, 13, seed, noise_i, length])
                    noisy = clean + noise * nrng.standard_normal(clean.shape)
                else:
                    noisy = clean
                for size in cfg.train_sizes:
                    write_jsonl(train_file(out_dir, seed, size, noise, length), noisy[:size], seed)
    for length in cfg.test_lengths:
        rng = np.random.default_rng([cfg.hmm.seed, 29, length])
        write_jsonl(test_file(out_dir, length), sample_dataset(hmm, cfg.test_size, length, rng), cfg.hmm.seed)
    return hmm


def load_cell_datasets(data_dir, cfg: ExperimentConfig, seed, size, noise):
    out = {}
    for length in cfg.train_lengths:
        path = train_file(data_dir, seed, size, noise, length)
        if not path.exists():
            raise FileNotFoundError(f"missing training split {path}")
        out[length], _ = read_jsonl(path)
    return out


def load_test_sets(data_dir, lengths=None):
    data_dir = Path(data_dir)
    sets = {}
    if lengths is None:
        paths = sorted(data_dir.glob("test_len*.jsonl"))
        lengths = [int(p.stem.replace("test_len", "")) for p in paths]
    for length in sorted(lengths):
        sets[length], _ = read_jsonl(test_file(data_dir, length))
    return sets


# ---------------------------------------------------------------------------
# training and evaluation


def train_cell_model(method, datasets, cfg: ExperimentConfig, seed):
    """Train one model on one (size, noise, seed) cell.

    Returns (model, history, info) where info is recovery metadata for the
    spectral method and None otherwise.
    """
    if method == "em":
        mixed = [s for l in sorted(datasets) for s in datasets[l]]
        model, history = em_fit(mixed, cfg.models["em"].get("states", cfg.hmm.states),
                                cfg.em_config(seed), return_history=True)
        history = [(i, ll, "") for i, ll in enumerate(history)]
        return model, history, None
    if method == "spec":
        model, info, history = spectral_learn(
            datasets, cfg.train_config("spec", seed), full_output=True
        )
        return model, history, info
    if method == "sgd":
        mixed = [s for l in sorted(datasets) for s in datasets[l]]
        model, history = fit_sgd(mixed, cfg.train_config("sgd", seed))
        return model, history, None
    raise ValueError(f"unknown model name {method!r}")


def model_log_densities(model, X) -> np.ndarray:
    if isinstance(model, GaussianHmm):
        return log_density_forward_batch(model, X)
    if hasattr(model, "batch_sequence_log_density"):
        return model.batch_sequence_log_density(X)
    raise TypeError(f"cannot evaluate {type(model).__name__}")


@dataclass
class EvalReport:
    rows: List[dict]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: _csv_cell(row.get(k, "")) for k in REPORT_COLUMNS})

    def summary_table(self) -> str:
        """Per (model, test length): absolute log-likelihood as mean (std)
        across rows, the format the usual results tables use."""
        keyed = {}
        for row in self.rows:
            keyed.setdefault((row["model"], row["test_length"]), []).append(
                row["mean_log_likelihood"]
            )
        lines = ["model\ttest_length\tlog_likelihood"]
        for (model, length), vals in sorted(keyed.items()):
            arr = np.asarray(vals, dtype=float)
            lines.append(f"{model}\t{length}\t{arr.mean():.2f} ({arr.std():.2f})")
        return "\n".join(lines)


def _csv_cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def evaluate(models, test_sets, ground_truth: GaussianHmm, meta: Optional[dict] = None,
             truth_lls: Optional[dict] = None, include_ground_truth: bool = True) -> EvalReport:
    """Mean log-likelihood and mean log-ratio per model per test length.

    `models` maps name -> model.  Non-finite densities are counted in the
    n_nonfinite column rather than dropped.  Ground-truth rows (ratio
    identically 0) are appended unless disabled.
    """
    meta = meta or {}
    if truth_lls is None:
        truth_lls = {l: log_density_forward_batch(ground_truth, X) for l, X in test_sets.items()}
    rows = []
    for name in sorted(models):
        model = models[name]
        for length in sorted(test_sets):
            X = test_sets[length]
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                lls = model_log_densities(model, X)
            finite = np.isfinite(lls)
            n_bad = int(np.sum(~finite))
            mean_ll = float(np.mean(lls)) if n_bad == 0 else float(np.mean(lls[finite])) if finite.any() else float("nan")
            ratio = lls - truth_lls[length]
            mean_ratio = float(np.mean(ratio)) if n_bad == 0 else float(np.mean(ratio[finite])) if finite.any() else float("nan")
            rows.append({
                "model": name,
                "test_length": length,
                "mean_log_likelihood": mean_ll,
                "mean_log_ratio": mean_ratio,
                "n_nonfinite": n_bad,
                "std_over_seeds": "",
                **meta,
            })
    if include_ground_truth:
        for length in sorted(test_sets):
            rows.append({
                "model": GROUND_TRUTH_NAME,
                "seed": "",
                "train_size": "",
                "noise_std": "",
                "test_length": length,
                "mean_log_likelihood": float(np.mean(truth_lls[length])),
                "mean_log_ratio": 0.0,
                "n_nonfinite": int(np.sum(~np.isfinite(truth_lls[length]))),
                "std_over_seeds": "",
            })
    return EvalReport(rows)


def _fill_std_over_seeds(rows):
    """Across seeds of the same (model, size, noise, length): std of the mean
    log-likelihoods, repeated on each member row."""
    grouped = {}
    for row in rows:
        if row["model"] == GROUND_TRUTH_NAME:
            continue
        key = (row["model"], row.get("train_size"), row.get("noise_std"), row["test_length"])
        grouped.setdefault(key, []).append(row)
    for key, members in grouped.items():
        vals = np.asarray([r["mean_log_likelihood"] for r in members], dtype=float)
        std = float(np.std(vals))
        for r in members:
            r["std_over_seeds"] = std


def _sort_key(row):
    is_gt = row["model"] == GROUND_TRUTH_NAME
    return (
        int(is_gt),
        str(row["model"]),
        str(row.get("train_size", "")),
        str(row.get("noise_std", "")),
        str(row.get("seed", "")),
        int(row["test_length"]),
    )


def run_experiment(cfg: ExperimentConfig, out_dir, max_workers: Optional[int] = None) -> Path:
    """Full pipeline: generate, train every (size, noise, seed) cell, evaluate,
    and write report.csv plus manifest.json.  Returns the artifact directory.

    Worker parallelism across cells is capped by NCWFA_THREADS (default 1);
    rows are assembled in a fixed order so the report is scheduling-independent.
    """
    t0 = time.time()
    out_dir = Path(out_dir)
    corpus_dir = out_dir / "corpus"
    models_dir = out_dir / "models"
    metrics_dir = out_dir / "metrics"
    for p in (out_dir, models_dir, metrics_dir):
        p.mkdir(parents=True, exist_ok=True)
    hmm = generate_corpus(cfg, corpus_dir)
    test_sets = load_test_sets(corpus_dir, cfg.test_lengths)
    truth_lls = {l: log_density_forward_batch(hmm, X) for l, X in test_sets.items()}

    methods = [m for m in KNOWN_MODELS if m in cfg.models] or list(KNOWN_MODELS)
    cells = [
        (size, noise, seed)
        for size in cfg.train_sizes
        for noise in cfg.noise_stds
        for seed in cfg.seeds
    ]

    def run_cell(cell):
        size, noise, seed = cell
        tag = f"size{size}_noise{_noise_name(noise)}_seed{seed}"
        datasets = load_cell_datasets(corpus_dir, cfg, seed, size, noise)
        entry = {"status": "ok", "models": {}}
        rows = []
        for method in methods:
            try:
                model, history, info = train_cell_model(method, datasets, cfg, seed)
                model_path = models_dir / f"{method}_{tag}.json"
                save_model(model, model_path)
                _write_metrics(metrics_dir / f"{method}_{tag}.csv", history)
                minfo = {"path": str(model_path.relative_to(out_dir))}
                if info is not None:
                    minfo["recovery"] = {
                        "rank": info.rank,
                        "numerical_rank": info.numerical_rank,
                        "residual": info.residual,
                        "singular_values": [float(s) for s in info.singular_values],
                    }
                entry["models"][method] = minfo
                meta = {"seed": seed, "train_size": size, "noise_std": noise}
                rep = evaluate({method: model}, test_sets, hmm, meta=meta,
                               truth_lls=truth_lls, include_ground_truth=False)
                rows.extend(rep.rows)
            except Exception as exc:  # record and continue with other methods
                entry["status"] = "partial"
                entry["models"][method] = {"error": f"{type(exc).__name__}: {exc}"}
        return tag, entry, rows

    n_workers = max_workers or int(os.environ.get("NCWFA_THREADS", "1") or 1)
    results = []
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(run_cell, cells))
    else:
        results = [run_cell(c) for c in cells]

    all_rows = []
    cell_entries = {}
    for tag, entry, rows in results:
        cell_entries[tag] = entry
        all_rows.extend(rows)
    gt_rep = evaluate({}, test_sets, hmm, truth_lls=truth_lls, include_ground_truth=True)
    all_rows.extend(gt_rep.rows)
    _fill_std_over_seeds(all_rows)
    all_rows.sort(key=_sort_key)
    report = EvalReport(all_rows)
    report_path = out_dir / "report.csv"
    report.to_csv(report_path)
    with open(out_dir / "summary.txt", "w") as fh:
        fh.write(report.summary_table() + "\n")

    manifest = {
        "version": __version__,
        "config": asdict(cfg),
        "cells": cell_entries,
        "trend": _trend_flag(cfg, all_rows),
        "wall_clock_seconds": round(time.time() - t0, 3),
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out_dir


def _write_metrics(path, history):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for row in history:
            writer.writerow([row[0], _csv_cell(float(row[1])), _csv_cell(row[2]) if row[2] != "" else ""])


def _trend_flag(cfg: ExperimentConfig, rows) -> dict:
    """The headline qualitative comparison: does the spectral learner match or
    beat plain gradient descent at the smallest size / largest noise, judged
    by mean log-likelihood at the longest test length?"""
    if "spec" not in cfg.models or "sgd" not in cfg.models:
        return {"status": "N/A", "reason": "needs both spec and sgd"}
    size = min(cfg.train_sizes)
    noise = max(cfg.noise_stds)
    length = max(cfg.test_lengths)
    means = {}
    for name in ("spec", "sgd"):
        vals = [
            r["mean_log_likelihood"]
            for r in rows
            if r["model"] == name
            and r["train_size"] == size
            and r["noise_std"] == noise
            and r["test_length"] == length
        ]
        if not vals:
            return {"status": "N/A", "reason": f"no rows for {name}"}
        means[name] = float(np.mean(vals))
    status = "PASS" if means["spec"] >= means["sgd"] else "TREND-MISS"
    return {
        "status": status,
        "train_size": size,
        "noise_std": noise,
        "test_length": length,
        "spec_mean_log_likelihood": means["spec"],
        "sgd_mean_log_likelihood": means["sgd"],
    }
