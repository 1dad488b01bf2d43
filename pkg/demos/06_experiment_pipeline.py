"""The full benchmark pipeline at toy scale.

run_experiment generates a corpus from a random HMM (with optional training
noise), trains every configured estimator on every (size, noise, seed) cell,
evaluates log-likelihood ratios on longer test sequences and writes
report.csv + manifest.json.  The same thing is available from the shell:

    ncwfa experiment --config cfg.json --out artifacts/
"""

import json
import tempfile
import warnings
from pathlib import Path

from ncwfa.experiment import ExperimentConfig, run_experiment

cfg = ExperimentConfig.from_dict({
    "hmm": {"states": 3, "obs_dim": 2, "seed": 11},
    "basis_length": 1,
    "train_sizes": [50],
    "noise_stds": [0.0, 0.5],
    "seeds": [0, 1],
    "test_lengths": [6, 12],
    "test_size": 50,
    "models": {
        "em": {"states": 3, "max_iters": 20, "restarts": 1},
        "spec": {"states": 3, "mixtures": 3, "rank": 2, "sv_cutoff": 0.05,
                 "train": {"max_epochs": 40}},
        "sgd": {"states": 3, "mixtures": 3, "train": {"max_epochs": 40}},
    },
})

out = Path(tempfile.mkdtemp(prefix="ncwfa-demo-"))
with warnings.catch_warnings():
    warnings.simplefilter("ignore", RuntimeWarning)
    run_experiment(cfg, out)

print((out / "summary.txt").read_text())
manifest = json.loads((out / "manifest.json").read_text())
print("trend flag:", manifest["trend"]["status"])
print("artifacts under:", out)
