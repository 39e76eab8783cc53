"""mextract: a query-efficient black-box model extraction toolkit.

Subpackages by role:

* :mod:`mextract.mathcore` -- simplex math: softmax, entropy, KL, cross-entropy
* :mod:`mextract.models` -- softmax regression / MLP classifiers, SGD and DP-SGD
* :mod:`mextract.data` -- IDX/CSV/synthetic datasets, splits, query pools
* :mod:`mextract.clustering` -- k-means over gradient embeddings
* :mod:`mextract.samplers` -- cascade stages and baseline query strategies
* :mod:`mextract.attack` -- the adaptive extraction loop and trace export
* :mod:`mextract.oracle` -- the label-only target handle, DP wrapping, ledger
* :mod:`mextract.server` -- the HTTP prediction service
* :mod:`mextract.evaluation` -- fidelity and membership-inference metrics
* :mod:`mextract.cli` -- the ``mextract`` command
"""

from .attack import AttackConfig, AttackTrace, baseline_attack, marich_attack, run_attack
from .data import Dataset, QueryPool, load_csv, load_idx, split, synth_blobs
from .models import Model, ModelSpec, init_model, load_model, save_model
from .oracle import DpConfig, TargetHandle

__all__ = [
    "AttackConfig",
    "AttackTrace",
    "Dataset",
    "DpConfig",
    "Model",
    "ModelSpec",
    "QueryPool",
    "TargetHandle",
    "baseline_attack",
    "init_model",
    "load_csv",
    "load_idx",
    "load_model",
    "marich_attack",
    "run_attack",
    "save_model",
    "split",
    "synth_blobs",
]

__version__ = "0.1.0"
