"""Command-line surface: train-target | serve | attack | evaluate.

Every command except ``serve`` is driven by a single JSON config document
(see docs/config.md for the full schema); configs validate completely,
unknown keys included, before any work starts. One experiment writes into
one output directory and keeps no implicit state.

Exit codes: 0 success (a budget-truncated attack is a success), 2 config
error, 3 runtime or transport error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import attack as attack_mod
from . import evaluation
from .data import Dataset, QueryPool, load_csv, load_idx, split, synth_blobs
from .errors import CapabilityError, ConfigError, FormatError, TransportError
from .models import ModelSpec, init_model, dpsgd_train, load_model, save_model, train
from .oracle import DpConfig, TargetHandle
from .server import ServerConfig, serve

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


# -- config plumbing -------------------------------------------------------


def _check_keys(doc: dict, allowed: dict, path: str):
    """Reject unknown keys and demand required ones. ``allowed`` maps key
    name to True (required) or False (optional)."""
    if not isinstance(doc, dict):
        raise ConfigError("expected an object", path)
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r}", path)
    for key, required in allowed.items():
        if required and key not in doc:
            raise ConfigError(f"missing required key {key!r}", path)


def _typed(doc, key, types, path, default=None, required=True):
    if key not in doc:
        if required:
            raise ConfigError(f"missing required key {key!r}", path)
        return default
    value = doc[key]
    if isinstance(value, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise ConfigError(f"{key!r} has wrong type", path)
    if not isinstance(value, types):
        raise ConfigError(f"{key!r} has wrong type", path)
    return value


def _existing_file(value: str, path: str) -> str:
    if not os.path.isfile(value):
        raise ConfigError(f"file not found: {value}", path)
    return value


def _validate_source(doc, path: str):
    if not isinstance(doc, dict) or "type" not in doc:
        raise ConfigError("dataset source needs a 'type'", path)
    kind = doc["type"]
    if kind == "blobs":
        _check_keys(
            doc,
            {"type": True, "k": True, "d": True, "n_per_class": True,
             "center_spread": True, "noise_sd": True, "seed": True},
            path,
        )
        _typed(doc, "k", int, path)
        _typed(doc, "d", int, path)
        _typed(doc, "n_per_class", int, path)
        _typed(doc, "center_spread", (int, float), path)
        _typed(doc, "noise_sd", (int, float), path)
        _typed(doc, "seed", int, path)
    elif kind == "idx":
        _check_keys(doc, {"type": True, "images": True, "labels": True}, path)
        _existing_file(_typed(doc, "images", str, path), f"{path}.images")
        _existing_file(_typed(doc, "labels", str, path), f"{path}.labels")
    elif kind == "csv":
        _check_keys(doc, {"type": True, "path": True, "label_column": False, "k": True}, path)
        _existing_file(_typed(doc, "path", str, path), f"{path}.path")
        _typed(doc, "k", int, path)
    else:
        raise ConfigError(f"unknown dataset source type {kind!r}", path)


def _load_source(doc) -> Dataset:
    kind = doc["type"]
    if kind == "blobs":
        return synth_blobs(
            k=doc["k"], d=doc["d"], n_per_class=doc["n_per_class"],
            center_spread=float(doc["center_spread"]),
            noise_sd=float(doc["noise_sd"]), seed=doc["seed"],
        )
    if kind == "idx":
        return load_idx(doc["images"], doc["labels"])
    return load_csv(doc["path"], doc.get("label_column"), doc["k"])


def _validate_target(doc, path: str):
    if not isinstance(doc, dict) or "type" not in doc:
        raise ConfigError("target needs a 'type'", path)
    if doc["type"] == "file":
        _check_keys(doc, {"type": True, "path": True, "cap": False, "dp": False}, path)
        _existing_file(_typed(doc, "path", str, path), f"{path}.path")
        if "cap" in doc:
            _typed(doc, "cap", int, path)
        if "dp" in doc:
            _check_keys(
                doc["dp"],
                {"epsilon": True, "sensitivity": False, "noise_seed": False},
                f"{path}.dp",
            )
    elif doc["type"] == "url":
        _check_keys(doc, {"type": True, "url": True}, path)
        _typed(doc, "url", str, path)
    else:
        raise ConfigError(f"unknown target type {doc['type']!r}", path)


def _build_target(doc, eval_channel: bool) -> TargetHandle:
    if doc["type"] == "url":
        return TargetHandle.remote(doc["url"])
    model = load_model(doc["path"])
    dp = None
    if "dp" in doc:
        d = doc["dp"]
        dp = DpConfig(
            mechanism="laplace-output",
            epsilon=float(d["epsilon"]),
            sensitivity=float(d.get("sensitivity", 2.0)),
            noise_seed=int(d.get("noise_seed", 0)),
        )
    return TargetHandle.in_process(
        model, cap=doc.get("cap"), dp=dp, eval_channel_enabled=eval_channel
    )


def _validate_model_section(doc, path: str, with_classes: bool):
    allowed = {"kind": True, "hidden_sizes": False, "activation": False}
    if with_classes:
        allowed["num_classes"] = True
    _check_keys(doc, allowed, path)
    kind = _typed(doc, "kind", str, path)
    if kind not in ("softmax-regression", "mlp"):
        raise ConfigError(f"unknown model kind {kind!r}", path)
    if "hidden_sizes" in doc and not isinstance(doc["hidden_sizes"], list):
        raise ConfigError("'hidden_sizes' must be a list of ints", path)


def _model_spec(doc, input_dim: int, num_classes: int) -> ModelSpec:
    return ModelSpec(
        kind=doc["kind"],
        input_dim=input_dim,
        num_classes=num_classes,
        hidden_sizes=tuple(doc.get("hidden_sizes", ())),
        activation=doc.get("activation", "relu"),
    )


def _seed_of(doc, path: str) -> int:
    seed = _typed(doc, "seed", int, path)
    if seed < 0:
        raise ConfigError("'seed' must be >= 0", path)
    return seed


def _load_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}")


def _write_json(path: str, payload: dict):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


# -- train-target -----------------------------------------------------------


TRAIN_KEYS = {
    "seed": True, "output_dir": True, "dataset": True, "model": True,
    "training": True, "dpsgd": False,
}
TRAINING_KEYS = {"epochs": True, "lr": True, "batch_size": False, "test_fraction": False}


def cmd_train_target(config_path: str) -> int:
    doc = _load_config(config_path)
    _check_keys(doc, TRAIN_KEYS, "train-target")
    seed = _seed_of(doc, "train-target")
    out_dir = _typed(doc, "output_dir", str, "train-target")
    _validate_source(doc["dataset"], "dataset")
    _validate_model_section(doc["model"], "model", with_classes=False)
    _check_keys(doc["training"], TRAINING_KEYS, "training")
    epochs = _typed(doc["training"], "epochs", int, "training")
    lr = float(_typed(doc["training"], "lr", (int, float), "training"))
    batch_size = _typed(doc["training"], "batch_size", int, "training", default=32, required=False)
    test_fraction = float(
        _typed(doc["training"], "test_fraction", (int, float), "training", default=0.2, required=False)
    )
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("'test_fraction' must be in (0, 1)", "training")
    dpsgd_doc = doc.get("dpsgd")
    if dpsgd_doc is not None:
        _check_keys(dpsgd_doc, {"clip_norm": True, "noise_multiplier": True}, "dpsgd")

    dataset = _load_source(doc["dataset"])
    if dataset.labels is None:
        raise ConfigError("target training needs a labeled dataset", "dataset")
    train_set, test_set = split(dataset, [1.0 - test_fraction, test_fraction], seed)

    spec = _model_spec(doc["model"], dataset.dim, dataset.k)
    model = init_model(spec, attack_mod.derive_seed(seed, 1))
    if dpsgd_doc is not None:
        model = dpsgd_train(
            model, train_set.features, train_set.labels, epochs=epochs, lr=lr,
            clip_norm=float(dpsgd_doc["clip_norm"]),
            noise_multiplier=float(dpsgd_doc["noise_multiplier"]),
            batch_size=batch_size, seed=attack_mod.derive_seed(seed, 2),
        )
    else:
        model = train(
            model, train_set.features, train_set.labels, epochs=epochs, lr=lr,
            batch_size=batch_size, seed=attack_mod.derive_seed(seed, 2),
        )

    os.makedirs(out_dir, exist_ok=True)
    model_path = os.path.join(out_dir, "target.model")
    save_model(model, model_path)
    test_acc = evaluation.accuracy(model, test_set)
    _write_json(
        os.path.join(out_dir, "metrics.json"),
        {"test_accuracy": test_acc, "train_examples": train_set.n, "test_examples": test_set.n},
    )
    print(f"trained target -> {model_path} (test accuracy {test_acc:.4f})")
    return EXIT_OK


# -- attack ------------------------------------------------------------------


ATTACK_KEYS = {
    "seed": True, "output_dir": True, "target": True, "pool": True,
    "extracted_model": True, "attack": True, "evaluation": False,
}
ATTACK_SECTION_KEYS = {
    "n0": True, "b0": True, "rounds": True, "gamma1": False, "gamma2": False,
    "alpha": False, "epochs_per_round": True, "lr": True, "batch_size": False,
    "sampler": False, "stratified_gradients": False, "loss_scoring": False,
}


def cmd_attack(config_path: str) -> int:
    doc = _load_config(config_path)
    _check_keys(doc, ATTACK_KEYS, "attack")
    seed = _seed_of(doc, "attack")
    out_dir = _typed(doc, "output_dir", str, "attack")
    _validate_target(doc["target"], "target")
    _validate_source(doc["pool"], "pool")
    _validate_model_section(doc["extracted_model"], "extracted_model", with_classes=True)
    _check_keys(doc["attack"], ATTACK_SECTION_KEYS, "attack.attack")
    if "evaluation" in doc:
        _check_keys(doc["evaluation"], {"test_set": True}, "evaluation")
        _validate_source(doc["evaluation"]["test_set"], "evaluation.test_set")

    a = doc["attack"]
    try:
        config = attack_mod.AttackConfig(
            n0=a["n0"], b0=a["b0"], rounds=a["rounds"],
            gamma1=float(a.get("gamma1", 0.8)), gamma2=float(a.get("gamma2", 0.8)),
            alpha=float(a.get("alpha", 1.0)),
            epochs_per_round=a["epochs_per_round"], lr=float(a["lr"]),
            batch_size=a.get("batch_size", 32), seed=seed,
            sampler=a.get("sampler", "marich"),
            stratified_gradients=a.get("stratified_gradients", False),
            loss_scoring=a.get("loss_scoring", "min-distance"),
        )
    except ValueError as e:
        raise ConfigError(str(e), "attack")

    pool_set = _load_source(doc["pool"])
    pool = QueryPool.from_dataset(pool_set)
    target = _build_target(doc["target"], eval_channel=True)
    num_classes = _typed(doc["extracted_model"], "num_classes", int, "extracted_model")
    spec = _model_spec(doc["extracted_model"], pool_set.dim, num_classes)
    eval_set = _load_source(doc["evaluation"]["test_set"]) if "evaluation" in doc else None

    model, trace = attack_mod.run_attack(target, pool, spec, config, eval_set)

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "trace.json"), "w", encoding="utf-8") as f:
        f.write(attack_mod.trace_json(trace))
    with open(os.path.join(out_dir, "rounds.csv"), "w", encoding="utf-8") as f:
        f.write(attack_mod.trace_csv(trace))
    save_model(model, os.path.join(out_dir, "extracted.model"))
    print(
        f"attack {trace.status}: {trace.cumulative_queries} queries over "
        f"{len(trace.rounds)} adaptive rounds -> {out_dir}"
    )
    return EXIT_OK


# -- evaluate ----------------------------------------------------------------


EVAL_KEYS = {
    "seed": True, "output_dir": True, "experiment_id": True, "target": True,
    "extracted": True, "test_set": True, "metrics": True, "mi": False,
}
KNOWN_METRICS = ("accuracy", "agreement", "kl", "mi", "mi_agreement")


def cmd_evaluate(config_path: str) -> int:
    doc = _load_config(config_path)
    _check_keys(doc, EVAL_KEYS, "evaluate")
    seed = _seed_of(doc, "evaluate")
    out_dir = _typed(doc, "output_dir", str, "evaluate")
    experiment_id = _typed(doc, "experiment_id", str, "evaluate")
    _validate_target(doc["target"], "target")
    _check_keys(doc["extracted"], {"path": True}, "extracted")
    _existing_file(doc["extracted"]["path"], "extracted.path")
    _validate_source(doc["test_set"], "test_set")
    metrics = _typed(doc, "metrics", list, "evaluate")
    for m in metrics:
        if m not in KNOWN_METRICS:
            raise ConfigError(f"unknown metric {m!r}", "metrics")
    if len(set(metrics)) != len(metrics):
        raise ConfigError("metrics must be unique", "metrics")
    needs_mi = "mi" in metrics or "mi_agreement" in metrics
    if needs_mi:
        if "mi" not in doc:
            raise ConfigError("membership metrics need an 'mi' section", "mi")
        _check_keys(
            doc["mi"],
            {"members": True, "nonmembers": True, "calibration_fraction": False},
            "mi",
        )
        _validate_source(doc["mi"]["members"], "mi.members")
        _validate_source(doc["mi"]["nonmembers"], "mi.nonmembers")

    target = _build_target(doc["target"], eval_channel=True)
    extracted = load_model(doc["extracted"]["path"])
    test_set = _load_source(doc["test_set"])

    report = {"experiment_id": experiment_id, "metrics": {}}
    if "accuracy" in metrics:
        report["metrics"]["accuracy"] = evaluation.accuracy(extracted, test_set)
    if "agreement" in metrics:
        report["metrics"]["agreement"] = evaluation.agreement(extracted, target, test_set)
    if "kl" in metrics:
        report["metrics"]["kl"] = evaluation.kl_fidelity(target, extracted, test_set)
    if needs_mi:
        members = _load_source(doc["mi"]["members"])
        nonmembers = _load_source(doc["mi"]["nonmembers"])
        frac = float(doc["mi"].get("calibration_fraction", 0.5))
        mi_ext = evaluation.mi_threshold_attack(extracted, members, nonmembers, frac, seed=seed)
        if "mi" in metrics:
            report["metrics"]["mi"] = {
                "membership_accuracy": mi_ext.membership_accuracy,
                "nonmembership_accuracy": mi_ext.nonmembership_accuracy,
                "overall_accuracy": mi_ext.overall_accuracy,
                "auc": mi_ext.auc,
                "threshold": mi_ext.threshold,
            }
        if "mi_agreement" in metrics:
            if doc["target"]["type"] != "file":
                raise CapabilityError(
                    "mi_agreement needs a local target model file (white-box scores)"
                )
            target_model = target.model
            mi_tgt = evaluation.mi_threshold_attack(target_model, members, nonmembers, frac, seed=seed)
            sequence = Dataset(
                features=np.vstack([members.features, nonmembers.features]),
                labels=np.concatenate([members.labels, nonmembers.labels]),
                k=members.k,
                name="mi-sequence",
            )
            dec_t = evaluation.mi_decisions_for(target_model, sequence, mi_tgt.threshold)
            dec_e = evaluation.mi_decisions_for(extracted, sequence, mi_ext.threshold)
            pct, auc = evaluation.mi_agreement(dec_t, dec_e)
            report["metrics"]["mi_agreement"] = {"percent": pct, "auc": auc}

    os.makedirs(out_dir, exist_ok=True)
    _write_json(os.path.join(out_dir, "report.json"), report)
    with open(os.path.join(out_dir, "report.csv"), "w", encoding="utf-8") as f:
        f.write("experiment_id,round,metric,value\n")
        for key, value in report["metrics"].items():
            if isinstance(value, dict):
                for sub, v in value.items():
                    f.write(f"{experiment_id},final,{key}.{sub},{v!r}\n")
            else:
                f.write(f"{experiment_id},final,{key},{value!r}\n")
    print(f"evaluation report -> {os.path.join(out_dir, 'report.json')}")
    return EXIT_OK


# -- serve -------------------------------------------------------------------


def cmd_serve(args) -> int:
    dp = None
    if args.dp_epsilon is not None:
        dp = DpConfig(
            mechanism="laplace-output",
            epsilon=args.dp_epsilon,
            sensitivity=args.dp_sensitivity,
            noise_seed=args.dp_noise_seed,
        )
    host, _, port = args.bind.partition(":")
    config = ServerConfig(
        model_path=args.model,
        bind=host or "127.0.0.1",
        port=int(port) if port else 8080,
        cap=args.cap,
        dp=dp,
        expose_probs=args.expose_probs,
        max_batch=args.max_batch,
    )
    serve(config)
    return EXIT_OK


# -- entry -------------------------------------------------------------------


_SOURCE_KEYS = (
    "dataset sources: {type: blobs, k, d, n_per_class, center_spread, noise_sd, seed} | "
    "{type: idx, images, labels} | {type: csv, path, label_column?, k}"
)

TRAIN_EPILOG = (
    "config keys: seed, output_dir, dataset, model{kind, hidden_sizes?, activation?}, "
    "training{epochs, lr, batch_size?, test_fraction?}, "
    "dpsgd?{clip_norm, noise_multiplier}. " + _SOURCE_KEYS
)
ATTACK_EPILOG = (
    "config keys: seed, output_dir, target{type: file|url, path|url, cap?, dp?}, pool, "
    "extracted_model{kind, num_classes, hidden_sizes?, activation?}, "
    "attack{n0, b0, rounds, gamma1?, gamma2?, alpha?, epochs_per_round, lr, batch_size?, "
    "sampler?, stratified_gradients?, loss_scoring?}, evaluation?{test_set}. " + _SOURCE_KEYS
)
EVAL_EPILOG = (
    "config keys: seed, output_dir, experiment_id, target{type: file|url, ...}, "
    "extracted{path}, test_set, metrics[accuracy|agreement|kl|mi|mi_agreement], "
    "mi?{members, nonmembers, calibration_fraction?}. " + _SOURCE_KEYS
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mextract",
        description="Query-efficient black-box model extraction toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train-target", help="train and save a target model",
                             epilog=TRAIN_EPILOG)
    p_train.add_argument("--config", required=True, help="JSON config (see docs/config.md)")

    p_serve = sub.add_parser("serve", help="serve a model file as a prediction API")
    p_serve.add_argument("--bind", default="127.0.0.1:8080", help="host:port to listen on")
    p_serve.add_argument("--model", required=True, help="model container path")
    p_serve.add_argument("--cap", type=int, default=None, help="total query budget")
    p_serve.add_argument("--dp-epsilon", type=float, default=None,
                         help="enable Laplace output perturbation at this epsilon")
    p_serve.add_argument("--dp-sensitivity", type=float, default=2.0,
                         help="Laplace sensitivity (default 2)")
    p_serve.add_argument("--dp-noise-seed", type=int, default=0)
    p_serve.add_argument("--expose-probs", action="store_true",
                         help="enable the /v1/probs evaluation endpoint")
    p_serve.add_argument("--max-batch", type=int, default=256)

    p_attack = sub.add_parser("attack", help="run an extraction attack",
                              epilog=ATTACK_EPILOG)
    p_attack.add_argument("--config", required=True, help="JSON config (see docs/config.md)")

    p_eval = sub.add_parser("evaluate", help="compute fidelity / MI metrics",
                            epilog=EVAL_EPILOG)
    p_eval.add_argument("--config", required=True, help="JSON config (see docs/config.md)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train-target":
            return cmd_train_target(args.config)
        if args.command == "serve":
            return cmd_serve(args)
        if args.command == "attack":
            return cmd_attack(args.config)
        if args.command == "evaluate":
            return cmd_evaluate(args.config)
        return EXIT_CONFIG
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as e:
        print(f"data format error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except (TransportError, CapabilityError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
