"""The adaptive extraction loop and its equal-budget baseline variant.

Phase 1 trains an initial extracted model on n0 uniformly random queries.
Phase 2 runs T rounds; each round the cascade (entropy selection, then
gradient-diversity refinement, then mismatch selection) picks the queries
to spend, the oracle answers with labels, and the model trains further on
the full accumulated history. Baselines replace the cascade with a single
strategy drawing the same final-stage count, so per-round oracle cost is
identical across samplers.

Everything the loop does is deterministic in (config, datasets, target
parameters); per-round wall-clock times live only on the in-memory trace
and never reach the JSON/CSV exports.
"""

from __future__ import annotations

import io
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import evaluation
from .data import Dataset, QueryPool
from .errors import BudgetExhaustedError, CapabilityError
from .mathcore import kl_divergence_rows
from .models import Model, ModelSpec, forward_batch, init_model, train
from .oracle import TargetHandle
from .samplers import (
    Selection,
    entropy_gradient_sampling,
    entropy_sampling,
    kcenter_sampling,
    least_confidence_sampling,
    loss_sampling,
    margin_sampling,
    random_sampling,
)

SAMPLERS = ("marich", "random", "entropy", "least-confidence", "margin", "k-center")

STATUS_COMPLETED = "completed"
STATUS_POOL_EXHAUSTED = "pool-exhausted"
STATUS_BUDGET_EXHAUSTED = "budget-exhausted"

CSV_COLUMNS = ("round", "scheduled_budget", "queries", "cumulative_queries", "accuracy", "agreement", "mean_kl")


def derive_seed(base: int, tag: int) -> int:
    """Stable 32-bit sub-seed for stream ``tag`` of root seed ``base``."""
    return int(np.random.SeedSequence([int(base), int(tag)]).generate_state(1)[0])


@dataclass
class AttackConfig:
    """Everything the attack loop needs, oracle aside.

    ``gamma1``/``gamma2`` shrink the per-round budget through the cascade
    stages; ``alpha`` grows the scheduled budget geometrically per round.
    """

    n0: int
    b0: int
    rounds: int
    gamma1: float = 0.8
    gamma2: float = 0.8
    alpha: float = 1.0
    epochs_per_round: int = 10
    lr: float = 0.05
    batch_size: int = 32
    seed: int = 0
    sampler: str = "marich"
    stratified_gradients: bool = False
    loss_scoring: str = "min-distance"

    def __post_init__(self):
        if self.n0 < 1:
            raise ValueError("n0 must be >= 1")
        if self.b0 < 1:
            raise ValueError("b0 must be >= 1")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        for name in ("gamma1", "gamma2"):
            g = getattr(self, name)
            if not 0.0 < g <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1]")
        if self.alpha < 1.0:
            raise ValueError("alpha must be >= 1")
        if self.epochs_per_round < 0:
            raise ValueError("epochs_per_round must be >= 0")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if self.loss_scoring not in ("min-distance", "summed"):
            raise ValueError(f"unknown loss_scoring {self.loss_scoring!r}")

    def to_dict(self) -> dict:
        return {
            "n0": self.n0,
            "b0": self.b0,
            "rounds": self.rounds,
            "gamma1": self.gamma1,
            "gamma2": self.gamma2,
            "alpha": self.alpha,
            "epochs_per_round": self.epochs_per_round,
            "lr": self.lr,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "sampler": self.sampler,
            "stratified_gradients": self.stratified_gradients,
            "loss_scoring": self.loss_scoring,
        }


@dataclass
class RoundRecord:
    round_index: int
    scheduled_budget: float
    stage_indices: dict
    labels: list
    queries: int
    cumulative_queries: int
    metrics: dict | None = None


@dataclass
class AttackTrace:
    config: AttackConfig
    initial_indices: list
    initial_labels: list
    rounds: list = field(default_factory=list)
    status: str = STATUS_COMPLETED
    final_model: Model | None = None
    wall_clock: list = field(default_factory=list)

    @property
    def cumulative_queries(self) -> int:
        if self.rounds:
            return self.rounds[-1].cumulative_queries
        return len(self.initial_labels)


def budget_schedule(b0: int, alpha: float, t: int) -> float:
    """Scheduled budget for round t: b0 * alpha**t (geometric growth)."""
    if t < 0:
        raise ValueError("round index must be >= 0")
    return float(b0) * float(alpha) ** t


def stage_sizes(b_t: float, gamma1: float, gamma2: float) -> tuple[int, int, int]:
    """Integer draws for the three cascade stages: floors, minimum 1."""
    s1 = max(1, int(np.floor(b_t)))
    s2 = max(1, int(np.floor(gamma1 * b_t)))
    s3 = max(1, int(np.floor(gamma1 * gamma2 * b_t)))
    return s1, s2, s3


def _snapshot(model, target, eval_set):
    """Per-round metrics; agreement/KL only where a probability channel
    exists. The attack path itself never reads these."""
    if eval_set is None:
        return None
    metrics = {}
    if eval_set.labels is not None:
        metrics["accuracy"] = evaluation.accuracy(model, eval_set)
    try:
        tp = evaluation.target_probs(target, eval_set.features)
        ep = forward_batch(model, eval_set.features)
        metrics["agreement"] = float(
            (np.argmax(tp, axis=1) == np.argmax(ep, axis=1)).mean() * 100.0
        )
        metrics["mean_kl"] = float(kl_divergence_rows(tp, ep).mean())
    except CapabilityError:
        pass
    return metrics


def _phase1(target, pool, extract_spec, config, trace_seed_tag=0):
    view = pool.view()
    if len(view) < config.n0:
        raise ValueError(f"pool holds {len(view)} unspent points, need n0={config.n0}")
    sel = random_sampling(view, config.n0, derive_seed(config.seed, trace_seed_tag))
    feats = pool.features[sel.indices]
    labels = target.query_labels(feats)
    pool.mark_spent(sel.indices)
    model = init_model(extract_spec, derive_seed(config.seed, 1))
    if config.epochs_per_round > 0:
        model = train(
            model,
            feats,
            labels,
            epochs=config.epochs_per_round,
            lr=config.lr,
            batch_size=config.batch_size,
            seed=derive_seed(config.seed, 2),
        )
    return model, sel, feats, labels


def marich_attack(
    target: TargetHandle,
    pool: QueryPool,
    extract_spec: ModelSpec,
    config: AttackConfig,
    eval_set: Dataset | None = None,
) -> tuple[Model, AttackTrace]:
    """Run the full cascaded attack; returns the extracted model and trace.

    Stops early with a pool-exhausted status when no unspent queries
    remain, or a budget-exhausted status when the oracle refuses a batch;
    neither is an exception at this level.
    """
    t_start = time.monotonic()
    try:
        model, sel, q_train, y_train = _phase1(target, pool, extract_spec, config)
    except BudgetExhaustedError:
        trace = AttackTrace(config=config, initial_indices=[], initial_labels=[])
        trace.status = STATUS_BUDGET_EXHAUSTED
        trace.final_model = init_model(extract_spec, derive_seed(config.seed, 1))
        return trace.final_model, trace

    trace = AttackTrace(
        config=config,
        initial_indices=[int(i) for i in sel.indices],
        initial_labels=[int(v) for v in y_train],
    )
    trace.wall_clock.append(time.monotonic() - t_start)
    cumulative = int(y_train.size)
    k = extract_spec.num_classes

    for t in range(1, config.rounds + 1):
        t_round = time.monotonic()
        view = pool.view()
        if len(view) == 0:
            trace.status = STATUS_POOL_EXHAUSTED
            break
        b_t = budget_schedule(config.b0, config.alpha, t)
        s1, s2, s3 = stage_sizes(b_t, config.gamma1, config.gamma2)

        ent = entropy_sampling(model, view, s1)
        ent_feats = pool.features[ent.indices]
        grad = entropy_gradient_sampling(
            model,
            ent,
            ent_feats,
            min(s2, len(ent)),
            k,
            derive_seed(config.seed, 100 + t),
            stratified=config.stratified_gradients,
        )
        grad_feats = pool.features[grad.indices]
        final = loss_sampling(
            model,
            grad,
            grad_feats,
            q_train,
            y_train,
            min(s3, len(grad)),
            k,
            scoring=config.loss_scoring,
        )
        final_feats = pool.features[final.indices]
        try:
            new_labels = target.query_labels(final_feats)
        except BudgetExhaustedError:
            trace.status = STATUS_BUDGET_EXHAUSTED
            break
        pool.mark_spent(final.indices)
        q_train = np.vstack([q_train, final_feats])
        y_train = np.concatenate([y_train, new_labels])
        cumulative += int(new_labels.size)

        if config.epochs_per_round > 0:
            model = train(
                model,
                q_train,
                y_train,
                epochs=config.epochs_per_round,
                lr=config.lr,
                batch_size=config.batch_size,
                seed=derive_seed(config.seed, 300 + t),
            )
        trace.rounds.append(
            RoundRecord(
                round_index=t,
                scheduled_budget=b_t,
                stage_indices={
                    "entropy": [int(i) for i in ent.indices],
                    "gradient": [int(i) for i in grad.indices],
                    "loss": [int(i) for i in final.indices],
                },
                labels=[int(v) for v in new_labels],
                queries=int(new_labels.size),
                cumulative_queries=cumulative,
                metrics=_snapshot(model, target, eval_set),
            )
        )
        trace.wall_clock.append(time.monotonic() - t_round)

    trace.final_model = model
    return model, trace


def _baseline_select(model, view, sampler, s3, seed_t, q_train) -> Selection:
    if sampler == "random":
        return random_sampling(view, s3, seed_t)
    if sampler == "entropy":
        return entropy_sampling(model, view, s3)
    if sampler == "least-confidence":
        return least_confidence_sampling(model, view, s3)
    if sampler == "margin":
        return margin_sampling(model, view, s3)
    if sampler == "k-center":
        return kcenter_sampling(model, view, q_train, s3)
    raise ValueError(f"no baseline named {sampler!r}")


def baseline_attack(
    target: TargetHandle,
    pool: QueryPool,
    extract_spec: ModelSpec,
    config: AttackConfig,
    eval_set: Dataset | None = None,
) -> tuple[Model, AttackTrace]:
    """Same loop shape as the cascade, with one baseline sampler drawing
    the final-stage count per round, so oracle cost matches exactly."""
    if config.sampler == "marich":
        raise ValueError("baseline_attack needs a non-cascade sampler")
    t_start = time.monotonic()
    try:
        model, sel, q_train, y_train = _phase1(target, pool, extract_spec, config)
    except BudgetExhaustedError:
        trace = AttackTrace(config=config, initial_indices=[], initial_labels=[])
        trace.status = STATUS_BUDGET_EXHAUSTED
        trace.final_model = init_model(extract_spec, derive_seed(config.seed, 1))
        return trace.final_model, trace

    trace = AttackTrace(
        config=config,
        initial_indices=[int(i) for i in sel.indices],
        initial_labels=[int(v) for v in y_train],
    )
    trace.wall_clock.append(time.monotonic() - t_start)
    cumulative = int(y_train.size)

    for t in range(1, config.rounds + 1):
        t_round = time.monotonic()
        view = pool.view()
        if len(view) == 0:
            trace.status = STATUS_POOL_EXHAUSTED
            break
        b_t = budget_schedule(config.b0, config.alpha, t)
        _, _, s3 = stage_sizes(b_t, config.gamma1, config.gamma2)
        chosen = _baseline_select(
            model, view, config.sampler, s3, derive_seed(config.seed, 100 + t), q_train
        )
        feats = pool.features[chosen.indices]
        try:
            new_labels = target.query_labels(feats)
        except BudgetExhaustedError:
            trace.status = STATUS_BUDGET_EXHAUSTED
            break
        pool.mark_spent(chosen.indices)
        q_train = np.vstack([q_train, feats])
        y_train = np.concatenate([y_train, new_labels])
        cumulative += int(new_labels.size)
        if config.epochs_per_round > 0:
            model = train(
                model,
                q_train,
                y_train,
                epochs=config.epochs_per_round,
                lr=config.lr,
                batch_size=config.batch_size,
                seed=derive_seed(config.seed, 300 + t),
            )
        trace.rounds.append(
            RoundRecord(
                round_index=t,
                scheduled_budget=b_t,
                stage_indices={"selected": [int(i) for i in chosen.indices]},
                labels=[int(v) for v in new_labels],
                queries=int(new_labels.size),
                cumulative_queries=cumulative,
                metrics=_snapshot(model, target, eval_set),
            )
        )
        trace.wall_clock.append(time.monotonic() - t_round)

    trace.final_model = model
    return model, trace


def run_attack(target, pool, extract_spec, config, eval_set=None):
    """Dispatch on ``config.sampler``: the cascade or a baseline."""
    if config.sampler == "marich":
        return marich_attack(target, pool, extract_spec, config, eval_set)
    return baseline_attack(target, pool, extract_spec, config, eval_set)


# -- trace export ----------------------------------------------------------


def trace_to_dict(trace: AttackTrace) -> dict:
    """JSON-ready trace content. Wall-clock timings are deliberately left
    out so reruns of the same config serialize byte-identically."""
    return {
        "config": trace.config.to_dict(),
        "status": trace.status,
        "initial": {
            "indices": trace.initial_indices,
            "labels": trace.initial_labels,
            "queries": len(trace.initial_labels),
        },
        "rounds": [
            {
                "round": r.round_index,
                "scheduled_budget": r.scheduled_budget,
                "stage_indices": r.stage_indices,
                "labels": r.labels,
                "queries": r.queries,
                "cumulative_queries": r.cumulative_queries,
                "metrics": r.metrics,
            }
            for r in trace.rounds
        ],
        "total_queries": trace.cumulative_queries,
    }


def trace_json(trace: AttackTrace) -> str:
    return json.dumps(trace_to_dict(trace), indent=2, sort_keys=True) + "\n"


def trace_csv(trace: AttackTrace) -> str:
    """One row per round with the fixed column set ``CSV_COLUMNS``."""
    buf = io.StringIO()
    buf.write(",".join(CSV_COLUMNS) + "\n")
    rows = [
        (0, float(len(trace.initial_labels)), len(trace.initial_labels),
         len(trace.initial_labels), None)
    ]
    rows.extend(
        (r.round_index, r.scheduled_budget, r.queries, r.cumulative_queries, r.metrics)
        for r in trace.rounds
    )
    for rnd, budget, queries, cumulative, metrics in rows:
        m = metrics or {}
        cells = [
            str(rnd),
            repr(float(budget)),
            str(queries),
            str(cumulative),
            "" if "accuracy" not in m else repr(m["accuracy"]),
            "" if "agreement" not in m else repr(m["agreement"]),
            "" if "mean_kl" not in m else repr(m["mean_kl"]),
        ]
        buf.write(",".join(cells) + "\n")
    return buf.getvalue()
