"""Pool-based active learning: candidate pool, query strategies, and the loop.

The pool tracks cross-modality tuples extensionally: a labeled/unlabeled
partition of the initial tuple set, with a stable tuple order used for
deterministic tie-breaking. Strategies are RAND (uniform), ES (largest
predictive entropy under the current model) and ESD (entropy of the
MC-dropout-averaged prediction). Labeling a tuple removes exactly that
tuple from the pool; other tuples sharing one of its images stay unlabeled
unless ``propagate_patient_labels`` is enabled.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .errors import ConfigurationError, PoolExhausted
from .metrics import EvalReport, evaluate
from .network import FusionNet, ModelConfig, build_model
from .training import TensorCache, TrainConfig, fit, predict_tuples, predict_tuples_mc
from .types import FibrosisStage, MultiModalSample

STRATEGIES = ("RAND", "ES", "ESD")

# An oracle maps a batch of tuples to their revealed stages.
Oracle = Callable[[Sequence[MultiModalSample]], list[FibrosisStage]]


def simulated_oracle(samples: Sequence[MultiModalSample]) -> list[FibrosisStage]:
    """Oracle for benchmarks: reveals the ground-truth stage held by the tuple."""
    return [s.stage for s in samples]


@dataclass(frozen=True)
class QueryConfig:
    strategy: str
    n_query: int
    n_mc: int = 5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.n_query < 1:
            raise ConfigurationError(f"n_query must be >= 1, got {self.n_query}")
        if self.strategy == "ESD" and self.n_mc < 2:
            raise ConfigurationError(f"ESD needs n_mc >= 2, got {self.n_mc}")


class CandidatePool:
    """Labeled/unlabeled bookkeeping over a fixed initial set of tuples."""

    def __init__(self, tuples: Sequence[MultiModalSample]) -> None:
        self._items: dict[str, MultiModalSample] = {}
        for t in tuples:
            if t.tuple_id in self._items:
                raise ValueError(f"duplicate tuple id {t.tuple_id!r}")
            self._items[t.tuple_id] = t
        self._rank = {tid: i for i, tid in enumerate(self._items)}
        self._unlabeled: dict[str, None] = dict.fromkeys(self._items)  # ordered set
        self._labels: dict[str, FibrosisStage] = {}
        self.t = 0

    @property
    def initial_size(self) -> int:
        return len(self._items)

    @property
    def unlabeled_ids(self) -> list[str]:
        return list(self._unlabeled)

    @property
    def labeled_ids(self) -> list[str]:
        return list(self._labels)

    @property
    def n_unlabeled(self) -> int:
        return len(self._unlabeled)

    @property
    def n_labeled(self) -> int:
        return len(self._labels)

    @property
    def labeled_fraction(self) -> float:
        return len(self._labels) / self.initial_size if self.initial_size else 0.0

    def item(self, tuple_id: str) -> MultiModalSample:
        return self._items[tuple_id]

    def rank(self, tuple_id: str) -> int:
        """Stable order index used for deterministic tie-breaking."""
        return self._rank[tuple_id]

    def unlabeled_samples(self) -> list[MultiModalSample]:
        return [self._items[tid] for tid in self._unlabeled]

    def labeled_samples(self) -> list[tuple[MultiModalSample, FibrosisStage]]:
        return [(self._items[tid], stage) for tid, stage in self._labels.items()]

    def reveal(self, tuple_id: str, stage: FibrosisStage) -> None:
        """Move one tuple from the unlabeled pool to the labeled set."""
        if tuple_id not in self._items:
            raise ValueError(f"unknown tuple id {tuple_id!r}")
        if tuple_id not in self._unlabeled:
            raise ValueError(f"tuple {tuple_id!r} is already labeled")
        del self._unlabeled[tuple_id]
        self._labels[tuple_id] = stage


def init_pool(
    tuples: Sequence[MultiModalSample],
    seed_size: int,
    rng: np.random.Generator,
    oracle: Oracle = simulated_oracle,
) -> CandidatePool:
    """Create a pool with a class-stratified random seed set already labeled.

    The seed allocation is proportional per stage (largest remainder), capped
    by availability; seed labels come from the oracle.
    """
    if not 1 <= seed_size <= len(tuples):
        raise ValueError(f"seed_size must be in [1, {len(tuples)}], got {seed_size}")

    pool = CandidatePool(tuples)
    by_stage: dict[FibrosisStage, list[str]] = {}
    for t in tuples:
        by_stage.setdefault(t.stage, []).append(t.tuple_id)

    stages = sorted(by_stage, key=int)
    total = len(tuples)
    exact = {s: seed_size * len(by_stage[s]) / total for s in stages}
    counts = {s: int(np.floor(exact[s])) for s in stages}
    # Largest remainder first, then round-robin for any capacity shortfall.
    remainder_order = sorted(stages, key=lambda s: (-(exact[s] - counts[s]), int(s)))
    deficit = seed_size - sum(counts.values())
    for s in remainder_order:
        if deficit == 0:
            break
        if counts[s] < len(by_stage[s]):
            counts[s] += 1
            deficit -= 1
    while deficit > 0:
        progressed = False
        for s in stages:
            if deficit > 0 and counts[s] < len(by_stage[s]):
                counts[s] += 1
                deficit -= 1
                progressed = True
        if not progressed:
            break

    chosen: list[str] = []
    for s in stages:
        ids = by_stage[s]
        take = min(counts[s], len(ids))
        if take > 0:
            picks = rng.choice(len(ids), size=take, replace=False)
            chosen.extend(ids[i] for i in sorted(picks))

    samples = [pool.item(tid) for tid in chosen]
    stages_revealed = oracle(samples)
    for tid, stage in zip(chosen, stages_revealed):
        pool.reveal(tid, stage)
    return pool


def entropy(probabilities: np.ndarray) -> float:
    """Shannon entropy in nats of a probability vector; 0*log(0) counts as 0."""
    p = np.asarray(probabilities, dtype=np.float64)
    positive = p[p > 0]
    return float(-(positive * np.log(positive)).sum()) + 0.0  # avoid -0.0


def select_random(pool: CandidatePool, n_query: int, rng: np.random.Generator) -> list[str]:
    """Uniformly sample min(n_query, pool size) distinct unlabeled tuples."""
    ids = pool.unlabeled_ids
    if not ids:
        raise PoolExhausted("no unlabeled tuples left")
    k = min(n_query, len(ids))
    picks = rng.choice(len(ids), size=k, replace=False)
    return [ids[i] for i in picks]


def _top_by_entropy(pool: CandidatePool, probs: np.ndarray, n_query: int) -> list[str]:
    ids = pool.unlabeled_ids
    scores = [entropy(probs[i]) for i in range(len(ids))]
    # Ties broken by stable pool order (list index == pool rank order).
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], i))
    return [ids[i] for i in order[: min(n_query, len(ids))]]


def select_entropy(
    pool: CandidatePool,
    model: FusionNet,
    cache: TensorCache,
    n_query: int,
    batch_size: int = 64,
) -> list[str]:
    """Top-n tuples by predictive entropy under the deterministic model."""
    samples = pool.unlabeled_samples()
    if not samples:
        raise PoolExhausted("no unlabeled tuples left")
    probs = predict_tuples(model, samples, cache, batch_size=batch_size)
    return _top_by_entropy(pool, probs, n_query)


def select_entropy_dropout(
    pool: CandidatePool,
    model: FusionNet,
    cache: TensorCache,
    n_query: int,
    n_mc: int,
    generator: Optional[torch.Generator] = None,
    batch_size: int = 64,
) -> list[str]:
    """Top-n tuples by entropy of the MC-dropout-averaged prediction."""
    samples = pool.unlabeled_samples()
    if not samples:
        raise PoolExhausted("no unlabeled tuples left")
    probs = predict_tuples_mc(model, samples, cache, n_mc=n_mc, generator=generator, batch_size=batch_size)
    return _top_by_entropy(pool, probs, n_query)


def apply_labels(
    pool: CandidatePool,
    selected_ids: Sequence[str],
    oracle: Oracle = simulated_oracle,
    propagate_patient_labels: bool = False,
) -> None:
    """Reveal labels for the selected tuples and advance the iteration counter.

    Only the selected tuples leave the pool; tuples sharing an image stay
    unlabeled. With ``propagate_patient_labels`` every remaining tuple of a
    labeled patient is revealed too (one query exposes the patient's stage).
    The pool is left unchanged if the oracle fails.
    """
    for tid in selected_ids:
        if tid not in pool._items:
            raise ValueError(f"unknown tuple id {tid!r}")
        if tid in pool._labels:
            raise ValueError(f"tuple {tid!r} was already labeled")

    samples = [pool.item(tid) for tid in selected_ids]
    stages = oracle(samples)  # may raise OracleTimeout; nothing mutated yet
    if len(stages) != len(samples):
        raise ValueError("oracle returned a label count mismatching the query")

    for tid, stage in zip(selected_ids, stages):
        pool.reveal(tid, stage)

    if propagate_patient_labels:
        patient_stage = {pool.item(tid).patient_id: stage for tid, stage in zip(selected_ids, stages)}
        for tid in pool.unlabeled_ids:
            patient = pool.item(tid).patient_id
            if patient in patient_stage:
                pool.reveal(tid, patient_stage[patient])

    pool.t += 1


@dataclass(frozen=True)
class IterationRecord:
    t: int
    d: float
    n_labeled: int
    strategy: str
    selected_ids: tuple[str, ...]
    accuracy: float
    macro_auc: float
    # diagnostic only; not part of the record's identity
    wall_time_s: Optional[float] = field(default=None, compare=False)


@dataclass
class ALHistory:
    records: list[IterationRecord] = field(default_factory=list)

    def best_point(self) -> IterationRecord:
        """The record with the highest macro AUC (smallest d on ties)."""
        if not self.records:
            raise ValueError("history is empty")
        return max(self.records, key=lambda r: (r.macro_auc, -r.d))

    def to_csv(self, path: str | Path) -> None:
        """Write the per-iteration metric table.

        The wall_time_s column is part of the schema but left empty so the
        file is byte-identical across reruns; measured timings live in the
        JSON sidecar.
        """
        lines = ["t,d,n_labeled,strategy,accuracy,macro_auc,wall_time_s"]
        for r in self.records:
            lines.append(
                f"{r.t},{r.d:.10g},{r.n_labeled},{r.strategy},"
                f"{r.accuracy:.10g},{r.macro_auc:.10g},"
            )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def write_sidecar(self, path: str | Path, extra: Optional[dict] = None) -> None:
        payload = {
            "wall_time_s": [r.wall_time_s for r in self.records],
            "selected_ids": [list(r.selected_ids) for r in self.records],
        }
        if extra:
            payload.update(extra)
        Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class LoopSchedule:
    """How much to label, train and iterate per AL step."""

    seed_size: int
    epochs_per_iteration: int = 5
    initial_epochs: Optional[int] = None
    max_iterations: Optional[int] = None
    target_budget: Optional[float] = None
    retrain_from_scratch: bool = False

    def __post_init__(self) -> None:
        if self.seed_size < 1:
            raise ConfigurationError(f"seed_size must be >= 1, got {self.seed_size}")
        if self.target_budget is not None and not 0.0 < self.target_budget <= 1.0:
            raise ConfigurationError(f"target_budget must be in (0, 1], got {self.target_budget}")


def _derive_seeds(master_seed: int) -> dict[str, int]:
    state = np.random.SeedSequence(master_seed).generate_state(5)
    names = ("model", "pool", "strategy", "train", "mc")
    return {name: int(value) for name, value in zip(names, state)}


def run_al_loop(
    train_tuples: Sequence[MultiModalSample],
    test_tuples: Sequence[MultiModalSample],
    model_config: ModelConfig,
    train_config: TrainConfig,
    query_config: QueryConfig,
    schedule: LoopSchedule,
    cache: TensorCache,
    oracle: Oracle = simulated_oracle,
    checkpoint_path: Optional[str | Path] = None,
    resume_from: Optional[str | Path] = None,
    on_iteration: Optional[Callable[[IterationRecord, EvalReport], None]] = None,
) -> tuple[ALHistory, FusionNet, EvalReport]:
    """Run select -> label -> fine-tune -> evaluate until the budget is spent.

    Returns the full history, the final model and the last test report. All
    randomness is derived from ``query_config.seed``, so identical inputs
    reproduce identical histories. When ``checkpoint_path`` is set, a
    resumable checkpoint is written after every iteration; ``resume_from``
    restores one and continues. ``on_iteration`` is invoked after each
    recorded evaluation (used by the live annotation service for status).
    """
    seeds = _derive_seeds(query_config.seed)
    strategy_rng = np.random.default_rng(seeds["strategy"])
    train_gen = torch.Generator().manual_seed(seeds["train"])
    mc_gen = torch.Generator().manual_seed(seeds["mc"])

    history = ALHistory()
    report: Optional[EvalReport] = None

    if resume_from is not None:
        pool, model, history = _load_loop_checkpoint(
            resume_from, train_tuples, strategy_rng, train_gen, mc_gen
        )
    else:
        pool_rng = np.random.default_rng(seeds["pool"])
        pool = init_pool(train_tuples, schedule.seed_size, pool_rng, oracle)
        model = build_model(model_config, seed=seeds["model"])

    def train_on_labeled(epochs: int) -> None:
        if schedule.retrain_from_scratch:
            nonlocal model
            model = build_model(model_config, seed=seeds["model"])
        pairs = pool.labeled_samples()
        samples = [s for s, _ in pairs]
        labels = [int(stage) for _, stage in pairs]
        config = replace(train_config, epochs=epochs)
        fit(model, samples, cache, config, generator=train_gen, labels=labels)

    def evaluate_now() -> EvalReport:
        probs = predict_tuples(model, test_tuples, cache)
        pairs = list(zip(test_tuples, probs))
        return evaluate(pairs, d=pool.labeled_fraction)

    def record(selected: Sequence[str], wall_time: float) -> None:
        nonlocal report
        report = evaluate_now()
        entry = IterationRecord(
            t=pool.t,
            d=pool.labeled_fraction,
            n_labeled=pool.n_labeled,
            strategy=query_config.strategy,
            selected_ids=tuple(selected),
            accuracy=report.accuracy,
            macro_auc=report.macro_auc,
            wall_time_s=wall_time,
        )
        history.records.append(entry)
        if on_iteration is not None:
            on_iteration(entry, report)

    if resume_from is None:
        started = time.perf_counter()
        train_on_labeled(
            schedule.initial_epochs if schedule.initial_epochs is not None else schedule.epochs_per_iteration
        )
        record([], time.perf_counter() - started)
        if checkpoint_path is not None:
            _save_loop_checkpoint(checkpoint_path, pool, model, history, strategy_rng, train_gen, mc_gen)

    def should_stop() -> bool:
        if pool.n_unlabeled == 0:
            return True
        if schedule.max_iterations is not None and pool.t >= schedule.max_iterations:
            return True
        if schedule.target_budget is not None and pool.labeled_fraction >= schedule.target_budget - 1e-12:
            return True
        return False

    while not should_stop():
        started = time.perf_counter()
        if query_config.strategy == "RAND":
            selected = select_random(pool, query_config.n_query, strategy_rng)
        elif query_config.strategy == "ES":
            selected = select_entropy(pool, model, cache, query_config.n_query)
        else:
            selected = select_entropy_dropout(
                pool, model, cache, query_config.n_query, query_config.n_mc, generator=mc_gen
            )
        apply_labels(pool, selected, oracle)
        train_on_labeled(schedule.epochs_per_iteration)
        record(selected, time.perf_counter() - started)
        if checkpoint_path is not None:
            _save_loop_checkpoint(checkpoint_path, pool, model, history, strategy_rng, train_gen, mc_gen)

    assert report is not None
    return history, model, report


def _save_loop_checkpoint(
    path: str | Path,
    pool: CandidatePool,
    model: FusionNet,
    history: ALHistory,
    strategy_rng: np.random.Generator,
    train_gen: torch.Generator,
    mc_gen: torch.Generator,
) -> None:
    torch.save(
        {
            "t": pool.t,
            "tuple_order": list(pool._items),
            "labeled": [(tid, int(stage)) for tid, stage in pool._labels.items()],
            "history": [
                {
                    "t": r.t,
                    "d": r.d,
                    "n_labeled": r.n_labeled,
                    "strategy": r.strategy,
                    "selected_ids": list(r.selected_ids),
                    "accuracy": r.accuracy,
                    "macro_auc": r.macro_auc,
                    "wall_time_s": r.wall_time_s,
                }
                for r in history.records
            ],
            "model_config": model.config.to_dict(),
            "state_dict": model.state_dict(),
            "strategy_rng_state": strategy_rng.bit_generator.state,
            "train_gen_state": train_gen.get_state(),
            "mc_gen_state": mc_gen.get_state(),
        },
        path,
    )


def _load_loop_checkpoint(
    path: str | Path,
    train_tuples: Sequence[MultiModalSample],
    strategy_rng: np.random.Generator,
    train_gen: torch.Generator,
    mc_gen: torch.Generator,
) -> tuple[CandidatePool, FusionNet, ALHistory]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    pool = CandidatePool(train_tuples)
    if list(pool._items) != payload["tuple_order"]:
        raise ValueError("checkpoint does not match the provided tuple list")
    for tid, stage in payload["labeled"]:
        pool.reveal(tid, FibrosisStage(stage))
    pool.t = payload["t"]

    model = FusionNet(ModelConfig.from_dict(payload["model_config"]))
    model.load_state_dict(payload["state_dict"])

    history = ALHistory(
        records=[
            IterationRecord(
                t=r["t"],
                d=r["d"],
                n_labeled=r["n_labeled"],
                strategy=r["strategy"],
                selected_ids=tuple(r["selected_ids"]),
                accuracy=r["accuracy"],
                macro_auc=r["macro_auc"],
                wall_time_s=r["wall_time_s"],
            )
            for r in payload["history"]
        ]
    )
    strategy_rng.bit_generator.state = payload["strategy_rng_state"]
    train_gen.set_state(payload["train_gen_state"])
    mc_gen.set_state(payload["mc_gen_state"])
    return pool, model, history
