"""Patient-level evaluation: accuracy, one-vs-rest AUC per stage, macro AUC.

All metrics run at patient granularity: tuple-level probability vectors are
aggregated per patient first (mean by default), and the predicted stage is
the argmax of the aggregate, ties broken toward the lower stage index.
AUC is the rank-based (Mann-Whitney) estimator with half credit for tied
scores, which exactly equals the average over positive-negative pairs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np

from .errors import UndefinedMetricError
from .types import FibrosisStage, MultiModalSample, NUM_STAGES


@dataclass(frozen=True)
class PatientPrediction:
    patient_id: str
    probabilities: np.ndarray  # shape (5,), on the simplex
    predicted: FibrosisStage
    true: FibrosisStage


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    per_stage_auc: dict[FibrosisStage, float]
    macro_auc: float
    stage_counts: dict[FibrosisStage, int]
    n_test_patients: int
    d: Optional[float] = None

    def to_dict(self) -> dict:
        payload: dict = {"accuracy": self.accuracy}
        for stage in FibrosisStage:
            payload[f"auc_{stage.name.lower()}"] = self.per_stage_auc.get(stage)
        payload["macro_auc"] = self.macro_auc
        payload["d"] = self.d
        payload["n_test_patients"] = self.n_test_patients
        payload["stage_counts"] = {s.name: c for s, c in self.stage_counts.items()}
        return payload


def aggregate_patient(
    predictions: Sequence[tuple[MultiModalSample, np.ndarray]],
    vote: Literal["mean", "majority"] = "mean",
) -> list[PatientPrediction]:
    """Collapse tuple-level predictions to one prediction per patient.

    ``mean`` averages the probability vectors; ``majority`` votes with each
    tuple's argmax and returns the vote distribution as the aggregate state.
    Output is sorted by patient id; empty input gives an empty list.
    """
    by_patient: dict[str, list[np.ndarray]] = {}
    stages: dict[str, FibrosisStage] = {}
    for sample, probs in predictions:
        probs = np.asarray(probs, dtype=np.float64)
        if probs.shape != (NUM_STAGES,):
            raise ValueError(f"expected a {NUM_STAGES}-class probability vector, got {probs.shape}")
        by_patient.setdefault(sample.patient_id, []).append(probs)
        stages[sample.patient_id] = sample.stage

    results = []
    for patient_id in sorted(by_patient):
        vectors = np.stack(by_patient[patient_id])
        if vote == "mean":
            aggregated = vectors.mean(axis=0)
        elif vote == "majority":
            votes = np.bincount(vectors.argmax(axis=1), minlength=NUM_STAGES)
            aggregated = votes / votes.sum()
        else:
            raise ValueError(f"unknown vote rule {vote!r}")
        # np.argmax returns the first maximum, i.e. the lower stage on ties.
        predicted = FibrosisStage(int(np.argmax(aggregated)))
        results.append(
            PatientPrediction(
                patient_id=patient_id,
                probabilities=aggregated,
                predicted=predicted,
                true=stages[patient_id],
            )
        )
    return results


def accuracy(predictions: Sequence[PatientPrediction]) -> float:
    """Fraction of patients whose predicted stage equals the true stage."""
    if len(predictions) == 0:
        raise UndefinedMetricError("accuracy is undefined for an empty prediction list")
    correct = sum(1 for p in predictions if p.predicted == p.true)
    return correct / len(predictions)


def _midranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n with tied values assigned the mean of their rank range."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def ovr_auc(predictions: Sequence[PatientPrediction], stage: FibrosisStage) -> float:
    """One-vs-rest AUC of the score p_stage, positives = patients at ``stage``.

    Mann-Whitney form: (sum of positive midranks - n_pos(n_pos+1)/2) /
    (n_pos * n_neg). Tied scores contribute 1/2 per pair.
    """
    scores = np.array([p.probabilities[int(stage)] for p in predictions], dtype=np.float64)
    positive = np.array([p.true == stage for p in predictions], dtype=bool)
    n_pos = int(positive.sum())
    n_neg = len(predictions) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"AUC for {stage} undefined: {n_pos} positives, {n_neg} negatives"
        )
    ranks = _midranks(scores)
    rank_sum = float(ranks[positive].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def macro_auc(
    predictions: Sequence[PatientPrediction],
    on_degenerate: Literal["error", "skip"] = "error",
) -> float:
    """Unweighted mean of the five one-vs-rest AUCs.

    A stage with no positives (or no negatives) raises by default, to surface
    bad splits; with ``on_degenerate="skip"`` it is left out of the mean.
    """
    values = []
    for stage in FibrosisStage:
        try:
            values.append(ovr_auc(predictions, stage))
        except UndefinedMetricError:
            if on_degenerate == "error":
                raise
    if not values:
        raise UndefinedMetricError("every stage is degenerate; macro AUC undefined")
    return float(np.mean(values))


def evaluate(
    predictions: Sequence[tuple[MultiModalSample, np.ndarray]],
    d: Optional[float] = None,
    vote: Literal["mean", "majority"] = "mean",
    on_degenerate: Literal["error", "skip"] = "error",
) -> EvalReport:
    """Aggregate tuple predictions per patient and compute the full report."""
    per_patient = aggregate_patient(predictions, vote=vote)
    if not per_patient:
        raise UndefinedMetricError("cannot evaluate an empty prediction set")

    per_stage: dict[FibrosisStage, float] = {}
    for stage in FibrosisStage:
        try:
            per_stage[stage] = ovr_auc(per_patient, stage)
        except UndefinedMetricError:
            if on_degenerate == "error":
                raise

    counts = {stage: 0 for stage in FibrosisStage}
    for p in per_patient:
        counts[p.true] += 1

    return EvalReport(
        accuracy=accuracy(per_patient),
        per_stage_auc=per_stage,
        macro_auc=float(np.mean(list(per_stage.values()))),
        stage_counts=counts,
        n_test_patients=len(per_patient),
        d=d,
    )


def format_percent(value: float) -> str:
    """Render a fraction as a two-decimal percentage string: 24/34 -> '70.59'."""
    return f"{100.0 * value:.2f}"
